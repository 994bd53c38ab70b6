use std::collections::BTreeMap;
use std::fs;

use anyhow::{Context, Result};
use attnseg::synth::{make_fixture, make_instance_fixture, InstanceSceneSpec, SceneSpec};
use attnseg::tensor_store::{write_bundle, write_mask};
use serde::{Deserialize, Serialize};

use crate::args::SynthArgs;
use crate::io::{create_dir, save_image, write_json};
use crate::settings::{print_header, FileConfig};

/// Grid-resolution instance regions of a synthetic scene.
#[derive(Debug, Serialize, Deserialize)]
pub struct InstanceTruth {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub identifiers: Vec<String>,
    /// Row-major; 0 is background, `i + 1` is instance `i`.
    pub regions: Vec<u8>,
}

pub fn run(args: SynthArgs, file: &FileConfig) -> Result<()> {
    let seed = file.pick("seed", args.seed, 0u64)?;
    let text = fs::read_to_string(&args.spec)
        .map_err(|e| attnseg::Error::Io { path: args.spec.clone(), source: e })?;
    print_header(
        "synth",
        &BTreeMap::from([
            ("spec".to_string(), args.spec.display().to_string()),
            ("seed".to_string(), seed.to_string()),
            ("samples".to_string(), args.samples.to_string()),
            ("instance".to_string(), args.instance.to_string()),
        ]),
    );
    if args.samples == 0 {
        anyhow::bail!(attnseg::Error::Config("samples must be at least 1".into()));
    }
    create_dir(&args.out)?;
    if args.instance {
        instance(&InstanceSceneSpec::from_toml(&text)?, seed, &args)
    } else {
        semantic(&SceneSpec::from_toml(&text)?, seed, &args)
    }
}

fn semantic(spec: &SceneSpec, seed: u64, args: &SynthArgs) -> Result<()> {
    let id = &spec.image_id;
    for i in 0..args.samples {
        let mut sample = spec.clone();
        sample.sample_index = i;
        let fixture = make_fixture(&sample, seed.wrapping_add(i as u64))?;
        let dir = if args.samples == 1 {
            args.out.join("bundles").join(id)
        } else {
            args.out.join("bundles").join(format!("{id}_s{i}"))
        };
        write_bundle(&fixture.bundle, &dir)?;
        if i == 0 {
            create_dir(&args.out.join("gt"))?;
            write_mask(&args.out.join("gt").join(format!("{id}.png")), &fixture.ground_truth)?;
            save_image(&args.out.join("images").join(format!("{id}.png")), &fixture.image)?;
        }
    }
    Ok(())
}

fn instance(spec: &InstanceSceneSpec, seed: u64, args: &SynthArgs) -> Result<()> {
    let fixture = make_instance_fixture(spec, seed)?;
    let id = &spec.image_id;
    write_bundle(&fixture.scene, &args.out.join("scene"))?;
    for (i, bundle) in fixture.identifiers.iter().enumerate() {
        write_bundle(bundle, &args.out.join("identifiers").join(format!("id{i}")))?;
    }
    create_dir(&args.out.join("gt"))?;
    write_mask(&args.out.join("gt").join(format!("{id}.png")), &fixture.ground_truth)?;
    save_image(&args.out.join("images").join(format!("{id}.png")), &fixture.image)?;

    let [w, h] = spec.grid;
    let mut regions = vec![0u8; w * h];
    for (i, region) in fixture.regions.iter().enumerate() {
        for ((y, x), &inside) in region.indexed_iter() {
            if inside {
                regions[y * w + x] = i as u8 + 1;
            }
        }
    }
    let truth = InstanceTruth {
        image_id: id.clone(),
        width: w,
        height: h,
        identifiers: spec.instances.iter().map(|i| i.identifier.clone()).collect(),
        regions,
    };
    write_json(&args.out.join("truth.json"), &truth).context("writing instance truth")
}
