use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use attnseg::fusion::{ensemble_with, fuse, to_mask, FusionConfig};
use attnseg::prompt_plan::PromptPlan;
use attnseg::tensor_store::{read_bundle, write_correlation_map, write_mask, AttentionBundle};
use rayon::prelude::*;

use crate::args::FuseArgs;
use crate::io::{create_dir, expand_bundles};
use crate::settings::{print_header, thread_pool, FileConfig};

pub fn run(args: FuseArgs, file: &FileConfig) -> Result<()> {
    let config = file.fusion(&args.fusion)?;
    let jobs = file.pick_opt("jobs", args.jobs)?;
    let mut header = config.to_key_values();
    header.insert("jobs".into(), jobs.map_or("auto".into(), |j: usize| j.to_string()));
    print_header("fuse", &header);

    if args.bundles.is_empty() && args.samples.is_empty() {
        bail!(attnseg::Error::Invalid("no bundles given".into()));
    }
    let mut groups: BTreeMap<String, Vec<(PathBuf, AttentionBundle)>> = BTreeMap::new();
    for dir in expand_bundles(&args.bundles)? {
        let bundle = read_bundle(&dir)?;
        groups.entry(bundle.image_id.clone()).or_default().push((dir, bundle));
    }
    if !args.samples.is_empty() {
        let dirs = expand_bundles(&args.samples)?;
        let mut ids = Vec::new();
        for dir in dirs {
            let bundle = read_bundle(&dir)?;
            ids.push(bundle.image_id.clone());
            groups.entry(bundle.image_id.clone()).or_default().push((dir, bundle));
        }
        ids.dedup();
        if ids.len() > 1 {
            bail!(attnseg::Error::Invalid(format!(
                "--samples mixes image ids {ids:?}"
            )));
        }
    }
    for (id, group) in groups.iter_mut() {
        check_id(id)?;
        group.sort_by(|a, b| (a.1.sample_index, &a.0).cmp(&(b.1.sample_index, &b.0)));
    }

    create_dir(&args.out)?;
    let pool = thread_pool(jobs)?;
    let results: Vec<Result<()>> = pool.install(|| {
        groups
            .par_iter()
            .map(|(id, group)| fuse_image(id, group, &config, &args.out))
            .collect()
    });
    for r in results {
        r?;
    }
    println!("fused {} image(s) into {}", groups.len(), args.out.display());
    Ok(())
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
        bail!(attnseg::Error::Invalid(format!(
            "image id {id:?} cannot be used as a file name"
        )));
    }
    Ok(())
}

fn fuse_image(id: &str, group: &[(PathBuf, AttentionBundle)], config: &FusionConfig, out: &Path) -> Result<()> {
    let (w, h) = (group[0].1.image_width, group[0].1.image_height);
    let mut maps = Vec::with_capacity(group.len());
    for (dir, bundle) in group {
        if (bundle.image_width, bundle.image_height) != (w, h) {
            bail!(attnseg::Error::Invalid(format!(
                "{}: image size differs from other samples of {id:?}",
                dir.display()
            )));
        }
        let plan = PromptPlan::from_manifest(&bundle.token_manifest);
        let sc = fuse(bundle, &plan, config).with_context(|| format!("fusing {}", dir.display()))?;
        maps.push(sc);
    }
    let sc = ensemble_with(&maps, config).with_context(|| format!("ensembling {id:?}"))?;
    let mask = to_mask(&sc, w, h, config.uncertainty_band)?;
    write_mask(&out.join(format!("{id}.png")), &mask)?;
    write_correlation_map(&out.join(format!("{id}.sc.json")), &sc)?;
    Ok(())
}
