use std::path::Path;

use anyhow::{bail, Context, Result};
use attnseg::densecrf::{argmax_mask, refine, CrfParams};
use attnseg::fusion::FusionConfig;
use attnseg::tensor_store::{read_correlation_map, write_correlation_map, write_mask};
use rayon::prelude::*;

use crate::args::CrfArgs;
use crate::io::{create_dir, load_image};
use crate::settings::{print_header, thread_pool, FileConfig};

pub fn run(args: CrfArgs, file: &FileConfig) -> Result<()> {
    let params = file.crf(&args.crf)?;
    let band = file.pick("band", args.band, FusionConfig::default().uncertainty_band)?;
    if !(band >= 0.0 && band.is_finite()) {
        bail!(attnseg::Error::Config(format!("band: {band} must be non-negative")));
    }
    let jobs = file.pick_opt("jobs", args.jobs)?;
    let mut header = params.to_key_values();
    header.insert("band".into(), band.to_string());
    header.insert("jobs".into(), jobs.map_or("auto".into(), |j: usize| j.to_string()));
    print_header("crf", &header);

    let mut items = Vec::with_capacity(args.maps.len());
    for path in &args.maps {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let Some(id) = name.strip_suffix(".sc.json") else {
            bail!(attnseg::Error::Invalid(format!(
                "{}: expected a `<id>.sc.json` header",
                path.display()
            )));
        };
        items.push((id.to_string(), path.clone()));
    }
    items.sort();
    items.dedup();

    create_dir(&args.out)?;
    let pool = thread_pool(jobs)?;
    let results: Vec<Result<()>> = pool.install(|| {
        items
            .par_iter()
            .map(|(id, path)| refine_one(id, path, &args.images, &args.out, &params, band))
            .collect()
    });
    for r in results {
        r?;
    }
    println!("refined {} map(s) into {}", items.len(), args.out.display());
    Ok(())
}

fn refine_one(id: &str, path: &Path, images: &Path, out: &Path, params: &CrfParams, band: f32) -> Result<()> {
    let sc = read_correlation_map(path)?;
    let image = load_image(images, id)?;
    let (w, h) = (image.width() as usize, image.height() as usize);
    let sc = if (sc.width(), sc.height()) == (w, h) {
        sc
    } else {
        sc.resized(w, h)
    };
    let refined = refine(&image, &sc, params).with_context(|| format!("refining {id:?}"))?;
    write_mask(&out.join(format!("{id}.png")), &argmax_mask(&refined, band)?)?;
    write_correlation_map(&out.join(format!("{id}.sc.json")), &refined)?;
    Ok(())
}
