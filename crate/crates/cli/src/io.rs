use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use attnseg::tensor_store::{uncertainty_path, MANIFEST_FILE};
use image::RgbImage;
use serde::Serialize;

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// A bundle directory itself, or the sorted bundle directories directly
/// inside it.
pub fn expand_bundles(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for path in paths {
        if path.join(MANIFEST_FILE).is_file() {
            out.push(path.clone());
            continue;
        }
        let entries = fs::read_dir(path).with_context(|| format!("reading {}", path.display()))?;
        let mut found: Vec<PathBuf> = Vec::new();
        for entry in entries {
            let p = entry.with_context(|| format!("reading {}", path.display()))?.path();
            if p.join(MANIFEST_FILE).is_file() {
                found.push(p);
            }
        }
        if found.is_empty() {
            bail!(attnseg::Error::Invalid(format!(
                "{} holds no bundle ({MANIFEST_FILE} not found)",
                path.display()
            )));
        }
        found.sort();
        out.extend(found);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| attnseg::Error::Invalid(format!("{}: {e}", path.display())).into())
}

/// Label masks in `dir` keyed by file stem, skipping uncertainty siblings.
pub fn mask_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry.with_context(|| format!("reading {}", dir.display()))?.path();
        if path.extension().is_none_or(|e| e != "png") {
            continue;
        }
        let sibling_of = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.strip_suffix("_uncertain"))
            .map(|base| dir.join(format!("{base}.png")));
        if sibling_of.is_some_and(|p| p.is_file() && uncertainty_path(&p) == path) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path.clone());
        }
    }
    Ok(out)
}

pub fn load_image(dir: &Path, id: &str) -> Result<RgbImage> {
    for ext in ["png", "jpg", "jpeg"] {
        let path = dir.join(format!("{id}.{ext}"));
        if path.is_file() {
            let img = image::open(&path).with_context(|| format!("decoding {}", path.display()))?;
            return Ok(img.to_rgb8());
        }
    }
    Err(attnseg::Error::Io {
        path: dir.join(format!("{id}.png")),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, "no image for this id"),
    }
    .into())
}

pub fn save_image(path: &Path, img: &RgbImage) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))
}
