use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::raw::{read_f32_file, write_f32_file};
use super::{AttentionBundle, CrossLayer, TokenManifest};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";
const SELF_FILE: &str = "self.f32";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    format_version: u32,
    image_id: String,
    image_width: u32,
    image_height: u32,
    self_width: usize,
    self_height: usize,
    sample_index: u32,
    timestep: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    extraction_note: Option<String>,
    self_map: TensorRef,
    cross_layers: Vec<CrossLayerRef>,
    token_manifest: TokenManifest,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRef {
    file: String,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CrossLayerRef {
    layer_index: u32,
    width: usize,
    height: usize,
    tokens: usize,
    file: String,
    shape: [usize; 2],
}

fn cross_file_name(layer_index: u32) -> String {
    format!("cross_{layer_index}.f32")
}

/// Validates `bundle` and writes it into `dir`, creating the directory if
/// needed. Nothing is written when validation fails.
pub fn write_bundle(bundle: &AttentionBundle, dir: &Path) -> Result<()> {
    bundle.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut layers = Vec::with_capacity(bundle.cross_layers.len());
    for layer in &bundle.cross_layers {
        let file = cross_file_name(layer.layer_index);
        write_f32_file(&dir.join(&file), &layer.data)?;
        let (r, c) = layer.data.dim();
        layers.push(CrossLayerRef {
            layer_index: layer.layer_index,
            width: layer.width,
            height: layer.height,
            tokens: layer.tokens,
            file,
            shape: [r, c],
        });
    }
    write_f32_file(&dir.join(SELF_FILE), &bundle.self_map)?;

    let (r, c) = bundle.self_map.dim();
    let manifest = ManifestFile {
        format_version: FORMAT_VERSION,
        image_id: bundle.image_id.clone(),
        image_width: bundle.image_width,
        image_height: bundle.image_height,
        self_width: bundle.self_width,
        self_height: bundle.self_height,
        sample_index: bundle.sample_index,
        timestep: bundle.timestep,
        extraction_note: bundle.extraction_note.clone(),
        self_map: TensorRef {
            file: SELF_FILE.into(),
            shape: [r, c],
        },
        cross_layers: layers,
        token_manifest: bundle.token_manifest.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Manifest {
        path: path.clone(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Reads and validates the bundle stored in `dir`.
pub fn read_bundle(dir: &Path) -> Result<AttentionBundle> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;

    // Check the version before the full schema so old or future manifests
    // report the version rather than an unrelated field error.
    let probe: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let version = probe
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Manifest {
            path: path.clone(),
            message: "missing format_version".into(),
        })?;
    if version != FORMAT_VERSION as u64 {
        return Err(Error::UnsupportedVersion {
            found: version.min(u32::MAX as u64) as u32,
            expected: FORMAT_VERSION,
        });
    }
    let m: ManifestFile = serde_json::from_value(probe).map_err(|e| Error::Manifest {
        path: path.clone(),
        message: e.to_string(),
    })?;

    let self_map = read_f32_file(&tensor_path(dir, &m.self_map.file)?, to_shape(m.self_map.shape))?;
    let mut cross_layers = Vec::with_capacity(m.cross_layers.len());
    for l in &m.cross_layers {
        let data = read_f32_file(&tensor_path(dir, &l.file)?, to_shape(l.shape))?;
        cross_layers.push(CrossLayer {
            layer_index: l.layer_index,
            width: l.width,
            height: l.height,
            tokens: l.tokens,
            data,
        });
    }

    let bundle = AttentionBundle {
        image_id: m.image_id,
        image_width: m.image_width,
        image_height: m.image_height,
        cross_layers,
        self_map,
        self_width: m.self_width,
        self_height: m.self_height,
        token_manifest: m.token_manifest,
        sample_index: m.sample_index,
        timestep: m.timestep,
        extraction_note: m.extraction_note,
    };
    bundle.validate()?;
    Ok(bundle)
}

fn to_shape(s: [usize; 2]) -> (usize, usize) {
    (s[0], s[1])
}

// Tensor files must live directly inside the bundle directory.
fn tensor_path(dir: &Path, file: &str) -> Result<PathBuf> {
    let p = Path::new(file);
    if p.components().count() != 1 || p.is_absolute() {
        return Err(Error::Manifest {
            path: dir.join(MANIFEST_FILE),
            message: format!("tensor file {file:?} must be a plain file name"),
        });
    }
    Ok(dir.join(p))
}
