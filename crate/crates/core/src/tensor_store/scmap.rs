use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::FORMAT_VERSION;
use crate::error::{Error, Result};
use crate::fusion::{Channel, CorrelationMap, Stage};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScHeader {
    format_version: u32,
    stage: Stage,
    channels: Vec<Channel>,
    /// `[channels, height, width]`
    shape: [usize; 3],
    file: String,
}

fn data_path(json_path: &Path) -> PathBuf {
    let name = json_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = name.strip_suffix(".json").unwrap_or(&name);
    json_path.with_file_name(format!("{stem}.f32"))
}

/// Writes `map` as a JSON header at `json_path` plus a raw f32 sibling
/// (`foo.sc.json` -> `foo.sc.f32`).
pub fn write_correlation_map(json_path: &Path, map: &CorrelationMap) -> Result<()> {
    let raw = data_path(json_path);
    let mut bytes = Vec::with_capacity(map.data.len() * 4);
    for &v in map.data.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))?;

    let (c, h, w) = map.data.dim();
    let header = ScHeader {
        format_version: FORMAT_VERSION,
        stage: map.stage,
        channels: map.channels.clone(),
        shape: [c, h, w],
        file: raw
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let mut text = serde_json::to_string_pretty(&header).map_err(|e| Error::Manifest {
        path: json_path.into(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(json_path, text).map_err(|e| Error::io(json_path, e))
}

pub fn read_correlation_map(json_path: &Path) -> Result<CorrelationMap> {
    let text = fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
    let header: ScHeader = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: json_path.into(),
        message: e.to_string(),
    })?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    if Path::new(&header.file).components().count() != 1 {
        return Err(Error::Manifest {
            path: json_path.into(),
            message: format!("tensor file {:?} must be a plain file name", header.file),
        });
    }
    let raw = json_path.with_file_name(&header.file);
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let [c, h, w] = header.shape;
    let n = c.checked_mul(h).and_then(|n| n.checked_mul(w));
    if n.and_then(|n| n.checked_mul(4)) != Some(bytes.len()) {
        return Err(Error::Shape {
            what: raw.display().to_string(),
            message: format!("{} bytes on disk for shape {c}x{h}x{w}", bytes.len()),
        });
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Invariant(format!(
            "{}: correlation map values must be finite and non-negative",
            raw.display()
        )));
    }
    let data = Array3::from_shape_vec((c, h, w), data).map_err(|e| Error::Shape {
        what: raw.display().to_string(),
        message: e.to_string(),
    })?;
    CorrelationMap::new(header.channels, data, header.stage)
}
