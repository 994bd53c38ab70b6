use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Writes `m` as headerless little-endian f32, row-major.
pub fn write_f32_file(path: &Path, m: &Array2<f32>) -> Result<()> {
    let mut bytes = Vec::with_capacity(m.len() * 4);
    for &v in m.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a raw f32 file whose shape is known from the manifest. The byte
/// length must match the shape exactly and every value must be finite.
pub fn read_f32_file(path: &Path, shape: (usize, usize)) -> Result<Array2<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = shape
        .0
        .checked_mul(shape.1)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Shape {
            what: path.display().to_string(),
            message: format!("shape {shape:?} overflows"),
        })?;
    if bytes.len() != expected {
        return Err(Error::Shape {
            what: path.display().to_string(),
            message: format!(
                "{} bytes on disk, shape {}x{} needs {expected}",
                bytes.len(),
                shape.0,
                shape.1
            ),
        });
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Invariant(format!(
            "{}: non-finite value at element {pos}",
            path.display()
        )));
    }
    Array2::from_shape_vec(shape, data).map_err(|e| Error::Shape {
        what: path.display().to_string(),
        message: e.to_string(),
    })
}
