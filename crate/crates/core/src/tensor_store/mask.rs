use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest side accepted when decoding a mask.
const MAX_SIDE: u32 = 1 << 15;

/// Per-pixel class ids (0 = background) plus an uncertainty flag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMask {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u8>,
    pub uncertain: Vec<bool>,
}

impl LabelMask {
    pub fn new(width: u32, height: u32, labels: Vec<u8>, uncertain: Vec<bool>) -> Result<Self> {
        let n = pixel_count(width, height)?;
        if labels.len() != n || uncertain.len() != n {
            return Err(Error::Shape {
                what: "label mask".into(),
                message: format!(
                    "{width}x{height} needs {n} pixels, got {} labels and {} flags",
                    labels.len(),
                    uncertain.len()
                ),
            });
        }
        Ok(LabelMask {
            width,
            height,
            labels,
            uncertain,
        })
    }

    /// Mask with every pixel certain.
    pub fn from_labels(width: u32, height: u32, labels: Vec<u8>) -> Result<Self> {
        let n = labels.len();
        LabelMask::new(width, height, labels, vec![false; n])
    }

    pub fn filled(width: u32, height: u32, label: u8) -> Result<Self> {
        let n = pixel_count(width, height)?;
        LabelMask::new(width, height, vec![label; n], vec![false; n])
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.labels[(y * self.width + x) as usize]
    }

    /// Checks that every label is background or one of `declared`.
    pub fn check_labels(&self, declared: &[u8]) -> Result<()> {
        match self
            .labels
            .iter()
            .find(|&&l| l != 0 && !declared.contains(&l))
        {
            Some(l) => Err(Error::Invariant(format!("undeclared label {l} in mask"))),
            None => Ok(()),
        }
    }
}

fn pixel_count(width: u32, height: u32) -> Result<usize> {
    (width as usize)
        .checked_mul(height as usize)
        .ok_or_else(|| Error::Shape {
            what: "label mask".into(),
            message: format!("{width}x{height} overflows"),
        })
}

/// Sibling file holding the uncertainty flags of the mask at `path`:
/// `dir/name.png` becomes `dir/name_uncertain.png`.
pub fn uncertainty_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}_uncertain.png"))
}

/// Writes the labels as an 8-bit grayscale PNG (pixel value = class id)
/// and the uncertainty flags as a 0/255 sibling PNG.
pub fn write_mask(path: &Path, mask: &LabelMask) -> Result<()> {
    write_gray(path, mask.width, mask.height, &mask.labels)?;
    let flags: Vec<u8> = mask
        .uncertain
        .iter()
        .map(|&u| if u { 255 } else { 0 })
        .collect();
    write_gray(&uncertainty_path(path), mask.width, mask.height, &flags)
}

/// Reads a mask written by [`write_mask`] or a dataset annotation. Both
/// 8-bit grayscale and 8-bit palette PNGs are accepted; for palette images
/// the raw index is the class id. A missing uncertainty sibling means all
/// pixels are certain.
pub fn read_mask(path: &Path) -> Result<LabelMask> {
    let (width, height, labels) = read_gray(path)?;
    let flags_path = uncertainty_path(path);
    let uncertain = if flags_path.exists() {
        let (w, h, flags) = read_gray(&flags_path)?;
        if (w, h) != (width, height) {
            return Err(Error::Shape {
                what: flags_path.display().to_string(),
                message: format!("{w}x{h} does not match mask {width}x{height}"),
            });
        }
        flags.into_iter().map(|f| f != 0).collect()
    } else {
        vec![false; labels.len()]
    };
    LabelMask::new(width, height, labels, uncertain)
}

fn write_gray(path: &Path, width: u32, height: u32, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width, height);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let to_err = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::Image(format!("{}: {other}", path.display())),
    };
    let mut writer = encoder.write_header().map_err(to_err)?;
    writer.write_image_data(data).map_err(to_err)?;
    writer.finish().map_err(to_err)
}

fn read_gray(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let to_err = |e: png::DecodingError| match e {
        png::DecodingError::IoError(io) => Error::io(path, io),
        other => Error::Image(format!("{}: {other}", path.display())),
    };
    let mut reader = decoder.read_info().map_err(to_err)?;
    let info = reader.info();
    let (width, height) = (info.width, info.height);
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Image(format!(
            "{}: expected 8-bit samples, found {:?}",
            path.display(),
            info.bit_depth
        )));
    }
    if !matches!(
        info.color_type,
        png::ColorType::Grayscale | png::ColorType::Indexed
    ) {
        return Err(Error::Image(format!(
            "{}: expected single-channel image, found {:?}",
            path.display(),
            info.color_type
        )));
    }
    if width > MAX_SIDE || height > MAX_SIDE {
        return Err(Error::Shape {
            what: path.display().to_string(),
            message: format!("{width}x{height} exceeds {MAX_SIDE} per side"),
        });
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Image(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(to_err)?;
    let n = pixel_count(width, height)?;
    let stride = frame.line_size;
    let mut out = Vec::with_capacity(n);
    for row in buf.chunks(stride).take(height as usize) {
        out.extend_from_slice(&row[..width as usize]);
    }
    Ok((width, height, out))
}
