//! On-disk format for attention bundles, label masks and correlation maps.
//!
//! A bundle directory holds:
//!
//! ```text
//! manifest.json      schema-versioned metadata, shapes and token spans
//! self.f32           self-attention map, (WH x WH)
//! cross_<layer>.f32  one per cross-attention layer, (WH_n x l)
//! ```
//!
//! Raw tensor files are little-endian IEEE-754 f32, row-major, no header.
//! Everything read from disk is validated; a bundle that violates an
//! invariant is an error, never a warning.

mod bundle;
mod mask;
mod raw;
mod scmap;

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bundle::{read_bundle, write_bundle, FORMAT_VERSION, MANIFEST_FILE};
pub use mask::{read_mask, uncertainty_path, write_mask, LabelMask};
pub use raw::{read_f32_file, write_f32_file};
pub use scmap::{read_correlation_map, write_correlation_map};

/// Row sums of softmax outputs must lie within this distance of one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

/// Length of the diffusion schedule the timestep is drawn from.
pub const NUM_TRAIN_TIMESTEPS: u32 = 1000;

/// Role of a token span inside the composed prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Category,
    Identifier,
    Background,
    Other,
}

impl TokenKind {
    /// Categories and identifiers each become an output channel.
    pub fn forms_channel(self) -> bool {
        matches!(self, TokenKind::Category | TokenKind::Identifier)
    }
}

impl std::fmt::Display for TokenKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TokenKind::Category => "category",
            TokenKind::Identifier => "identifier",
            TokenKind::Background => "background",
            TokenKind::Other => "other",
        };
        f.write_str(s)
    }
}

/// Inclusive token index range, serialized as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Self {
        TokenSpan { start, end }
    }

    pub fn single(index: usize) -> Self {
        TokenSpan::new(index, index)
    }

    pub fn is_empty(&self) -> bool {
        self.start > self.end
    }

    pub fn len(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            self.end - self.start + 1
        }
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }

    pub fn overlaps(&self, other: &TokenSpan) -> bool {
        !self.is_empty() && !other.is_empty() && self.start <= other.end && other.start <= self.end
    }
}

impl From<[usize; 2]> for TokenSpan {
    fn from(v: [usize; 2]) -> Self {
        TokenSpan::new(v[0], v[1])
    }
}

impl From<TokenSpan> for [usize; 2] {
    fn from(s: TokenSpan) -> Self {
        [s.start, s.end]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenEntry {
    pub label: String,
    pub kind: TokenKind,
    pub token_span: TokenSpan,
}

impl TokenEntry {
    pub fn new(label: impl Into<String>, kind: TokenKind, token_span: TokenSpan) -> Self {
        TokenEntry {
            label: label.into(),
            kind,
            token_span,
        }
    }
}

/// Maps prompt labels to the token indices that realize them.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenManifest {
    pub prompt_text: String,
    pub entries: Vec<TokenEntry>,
    #[serde(default)]
    pub class_ids: BTreeMap<String, u8>,
}

impl TokenManifest {
    /// Checks span bounds against a token count `tokens`, uniqueness of
    /// category labels and disjointness of category spans.
    pub fn validate(&self, tokens: usize) -> Result<()> {
        for e in &self.entries {
            if e.token_span.is_empty() {
                return Err(Error::Span {
                    label: e.label.clone(),
                    message: format!(
                        "empty span [{}, {}]",
                        e.token_span.start, e.token_span.end
                    ),
                });
            }
            if e.token_span.end >= tokens {
                return Err(Error::Span {
                    label: e.label.clone(),
                    message: format!(
                        "span [{}, {}] exceeds token count {tokens}",
                        e.token_span.start, e.token_span.end
                    ),
                });
            }
        }
        let categories: Vec<&TokenEntry> = self
            .entries
            .iter()
            .filter(|e| e.kind == TokenKind::Category)
            .collect();
        for (i, a) in categories.iter().enumerate() {
            for b in &categories[i + 1..] {
                if a.label == b.label {
                    return Err(Error::Span {
                        label: a.label.clone(),
                        message: "duplicate category label".into(),
                    });
                }
                if a.token_span.overlaps(&b.token_span) {
                    return Err(Error::Span {
                        label: a.label.clone(),
                        message: format!("span overlaps category {:?}", b.label),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn entry(&self, label: &str, kind: TokenKind) -> Option<&TokenEntry> {
        self.entries
            .iter()
            .find(|e| e.label == label && e.kind == kind)
    }

    /// Entries that become output channels, in manifest order.
    pub fn channel_entries(&self) -> impl Iterator<Item = &TokenEntry> {
        self.entries.iter().filter(|e| e.kind.forms_channel())
    }
}

/// One head-averaged cross-attention layer, `(width*height) x tokens`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossLayer {
    pub layer_index: u32,
    pub width: usize,
    pub height: usize,
    pub tokens: usize,
    pub data: Array2<f32>,
}

/// All attention tensors captured for one image and one noise sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBundle {
    pub image_id: String,
    pub image_width: u32,
    pub image_height: u32,
    pub cross_layers: Vec<CrossLayer>,
    pub self_map: Array2<f32>,
    pub self_width: usize,
    pub self_height: usize,
    pub token_manifest: TokenManifest,
    pub sample_index: u32,
    pub timestep: u32,
    pub extraction_note: Option<String>,
}

impl AttentionBundle {
    pub fn tokens(&self) -> usize {
        self.cross_layers.first().map_or(0, |l| l.tokens)
    }

    pub fn layer(&self, layer_index: u32) -> Option<&CrossLayer> {
        self.cross_layers
            .iter()
            .find(|l| l.layer_index == layer_index)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::Invariant("image dimensions must be positive".into()));
        }
        if self.timestep == 0 || self.timestep > NUM_TRAIN_TIMESTEPS {
            return Err(Error::Invariant(format!(
                "timestep {} outside [1, {NUM_TRAIN_TIMESTEPS}]",
                self.timestep
            )));
        }

        let (rows, cols) = self.self_map.dim();
        if rows != cols {
            return Err(Error::Shape {
                what: "self_map".into(),
                message: format!("not square: {rows}x{cols}"),
            });
        }
        if self.self_width * self.self_height != rows || rows == 0 {
            return Err(Error::Shape {
                what: "self_map".into(),
                message: format!(
                    "grid {}x{} does not match {rows} rows",
                    self.self_width, self.self_height
                ),
            });
        }
        check_stochastic("self_map", &self.self_map)?;

        if self.cross_layers.is_empty() {
            return Err(Error::Invariant("bundle has no cross layers".into()));
        }
        let tokens = self.cross_layers[0].tokens;
        for (i, layer) in self.cross_layers.iter().enumerate() {
            let name = format!("cross_{}", layer.layer_index);
            if self.cross_layers[..i]
                .iter()
                .any(|l| l.layer_index == layer.layer_index)
            {
                return Err(Error::Invariant(format!(
                    "duplicate cross layer index {}",
                    layer.layer_index
                )));
            }
            if layer.tokens != tokens {
                return Err(Error::Shape {
                    what: name,
                    message: format!("{} tokens, expected {tokens}", layer.tokens),
                });
            }
            if layer.data.dim() != (layer.width * layer.height, layer.tokens)
                || layer.width == 0
                || layer.height == 0
            {
                return Err(Error::Shape {
                    what: name,
                    message: format!(
                        "data {:?} does not match grid {}x{} with {} tokens",
                        layer.data.dim(),
                        layer.width,
                        layer.height,
                        layer.tokens
                    ),
                });
            }
            check_stochastic(&name, &layer.data)?;
        }

        self.token_manifest.validate(tokens)
    }
}

/// Finite entries in `[0, 1]` and rows summing to one.
pub(crate) fn check_stochastic(what: &str, m: &Array2<f32>) -> Result<()> {
    for (r, row) in m.rows().into_iter().enumerate() {
        let mut sum = 0.0f64;
        for &v in row {
            if !v.is_finite() {
                return Err(Error::Invariant(format!("{what}: non-finite value in row {r}")));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Invariant(format!(
                    "{what}: value {v} outside [0, 1] in row {r}"
                )));
            }
            sum += v as f64;
        }
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::Invariant(format!(
                "{what}: row {r} sums to {sum}, not 1"
            )));
        }
    }
    Ok(())
}
