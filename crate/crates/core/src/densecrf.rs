//! Fully-connected CRF refinement by mean-field inference.
//!
//! Unaries come from the normalized correlation map, pairwise terms are a
//! Gaussian smoothness kernel over pixel positions and a bilateral
//! appearance kernel over positions and RGB values, with Potts label
//! compatibility. Messages are summed exactly over all pixel pairs, so the
//! cost is O(N^2) per iteration; images larger than `max_side` are refined
//! at a reduced resolution and upsampled back.

use std::collections::BTreeMap;

use image::RgbImage;
use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::parse_value;
use crate::error::{Error, Result};
use crate::fusion::{argmax_labels, CorrelationMap, Stage};
use crate::interp::resize_bilinear;
use crate::tensor_store::LabelMask;

// Kernel terms with a more negative exponent contribute less than 1e-21.
const MIN_EXPONENT: f64 = -50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfParams {
    pub iterations: u32,
    /// Appearance (bilateral) kernel weight.
    pub w1: f32,
    pub sxy_a: f32,
    pub srgb: f32,
    /// Smoothness kernel weight.
    pub w2: f32,
    pub sxy_s: f32,
    pub unary_epsilon: f32,
    /// Longest side refined at full resolution; 0 disables the cap.
    pub max_side: u32,
}

impl Default for CrfParams {
    fn default() -> Self {
        CrfParams {
            iterations: 10,
            w1: 4.0,
            sxy_a: 67.0,
            srgb: 3.0,
            w2: 3.0,
            sxy_s: 1.0,
            unary_epsilon: 1e-8,
            max_side: 160,
        }
    }
}

impl CrfParams {
    pub const KEYS: [&'static str; 8] = [
        "crf.iterations",
        "crf.w1",
        "crf.sxy_a",
        "crf.srgb",
        "crf.w2",
        "crf.sxy_s",
        "crf.unary_epsilon",
        "crf.max_side",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "crf.iterations" => self.iterations = parse_value(key, value)?,
            "crf.w1" => self.w1 = parse_value(key, value)?,
            "crf.sxy_a" => self.sxy_a = parse_value(key, value)?,
            "crf.srgb" => self.srgb = parse_value(key, value)?,
            "crf.w2" => self.w2 = parse_value(key, value)?,
            "crf.sxy_s" => self.sxy_s = parse_value(key, value)?,
            "crf.unary_epsilon" => self.unary_epsilon = parse_value(key, value)?,
            "crf.max_side" => self.max_side = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Config("crf.iterations must be at least 1".into()));
        }
        for (name, v) in [("crf.sxy_a", self.sxy_a), ("crf.srgb", self.srgb), ("crf.sxy_s", self.sxy_s)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("crf.w1", self.w1), ("crf.w2", self.w2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.unary_epsilon > 0.0 && self.unary_epsilon < 1.0) {
            return Err(Error::Config(format!(
                "crf.unary_epsilon must be in (0, 1), got {}",
                self.unary_epsilon
            )));
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("crf.iterations".into(), self.iterations.to_string()),
            ("crf.w1".into(), self.w1.to_string()),
            ("crf.sxy_a".into(), self.sxy_a.to_string()),
            ("crf.srgb".into(), self.srgb.to_string()),
            ("crf.w2".into(), self.w2.to_string()),
            ("crf.sxy_s".into(), self.sxy_s.to_string()),
            ("crf.unary_epsilon".into(), self.unary_epsilon.to_string()),
            ("crf.max_side".into(), self.max_side.to_string()),
        ])
    }
}

/// Per-iteration diagnostics of the mean-field loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationStats {
    /// Largest `|sum_l Q_i(l) - 1|` over pixels.
    pub max_sum_error: f64,
    pub min_probability: f64,
    /// Largest per-pixel, per-label change from the previous iteration.
    pub max_change: f64,
}

/// Refines `sc` against `image`. Both must have the same size.
pub fn refine(image: &RgbImage, sc: &CorrelationMap, params: &CrfParams) -> Result<CorrelationMap> {
    refine_traced(image, sc, params).map(|(map, _)| map)
}

/// [`refine`] plus the statistics of every mean-field iteration.
pub fn refine_traced(
    image: &RgbImage,
    sc: &CorrelationMap,
    params: &CrfParams,
) -> Result<(CorrelationMap, Vec<IterationStats>)> {
    params.validate()?;
    let (w, h) = (sc.width(), sc.height());
    if (image.width() as usize, image.height() as usize) != (w, h) {
        return Err(Error::Shape {
            what: "crf input".into(),
            message: format!(
                "image is {}x{}, correlation map is {w}x{h}",
                image.width(),
                image.height()
            ),
        });
    }
    let q0 = initial_distribution(sc, params.unary_epsilon)?;

    let pairwise_off = params.w1 == 0.0 && params.w2 == 0.0;
    let longest = w.max(h);
    let (q, stats) = if pairwise_off || params.max_side == 0 || longest <= params.max_side as usize {
        let field = Field::new(image_planes(image), q0, w, h);
        mean_field(&field, params)
    } else {
        let scale = params.max_side as f64 / longest as f64;
        let sw = ((w as f64 * scale).round() as usize).max(1);
        let sh = ((h as f64 * scale).round() as usize).max(1);
        let small_rgb = image_planes(image).map(|p| resize_bilinear(p.view(), sh, sw));
        let small_q = renormalize(resize_planes(&q0, sh, sw));
        let field = Field::new(small_rgb, small_q, sw, sh);
        let (q_small, stats) = mean_field(&field, params);
        (renormalize(resize_planes(&q_small, h, w)), stats)
    };

    let map = CorrelationMap::new(sc.channels.clone(), q, Stage::Image)?;
    Ok((map, stats))
}

/// Argmax labelling of a refined map, with the same tie and uncertainty
/// rules as [`crate::fusion::to_mask`].
pub fn argmax_mask(refined: &CorrelationMap, band: f32) -> Result<LabelMask> {
    argmax_labels(refined, band)
}

/// Per-pixel distribution: divide by the channel sum, clamp at `eps`,
/// renormalize.
fn initial_distribution(sc: &CorrelationMap, eps: f32) -> Result<Array3<f32>> {
    let (k, h, w) = sc.data.dim();
    let mut q = Array3::<f32>::zeros((k, h, w));
    let eps = eps as f64;
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0f64;
            for c in 0..k {
                let v = sc.data[[c, y, x]];
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::Invariant(format!(
                        "negative or non-finite score at ({x}, {y})"
                    )));
                }
                sum += v as f64;
            }
            if sum <= 0.0 {
                return Err(Error::Numerical(format!("all channels are zero at ({x}, {y})")));
            }
            let clamped: Vec<f64> = (0..k)
                .map(|c| (sc.data[[c, y, x]] as f64 / sum).max(eps))
                .collect();
            let total: f64 = clamped.iter().sum();
            for (c, v) in clamped.into_iter().enumerate() {
                q[[c, y, x]] = (v / total) as f32;
            }
        }
    }
    Ok(q)
}

fn image_planes(image: &RgbImage) -> [Array2<f32>; 3] {
    let (w, h) = (image.width() as usize, image.height() as usize);
    std::array::from_fn(|ch| {
        Array2::from_shape_fn((h, w), |(y, x)| image.get_pixel(x as u32, y as u32)[ch] as f32)
    })
}

fn resize_planes(q: &Array3<f32>, h: usize, w: usize) -> Array3<f32> {
    let mut out = Array3::zeros((q.dim().0, h, w));
    for (c, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
        plane.assign(&resize_bilinear(q.index_axis(Axis(0), c), h, w));
    }
    out
}

fn renormalize(mut q: Array3<f32>) -> Array3<f32> {
    let (k, h, w) = q.dim();
    for y in 0..h {
        for x in 0..w {
            let sum: f64 = (0..k).map(|c| q[[c, y, x]] as f64).sum();
            for c in 0..k {
                q[[c, y, x]] = (q[[c, y, x]] as f64 / sum) as f32;
            }
        }
    }
    q
}

/// Pixel features and unaries flattened to row-major pixel order.
struct Field {
    width: usize,
    labels: usize,
    pos: Vec<[f64; 2]>,
    rgb: Vec<[f64; 3]>,
    /// `-ln Q0`, pixel-major.
    unary: Vec<f64>,
}

impl Field {
    fn new(rgb: [Array2<f32>; 3], q0: Array3<f32>, width: usize, height: usize) -> Self {
        let labels = q0.dim().0;
        let n = width * height;
        let mut pos = Vec::with_capacity(n);
        let mut colors = Vec::with_capacity(n);
        let mut unary = Vec::with_capacity(n * labels);
        for y in 0..height {
            for x in 0..width {
                pos.push([x as f64, y as f64]);
                colors.push([
                    rgb[0][[y, x]] as f64,
                    rgb[1][[y, x]] as f64,
                    rgb[2][[y, x]] as f64,
                ]);
                for c in 0..labels {
                    unary.push(-(q0[[c, y, x]] as f64).ln());
                }
            }
        }
        Field {
            width,
            labels,
            pos,
            rgb: colors,
            unary,
        }
    }

    fn len(&self) -> usize {
        self.pos.len()
    }
}

fn mean_field(field: &Field, params: &CrfParams) -> (Array3<f32>, Vec<IterationStats>) {
    let n = field.len();
    let k = field.labels;
    let mut q: Vec<f64> = (0..n)
        .flat_map(|i| softmax_neg(&field.unary[i * k..(i + 1) * k]))
        .collect();

    let w1 = params.w1 as f64;
    let w2 = params.w2 as f64;
    let inv_a = 1.0 / (2.0 * (params.sxy_a as f64).powi(2));
    let inv_rgb = 1.0 / (2.0 * (params.srgb as f64).powi(2));
    let inv_s = 1.0 / (2.0 * (params.sxy_s as f64).powi(2));

    let mut stats = Vec::with_capacity(params.iterations as usize);
    for _ in 0..params.iterations {
        let next: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let mut message = vec![0.0f64; k];
                let (pi, ci) = (field.pos[i], field.rgb[i]);
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let (pj, cj) = (field.pos[j], field.rgb[j]);
                    let dp = (pi[0] - pj[0]).powi(2) + (pi[1] - pj[1]).powi(2);
                    let dc = (ci[0] - cj[0]).powi(2)
                        + (ci[1] - cj[1]).powi(2)
                        + (ci[2] - cj[2]).powi(2);
                    let mut kernel = 0.0;
                    if w1 > 0.0 {
                        let e = -dp * inv_a - dc * inv_rgb;
                        if e > MIN_EXPONENT {
                            kernel += w1 * e.exp();
                        }
                    }
                    if w2 > 0.0 {
                        let e = -dp * inv_s;
                        if e > MIN_EXPONENT {
                            kernel += w2 * e.exp();
                        }
                    }
                    if kernel != 0.0 {
                        let qj = &q[j * k..(j + 1) * k];
                        for (m, &v) in message.iter_mut().zip(qj) {
                            *m += kernel * v;
                        }
                    }
                }
                // Potts: the penalty for label l is the total message minus
                // the message agreeing with l; the total cancels in the
                // normalization.
                let logits: Vec<f64> = field.unary[i * k..(i + 1) * k]
                    .iter()
                    .zip(&message)
                    .map(|(u, m)| u - m)
                    .collect();
                softmax_neg(&logits)
            })
            .collect();

        let mut st = IterationStats {
            max_sum_error: 0.0,
            min_probability: f64::INFINITY,
            max_change: 0.0,
        };
        for i in 0..n {
            let row = &next[i * k..(i + 1) * k];
            let sum: f64 = row.iter().sum();
            st.max_sum_error = st.max_sum_error.max((sum - 1.0).abs());
            for (a, b) in row.iter().zip(&q[i * k..(i + 1) * k]) {
                st.min_probability = st.min_probability.min(*a);
                st.max_change = st.max_change.max((a - b).abs());
            }
        }
        stats.push(st);
        q = next;
    }

    let height = n / field.width.max(1);
    let out = Array3::from_shape_fn((k, height, field.width), |(c, y, x)| {
        q[(y * field.width + x) * k + c] as f32
    });
    (out, stats)
}

/// `softmax(-energy)`, shifted by the minimum energy for stability.
fn softmax_neg(energy: &[f64]) -> Vec<f64> {
    let lo = energy.iter().cloned().fold(f64::INFINITY, f64::min);
    let exps: Vec<f64> = energy.iter().map(|e| (lo - e).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}
