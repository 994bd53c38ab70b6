//! Attention fusion: cross-attention aggregation, random-walk propagation
//! through the self-attention affinity, per-class attribution maps and the
//! background channel.
//!
//! The pipeline for one bundle is
//!
//! 1. [`aggregate_cross`]: resize every selected cross layer to the
//!    self-attention grid and average them, giving `Cross` (WH x l);
//! 2. [`propagate`]: `SelfCross = Self^order * Cross`;
//! 3. [`class_attribution`]: average the token columns of each class and
//!    min-max normalize the result to `[0, 1]`;
//! 4. [`background_map`]: `max(thr - max_k SC_k, 0)^power`;
//!
//! and [`fuse`] stacks the result into a [`CorrelationMap`] whose channel 0
//! is background. [`to_mask`] upsamples and takes the per-pixel argmax.

use std::collections::BTreeMap;

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::config::{parse_bool, parse_list, parse_value};
use crate::error::{Error, Result};
use crate::interp::resize_bilinear;
use crate::prompt_plan::{validate_manifest, PromptPlan};
use crate::tensor_store::{AttentionBundle, LabelMask, TokenSpan};

pub const BACKGROUND_LABEL: &str = "background";

/// Relative range below which an attribution map counts as constant.
const DEGENERATE_RANGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub label: String,
    pub class_id: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Grid,
    Image,
}

/// Stack of attribution maps, `(channels, height, width)`, channel 0 being
/// background.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    pub channels: Vec<Channel>,
    pub data: Array3<f32>,
    pub stage: Stage,
}

impl CorrelationMap {
    pub fn new(channels: Vec<Channel>, data: Array3<f32>, stage: Stage) -> Result<Self> {
        if channels.len() != data.dim().0 {
            return Err(Error::Shape {
                what: "correlation map".into(),
                message: format!(
                    "{} channel labels for {} planes",
                    channels.len(),
                    data.dim().0
                ),
            });
        }
        if channels.len() < 2 {
            return Err(Error::Invariant(
                "correlation map needs background and at least one class".into(),
            ));
        }
        Ok(CorrelationMap {
            channels,
            data,
            stage,
        })
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, c: usize) -> ArrayView2<'_, f32> {
        self.data.index_axis(Axis(0), c)
    }

    pub fn background(&self) -> ArrayView2<'_, f32> {
        self.channel(0)
    }

    /// Index of the channel labelled `label`.
    pub fn find(&self, label: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.label == label)
    }

    pub fn same_layout(&self, other: &CorrelationMap) -> bool {
        self.channels == other.channels && self.data.dim() == other.data.dim()
    }

    /// Bilinearly resamples every channel to `width x height`.
    pub fn resized(&self, width: usize, height: usize) -> CorrelationMap {
        let mut data = Array3::zeros((self.num_channels(), height, width));
        for (c, mut plane) in data.axis_iter_mut(Axis(0)).enumerate() {
            plane.assign(&resize_bilinear(self.channel(c), height, width));
        }
        CorrelationMap {
            channels: self.channels.clone(),
            data,
            stage: Stage::Image,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Number of self-attention propagation steps.
    pub order: u32,
    pub cross_layer_ids: Vec<u32>,
    pub bg_threshold: f32,
    pub bg_power: f32,
    /// Pixels whose top-two channel gap is below this are flagged uncertain.
    pub uncertainty_band: f32,
    /// Recompute the background channel from the ensembled foreground
    /// channels instead of averaging per-sample background channels.
    pub bg_after_ensemble: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            order: 2,
            cross_layer_ids: vec![4, 5, 6, 7, 8],
            bg_threshold: 1.0,
            bg_power: 2.0,
            uncertainty_band: 0.05,
            bg_after_ensemble: false,
        }
    }
}

impl FusionConfig {
    pub const KEYS: [&'static str; 6] = [
        "order",
        "cross-layers",
        "bg-thr",
        "bg-power",
        "band",
        "bg-after-ensemble",
    ];

    /// Sets one field from its config key. Returns `false` for keys that do
    /// not belong to this config.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "order" => self.order = parse_value(key, value)?,
            "cross-layers" => self.cross_layer_ids = parse_list(key, value)?,
            "bg-thr" => self.bg_threshold = parse_value(key, value)?,
            "bg-power" => self.bg_power = parse_value(key, value)?,
            "band" => self.uncertainty_band = parse_value(key, value)?,
            "bg-after-ensemble" => self.bg_after_ensemble = parse_bool(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cross_layer_ids.is_empty() {
            return Err(Error::Config("cross-layers: at least one layer required".into()));
        }
        if !(self.bg_threshold > 0.0 && self.bg_threshold <= 1.5) {
            return Err(Error::Config(format!(
                "bg-thr: {} outside (0, 1.5]",
                self.bg_threshold
            )));
        }
        if !(self.bg_power > 0.0 && self.bg_power.is_finite()) {
            return Err(Error::Config(format!("bg-power: {} must be positive", self.bg_power)));
        }
        if !(self.uncertainty_band >= 0.0 && self.uncertainty_band.is_finite()) {
            return Err(Error::Config(format!(
                "band: {} must be non-negative",
                self.uncertainty_band
            )));
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> BTreeMap<String, String> {
        let layers: Vec<String> = self.cross_layer_ids.iter().map(|l| l.to_string()).collect();
        BTreeMap::from([
            ("order".into(), self.order.to_string()),
            ("cross-layers".into(), layers.join(",")),
            ("bg-thr".into(), self.bg_threshold.to_string()),
            ("bg-power".into(), self.bg_power.to_string()),
            ("band".into(), self.uncertainty_band.to_string()),
            ("bg-after-ensemble".into(), self.bg_after_ensemble.to_string()),
        ])
    }
}

/// Resizes each requested cross layer to the self-attention grid, averages
/// them uniformly and renormalizes every row to sum to one.
pub fn aggregate_cross(bundle: &AttentionBundle, layer_ids: &[u32]) -> Result<Array2<f32>> {
    if layer_ids.is_empty() {
        return Err(Error::Config("no cross layers selected".into()));
    }
    let (gw, gh) = (bundle.self_width, bundle.self_height);
    let tokens = bundle.tokens();
    let mut acc = Array2::<f64>::zeros((gw * gh, tokens));

    for &id in layer_ids {
        let layer = bundle
            .layer(id)
            .ok_or_else(|| Error::Invalid(format!("bundle has no cross layer {id}")))?;
        for t in 0..tokens {
            let column = layer.data.column(t);
            let grid = Array2::from_shape_fn((layer.height, layer.width), |(y, x)| {
                column[y * layer.width + x]
            });
            let resized = resize_bilinear(grid.view(), gh, gw);
            for (i, &v) in resized.iter().enumerate() {
                acc[[i, t]] += v as f64;
            }
        }
    }

    let n = layer_ids.len() as f64;
    let mut out = Array2::<f32>::zeros(acc.dim());
    for (i, (row, mut out_row)) in acc.rows().into_iter().zip(out.rows_mut()).enumerate() {
        let sum: f64 = row.iter().map(|v| v / n).sum();
        if sum <= 0.0 || !sum.is_finite() {
            return Err(Error::Numerical(format!(
                "aggregated cross row {i} has zero mass"
            )));
        }
        for (o, &v) in out_row.iter_mut().zip(row) {
            *o = (v / n / sum) as f32;
        }
    }
    Ok(out)
}

/// Random-walk propagation `Self^order * Cross`, computed as `order`
/// successive products with f64 accumulation.
pub fn propagate(
    self_map: ArrayView2<'_, f32>,
    cross: ArrayView2<'_, f32>,
    order: u32,
) -> Result<Array2<f32>> {
    let (r, c) = self_map.dim();
    if r != c {
        return Err(Error::Shape {
            what: "self map".into(),
            message: format!("not square: {r}x{c}"),
        });
    }
    if cross.nrows() != r {
        return Err(Error::Shape {
            what: "cross map".into(),
            message: format!("{} rows, self map has {r}", cross.nrows()),
        });
    }
    if order == 0 {
        return Ok(cross.to_owned());
    }
    let affinity = self_map.mapv(f64::from);
    let mut belief = cross.mapv(f64::from);
    for _ in 0..order {
        belief = affinity.dot(&belief);
    }
    Ok(belief.mapv(|v| v as f32))
}

/// Mean of the token columns in `span`, reshaped to `height x width` and
/// min-max normalized. A constant map normalizes to all zeros.
pub fn class_attribution(
    selfcross: ArrayView2<'_, f32>,
    span: TokenSpan,
    width: usize,
    height: usize,
) -> Result<Array2<f32>> {
    if selfcross.nrows() != width * height {
        return Err(Error::Shape {
            what: "selfcross".into(),
            message: format!("{} rows for a {width}x{height} grid", selfcross.nrows()),
        });
    }
    if span.is_empty() || span.end >= selfcross.ncols() {
        return Err(Error::Span {
            label: String::new(),
            message: format!(
                "span [{}, {}] invalid for {} tokens",
                span.start,
                span.end,
                selfcross.ncols()
            ),
        });
    }
    let cols = selfcross.slice(s![.., span.start..=span.end]);
    let k = span.len() as f64;
    let means: Vec<f64> = cols
        .rows()
        .into_iter()
        .map(|row| row.iter().map(|&v| v as f64).sum::<f64>() / k)
        .collect();
    Ok(normalize_grid(&means, width, height))
}

fn normalize_grid(values: &[f64], width: usize, height: usize) -> Array2<f32> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if range.is_nan() || range <= DEGENERATE_RANGE * hi.abs().max(lo.abs()) {
        return Array2::zeros((height, width));
    }
    Array2::from_shape_fn((height, width), |(y, x)| {
        ((values[y * width + x] - lo) / range) as f32
    })
}

/// Background score `max(thr - max_k fg_k, 0)^power` per cell.
pub fn background_map(fg: ArrayView3<'_, f32>, thr: f32, power: f32) -> Result<Array2<f32>> {
    let (k, h, w) = fg.dim();
    if k == 0 {
        return Err(Error::Invalid("background needs at least one class channel".into()));
    }
    Ok(Array2::from_shape_fn((h, w), |(y, x)| {
        let peak = (0..k).map(|c| fg[[c, y, x]]).fold(f32::NEG_INFINITY, f32::max);
        background_score(peak, thr, power)
    }))
}

#[inline]
fn background_score(peak: f32, thr: f32, power: f32) -> f32 {
    let d = (thr - peak).max(0.0);
    if power == 2.0 {
        d * d
    } else if power == 1.0 {
        d
    } else {
        d.powf(power)
    }
}

/// Full fusion of one bundle into a grid-stage correlation map.
///
/// Every category and identifier span of the manifest becomes a channel,
/// in manifest order; background prompt tokens only shape the cross
/// attention and never get a channel.
pub fn fuse(
    bundle: &AttentionBundle,
    plan: &PromptPlan,
    config: &FusionConfig,
) -> Result<CorrelationMap> {
    config.validate()?;
    bundle.validate()?;
    let manifest = &bundle.token_manifest;
    validate_manifest(plan, manifest).map_err(Error::PlanMismatch)?;

    let mut channels = vec![Channel {
        label: BACKGROUND_LABEL.into(),
        class_id: 0,
    }];
    let mut spans = Vec::new();
    for entry in manifest.channel_entries() {
        let class_id = *manifest.class_ids.get(&entry.label).ok_or_else(|| {
            Error::Invalid(format!("manifest has no class id for {:?}", entry.label))
        })?;
        if class_id == 0 {
            return Err(Error::Invalid(format!(
                "class id 0 is reserved for background ({:?})",
                entry.label
            )));
        }
        channels.push(Channel {
            label: entry.label.clone(),
            class_id,
        });
        spans.push(entry.token_span);
    }
    if spans.is_empty() {
        return Err(Error::Invalid("manifest has no category spans".into()));
    }

    let (w, h) = (bundle.self_width, bundle.self_height);
    let cross = aggregate_cross(bundle, &config.cross_layer_ids)?;
    let selfcross = propagate(bundle.self_map.view(), cross.view(), config.order)?;

    let mut data = Array3::<f32>::zeros((spans.len() + 1, h, w));
    for (c, span) in spans.iter().enumerate() {
        let map = class_attribution(selfcross.view(), *span, w, h)?;
        data.index_axis_mut(Axis(0), c + 1).assign(&map);
    }
    let bg = background_map(
        data.slice(s![1.., .., ..]),
        config.bg_threshold,
        config.bg_power,
    )?;
    data.index_axis_mut(Axis(0), 0).assign(&bg);

    CorrelationMap::new(channels, data, Stage::Grid)
}

/// Elementwise mean of maps from different noise samples of one image.
pub fn ensemble(maps: &[CorrelationMap]) -> Result<CorrelationMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Invalid("ensemble of zero maps".into()))?;
    if let Some(bad) = maps.iter().position(|m| !first.same_layout(m) || m.stage != first.stage) {
        return Err(Error::Shape {
            what: "ensemble".into(),
            message: format!("map {bad} has a different channel layout or size"),
        });
    }
    let mut acc = first.data.mapv(f64::from);
    for m in &maps[1..] {
        acc.zip_mut_with(&m.data, |a, &b| *a += b as f64);
    }
    let n = maps.len() as f64;
    Ok(CorrelationMap {
        channels: first.channels.clone(),
        data: acc.mapv(|v| (v / n) as f32),
        stage: first.stage,
    })
}

/// [`ensemble`], then optionally rebuild the background channel from the
/// averaged foreground channels.
pub fn ensemble_with(maps: &[CorrelationMap], config: &FusionConfig) -> Result<CorrelationMap> {
    let mut out = ensemble(maps)?;
    if config.bg_after_ensemble {
        let bg = background_map(
            out.data.slice(s![1.., .., ..]),
            config.bg_threshold,
            config.bg_power,
        )?;
        out.data.index_axis_mut(Axis(0), 0).assign(&bg);
    }
    Ok(out)
}

/// Upsamples `sc` to the image size and labels each pixel with its
/// highest-scoring channel.
pub fn to_mask(sc: &CorrelationMap, image_w: u32, image_h: u32, band: f32) -> Result<LabelMask> {
    let (w, h) = (image_w as usize, image_h as usize);
    if (sc.width(), sc.height()) == (w, h) {
        argmax_labels(sc, band)
    } else {
        argmax_labels(&sc.resized(w, h), band)
    }
}

/// Per-pixel argmax over channels at the map's own resolution. Ties go to
/// the lower class id, so background wins ties. A pixel is uncertain when
/// its best score beats the runner-up by less than `band`.
pub fn argmax_labels(sc: &CorrelationMap, band: f32) -> Result<LabelMask> {
    let (k, h, w) = sc.data.dim();
    let mut labels = Vec::with_capacity(h * w);
    let mut uncertain = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut best = 0usize;
            for c in 1..k {
                let (v, b) = (sc.data[[c, y, x]], sc.data[[best, y, x]]);
                if v > b || (v == b && sc.channels[c].class_id < sc.channels[best].class_id) {
                    best = c;
                }
            }
            let top = sc.data[[best, y, x]];
            let runner_up = (0..k)
                .filter(|&c| c != best)
                .map(|c| sc.data[[c, y, x]])
                .fold(f32::NEG_INFINITY, f32::max);
            labels.push(sc.channels[best].class_id);
            uncertain.push(top - runner_up < band);
        }
    }
    LabelMask::new(w as u32, h as u32, labels, uncertain)
}
