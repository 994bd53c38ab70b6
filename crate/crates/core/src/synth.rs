//! Deterministic synthetic attention bundles with known ground truth.
//!
//! A scene is a grid with axis-aligned rectangular class regions. Cross
//! attention puts mass `alpha` on a class's tokens inside its region and is
//! uniform elsewhere; self attention is `beta` within a region (background
//! counts as one region) and `1 - beta` across regions. Both receive
//! additive uniform jitter from the seed before row normalization, so every
//! output is a pure function of `(spec, seed)`.

use std::collections::BTreeMap;

use image::{Rgb, RgbImage};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt_plan::{compose_identifier_query, compose_query};
use crate::tensor_store::{
    AttentionBundle, CrossLayer, LabelMask, TokenEntry, TokenKind, TokenManifest, TokenSpan,
};

const PREFIX: [&str; 3] = ["a", "photo", "including"];

/// Half-open rectangle of grid cells, `[x0, y0, x1, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 4]", into = "[usize; 4]")]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

impl From<[usize; 4]> for Rect {
    fn from(v: [usize; 4]) -> Self {
        Rect::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Rect> for [usize; 4] {
    fn from(r: Rect) -> Self {
        [r.x0, r.y0, r.x1, r.y1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub index: u32,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassRegion {
    pub label: String,
    pub class_id: u8,
    pub rect: Rect,
    #[serde(default = "one")]
    pub alpha: f32,
}

fn one() -> f32 {
    1.0
}

fn default_scale() -> u32 {
    1
}

fn default_timestep() -> u32 {
    150
}

fn default_tokens_per_class() -> usize {
    1
}

fn default_image_id() -> String {
    "synthetic".into()
}

/// Semantic scene description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default = "default_image_id")]
    pub image_id: String,
    /// `[width, height]` of the self-attention grid.
    pub grid: [usize; 2],
    /// Image pixels per grid cell along each axis.
    #[serde(default = "default_scale")]
    pub image_scale: u32,
    #[serde(default = "default_tokens_per_class")]
    pub tokens_per_class: usize,
    #[serde(default = "one")]
    pub beta: f32,
    #[serde(default)]
    pub self_jitter: f32,
    #[serde(default)]
    pub cross_jitter: f32,
    #[serde(default = "default_timestep")]
    pub timestep: u32,
    #[serde(default)]
    pub sample_index: u32,
    #[serde(default)]
    pub backgrounds: Vec<String>,
    /// Mass put on background prompt tokens outside every class region.
    #[serde(default)]
    pub background_alpha: f32,
    /// Defaults to layers 4..=8 at grid resolution.
    #[serde(default)]
    pub cross_layers: Vec<LayerSpec>,
    pub classes: Vec<ClassRegion>,
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("scene spec: {e}")))
    }

    fn layers(&self) -> Vec<LayerSpec> {
        if self.cross_layers.is_empty() {
            default_layers(self.grid)
        } else {
            self.cross_layers.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        let [w, h] = self.grid;
        check_common(self.grid, self.image_scale, self.beta, self.self_jitter, self.cross_jitter)?;
        if self.classes.is_empty() {
            return Err(Error::Config("scene needs at least one class".into()));
        }
        if self.tokens_per_class == 0 {
            return Err(Error::Config("tokens_per_class must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.background_alpha) {
            return Err(Error::Config("background_alpha must be in [0, 1)".into()));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if c.rect.is_empty() || c.rect.x1 > w || c.rect.y1 > h {
                return Err(Error::Config(format!("class {:?}: rect outside the {w}x{h} grid", c.label)));
            }
            if !(c.alpha > 0.0 && c.alpha <= 1.0) {
                return Err(Error::Config(format!("class {:?}: alpha must be in (0, 1]", c.label)));
            }
            if c.class_id == 0 {
                return Err(Error::Config(format!("class {:?}: id 0 is background", c.label)));
            }
            for other in &self.classes[..i] {
                if other.label == c.label || other.class_id == c.class_id {
                    return Err(Error::Config(format!("class {:?} declared twice", c.label)));
                }
                if other.rect.intersects(&c.rect) {
                    return Err(Error::Config(format!(
                        "regions of {:?} and {:?} overlap",
                        other.label, c.label
                    )));
                }
            }
        }
        Ok(())
    }
}

fn default_layers(grid: [usize; 2]) -> Vec<LayerSpec> {
    (4..=8)
        .map(|index| LayerSpec {
            index,
            width: grid[0],
            height: grid[1],
        })
        .collect()
}

fn check_common(grid: [usize; 2], scale: u32, beta: f32, self_jitter: f32, cross_jitter: f32) -> Result<()> {
    if grid[0] == 0 || grid[1] == 0 {
        return Err(Error::Config("grid dimensions must be positive".into()));
    }
    if scale == 0 {
        return Err(Error::Config("image_scale must be positive".into()));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Config("beta must be in (0, 1]".into()));
    }
    if !(self_jitter >= 0.0 && cross_jitter >= 0.0 && self_jitter.is_finite() && cross_jitter.is_finite()) {
        return Err(Error::Config("jitter must be finite and non-negative".into()));
    }
    Ok(())
}

/// A generated semantic scene.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub bundle: AttentionBundle,
    pub ground_truth: LabelMask,
    /// Flat-colored rendering of the regions, for CRF runs.
    pub image: RgbImage,
}

/// Generates the bundle, ground-truth mask and image for `spec`.
pub fn make_fixture(spec: &SceneSpec, seed: u64) -> Result<Fixture> {
    spec.validate()?;
    let [gw, gh] = spec.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut classes: Vec<&ClassRegion> = spec.classes.iter().collect();
    classes.sort_by(|a, b| a.label.cmp(&b.label));

    // Token layout: prefix, class spans in label order, background prompts,
    // closing period.
    let mut entries: Vec<TokenEntry> = PREFIX
        .iter()
        .enumerate()
        .map(|(i, w)| TokenEntry::new(*w, TokenKind::Other, TokenSpan::single(i)))
        .collect();
    let mut next = PREFIX.len();
    let mut class_spans = Vec::new();
    for c in &classes {
        let span = TokenSpan::new(next, next + spec.tokens_per_class - 1);
        entries.push(TokenEntry::new(c.label.clone(), TokenKind::Category, span));
        class_spans.push(span);
        next += spec.tokens_per_class;
    }
    let mut bg_tokens = Vec::new();
    for b in &spec.backgrounds {
        entries.push(TokenEntry::new(b.clone(), TokenKind::Background, TokenSpan::single(next)));
        bg_tokens.push(next);
        next += 1;
    }
    entries.push(TokenEntry::new(".", TokenKind::Other, TokenSpan::single(next)));
    let tokens = next + 1;

    let labels: Vec<&str> = classes.iter().map(|c| c.label.as_str()).collect();
    let plan = compose_query(&labels, &BTreeMap::new(), &spec.backgrounds)?;
    let manifest = TokenManifest {
        prompt_text: plan.sentence(),
        entries,
        class_ids: classes.iter().map(|c| (c.label.clone(), c.class_id)).collect(),
    };

    let rects: Vec<Rect> = classes.iter().map(|c| c.rect).collect();
    let region_of = |x: usize, y: usize| rects.iter().position(|r| r.contains(x, y));

    let self_map = self_affinity(spec.grid, &region_of, spec.beta, spec.self_jitter, &mut rng);

    let mut cross_layers = Vec::new();
    for layer in spec.layers() {
        let data = cross_layer(&layer, spec.grid, tokens, spec.cross_jitter, &mut rng, |x, y| {
            let mut row = vec![0.0f64; tokens];
            match region_of(x, y) {
                Some(r) => {
                    let alpha = classes[r].alpha as f64;
                    spread(&mut row, 1.0 - alpha, 0..tokens);
                    spread(&mut row, alpha, class_spans[r].indices());
                }
                None if !bg_tokens.is_empty() && spec.background_alpha > 0.0 => {
                    let a = spec.background_alpha as f64;
                    spread(&mut row, 1.0 - a, 0..tokens);
                    spread(&mut row, a, bg_tokens.iter().copied());
                }
                None => spread(&mut row, 1.0, 0..tokens),
            }
            row
        });
        cross_layers.push(CrossLayer {
            layer_index: layer.index,
            width: layer.width,
            height: layer.height,
            tokens,
            data,
        });
    }

    let scale = spec.image_scale as usize;
    let (iw, ih) = (gw * scale, gh * scale);
    let gt_labels: Vec<u8> = (0..ih)
        .flat_map(|py| (0..iw).map(move |px| (px / scale, py / scale)))
        .map(|(x, y)| region_of(x, y).map_or(0, |r| classes[r].class_id))
        .collect();
    let ground_truth = LabelMask::from_labels(iw as u32, ih as u32, gt_labels)?;
    let image = RgbImage::from_fn(iw as u32, ih as u32, |px, py| {
        let cell = (px as usize / scale, py as usize / scale);
        region_color(region_of(cell.0, cell.1))
    });

    let bundle = AttentionBundle {
        image_id: spec.image_id.clone(),
        image_width: iw as u32,
        image_height: ih as u32,
        cross_layers,
        self_map,
        self_width: gw,
        self_height: gh,
        token_manifest: manifest,
        sample_index: spec.sample_index,
        timestep: spec.timestep,
        extraction_note: Some(format!("synthetic fixture, seed {seed}")),
    };
    bundle.validate()?;
    Ok(Fixture {
        bundle,
        ground_truth,
        image,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRegion {
    /// Identifier word, e.g. `<new1>`.
    pub identifier: String,
    pub rect: Rect,
    /// Share of the identifier's mass placed on each instance region, in
    /// instance order. Defaults to one-hot on its own region.
    #[serde(default)]
    pub focus: Option<Vec<f32>>,
}

/// Scene with several instances of one class, each with its own identifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSceneSpec {
    #[serde(default = "default_image_id")]
    pub image_id: String,
    pub grid: [usize; 2],
    #[serde(default = "default_scale")]
    pub image_scale: u32,
    pub class: String,
    pub class_id: u8,
    #[serde(default = "one")]
    pub alpha: f32,
    #[serde(default = "one")]
    pub beta: f32,
    #[serde(default)]
    pub self_jitter: f32,
    #[serde(default)]
    pub cross_jitter: f32,
    #[serde(default = "default_timestep")]
    pub timestep: u32,
    #[serde(default)]
    pub cross_layers: Vec<LayerSpec>,
    pub instances: Vec<InstanceRegion>,
}

impl InstanceSceneSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("instance spec: {e}")))
    }

    fn validate(&self) -> Result<()> {
        check_common(self.grid, self.image_scale, self.beta, self.self_jitter, self.cross_jitter)?;
        let [w, h] = self.grid;
        let n = self.instances.len();
        if n == 0 {
            return Err(Error::Config("instance scene needs at least one instance".into()));
        }
        if self.class_id == 0 || self.class_id as usize + n > 255 {
            return Err(Error::Config("class_id must leave room for instance ids".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config("alpha must be in (0, 1]".into()));
        }
        for (i, inst) in self.instances.iter().enumerate() {
            if inst.rect.is_empty() || inst.rect.x1 > w || inst.rect.y1 > h {
                return Err(Error::Config(format!("instance {i}: rect outside the grid")));
            }
            if let Some(f) = &inst.focus {
                if f.len() != n || f.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::Config(format!(
                        "instance {i}: focus needs {n} values in [0, 1]"
                    )));
                }
            }
            for other in &self.instances[..i] {
                if other.identifier == inst.identifier {
                    return Err(Error::Config(format!("identifier {:?} used twice", inst.identifier)));
                }
                if other.rect.intersects(&inst.rect) {
                    return Err(Error::Config(format!("instance {i} overlaps another instance")));
                }
            }
        }
        Ok(())
    }

    fn focus(&self, i: usize) -> Vec<f32> {
        self.instances[i].focus.clone().unwrap_or_else(|| {
            (0..self.instances.len())
                .map(|r| if r == i { 1.0 } else { 0.0 })
                .collect()
        })
    }
}

#[derive(Debug, Clone)]
pub struct InstanceFixture {
    /// Queried with `a photo including <class>.`
    pub scene: AttentionBundle,
    /// One per instance, queried with `a photo including <identifier> <class>.`
    pub identifiers: Vec<AttentionBundle>,
    /// Grid-resolution region of each instance.
    pub regions: Vec<Array2<bool>>,
    /// Image-resolution mask; instance `i` is labelled `class_id + 1 + i`.
    pub ground_truth: LabelMask,
    pub image: RgbImage,
}

pub fn make_instance_fixture(spec: &InstanceSceneSpec, seed: u64) -> Result<InstanceFixture> {
    spec.validate()?;
    let [gw, gh] = spec.grid;
    let n = spec.instances.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rects: Vec<Rect> = spec.instances.iter().map(|i| i.rect).collect();
    let region_of = |x: usize, y: usize| rects.iter().position(|r| r.contains(x, y));
    let layers = if spec.cross_layers.is_empty() {
        default_layers(spec.grid)
    } else {
        spec.cross_layers.clone()
    };
    let alpha = spec.alpha as f64;

    let self_map = self_affinity(spec.grid, &region_of, spec.beta, spec.self_jitter, &mut rng);

    // Scene: prefix, class, period.
    let class_token = PREFIX.len();
    let scene_tokens = class_token + 2;
    let mut scene_layers = Vec::new();
    for layer in &layers {
        let data = cross_layer(layer, spec.grid, scene_tokens, spec.cross_jitter, &mut rng, |x, y| {
            let mut row = vec![0.0f64; scene_tokens];
            match region_of(x, y) {
                Some(_) => {
                    spread(&mut row, 1.0 - alpha, 0..scene_tokens);
                    row[class_token] += alpha;
                }
                None => spread(&mut row, 1.0, 0..scene_tokens),
            }
            row
        });
        scene_layers.push(CrossLayer {
            layer_index: layer.index,
            width: layer.width,
            height: layer.height,
            tokens: scene_tokens,
            data,
        });
    }
    let mut entries = prefix_entries();
    entries.push(TokenEntry::new(spec.class.clone(), TokenKind::Category, TokenSpan::single(class_token)));
    entries.push(TokenEntry::new(".", TokenKind::Other, TokenSpan::single(class_token + 1)));
    let scene_plan = compose_query(&[spec.class.as_str()], &BTreeMap::new(), &[])?;
    let scene_manifest = TokenManifest {
        prompt_text: scene_plan.sentence(),
        entries,
        class_ids: BTreeMap::from([(spec.class.clone(), spec.class_id)]),
    };

    let scale = spec.image_scale as usize;
    let (iw, ih) = (gw * scale, gh * scale);
    let base = |sample_index: u32, layers: Vec<CrossLayer>, manifest: TokenManifest, id: String| AttentionBundle {
        image_id: id,
        image_width: iw as u32,
        image_height: ih as u32,
        cross_layers: layers,
        self_map: self_map.clone(),
        self_width: gw,
        self_height: gh,
        token_manifest: manifest,
        sample_index,
        timestep: spec.timestep,
        extraction_note: Some(format!("synthetic instance fixture, seed {seed}")),
    };
    let scene = base(0, scene_layers, scene_manifest, spec.image_id.clone());
    scene.validate()?;

    // Identifier bundles: prefix, identifier, class, period.
    let id_token = PREFIX.len();
    let id_class_token = id_token + 1;
    let id_tokens = id_token + 3;
    let mut identifiers = Vec::with_capacity(n);
    for i in 0..n {
        let focus = spec.focus(i);
        let mut id_layers = Vec::new();
        for layer in &layers {
            let data = cross_layer(layer, spec.grid, id_tokens, spec.cross_jitter, &mut rng, |x, y| {
                let mut row = vec![0.0f64; id_tokens];
                match region_of(x, y) {
                    Some(r) => {
                        let f = focus[r] as f64;
                        spread(&mut row, 1.0 - alpha, 0..id_tokens);
                        row[id_token] += alpha * f;
                        row[id_class_token] += alpha * (1.0 - f);
                    }
                    None => spread(&mut row, 1.0, 0..id_tokens),
                }
                row
            });
            id_layers.push(CrossLayer {
                layer_index: layer.index,
                width: layer.width,
                height: layer.height,
                tokens: id_tokens,
                data,
            });
        }
        let ident = &spec.instances[i].identifier;
        let plan = compose_identifier_query(&spec.class, ident, &BTreeMap::new())?;
        let mut entries = prefix_entries();
        entries.push(TokenEntry::new(ident.clone(), TokenKind::Identifier, TokenSpan::single(id_token)));
        entries.push(TokenEntry::new(spec.class.clone(), TokenKind::Category, TokenSpan::single(id_class_token)));
        entries.push(TokenEntry::new(".", TokenKind::Other, TokenSpan::single(id_class_token + 1)));
        let manifest = TokenManifest {
            prompt_text: plan.sentence(),
            entries,
            class_ids: BTreeMap::from([
                (spec.class.clone(), spec.class_id),
                (ident.clone(), spec.class_id + 1 + i as u8),
            ]),
        };
        let bundle = base(0, id_layers, manifest, format!("{}_id{i}", spec.image_id));
        bundle.validate()?;
        identifiers.push(bundle);
    }

    let regions = rects
        .iter()
        .map(|r| Array2::from_shape_fn((gh, gw), |(y, x)| r.contains(x, y)))
        .collect();
    let gt_labels: Vec<u8> = (0..ih)
        .flat_map(|py| (0..iw).map(move |px| (px / scale, py / scale)))
        .map(|(x, y)| region_of(x, y).map_or(0, |r| spec.class_id + 1 + r as u8))
        .collect();
    let ground_truth = LabelMask::from_labels(iw as u32, ih as u32, gt_labels)?;
    let image = RgbImage::from_fn(iw as u32, ih as u32, |px, py| {
        region_color(region_of(px as usize / scale, py as usize / scale))
    });

    Ok(InstanceFixture {
        scene,
        identifiers,
        regions,
        ground_truth,
        image,
    })
}

fn prefix_entries() -> Vec<TokenEntry> {
    PREFIX
        .iter()
        .enumerate()
        .map(|(i, w)| TokenEntry::new(*w, TokenKind::Other, TokenSpan::single(i)))
        .collect()
}

fn spread(row: &mut [f64], mass: f64, indices: impl Iterator<Item = usize> + Clone) {
    let count = indices.clone().count();
    if count == 0 || mass == 0.0 {
        return;
    }
    for i in indices {
        row[i] += mass / count as f64;
    }
}

fn normalize_rows(raw: Array2<f64>) -> Array2<f32> {
    let mut out = Array2::<f32>::zeros(raw.dim());
    for (row, mut dst) in raw.rows().into_iter().zip(out.rows_mut()) {
        let sum: f64 = row.sum();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v / sum) as f32;
        }
    }
    out
}

fn self_affinity(
    grid: [usize; 2],
    region_of: &dyn Fn(usize, usize) -> Option<usize>,
    beta: f32,
    jitter: f32,
    rng: &mut ChaCha8Rng,
) -> Array2<f32> {
    let [gw, gh] = grid;
    let n = gw * gh;
    let region: Vec<Option<usize>> = (0..n).map(|i| region_of(i % gw, i / gw)).collect();
    let (within, across) = (beta as f64, 1.0 - beta as f64);
    let mut raw = Array2::from_shape_fn((n, n), |(i, j)| {
        if region[i] == region[j] {
            within
        } else {
            across
        }
    });
    if jitter > 0.0 {
        for i in 0..n {
            for j in i..n {
                let e = rng.random::<f64>() * jitter as f64;
                raw[[i, j]] += e;
                if j != i {
                    raw[[j, i]] += e;
                }
            }
        }
    }
    normalize_rows(raw)
}

fn cross_layer(
    layer: &LayerSpec,
    grid: [usize; 2],
    tokens: usize,
    jitter: f32,
    rng: &mut ChaCha8Rng,
    row_for_cell: impl Fn(usize, usize) -> Vec<f64>,
) -> Array2<f32> {
    let map_axis = |i: usize, n_layer: usize, n_grid: usize| {
        if n_layer <= 1 {
            0
        } else {
            let pos = i as f64 * (n_grid - 1) as f64 / (n_layer - 1) as f64;
            (pos.round() as usize).min(n_grid - 1)
        }
    };
    let mut raw = Array2::<f64>::zeros((layer.width * layer.height, tokens));
    for ly in 0..layer.height {
        for lx in 0..layer.width {
            let gx = map_axis(lx, layer.width, grid[0]);
            let gy = map_axis(ly, layer.height, grid[1]);
            let row = row_for_cell(gx, gy);
            let mut dst = raw.row_mut(ly * layer.width + lx);
            for (d, v) in dst.iter_mut().zip(row) {
                *d = v;
                if jitter > 0.0 {
                    *d += rng.random::<f64>() * jitter as f64;
                }
            }
        }
    }
    normalize_rows(raw)
}

fn region_color(region: Option<usize>) -> Rgb<u8> {
    const PALETTE: [[u8; 3]; 8] = [
        [200, 40, 40],
        [40, 160, 60],
        [40, 70, 200],
        [220, 200, 40],
        [160, 60, 190],
        [40, 190, 190],
        [240, 130, 30],
        [120, 80, 40],
    ];
    match region {
        Some(r) => Rgb(PALETTE[r % PALETTE.len()]),
        None => Rgb([128, 128, 128]),
    }
}
