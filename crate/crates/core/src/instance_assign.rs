//! Personalized instance localization.
//!
//! The scene's self-attention affinity is split into segments by spectral
//! clustering, each queried instance's attribution map is averaged over the
//! foreground part of every segment, and instances are matched to segments
//! either independently ([`assign_greedy`]) or jointly by Kuhn-Munkres
//! ([`assign_hungarian`]).

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{fuse, CorrelationMap, FusionConfig};
use crate::prompt_plan::PromptPlan;
use crate::tensor_store::{AttentionBundle, TokenKind};

const KMEANS_MAX_ITER: usize = 100;
const KMEANS_RESTARTS: usize = 8;
const EIGENGAP_WINDOW: usize = 10;

/// Segment id per grid cell plus the foreground restriction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentPartition {
    pub width: usize,
    pub height: usize,
    /// `(height, width)`, ids in `[0, n_segments)`.
    pub segment_ids: Array2<usize>,
    pub n_segments: usize,
    pub foreground: Array2<bool>,
}

impl SegmentPartition {
    pub fn with_foreground(mut self, foreground: Array2<bool>) -> Result<Self> {
        if foreground.dim() != self.segment_ids.dim() {
            return Err(Error::Shape {
                what: "foreground mask".into(),
                message: format!(
                    "{:?} does not match partition {:?}",
                    foreground.dim(),
                    self.segment_ids.dim()
                ),
            });
        }
        self.foreground = foreground;
        Ok(self)
    }

    pub fn segment_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_segments];
        for &s in &self.segment_ids {
            sizes[s] += 1;
        }
        sizes
    }
}

/// Spectral clustering of a self-attention map over a `width x height`
/// grid into `k` segments.
///
/// The affinity is symmetrized, the symmetric normalized Laplacian
/// `I - D^-1/2 A D^-1/2` is eigendecomposed, the `k` eigenvectors with the
/// smallest eigenvalues form a row-normalized embedding, and k-means with
/// k-means++ seeding from `seed` (8 restarts, at most 100 Lloyd steps)
/// clusters it. Nodes of zero degree become singleton segments. Segment ids
/// are numbered in order of first appearance in row-major cell order.
pub fn spectral_cluster(
    self_map: ArrayView2<'_, f32>,
    width: usize,
    height: usize,
    k: usize,
    seed: u64,
) -> Result<SegmentPartition> {
    let n = check_affinity(self_map, width, height)?;
    if k < 2 {
        return Err(Error::Invalid(format!("spectral clustering needs k >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::Invalid(format!("k = {k} exceeds {n} cells")));
    }

    let affinity = symmetrize(self_map);
    let degree: Vec<f64> = (0..n).map(|i| (0..n).map(|j| affinity[(i, j)]).sum()).collect();
    let active: Vec<usize> = (0..n).filter(|&i| degree[i] > 0.0).collect();
    let isolated: Vec<usize> = (0..n).filter(|&i| degree[i] <= 0.0).collect();

    let mut raw = vec![0usize; n];
    let mut next_id = 0;
    if !active.is_empty() {
        let clusters = k.saturating_sub(isolated.len()).max(1).min(active.len());
        let labels = if clusters == 1 {
            vec![0; active.len()]
        } else {
            let (_, vectors) = laplacian_spectrum(&affinity, &degree, &active)?;
            let embedding = spectral_embedding(&vectors, clusters);
            kmeans(&embedding, clusters, seed)
        };
        for (&node, &label) in active.iter().zip(&labels) {
            raw[node] = label;
        }
        next_id = clusters;
    }
    for &node in &isolated {
        raw[node] = next_id;
        next_id += 1;
    }

    // Canonical numbering by first appearance.
    let mut remap = vec![usize::MAX; next_id];
    let mut count = 0;
    for &r in &raw {
        if remap[r] == usize::MAX {
            remap[r] = count;
            count += 1;
        }
    }
    let ids = Array2::from_shape_fn((height, width), |(y, x)| remap[raw[y * width + x]]);
    Ok(SegmentPartition {
        width,
        height,
        segment_ids: ids,
        n_segments: count,
        foreground: Array2::from_elem((height, width), true),
    })
}

/// Number of segments suggested by the largest gap among the first ten
/// Laplacian eigenvalues (at least 2).
pub fn estimate_k(self_map: ArrayView2<'_, f32>, width: usize, height: usize) -> Result<usize> {
    let n = check_affinity(self_map, width, height)?;
    let affinity = symmetrize(self_map);
    let degree: Vec<f64> = (0..n).map(|i| (0..n).map(|j| affinity[(i, j)]).sum()).collect();
    let active: Vec<usize> = (0..n).filter(|&i| degree[i] > 0.0).collect();
    if active.len() < 3 {
        return Ok(2.min(n).max(1));
    }
    let (values, _) = laplacian_spectrum(&affinity, &degree, &active)?;
    let window = values.len().min(EIGENGAP_WINDOW);
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 0..window - 1 {
        let gap = values[i + 1] - values[i];
        if gap > best.1 {
            best = (i, gap);
        }
    }
    Ok((best.0 + 1).max(2))
}

fn check_affinity(self_map: ArrayView2<'_, f32>, width: usize, height: usize) -> Result<usize> {
    let (r, c) = self_map.dim();
    if r != c || r != width * height || r == 0 {
        return Err(Error::Shape {
            what: "self map".into(),
            message: format!("{r}x{c} for a {width}x{height} grid"),
        });
    }
    if self_map.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Invariant("affinity must be finite and non-negative".into()));
    }
    Ok(r)
}

fn symmetrize(s: ArrayView2<'_, f32>) -> DMatrix<f64> {
    let n = s.nrows();
    DMatrix::from_fn(n, n, |i, j| (s[[i, j]] as f64 + s[[j, i]] as f64) / 2.0)
}

/// Eigenvalues (ascending) and matching eigenvectors of the normalized
/// Laplacian restricted to `active` nodes.
fn laplacian_spectrum(
    affinity: &DMatrix<f64>,
    degree: &[f64],
    active: &[usize],
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let m = active.len();
    let inv_sqrt: Vec<f64> = active.iter().map(|&i| 1.0 / degree[i].sqrt()).collect();
    let laplacian = DMatrix::from_fn(m, m, |a, b| {
        let norm = inv_sqrt[a] * affinity[(active[a], active[b])] * inv_sqrt[b];
        if a == b {
            1.0 - norm
        } else {
            -norm
        }
    });
    let eig = SymmetricEigen::try_new(laplacian, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("symmetric eigensolve did not converge".into()))?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m, m, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

fn spectral_embedding(vectors: &DMatrix<f64>, k: usize) -> Vec<Vec<f64>> {
    (0..vectors.nrows())
        .map(|r| {
            let row: Vec<f64> = (0..k).map(|c| vectors[(r, c)]).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.into_iter().map(|v| v / norm).collect()
            } else {
                row
            }
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's k-means with k-means++ seeding; the restart with the lowest
/// inertia wins (earliest on ties).
fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let mut centers = kmeans_pp(points, k, &mut rng);
        let mut labels = vec![usize::MAX; points.len()];
        for _ in 0..KMEANS_MAX_ITER {
            let mut changed = false;
            for (p, label) in points.iter().zip(labels.iter_mut()) {
                let (c, _) = nearest(p, &centers);
                if *label != c {
                    *label = c;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let dim = points[0].len();
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            for (p, &l) in points.iter().zip(&labels) {
                counts[l] += 1;
                for (s, v) in sums[l].iter_mut().zip(p) {
                    *s += v;
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                }
            }
        }
        let inertia: f64 = points.iter().map(|p| nearest(p, &centers).1).sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    best.map(|(_, l)| l).unwrap_or_default()
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in dist.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let center = points[pick].clone();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &center));
        }
        centers.push(center);
    }
    centers
}

/// Cells where the class attribution exceeds the background attribution.
pub fn foreground_region(
    sc_class: ArrayView2<'_, f32>,
    sc_bg: ArrayView2<'_, f32>,
) -> Result<Array2<bool>> {
    if sc_class.dim() != sc_bg.dim() {
        return Err(Error::Shape {
            what: "foreground".into(),
            message: format!("class {:?} vs background {:?}", sc_class.dim(), sc_bg.dim()),
        });
    }
    Ok(Array2::from_shape_fn(sc_class.dim(), |ix| sc_class[ix] > sc_bg[ix]))
}

/// `(instances x segments)` matrix of mean instance attribution over the
/// foreground cells of each segment. Segments without foreground cells
/// score 0.
pub fn segment_scores(partition: &SegmentPartition, instance_maps: &[Array2<f32>]) -> Result<Array2<f64>> {
    if partition.n_segments == 0 {
        return Err(Error::Invalid("partition has no segments".into()));
    }
    let mut counts = vec![0usize; partition.n_segments];
    for (&s, &fg) in partition.segment_ids.iter().zip(&partition.foreground) {
        if fg {
            counts[s] += 1;
        }
    }
    let mut scores = Array2::<f64>::zeros((instance_maps.len(), partition.n_segments));
    for (i, map) in instance_maps.iter().enumerate() {
        if map.dim() != partition.segment_ids.dim() {
            return Err(Error::Shape {
                what: format!("instance map {i}"),
                message: format!(
                    "{:?} does not match partition {:?}",
                    map.dim(),
                    partition.segment_ids.dim()
                ),
            });
        }
        let mut sums = vec![0.0f64; partition.n_segments];
        for ((&s, &fg), &v) in partition
            .segment_ids
            .iter()
            .zip(&partition.foreground)
            .zip(map)
        {
            if fg {
                sums[s] += v as f64;
            }
        }
        for s in 0..partition.n_segments {
            if counts[s] > 0 {
                scores[[i, s]] = sums[s] / counts[s] as f64;
            }
        }
    }
    Ok(scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignMode {
    Greedy,
    Hungarian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceAssignment {
    pub instance: usize,
    pub label: String,
    /// Chosen segment ids; empty when the instance was left unmatched.
    pub segments: Vec<usize>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    pub mode: AssignMode,
    pub assignments: Vec<InstanceAssignment>,
}

impl AssignmentResult {
    pub fn total_score(&self) -> f64 {
        self.assignments.iter().map(|a| a.score).sum()
    }

    /// Replaces the default `instance<i>` labels.
    pub fn with_labels<S: AsRef<str>>(mut self, labels: &[S]) -> Self {
        for (a, l) in self.assignments.iter_mut().zip(labels) {
            a.label = l.as_ref().to_string();
        }
        self
    }

    pub fn segment_of(&self, instance: usize) -> Option<usize> {
        self.assignments
            .iter()
            .find(|a| a.instance == instance)
            .and_then(|a| a.segments.first().copied())
    }
}

fn check_scores(scores: ArrayView2<'_, f64>) -> Result<()> {
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("score matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Each instance independently takes its best segment; ties go to the lower
/// segment id. Several instances may pick the same segment.
pub fn assign_greedy(scores: ArrayView2<'_, f64>) -> Result<AssignmentResult> {
    check_scores(scores)?;
    let assignments = scores
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let best = row
                .iter()
                .enumerate()
                .fold(None::<(usize, f64)>, |acc, (s, &v)| match acc {
                    Some((_, b)) if v <= b => acc,
                    _ => Some((s, v)),
                });
            InstanceAssignment {
                instance: i,
                label: format!("instance{i}"),
                segments: best.map(|(s, _)| vec![s]).unwrap_or_default(),
                score: best.map_or(0.0, |(_, v)| v),
            }
        })
        .collect();
    Ok(AssignmentResult {
        mode: AssignMode::Greedy,
        assignments,
    })
}

/// One-to-one assignment maximizing the total score.
///
/// Runs Kuhn-Munkres on the cost `max_score - score`. Non-square matrices
/// are padded to square with cost `max real cost + 1`; instances matched to
/// padding get no segment.
pub fn assign_hungarian(scores: ArrayView2<'_, f64>) -> Result<AssignmentResult> {
    check_scores(scores)?;
    let (n, m) = scores.dim();
    if n == 0 || m == 0 {
        return Err(Error::Invalid("empty score matrix".into()));
    }
    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let cost = scores.mapv(|v| top - v);
    let pad = cost.iter().cloned().fold(0.0, f64::max) + 1.0;
    let size = n.max(m);
    let square = Array2::from_shape_fn((size, size), |(i, j)| {
        if i < n && j < m {
            cost[[i, j]]
        } else {
            pad
        }
    });
    let matched = hungarian_min(&square);
    let assignments = (0..n)
        .map(|i| {
            let j = matched[i];
            let (segments, score) = if j < m {
                (vec![j], scores[[i, j]])
            } else {
                (Vec::new(), 0.0)
            };
            InstanceAssignment {
                instance: i,
                label: format!("instance{i}"),
                segments,
                score,
            }
        })
        .collect();
    Ok(AssignmentResult {
        mode: AssignMode::Hungarian,
        assignments,
    })
}

/// Minimum-cost perfect matching of a square matrix (shortest augmenting
/// path with potentials, O(n^3)). Returns the column matched to each row.
fn hungarian_min(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    // 1-based arrays; index 0 is the virtual root column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0usize; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            col_of[row_of[j] - 1] = j - 1;
        }
    }
    col_of
}

/// For each region mask, the segment covering most of it (lowest id on
/// ties). Used to express ground-truth instance locations as segment ids.
pub fn segments_for_regions(partition: &SegmentPartition, regions: &[Array2<bool>]) -> Result<Vec<usize>> {
    regions
        .iter()
        .enumerate()
        .map(|(r, region)| {
            if region.dim() != partition.segment_ids.dim() {
                return Err(Error::Shape {
                    what: format!("region {r}"),
                    message: "does not match partition".into(),
                });
            }
            let mut overlap = vec![0usize; partition.n_segments];
            for (&s, &inside) in partition.segment_ids.iter().zip(region) {
                if inside {
                    overlap[s] += 1;
                }
            }
            let mut best = 0;
            for (s, &o) in overlap.iter().enumerate() {
                if o > overlap[best] {
                    best = s;
                }
            }
            Ok(best)
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceConfig {
    /// Segment count; `None` means instances + 1.
    pub k: Option<usize>,
    pub auto_k: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceOutcome {
    pub partition: SegmentPartition,
    pub labels: Vec<String>,
    pub scores: Array2<f64>,
    pub greedy: AssignmentResult,
    pub hungarian: AssignmentResult,
}

/// Full personalized pipeline for one scene.
///
/// `scene` is the bundle queried with the plain class prompt; it provides
/// the foreground region and the affinity for clustering. Each bundle in
/// `identifiers` was queried with one instance's identifier prompt; its
/// identifier channel is that instance's attribution map.
pub fn localize_instances(
    scene: &AttentionBundle,
    identifiers: &[AttentionBundle],
    fusion: &FusionConfig,
    config: &InstanceConfig,
) -> Result<InstanceOutcome> {
    if identifiers.is_empty() {
        return Err(Error::Invalid("no identifier bundles".into()));
    }
    let scene_sc = fuse(scene, &PromptPlan::from_manifest(&scene.token_manifest), fusion)?;
    let class_channel = scene
        .token_manifest
        .entries
        .iter()
        .find(|e| e.kind == TokenKind::Category)
        .and_then(|e| scene_sc.find(&e.label))
        .ok_or_else(|| Error::Invalid("scene manifest has no category".into()))?;
    let foreground = foreground_region(scene_sc.channel(class_channel), scene_sc.background())?;

    let (w, h) = (scene.self_width, scene.self_height);
    let k = if config.auto_k {
        estimate_k(scene.self_map.view(), w, h)?
    } else {
        config.k.unwrap_or(identifiers.len() + 1)
    };
    let partition =
        spectral_cluster(scene.self_map.view(), w, h, k, config.seed)?.with_foreground(foreground)?;

    let mut labels = Vec::with_capacity(identifiers.len());
    let mut maps = Vec::with_capacity(identifiers.len());
    for bundle in identifiers {
        let sc = fuse(bundle, &PromptPlan::from_manifest(&bundle.token_manifest), fusion)?;
        let (label, map) = identifier_map(bundle, &sc)?;
        labels.push(label);
        maps.push(map);
    }
    let scores = segment_scores(&partition, &maps)?;
    let greedy = assign_greedy(scores.view())?.with_labels(&labels);
    let hungarian = assign_hungarian(scores.view())?.with_labels(&labels);
    Ok(InstanceOutcome {
        partition,
        labels,
        scores,
        greedy,
        hungarian,
    })
}

fn identifier_map(bundle: &AttentionBundle, sc: &CorrelationMap) -> Result<(String, Array2<f32>)> {
    let entry = bundle
        .token_manifest
        .entries
        .iter()
        .find(|e| e.kind == TokenKind::Identifier)
        .ok_or_else(|| {
            Error::Invalid(format!("bundle {:?} has no identifier span", bundle.image_id))
        })?;
    let c = sc
        .find(&entry.label)
        .ok_or_else(|| Error::Invalid(format!("no channel for {:?}", entry.label)))?;
    Ok((entry.label.clone(), sc.channel(c).to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn block_affinity(sizes: &[usize], inter: f32) -> Array2<f32> {
        let n: usize = sizes.iter().sum();
        let mut block = Vec::new();
        for (b, &s) in sizes.iter().enumerate() {
            block.extend(std::iter::repeat_n(b, s));
        }
        let mut a = Array2::from_shape_fn((n, n), |(i, j)| if block[i] == block[j] { 1.0 } else { inter });
        for mut row in a.rows_mut() {
            let s: f32 = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        a
    }

    #[test]
    fn two_blocks_recovered() {
        let a = block_affinity(&[5, 3], 0.0);
        let p = spectral_cluster(a.view(), 8, 1, 2, 7).unwrap();
        let ids: Vec<usize> = p.segment_ids.iter().cloned().collect();
        assert_eq!(ids, vec![0, 0, 0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn identity_gives_singletons() {
        let a = Array2::<f32>::eye(6);
        let p = spectral_cluster(a.view(), 3, 2, 6, 1).unwrap();
        let mut ids: Vec<usize> = p.segment_ids.iter().cloned().collect();
        ids.sort();
        assert_eq!(ids, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn isolated_node_is_singleton() {
        let mut a = block_affinity(&[3, 3, 1], 0.0);
        a.row_mut(6).fill(0.0);
        let p = spectral_cluster(a.view(), 7, 1, 3, 0).unwrap();
        let ids: Vec<usize> = p.segment_ids.iter().cloned().collect();
        assert_eq!(ids, vec![0, 0, 0, 1, 1, 1, 2]);
    }

    #[test]
    fn bad_k_rejected() {
        let a = Array2::<f32>::eye(4);
        assert!(spectral_cluster(a.view(), 2, 2, 1, 0).is_err());
        assert!(spectral_cluster(a.view(), 2, 2, 5, 0).is_err());
        assert!(spectral_cluster(a.view(), 3, 2, 2, 0).is_err());
    }

    #[test]
    fn eigengap_finds_block_count() {
        let a = block_affinity(&[4, 4, 4], 0.001);
        assert_eq!(estimate_k(a.view(), 12, 1).unwrap(), 3);
    }

    #[test]
    fn foreground_examples() {
        let ones = Array2::from_elem((2, 2), 1.0f32);
        let zeros = Array2::from_elem((2, 2), 0.0f32);
        assert!(foreground_region(ones.view(), zeros.view()).unwrap().iter().all(|&f| f));
        assert!(foreground_region(zeros.view(), zeros.view()).unwrap().iter().all(|&f| !f));
        let class = array![[0.2f32, 0.8], [0.5, 0.1]];
        let bg = array![[0.3f32, 0.1], [0.5, 0.0]];
        let fg = foreground_region(class.view(), bg.view()).unwrap();
        assert_eq!(fg, array![[false, true], [false, true]]);
    }

    fn partition(ids: Array2<usize>, n: usize, fg: Array2<bool>) -> SegmentPartition {
        SegmentPartition {
            width: ids.ncols(),
            height: ids.nrows(),
            segment_ids: ids,
            n_segments: n,
            foreground: fg,
        }
    }

    #[test]
    fn scores_over_foreground() {
        let p = partition(
            array![[0, 0], [1, 1]],
            3,
            array![[true, false], [true, true]],
        );
        let map = array![[0.4f32, 1.0], [0.2, 0.6]];
        let s = segment_scores(&p, &[map, Array2::zeros((2, 2))]).unwrap();
        assert!((s[[0, 0]] - 0.4).abs() < 1e-7);
        assert!((s[[0, 1]] - 0.4).abs() < 1e-7);
        assert_eq!(s[[0, 2]], 0.0);
        assert!(s.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_segment_score_is_mean() {
        let p = partition(Array2::zeros((2, 2)), 1, Array2::from_elem((2, 2), true));
        let map = array![[0.1f32, 0.2], [0.3, 0.6]];
        let s = segment_scores(&p, &[map]).unwrap();
        assert!((s[[0, 0]] - 0.3).abs() < 1e-7);
    }

    #[test]
    fn empty_partition_rejected() {
        let p = partition(Array2::zeros((0, 0)), 0, Array2::from_elem((0, 0), true));
        assert!(segment_scores(&p, &[]).is_err());
    }

    #[test]
    fn greedy_collides_hungarian_resolves() {
        let s = array![[0.9, 0.1], [0.8, 0.2]];
        let g = assign_greedy(s.view()).unwrap();
        assert_eq!(g.segment_of(0), Some(0));
        assert_eq!(g.segment_of(1), Some(0));
        let h = assign_hungarian(s.view()).unwrap();
        assert_eq!(h.segment_of(0), Some(0));
        assert_eq!(h.segment_of(1), Some(1));
        assert!((h.total_score() - 1.1).abs() < 1e-12);
    }

    #[test]
    fn diagonal_dominant() {
        let s = array![[0.9, 0.1, 0.0], [0.1, 0.8, 0.2], [0.0, 0.3, 0.7]];
        for r in [assign_greedy(s.view()).unwrap(), assign_hungarian(s.view()).unwrap()] {
            for i in 0..3 {
                assert_eq!(r.segment_of(i), Some(i));
            }
        }
    }

    #[test]
    fn greedy_tie_takes_lower_segment() {
        let s = array![[0.5, 0.5]];
        assert_eq!(assign_greedy(s.view()).unwrap().segment_of(0), Some(0));
    }

    #[test]
    fn all_equal_scores() {
        let s = Array2::from_elem((3, 3), 0.4);
        let h = assign_hungarian(s.view()).unwrap();
        assert!((h.total_score() - 1.2).abs() < 1e-12);
        let mut segs: Vec<usize> = (0..3).map(|i| h.segment_of(i).unwrap()).collect();
        segs.sort();
        assert_eq!(segs, vec![0, 1, 2]);
    }

    #[test]
    fn more_instances_than_segments() {
        let s = array![[0.9], [0.5]];
        let h = assign_hungarian(s.view()).unwrap();
        assert_eq!(h.segment_of(0), Some(0));
        assert_eq!(h.segment_of(1), None);
    }

    #[test]
    fn empty_matrix_rejected() {
        let s = Array2::<f64>::zeros((0, 3));
        assert!(assign_hungarian(s.view()).is_err());
    }

    #[test]
    fn majority_segment_per_region() {
        let p = partition(array![[0, 1, 1], [0, 2, 2]], 3, Array2::from_elem((2, 3), true));
        let region = array![[false, true, true], [false, true, false]];
        assert_eq!(segments_for_regions(&p, &[region]).unwrap(), vec![1]);
    }
}
