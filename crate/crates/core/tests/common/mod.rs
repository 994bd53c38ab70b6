#![allow(dead_code)]

use std::collections::BTreeMap;

use attnseg::tensor_store::{
    AttentionBundle, CrossLayer, TokenEntry, TokenKind, TokenManifest, TokenSpan,
};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random matrix with positive entries and rows summing to one.
pub fn stochastic(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f32> {
    let mut m = Array2::<f64>::from_shape_fn((rows, cols), |_| rng.random::<f64>() + 1e-3);
    for mut row in m.rows_mut() {
        let s: f64 = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    m.mapv(|v| v as f32)
}

/// Bundle over a `w x h` grid with one single-token category per label.
/// Token 0 is `other`, categories follow, the last token is `other`.
pub fn random_bundle(rng: &mut ChaCha8Rng, w: usize, h: usize, labels: &[&str], layers: &[u32]) -> AttentionBundle {
    let tokens = labels.len() + 2;
    let mut entries = vec![TokenEntry::new("a", TokenKind::Other, TokenSpan::single(0))];
    let mut class_ids = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        entries.push(TokenEntry::new(*l, TokenKind::Category, TokenSpan::single(i + 1)));
        class_ids.insert(l.to_string(), (i + 1) as u8);
    }
    entries.push(TokenEntry::new(".", TokenKind::Other, TokenSpan::single(tokens - 1)));
    let cross_layers = layers
        .iter()
        .map(|&layer_index| CrossLayer {
            layer_index,
            width: w,
            height: h,
            tokens,
            data: stochastic(rng, w * h, tokens),
        })
        .collect();
    AttentionBundle {
        image_id: "random".into(),
        image_width: w as u32,
        image_height: h as u32,
        cross_layers,
        self_map: stochastic(rng, w * h, w * h),
        self_width: w,
        self_height: h,
        token_manifest: TokenManifest {
            prompt_text: String::new(),
            entries,
            class_ids,
        },
        sample_index: 0,
        timestep: 150,
        extraction_note: None,
    }
}

/// Row-normalized block-diagonal affinity with `inter` between blocks.
pub fn block_affinity(sizes: &[usize], inter: f32) -> (Array2<f32>, Vec<usize>) {
    let mut block = Vec::new();
    for (b, &s) in sizes.iter().enumerate() {
        block.extend(std::iter::repeat_n(b, s));
    }
    let n = block.len();
    let mut a = Array2::from_shape_fn((n, n), |(i, j)| if block[i] == block[j] { 1.0f32 } else { inter });
    for mut row in a.rows_mut() {
        let s: f32 = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    (a, block)
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let mut table: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut ra: BTreeMap<usize, f64> = BTreeMap::new();
    let mut rb: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *ra.entry(x).or_default() += 1.0;
        *rb.entry(y).or_default() += 1.0;
    }
    let c2 = |v: f64| v * (v - 1.0) / 2.0;
    let index: f64 = table.values().map(|&v| c2(v)).sum();
    let sa: f64 = ra.values().map(|&v| c2(v)).sum();
    let sb: f64 = rb.values().map(|&v| c2(v)).sum();
    let expected = sa * sb / c2(n);
    let max = (sa + sb) / 2.0;
    if (max - expected).abs() < 1e-12 {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Best total over all injective maps of rows into columns (rows <= cols),
/// summed left to right in row order.
pub fn brute_force_max(scores: &Array2<f64>) -> f64 {
    let (n, m) = scores.dim();
    assert!(n <= m);
    fn go(row: usize, acc: f64, scores: &Array2<f64>, used: &mut [bool]) -> f64 {
        if row == scores.nrows() {
            return acc;
        }
        let mut best = f64::NEG_INFINITY;
        for c in 0..scores.ncols() {
            if !used[c] {
                used[c] = true;
                best = best.max(go(row + 1, acc + scores[[row, c]], scores, used));
                used[c] = false;
            }
        }
        best
    }
    go(0, 0.0, scores, &mut vec![false; m])
}
