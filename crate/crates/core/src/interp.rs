//! Corner-aligned bilinear resampling of 2-D grids.
//!
//! Output sample `i` of `n_out` maps to source coordinate
//! `i * (n_in - 1) / (n_out - 1)`, so the first and last samples of both
//! grids coincide. A single-sample axis maps everything to source index 0.

use ndarray::{Array2, ArrayView2};

#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(n_in: usize, n_out: usize) -> Vec<Tap> {
    (0..n_out)
        .map(|i| {
            if n_in == 1 || n_out == 1 {
                return Tap {
                    lo: 0,
                    hi: 0,
                    frac: 0.0,
                };
            }
            let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
            let lo = (pos.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            Tap {
                lo,
                hi,
                frac: pos - lo as f64,
            }
        })
        .collect()
}

/// Resamples `src` (rows = y, cols = x) to `out_h x out_w`, accumulating
/// in f64.
pub fn resize_bilinear(src: ArrayView2<'_, f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let (in_h, in_w) = src.dim();
    if (in_h, in_w) == (out_h, out_w) {
        return src.to_owned();
    }
    let ys = taps(in_h, out_h);
    let xs = taps(in_w, out_w);
    Array2::from_shape_fn((out_h, out_w), |(y, x)| {
        let ty = ys[y];
        let tx = xs[x];
        let top = lerp(src[[ty.lo, tx.lo]], src[[ty.lo, tx.hi]], tx.frac);
        let bottom = lerp(src[[ty.hi, tx.lo]], src[[ty.hi, tx.hi]], tx.frac);
        (top + (bottom - top) * ty.frac) as f32
    })
}

fn lerp(a: f32, b: f32, t: f64) -> f64 {
    let a = a as f64;
    a + (b as f64 - a) * t
}
