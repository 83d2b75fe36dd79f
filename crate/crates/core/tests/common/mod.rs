//! Test-only generators and brute-force oracles. Nothing here calls into the
//! implementation paths it is used to check.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rationality_eval::metrics::GroundTruthMask;
use rationality_eval::{Heatmap, Tensor2, Tensor3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Row-stochastic attention via per-row softmax of random logits.
pub fn random_attention(rng: &mut impl Rng, heads: usize, tokens: usize) -> Tensor3 {
    let mut data = Vec::with_capacity(heads * tokens * tokens);
    for _ in 0..heads * tokens {
        let logits: Vec<f64> = (0..tokens).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let exps: Vec<f64> = logits.iter().map(|l: &f64| l.exp()).collect();
        let sum: f64 = exps.iter().sum();
        data.extend(exps.iter().map(|e| e / sum));
    }
    Tensor3::new(heads, tokens, tokens, data).unwrap()
}

pub fn random_gradient(rng: &mut impl Rng, heads: usize, tokens: usize) -> Tensor3 {
    let data = (0..heads * tokens * tokens)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    Tensor3::new(heads, tokens, tokens, data).unwrap()
}

/// `mean_h max(0, g·a)` as a plain triple loop.
pub fn relevance_oracle(a: &Tensor3, g: &Tensor3) -> Vec<Vec<f64>> {
    let (heads, rows, cols) = a.shape();
    let mut out = vec![vec![0.0; cols]; rows];
    for (i, out_row) in out.iter_mut().enumerate() {
        for (j, cell) in out_row.iter_mut().enumerate() {
            let mut total = 0.0;
            for h in 0..heads {
                let p = g.get(h, i, j) * a.get(h, i, j);
                if p > 0.0 {
                    total += p;
                }
            }
            *cell = total / heads as f64;
        }
    }
    out
}

/// `mean_h max(0, g)` as a plain triple loop.
pub fn grad_only_oracle(g: &Tensor3) -> Vec<Vec<f64>> {
    let (heads, rows, cols) = g.shape();
    let mut out = vec![vec![0.0; cols]; rows];
    for (i, out_row) in out.iter_mut().enumerate() {
        for (j, cell) in out_row.iter_mut().enumerate() {
            let mut total = 0.0;
            for h in 0..heads {
                if g.get(h, i, j) > 0.0 {
                    total += g.get(h, i, j);
                }
            }
            *cell = total / heads as f64;
        }
    }
    out
}

/// Corner-anchored bilinear resampling written as a tent-kernel sum over
/// every source pixel.
pub fn bilinear_oracle(src: &[Vec<f64>], out_rows: usize, out_cols: usize) -> Vec<Vec<f64>> {
    let (in_rows, in_cols) = (src.len(), src[0].len());
    let coord = |i: usize, n_in: usize, n_out: usize| -> f64 {
        if n_out == 1 {
            (n_in as f64 - 1.0) / 2.0
        } else {
            i as f64 * (n_in as f64 - 1.0) / (n_out as f64 - 1.0)
        }
    };
    let tent = |d: f64| (1.0 - d.abs()).max(0.0);
    let mut out = vec![vec![0.0; out_cols]; out_rows];
    for (i, row) in out.iter_mut().enumerate() {
        let y = coord(i, in_rows, out_rows);
        for (j, cell) in row.iter_mut().enumerate() {
            let x = coord(j, in_cols, out_cols);
            let mut v = 0.0;
            for (r, src_row) in src.iter().enumerate() {
                for (c, &s) in src_row.iter().enumerate() {
                    v += tent(y - r as f64) * tent(x - c as f64) * s;
                }
            }
            *cell = v;
        }
    }
    out
}

/// Random heatmap/mask pair of the given size. Heatmaps mix exact zeros
/// with wide-dynamic-range positive values.
pub fn random_pair(rng: &mut impl Rng, rows: usize, cols: usize) -> (Heatmap, GroundTruthMask) {
    let heat: Vec<f64> = (0..rows * cols)
        .map(|_| {
            if rng.gen_bool(0.15) {
                0.0
            } else {
                rng.gen::<f64>() * 10f64.powi(rng.gen_range(-3..3))
            }
        })
        .collect();
    let density = rng.gen_range(0.0..1.0);
    let mask: Vec<f64> = (0..rows * cols)
        .map(|_| if rng.gen_bool(density) { 1.0 } else { 0.0 })
        .collect();
    (
        Heatmap::new(Tensor2::new(rows, cols, heat).unwrap()).unwrap(),
        GroundTruthMask::new(Tensor2::new(rows, cols, mask).unwrap()).unwrap(),
    )
}

pub fn random_dims(rng: &mut impl Rng, max: usize) -> (usize, usize) {
    (rng.gen_range(1..=max), rng.gen_range(1..=max))
}

/// Independent RMA written with explicit index arithmetic.
pub fn rma_oracle(h: &Heatmap, m: &GroundTruthMask) -> f64 {
    let (rows, cols) = h.shape();
    let (hd, md) = (h.values().data(), m.values().data());
    let mut num = 0.0;
    let mut den = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let k = r * cols + c;
            num += hd[k] * md[k];
            den += hd[k];
        }
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn to_rows(t: &Tensor2) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &Tensor2) -> f64 {
    assert_eq!((a.len(), a[0].len()), b.shape());
    a.iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, &v)| (i, j, v)))
        .map(|(i, j, v)| (v - b.get(i, j)).abs())
        .fold(0.0, f64::max)
}
