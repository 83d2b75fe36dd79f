//! Corner-anchored bilinear resampling.
//!
//! Output pixel `i` of an axis of length `out` samples the source at
//! `i * (in - 1) / (out - 1)`, so the first and last output pixels coincide
//! with the first and last source pixels. A length-1 output axis samples the
//! source midpoint.

use crate::tensor::Tensor2;

#[derive(Clone, Copy, Debug)]
struct AxisSample {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn axis_samples(input: usize, output: usize) -> Vec<AxisSample> {
    (0..output)
        .map(|i| {
            let pos = if output == 1 {
                (input - 1) as f64 / 2.0
            } else {
                (i * (input - 1)) as f64 / (output - 1) as f64
            };
            let lo = (pos.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            AxisSample {
                lo,
                hi,
                frac: pos - lo as f64,
            }
        })
        .collect()
}

/// Resamples `src` to `out_rows × out_cols`. Both output dimensions must be ≥ 1.
pub fn bilinear(src: &Tensor2, out_rows: usize, out_cols: usize) -> Tensor2 {
    assert!(
        out_rows > 0 && out_cols > 0,
        "output dimensions must be positive"
    );
    if src.shape() == (out_rows, out_cols) {
        return src.clone();
    }
    let ys = axis_samples(src.rows(), out_rows);
    let xs = axis_samples(src.cols(), out_cols);
    let mut data = Vec::with_capacity(out_rows * out_cols);
    for y in &ys {
        for x in &xs {
            let top = (1.0 - x.frac) * src.get(y.lo, x.lo) + x.frac * src.get(y.lo, x.hi);
            let bottom = (1.0 - x.frac) * src.get(y.hi, x.lo) + x.frac * src.get(y.hi, x.hi);
            data.push((1.0 - y.frac) * top + y.frac * bottom);
        }
    }
    Tensor2::new(out_rows, out_cols, data).expect("dimensions are positive")
}
