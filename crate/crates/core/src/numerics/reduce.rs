use super::Tensor;
use crate::error::{Error, Result};

/// Softmax over the last axis with max subtraction.
pub fn softmax_lastdim(x: &Tensor) -> Tensor {
    let n = *x.shape().last().unwrap();
    let mut out = x.data().to_vec();
    if n > 0 {
        for row in out.chunks_exact_mut(n) {
            softmax_in_place(row);
        }
    }
    Tensor::new(x.shape(), out).expect("shape preserved")
}

fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    for (r, e) in row.iter_mut().zip(exps) {
        *r = (e / sum) as f32;
    }
}

/// Index used by the nearest-rank quantile: `clamp(ceil(q * n) - 1, 0, n - 1)`.
pub fn nearest_rank_index(n: usize, q: f64) -> usize {
    let rank = (q * n as f64).ceil() as i64 - 1;
    rank.clamp(0, n as i64 - 1) as usize
}

/// Nearest-rank quantile of all values in `values`.
pub fn quantile(values: &Tensor, q: f64) -> Result<f32> {
    if values.is_empty() {
        return Err(Error::invalid("quantile of empty input"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("quantile level {q} outside [0, 1]")));
    }
    let mut sorted = values.data().to_vec();
    sorted.sort_by(f32::total_cmp);
    Ok(sorted[nearest_rank_index(sorted.len(), q)])
}
