use super::Tensor;
use crate::error::{Error, Result};

/// Source sample for one output coordinate: lower index, upper index, weight of upper.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Linear-interpolation taps mapping `out_len` samples onto `in_len`.
///
/// `align_corners = true` pins the first and last samples to the first and
/// last source samples; otherwise sample centres are aligned (half-pixel).
pub(crate) fn linear_taps(in_len: usize, out_len: usize, align_corners: bool) -> Vec<Tap> {
    (0..out_len)
        .map(|i| {
            let src = if align_corners {
                if out_len > 1 {
                    i as f64 * (in_len - 1) as f64 / (out_len - 1) as f64
                } else {
                    0.0
                }
            } else {
                let scale = in_len as f64 / out_len as f64;
                ((i as f64 + 0.5) * scale - 0.5).max(0.0)
            };
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            Tap { lo, hi, frac }
        })
        .collect()
}

/// Bilinear resampling of a rank-4 tensor to `out_h × out_w`.
pub fn bilinear_resize(
    input: &Tensor,
    out_h: usize,
    out_w: usize,
    align_corners: bool,
) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!(
            "bilinear_resize: zero output extent {out_h}x{out_w}"
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::shape("bilinear_resize: zero input extent"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(input.clone());
    }
    let ty = linear_taps(h, out_h, align_corners);
    let tx = linear_taps(w, out_w, align_corners);
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in input.data().chunks_exact(h * w) {
        for t in &ty {
            let r0 = &plane[t.lo * w..][..w];
            let r1 = &plane[t.hi * w..][..w];
            for s in &tx {
                let top = r0[s.lo] as f64 * (1.0 - s.frac) + r0[s.hi] as f64 * s.frac;
                let bot = r1[s.lo] as f64 * (1.0 - s.frac) + r1[s.hi] as f64 * s.frac;
                out.push((top * (1.0 - t.frac) + bot * t.frac) as f32);
            }
        }
    }
    Tensor::new(&[n, c, out_h, out_w], out)
}

/// Linear resampling of a `(len, dim)` row-major sequence along its first axis.
pub fn resize_sequence(rows: &[f32], dim: usize, target_len: usize) -> Result<Vec<f32>> {
    if dim == 0 || rows.len() % dim != 0 || rows.is_empty() {
        return Err(Error::shape(format!(
            "sequence of {} values is not a nonempty multiple of dim {dim}",
            rows.len()
        )));
    }
    if target_len == 0 {
        return Err(Error::invalid("resize_sequence: target length must be positive"));
    }
    let len = rows.len() / dim;
    if len == target_len {
        return Ok(rows.to_vec());
    }
    let taps = linear_taps(len, target_len, false);
    let mut out = Vec::with_capacity(target_len * dim);
    for t in taps {
        let a = &rows[t.lo * dim..][..dim];
        let b = &rows[t.hi * dim..][..dim];
        out.extend(
            a.iter()
                .zip(b)
                .map(|(&x, &y)| (x as f64 * (1.0 - t.frac) + y as f64 * t.frac) as f32),
        );
    }
    Ok(out)
}
