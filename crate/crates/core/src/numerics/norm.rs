use super::Tensor;
use crate::error::{Error, Result};

/// Layer normalization over the channel axis at every spatial location of a
/// rank-4 tensor, followed by a per-channel affine transform.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(format!(
            "layer_norm: channels {c} but gamma/beta lengths {}/{}",
            gamma.len(),
            beta.len()
        )));
    }
    let area = h * w;
    let (g, b) = (gamma.data(), beta.data());
    let src = x.data();
    let mut out = vec![0.0f32; src.len()];
    for ni in 0..n {
        let base = ni * c * area;
        for p in 0..area {
            let at = |ci: usize| base + ci * area + p;
            let mean = (0..c).map(|ci| src[at(ci)] as f64).sum::<f64>() / c as f64;
            let var = (0..c)
                .map(|ci| {
                    let d = src[at(ci)] as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / c as f64;
            let inv = 1.0 / (var + eps as f64).sqrt();
            for ci in 0..c {
                let z = (src[at(ci)] as f64 - mean) * inv;
                out[at(ci)] = (z * g[ci] as f64 + b[ci] as f64) as f32;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

/// Inference-mode batch normalization with stored running statistics.
pub fn batch_norm(
    x: &Tensor,
    mean: &Tensor,
    var: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f32,
) -> Result<Tensor> {
    let (_, c, h, w) = x.dims4()?;
    for (name, t) in [("mean", mean), ("var", var), ("gamma", gamma), ("beta", beta)] {
        if t.len() != c {
            return Err(Error::shape(format!(
                "batch_norm: {name} has length {} but input has {c} channels",
                t.len()
            )));
        }
    }
    if var.data().iter().any(|&v| !(v + eps > 0.0) || !v.is_finite()) {
        return Err(Error::invalid("batch_norm: running variance must be finite and var + eps > 0"));
    }
    let area = h * w;
    let mut out = x.data().to_vec();
    for (i, plane) in out.chunks_exact_mut(area).enumerate() {
        let ci = i % c;
        let scale = gamma.data()[ci] as f64 / (var.data()[ci] as f64 + eps as f64).sqrt();
        let m = mean.data()[ci] as f64;
        let b = beta.data()[ci] as f64;
        for v in plane {
            *v = ((*v as f64 - m) * scale + b) as f32;
        }
    }
    Tensor::new(x.shape(), out)
}
