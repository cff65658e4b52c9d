use crate::error::{Error, Result};
use crate::numerics::{layer_norm, Tensor};

/// Floor on the norm in [`unit_project`].
pub const UNIT_PROJECT_EPS: f64 = 1e-6;

/// `v / max(‖v‖₂, ε)`: unit-L2 projection that is exactly invariant to
/// positive rescaling of `v` whenever `‖v‖₂ ≥ ε`.
pub fn unit_project(v: &[f32]) -> Vec<f32> {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    let denom = norm.max(UNIT_PROJECT_EPS);
    v.iter().map(|&x| (x as f64 / denom) as f32).collect()
}

/// `LayerNorm(x ⊙ N(r) + N(b))` over channels, with the block's own affine
/// `gamma`/`beta`.
pub fn adaptive_layer_norm(
    x: &Tensor,
    r: &[f32],
    b: &[f32],
    gamma: &Tensor,
    beta: &Tensor,
    eps: f32,
) -> Result<Tensor> {
    let (_, c, h, w) = x.dims4()?;
    if r.len() != c || b.len() != c {
        return Err(Error::shape(format!(
            "adaptive_layer_norm: {c} channels but r/b lengths {}/{}",
            r.len(),
            b.len()
        )));
    }
    let nr = unit_project(r);
    let nb = unit_project(b);
    let area = h * w;
    let mut shifted = x.data().to_vec();
    for (i, plane) in shifted.chunks_exact_mut(area).enumerate() {
        let ci = i % c;
        let (s, o) = (nr[ci] as f64, nb[ci] as f64);
        for v in plane {
            *v = (*v as f64 * s + o) as f32;
        }
    }
    layer_norm(&Tensor::new(x.shape(), shifted)?, gamma, beta, eps)
}

/// Repeat `v` cyclically (or truncate it) to length `n`.
pub fn project_to_width(v: &[f32], n: usize) -> Vec<f32> {
    (0..n).map(|i| v[i % v.len()]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_is_unit_and_scale_free() {
        let v = [3.0, 4.0];
        assert_eq!(unit_project(&v), vec![0.6, 0.8]);
        assert_eq!(unit_project(&[30.0, 40.0]), vec![0.6, 0.8]);
        assert_eq!(unit_project(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn constant_location_normalizes_to_zero() {
        let x = Tensor::full(&[1, 3, 2, 2], 1.5);
        let y = adaptive_layer_norm(
            &x,
            &[1.0, 1.0, 1.0],
            &[0.0, 0.0, 0.0],
            &Tensor::full(&[3], 1.0),
            &Tensor::zeros(&[3]),
            1e-5,
        )
        .unwrap();
        assert!(y.data().iter().all(|&v| v.abs() < 1e-6));
    }

    #[test]
    fn width_projection() {
        assert_eq!(project_to_width(&[1.0, 2.0], 5), vec![1.0, 2.0, 1.0, 2.0, 1.0]);
        assert_eq!(project_to_width(&[1.0, 2.0, 3.0], 2), vec![1.0, 2.0]);
    }
}
