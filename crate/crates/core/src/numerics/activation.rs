//! Scalar activations. Tensor versions go through [`Tensor::map`].

/// Negative slope used wherever the model applies LeakyReLU.
pub const LEAKY_SLOPE: f32 = 0.01;

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    (1.0 / (1.0 + (-(x as f64)).exp())) as f32
}

#[inline]
pub fn relu(x: f32) -> f32 {
    x.max(0.0)
}

#[inline]
pub fn leaky_relu(x: f32, slope: f32) -> f32 {
    if x >= 0.0 {
        x
    } else {
        x * slope
    }
}

#[inline]
pub fn tanh(x: f32) -> f32 {
    x.tanh()
}

/// `ln(1 + e^x)`, evaluated without overflow for large `x`.
#[inline]
pub fn softplus(x: f32) -> f32 {
    let x = x as f64;
    (x.max(0.0) + (-x.abs()).exp().ln_1p()) as f32
}

/// Tanh approximation of GELU, `0.5·x·(1 + tanh(u))`, evaluated as the
/// equivalent `x·σ(2u)`.
#[inline]
pub fn gelu(x: f32) -> f32 {
    let x = x as f64;
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let u = C * (x + 0.044_715 * x * x * x);
    (x / (1.0 + (-2.0 * u).exp())) as f32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_points() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(relu(-3.0), 0.0);
        assert_eq!(relu(3.0), 3.0);
        assert!((leaky_relu(-2.0, 0.01) + 0.02).abs() < 1e-9);
        assert!((softplus(0.0) - std::f32::consts::LN_2).abs() < 1e-7);
        assert_eq!(softplus(200.0), 200.0);
        assert_eq!(gelu(0.0), 0.0);
        assert_eq!(tanh(0.0), 0.0);
    }
}
