//! Atmospheric parameter estimator.
//!
//! A small convolutional branch predicts a dark-channel map `D̂`; the
//! brightest-`D̂` pixels give the atmospheric light `A`; a fusion branch over
//! `image ⊕ D̂` produces a feature vector `f`, and a constrained MLP over
//! `f ⊕ A` yields the normalization factors `r`, `b` and the scattering
//! coefficient `c_a`. Transmission follows as `t = 1 − c_a·D̂`.
//!
//! Output heads are bounded: `c_a` through a sigmoid, `r` through softplus
//! (strictly positive) and `b` through tanh. Values are clamped into the open
//! intervals so that `f32` saturation never produces a closed endpoint.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{conv2d_f64, linear_f64, nearest_rank_index, Tensor};
use crate::weights::{ParamSpec, WeightStore};

const OPEN_UPPER: f64 = 1.0 - f32::EPSILON as f64 / 2.0;
const OPEN_LOWER: f64 = f32::MIN_POSITIVE as f64;

fn open_unit(v: f64) -> f64 {
    v.clamp(OPEN_LOWER, OPEN_UPPER)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn leaky(x: f64, slope: f32) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x * slope as f64
    }
}

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Scattering coefficient, one value per image or one per pixel.
#[derive(Debug, Clone, PartialEq)]
pub enum ScatteringCoeff {
    Scalar(f32),
    Map(Tensor),
}

impl ScatteringCoeff {
    pub fn mean(&self) -> f32 {
        match self {
            ScatteringCoeff::Scalar(v) => *v,
            ScatteringCoeff::Map(t) => t.mean() as f32,
        }
    }
}

/// Everything the estimator produces for one image.
///
/// The transmission map is derived from `dark_channel` and `c_a` at
/// construction and cannot be set independently.
#[derive(Debug, Clone, PartialEq)]
pub struct AtmosphericParams {
    dark_channel: Tensor,
    atmospheric_light: [f32; 3],
    r: Vec<f32>,
    b: Vec<f32>,
    c_a: ScatteringCoeff,
    transmission: Tensor,
    transmission_f64: Vec<f64>,
}

impl AtmosphericParams {
    pub fn new(
        dark_channel: Tensor,
        atmospheric_light: [f32; 3],
        r: Vec<f32>,
        b: Vec<f32>,
        c_a: ScatteringCoeff,
    ) -> Result<Self> {
        if r.len() != b.len() || r.is_empty() {
            return Err(Error::shape(format!(
                "r and b must be nonempty and equal length, got {} and {}",
                r.len(),
                b.len()
            )));
        }
        let transmission_f64 = transmission_values(&to_f64(&dark_channel), &c_a)?;
        let transmission = Tensor::new(dark_channel.shape(), to_f32(&transmission_f64))?;
        Ok(Self {
            dark_channel,
            atmospheric_light,
            r,
            b,
            c_a,
            transmission,
            transmission_f64,
        })
    }

    pub fn dark_channel(&self) -> &Tensor {
        &self.dark_channel
    }

    pub fn atmospheric_light(&self) -> [f32; 3] {
        self.atmospheric_light
    }

    pub fn r(&self) -> &[f32] {
        &self.r
    }

    pub fn b(&self) -> &[f32] {
        &self.b
    }

    pub fn c_a(&self) -> &ScatteringCoeff {
        &self.c_a
    }

    pub fn c_a_mean(&self) -> f32 {
        self.c_a.mean()
    }

    pub fn transmission(&self) -> &Tensor {
        &self.transmission
    }

    /// The transmission map before rounding to `f32`. For estimator output it
    /// is computed from the unrounded dark channel and coefficient.
    pub fn transmission_f64(&self) -> &[f64] {
        &self.transmission_f64
    }
}

/// Learnable tensors of the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorWeights {
    pub dark_conv5_w: Tensor,
    pub dark_conv5_b: Tensor,
    pub dark_conv3_w: Tensor,
    pub dark_conv3_b: Tensor,
    pub fuse_conv5_w: Tensor,
    pub fuse_conv5_b: Tensor,
    pub fuse_conv3_w: Tensor,
    pub fuse_conv3_b: Tensor,
    pub mlp_fc1_w: Tensor,
    pub mlp_fc1_b: Tensor,
    pub mlp_fc2_w: Tensor,
    pub mlp_fc2_b: Tensor,
    pub mlp_head_w: Tensor,
    pub mlp_head_b: Tensor,
}

/// Hidden width of the physical MLP for feature length `d`.
pub fn mlp_hidden(feature_dim: usize) -> usize {
    2 * (feature_dim + 3)
}

impl EstimatorWeights {
    pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
        let e = cfg.estimator_channels;
        let d = cfg.feature_dim;
        let hidden = mlp_hidden(d);
        let mut v = Vec::new();
        v.extend(ParamSpec::conv("estimator.dark.conv5", e, 3, 5));
        v.extend(ParamSpec::conv("estimator.dark.conv3", 1, e, 3));
        v.extend(ParamSpec::conv("estimator.fuse.conv5", e, 4, 5));
        v.extend(ParamSpec::conv("estimator.fuse.conv3", d, e, 3));
        v.extend(ParamSpec::linear("estimator.mlp.fc1", hidden, d + 3));
        v.extend(ParamSpec::linear("estimator.mlp.fc2", hidden, hidden));
        v.extend(ParamSpec::linear("estimator.mlp.head", 2 * cfg.channels + 1, hidden));
        v
    }

    pub fn from_store(store: &WeightStore, cfg: &ModelConfig) -> Result<Self> {
        let specs = Self::param_specs(cfg);
        let mut t = specs
            .iter()
            .map(|s| store.require(&s.name, &s.shape))
            .collect::<Result<Vec<_>>>()?
            .into_iter();
        let mut next = || t.next().expect("spec count");
        Ok(Self {
            dark_conv5_w: next(),
            dark_conv5_b: next(),
            dark_conv3_w: next(),
            dark_conv3_b: next(),
            fuse_conv5_w: next(),
            fuse_conv5_b: next(),
            fuse_conv3_w: next(),
            fuse_conv3_b: next(),
            mlp_fc1_w: next(),
            mlp_fc1_b: next(),
            mlp_fc2_w: next(),
            mlp_fc2_b: next(),
            mlp_head_w: next(),
            mlp_head_b: next(),
        })
    }

    /// Width of `r` and `b` produced by the head.
    pub fn norm_channels(&self) -> usize {
        (self.mlp_head_w.shape()[0] - 1) / 2
    }
}

/// Estimator hyperparameters that are not weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorOptions {
    pub q_a: f64,
    pub leaky_slope: f32,
}

impl From<&ModelConfig> for EstimatorOptions {
    fn from(cfg: &ModelConfig) -> Self {
        Self {
            q_a: cfg.q_a,
            leaky_slope: cfg.leaky_slope,
        }
    }
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        (&ModelConfig::default()).into()
    }
}

fn check_rgb(image: &Tensor) -> Result<(usize, usize)> {
    let (n, c, h, w) = image.dims4()?;
    if n != 1 || c != 3 {
        return Err(Error::shape(format!(
            "estimator expects a 1x3xHxW image, got {:?}",
            image.shape()
        )));
    }
    Ok((h, w))
}

fn check_dark(dark: &Tensor, h: usize, w: usize) -> Result<()> {
    if dark.dims4()? != (1, 1, h, w) {
        return Err(Error::shape(format!(
            "dark channel {:?} does not match image extents {h}x{w}",
            dark.shape()
        )));
    }
    Ok(())
}

// The estimator runs in f64 end to end so the transmission map is smooth in
// the input to well below f32 resolution; public entry points round once.

fn dark_f64(img: &[f64], h: usize, w: usize, wt: &EstimatorWeights) -> Result<Vec<f64>> {
    let (h1, d1) = conv2d_f64(img, [1, 3, h, w], &wt.dark_conv5_w, Some(&wt.dark_conv5_b), 1, 2)?;
    let h1: Vec<f64> = h1.into_iter().map(|v| v.max(0.0)).collect();
    let (logits, _) = conv2d_f64(&h1, d1, &wt.dark_conv3_w, Some(&wt.dark_conv3_b), 1, 1)?;
    if logits.len() != h * w {
        return Err(Error::shape("dark-channel head must emit one channel"));
    }
    Ok(logits.into_iter().map(|v| open_unit(sigmoid(v))).collect())
}

fn light_f64(img: &[f64], dark: &[f64], q_a: f64) -> Result<[f64; 3]> {
    if dark.is_empty() {
        return Err(Error::invalid("atmospheric light of an empty image"));
    }
    if !(0.0..=1.0).contains(&q_a) {
        return Err(Error::invalid(format!("quantile level {q_a} outside [0, 1]")));
    }
    let mut sorted = dark.to_vec();
    sorted.sort_by(f64::total_cmp);
    let threshold = sorted[nearest_rank_index(sorted.len(), q_a)];
    let area = dark.len();
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    for (p, &d) in dark.iter().enumerate() {
        if d >= threshold {
            for (c, s) in sum.iter_mut().enumerate() {
                *s += img[c * area + p];
            }
            count += 1;
        }
    }
    // The threshold is itself a sample, so `count >= 1`.
    Ok(sum.map(|s| s / count as f64))
}

fn fuse_f64(
    img: &[f64],
    dark: &[f64],
    h: usize,
    w: usize,
    wt: &EstimatorWeights,
    slope: f32,
) -> Result<Vec<f64>> {
    let mut x = img.to_vec();
    x.extend_from_slice(dark);
    let (h1, d1) = conv2d_f64(&x, [1, 4, h, w], &wt.fuse_conv5_w, Some(&wt.fuse_conv5_b), 1, 2)?;
    let h1: Vec<f64> = h1.into_iter().map(|v| leaky(v, slope)).collect();
    let (h2, _) = conv2d_f64(&h1, d1, &wt.fuse_conv3_w, Some(&wt.fuse_conv3_b), 1, 1)?;
    let area = (h * w) as f64;
    Ok(h2.chunks_exact(h * w).map(|p| p.iter().sum::<f64>() / area).collect())
}

struct MlpOut {
    r: Vec<f64>,
    b: Vec<f64>,
    c_a: f64,
}

fn mlp_f64(f: &[f64], a: [f64; 3], wt: &EstimatorWeights, slope: f32) -> Result<MlpOut> {
    let mut input = f.to_vec();
    input.extend_from_slice(&a);
    let act = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|x| leaky(x, slope)).collect() };
    let h1 = act(linear_f64(&input, input.len(), &wt.mlp_fc1_w, Some(&wt.mlp_fc1_b))?);
    let h2 = act(linear_f64(&h1, h1.len(), &wt.mlp_fc2_w, Some(&wt.mlp_fc2_b))?);
    let o = linear_f64(&h2, h2.len(), &wt.mlp_head_w, Some(&wt.mlp_head_b))?;
    let c = wt.norm_channels();
    Ok(MlpOut {
        r: o[..c].iter().map(|&v| softplus(v).max(OPEN_LOWER)).collect(),
        b: o[c..2 * c]
            .iter()
            .map(|&v| v.tanh().clamp(-OPEN_UPPER, OPEN_UPPER))
            .collect(),
        c_a: open_unit(sigmoid(o[2 * c])),
    })
}

/// `σ(conv3×3(relu(conv5×5(image))))` with same padding; values in (0, 1).
pub fn dark_channel_net(image: &Tensor, w: &EstimatorWeights) -> Result<Tensor> {
    let (h, wd) = check_rgb(image)?;
    let d = dark_f64(&to_f64(image), h, wd, w)?;
    Tensor::new(&[1, 1, h, wd], to_f32(&d))
}

/// Mean RGB over pixels whose dark-channel value reaches the `q_a` quantile.
pub fn estimate_atmospheric_light(image: &Tensor, dark: &Tensor, q_a: f64) -> Result<[f32; 3]> {
    let (h, w) = check_rgb(image)?;
    check_dark(dark, h, w)?;
    Ok(light_f64(&to_f64(image), &to_f64(dark), q_a)?.map(|v| v as f32))
}

/// Global feature vector from `image ⊕ dark`.
pub fn fuse_features(
    image: &Tensor,
    dark: &Tensor,
    w: &EstimatorWeights,
    leaky_slope: f32,
) -> Result<Vec<f32>> {
    let (h, wd) = check_rgb(image)?;
    check_dark(dark, h, wd)?;
    Ok(to_f32(&fuse_f64(&to_f64(image), &to_f64(dark), h, wd, w, leaky_slope)?))
}

/// Outputs of the physical MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalOutputs {
    pub r: Vec<f32>,
    pub b: Vec<f32>,
    pub c_a: f32,
}

/// Two LeakyReLU layers over `f ⊕ A`, then bounded heads for `r`, `b`, `c_a`.
pub fn physical_mlp(
    f: &[f32],
    a: [f32; 3],
    w: &EstimatorWeights,
    leaky_slope: f32,
) -> Result<PhysicalOutputs> {
    let f64s: Vec<f64> = f.iter().map(|&v| v as f64).collect();
    let o = mlp_f64(&f64s, a.map(|v| v as f64), w, leaky_slope)?;
    Ok(PhysicalOutputs {
        r: to_f32(&o.r),
        b: to_f32(&o.b),
        c_a: o.c_a as f32,
    })
}

fn transmission_values(dark: &[f64], c_a: &ScatteringCoeff) -> Result<Vec<f64>> {
    match c_a {
        ScatteringCoeff::Scalar(c) => {
            let c = *c as f64;
            Ok(dark.iter().map(|&d| 1.0 - c * d).collect())
        }
        ScatteringCoeff::Map(m) => {
            if m.len() != dark.len() {
                return Err(Error::shape(format!(
                    "scattering map has {} values, dark channel {}",
                    m.len(),
                    dark.len()
                )));
            }
            Ok(dark.iter().zip(m.data()).map(|(&d, &c)| 1.0 - c as f64 * d).collect())
        }
    }
}

/// `t = 1 − c_a·D̂`, elementwise.
pub fn transmission_map(dark: &Tensor, c_a: &ScatteringCoeff) -> Result<Tensor> {
    if let ScatteringCoeff::Map(m) = c_a {
        if m.shape() != dark.shape() {
            return Err(Error::shape(format!(
                "scattering map {:?} vs dark channel {:?}",
                m.shape(),
                dark.shape()
            )));
        }
    }
    Tensor::new(dark.shape(), to_f32(&transmission_values(&to_f64(dark), c_a)?))
}

/// Full estimator pipeline on a `1×3×H×W` image.
pub fn estimate(
    image: &Tensor,
    w: &EstimatorWeights,
    opts: EstimatorOptions,
) -> Result<AtmosphericParams> {
    let (h, wd) = check_rgb(image)?;
    let img = to_f64(image);
    let dark = dark_f64(&img, h, wd, w)?;
    let a = light_f64(&img, &dark, opts.q_a)?;
    let f = fuse_f64(&img, &dark, h, wd, w, opts.leaky_slope)?;
    let phys = mlp_f64(&f, a, w, opts.leaky_slope)?;
    let transmission_f64: Vec<f64> = dark.iter().map(|&d| 1.0 - phys.c_a * d).collect();
    Ok(AtmosphericParams {
        dark_channel: Tensor::new(&[1, 1, h, wd], to_f32(&dark))?,
        atmospheric_light: a.map(|v| v as f32),
        r: to_f32(&phys.r),
        b: to_f32(&phys.b),
        c_a: ScatteringCoeff::Scalar(phys.c_a as f32),
        transmission: Tensor::new(&[1, 1, h, wd], to_f32(&transmission_f64))?,
        transmission_f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::init_from_specs;

    fn zero_weights(cfg: &ModelConfig) -> EstimatorWeights {
        let mut store = init_from_specs(&EstimatorWeights::param_specs(cfg), 0);
        store.map_where(|_| true, |_| 0.0);
        EstimatorWeights::from_store(&store, cfg).unwrap()
    }

    #[test]
    fn zero_weights_give_midpoints() {
        let cfg = ModelConfig::tiny();
        let w = zero_weights(&cfg);
        let img = Tensor::from_fn4([1, 3, 6, 5], |_, c, y, x| ((c + y + x) % 4) as f32 / 4.0);
        let d = dark_channel_net(&img, &w).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.5));
        let phys = physical_mlp(&vec![0.3; cfg.feature_dim], [0.1, 0.2, 0.3], &w, 0.01).unwrap();
        assert_eq!(phys.c_a, 0.5);
        assert!(phys.r.iter().all(|&r| (r - std::f32::consts::LN_2).abs() < 1e-7));
        assert!(phys.b.iter().all(|&b| b == 0.0));
        assert_eq!(phys.r.len(), cfg.channels);
    }

    #[test]
    fn constant_image_light() {
        let img = Tensor::full(&[1, 3, 4, 4], 0.42);
        let dark = Tensor::from_fn4([1, 1, 4, 4], |_, _, y, x| (y * 4 + x) as f32 / 20.0);
        assert_eq!(estimate_atmospheric_light(&img, &dark, 0.999).unwrap(), [0.42; 3]);
    }

    #[test]
    fn unique_max_selects_one_pixel() {
        let img = Tensor::from_fn4([1, 3, 3, 3], |_, c, y, x| (c * 9 + y * 3 + x) as f32 / 30.0);
        let mut dark = Tensor::full(&[1, 1, 3, 3], 0.2);
        dark.data_mut()[4] = 0.9;
        let a = estimate_atmospheric_light(&img, &dark, 0.999).unwrap();
        assert_eq!(a, [img.at4(0, 0, 1, 1), img.at4(0, 1, 1, 1), img.at4(0, 2, 1, 1)]);
    }

    #[test]
    fn transmission_cases() {
        let d = Tensor::full(&[1, 1, 2, 2], 0.4);
        let t = transmission_map(&d, &ScatteringCoeff::Scalar(0.0)).unwrap();
        assert!(t.data().iter().all(|&v| v == 1.0));
        let t = transmission_map(&d, &ScatteringCoeff::Scalar(1.0)).unwrap();
        assert!(t.data().iter().all(|&v| (v - 0.6).abs() < 1e-7));
        let m = Tensor::new(&[1, 1, 2, 2], vec![0.0, 0.5, 1.0, 0.25]).unwrap();
        let t = transmission_map(&d, &ScatteringCoeff::Map(m)).unwrap();
        assert!((t.data()[2] - 0.6).abs() < 1e-7 && t.data()[0] == 1.0);
    }

    #[test]
    fn rejects_non_rgb() {
        let w = zero_weights(&ModelConfig::tiny());
        assert!(dark_channel_net(&Tensor::zeros(&[1, 1, 4, 4]), &w).is_err());
    }
}
