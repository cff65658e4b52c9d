//! Physics-aware attribution along a haze-interpolating path.
//!
//! The path runs in a straight line from a re-hazed baseline `I_base` to the
//! input `I`. At each midpoint-rule sample the gradients of the transmission
//! loss and of the reconstruction loss are multiplied elementwise; the
//! average over samples, scaled by `λ` and summed over channels, is the map.

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::estimator::AtmosphericParams;
use crate::haze::estimate_scene_reflectance;
use crate::model::Model;
use crate::numerics::Tensor;
use crate::weights::hex;

/// Integration and baseline settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathConfig {
    pub steps: usize,
    pub lambda: f32,
    pub t_mid: f32,
    pub fd_epsilon: f32,
    pub t_min: f32,
    /// Use `A·(1 − t_mid) + R` without the `t_mid` factor on `R`.
    pub raw_baseline: bool,
}

impl PathConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::validation(field, reason));
        if self.steps < 2 {
            return bad("steps", "must be at least 2");
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda", "must be finite and nonnegative");
        }
        if !(self.t_mid > 0.0 && self.t_mid < 1.0) {
            return bad("t_mid", "must lie in (0, 1)");
        }
        if !(1e-5..=1e-2).contains(&self.fd_epsilon) {
            return bad("fd_epsilon", "must lie in [1e-5, 1e-2]");
        }
        if !(self.t_min > 0.0 && self.t_min <= 1.0) {
            return bad("t_min", "must lie in (0, 1]");
        }
        Ok(())
    }
}

impl From<&ModelConfig> for PathConfig {
    fn from(cfg: &ModelConfig) -> Self {
        Self {
            steps: cfg.attribution_steps,
            lambda: cfg.lambda,
            t_mid: cfg.t_mid,
            fd_epsilon: cfg.fd_epsilon,
            t_min: cfg.t_min,
            raw_baseline: false,
        }
    }
}

/// How a map was produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathMeta {
    pub steps: usize,
    pub lambda: f32,
    pub t_mid: f32,
    pub fd_epsilon: f32,
    pub baseline_sha256: String,
}

/// Single-channel attribution map at the input extents.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    pub map: Tensor,
    pub meta: PathMeta,
}

/// `A·(1 − t_mid) + R·t_mid`, clamped to `[0, 1]`, with `R` the scene
/// reflectance recovered under the estimated transmission.
pub fn make_baseline(image: &Tensor, atm: &AtmosphericParams, cfg: &PathConfig) -> Result<Tensor> {
    let a = atm.atmospheric_light();
    let r = estimate_scene_reflectance(image, atm.transmission(), a, cfg.t_min)?;
    let (_, c, h, w) = r.dims4()?;
    let t = cfg.t_mid as f64;
    let r_weight = if cfg.raw_baseline { 1.0 } else { t };
    let area = h * w;
    let data = r
        .data()
        .iter()
        .enumerate()
        .map(|(i, &rv)| {
            let av = a[(i / area) % c] as f64;
            (av * (1.0 - t) + rv as f64 * r_weight).clamp(0.0, 1.0) as f32
        })
        .collect();
    Tensor::new(r.shape(), data)
}

/// `(1 − α)·I_base + α·I`; exact at both endpoints.
pub fn path_point(base: &Tensor, image: &Tensor, alpha: f64) -> Result<Tensor> {
    base.zip_map(image, |b, i| ((1.0 - alpha) * b as f64 + alpha * i as f64) as f32)
}

/// Central differences of `f` with respect to every element of `x`.
///
/// The divisor is the step actually taken in `f32`, `(x+ε) − (x−ε)`, so the
/// estimate is exact on quadratics up to the evaluation error of `f`.
pub fn grad_fd<F>(f: F, x: &Tensor, epsilon: f32) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<f64> + Sync,
{
    let g = grad_fd_f64(&f, x, epsilon)?;
    Tensor::new(x.shape(), g.into_iter().map(|v| v as f32).collect())
}

fn grad_fd_f64<F>(f: &F, x: &Tensor, epsilon: f32) -> Result<Vec<f64>>
where
    F: Fn(&Tensor) -> Result<f64> + Sync,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("fd epsilon {epsilon} must be positive")));
    }
    (0..x.len())
        .into_par_iter()
        .map(|i| {
            let mut probe = x.clone();
            let x0 = x.data()[i];
            let (hi, lo) = (x0 + epsilon, x0 - epsilon);
            probe.data_mut()[i] = hi;
            let f_hi = f(&probe)?;
            probe.data_mut()[i] = lo;
            let f_lo = f(&probe)?;
            for v in [f_hi, f_lo] {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        location: format!("finite difference at {}", element_label(x.shape(), i)),
                        value: v,
                    });
                }
            }
            Ok((f_hi - f_lo) / (hi as f64 - lo as f64))
        })
        .collect()
}

/// Median over components of `(G(2ε) − G(ε)) / (G(ε) − G(ε/2))` for central
/// differences `G`. Close to 4 where `f` is smooth on the probe interval.
///
/// Components whose denominator is within `floor` of zero are skipped, and
/// the median discards the few whose probes straddle a kink. Returns `None`
/// if no component qualifies.
pub fn fd_step_ratio<F>(f: F, x: &Tensor, epsilon: f32, floor: f64) -> Result<Option<f64>>
where
    F: Fn(&Tensor) -> Result<f64> + Sync,
{
    let g2 = grad_fd_f64(&f, x, 2.0 * epsilon)?;
    let g1 = grad_fd_f64(&f, x, epsilon)?;
    let g0 = grad_fd_f64(&f, x, 0.5 * epsilon)?;
    let mut ratios: Vec<f64> = (0..x.len())
        .filter_map(|i| {
            let den = g1[i] - g0[i];
            (den.abs() > floor).then(|| (g2[i] - g1[i]) / den)
        })
        .collect();
    if ratios.is_empty() {
        return Ok(None);
    }
    ratios.sort_by(f64::total_cmp);
    let n = ratios.len();
    Ok(Some(if n % 2 == 1 {
        ratios[n / 2]
    } else {
        0.5 * (ratios[n / 2 - 1] + ratios[n / 2])
    }))
}

fn element_label(shape: &[usize], i: usize) -> String {
    match *shape {
        [_, c, h, w] => {
            let (n, rem) = (i / (c * h * w), i % (c * h * w));
            format!("n={n} c={} y={} x={}", rem / (h * w), (rem % (h * w)) / w, rem % w)
        }
        _ => format!("element {i}"),
    }
}

/// `‖t_ref − t̂(x)‖₂ / pixels`.
pub fn loss_phy(x: &Tensor, model: &Model, t_ref: &Tensor) -> Result<f64> {
    let atm = model.atmosphere(x)?;
    if atm.transmission().shape() != t_ref.shape() {
        return Err(Error::shape(format!(
            "loss_phy: reference transmission {:?} vs estimate {:?}",
            t_ref.shape(),
            atm.transmission().shape()
        )));
    }
    let t = atm.transmission_f64();
    let ss: f64 = t
        .iter()
        .zip(t_ref.data())
        .map(|(&a, &b)| (b as f64 - a).powi(2))
        .sum();
    Ok(ss.sqrt() / t.len() as f64)
}

/// Mean squared difference between the unclamped `dehaze(x)` and `j_ref`.
pub fn loss_feat(x: &Tensor, model: &Model, j_ref: &Tensor) -> Result<f64> {
    let j = model.dehaze(x)?.raw;
    if j.shape() != j_ref.shape() {
        return Err(Error::shape(format!(
            "loss_feat: reference {:?} vs output {:?}",
            j_ref.shape(),
            j.shape()
        )));
    }
    crate::metrics::mse(&j, j_ref)
}

/// Source of the two loss gradients along the path.
pub trait GradientProvider: Sync {
    fn grad_phy(&self, x: &Tensor, t_ref: &Tensor) -> Result<Tensor>;
    fn grad_feat(&self, x: &Tensor, j_ref: &Tensor) -> Result<Tensor>;
}

/// Gradients of the real model by central differences.
#[derive(Debug, Clone, Copy)]
pub struct FiniteDifferences<'a> {
    pub model: &'a Model,
    pub epsilon: f32,
}

impl GradientProvider for FiniteDifferences<'_> {
    fn grad_phy(&self, x: &Tensor, t_ref: &Tensor) -> Result<Tensor> {
        grad_fd(|p| loss_phy(p, self.model, t_ref), x, self.epsilon)
    }

    fn grad_feat(&self, x: &Tensor, j_ref: &Tensor) -> Result<Tensor> {
        grad_fd(|p| loss_feat(p, self.model, j_ref), x, self.epsilon)
    }
}

fn sha256_tensor(t: &Tensor) -> String {
    hex(&Sha256::digest(t.to_le_bytes()))
}

/// Attribution map of `image` under `model`, using finite differences and the
/// physical baseline.
pub fn paam(model: &Model, image: &Tensor, cfg: &PathConfig) -> Result<AttributionMap> {
    let provider = FiniteDifferences {
        model,
        epsilon: cfg.fd_epsilon,
    };
    paam_with(&provider, model, image, None, cfg)
}

/// Attribution map with an explicit gradient provider and optional baseline.
pub fn paam_with(
    provider: &dyn GradientProvider,
    model: &Model,
    image: &Tensor,
    baseline: Option<&Tensor>,
    cfg: &PathConfig,
) -> Result<AttributionMap> {
    cfg.validate()?;
    let (_, c, h, w) = image.dims4()?;
    let max = model.config().attribution_max_extent;
    if h > max || w > max {
        return Err(Error::validation(
            "attribution_max_extent",
            format!("input {h}x{w} exceeds the {max}-pixel attribution limit"),
        ));
    }
    let atm = model.atmosphere(image)?;
    let t_ref = atm.transmission().clone();
    let j_ref = model.dehaze(image)?.raw;
    let base = match baseline {
        Some(b) => {
            if b.shape() != image.shape() {
                return Err(Error::shape(format!(
                    "baseline {:?} vs image {:?}",
                    b.shape(),
                    image.shape()
                )));
            }
            b.clone()
        }
        None => make_baseline(image, &atm, cfg)?,
    };

    // Products of two f32 values are exact in f64, so a constant integrand
    // accumulates to exactly `steps · p` for moderate step counts.
    let mut acc = vec![0.0f64; image.len()];
    for k in 0..cfg.steps {
        let alpha = (k as f64 + 0.5) / cfg.steps as f64;
        let x = path_point(&base, image, alpha)?;
        let gp = provider.grad_phy(&x, &t_ref)?;
        let gf = provider.grad_feat(&x, &j_ref)?;
        for ((a, &p), &f) in acc.iter_mut().zip(gp.data()).zip(gf.data()) {
            *a += p as f64 * f as f64;
        }
    }
    let scale = cfg.lambda as f64 / cfg.steps as f64;
    let area = h * w;
    let map = (0..area)
        .map(|p| (0..c).map(|ci| acc[ci * area + p] * scale).sum::<f64>() as f32)
        .collect();
    let map = Tensor::new(&[1, 1, h, w], map)?;
    if !map.all_finite() {
        return Err(Error::NonFinite {
            location: "attribution map".into(),
            value: f64::NAN,
        });
    }
    Ok(AttributionMap {
        map,
        meta: PathMeta {
            steps: cfg.steps,
            lambda: cfg.lambda,
            t_mid: cfg.t_mid,
            fd_epsilon: cfg.fd_epsilon,
            baseline_sha256: sha256_tensor(&base),
        },
    })
}
