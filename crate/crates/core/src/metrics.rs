//! PSNR, SSIM and the weighted reconstruction loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Weights of the L1 / MSE / (1 − SSIM) training loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub w_l1: f32,
    pub w_mse: f32,
    pub w_ssim: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_l1: 0.8,
            w_mse: 0.1,
            w_ssim: 0.1,
        }
    }
}

/// How RGB inputs are reduced before SSIM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SsimMode {
    /// Average the channels into one luminance-like plane.
    #[default]
    ChannelMeanGray,
    /// SSIM per channel, then averaged.
    PerChannelMean,
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_extents(x: &Tensor, y: &Tensor) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::shape(format!(
            "metric operands differ: {:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    Ok(())
}

pub fn mse(x: &Tensor, y: &Tensor) -> Result<f64> {
    same_extents(x, y)?;
    let n = x.len().max(1) as f64;
    Ok(x.data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        / n)
}

pub fn mean_abs(x: &Tensor, y: &Tensor) -> Result<f64> {
    same_extents(x, y)?;
    let n = x.len().max(1) as f64;
    Ok(x.data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum::<f64>()
        / n)
}

/// `10·log10(peak² / MSE)`; identical inputs give `f64::INFINITY`.
pub fn psnr(x: &Tensor, y: &Tensor, peak: f64) -> Result<f64> {
    let m = mse(x, y)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// Normalized 1-D Gaussian taps of length [`SSIM_WINDOW`].
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Planes to compare for a given mode, as `(height, width, data)`.
fn planes(x: &Tensor, mode: SsimMode) -> Result<Vec<Vec<f64>>> {
    let (n, c, h, w) = x.dims4()?;
    let area = h * w;
    let mut out = Vec::new();
    for ni in 0..n {
        let item = &x.data()[ni * c * area..][..c * area];
        match mode {
            SsimMode::ChannelMeanGray => {
                let mut g = vec![0.0f64; area];
                for plane in item.chunks_exact(area) {
                    for (acc, &v) in g.iter_mut().zip(plane) {
                        *acc += v as f64;
                    }
                }
                g.iter_mut().for_each(|v| *v /= c as f64);
                out.push(g);
            }
            SsimMode::PerChannelMean => {
                for plane in item.chunks_exact(area) {
                    out.push(plane.iter().map(|&v| v as f64).collect());
                }
            }
        }
    }
    Ok(out)
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW], peak: f64) -> f64 {
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for oy in 0..oh {
        for ox in 0..ow {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (ky, gy) in g.iter().enumerate() {
                for (kx, gx) in g.iter().enumerate() {
                    let wt = gy * gx;
                    let i = (oy + ky) * w + ox + kx;
                    let (va, vb) = (a[i], b[i]);
                    ma += wt * va;
                    mb += wt * vb;
                    saa += wt * va * va;
                    sbb += wt * vb * vb;
                    sab += wt * va * vb;
                }
            }
            let var_a = saa - ma * ma;
            let var_b = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        }
    }
    total / (oh * ow) as f64
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5), mean over the map.
pub fn ssim(x: &Tensor, y: &Tensor) -> Result<f64> {
    ssim_with(x, y, SsimMode::default(), 1.0)
}

pub fn ssim_with(x: &Tensor, y: &Tensor, mode: SsimMode, peak: f64) -> Result<f64> {
    same_extents(x, y)?;
    let (_, _, h, w) = x.dims4()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(format!(
            "ssim: image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let g = gaussian_window();
    let pa = planes(x, mode)?;
    let pb = planes(y, mode)?;
    let sum: f64 = pa
        .iter()
        .zip(&pb)
        .map(|(a, b)| ssim_plane(a, b, h, w, &g, peak))
        .sum();
    Ok(sum / pa.len() as f64)
}

/// Individual terms of [`combined_loss`], already weighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l1: f64,
    pub mse: f64,
    pub ssim: f64,
    pub total: f64,
}

pub fn combined_loss_terms(pred: &Tensor, target: &Tensor, w: &LossWeights) -> Result<LossBreakdown> {
    let l1 = w.w_l1 as f64 * mean_abs(pred, target)?;
    let mse = w.w_mse as f64 * mse(pred, target)?;
    let ssim = w.w_ssim as f64 * (1.0 - ssim(pred, target)?);
    Ok(LossBreakdown {
        l1,
        mse,
        ssim,
        total: l1 + mse + ssim,
    })
}

/// `w_l1·mean|Δ| + w_mse·mean(Δ²) + w_ssim·(1 − ssim)`.
pub fn combined_loss(pred: &Tensor, target: &Tensor, w: &LossWeights) -> Result<f64> {
    Ok(combined_loss_terms(pred, target, w)?.total)
}
