//! Reconstruction head: depthwise refinement of the encoder output,
//! transmission-weighted upsampling to the input extents, and a 3×3
//! projection added onto the original image.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{batch_norm, bilinear_resize, conv2d, depthwise_conv2d, relu, Tensor};
use crate::weights::{Init, ParamSpec, WeightStore};

/// Learnable tensors and batch-norm statistics of the reconstruction head.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconWeights {
    pub reduce_w: Tensor,
    pub reduce_b: Tensor,
    pub bn_mean: Tensor,
    pub bn_var: Tensor,
    pub bn_gamma: Tensor,
    pub bn_beta: Tensor,
    pub dw_w: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
    pub bn_eps: f32,
}

impl ReconWeights {
    pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
        let (cin, c) = (cfg.backbone_out_channels(), cfg.recon_channels);
        let mut v = Vec::new();
        v.extend(ParamSpec::conv("recon.reduce", c, cin, 1));
        v.push(ParamSpec::new("recon.bn.running_mean", &[c], Init::Zeros));
        v.push(ParamSpec::new("recon.bn.running_var", &[c], Init::Ones));
        v.push(ParamSpec::new("recon.bn.gamma", &[c], Init::Ones));
        v.push(ParamSpec::new("recon.bn.beta", &[c], Init::Zeros));
        v.push(ParamSpec::new("recon.dw.weight", &[c, 1, 3, 3], Init::Uniform { fan_in: 9 }));
        v.extend(ParamSpec::conv("recon.out", 3, c, 3));
        v
    }

    pub fn from_store(store: &WeightStore, cfg: &ModelConfig) -> Result<Self> {
        let (cin, c) = (cfg.backbone_out_channels(), cfg.recon_channels);
        let w = Self {
            reduce_w: store.require("recon.reduce.weight", &[c, cin, 1, 1])?,
            reduce_b: store.require("recon.reduce.bias", &[c])?,
            bn_mean: store.require("recon.bn.running_mean", &[c])?,
            bn_var: store.require("recon.bn.running_var", &[c])?,
            bn_gamma: store.require("recon.bn.gamma", &[c])?,
            bn_beta: store.require("recon.bn.beta", &[c])?,
            dw_w: store.require("recon.dw.weight", &[c, 1, 3, 3])?,
            out_w: store.require("recon.out.weight", &[3, c, 3, 3])?,
            out_b: store.require("recon.out.bias", &[3])?,
            bn_eps: cfg.bn_eps,
        };
        w.validate()?;
        Ok(w)
    }

    fn validate(&self) -> Result<()> {
        let stats = [&self.bn_mean, &self.bn_var, &self.bn_gamma, &self.bn_beta];
        if !stats.iter().all(|t| t.all_finite()) {
            return Err(Error::invalid("recon batch-norm statistics must be finite"));
        }
        if self.bn_var.data().iter().any(|&v| !(v + self.bn_eps > 0.0)) {
            return Err(Error::invalid("recon batch-norm variance + eps must be positive"));
        }
        Ok(())
    }
}

/// `DWConv3×3(ReLU(BN(Conv1×1(features))))`.
pub fn refine_features(features: &Tensor, w: &ReconWeights) -> Result<Tensor> {
    let reduced = conv2d(features, &w.reduce_w, Some(&w.reduce_b), 1, 0)?;
    let normed = batch_norm(&reduced, &w.bn_mean, &w.bn_var, &w.bn_gamma, &w.bn_beta, w.bn_eps)?;
    depthwise_conv2d(&normed.map(relu), &w.dw_w, 1)
}

/// `interp(F)·t↑ + A↑·(1 − t↑)` at `target_h × target_w`.
///
/// Features and `t` are resized bilinearly (half-pixel centres). `A` covers
/// the first three channels; any further channel uses `mean(A)`.
pub fn physics_upsample(
    features: &Tensor,
    t: &Tensor,
    a: [f32; 3],
    target_h: usize,
    target_w: usize,
) -> Result<Tensor> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::invalid(format!(
            "physics_upsample: zero target extent {target_h}x{target_w}"
        )));
    }
    let (n, c, _, _) = features.dims4()?;
    let (tn, tc, _, _) = t.dims4()?;
    if tc != 1 || tn != n {
        return Err(Error::shape(format!(
            "physics_upsample: transmission {:?} must be {n}x1xHxW",
            t.shape()
        )));
    }
    let f_up = bilinear_resize(features, target_h, target_w, false)?;
    let t_up = bilinear_resize(t, target_h, target_w, false)?;
    let a_mean = (a.iter().map(|&v| v as f64).sum::<f64>() / 3.0) as f32;
    let area = target_h * target_w;
    let td = t_up.data();
    let mut out = f_up.into_data();
    for (i, plane) in out.chunks_exact_mut(area).enumerate() {
        let (ni, ci) = (i / c, i % c);
        let av = a.get(ci).copied().unwrap_or(a_mean) as f64;
        let tp = &td[ni * area..][..area];
        for (v, &tv) in plane.iter_mut().zip(tp) {
            let tv = tv as f64;
            *v = (*v as f64 * tv + av * (1.0 - tv)) as f32;
        }
    }
    Tensor::new(&[n, c, target_h, target_w], out)
}

/// `Conv3×3(F_up) + I_orig`, unclamped.
pub fn compose_output(f_up: &Tensor, original: &Tensor, w: &ReconWeights) -> Result<Tensor> {
    let (_, _, h, wd) = f_up.dims4()?;
    let (_, oc, oh, ow) = original.dims4()?;
    if (oh, ow) != (h, wd) || oc != 3 {
        return Err(Error::shape(format!(
            "compose_output: features {h}x{wd} vs image {:?}",
            original.shape()
        )));
    }
    conv2d(f_up, &w.out_w, Some(&w.out_b), 1, 1)?.add(original)
}

/// Clamp to `[0, 1]` for emission as an image.
pub fn clamp_unit(x: &Tensor) -> Tensor {
    x.map(|v| v.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_limits() {
        let f = Tensor::from_fn4([1, 4, 2, 2], |_, c, y, x| (c + y + x) as f32 * 0.1);
        let a = [0.2, 0.4, 0.6];
        let ones = Tensor::full(&[1, 1, 1, 1], 1.0);
        let up = physics_upsample(&f, &ones, a, 5, 3).unwrap();
        assert_eq!(up, bilinear_resize(&f, 5, 3, false).unwrap());
        let zeros = Tensor::full(&[1, 1, 1, 1], 0.0);
        let up = physics_upsample(&f, &zeros, a, 5, 3).unwrap();
        for c in 0..4 {
            let want = if c < 3 { a[c] } else { 0.4 };
            assert!(up.channel(0, c).unwrap().data().iter().all(|&v| (v - want).abs() < 1e-7));
        }
        assert!(physics_upsample(&f, &ones, a, 0, 3).is_err());
    }

    #[test]
    fn upsample_midpoint() {
        let f = Tensor::full(&[1, 3, 2, 2], 0.8);
        let t = Tensor::full(&[1, 1, 3, 3], 0.5);
        let up = physics_upsample(&f, &t, [0.2; 3], 4, 4).unwrap();
        assert!(up.data().iter().all(|&v| (v - 0.5).abs() < 1e-7));
    }
}
