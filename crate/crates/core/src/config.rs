//! Model hyperparameters, JSON (de)serialization and range validation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::LossWeights;

/// Every tunable of the model, the cache policy and the attribution path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Base channel width `C` of the first backbone stage.
    pub channels: usize,
    /// Blocks per backbone stage; four stages of 2× downsampling.
    pub depths: Vec<usize>,
    pub heads: usize,
    /// Hidden width of the estimator convolutions.
    pub estimator_channels: usize,
    /// Length `d` of the fused feature vector.
    pub feature_dim: usize,
    /// Channels of the refined features handed to reconstruction.
    pub recon_channels: usize,
    /// Largest window the relative-position table resolves; larger windows
    /// clamp their offsets onto it.
    pub rel_pos_window: usize,

    pub alpha: usize,
    pub beta: usize,
    pub tau: usize,

    /// Cache ratio η.
    pub eta: f32,
    /// Hard cap on cache length; `None` means `4 · w_base²` of the block.
    pub max_cache_len: Option<usize>,

    pub q_a: f64,
    pub t_min: f32,

    pub lambda: f32,
    pub t_mid: f32,
    pub fd_epsilon: f32,
    pub attribution_steps: usize,
    /// Largest height or width accepted by attribution.
    pub attribution_max_extent: usize,

    pub loss_weights: LossWeights,

    pub ln_eps: f32,
    pub bn_eps: f32,
    pub leaky_slope: f32,
    pub drop_path_rate: f32,

    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            depths: vec![2, 2, 2, 2],
            heads: 1,
            estimator_channels: 16,
            feature_dim: 16,
            recon_channels: 32,
            rel_pos_window: 8,
            alpha: 8,
            beta: 4,
            tau: 1024,
            eta: 0.5,
            max_cache_len: None,
            q_a: 0.999,
            t_min: 0.1,
            lambda: 1.0,
            t_mid: 0.7,
            fd_epsilon: 1e-3,
            attribution_steps: 32,
            attribution_max_extent: 32,
            loss_weights: LossWeights::default(),
            ln_eps: 1e-5,
            bn_eps: 1e-5,
            leaky_slope: crate::numerics::LEAKY_SLOPE,
            drop_path_rate: 0.0,
            seed: 0,
        }
    }
}

fn check(ok: bool, field: &str, reason: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::validation(field, reason))
    }
}

impl ModelConfig {
    /// A narrow, shallow model for tests and finite-difference attribution.
    pub fn tiny() -> Self {
        Self {
            channels: 8,
            depths: vec![1, 1, 1, 1],
            estimator_channels: 8,
            feature_dim: 8,
            recon_channels: 8,
            rel_pos_window: 4,
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Channel width of backbone stage `i`.
    pub fn stage_channels(&self, stage: usize) -> usize {
        self.channels << stage
    }

    /// Channels of the backbone output `F_d`.
    pub fn backbone_out_channels(&self) -> usize {
        self.channels << self.depths.len()
    }

    pub fn validate(&self) -> Result<()> {
        check(self.channels >= 1, "channels", "must be at least 1")?;
        check(
            self.depths.len() == 4,
            "depths",
            "must list exactly 4 stages (4 × 2 = 16× downsampling)",
        )?;
        check(self.depths.iter().all(|&d| d <= 64), "depths", "stage depth above 64")?;
        check(self.heads >= 1, "heads", "must be at least 1")?;
        check(
            self.channels % self.heads == 0,
            "heads",
            "must divide channels",
        )?;
        check(self.estimator_channels >= 1, "estimator_channels", "must be at least 1")?;
        check(self.feature_dim >= 1, "feature_dim", "must be at least 1")?;
        check(self.recon_channels >= 1, "recon_channels", "must be at least 1")?;
        check(self.rel_pos_window >= 1, "rel_pos_window", "must be at least 1")?;
        check(self.alpha >= 1, "alpha", "must be at least 1")?;
        check(
            (0.0..=1.0).contains(&self.eta),
            "eta",
            "must lie in [0, 1]",
        )?;
        check(
            self.max_cache_len.map_or(true, |m| m >= 1),
            "max_cache_len",
            "must be at least 1 when set",
        )?;
        check((0.0..=1.0).contains(&self.q_a), "q_a", "must lie in [0, 1]")?;
        check(
            self.t_min > 0.0 && self.t_min <= 1.0,
            "t_min",
            "must lie in (0, 1]",
        )?;
        check(
            self.lambda.is_finite() && self.lambda >= 0.0,
            "lambda",
            "must be finite and nonnegative",
        )?;
        check(
            self.t_mid > 0.0 && self.t_mid < 1.0,
            "t_mid",
            "must lie in (0, 1)",
        )?;
        check(
            (1e-5..=1e-2).contains(&self.fd_epsilon),
            "fd_epsilon",
            "must lie in [1e-5, 1e-2]",
        )?;
        check(self.attribution_steps >= 2, "attribution_steps", "must be at least 2")?;
        check(
            self.attribution_max_extent >= 1,
            "attribution_max_extent",
            "must be at least 1",
        )?;
        for (name, v) in [
            ("loss_weights.w_l1", self.loss_weights.w_l1),
            ("loss_weights.w_mse", self.loss_weights.w_mse),
            ("loss_weights.w_ssim", self.loss_weights.w_ssim),
        ] {
            check(v.is_finite() && v >= 0.0, name, "must be finite and nonnegative")?;
        }
        check(self.ln_eps > 0.0 && self.ln_eps.is_finite(), "ln_eps", "must be positive")?;
        check(self.bn_eps > 0.0 && self.bn_eps.is_finite(), "bn_eps", "must be positive")?;
        check(
            self.leaky_slope.is_finite() && (0.0..1.0).contains(&self.leaky_slope),
            "leaky_slope",
            "must lie in [0, 1)",
        )?;
        check(
            (0.0..1.0).contains(&self.drop_path_rate),
            "drop_path_rate",
            "must lie in [0, 1)",
        )?;
        Ok(())
    }
}
