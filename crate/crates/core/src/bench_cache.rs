//! Cache-length and memory benchmark over a resolution / haze schedule.
//!
//! The same window attention runs twice over the schedule: once with
//! eviction driven by `c_a_mean` and the configured length cap, once with
//! `η = 0` and no cap. Each step attends with the current cache and then
//! pushes the window-pooled keys and values.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    adapt_window, cached_window_attention, pool_windows, retention_ratio, window_partition, KVCache,
};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// CSV header of [`to_csv`].
pub const CSV_HEADER: &str = "step,H,W,c_a_mean,gamma,cache_len_on,cache_len_off,bytes_on,bytes_off,ms";

/// One schedule entry: feature-map extents and the haze level for that call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleStep {
    pub h: usize,
    pub w: usize,
    pub c_a_mean: f32,
}

/// Parse and validate a JSON schedule (an array of steps).
pub fn parse_schedule(text: &str) -> Result<Vec<ScheduleStep>> {
    let steps: Vec<ScheduleStep> = serde_json::from_str(text)?;
    if steps.is_empty() {
        return Err(Error::validation("schedule", "must contain at least one step"));
    }
    for (i, s) in steps.iter().enumerate() {
        if s.h == 0 || s.w == 0 {
            return Err(Error::validation(format!("schedule[{i}].h/w"), "must be positive"));
        }
        if !(0.0..=1.0).contains(&s.c_a_mean) {
            return Err(Error::validation(format!("schedule[{i}].c_a_mean"), "must lie in [0, 1]"));
        }
    }
    Ok(steps)
}

/// Twenty 64×64 steps at `c_a_mean = 1`: 64 new tokens per step.
pub fn default_schedule() -> Vec<ScheduleStep> {
    vec![
        ScheduleStep {
            h: 64,
            w: 64,
            c_a_mean: 1.0,
        };
        20
    ]
}

/// Benchmark settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchSettings {
    pub dim: usize,
    pub eta: f32,
    pub alpha: usize,
    pub beta: usize,
    pub tau: usize,
    /// Cap of the eviction-on cache; `None` means `4 · w_base²` of the first step.
    pub max_cache_len: Option<usize>,
    pub seed: u64,
}

impl From<&ModelConfig> for BenchSettings {
    fn from(cfg: &ModelConfig) -> Self {
        Self {
            dim: cfg.channels,
            eta: cfg.eta,
            alpha: cfg.alpha,
            beta: cfg.beta,
            tau: cfg.tau,
            max_cache_len: cfg.max_cache_len,
            seed: cfg.seed,
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub step: usize,
    pub h: usize,
    pub w: usize,
    pub c_a_mean: f32,
    pub gamma: f64,
    pub cache_len_on: usize,
    pub cache_len_off: usize,
    pub bytes_on: usize,
    pub bytes_off: usize,
    pub ms: f64,
}

/// Bytes of `len` cached keys plus values at width `dim`.
pub fn cache_bytes(len: usize, dim: usize) -> usize {
    len * dim * 4 * 2
}

fn step_tokens(rng: &mut ChaCha8Rng, step: &ScheduleStep, s: &BenchSettings) -> Result<(Tensor, usize)> {
    let (w_base, w_adapt) = adapt_window(step.h, step.w, s.alpha, s.beta, s.tau);
    let x = Tensor::from_fn4([1, s.dim, step.h, step.w], |_, _, _, _| rng.gen_range(-1.0..1.0));
    let (tokens, _) = window_partition(&x, w_adapt)?;
    Ok((tokens, w_base))
}

fn attend_and_update(tokens: &Tensor, cache: &mut KVCache, c_a_mean: f32) -> Result<()> {
    cached_window_attention(tokens, tokens, tokens, Some(cache), None, 1)?;
    let pooled = pool_windows(tokens);
    cache.update(&pooled, &pooled, c_a_mean)?;
    Ok(())
}

/// Run the schedule with eviction on and off.
pub fn bench_cache(schedule: &[ScheduleStep], s: &BenchSettings) -> Result<Vec<BenchRow>> {
    if schedule.is_empty() {
        return Err(Error::validation("schedule", "must contain at least one step"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut on: Option<KVCache> = None;
    let mut off = KVCache::new(s.dim, usize::MAX, 0.0)?;
    let mut rows = Vec::with_capacity(schedule.len());
    for (i, step) in schedule.iter().enumerate() {
        let (tokens, w_base) = step_tokens(&mut rng, step, s)?;
        let cache_on = match on.as_mut() {
            Some(c) => c,
            None => on.insert(KVCache::new(
                s.dim,
                s.max_cache_len.unwrap_or(4 * w_base * w_base),
                s.eta,
            )?),
        };
        let start = Instant::now();
        attend_and_update(&tokens, cache_on, step.c_a_mean)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        attend_and_update(&tokens, &mut off, step.c_a_mean)?;
        rows.push(BenchRow {
            step: i + 1,
            h: step.h,
            w: step.w,
            c_a_mean: step.c_a_mean,
            gamma: retention_ratio(step.c_a_mean, s.eta),
            cache_len_on: cache_on.len(),
            cache_len_off: off.len(),
            bytes_on: cache_bytes(cache_on.len(), s.dim),
            bytes_off: cache_bytes(off.len(), s.dim),
            ms,
        });
    }
    Ok(rows)
}

/// Render rows as CSV with [`CSV_HEADER`].
pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{:.3}\n",
            r.step,
            r.h,
            r.w,
            r.c_a_mean,
            r.gamma,
            r.cache_len_on,
            r.cache_len_off,
            r.bytes_on,
            r.bytes_off,
            r.ms
        ));
    }
    out
}
