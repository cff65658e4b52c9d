//! Atmosphere-guided key/value cache.
//!
//! Each update keeps the first `floor(γ·L)` cached entries, with
//! `γ = 1 − mean(c_a)·η`, then appends the incoming sequence. Incoming
//! sequences whose length differs from the cache's segment length are
//! linearly resampled to it first. A hard `max_len` cap drops the oldest
//! entries if the concatenation would exceed it.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::resize_sequence;

/// Retention ratio `γ = 1 − c_a_mean·η`, with both inputs clamped to `[0, 1]`.
pub fn retention_ratio(c_a_mean: f32, eta: f32) -> f64 {
    let c = c_a_mean.clamp(0.0, 1.0) as f64;
    let e = eta.clamp(0.0, 1.0) as f64;
    1.0 - c * e
}

/// `floor(γ·len)`.
pub fn keep_count(gamma: f64, len: usize) -> usize {
    ((gamma * len as f64).floor() as usize).min(len)
}

/// Resample a `(len, dim)` sequence to `target_len` rows by linear
/// interpolation along the sequence axis.
pub fn align_kv(rows: &[f32], dim: usize, target_len: usize) -> Result<Vec<f32>> {
    resize_sequence(rows, dim, target_len)
}

/// Telemetry for one cache update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CacheUpdate {
    pub gamma: f64,
    pub len_before: usize,
    pub n_keep: usize,
    /// Entries dropped from the tail by the retention ratio.
    pub evicted: usize,
    /// Entries dropped from the front by the length cap.
    pub capped: usize,
    /// Length of the incoming sequence after alignment.
    pub appended: usize,
    pub aligned: bool,
    pub len_after: usize,
}

/// Running totals over the cache lifetime.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub updates: usize,
    pub evicted: usize,
    pub capped: usize,
}

/// Persistent key/value sequences for one attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct KVCache {
    keys: Vec<f32>,
    values: Vec<f32>,
    dim: usize,
    segment_len: Option<usize>,
    max_len: usize,
    eta: f32,
    stats: CacheStats,
}

impl KVCache {
    pub fn new(dim: usize, max_len: usize, eta: f32) -> Result<Self> {
        if dim == 0 || max_len == 0 {
            return Err(Error::invalid("KVCache needs dim >= 1 and max_len >= 1"));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::invalid(format!("cache ratio eta {eta} outside [0, 1]")));
        }
        Ok(Self {
            keys: Vec::new(),
            values: Vec::new(),
            dim,
            segment_len: None,
            max_len,
            eta,
            stats: CacheStats::default(),
        })
    }

    /// Cache preloaded with `(len, dim)` keys and values.
    ///
    /// `segment_len` is the sequence length later updates are aligned to.
    pub fn with_contents(
        dim: usize,
        max_len: usize,
        eta: f32,
        keys: Vec<f32>,
        values: Vec<f32>,
        segment_len: usize,
    ) -> Result<Self> {
        let mut c = Self::new(dim, max_len, eta)?;
        if keys.len() != values.len() || keys.len() % dim != 0 {
            return Err(Error::shape(format!(
                "cache contents: {} keys / {} values not a multiple of dim {dim}",
                keys.len(),
                values.len()
            )));
        }
        if keys.len() / dim > max_len || segment_len == 0 {
            return Err(Error::invalid("cache contents exceed max_len or zero segment length"));
        }
        c.keys = keys;
        c.values = values;
        c.segment_len = (!c.keys.is_empty()).then_some(segment_len);
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.keys.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn eta(&self) -> f32 {
        self.eta
    }

    pub fn segment_len(&self) -> Option<usize> {
        self.segment_len
    }

    pub fn keys(&self) -> &[f32] {
        &self.keys
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    /// Bytes held by keys and values.
    pub fn bytes(&self) -> usize {
        (self.keys.len() + self.values.len()) * std::mem::size_of::<f32>()
    }

    pub fn reset(&mut self) {
        self.keys.clear();
        self.values.clear();
        self.segment_len = None;
        self.stats = CacheStats::default();
    }

    /// Retain, align and append one `(L_t, dim)` key/value pair.
    pub fn update(&mut self, k_t: &[f32], v_t: &[f32], c_a_mean: f32) -> Result<CacheUpdate> {
        let d = self.dim;
        if k_t.len() != v_t.len() {
            return Err(Error::shape(format!(
                "update: {} key values vs {} value values",
                k_t.len(),
                v_t.len()
            )));
        }
        if k_t.is_empty() || k_t.len() % d != 0 {
            return Err(Error::shape(format!(
                "update: incoming length {} is not a nonempty multiple of cache dim {d}",
                k_t.len()
            )));
        }
        let len_before = self.len();
        let gamma = retention_ratio(c_a_mean, self.eta);
        let n_keep = keep_count(gamma, len_before);

        let incoming_len = k_t.len() / d;
        let (k_new, v_new, aligned) = match self.segment_len {
            Some(seg) if len_before > 0 && seg != incoming_len => {
                (align_kv(k_t, d, seg)?, align_kv(v_t, d, seg)?, true)
            }
            _ => (k_t.to_vec(), v_t.to_vec(), false),
        };
        if self.segment_len.is_none() || len_before == 0 {
            self.segment_len = Some(incoming_len);
        }

        self.keys.truncate(n_keep * d);
        self.values.truncate(n_keep * d);
        self.keys.extend_from_slice(&k_new);
        self.values.extend_from_slice(&v_new);

        let over = self.len().saturating_sub(self.max_len);
        if over > 0 {
            self.keys.drain(..over * d);
            self.values.drain(..over * d);
        }

        let rec = CacheUpdate {
            gamma,
            len_before,
            n_keep,
            evicted: len_before - n_keep,
            capped: over,
            appended: k_new.len() / d,
            aligned,
            len_after: self.len(),
        };
        self.stats.updates += 1;
        self.stats.evicted += rec.evicted;
        self.stats.capped += rec.capped;
        Ok(rec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(len: usize, dim: usize, base: f32) -> Vec<f32> {
        (0..len * dim).map(|i| base + i as f32).collect()
    }

    #[test]
    fn retention_examples() {
        assert_eq!(retention_ratio(0.0, 0.5), 1.0);
        assert_eq!(keep_count(retention_ratio(0.0, 0.5), 8), 8);
        assert_eq!(retention_ratio(1.0, 0.5), 0.5);
        assert_eq!(keep_count(0.5, 8), 4);
        assert_eq!(retention_ratio(0.5, 0.5), 0.75);
        assert_eq!(keep_count(0.75, 8), 6);
    }

    #[test]
    fn first_update_stores_input() {
        let mut c = KVCache::new(2, 100, 0.5).unwrap();
        let k = seq(4, 2, 0.0);
        let rec = c.update(&k, &k, 0.7).unwrap();
        assert_eq!(c.keys(), &k[..]);
        assert_eq!((rec.len_after, c.segment_len()), (4, Some(4)));
    }

    #[test]
    fn keep_prefix_then_append() {
        let old = seq(8, 1, 0.0);
        let mut c = KVCache::with_contents(1, 100, 0.5, old.clone(), old, 4).unwrap();
        let new = seq(4, 1, 100.0);
        let rec = c.update(&new, &new, 1.0).unwrap();
        assert_eq!(rec.n_keep, 4);
        assert_eq!(c.keys(), &[0., 1., 2., 3., 100., 101., 102., 103.]);
    }

    #[test]
    fn misaligned_incoming_is_resampled() {
        let old = seq(2, 1, 0.0);
        let mut c = KVCache::with_contents(1, 100, 0.0, old.clone(), old, 3).unwrap();
        let rec = c.update(&[1.0, 3.0], &[1.0, 3.0], 0.0).unwrap();
        assert!(rec.aligned);
        assert_eq!(&c.keys()[2..], &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn cap_drops_oldest() {
        let mut c = KVCache::new(1, 5, 0.0).unwrap();
        c.update(&seq(4, 1, 0.0), &seq(4, 1, 0.0), 1.0).unwrap();
        let rec = c.update(&seq(4, 1, 10.0), &seq(4, 1, 10.0), 1.0).unwrap();
        assert_eq!(rec.capped, 3);
        assert_eq!(c.keys(), &[3., 10., 11., 12., 13.]);
    }

    #[test]
    fn dim_mismatch_errors() {
        let mut c = KVCache::new(3, 10, 0.5).unwrap();
        assert!(c.update(&[1.0; 4], &[1.0; 4], 0.5).is_err());
        assert!(c.update(&[1.0; 3], &[1.0; 6], 0.5).is_err());
    }
}
