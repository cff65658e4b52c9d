//! Adaptive normalization, dynamic windows, and window attention with an
//! atmosphere-guided persistent KV cache.

mod attend;
mod cache;
mod norm;
mod window;

pub use attend::{cached_window_attention, RelPosBias};
pub use cache::{align_kv, keep_count, retention_ratio, CacheStats, CacheUpdate, KVCache};
pub use norm::{adaptive_layer_norm, project_to_width, unit_project, UNIT_PROJECT_EPS};
pub use window::{adapt_window, compute_window_size, window_merge, window_partition, WindowGeometry};

/// Mean over windows of a `(num_windows, n, d)` token tensor, as `(n, d)` rows.
pub fn pool_windows(tokens: &crate::numerics::Tensor) -> Vec<f32> {
    let [nw, n, d] = tokens.shape()[..] else {
        panic!("pool_windows expects rank-3 tokens")
    };
    let mut acc = vec![0.0f64; n * d];
    for win in tokens.data().chunks_exact(n * d) {
        for (a, &v) in acc.iter_mut().zip(win) {
            *a += v as f64;
        }
    }
    acc.into_iter().map(|a| (a / nw as f64) as f32).collect()
}
