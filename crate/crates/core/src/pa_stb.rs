//! Parameter-aware Swin-style transformer block and the 16× encoder.
//!
//! Block data flow for an input `x` with `C` channels:
//!
//! 1. `LN'(x)` with the atmospheric `r`, `b` projected to width `C`;
//! 2. window size from the feature extents, tokens via window partition;
//! 3. QKV projection, attention over `[K_cache; K]` using the cache as it was
//!    before this call, then the per-call tokens are pooled over windows and
//!    pushed into the cache;
//! 4. output projection, window merge, `x_out = x + γ₁⊙attn + β₁`;
//! 5. `x_final = x_out + γ₂⊙MLP(LN(x_out)) + β₂` with a `C → 4C → C` GELU MLP.
//!
//! Stochastic depth is the identity at inference.

use crate::attention::{
    adapt_window, adaptive_layer_norm, cached_window_attention, pool_windows, project_to_width,
    window_merge, window_partition, CacheUpdate, KVCache, RelPosBias, WindowGeometry,
};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::estimator::AtmosphericParams;
use crate::numerics::{conv2d, gelu, layer_norm, linear, Tensor};
use crate::weights::{Init, ParamSpec, WeightStore};

/// Total spatial reduction of the backbone.
pub const BACKBONE_STRIDE: usize = 16;

/// Learnable tensors of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub qkv_w: Tensor,
    pub qkv_b: Tensor,
    pub proj_w: Tensor,
    pub proj_b: Tensor,
    pub rel_pos: RelPosBias,
    pub res_gamma1: Tensor,
    pub res_beta1: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub mlp_fc1_w: Tensor,
    pub mlp_fc1_b: Tensor,
    pub mlp_fc2_w: Tensor,
    pub mlp_fc2_b: Tensor,
    pub res_gamma2: Tensor,
    pub res_beta2: Tensor,
    pub drop_path_rate: f32,
}

impl BlockParams {
    pub fn param_specs(prefix: &str, c: usize, heads: usize, table_window: usize) -> Vec<ParamSpec> {
        let side = 2 * table_window - 1;
        let p = |s: &str| format!("{prefix}.{s}");
        let mut v = vec![
            ParamSpec::new(p("ln1.gamma"), &[c], Init::Ones),
            ParamSpec::new(p("ln1.beta"), &[c], Init::Zeros),
        ];
        v.extend(ParamSpec::linear(&p("attn.qkv"), 3 * c, c));
        v.extend(ParamSpec::linear(&p("attn.proj"), c, c));
        v.push(ParamSpec::new(
            p("attn.rel_pos"),
            &[heads, side * side],
            Init::Uniform { fan_in: side * side },
        ));
        v.push(ParamSpec::new(p("res.gamma1"), &[c], Init::Ones));
        v.push(ParamSpec::new(p("res.beta1"), &[c], Init::Zeros));
        v.push(ParamSpec::new(p("ln2.gamma"), &[c], Init::Ones));
        v.push(ParamSpec::new(p("ln2.beta"), &[c], Init::Zeros));
        v.extend(ParamSpec::linear(&p("mlp.fc1"), 4 * c, c));
        v.extend(ParamSpec::linear(&p("mlp.fc2"), c, 4 * c));
        v.push(ParamSpec::new(p("res.gamma2"), &[c], Init::Ones));
        v.push(ParamSpec::new(p("res.beta2"), &[c], Init::Zeros));
        v
    }

    pub fn from_store(
        store: &WeightStore,
        prefix: &str,
        c: usize,
        heads: usize,
        table_window: usize,
        drop_path_rate: f32,
    ) -> Result<Self> {
        let specs = Self::param_specs(prefix, c, heads, table_window);
        let mut it = specs
            .iter()
            .map(|s| store.require(&s.name, &s.shape))
            .collect::<Result<Vec<_>>>()?
            .into_iter();
        let mut next = || it.next().expect("spec count");
        Ok(Self {
            ln1_gamma: next(),
            ln1_beta: next(),
            qkv_w: next(),
            qkv_b: next(),
            proj_w: next(),
            proj_b: next(),
            rel_pos: RelPosBias::new(next(), table_window)?,
            res_gamma1: next(),
            res_beta1: next(),
            ln2_gamma: next(),
            ln2_beta: next(),
            mlp_fc1_w: next(),
            mlp_fc1_b: next(),
            mlp_fc2_w: next(),
            mlp_fc2_b: next(),
            res_gamma2: next(),
            res_beta2: next(),
            drop_path_rate,
        })
    }

    pub fn channels(&self) -> usize {
        self.ln1_gamma.len()
    }

    pub fn heads(&self) -> usize {
        self.rel_pos.heads()
    }
}

/// Window and normalization settings shared by every block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockOptions {
    pub alpha: usize,
    pub beta: usize,
    pub tau: usize,
    pub eta: f32,
    pub max_cache_len: Option<usize>,
    pub ln_eps: f32,
}

impl From<&ModelConfig> for BlockOptions {
    fn from(cfg: &ModelConfig) -> Self {
        Self {
            alpha: cfg.alpha,
            beta: cfg.beta,
            tau: cfg.tau,
            eta: cfg.eta,
            max_cache_len: cfg.max_cache_len,
            ln_eps: cfg.ln_eps,
        }
    }
}

/// What one block forward did.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTrace {
    pub geometry: WindowGeometry,
    pub cache_update: CacheUpdate,
    pub cache_len_at_attention: usize,
}

/// `(N, C, H, W)` → `(N·H·W, C)` pixel rows.
fn to_rows(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let mut out = Vec::with_capacity(x.len());
    for ni in 0..n {
        for y in 0..h {
            for xx in 0..w {
                for ci in 0..c {
                    out.push(x.at4(ni, ci, y, xx));
                }
            }
        }
    }
    Tensor::new(&[n * h * w, c], out)
}

fn from_rows(rows: &Tensor, n: usize, c: usize, h: usize, w: usize) -> Tensor {
    let d = rows.data();
    Tensor::from_fn4([n, c, h, w], |ni, ci, y, x| d[((ni * h + y) * w + x) * c + ci])
}

/// `x + γ⊙u + β` per channel.
fn scaled_residual(x: &Tensor, update: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let (_, c, h, w) = x.dims4()?;
    if update.shape() != x.shape() {
        return Err(Error::shape("residual update does not match input"));
    }
    let area = h * w;
    let mut out = x.data().to_vec();
    for (i, (o, u)) in out
        .chunks_exact_mut(area)
        .zip(update.data().chunks_exact(area))
        .enumerate()
    {
        let ci = i % c;
        let (g, b) = (gamma.data()[ci], beta.data()[ci]);
        for (ov, &uv) in o.iter_mut().zip(u) {
            *ov += g * uv + b;
        }
    }
    Tensor::new(x.shape(), out)
}

/// Create the block's cache on first use.
pub fn ensure_cache<'a>(
    slot: &'a mut Option<KVCache>,
    dim: usize,
    w_base: usize,
    opts: &BlockOptions,
) -> Result<&'a mut KVCache> {
    if slot.is_none() {
        let cap = opts.max_cache_len.unwrap_or(4 * w_base * w_base);
        *slot = Some(KVCache::new(dim, cap, opts.eta)?);
    }
    Ok(slot.as_mut().expect("just created"))
}

/// One block forward. `cache` is created lazily and mutated.
pub fn pa_stb_forward(
    x: &Tensor,
    p: &BlockParams,
    atm: &AtmosphericParams,
    cache: &mut Option<KVCache>,
    opts: &BlockOptions,
) -> Result<(Tensor, BlockTrace)> {
    let (n, c, h, w) = x.dims4()?;
    if c != p.channels() {
        return Err(Error::shape(format!(
            "block expects {} channels, input has {c}",
            p.channels()
        )));
    }
    let r = project_to_width(atm.r(), c);
    let b = project_to_width(atm.b(), c);
    let xn = adaptive_layer_norm(x, &r, &b, &p.ln1_gamma, &p.ln1_beta, opts.ln_eps)?;

    let (w_base, w_adapt) = adapt_window(h, w, opts.alpha, opts.beta, opts.tau);
    let (tokens, mut geom) = window_partition(&xn, w_adapt)?;
    geom.w_base = w_base;

    let qkv = linear(&tokens, &p.qkv_w, Some(&p.qkv_b))?;
    let [nw, nt, _] = qkv.shape()[..] else { unreachable!() };
    let split = |part: usize| -> Result<Tensor> {
        let d = qkv.data();
        let mut out = Vec::with_capacity(nw * nt * c);
        for row in d.chunks_exact(3 * c) {
            out.extend_from_slice(&row[part * c..(part + 1) * c]);
        }
        Tensor::new(&[nw, nt, c], out)
    };
    let (q, k, v) = (split(0)?, split(1)?, split(2)?);

    let cache = ensure_cache(cache, c, w_base, opts)?;
    let cache_len_at_attention = cache.len();
    let attn = cached_window_attention(&q, &k, &v, Some(cache), Some(&p.rel_pos), p.heads())?;
    let cache_update = cache.update(&pool_windows(&k), &pool_windows(&v), atm.c_a_mean())?;

    let projected = linear(&attn, &p.proj_w, Some(&p.proj_b))?;
    let x_attn = window_merge(&projected, &geom)?;
    let x_out = scaled_residual(x, &x_attn, &p.res_gamma1, &p.res_beta1)?;

    let hn = layer_norm(&x_out, &p.ln2_gamma, &p.ln2_beta, opts.ln_eps)?;
    let rows = to_rows(&hn)?;
    let hidden = linear(&rows, &p.mlp_fc1_w, Some(&p.mlp_fc1_b))?.map(gelu);
    let mlp = linear(&hidden, &p.mlp_fc2_w, Some(&p.mlp_fc2_b))?;
    let mlp = from_rows(&mlp, n, c, h, w);
    let x_final = scaled_residual(&x_out, &mlp, &p.res_gamma2, &p.res_beta2)?;

    Ok((
        x_final,
        BlockTrace {
            geometry: geom,
            cache_update,
            cache_len_at_attention,
        },
    ))
}

/// Stage layout of the encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneConfig {
    pub channels: usize,
    pub depths: Vec<usize>,
    /// Spatial reduction after each stage.
    pub downsample: Vec<usize>,
}

impl BackboneConfig {
    pub fn total_downsample(&self) -> usize {
        self.downsample.iter().product()
    }
}

impl From<&ModelConfig> for BackboneConfig {
    fn from(cfg: &ModelConfig) -> Self {
        Self {
            channels: cfg.channels,
            depths: cfg.depths.clone(),
            downsample: vec![2; cfg.depths.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageWeights {
    pub blocks: Vec<BlockParams>,
    pub down_w: Tensor,
    pub down_b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneWeights {
    pub stem_w: Tensor,
    pub stem_b: Tensor,
    pub stages: Vec<StageWeights>,
}

impl BackboneWeights {
    pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
        let mut v = Vec::new();
        v.extend(ParamSpec::conv("backbone.stem", cfg.channels, 3, 3));
        for (i, &depth) in cfg.depths.iter().enumerate() {
            let c = cfg.stage_channels(i);
            for j in 0..depth {
                v.extend(BlockParams::param_specs(
                    &format!("backbone.stage{i}.block{j}"),
                    c,
                    cfg.heads,
                    cfg.rel_pos_window,
                ));
            }
            v.extend(ParamSpec::conv(&format!("backbone.stage{i}.down"), 2 * c, c, 3));
        }
        v
    }

    pub fn from_store(store: &WeightStore, cfg: &ModelConfig) -> Result<Self> {
        let stem_w = store.require("backbone.stem.weight", &[cfg.channels, 3, 3, 3])?;
        let stem_b = store.require("backbone.stem.bias", &[cfg.channels])?;
        let mut stages = Vec::new();
        for (i, &depth) in cfg.depths.iter().enumerate() {
            let c = cfg.stage_channels(i);
            let blocks = (0..depth)
                .map(|j| {
                    BlockParams::from_store(
                        store,
                        &format!("backbone.stage{i}.block{j}"),
                        c,
                        cfg.heads,
                        cfg.rel_pos_window,
                        cfg.drop_path_rate,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(StageWeights {
                blocks,
                down_w: store.require(&format!("backbone.stage{i}.down.weight"), &[2 * c, c, 3, 3])?,
                down_b: store.require(&format!("backbone.stage{i}.down.bias"), &[2 * c])?,
            });
        }
        Ok(Self {
            stem_w,
            stem_b,
            stages,
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.stages.iter().map(|s| s.blocks.len()).sum()
    }
}

/// One cache slot per block, in stage-major order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlockCaches {
    slots: Vec<Option<KVCache>>,
}

impl BlockCaches {
    pub fn new(num_blocks: usize) -> Self {
        Self {
            slots: vec![None; num_blocks],
        }
    }

    pub fn reset(&mut self) {
        self.slots.iter_mut().for_each(|s| *s = None);
    }

    pub fn get(&self, i: usize) -> Option<&KVCache> {
        self.slots.get(i).and_then(|s| s.as_ref())
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Total bytes held across all blocks.
    pub fn bytes(&self) -> usize {
        self.slots.iter().flatten().map(KVCache::bytes).sum()
    }
}

/// Encoder from a `1×3×H×W` image to `F_d` at `ceil(H/16) × ceil(W/16)`.
///
/// The input is zero-padded on the bottom/right to a multiple of 16; each
/// stage runs its blocks then a stride-2 3×3 convolution that doubles the
/// channel count.
pub fn backbone_forward(
    x: &Tensor,
    cfg: &BackboneConfig,
    weights: &BackboneWeights,
    atm: &AtmosphericParams,
    caches: &mut BlockCaches,
    opts: &BlockOptions,
) -> Result<(Tensor, Vec<BlockTrace>)> {
    let (_, _, h, w) = x.dims4()?;
    let stride = cfg.total_downsample();
    if stride != BACKBONE_STRIDE {
        return Err(Error::invalid(format!(
            "backbone downsampling is {stride}x, expected {BACKBONE_STRIDE}x"
        )));
    }
    if caches.len() != weights.num_blocks() {
        *caches = BlockCaches::new(weights.num_blocks());
    }
    let pad_h = (stride - h % stride) % stride;
    let pad_w = (stride - w % stride) % stride;
    let mut feat = conv2d(
        &x.pad_bottom_right(pad_h, pad_w)?,
        &weights.stem_w,
        Some(&weights.stem_b),
        1,
        1,
    )?;
    let mut traces = Vec::new();
    let mut slot = 0;
    for stage in &weights.stages {
        for block in &stage.blocks {
            let (y, t) = pa_stb_forward(&feat, block, atm, &mut caches.slots[slot], opts)?;
            feat = y;
            traces.push(t);
            slot += 1;
        }
        feat = conv2d(&feat, &stage.down_w, Some(&stage.down_b), 2, 1)?;
    }
    Ok((feat, traces))
}
