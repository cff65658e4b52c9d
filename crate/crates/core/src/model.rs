//! The assembled dehazing network.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::estimator::{estimate, AtmosphericParams, EstimatorOptions, EstimatorWeights};
use crate::numerics::Tensor;
use crate::pa_stb::{backbone_forward, BackboneConfig, BackboneWeights, BlockCaches, BlockOptions, BlockTrace};
use crate::reconstruction::{clamp_unit, compose_output, physics_upsample, refine_features, ReconWeights};
use crate::weights::{init_from_specs, ParamSpec, WeightStore};

/// Every parameter of the model, in storage order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut v = EstimatorWeights::param_specs(cfg);
    v.extend(BackboneWeights::param_specs(cfg));
    v.extend(ReconWeights::param_specs(cfg));
    v
}

/// Seeded uniform fan-in initialization of the full model.
pub fn init_weights(cfg: &ModelConfig, seed: u64) -> WeightStore {
    init_from_specs(&param_specs(cfg), seed)
}

/// A store where every learnable tensor is zero and batch-norm running
/// variances are one.
pub fn zero_weights(cfg: &ModelConfig) -> WeightStore {
    let mut store = init_weights(cfg, 0);
    store.map_where(|n| !n.ends_with("running_var"), |_| 0.0);
    store
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DehazeOutput {
    /// `Ĵ` before clamping.
    pub raw: Tensor,
    pub atmosphere: AtmosphericParams,
    /// Encoder output `F_d`.
    pub features: Tensor,
    pub refined: Tensor,
    pub upsampled: Tensor,
    pub traces: Vec<BlockTrace>,
}

impl DehazeOutput {
    /// `Ĵ` clamped to `[0, 1]`.
    pub fn image(&self) -> Tensor {
        clamp_unit(&self.raw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    cfg: ModelConfig,
    estimator: EstimatorWeights,
    backbone: BackboneWeights,
    recon: ReconWeights,
}

fn check_image(image: &Tensor) -> Result<()> {
    let (n, c, h, w) = image.dims4()?;
    if n != 1 || c != 3 || h == 0 || w == 0 {
        return Err(Error::shape(format!(
            "model expects a 1x3xHxW image, got {:?}",
            image.shape()
        )));
    }
    if let Some((i, &v)) = image.data().iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            location: format!("input element {i}"),
            value: v as f64,
        });
    }
    Ok(())
}

impl Model {
    pub fn from_store(store: &WeightStore, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            estimator: EstimatorWeights::from_store(store, cfg)?,
            backbone: BackboneWeights::from_store(store, cfg)?,
            recon: ReconWeights::from_store(store, cfg)?,
        })
    }

    /// Model with seeded weights.
    pub fn seeded(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        Self::from_store(&init_weights(cfg, seed), cfg)
    }

    pub fn zeroed(cfg: &ModelConfig) -> Result<Self> {
        Self::from_store(&zero_weights(cfg), cfg)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn estimator(&self) -> &EstimatorWeights {
        &self.estimator
    }

    pub fn backbone(&self) -> &BackboneWeights {
        &self.backbone
    }

    pub fn recon(&self) -> &ReconWeights {
        &self.recon
    }

    /// Empty cache slots for every block.
    pub fn new_caches(&self) -> BlockCaches {
        BlockCaches::new(self.backbone.num_blocks())
    }

    /// Atmospheric parameters of `image`.
    pub fn atmosphere(&self, image: &Tensor) -> Result<AtmosphericParams> {
        check_image(image)?;
        estimate(image, &self.estimator, EstimatorOptions::from(&self.cfg))
    }

    /// Forward pass reusing (and updating) `caches`.
    pub fn forward(&self, image: &Tensor, caches: &mut BlockCaches) -> Result<DehazeOutput> {
        let atm = self.atmosphere(image)?;
        let (_, _, h, w) = image.dims4()?;
        let (features, traces) = backbone_forward(
            image,
            &BackboneConfig::from(&self.cfg),
            &self.backbone,
            &atm,
            caches,
            &BlockOptions::from(&self.cfg),
        )?;
        let refined = refine_features(&features, &self.recon)?;
        let upsampled = physics_upsample(
            &refined,
            atm.transmission(),
            atm.atmospheric_light(),
            h,
            w,
        )?;
        let raw = compose_output(&upsampled, image, &self.recon)?;
        Ok(DehazeOutput {
            raw,
            atmosphere: atm,
            features,
            refined,
            upsampled,
            traces,
        })
    }

    /// Forward pass with fresh caches; deterministic in `image`.
    pub fn dehaze(&self, image: &Tensor) -> Result<DehazeOutput> {
        self.forward(image, &mut self.new_caches())
    }

    /// Run overlapping `tile × tile` crops in raster order with caches that
    /// persist across tiles, averaging overlaps. Returns the clamped image.
    pub fn dehaze_tiled(&self, image: &Tensor, tile: usize, overlap: usize) -> Result<Tensor> {
        check_image(image)?;
        if tile == 0 || overlap >= tile {
            return Err(Error::invalid(format!(
                "tile {tile} must be positive and larger than overlap {overlap}"
            )));
        }
        let (_, _, h, w) = image.dims4()?;
        let starts = |len: usize| -> Vec<usize> {
            if len <= tile {
                return vec![0];
            }
            let step = tile - overlap;
            let mut s: Vec<usize> = (0..).map(|i| i * step).take_while(|&p| p + tile < len).collect();
            s.push(len - tile);
            s
        };
        let mut acc = vec![0.0f64; 3 * h * w];
        let mut hits = vec![0u32; h * w];
        let mut caches = self.new_caches();
        for &y0 in &starts(h) {
            for &x0 in &starts(w) {
                let (th, tw) = (tile.min(h), tile.min(w));
                let crop = Tensor::from_fn4([1, 3, th, tw], |_, c, y, x| image.at4(0, c, y0 + y, x0 + x));
                let out = self.forward(&crop, &mut caches)?.raw;
                for y in 0..th {
                    for x in 0..tw {
                        let p = (y0 + y) * w + x0 + x;
                        hits[p] += 1;
                        for c in 0..3 {
                            acc[c * h * w + p] += out.at4(0, c, y, x) as f64;
                        }
                    }
                }
            }
        }
        let data = acc
            .iter()
            .enumerate()
            .map(|(i, &v)| ((v / hits[i % (h * w)] as f64) as f32).clamp(0.0, 1.0))
            .collect();
        Tensor::new(&[1, 3, h, w], data)
    }
}
