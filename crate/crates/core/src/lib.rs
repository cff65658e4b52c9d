//! Atmosphere-aware single-image dehazing.
//!
//! The pipeline estimates atmospheric parameters (dark channel, airlight,
//! scattering coefficient and normalization factors), encodes the image
//! with windowed-attention blocks whose normalization and KV-cache retention
//! follow those parameters, and reconstructs the haze-free image through a
//! transmission-weighted upsampling and a global residual. An attribution
//! module integrates loss gradients along a haze-interpolating path.
//!
//! All tensors are `f32` in NCHW layout; reductions accumulate in `f64`.

pub mod attention;
pub mod attribution;
pub mod bench_cache;
pub mod config;
pub mod error;
pub mod estimator;
pub mod haze;
pub mod io;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pa_stb;
pub mod reconstruction;
pub mod selftest;
pub mod weights;

pub use attention::{CacheUpdate, KVCache, WindowGeometry};
pub use attribution::{AttributionMap, GradientProvider, PathConfig};
pub use config::ModelConfig;
pub use error::{Error, Result};
pub use estimator::{AtmosphericParams, ScatteringCoeff};
pub use haze::HazeScene;
pub use metrics::LossWeights;
pub use model::{DehazeOutput, Model};
pub use numerics::Tensor;
pub use weights::WeightStore;
