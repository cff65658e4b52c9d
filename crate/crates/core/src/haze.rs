//! Atmospheric scattering model `I = J·t + A·(1 − t)` and its inverse.
//!
//! Transmission maps are single-channel and broadcast over the color
//! channels; atmospheric light is one value per color channel and broadcast
//! over space.

use crate::error::{Error, Result};
use crate::numerics::{min_pool2d, Tensor};

/// Default lower bound on transmission when inverting the scattering model.
pub const DEFAULT_T_MIN: f32 = 0.1;

/// A clean image, its transmission map and the global airlight.
#[derive(Debug, Clone, PartialEq)]
pub struct HazeScene {
    clean: Tensor,
    transmission: Tensor,
    atmospheric_light: [f32; 3],
    t_min: f32,
}

impl HazeScene {
    /// Builds a scene, clamping the transmission into `[t_min, 1]`.
    pub fn new(
        clean: Tensor,
        transmission: Tensor,
        atmospheric_light: [f32; 3],
        t_min: f32,
    ) -> Result<Self> {
        if !(t_min > 0.0 && t_min <= 1.0) {
            return Err(Error::invalid(format!("t_min {t_min} must be in (0, 1]")));
        }
        check_rgb_and_map(&clean, &transmission)?;
        if atmospheric_light.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::invalid(format!(
                "atmospheric light {atmospheric_light:?} outside [0, 1]"
            )));
        }
        let transmission = transmission.map(|t| t.clamp(t_min, 1.0));
        Ok(Self {
            clean,
            transmission,
            atmospheric_light,
            t_min,
        })
    }

    pub fn clean(&self) -> &Tensor {
        &self.clean
    }

    pub fn transmission(&self) -> &Tensor {
        &self.transmission
    }

    pub fn atmospheric_light(&self) -> [f32; 3] {
        self.atmospheric_light
    }

    pub fn t_min(&self) -> f32 {
        self.t_min
    }
}

fn check_rgb_and_map(image: &Tensor, map: &Tensor) -> Result<()> {
    let (n, c, h, w) = image.dims4()?;
    if c != 3 {
        return Err(Error::shape(format!("expected 3 color channels, got {c}")));
    }
    let (mn, mc, mh, mw) = map.dims4()?;
    if mc != 1 {
        return Err(Error::shape(format!(
            "transmission must be single-channel, got {mc} channels"
        )));
    }
    if (mn, mh, mw) != (n, h, w) {
        return Err(Error::shape(format!(
            "transmission extents {mn}x{mh}x{mw} differ from image {n}x{h}x{w}"
        )));
    }
    Ok(())
}

/// `clean·t + A·(1 − t)` per pixel, with `t` broadcast over channels.
///
/// No clamping is applied; for `t ∈ [0, 1]` the result is a convex
/// combination of `clean` and `A`.
pub fn apply_scattering(clean: &Tensor, transmission: &Tensor, a: [f32; 3]) -> Result<Tensor> {
    check_rgb_and_map(clean, transmission)?;
    let (n, c, h, w) = clean.dims4()?;
    let area = h * w;
    let t = transmission.data();
    let mut out = clean.data().to_vec();
    for ni in 0..n {
        for ci in 0..c {
            let plane = &mut out[(ni * c + ci) * area..][..area];
            let tp = &t[ni * area..][..area];
            let av = a[ci] as f64;
            for (v, &tv) in plane.iter_mut().zip(tp) {
                let tv = tv as f64;
                *v = (*v as f64 * tv + av * (1.0 - tv)) as f32;
            }
        }
    }
    Tensor::new(clean.shape(), out)
}

/// Render the hazy observation of a scene.
pub fn synthesize_haze(scene: &HazeScene) -> Result<Tensor> {
    apply_scattering(&scene.clean, &scene.transmission, scene.atmospheric_light)
}

/// Recover scene radiance: `(I − A·(1 − t')) / t'` with `t' = max(t, t_min)`,
/// clamped to `[0, 1]`.
pub fn invert_haze(
    hazy: &Tensor,
    transmission: &Tensor,
    a: [f32; 3],
    t_min: f32,
) -> Result<Tensor> {
    if !(t_min > 0.0) {
        return Err(Error::invalid(format!("t_min {t_min} must be positive")));
    }
    check_rgb_and_map(hazy, transmission)?;
    let (n, c, h, w) = hazy.dims4()?;
    let area = h * w;
    let t = transmission.data();
    let mut out = hazy.data().to_vec();
    for ni in 0..n {
        for ci in 0..c {
            let plane = &mut out[(ni * c + ci) * area..][..area];
            let tp = &t[ni * area..][..area];
            let av = a[ci] as f64;
            for (v, &tv) in plane.iter_mut().zip(tp) {
                let tf = tv.max(t_min) as f64;
                let j = (*v as f64 - av * (1.0 - tf)) / tf;
                *v = j.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Tensor::new(hazy.shape(), out)
}

/// Scene reflectance under an estimated transmission map.
///
/// Same computation as [`invert_haze`]; kept separate so callers name the
/// estimate they are using.
pub fn estimate_scene_reflectance(
    hazy: &Tensor,
    transmission_hat: &Tensor,
    a: [f32; 3],
    t_min: f32,
) -> Result<Tensor> {
    invert_haze(hazy, transmission_hat, a, t_min)
}

/// Classical dark channel: min over RGB, then a `patch × patch` min filter.
pub fn classical_dark_channel(image: &Tensor, patch: usize) -> Result<Tensor> {
    let (n, c, h, w) = image.dims4()?;
    if c != 3 {
        return Err(Error::shape(format!("dark channel needs 3 channels, got {c}")));
    }
    let per_pixel = Tensor::from_fn4([n, 1, h, w], |ni, _, y, x| {
        (0..3).map(|ci| image.at4(ni, ci, y, x)).fold(f32::INFINITY, f32::min)
    });
    min_pool2d(&per_pixel, patch)
}
