use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Base window size for an `h × w` feature map:
/// `floor(min(h, w) / alpha) + beta·[min(h, w) > tau]`, at least 1.
pub fn compute_window_size(h: usize, w: usize, alpha: usize, beta: usize, tau: usize) -> usize {
    let m = h.min(w);
    let base = m / alpha.max(1) + if m > tau { beta } else { 0 };
    base.max(1)
}

/// Layout of a windowed feature map, sufficient to undo the partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowGeometry {
    pub w_base: usize,
    /// Side of each square window actually used.
    pub w_adapt: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl WindowGeometry {
    pub fn num_windows(&self) -> usize {
        self.batch * self.grid_h * self.grid_w
    }

    pub fn tokens_per_window(&self) -> usize {
        self.w_adapt * self.w_adapt
    }
}

/// `(w_base, w_adapt)` for a feature map: `w_adapt = min(w_base, h, w)`.
pub fn adapt_window(h: usize, w: usize, alpha: usize, beta: usize, tau: usize) -> (usize, usize) {
    let base = compute_window_size(h, w, alpha, beta, tau);
    (base, base.min(h).min(w).max(1))
}

/// Split `x` (`N×C×H×W`) into `w × w` windows after zero-padding the bottom
/// and right edges, giving tokens shaped `(num_windows, w², C)`.
///
/// Windows are ordered batch-major, then row, then column; tokens inside a
/// window are row-major.
pub fn window_partition(x: &Tensor, w: usize) -> Result<(Tensor, WindowGeometry)> {
    if w == 0 {
        return Err(Error::invalid("window size must be positive"));
    }
    let (n, c, h, wd) = x.dims4()?;
    let pad_h = (w - h % w) % w;
    let pad_w = (w - wd % w) % w;
    let (gh, gw) = ((h + pad_h) / w, (wd + pad_w) / w);
    let geom = WindowGeometry {
        w_base: w,
        w_adapt: w,
        grid_h: gh,
        grid_w: gw,
        pad_h,
        pad_w,
        batch: n,
        channels: c,
        height: h,
        width: wd,
    };
    let mut out = vec![0.0f32; n * gh * gw * w * w * c];
    let mut i = 0;
    for ni in 0..n {
        for wy in 0..gh {
            for wx in 0..gw {
                for ty in 0..w {
                    for tx in 0..w {
                        let (y, xx) = (wy * w + ty, wx * w + tx);
                        if y < h && xx < wd {
                            for ci in 0..c {
                                out[i + ci] = x.at4(ni, ci, y, xx);
                            }
                        }
                        i += c;
                    }
                }
            }
        }
    }
    Ok((Tensor::new(&[n * gh * gw, w * w, c], out)?, geom))
}

/// Inverse of [`window_partition`], dropping the padding.
pub fn window_merge(windows: &Tensor, geom: &WindowGeometry) -> Result<Tensor> {
    let w = geom.w_adapt;
    let expected = [geom.num_windows(), w * w, geom.channels];
    if windows.shape() != expected {
        return Err(Error::shape(format!(
            "window_merge: tokens {:?} do not match geometry {expected:?}",
            windows.shape()
        )));
    }
    if (geom.height + geom.pad_h) != geom.grid_h * w || (geom.width + geom.pad_w) != geom.grid_w * w {
        return Err(Error::shape("window_merge: inconsistent geometry padding"));
    }
    let (c, gh, gw) = (geom.channels, geom.grid_h, geom.grid_w);
    let d = windows.data();
    Ok(Tensor::from_fn4(
        [geom.batch, c, geom.height, geom.width],
        |ni, ci, y, x| {
            let (wy, ty, wx, tx) = (y / w, y % w, x / w, x % w);
            let win = (ni * gh + wy) * gw + wx;
            d[(win * w * w + ty * w + tx) * c + ci]
        },
    ))
}
