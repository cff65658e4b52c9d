//! Convolutions, pooling and dense layers.
//!
//! All reductions accumulate in `f64` in a fixed order so results are
//! independent of how callers schedule work.

use super::Tensor;
use crate::error::{Error, Result};

fn check_bias(bias: Option<&Tensor>, out_c: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.len() != out_c {
            return Err(Error::shape(format!(
                "bias length {} does not match out-channels {out_c}",
                b.len()
            )));
        }
    }
    Ok(())
}

fn out_extent(dim: &str, size: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = size + 2 * padding;
    if padded < k {
        return Err(Error::shape(format!(
            "{dim}: padded extent {padded} smaller than kernel extent {k}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Standard 2-D cross-correlation with zero padding.
///
/// `kernel` is `(out_c, in_c, kh, kw)`; output extents are
/// `floor((H + 2p - kh) / stride) + 1`.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let x: Vec<f64> = input.data().iter().map(|&v| v as f64).collect();
    let (out, dims) = conv2d_f64(&x, [n, c, h, w], kernel, bias, stride, padding)?;
    Tensor::new(&dims, out.into_iter().map(|v| v as f32).collect())
}

/// [`conv2d`] on an `f64` NCHW buffer with extents `dims`, keeping `f64` output.
pub(crate) fn conv2d_f64(
    x: &[f64],
    dims: [usize; 4],
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<(Vec<f64>, [usize; 4])> {
    let [n, in_c, h, w] = dims;
    debug_assert_eq!(x.len(), n * in_c * h * w);
    let (out_c, k_in, kh, kw) = kernel
        .dims4()
        .map_err(|_| Error::shape(format!("kernel must be rank 4, got {:?}", kernel.shape())))?;
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    if k_in != in_c {
        return Err(Error::shape(format!(
            "in-channels: input has {in_c} channels but kernel expects {k_in}"
        )));
    }
    check_bias(bias, out_c)?;
    let oh = out_extent("height", h, kh, stride, padding)?;
    let ow = out_extent("width", w, kw, stride, padding)?;

    // Each output is `bias + Σ_{ic, ky, kx} k·x` accumulated in that order;
    // padded taps contribute exact zeros.
    let plen = in_c * kh * kw;
    let kd: Vec<f64> = kernel.data().iter().map(|&v| v as f64).collect();
    let bd: Vec<f64> = (0..out_c).map(|o| bias.map_or(0.0, |b| b.data()[o] as f64)).collect();
    let area = oh * ow;
    let mut out = vec![0.0f64; n * out_c * area];
    let mut patch = vec![0.0f64; plen];
    for ni in 0..n {
        let img = &x[ni * in_c * h * w..][..in_c * h * w];
        let dst = &mut out[ni * out_c * area..][..out_c * area];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut j = 0;
                for ic in 0..in_c {
                    let plane = &img[ic * h * w..][..h * w];
                    for ky in 0..kh {
                        let iy = (oy * stride + ky).wrapping_sub(padding);
                        for kx in 0..kw {
                            let ix = (ox * stride + kx).wrapping_sub(padding);
                            patch[j] = if iy < h && ix < w { plane[iy * w + ix] } else { 0.0 };
                            j += 1;
                        }
                    }
                }
                let p = oy * ow + ox;
                let mut oc = 0;
                while oc + 4 <= out_c {
                    let k0 = &kd[oc * plen..][..plen];
                    let k1 = &kd[(oc + 1) * plen..][..plen];
                    let k2 = &kd[(oc + 2) * plen..][..plen];
                    let k3 = &kd[(oc + 3) * plen..][..plen];
                    let (mut a0, mut a1, mut a2, mut a3) = (bd[oc], bd[oc + 1], bd[oc + 2], bd[oc + 3]);
                    for j in 0..plen {
                        let v = patch[j];
                        a0 += k0[j] * v;
                        a1 += k1[j] * v;
                        a2 += k2[j] * v;
                        a3 += k3[j] * v;
                    }
                    dst[oc * area + p] = a0;
                    dst[(oc + 1) * area + p] = a1;
                    dst[(oc + 2) * area + p] = a2;
                    dst[(oc + 3) * area + p] = a3;
                    oc += 4;
                }
                for oc in oc..out_c {
                    let kr = &kd[oc * plen..][..plen];
                    let mut a = bd[oc];
                    for (kv, v) in kr.iter().zip(&patch) {
                        a += kv * v;
                    }
                    dst[oc * area + p] = a;
                }
            }
        }
    }
    Ok((out, [n, out_c, oh, ow]))
}

/// Depthwise convolution, stride 1: channel `c` is filtered only by kernel `c`.
///
/// `kernel` is `(C, 1, kh, kw)`.
pub fn depthwise_conv2d(input: &Tensor, kernel: &Tensor, padding: usize) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let (kc, one, kh, kw) = kernel.dims4()?;
    if one != 1 {
        return Err(Error::shape(format!(
            "depthwise kernel must have shape (C, 1, kh, kw), got {:?}",
            kernel.shape()
        )));
    }
    if kc != c {
        return Err(Error::shape(format!(
            "channels: input has {c} but depthwise kernel has {kc}"
        )));
    }
    let oh = out_extent("height", h, kh, 1, padding)?;
    let ow = out_extent("width", w, kw, 1, padding)?;
    let x = input.data();
    let k = kernel.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for ni in 0..n {
        for ci in 0..c {
            let plane = &x[(ni * c + ci) * h * w..][..h * w];
            let kern = &k[ci * kh * kw..][..kh * kw];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f64;
                    for ky in 0..kh {
                        let iy = (oy + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox + kx) as isize - padding as isize;
                            if ix >= 0 && ix < w as isize {
                                acc += kern[ky * kw + kx] as f64
                                    * plane[iy as usize * w + ix as usize] as f64;
                            }
                        }
                    }
                    out.push(acc as f32);
                }
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out)
}

/// Per-channel spatial mean, `N×C×1×1`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if h == 0 || w == 0 {
        return Err(Error::shape("global_avg_pool: zero spatial extent"));
    }
    let area = h * w;
    let out = x
        .data()
        .chunks_exact(area)
        .map(|plane| (plane.iter().map(|&v| v as f64).sum::<f64>() / area as f64) as f32)
        .collect();
    Tensor::new(&[n, c, 1, 1], out)
}

/// Same-extent minimum filter with edge replication.
///
/// The window covers `[i - (k-1)/2, i - (k-1)/2 + k - 1]` along each axis.
pub fn min_pool2d(x: &Tensor, window: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if window == 0 {
        return Err(Error::invalid("min_pool2d: window must be positive"));
    }
    if window > h && window > w {
        return Err(Error::invalid(format!(
            "min_pool2d: window {window} larger than both extents {h}x{w}"
        )));
    }
    let before = (window - 1) / 2;
    let clamp = |i: usize, k: usize, size: usize| -> usize {
        (i + k).saturating_sub(before).min(size - 1)
    };
    // Separable: rows then columns.
    let mut rows = vec![0.0f32; n * c * h * w];
    for (plane, dst) in x.data().chunks_exact(h * w).zip(rows.chunks_exact_mut(h * w)) {
        for y in 0..h {
            for xi in 0..w {
                let mut m = f32::INFINITY;
                for k in 0..window {
                    m = m.min(plane[y * w + clamp(xi, k, w)]);
                }
                dst[y * w + xi] = m;
            }
        }
    }
    let mut out = vec![0.0f32; n * c * h * w];
    for (plane, dst) in rows.chunks_exact(h * w).zip(out.chunks_exact_mut(h * w)) {
        for y in 0..h {
            for xi in 0..w {
                let mut m = f32::INFINITY;
                for k in 0..window {
                    m = m.min(plane[clamp(y, k, h) * w + xi]);
                }
                dst[y * w + xi] = m;
            }
        }
    }
    Tensor::new(&[n, c, h, w], out)
}

/// Dense layer over the last axis: `y = x Wᵀ + b` with `W` shaped `(out, in)`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let last = *x.shape().last().ok_or_else(|| Error::shape("linear: scalar input"))?;
    let x64: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let out = linear_f64(&x64, last, weight, bias)?;
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = weight.shape()[0];
    Tensor::new(&shape, out.into_iter().map(|v| v as f32).collect())
}

/// [`linear`] over `f64` rows of length `in_len`, keeping `f64` output.
pub(crate) fn linear_f64(
    x: &[f64],
    in_len: usize,
    weight: &Tensor,
    bias: Option<&Tensor>,
) -> Result<Vec<f64>> {
    let [out_f, in_f] = weight.shape()[..] else {
        return Err(Error::shape(format!(
            "linear weight must be (out, in), got {:?}",
            weight.shape()
        )));
    };
    if in_len != in_f || in_f == 0 {
        return Err(Error::shape(format!(
            "linear: input features {in_len} but weight expects {in_f}"
        )));
    }
    check_bias(bias, out_f)?;
    let wd: Vec<f64> = weight.data().iter().map(|&v| v as f64).collect();
    let bd: Vec<f64> = (0..out_f).map(|o| bias.map_or(0.0, |b| b.data()[o] as f64)).collect();
    let mut out = vec![0.0f64; x.len() / in_f * out_f];
    for (row, dst) in x.chunks_exact(in_f).zip(out.chunks_exact_mut(out_f)) {
        // Four independent output accumulators; each sums in input order.
        let mut o = 0;
        while o + 4 <= out_f {
            let w0 = &wd[o * in_f..][..in_f];
            let w1 = &wd[(o + 1) * in_f..][..in_f];
            let w2 = &wd[(o + 2) * in_f..][..in_f];
            let w3 = &wd[(o + 3) * in_f..][..in_f];
            let (mut a0, mut a1, mut a2, mut a3) = (bd[o], bd[o + 1], bd[o + 2], bd[o + 3]);
            for (j, &v) in row.iter().enumerate() {
                a0 += v * w0[j];
                a1 += v * w1[j];
                a2 += v * w2[j];
                a3 += v * w3[j];
            }
            dst[o] = a0;
            dst[o + 1] = a1;
            dst[o + 2] = a2;
            dst[o + 3] = a3;
            o += 4;
        }
        for o in o..out_f {
            let mut acc = bd[o];
            for (a, w) in row.iter().zip(&wd[o * in_f..][..in_f]) {
                acc += a * w;
            }
            dst[o] = acc;
        }
    }
    Ok(out)
}
