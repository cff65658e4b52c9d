use super::cache::KVCache;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Learned relative-position bias, one table per head.
///
/// The table covers offsets in `[-(m-1), m-1]` along each axis, `m` being
/// the table window. Windows larger than `m` clamp their offsets onto the
/// table edge.
#[derive(Debug, Clone, PartialEq)]
pub struct RelPosBias {
    table: Tensor,
    table_window: usize,
}

impl RelPosBias {
    /// `table` has shape `(heads, (2m-1)²)`.
    pub fn new(table: Tensor, table_window: usize) -> Result<Self> {
        let side = 2 * table_window - 1;
        match table.shape() {
            [_, n] if *n == side * side => Ok(Self {
                table,
                table_window,
            }),
            s => Err(Error::shape(format!(
                "relative bias table {s:?} does not fit window {table_window}"
            ))),
        }
    }

    pub fn zeros(heads: usize, table_window: usize) -> Self {
        let side = 2 * table_window - 1;
        Self {
            table: Tensor::zeros(&[heads, side * side]),
            table_window,
        }
    }

    pub fn heads(&self) -> usize {
        self.table.shape()[0]
    }

    /// Dense `(w², w²)` bias matrix `B̂` for `head` in a `w × w` window.
    pub fn matrix(&self, head: usize, w: usize) -> Vec<f32> {
        let m = self.table_window as isize;
        let side = (2 * m - 1) as usize;
        let row = &self.table.data()[head * side * side..][..side * side];
        let n = w * w;
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            let (yi, xi) = ((i / w) as isize, (i % w) as isize);
            for j in 0..n {
                let (yj, xj) = ((j / w) as isize, (j % w) as isize);
                let dy = (yi - yj).clamp(1 - m, m - 1) + m - 1;
                let dx = (xi - xj).clamp(1 - m, m - 1) + m - 1;
                out.push(row[dy as usize * side + dx as usize]);
            }
        }
        out
    }
}

/// Window attention over `[K_cache; K]` and `[V_cache; V]`.
///
/// `q`, `k`, `v` are `(num_windows, n, d)`; the cache holds `(L_c, d)` rows
/// shared by every window. The relative-position bias applies to the
/// current-window columns only; cached columns get no bias. Each head works
/// on a contiguous `d / heads` slice and uses scale `1/sqrt(d / heads)`.
pub fn cached_window_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    cache: Option<&KVCache>,
    bias: Option<&RelPosBias>,
    heads: usize,
) -> Result<Tensor> {
    let [nw, n, d] = q.shape()[..] else {
        return Err(Error::shape(format!(
            "attention: q must be (windows, tokens, dim), got {:?}",
            q.shape()
        )));
    };
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(Error::shape(format!(
            "attention: q {:?}, k {:?}, v {:?} must match",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::shape(format!("attention: {heads} heads do not divide dim {d}")));
    }
    let (ck, cv, lc) = match cache {
        Some(c) if !c.is_empty() => {
            if c.dim() != d {
                return Err(Error::shape(format!(
                    "attention: cache dim {} vs token dim {d}",
                    c.dim()
                )));
            }
            (c.keys(), c.values(), c.len())
        }
        _ => (&[][..], &[][..], 0),
    };
    let w = (n as f64).sqrt().round() as usize;
    let bias_mats: Option<Vec<Vec<f32>>> = match bias {
        Some(b) => {
            if w * w != n {
                return Err(Error::shape(format!("attention: {n} tokens is not a square window")));
            }
            if b.heads() != heads {
                return Err(Error::shape(format!(
                    "attention: bias has {} heads, expected {heads}",
                    b.heads()
                )));
            }
            Some((0..heads).map(|h| b.matrix(h, w)).collect())
        }
        None => None,
    };

    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let total = lc + n;
    let mut out = vec![0.0f32; nw * n * d];
    let mut logits = vec![0.0f64; total];
    for win in 0..nw {
        let base = win * n * d;
        for h in 0..heads {
            let off = h * dh;
            for i in 0..n {
                let qi = &qd[base + i * d + off..][..dh];
                let key_row = |j: usize| -> &[f32] {
                    if j < lc {
                        &ck[j * d + off..][..dh]
                    } else {
                        &kd[base + (j - lc) * d + off..][..dh]
                    }
                };
                let mut max = f64::NEG_INFINITY;
                for (j, l) in logits.iter_mut().enumerate() {
                    let kj = key_row(j);
                    let dot: f64 = qi.iter().zip(kj).map(|(&a, &b)| a as f64 * b as f64).sum();
                    let mut z = dot * scale;
                    if j >= lc {
                        if let Some(m) = &bias_mats {
                            z += m[h][i * n + (j - lc)] as f64;
                        }
                    }
                    *l = z;
                    max = max.max(z);
                }
                let mut sum = 0.0;
                for l in logits.iter_mut() {
                    *l = (*l - max).exp();
                    sum += *l;
                }
                let dst = &mut out[base + i * d + off..][..dh];
                for (c, o) in dst.iter_mut().enumerate() {
                    let mut acc = 0.0f64;
                    for (j, p) in logits.iter().enumerate() {
                        let vj = if j < lc {
                            cv[j * d + off + c]
                        } else {
                            vd[base + (j - lc) * d + off + c]
                        };
                        acc += p * vj as f64;
                    }
                    *o = (acc / sum) as f32;
                }
            }
        }
    }
    Tensor::new(&[nw, n, d], out)
}
