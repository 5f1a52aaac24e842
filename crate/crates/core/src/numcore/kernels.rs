//! Forward and reverse rules for the layer primitives, on raw row-major
//! buffers. The tape in `graph` owns shapes and bookkeeping; everything here
//! is plain arithmetic.

use crate::error::{Error, Result};
use crate::numcore::element::{lit, Element};
use crate::numcore::par;

/// Floor applied to per-channel standard deviations.
pub const EPS_STD: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let &[batch, in_ch, in_h, in_w] = x else {
            return Err(Error::shape(format!("conv2d input must be 4-d, got {x:?}")));
        };
        let &[out_ch, w_in, kh, kw] = w else {
            return Err(Error::shape(format!("conv2d weight must be 4-d, got {w:?}")));
        };
        if w_in != in_ch || kh != kw || stride == 0 {
            return Err(Error::shape(format!(
                "conv2d weight {w:?} incompatible with input {x:?} (stride {stride})"
            )));
        }
        if in_h + 2 * pad < kh || in_w + 2 * pad < kw {
            return Err(Error::shape(format!("kernel {kh} larger than padded input {x:?}")));
        }
        Ok(ConvGeom {
            batch,
            in_ch,
            in_h,
            in_w,
            out_ch,
            kernel: kh,
            stride,
            pad,
            out_h: (in_h + 2 * pad - kh) / stride + 1,
            out_w: (in_w + 2 * pad - kw) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_item(&self) -> usize {
        self.in_ch * self.in_h * self.in_w
    }

    fn out_item(&self) -> usize {
        self.out_ch * self.out_h * self.out_w
    }

    /// Input pixel read by (channel-kernel row, output position), if inside.
    #[inline]
    fn source(&self, ky: usize, kx: usize, oy: usize, ox: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.stride + ky).checked_sub(self.pad)?;
        let ix = (ox * self.stride + kx).checked_sub(self.pad)?;
        (iy < self.in_h && ix < self.in_w).then_some((iy, ix))
    }
}

fn im2col<T: Element>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let k = g.kernel;
    let ncol = g.col_cols();
    for c in 0..g.in_ch {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        dst[oy * g.out_w + ox] = match g.source(ky, kx, oy, ox) {
                            Some((iy, ix)) => plane[iy * g.in_w + ix],
                            None => T::zero(),
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let k = g.kernel;
    let ncol = g.col_cols();
    for c in 0..g.in_ch {
        let plane = &mut dx[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        if let Some((iy, ix)) = g.source(ky, kx, oy, ox) {
                            plane[iy * g.in_w + ix] = plane[iy * g.in_w + ix] + src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Returns the output and, when `keep_cols`, the per-item unfolded input.
pub fn conv2d_forward<T: Element>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    b: &[T],
    keep_cols: bool,
) -> (Vec<T>, Vec<T>) {
    let (rows, ncol) = (g.col_rows(), g.col_cols());
    let csize = rows * ncol;
    let mut cols = vec![T::zero(); g.batch * csize];
    par::for_each_chunk(&mut cols, csize, |i, c| {
        im2col(g, &x[i * g.in_item()..(i + 1) * g.in_item()], c)
    });
    let mut out = vec![T::zero(); g.batch * g.out_item()];
    par::for_each_chunk(&mut out, g.out_item(), |i, o| {
        for (oc, chunk) in o.chunks_mut(ncol).enumerate() {
            chunk.fill(b[oc]);
        }
        T::gemm(
            g.out_ch,
            rows,
            ncol,
            T::one(),
            w,
            (rows, 1),
            &cols[i * csize..(i + 1) * csize],
            (ncol, 1),
            T::one(),
            o,
            (ncol, 1),
        );
    });
    if !keep_cols {
        cols = Vec::new();
    }
    (out, cols)
}

pub struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

pub fn conv2d_backward<T: Element>(
    g: &ConvGeom,
    dy: &[T],
    w: &[T],
    cols: &[T],
    want: (bool, bool, bool),
) -> ConvGrads<T> {
    let (rows, ncol) = (g.col_rows(), g.col_cols());
    let csize = rows * ncol;
    let dx = want.0.then(|| {
        let mut dx = vec![T::zero(); g.batch * g.in_item()];
        par::for_each_chunk(&mut dx, g.in_item(), |i, d| {
            let mut dcols = vec![T::zero(); csize];
            T::gemm(
                rows,
                g.out_ch,
                ncol,
                T::one(),
                w,
                (1, rows),
                &dy[i * g.out_item()..(i + 1) * g.out_item()],
                (ncol, 1),
                T::zero(),
                &mut dcols,
                (ncol, 1),
            );
            col2im(g, &dcols, d);
        });
        dx
    });
    let dw = want.1.then(|| {
        let partial = par::map_range(g.batch, |i| {
            let mut dw = vec![T::zero(); g.out_ch * rows];
            T::gemm(
                g.out_ch,
                ncol,
                rows,
                T::one(),
                &dy[i * g.out_item()..(i + 1) * g.out_item()],
                (ncol, 1),
                &cols[i * csize..(i + 1) * csize],
                (1, ncol),
                T::zero(),
                &mut dw,
                (rows, 1),
            );
            dw
        });
        sum_in_order(partial, g.out_ch * rows)
    });
    let db = want.2.then(|| {
        let mut db = vec![T::zero(); g.out_ch];
        for item in dy.chunks(g.out_item()) {
            for (oc, plane) in item.chunks(ncol).enumerate() {
                db[oc] = db[oc] + plane.iter().copied().sum::<T>();
            }
        }
        db
    });
    ConvGrads { dx, dw, db }
}

fn sum_in_order<T: Element>(parts: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); len];
    for p in parts {
        for (a, v) in acc.iter_mut().zip(p) {
            *a = *a + v;
        }
    }
    acc
}

/// Nearest-neighbour 2x upsampling of a (B, C, H, W) buffer.
pub fn upsample2_forward<T: Element>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Element>(dy: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let src = &dy[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let d = &mut dst[(y / 2) * w + xx / 2];
                *d = *d + src[y * ow + xx];
            }
        }
    }
    dx
}

/// `y = x w^T + b` with x (n, din), w (dout, din).
pub fn linear_forward<T: Element>(x: &[T], w: &[T], b: &[T], n: usize, din: usize, dout: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(n * dout);
    for _ in 0..n {
        y.extend_from_slice(b);
    }
    T::gemm(n, din, dout, T::one(), x, (din, 1), w, (1, din), T::one(), &mut y, (dout, 1));
    y
}

pub fn linear_backward<T: Element>(
    dy: &[T],
    x: &[T],
    w: &[T],
    (n, din, dout): (usize, usize, usize),
    want: (bool, bool, bool),
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let dx = want.0.then(|| {
        let mut dx = vec![T::zero(); n * din];
        T::gemm(n, dout, din, T::one(), dy, (dout, 1), w, (din, 1), T::zero(), &mut dx, (din, 1));
        dx
    });
    let dw = want.1.then(|| {
        let mut dw = vec![T::zero(); dout * din];
        T::gemm(dout, n, din, T::one(), dy, (1, dout), x, (din, 1), T::zero(), &mut dw, (din, 1));
        dw
    });
    let db = want.2.then(|| {
        let mut db = vec![T::zero(); dout];
        for row in dy.chunks(dout) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d = *d + v;
            }
        }
        db
    });
    (dx, dw, db)
}

/// Per-plane mean and population standard deviation (floored at `EPS_STD`).
/// Returns (means, stds, floored flags), one entry per plane.
pub fn plane_moments<T: Element>(x: &[T], plane: usize) -> (Vec<T>, Vec<T>, Vec<bool>) {
    let count: T = lit(plane as f64);
    let eps: T = lit(EPS_STD);
    let mut mu = Vec::with_capacity(x.len() / plane);
    let mut sd = Vec::with_capacity(x.len() / plane);
    let mut floored = Vec::with_capacity(x.len() / plane);
    for p in x.chunks(plane) {
        let m = p.iter().copied().sum::<T>() / count;
        let var = p.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / count;
        let s = var.sqrt();
        mu.push(m);
        floored.push(s < eps);
        sd.push(s.max(eps));
    }
    (mu, sd, floored)
}

/// Saved context of an AdaIN application.
pub struct AdainCache<T> {
    pub xhat: Vec<T>,
    pub std: Vec<T>,
    pub floored: Vec<bool>,
}

/// `sigma_t * (x - mu(x)) / sigma(x) + mu_t`, per plane.
pub fn adain_forward<T: Element>(x: &[T], plane: usize, mu_t: &[T], sigma_t: &[T]) -> (Vec<T>, AdainCache<T>) {
    let (mu, std, floored) = plane_moments(x, plane);
    let mut xhat = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    for (p, chunk) in x.chunks(plane).enumerate() {
        for &v in chunk {
            let h = (v - mu[p]) / std[p];
            xhat.push(h);
            y.push(sigma_t[p] * h + mu_t[p]);
        }
    }
    (y, AdainCache { xhat, std, floored })
}

pub fn adain_backward<T: Element>(
    dy: &[T],
    plane: usize,
    sigma_t: &[T],
    cache: &AdainCache<T>,
    want_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let planes = dy.len() / plane;
    let count: T = lit(plane as f64);
    let mut dmu = vec![T::zero(); planes];
    let mut dsig = vec![T::zero(); planes];
    let mut dx = want_dx.then(|| vec![T::zero(); dy.len()]);
    for p in 0..planes {
        let g = &dy[p * plane..(p + 1) * plane];
        let xh = &cache.xhat[p * plane..(p + 1) * plane];
        dmu[p] = g.iter().copied().sum();
        dsig[p] = g.iter().zip(xh).map(|(&a, &b)| a * b).sum();
        if let Some(dx) = dx.as_mut() {
            // d/dxhat = g * sigma_t
            let mean_d = dmu[p] * sigma_t[p] / count;
            let mean_dx = if cache.floored[p] {
                T::zero()
            } else {
                dsig[p] * sigma_t[p] / count
            };
            let inv = T::one() / cache.std[p];
            for i in 0..plane {
                dx[p * plane + i] = inv * (g[i] * sigma_t[p] - mean_d - xh[i] * mean_dx);
            }
        }
    }
    (dx, dmu, dsig)
}

/// Mean softmax cross-entropy over rows; returns (loss, row-wise softmax).
pub fn softmax_ce_forward<T: Element>(logits: &[T], labels: &[usize], k: usize) -> (T, Vec<T>) {
    let n = labels.len();
    let mut probs = Vec::with_capacity(logits.len());
    let mut total = T::zero();
    for (row, &y) in logits.chunks(k).zip(labels) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&v| (v - m).exp()).sum();
        let logz = z.ln() + m;
        total = total + (logz - row[y]);
        probs.extend(row.iter().map(|&v| (v - logz).exp()));
    }
    (total / lit(n as f64), probs)
}

pub fn softmax_ce_backward<T: Element>(probs: &[T], labels: &[usize], k: usize, g: T) -> Vec<T> {
    let scale = g / lit(labels.len() as f64);
    let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
    for (i, &y) in labels.iter().enumerate() {
        d[i * k + y] = d[i * k + y] - scale;
    }
    d
}

/// Mean over groups of the average distance of each member to its group mean.
///
/// Rows are laid out member-major: row `s * groups + p` is member `s` of
/// group `p`.
pub fn consistency_forward<T: Element>(z: &[T], groups: usize, members: usize, dim: usize) -> T {
    let (dev, _) = group_deviations(z, groups, members, dim);
    let total: T = dev.chunks(dim).map(norm).sum();
    total / lit((groups * members) as f64)
}

pub fn consistency_backward<T: Element>(z: &[T], groups: usize, members: usize, dim: usize, g: T) -> Vec<T> {
    let (dev, _) = group_deviations(z, groups, members, dim);
    let mut unit: Vec<T> = Vec::with_capacity(dev.len());
    for row in dev.chunks(dim) {
        let n = norm(row);
        if n > T::zero() {
            unit.extend(row.iter().map(|&v| v / n));
        } else {
            unit.extend(std::iter::repeat(T::zero()).take(dim));
        }
    }
    let scale = g / lit((groups * members) as f64);
    let inv_m: T = lit(1.0 / members as f64);
    let mut out = vec![T::zero(); z.len()];
    for p in 0..groups {
        for j in 0..dim {
            let mean_u = (0..members).map(|s| unit[(s * groups + p) * dim + j]).sum::<T>() * inv_m;
            for s in 0..members {
                let i = (s * groups + p) * dim + j;
                out[i] = scale * (unit[i] - mean_u);
            }
        }
    }
    out
}

fn group_deviations<T: Element>(z: &[T], groups: usize, members: usize, dim: usize) -> (Vec<T>, Vec<T>) {
    let inv_m: T = lit(1.0 / members as f64);
    let mut mean = vec![T::zero(); groups * dim];
    for s in 0..members {
        for p in 0..groups {
            for j in 0..dim {
                mean[p * dim + j] = mean[p * dim + j] + z[(s * groups + p) * dim + j];
            }
        }
    }
    mean.iter_mut().for_each(|m| *m = *m * inv_m);
    let mut dev = Vec::with_capacity(z.len());
    for s in 0..members {
        for p in 0..groups {
            for j in 0..dim {
                dev.push(z[(s * groups + p) * dim + j] - mean[p * dim + j]);
            }
        }
    }
    (dev, mean)
}

pub fn norm<T: Element>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_hand_values() {
        let (mu, sd, fl) = plane_moments(&[1.0f64, 3.0, 0.0, 0.0, 3.0, 3.0, 7.0, 7.0], 2);
        assert_eq!(mu, vec![2.0, 0.0, 3.0, 7.0]);
        assert_eq!(&sd[..1], &[1.0]);
        assert_eq!(sd[1], EPS_STD);
        assert_eq!(fl, vec![false, true, true, true]);
        let (mu, sd, _) = plane_moments(&[0.0f64, 0.0, 3.0, 3.0], 4);
        assert_eq!((mu[0], sd[0]), (1.5, 1.5));
    }

    #[test]
    fn identity_1x1_conv_is_noop() {
        let x: Vec<f64> = (0..2 * 3 * 4 * 4).map(|v| v as f64 * 0.1 - 1.0).collect();
        let g = ConvGeom::new(&[2, 3, 4, 4], &[3, 3, 1, 1], 1, 0).unwrap();
        let mut w = vec![0.0; 9];
        for c in 0..3 {
            w[c * 3 + c] = 1.0;
        }
        let (y, _) = conv2d_forward(&g, &x, &w, &[0.0; 3], false);
        assert_eq!(y, x);
    }

    #[test]
    fn strided_conv_geometry() {
        let g = ConvGeom::new(&[1, 3, 32, 32], &[8, 3, 3, 3], 2, 1).unwrap();
        assert_eq!((g.out_h, g.out_w), (16, 16));
        assert!(ConvGeom::new(&[1, 4, 8, 8], &[8, 3, 3, 3], 1, 1).is_err());
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let (loss, _) = softmax_ce_forward(&[0.0f64; 20], &[3, 7], 10);
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn consistency_hand_value() {
        // one group, rows (0,0) and (2,0)
        let l = consistency_forward(&[0.0f64, 0.0, 2.0, 0.0], 1, 2, 2);
        assert_eq!(l, 1.0);
    }
}
