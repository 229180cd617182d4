//! Gaussian-window SSIM over interleaved RGB buffers, with its gradient.
//!
//! Windows are evaluated at valid positions only (no padding); the result is
//! the mean over positions and channels.

use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
const C1: f64 = SSIM_K1 * SSIM_K1;
const C2: f64 = SSIM_K2 * SSIM_K2;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable valid correlation: `(w, h)` plane → `(w−K+1, h−K+1)`.
///
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let t = &mut tmp[y * ow..(y + 1) * ow];
        for (x, t) in t.iter_mut().enumerate() {
            *t = dot(k, &row[x..x + SSIM_WINDOW]);
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        let o = &mut out[y * ow..(y + 1) * ow];
        for (j, kj) in k.iter().enumerate() {
            let r = &tmp[(y + j) * ow..(y + j + 1) * ow];
            o.iter_mut().zip(r).for_each(|(o, v)| *o += kj * v);
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: `(ow, oh)` map → `(w, h)` plane.
fn filter_valid_adjoint(map: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        let m = &map[y * ow..(y + 1) * ow];
        for (j, kj) in k.iter().enumerate() {
            let t = &mut tmp[(y + j) * ow..(y + j + 1) * ow];
            t.iter_mut().zip(m).for_each(|(t, v)| *t += kj * v);
        }
    }
    // out[x] = Σ_j k[j]·t[x − j]: a correlation of the zero-padded row with
    // the reversed kernel.
    let mut rev = *k;
    rev.reverse();
    let mut padded = vec![0.0; ow + 2 * (n - 1)];
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        padded[n - 1..n - 1 + ow].copy_from_slice(&tmp[y * ow..(y + 1) * ow]);
        let o = &mut out[y * w..(y + 1) * w];
        for (x, o) in o.iter_mut().enumerate() {
            *o = dot(&rev, &padded[x..x + SSIM_WINDOW]);
        }
    }
    out
}

#[inline]
fn dot(k: &[f64; SSIM_WINDOW], v: &[f64]) -> f64 {
    let v: &[f64; SSIM_WINDOW] = v.try_into().expect("window length");
    let mut acc = 0.0;
    for j in 0..SSIM_WINDOW {
        acc += k[j] * v[j];
    }
    acc
}

fn check_dims(a: &[f64], b: &[f64], w: usize, h: usize) -> Result<()> {
    if a.len() != 3 * w * h || b.len() != 3 * w * h {
        return Err(Error::InvalidInput(format!(
            "buffer lengths {} / {} do not match {w}x{h} RGB",
            a.len(),
            b.len()
        )));
    }
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            window: SSIM_WINDOW,
        });
    }
    Ok(())
}

fn plane(buf: &[f64], ch: usize) -> Vec<f64> {
    buf.iter().skip(ch).step_by(3).copied().collect()
}

struct Moments {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    var_x: Vec<f64>,
    var_y: Vec<f64>,
    cov: Vec<f64>,
}

fn moments(x: &[f64], y: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Moments {
    let mu_x = filter_valid(x, w, h, k);
    let mu_y = filter_valid(y, w, h, k);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let exx = filter_valid(&xx, w, h, k);
    let eyy = filter_valid(&yy, w, h, k);
    let exy = filter_valid(&xy, w, h, k);
    let var_x = exx.iter().zip(&mu_x).map(|(e, m)| e - m * m).collect();
    let var_y = eyy.iter().zip(&mu_y).map(|(e, m)| e - m * m).collect();
    let cov = exy
        .iter()
        .zip(mu_x.iter().zip(&mu_y))
        .map(|(e, (a, b))| e - a * b)
        .collect();
    Moments {
        mu_x,
        mu_y,
        var_x,
        var_y,
        cov,
    }
}

/// Mean SSIM between two interleaved RGB buffers.
pub fn ssim_rgb(a: &[f64], b: &[f64], w: usize, h: usize) -> Result<f64> {
    check_dims(a, b, w, h)?;
    let k = gaussian_kernel();
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        let m = moments(&plane(a, ch), &plane(b, ch), w, h, &k);
        for i in 0..m.mu_x.len() {
            let (mx, my) = (m.mu_x[i], m.mu_y[i]);
            let num = (2.0 * mx * my + C1) * (2.0 * m.cov[i] + C2);
            let den = (mx * mx + my * my + C1) * (m.var_x[i] + m.var_y[i] + C2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Per-channel statistics of a fixed reference image, reusable across
/// gradient evaluations against it.
#[derive(Debug, Clone)]
pub struct SsimReference {
    width: usize,
    height: usize,
    planes: [Vec<f64>; 3],
    mu: [Vec<f64>; 3],
    var: [Vec<f64>; 3],
}

impl SsimReference {
    pub fn new(y: &[f64], w: usize, h: usize) -> Result<Self> {
        check_dims(y, y, w, h)?;
        let k = gaussian_kernel();
        let planes: [Vec<f64>; 3] = std::array::from_fn(|ch| plane(y, ch));
        let mu: [Vec<f64>; 3] = std::array::from_fn(|ch| filter_valid(&planes[ch], w, h, &k));
        let var = std::array::from_fn(|ch| {
            let yy: Vec<f64> = planes[ch].iter().map(|v| v * v).collect();
            let eyy = filter_valid(&yy, w, h, &k);
            eyy.iter().zip(&mu[ch]).map(|(e, m)| e - m * m).collect()
        });
        Ok(Self {
            width: w,
            height: h,
            planes,
            mu,
            var,
        })
    }

    /// Mean SSIM of `x` against the reference and its gradient with respect to `x`.
    pub fn ssim_with_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (w, h) = (self.width, self.height);
        if x.len() != 3 * w * h {
            return Err(Error::InvalidInput(format!(
                "buffer length {} does not match {w}x{h} RGB",
                x.len()
            )));
        }
        let k = gaussian_kernel();
        let mut grad = vec![0.0; x.len()];
        let mut total = 0.0;
        let positions = (w + 1 - SSIM_WINDOW) * (h + 1 - SSIM_WINDOW);
        let norm = 1.0 / (3 * positions) as f64;
        let mut d_mean = vec![0.0; positions];
        let mut d_var = vec![0.0; positions];
        let mut d_cov = vec![0.0; positions];
        for ch in 0..3 {
            let xp = plane(x, ch);
            let yp = &self.planes[ch];
            let (mu_y, var_y) = (&self.mu[ch], &self.var[ch]);
            let mu_x = filter_valid(&xp, w, h, &k);
            let xx: Vec<f64> = xp.iter().map(|v| v * v).collect();
            let exx = filter_valid(&xx, w, h, &k);
            let xy: Vec<f64> = xp.iter().zip(yp).map(|(a, b)| a * b).collect();
            let exy = filter_valid(&xy, w, h, &k);
            for i in 0..positions {
                let (mx, my) = (mu_x[i], mu_y[i]);
                let var_x = exx[i] - mx * mx;
                let cov = exy[i] - mx * my;
                let a1 = 2.0 * mx * my + C1;
                let a2 = 2.0 * cov + C2;
                let b1 = mx * mx + my * my + C1;
                let b2 = var_x + var_y[i] + C2;
                let s = a1 * a2 / (b1 * b2);
                total += s;
                let ds_dmu = 2.0 * my * a2 / (b1 * b2) - s * 2.0 * mx / b1;
                let ds_dvar = -s / b2;
                let ds_dcov = 2.0 * a1 / (b1 * b2);
                d_mean[i] = norm * (ds_dmu - 2.0 * mx * ds_dvar - my * ds_dcov);
                d_var[i] = norm * ds_dvar;
                d_cov[i] = norm * ds_dcov;
            }
            let g_mean = filter_valid_adjoint(&d_mean, w, h, &k);
            let g_var = filter_valid_adjoint(&d_var, w, h, &k);
            let g_cov = filter_valid_adjoint(&d_cov, w, h, &k);
            for p in 0..w * h {
                grad[3 * p + ch] = g_mean[p] + 2.0 * xp[p] * g_var[p] + yp[p] * g_cov[p];
            }
        }
        Ok((total * norm, grad))
    }
}

/// Mean SSIM and its gradient with respect to the first buffer.
pub fn ssim_rgb_with_grad(x: &[f64], y: &[f64], w: usize, h: usize) -> Result<(f64, Vec<f64>)> {
    check_dims(x, y, w, h)?;
    SsimReference::new(y, w, h)?.ssim_with_grad(x)
}
