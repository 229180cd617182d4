//! Test-only oracles, written independently of the library's tile code.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatlab::math::INVERSE_RIDGE;
use splatlab::{CloudState, Gaussian2D, TargetImage};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random cloud over a `w × h` image: centers may sit slightly outside, scales
/// span sub-pixel to about a quarter of the image, colors/opacities anywhere.
pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize, w: usize, h: usize) -> CloudState {
    let (w, h) = (w as f64, h as f64);
    let max_ls = (0.25 * w.min(h)).ln();
    let gs = (0..n)
        .map(|_| {
            Gaussian2D::new(
                [rng.random_range(-0.1 * w..1.1 * w), rng.random_range(-0.1 * h..1.1 * h)],
                [rng.random_range(-0.7..max_ls), rng.random_range(-0.7..max_ls)],
                rng.random_range(-3.2..3.2),
                [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
                rng.random_range(-3.0..3.0),
                rng.random::<f64>(),
            )
        })
        .collect();
    CloudState::new(gs)
}

pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> TargetImage {
    let rgb = (0..3 * w * h).map(|_| rng.random::<f64>()).collect();
    TargetImage::new(w, h, rgb).unwrap()
}

/// Closed-form 2×2 covariance `R diag(σ0², σ1²) Rᵀ` as `(a, b, c)`.
pub fn covariance(g: &Gaussian2D) -> (f64, f64, f64) {
    let (s0, s1) = (g.log_scale[0].exp().powi(2), g.log_scale[1].exp().powi(2));
    let (c, s) = (g.rot.cos(), g.rot.sin());
    (s0 * c * c + s1 * s * s, (s0 - s1) * c * s, s0 * s * s + s1 * c * c)
}

/// Largest eigenvalue of `[[a, b], [b, c]]` from the characteristic polynomial.
pub fn lambda_max(a: f64, b: f64, c: f64) -> f64 {
    let tr = a + c;
    let det = a * c - b * b;
    0.5 * (tr + (tr * tr - 4.0 * det).max(0.0).sqrt())
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-pixel front-to-back blending over every Gaussian, sorted by
/// `(depth, index)`, with the footprint disc `k·√(λmax + s)` and no cutoffs.
pub fn brute_force_render(cloud: &CloudState, w: usize, h: usize, s: f64, k: f64, bg: [f64; 3]) -> Vec<f64> {
    brute_force_render_cut(cloud, w, h, s, k, bg, 0.0, 0.0)
}

/// [`brute_force_render`] that skips contributions with `α·G < alpha_cutoff`
/// and stops a pixel once its transmittance drops below `min_t`.
#[allow(clippy::too_many_arguments)]
pub fn brute_force_render_cut(
    cloud: &CloudState,
    w: usize,
    h: usize,
    s: f64,
    k: f64,
    bg: [f64; 3],
    alpha_cutoff: f64,
    min_t: f64,
) -> Vec<f64> {
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.sort_by(|&i, &j| {
        cloud.gaussians[i]
            .depth
            .partial_cmp(&cloud.gaussians[j].depth)
            .unwrap()
            .then(i.cmp(&j))
    });
    let mut out = vec![0.0; 3 * w * h];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut c = [0.0; 3];
            for &i in &order {
                let g = &cloud.gaussians[i];
                let (a, b, cc) = covariance(g);
                let r = k * (lambda_max(a, b, cc) + s).sqrt();
                let (dx, dy) = (px - g.pos[0], py - g.pos[1]);
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                let (ma, mc) = (a + s + INVERSE_RIDGE, cc + s + INVERSE_RIDGE);
                let det = ma * mc - b * b;
                let q = (mc * dx * dx - 2.0 * b * dx * dy + ma * dy * dy) / det;
                let alpha = logistic(g.opacity_logit) * (-0.5 * q).exp();
                if alpha < alpha_cutoff {
                    continue;
                }
                for ch in 0..3 {
                    c[ch] += logistic(g.color[ch]) * alpha * t;
                }
                t *= 1.0 - alpha;
                if t < min_t {
                    break;
                }
            }
            for ch in 0..3 {
                out[3 * (y * w + x) + ch] = c[ch] + t * bg[ch];
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Tally of a gradient comparison.
#[derive(Debug, Default, Clone, Copy)]
pub struct GradTally {
    pub total: usize,
    pub ok: usize,
    pub worst_rel: f64,
}

impl GradTally {
    pub fn fraction(&self) -> f64 {
        self.ok as f64 / self.total.max(1) as f64
    }
}

/// Compare analytic and central-difference gradients on `configs` random
/// clouds (≤20 Gaussians, 32×32, default loss). Every cutoff is off,
/// including the footprint disc, which is widened to the full f64 support so
/// the loss is smooth. A coordinate passes when relative error < 1e-3 or
/// absolute error < 1e-6. `audit` sees every cloud and its settings.
pub fn gradient_check(
    seed: u64,
    configs: usize,
    audit: &mut dyn FnMut(&CloudState, &splatlab::RenderSettings),
) -> GradTally {
    use splatlab::grad::{backward, fd_gradient, LossWeights};
    use splatlab::RenderSettings;
    const SIZE: usize = 32;
    let mut r = rng(seed);
    let weights = LossWeights::default();
    let mut tally = GradTally::default();
    for _ in 0..configs {
        let n = r.random_range(1..=20);
        let cloud = random_cloud(&mut r, n, SIZE, SIZE);
        let s = r.random_range(0.0..3.0);
        let target = random_image(&mut r, SIZE, SIZE);
        let settings = RenderSettings::new(SIZE, SIZE)
            .with_s(s)
            .with_background([r.random(), r.random(), r.random()])
            .without_cutoffs()
            .with_full_support();
        audit(&cloud, &settings);
        let analytic = backward(&cloud, &settings, &target, &weights).unwrap().grads;
        let numeric = fd_gradient(&cloud, &settings, &target, &weights, 1e-4).unwrap();
        for (pa, pn) in analytic.params.iter().zip(&numeric.params) {
            for (&a, &f) in pa.iter().zip(pn) {
                let abs = (a - f).abs();
                let rel = abs / a.abs().max(f.abs()).max(f64::MIN_POSITIVE);
                tally.total += 1;
                if abs < 1e-6 || rel < 1e-3 {
                    tally.ok += 1;
                } else {
                    tally.worst_rel = tally.worst_rel.max(rel);
                }
            }
        }
    }
    tally
}

/// Run `events` random densify/prune/reset events on a random cloud,
/// checking the population accounting and shadow-array alignment after each.
pub fn density_fuzz(seed: u64, events: usize) -> std::result::Result<(), String> {
    use splatlab::density::{densify_and_prune, reset_opacity, DensifyConfig, DensifyContext};
    let mut r = rng(seed);
    let (w, h) = (64, 48);
    let diagonal = (w as f64).hypot(h as f64);
    let mut cloud = random_cloud(&mut r, 30, w, h);
    for ev in 0..events {
        if cloud.len() < 5 {
            let extra = random_cloud(&mut r, 20, w, h);
            for g in extra.gaussians {
                cloud.push(g);
            }
        }
        for i in 0..cloud.len() {
            let c = r.random_range(0..4u32);
            cloud.grad_pos_count[i] = c;
            cloud.grad_pos_accum[i] = c as f64 * r.random_range(0.0..4e-4);
            cloud.adam_m[i][0] = i as f64;
        }
        if r.random_bool(0.1) {
            reset_opacity(&mut cloud, r.random_range(0.001..0.5));
        } else {
            let cfg = DensifyConfig {
                prune_alpha: r.random_range(0.0..0.3),
                max_gaussians: r.random_range(10..400),
                prune_radius_factor: r.random_range(0.2..2.0),
                ..DensifyConfig::default()
            };
            let ctx = DensifyContext { diagonal, s: r.random_range(0.0..5.0), k: 3.0 };
            let n = cloud.len();
            let rep = densify_and_prune(&mut cloud, &cfg, &ctx, &mut r);
            if cloud.len() != n + rep.cloned + rep.split - rep.pruned {
                return Err(format!(
                    "event {ev}: {n} + {} + {} - {} != {}",
                    rep.cloned, rep.split, rep.pruned, cloud.len()
                ));
            }
            if cloud.grad_pos_count.iter().any(|&c| c != 0) {
                return Err(format!("event {ev}: statistics not reset"));
            }
        }
        if !cloud.is_aligned() {
            return Err(format!("event {ev}: shadow arrays misaligned"));
        }
        if cloud.gaussians.iter().any(|g| !g.is_finite()) {
            return Err(format!("event {ev}: non-finite Gaussian survived"));
        }
    }
    Ok(())
}

/// Counts of footprints checked against the filter area `9πs` (k = 3).
#[derive(Debug, Default, Clone, Copy)]
pub struct AreaAudit {
    pub renders: usize,
    pub gaussians: usize,
    pub violations: usize,
}

impl AreaAudit {
    pub fn check(&mut self, cloud: &CloudState, s: f64) {
        use std::f64::consts::PI;
        self.renders += 1;
        for g in &cloud.gaussians {
            let r = splatlab::raster::footprint_radius(&g.covariance(), s, 3.0);
            self.gaussians += 1;
            if PI * r * r < 9.0 * PI * s {
                self.violations += 1;
            }
        }
    }
}

/// Variance of the discrete convolution of two sampled, normalized
/// zero-mean Gaussians with variances `v1` and `v2`.
pub fn convolved_variance(v1: f64, v2: f64) -> f64 {
    let half = 40i64;
    let sample = |v: f64| -> Vec<f64> {
        let raw: Vec<f64> = (-half..=half).map(|x| (-(x * x) as f64 / (2.0 * v)).exp()).collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / sum).collect()
    };
    let (a, b) = (sample(v1), sample(v2));
    let mut c = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            c[i + j] += x * y;
        }
    }
    let offset = 2 * half;
    let mass: f64 = c.iter().sum();
    let mean: f64 = c.iter().enumerate().map(|(i, p)| (i as i64 - offset) as f64 * p).sum::<f64>() / mass;
    c.iter().enumerate().map(|(i, p)| ((i as i64 - offset) as f64 - mean).powi(2) * p).sum::<f64>() / mass
}
