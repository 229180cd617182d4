//! Adaptive density control: clone, split and prune driven by accumulated
//! screen-space positional gradients.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::inverse_sigmoid;
use crate::model::{slot, CloudState, Gaussian2D};
use crate::raster::footprint_radius;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifyConfig {
    pub enabled: bool,
    /// Threshold on the mean `|∂L/∂μ|` per observation, in normalized device
    /// coordinates (see [`crate::grad::ndc_grad_norm`]).
    pub tau_p: f64,
    /// Split/clone threshold on the largest axis scale, pixels. `None` → 1% of the image diagonal.
    pub tau_s: Option<f64>,
    /// Opacity floor below which Gaussians are pruned.
    pub prune_alpha: f64,
    pub divide_factor: f64,
    pub interval: usize,
    pub start_step: usize,
    /// Last step at which densification may run. `None` → half the run.
    pub stop_step: Option<usize>,
    pub max_gaussians: usize,
    /// Prune when the footprint radius exceeds this fraction of the image diagonal.
    pub prune_radius_factor: f64,
    /// Opacity reset cadence in steps; 0 disables.
    pub reset_every: usize,
    pub reset_value: f64,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            tau_p: 2e-4,
            tau_s: None,
            prune_alpha: 0.005,
            divide_factor: 1.4,
            interval: 100,
            start_step: 500,
            stop_step: None,
            max_gaussians: 200_000,
            prune_radius_factor: 1.0,
            reset_every: 3000,
            reset_value: 0.01,
        }
    }
}

impl DensifyConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.tau_p) {
            return Err(Error::config("densify.tau_p", "must be > 0"));
        }
        if let Some(t) = self.tau_s {
            if !positive(t) {
                return Err(Error::config("densify.tau_s", "must be > 0"));
            }
        }
        if !positive(self.prune_alpha) || self.prune_alpha >= 1.0 {
            return Err(Error::config("densify.prune_alpha", "must be in (0, 1)"));
        }
        if !(self.divide_factor > 1.0 && self.divide_factor.is_finite()) {
            return Err(Error::config("densify.divide_factor", "must be > 1"));
        }
        if self.interval == 0 {
            return Err(Error::config("densify.interval", "must be at least 1"));
        }
        if !positive(self.prune_radius_factor) {
            return Err(Error::config("densify.prune_radius_factor", "must be > 0"));
        }
        if !(self.reset_value > 0.0 && self.reset_value < 1.0) {
            return Err(Error::config("densify.reset_value", "must be in (0, 1)"));
        }
        if self.max_gaussians == 0 {
            return Err(Error::config("densify.max_gaussians", "must be at least 1"));
        }
        Ok(())
    }

    pub fn tau_s_pixels(&self, diagonal: f64) -> f64 {
        self.tau_s.unwrap_or(0.01 * diagonal)
    }

    pub fn stop_step_for(&self, steps: usize) -> usize {
        self.stop_step.unwrap_or(steps / 2)
    }

    /// Whether densification runs after the update at `step`.
    pub fn is_refinement_step(&self, step: usize, steps: usize) -> bool {
        self.enabled
            && step.is_multiple_of(self.interval)
            && step >= self.start_step
            && step <= self.stop_step_for(steps)
    }

    /// Whether opacities are reset after the update at `step`.
    pub fn is_reset_step(&self, step: usize, steps: usize) -> bool {
        self.enabled
            && self.reset_every > 0
            && step > 0
            && step.is_multiple_of(self.reset_every)
            && step < self.stop_step_for(steps)
    }
}

/// Geometry needed to evaluate the prune-by-size test.
#[derive(Debug, Clone, Copy)]
pub struct DensifyContext {
    pub diagonal: f64,
    /// Low-pass value and footprint multiplier used for the footprint radius.
    pub s: f64,
    pub k: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    /// The population cap was reached and remaining candidates were skipped.
    pub capped: bool,
}

/// Clone/split candidates over τ_p, then prune. Statistics are reset.
///
/// Accounting: `N' = N + cloned + split − pruned`, where each split removes
/// its parent and adds two children.
pub fn densify_and_prune<R: Rng + ?Sized>(
    cloud: &mut CloudState,
    cfg: &DensifyConfig,
    ctx: &DensifyContext,
    rng: &mut R,
) -> DensifyReport {
    debug_assert!(cloud.is_aligned());
    let n0 = cloud.len();
    let tau_s = cfg.tau_s_pixels(ctx.diagonal);
    let mut report = DensifyReport::default();
    let mut split_parent = vec![false; n0];
    let mut count = n0;

    for i in 0..n0 {
        if cloud.mean_grad_norm(i) <= cfg.tau_p {
            continue;
        }
        if count + 1 > cfg.max_gaussians {
            report.capped = true;
            break;
        }
        let parent = cloud.gaussians[i].clone();
        if parent.max_scale() > tau_s {
            for _ in 0..2 {
                let child = split_child(&parent, cfg.divide_factor, rng);
                cloud.push(child);
            }
            split_parent[i] = true;
            report.split += 1;
        } else {
            cloud.push(parent);
            report.cloned += 1;
        }
        count += 1;
    }

    let limit = cfg.prune_radius_factor * ctx.diagonal;
    let mut keep = Vec::with_capacity(cloud.len());
    for (i, g) in cloud.gaussians.iter().enumerate() {
        if i < n0 && split_parent[i] {
            keep.push(false);
            continue;
        }
        let too_faint = g.opacity() < cfg.prune_alpha;
        let too_big = footprint_radius(&g.covariance(), ctx.s, ctx.k) > limit;
        let bad = !g.is_finite();
        let prune = too_faint || too_big || bad;
        if prune {
            report.pruned += 1;
        }
        keep.push(!prune);
    }
    cloud.retain_mask(&keep);
    cloud.reset_stats();
    report
}

/// Child of a split: position drawn from the parent's density, both axis
/// scales divided by `divide_factor`, everything else (including depth) copied.
fn split_child<R: Rng + ?Sized>(parent: &Gaussian2D, divide_factor: f64, rng: &mut R) -> Gaussian2D {
    let z0: f64 = rng.sample(StandardNormal);
    let z1: f64 = rng.sample(StandardNormal);
    let (s0, s1) = (parent.log_scale[0].exp(), parent.log_scale[1].exp());
    let (sin, cos) = parent.rot.sin_cos();
    let (u, v) = (s0 * z0, s1 * z1);
    let mut child = parent.clone();
    child.pos = [
        parent.pos[0] + cos * u - sin * v,
        parent.pos[1] + sin * u + cos * v,
    ];
    let shrink = divide_factor.ln();
    child.log_scale = [parent.log_scale[0] - shrink, parent.log_scale[1] - shrink];
    child
}

/// Clamp every opacity to at most `value`, zeroing the opacity moments.
pub fn reset_opacity(cloud: &mut CloudState, value: f64) {
    let cap = inverse_sigmoid(value);
    for (i, g) in cloud.gaussians.iter_mut().enumerate() {
        // Compared in logit space so Gaussians already below the cap keep their exact value.
        if g.opacity_logit > cap {
            g.opacity_logit = cap;
        }
        cloud.adam_m[i][slot::OPACITY] = 0.0;
        cloud.adam_v[i][slot::OPACITY] = 0.0;
    }
}
