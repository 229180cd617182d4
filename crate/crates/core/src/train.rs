//! The optimization loop: schedule, render, loss, backward, Adam, density
//! control and telemetry.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_scalar, AdamParams};
use crate::density::{densify_and_prune, reset_opacity, DensifyConfig, DensifyContext, DensifyReport};
use crate::error::{Error, Result};
use crate::grad::{backward_from_aux, LossTarget, LossWeights};
use crate::init::{init_cloud, InitConfig};
use crate::io::{state_digest, StateDigest};
use crate::model::{CloudState, TargetImage, PARAMS_PER_GAUSSIAN};
use crate::raster::{render, render_with_aux, RenderSettings, DEFAULT_K, DEFAULT_TILE};
use crate::schedule::{LpfController, LpfSchedule};
use crate::spectrum::psnr;
use crate::ssim::ssim_rgb;

/// Stream offset separating the densification RNG from the init RNG.
const DENSIFY_STREAM: u64 = 0x5eed_de75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    /// Position rate at step 0, in units of the longer image side per step.
    pub lr_pos: f64,
    /// Position rate reached (exponentially) at the last step.
    pub lr_pos_final: f64,
    pub lr_scale: f64,
    pub lr_rot: f64,
    pub lr_color: f64,
    pub lr_opacity: f64,
    pub adam: AdamParams,
    pub lpf: LpfSchedule,
    pub densify: DensifyConfig,
    pub init: InitConfig,
    pub loss: LossWeights,
    pub seed: u64,
    /// PSNR is logged every `eval_every` steps (0 disables intermediate evals).
    pub eval_every: usize,
    /// Renders are kept every `snapshot_every` steps (0 keeps only the final one).
    pub snapshot_every: usize,
    pub background: [f64; 3],
    pub tile: usize,
    pub k: f64,
    /// Recorded for the manifest; every reduction already runs in a fixed order.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            lr_pos: 2e-3,
            lr_pos_final: 2e-5,
            lr_scale: 5e-3,
            lr_rot: 1e-3,
            lr_color: 2.5e-2,
            lr_opacity: 5e-2,
            adam: AdamParams::default(),
            lpf: LpfSchedule::default(),
            densify: DensifyConfig::default(),
            init: InitConfig::default(),
            loss: LossWeights::default(),
            seed: 0,
            eval_every: 100,
            snapshot_every: 500,
            background: [0.0; 3],
            tile: DEFAULT_TILE,
            k: DEFAULT_K,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        let rates = [
            ("lr_pos", self.lr_pos),
            ("lr_pos_final", self.lr_pos_final),
            ("lr_scale", self.lr_scale),
            ("lr_rot", self.lr_rot),
            ("lr_color", self.lr_color),
            ("lr_opacity", self.lr_opacity),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, "learning rates must be > 0"));
            }
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) {
            return Err(Error::config("adam.beta1", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::config("adam.beta2", "must be in [0, 1)"));
        }
        if !(a.eps > 0.0) {
            return Err(Error::config("adam.eps", "must be > 0"));
        }
        if !(self.lpf.floor >= 0.0 && self.lpf.cap >= self.lpf.floor) {
            return Err(Error::config("lpf", "need 0 <= floor <= cap"));
        }
        if self.lpf.update_every == 0 {
            return Err(Error::config("lpf.update_every", "must be at least 1"));
        }
        self.densify.validate()?;
        self.init.validate()?;
        let l = &self.loss;
        if [l.l1, l.dssim, l.l2].iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::config("loss", "weights must be finite and >= 0"));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::config("background", "channels must be in [0, 1]"));
        }
        if self.tile == 0 {
            return Err(Error::config("tile", "must be at least 1"));
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::config("k", "must be > 0"));
        }
        Ok(())
    }

    /// Position learning rate at `step`, in pixels.
    pub fn lr_pos_at(&self, step: usize, extent: f64) -> f64 {
        let t = if self.steps > 1 {
            step as f64 / (self.steps - 1) as f64
        } else {
            0.0
        };
        let log_lr = self.lr_pos.ln() * (1.0 - t) + self.lr_pos_final.ln() * t;
        log_lr.exp() * extent
    }

    fn settings(&self, target: &TargetImage) -> RenderSettings {
        let mut s = RenderSettings::new(target.width, target.height)
            .with_tile(self.tile)
            .with_background(self.background);
        s.k = self.k;
        s
    }
}

/// Telemetry for one step, taken from the render of the state after `step` updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub n: usize,
    pub s: f64,
    pub psnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensifyEvent {
    pub step: usize,
    #[serde(flatten)]
    pub report: DensifyReport,
    pub n_after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub psnr: f64,
    pub ssim: f64,
    pub n: usize,
    /// Low-pass value used for the final render.
    pub s: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<StepRecord>,
    pub densify_events: Vec<DensifyEvent>,
    pub summary: Option<RunSummary>,
}

impl RunLog {
    /// Canonical per-step CSV: fixed columns and float formatting, no timing data.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,n,s,psnr\n");
        for r in &self.records {
            let psnr = r.psnr.map(|p| format!("{p:.9e}")).unwrap_or_default();
            writeln!(out, "{},{:.12e},{},{:.12e},{}", r.step, r.loss, r.n, r.s, psnr).unwrap();
        }
        out
    }
}

/// A render kept during training.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// Number of completed updates.
    pub step: usize,
    pub s: f64,
    pub n: usize,
    pub rgb: Vec<f64>,
    pub digest: StateDigest,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub cloud: CloudState,
    pub log: RunLog,
    pub snapshots: Vec<Snapshot>,
    pub width: usize,
    pub height: usize,
}

/// Initialize from `cfg.init` (seeded by `cfg.seed`) and optimize.
pub fn fit(target: &TargetImage, cfg: &TrainConfig) -> Result<FitResult> {
    fit_observed(target, cfg, &mut |_| {})
}

/// [`fit`], calling `observe` with every record that carries a PSNR.
pub fn fit_observed(target: &TargetImage, cfg: &TrainConfig, observe: &mut dyn FnMut(&StepRecord)) -> Result<FitResult> {
    cfg.validate()?;
    let init = InitConfig {
        seed: cfg.seed,
        ..cfg.init
    };
    let cloud = init_cloud(&init, target)?;
    fit_cloud_observed(cloud, target, cfg, observe)
}

/// Optimize a given starting cloud.
pub fn fit_cloud(cloud: CloudState, target: &TargetImage, cfg: &TrainConfig) -> Result<FitResult> {
    fit_cloud_observed(cloud, target, cfg, &mut |_| {})
}

/// [`fit_cloud`], calling `observe` with every record that carries a PSNR.
pub fn fit_cloud_observed(
    mut cloud: CloudState,
    target: &TargetImage,
    cfg: &TrainConfig,
    observe: &mut dyn FnMut(&StepRecord),
) -> Result<FitResult> {
    cfg.validate()?;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DENSIFY_STREAM);
    let mut lpf = LpfController::new(cfg.lpf, target.height, target.width);
    let base = cfg.settings(target);
    let extent = target.width.max(target.height) as f64;
    let diagonal = target.diagonal();
    let mut log = RunLog::default();
    let mut snapshots = Vec::new();
    let hp = cfg.adam;
    let loss_target = LossTarget::new(target, &cfg.loss)?;

    for step in 0..cfg.steps {
        let s = lpf.value(step, cloud.len());
        let settings = base.clone().with_s(s);
        let (out, aux) = render_with_aux(&cloud, &settings);
        let (loss, d_image) = loss_target.loss_and_image_grad(&out)?;
        if !loss.is_finite() {
            return Err(non_finite(step, &cloud));
        }
        let eval = cfg.eval_every > 0 && step % cfg.eval_every == 0;
        log.records.push(StepRecord {
            step,
            loss,
            n: cloud.len(),
            s,
            psnr: if eval { Some(psnr(&out.rgb, &target.rgb)?) } else { None },
        });
        if eval {
            observe(log.records.last().unwrap());
        }
        if step > 0 && cfg.snapshot_every > 0 && step % cfg.snapshot_every == 0 {
            snapshots.push(Snapshot {
                step,
                s,
                n: cloud.len(),
                rgb: out.rgb.clone(),
                digest: state_digest(&cloud, step, s),
            });
        }

        let grads = backward_from_aux(&cloud, &settings, &aux, &d_image);
        for i in 0..cloud.len() {
            if grads.visible[i] {
                cloud.grad_pos_accum[i] += grads.screen_grad_norm[i];
                cloud.grad_pos_count[i] += 1;
            }
        }

        let t = (step + 1) as u64;
        let bc1 = 1.0 - hp.beta1.powf(t as f64);
        let bc2 = 1.0 - hp.beta2.powf(t as f64);
        let lrs = group_rates(cfg, step, extent);
        for i in 0..cloud.len() {
            let mut p = cloud.gaussians[i].params();
            let g = &grads.params[i];
            let m = &mut cloud.adam_m[i];
            let v = &mut cloud.adam_v[i];
            for j in 0..PARAMS_PER_GAUSSIAN {
                adam_scalar(&mut p[j], g[j], &mut m[j], &mut v[j], bc1, bc2, lrs[j], &hp);
            }
            cloud.gaussians[i].set_params(&p);
        }

        let done = step + 1;
        if cfg.densify.is_refinement_step(done, cfg.steps) {
            let ctx = DensifyContext {
                diagonal,
                s,
                k: cfg.k,
            };
            let report = densify_and_prune(&mut cloud, &cfg.densify, &ctx, &mut rng);
            log.densify_events.push(DensifyEvent {
                step: done,
                report,
                n_after: cloud.len(),
            });
        }
        if cfg.densify.is_reset_step(done, cfg.steps) {
            reset_opacity(&mut cloud, cfg.densify.reset_value);
        }
    }

    let s = lpf.value(cfg.steps, cloud.len());
    let out = render(&cloud, &base.clone().with_s(s));
    let final_psnr = psnr(&out.rgb, &target.rgb)?;
    if !final_psnr.is_finite() || out.rgb.iter().any(|v| !v.is_finite()) {
        return Err(non_finite(cfg.steps, &cloud));
    }
    let final_ssim = ssim_rgb(&out.rgb, &target.rgb, target.width, target.height).unwrap_or(f64::NAN);
    log.summary = Some(RunSummary {
        psnr: final_psnr,
        ssim: final_ssim,
        n: cloud.len(),
        s,
        wall_time_s: started.elapsed().as_secs_f64(),
    });
    snapshots.push(Snapshot {
        step: cfg.steps,
        s,
        n: cloud.len(),
        rgb: out.rgb,
        digest: state_digest(&cloud, cfg.steps, s),
    });
    Ok(FitResult {
        cloud,
        log,
        snapshots,
        width: target.width,
        height: target.height,
    })
}

fn group_rates(cfg: &TrainConfig, step: usize, extent: f64) -> [f64; PARAMS_PER_GAUSSIAN] {
    let p = cfg.lr_pos_at(step, extent);
    [
        p,
        p,
        cfg.lr_scale,
        cfg.lr_scale,
        cfg.lr_rot,
        cfg.lr_color,
        cfg.lr_color,
        cfg.lr_color,
        cfg.lr_opacity,
    ]
}

fn non_finite(step: usize, cloud: &CloudState) -> Error {
    let offending = cloud
        .gaussians
        .iter()
        .enumerate()
        .filter(|(_, g)| !g.is_finite())
        .map(|(i, _)| i)
        .collect();
    Error::NonFiniteLoss { step, offending }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::InitMode;
    use crate::schedule::{lpf_value, LpfMode};

    fn two_color(w: usize, h: usize) -> TargetImage {
        let rgb = (0..w * h)
            .flat_map(|i| if i % w < w / 2 { [0.9, 0.2, 0.1] } else { [0.1, 0.3, 0.8] })
            .collect();
        TargetImage::new(w, h, rgb).unwrap()
    }

    fn small_cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            init: InitConfig {
                mode: InitMode::Oracle,
                n_init: 60,
                ..InitConfig::default()
            },
            densify: DensifyConfig {
                enabled: false,
                ..DensifyConfig::default()
            },
            eval_every: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn one_step_one_record() {
        let res = fit(&two_color(16, 16), &small_cfg(1)).unwrap();
        assert_eq!(res.log.records.len(), 1);
        assert!(res.log.summary.is_some());
        assert!(matches!(
            fit(&two_color(16, 16), &small_cfg(0)),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn oracle_fit_reduces_loss() {
        let res = fit(&two_color(32, 32), &small_cfg(200)).unwrap();
        let first = res.log.records[0].loss;
        let last = res.log.records.last().unwrap().loss;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn deterministic_csv() {
        let mut cfg = small_cfg(60);
        cfg.densify = DensifyConfig {
            start_step: 10,
            interval: 10,
            tau_p: 1e-7,
            ..DensifyConfig::default()
        };
        let a = fit(&two_color(24, 24), &cfg).unwrap();
        let b = fit(&two_color(24, 24), &cfg).unwrap();
        assert_eq!(a.log.to_csv(), b.log.to_csv());
        assert_eq!(a.snapshots, b.snapshots);
        assert!(!a.log.densify_events.is_empty());
    }

    #[test]
    fn telemetry_follows_schedule_and_accounting() {
        let mut cfg = small_cfg(120);
        cfg.lpf = LpfSchedule {
            mode: LpfMode::Progressive,
            update_every: 40,
            ..LpfSchedule::default()
        };
        cfg.densify = DensifyConfig {
            start_step: 10,
            interval: 10,
            tau_p: 1e-7,
            ..DensifyConfig::default()
        };
        let target = two_color(24, 24);
        let res = fit(&target, &cfg).unwrap();
        let mut held = 0.0;
        for r in &res.log.records {
            if r.step % 40 == 0 {
                held = lpf_value(&cfg.lpf, r.step, 24, 24, r.n);
            }
            assert_eq!(r.s, held);
        }
        for ev in &res.log.densify_events {
            let before = res.log.records[ev.step - 1].n;
            let r = ev.report;
            assert_eq!(ev.n_after, before + r.cloned + r.split - r.pruned);
            if ev.step < cfg.steps {
                assert_eq!(res.log.records[ev.step].n, ev.n_after);
            }
        }
    }

    #[test]
    fn lr_pos_decays_exponentially() {
        let cfg = TrainConfig {
            steps: 101,
            ..TrainConfig::default()
        };
        assert!((cfg.lr_pos_at(0, 1.0) - 2e-3).abs() < 1e-15);
        assert!((cfg.lr_pos_at(100, 1.0) - 2e-5).abs() < 1e-15);
        assert!((cfg.lr_pos_at(50, 1.0) - 2e-4).abs() < 1e-15);
    }
}
