//! 1D regression toy: fit a random sum of Gaussians on `x ∈ {0, …, 9999}`
//! with learnable `(μ, log σ, w)` under a summed L1 loss.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_scalar, AdamParams};
use crate::error::{Error, Result};
use crate::spectrum::{default_cutoff, hf_energy_fraction, normalized_magnitude};

pub const GRID_LEN: usize = 10_000;
/// Gaussians are treated as zero where `exp(−z²/2) < 1e−16`, i.e. `|z| > TRUNCATE_Z`.
const TRUNCATE_Z: f64 = 8.6;
/// Below this σ every support point is evaluated with a direct `exp`.
const RECURRENCE_MIN_SIGMA: f64 = 8.0;
const REANCHOR: usize = 64;
const TARGET_STREAM: u64 = 0x7a26_e700;
const INIT_STREAM: u64 = 0x1b17_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyMode {
    Dsv,
    Dlv,
    Slv,
}

impl ToyMode {
    pub const ALL: [ToyMode; 3] = [ToyMode::Dsv, ToyMode::Dlv, ToyMode::Slv];

    pub fn name(self) -> &'static str {
        match self {
            ToyMode::Dsv => "dsv",
            ToyMode::Dlv => "dlv",
            ToyMode::Slv => "slv",
        }
    }

    /// `(count, range for μ and σ)`.
    pub fn init_spec(self) -> (usize, [f64; 2]) {
        match self {
            ToyMode::Dsv => (1000, [0.0, 1.0]),
            ToyMode::Dlv => (1000, [300.0, 301.0]),
            ToyMode::Slv => (15, [300.0, 301.0]),
        }
    }
}

impl fmt::Display for ToyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ToyMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ToyMode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown toy mode `{s}` (expected dsv, dlv or slv)"))
    }
}

/// Ranges of the target's generating components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyTargetSpec {
    pub components: usize,
    pub mu: [f64; 2],
    pub sigma: [f64; 2],
    pub w: [f64; 2],
}

impl Default for ToyTargetSpec {
    fn default() -> Self {
        Self {
            components: 10,
            mu: [0.0, GRID_LEN as f64],
            sigma: [100.0, 600.0],
            w: [0.5, 1.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub mode: ToyMode,
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    pub grid_len: usize,
    pub snapshot_steps: Vec<usize>,
    pub target: ToyTargetSpec,
    /// Initial weights are drawn from this range.
    pub w_init: [f64; 2],
    /// Lower bound applied to σ after every update.
    pub sigma_floor: f64,
    pub adam: AdamParams,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            mode: ToyMode::Slv,
            seed: 0,
            steps: 1000,
            lr: 0.01,
            grid_len: GRID_LEN,
            snapshot_steps: vec![10, 100, 1000],
            target: ToyTargetSpec::default(),
            w_init: [0.0, 1.0],
            sigma_floor: 1e-6,
            adam: AdamParams::default(),
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("toy.steps", "must be at least 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("toy.lr", "must be > 0"));
        }
        if self.grid_len < 2 {
            return Err(Error::config("toy.grid_len", "must be at least 2"));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::config("toy.sigma_floor", "must be > 0"));
        }
        let t = &self.target;
        for (name, r) in [("toy.target.mu", t.mu), ("toy.target.sigma", t.sigma), ("toy.target.w", t.w), ("toy.w_init", self.w_init)] {
            if !(r[0] < r[1]) {
                return Err(Error::config(name, "range must satisfy lo < hi"));
            }
        }
        if !(t.sigma[0] > 0.0) {
            return Err(Error::config("toy.target.sigma", "must be positive"));
        }
        Ok(())
    }
}

/// Learnable mixture; σ is stored as `log σ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussian1DMix {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
    pub w: Vec<f64>,
}

impl Gaussian1DMix {
    pub fn from_sigma(mu: Vec<f64>, sigma: &[f64], w: Vec<f64>) -> Self {
        assert!(mu.len() == sigma.len() && w.len() == mu.len());
        Self {
            mu,
            log_sigma: sigma.iter().map(|s| s.ln()).collect(),
            w,
        }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn sigma(&self, i: usize) -> f64 {
        self.log_sigma[i].exp()
    }

    /// Parameter `j` of component `i` in gradient order `(μ, log σ, w)`.
    pub fn param_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        match j {
            0 => &mut self.mu[i],
            1 => &mut self.log_sigma[i],
            2 => &mut self.w[i],
            _ => panic!("parameter index {j} out of range"),
        }
    }
}

/// Calls `f(x, g(x))` for each grid point in the truncated support of
/// `exp(−(x−μ)²/(2σ²))`, in increasing `x`.
fn for_each_support(mu: f64, sigma: f64, len: usize, mut f: impl FnMut(usize, f64)) {
    if !(mu.is_finite() && sigma.is_finite() && sigma > 0.0) {
        return;
    }
    let half = TRUNCATE_Z * sigma;
    let lo = (mu - half).ceil().max(0.0);
    let hi = (mu + half).floor().min((len - 1) as f64);
    if lo > hi {
        return;
    }
    let (lo, hi) = (lo as usize, hi as usize);
    let inv2 = 1.0 / (2.0 * sigma * sigma);
    if sigma < RECURRENCE_MIN_SIGMA {
        for x in lo..=hi {
            let d = x as f64 - mu;
            f(x, (-d * d * inv2).exp());
        }
        return;
    }
    // g(x+1) = g(x)·r(x), r(x+1) = r(x)·q with q = exp(−1/σ²); exact values at each anchor.
    let q = (-2.0 * inv2).exp();
    let mut x = lo;
    while x <= hi {
        let d = x as f64 - mu;
        let mut g = (-d * d * inv2).exp();
        let mut r = (-(2.0 * d + 1.0) * inv2).exp();
        let end = (x + REANCHOR).min(hi + 1);
        for xi in x..end {
            f(xi, g);
            g *= r;
            r *= q;
        }
        x = end;
    }
}

/// `Σ_i w_i·exp(−(x−μ_i)²/(2σ_i²))` on `x = 0, …, len−1`.
pub fn toy_blend(mix: &Gaussian1DMix, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for i in 0..mix.len() {
        let w = mix.w[i];
        for_each_support(mix.mu[i], mix.sigma(i), len, |x, g| out[x] += w * g);
    }
    out
}

/// `Σ_x |pred(x) − Y(x)|`.
pub fn toy_l1(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, y)| (p - y).abs()).sum()
}

/// Gradient of the summed L1 loss: `(∂/∂μ, ∂/∂log σ, ∂/∂w)` per component.
/// The subgradient of `|0|` is taken as 0.
pub fn toy_loss_and_grad(mix: &Gaussian1DMix, target: &[f64]) -> (f64, Vec<[f64; 3]>) {
    let len = target.len();
    let pred = toy_blend(mix, len);
    let loss = toy_l1(&pred, target);
    let sign: Vec<f64> = pred
        .iter()
        .zip(target)
        .map(|(p, y)| {
            let r = p - y;
            if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    let grads = (0..mix.len())
        .map(|i| {
            let (mu, sigma, w) = (mix.mu[i], mix.sigma(i), mix.w[i]);
            let (mut a0, mut a1, mut a2) = (0.0, 0.0, 0.0);
            for_each_support(mu, sigma, len, |x, g| {
                let sg = sign[x] * g;
                let d = x as f64 - mu;
                a0 += sg;
                a1 += sg * d;
                a2 += sg * d * d;
            });
            let inv_s2 = 1.0 / (sigma * sigma);
            [w * a1 * inv_s2, w * a2 * inv_s2, a0]
        })
        .collect();
    (loss, grads)
}

/// Target signal and its generating components `(μ, σ, w)`.
pub fn generate_target(spec: &ToyTargetSpec, seed: u64, len: usize) -> (Vec<f64>, Gaussian1DMix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ TARGET_STREAM);
    let n = spec.components;
    let mu: Vec<f64> = (0..n).map(|_| rng.random_range(spec.mu[0]..spec.mu[1])).collect();
    let sigma: Vec<f64> = (0..n).map(|_| rng.random_range(spec.sigma[0]..spec.sigma[1])).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(spec.w[0]..spec.w[1])).collect();
    let mix = Gaussian1DMix::from_sigma(mu, &sigma, w);
    (toy_blend(&mix, len), mix)
}

/// Initial mixture for `cfg.mode`.
pub fn init_mix(cfg: &ToyConfig) -> Gaussian1DMix {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ INIT_STREAM);
    let (n, range) = cfg.mode.init_spec();
    let mu: Vec<f64> = (0..n).map(|_| rng.random_range(range[0]..range[1])).collect();
    let sigma: Vec<f64> = (0..n)
        .map(|_| rng.random_range(range[0]..range[1]).max(cfg.sigma_floor))
        .collect();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(cfg.w_init[0]..cfg.w_init[1])).collect();
    Gaussian1DMix::from_sigma(mu, &sigma, w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySnapshot {
    pub step: usize,
    pub l1: f64,
    pub hf_energy_fraction: f64,
    pub signal: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyResult {
    pub mode: ToyMode,
    pub seed: u64,
    pub n: usize,
    pub final_l1: f64,
    /// Loss before each update.
    pub l1_history: Vec<f64>,
    pub snapshots: Vec<ToySnapshot>,
    pub target: Vec<f64>,
    pub target_components: Gaussian1DMix,
    pub mix: Gaussian1DMix,
}

fn snapshot(step: usize, signal: Vec<f64>, target: &[f64]) -> ToySnapshot {
    let cutoff = default_cutoff(signal.len());
    let hf = hf_energy_fraction(&normalized_magnitude(&signal), cutoff).unwrap_or(0.0);
    ToySnapshot {
        step,
        l1: toy_l1(&signal, target),
        hf_energy_fraction: hf,
        signal,
    }
}

/// Run the toy fit. Snapshots hold the signal after the listed numbers of updates.
pub fn toy_fit(cfg: &ToyConfig) -> Result<ToyResult> {
    cfg.validate()?;
    let (target, components) = generate_target(&cfg.target, cfg.seed, cfg.grid_len);
    let mut mix = init_mix(cfg);
    let n = mix.len();
    let mut m = vec![[0.0; 3]; n];
    let mut v = vec![[0.0; 3]; n];
    let floor = cfg.sigma_floor.ln();
    let hp = cfg.adam;
    let mut history = Vec::with_capacity(cfg.steps);
    let mut snapshots = Vec::new();
    if cfg.snapshot_steps.contains(&0) {
        snapshots.push(snapshot(0, toy_blend(&mix, cfg.grid_len), &target));
    }

    for step in 0..cfg.steps {
        let (loss, grads) = toy_loss_and_grad(&mix, &target);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                offending: (0..n)
                    .filter(|&i| !(mix.mu[i].is_finite() && mix.log_sigma[i].is_finite() && mix.w[i].is_finite()))
                    .collect(),
            });
        }
        history.push(loss);
        let t = (step + 1) as f64;
        let bc1 = 1.0 - hp.beta1.powf(t);
        let bc2 = 1.0 - hp.beta2.powf(t);
        for i in 0..n {
            let g = grads[i];
            adam_scalar(&mut mix.mu[i], g[0], &mut m[i][0], &mut v[i][0], bc1, bc2, cfg.lr, &hp);
            adam_scalar(&mut mix.log_sigma[i], g[1], &mut m[i][1], &mut v[i][1], bc1, bc2, cfg.lr, &hp);
            adam_scalar(&mut mix.w[i], g[2], &mut m[i][2], &mut v[i][2], bc1, bc2, cfg.lr, &hp);
            mix.log_sigma[i] = mix.log_sigma[i].max(floor);
        }
        if cfg.snapshot_steps.contains(&(step + 1)) {
            snapshots.push(snapshot(step + 1, toy_blend(&mix, cfg.grid_len), &target));
        }
    }
    let final_l1 = toy_l1(&toy_blend(&mix, cfg.grid_len), &target);
    Ok(ToyResult {
        mode: cfg.mode,
        seed: cfg.seed,
        n,
        final_l1,
        l1_history: history,
        snapshots,
        target,
        target_components: components,
        mix,
    })
}
