//! Random point-cloud initializers (dense/sparse, small/large variance) and
//! an image-sampling oracle.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::inverse_sigmoid;
use crate::model::{CloudState, Gaussian2D, TargetImage};

pub const INITIAL_OPACITY: f64 = 0.1;
/// Colors are drawn in `[COLOR_EPS, 1 − COLOR_EPS]` so their logits stay finite.
const COLOR_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Dsv,
    Dlv,
    Slv,
    Oracle,
}

impl InitMode {
    pub const ALL: [InitMode; 4] = [InitMode::Dsv, InitMode::Dlv, InitMode::Slv, InitMode::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            InitMode::Dsv => "dsv",
            InitMode::Dlv => "dlv",
            InitMode::Slv => "slv",
            InitMode::Oracle => "oracle",
        }
    }

    /// Conventional initial count for the mode at desk scale.
    pub fn default_count(self) -> usize {
        match self {
            InitMode::Slv => 10,
            _ => 10_000,
        }
    }
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InitMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        InitMode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown init mode `{s}` (expected one of dsv, dlv, slv, oracle)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub mode: InitMode,
    pub n_init: usize,
    /// Multiplier on the image rectangle, about its center, for random positions.
    pub extent_factor: f64,
    /// Added to every log-scale in DLV mode.
    pub dlv_scale_boost: f64,
    /// Not a config key: training seeds initialization from its own seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            mode: InitMode::Slv,
            n_init: 10,
            extent_factor: 1.0,
            dlv_scale_boost: 10f64.ln(),
            seed: 0,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_init == 0 {
            return Err(Error::config("init.n_init", "must be at least 1"));
        }
        if !(self.extent_factor > 0.0 && self.extent_factor.is_finite()) {
            return Err(Error::config("init.extent_factor", "must be a positive number"));
        }
        if !self.dlv_scale_boost.is_finite() {
            return Err(Error::config("init.dlv_scale_boost", "must be finite"));
        }
        Ok(())
    }
}

/// Mean distance from each point to its 3 nearest other points, or
/// `fallback` when fewer than 3 other points exist.
pub fn knn_mean_distance(points: &[[f64; 2]], fallback: f64) -> Vec<f64> {
    const K: usize = 3;
    if points.len() <= K {
        return vec![fallback; points.len()];
    }
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best = [f64::INFINITY; K];
            for (j, q) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                if d2 < best[K - 1] {
                    let mut k = K - 1;
                    while k > 0 && best[k - 1] > d2 {
                        best[k] = best[k - 1];
                        k -= 1;
                    }
                    best[k] = d2;
                }
            }
            best.iter().map(|d| d.sqrt()).sum::<f64>() / K as f64
        })
        .collect()
}

/// Build the initial cloud for `target`.
///
/// DSV, DLV and SLV share one sampling sequence, so under the same seed DLV
/// differs from DSV only in the log-scales.
pub fn init_cloud(cfg: &InitConfig, target: &TargetImage) -> Result<CloudState> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (w, h) = (target.width as f64, target.height as f64);
    let n = cfg.n_init;

    let (positions, colors): (Vec<[f64; 2]>, Vec<[f64; 3]>) = match cfg.mode {
        InitMode::Oracle => {
            let positions: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.random_range(0.0..w), rng.random_range(0.0..h)])
                .collect();
            let colors = positions
                .iter()
                .map(|p| {
                    let x = (p[0] as usize).min(target.width - 1);
                    let y = (p[1] as usize).min(target.height - 1);
                    target
                        .pixel(x, y)
                        .map(|c| inverse_sigmoid(c.clamp(COLOR_EPS, 1.0 - COLOR_EPS)))
                })
                .collect();
            (positions, colors)
        }
        _ => {
            let (ew, eh) = (w * cfg.extent_factor, h * cfg.extent_factor);
            let (x0, y0) = (0.5 * (w - ew), 0.5 * (h - eh));
            let positions: Vec<[f64; 2]> = (0..n)
                .map(|_| {
                    [
                        x0 + rng.random_range(0.0..ew),
                        y0 + rng.random_range(0.0..eh),
                    ]
                })
                .collect();
            let colors = (0..n)
                .map(|_| {
                    std::array::from_fn(|_| {
                        inverse_sigmoid(rng.random_range(COLOR_EPS..1.0 - COLOR_EPS))
                    })
                })
                .collect();
            (positions, colors)
        }
    };
    let depths: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();

    let dists = knn_mean_distance(&positions, 0.5 * target.diagonal());
    let boost = if cfg.mode == InitMode::Dlv {
        cfg.dlv_scale_boost
    } else {
        0.0
    };
    let opacity = inverse_sigmoid(INITIAL_OPACITY);
    let gaussians = (0..n)
        .map(|i| {
            // Coincident points would give ln(0); clamp to a tiny positive distance.
            let ls = dists[i].max(1e-6).ln() + boost;
            Gaussian2D::isotropic(positions[i], ls, colors[i], opacity, depths[i])
        })
        .collect();
    Ok(CloudState::new(gaussians))
}
