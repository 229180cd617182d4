//! Low-pass filter control: the progressive count-driven rule and the
//! step-driven baselines.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const LPF_FLOOR: f64 = 0.3;
pub const LPF_CAP: f64 = 300.0;
pub const DEFAULT_UPDATE_EVERY: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpfMode {
    Constant,
    Progressive,
    Convex,
    Linear,
    Concave,
}

impl LpfMode {
    pub const ALL: [LpfMode; 5] = [
        LpfMode::Constant,
        LpfMode::Progressive,
        LpfMode::Convex,
        LpfMode::Linear,
        LpfMode::Concave,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LpfMode::Constant => "constant",
            LpfMode::Progressive => "progressive",
            LpfMode::Convex => "convex",
            LpfMode::Linear => "linear",
            LpfMode::Concave => "concave",
        }
    }
}

impl fmt::Display for LpfMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LpfMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LpfMode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown low-pass mode `{s}` (expected one of constant, progressive, convex, linear, concave)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LpfSchedule {
    pub mode: LpfMode,
    pub floor: f64,
    pub cap: f64,
    /// Progressive mode recomputes `s` only on multiples of this step count.
    pub update_every: usize,
}

impl Default for LpfSchedule {
    fn default() -> Self {
        Self {
            mode: LpfMode::Progressive,
            floor: LPF_FLOOR,
            cap: LPF_CAP,
            update_every: DEFAULT_UPDATE_EVERY,
        }
    }
}

impl LpfSchedule {
    pub fn new(mode: LpfMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }
}

/// `min(max(HW / (9πN), floor), cap)`.
pub fn progressive_value(height: usize, width: usize, n: usize, floor: f64, cap: f64) -> f64 {
    let raw = (height * width) as f64 / (9.0 * PI * n.max(1) as f64);
    raw.max(floor).min(cap)
}

/// Step-only baselines; `x` is the step index.
pub fn convex_value(x: f64, floor: f64) -> f64 {
    (7f64.powf(-x / 1000.0) * 300.0).max(floor)
}

pub fn linear_value(x: f64, floor: f64) -> f64 {
    (300.0 - 0.0997084 * x).max(floor)
}

pub fn concave_value(x: f64, floor: f64) -> f64 {
    (300.0 * (1.0 + 7f64.powi(-3) - 7f64.powf((x - 3000.0) / 1000.0))).max(floor)
}

/// Value of `s` at `step`, for a population of `n` Gaussians.
///
/// For Progressive mode this is the value computed at the most recent update
/// step, which requires knowing `n` at that step; this function treats `n` as
/// that count. Use [`LpfController`] to get the held-value semantics during a
/// run where `n` changes.
pub fn lpf_value(sched: &LpfSchedule, step: usize, height: usize, width: usize, n: usize) -> f64 {
    let x = step as f64;
    match sched.mode {
        LpfMode::Constant => sched.floor,
        LpfMode::Progressive => progressive_value(height, width, n, sched.floor, sched.cap),
        LpfMode::Convex => convex_value(x, sched.floor),
        LpfMode::Linear => linear_value(x, sched.floor),
        LpfMode::Concave => concave_value(x, sched.floor),
    }
}

/// Stateful evaluation with the held-value semantics of Progressive mode.
#[derive(Debug, Clone)]
pub struct LpfController {
    sched: LpfSchedule,
    height: usize,
    width: usize,
    held: Option<f64>,
}

impl LpfController {
    pub fn new(sched: LpfSchedule, height: usize, width: usize) -> Self {
        Self {
            sched,
            height,
            width,
            held: None,
        }
    }

    /// `s` for `step` given the current count `n`. Progressive mode refreshes
    /// on multiples of `update_every` (and on the first call), holding the
    /// value otherwise.
    pub fn value(&mut self, step: usize, n: usize) -> f64 {
        match self.sched.mode {
            LpfMode::Progressive => {
                let every = self.sched.update_every.max(1);
                if self.held.is_none() || step.is_multiple_of(every) {
                    self.held = Some(lpf_value(&self.sched, step, self.height, self.width, n));
                }
                self.held.unwrap()
            }
            _ => lpf_value(&self.sched, step, self.height, self.width, n),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn prog() -> LpfSchedule {
        LpfSchedule::new(LpfMode::Progressive)
    }

    #[test]
    fn progressive_examples() {
        let v = lpf_value(&prog(), 0, 480, 640, 1000);
        assert_relative_eq!(v, 307200.0 / (9.0 * PI * 1000.0), epsilon = 1e-12);
        assert_relative_eq!(v, 10.865, epsilon = 1e-3);
        assert_eq!(lpf_value(&prog(), 0, 1000, 1000, 10), 300.0);
        assert_eq!(lpf_value(&prog(), 0, 256, 256, 10_000_000), 0.3);
    }

    #[test]
    fn baseline_examples() {
        assert_eq!(convex_value(0.0, 0.3), 300.0);
        assert_eq!(linear_value(0.0, 0.3), 300.0);
        let c = concave_value(3000.0, 0.3);
        assert_relative_eq!(c, 300.0 / 343.0, epsilon = 1e-12);
        assert_relative_eq!(c, 0.8746, epsilon = 1e-4);
        assert_relative_eq!(concave_value(0.0, 0.3), 300.0, epsilon = 1e-12);
        // Endpoints land at (or near) the floor around step 3000.
        assert!(convex_value(3000.0, 0.3) < 1.0);
        assert_relative_eq!(linear_value(3000.0, 0.3), 0.8748, epsilon = 1e-4);
        assert_eq!(linear_value(4000.0, 0.3), 0.3);
        assert_eq!(lpf_value(&LpfSchedule::new(LpfMode::Constant), 123, 1, 1, 1), 0.3);
    }

    #[test]
    fn progressive_non_increasing_in_n() {
        let mut prev = f64::INFINITY;
        for n in [1, 2, 5, 10, 50, 100, 1000, 10_000, 100_000, 1_000_000] {
            let v = lpf_value(&prog(), 0, 256, 256, n);
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn controller_holds_between_updates() {
        let mut c = LpfController::new(prog(), 256, 256);
        let s0 = c.value(0, 10);
        assert_relative_eq!(s0, 65536.0 / (90.0 * PI), max_relative = 1e-15);
        assert_eq!(c.value(1, 100_000), s0);
        assert_eq!(c.value(999, 100_000), s0);
        assert_eq!(c.value(1000, 100_000), 0.3);
        assert_eq!(c.value(1500, 10), 0.3);
    }

    #[test]
    fn mode_parsing() {
        for m in LpfMode::ALL {
            assert_eq!(m.name().parse::<LpfMode>().unwrap(), m);
        }
        assert!("fast".parse::<LpfMode>().is_err());
    }
}
