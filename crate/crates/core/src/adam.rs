//! Adam with bias correction.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update in place. `t` is the 1-based step count used for bias correction.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    hp: &AdamParams,
) {
    assert!(t >= 1, "adam step count starts at 1");
    assert!(params.len() == grads.len() && m.len() == params.len() && v.len() == params.len());
    let bc1 = 1.0 - hp.beta1.powf(t as f64);
    let bc2 = 1.0 - hp.beta2.powf(t as f64);
    for i in 0..params.len() {
        adam_scalar(&mut params[i], grads[i], &mut m[i], &mut v[i], bc1, bc2, lr, hp);
    }
}

/// Single-coordinate update given precomputed bias corrections `1 − βᵗ`.
#[allow(clippy::too_many_arguments)]
#[inline]
pub fn adam_scalar(
    p: &mut f64,
    g: f64,
    m: &mut f64,
    v: &mut f64,
    bc1: f64,
    bc2: f64,
    lr: f64,
    hp: &AdamParams,
) {
    *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
    *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
    let m_hat = *m / bc1;
    let v_hat = *v / bc2;
    *p -= lr * m_hat / (v_hat.sqrt() + hp.eps);
}
