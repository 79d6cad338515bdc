//! Bernoulli KL divergence, its upper-confidence inversion, and the
//! exploration budgets used by the four policies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KL_SOLVE_TOL: f64 = 1e-9;
pub const KL_SOLVE_MAX_ITER: usize = 100;

/// Exploration constants of one agent plus its neighborhood size `|N_i|`
/// (which counts the agent itself).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceParams {
    pub varsigma: f64,
    pub beta: f64,
    pub neighborhood_size: usize,
}

impl ConfidenceParams {
    pub fn new(varsigma: f64, beta: f64, neighborhood_size: usize) -> Result<Self> {
        if !(varsigma >= 0.0 && varsigma.is_finite()) || !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Domain(format!(
                "exploration constants must be finite and nonnegative (varsigma = {varsigma}, beta = {beta})"
            )));
        }
        if neighborhood_size == 0 {
            return Err(Error::Domain("neighborhood size counts the agent itself and must be >= 1".into()));
        }
        Ok(Self { varsigma, beta, neighborhood_size })
    }
}

/// `d(p; q)` with the `0 log 0 = 0` convention.
pub fn kl_div(p: f64, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("kl_div({p}, {q}): arguments must lie in [0, 1]")));
    }
    Ok(bernoulli_kl(p, q))
}

/// Unchecked `d(p; q)`; callers guarantee both arguments are in `[0, 1]`.
pub(crate) fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let pos = if p > 0.0 {
        if q == 0.0 {
            return f64::INFINITY;
        }
        p * (p / q).ln()
    } else {
        0.0
    };
    let neg = if p < 1.0 {
        if q == 1.0 {
            return f64::INFINITY;
        }
        (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
    } else {
        0.0
    };
    (pos + neg).max(0.0)
}

/// Largest `q` in `[z, 1]` with `n * d(z; q) <= budget`, by bisection.
pub fn kl_ucb_solve(z: f64, n: u64, budget: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&z), "z = {z} must be clamped to [0, 1]");
    debug_assert!(n >= 1);
    let z = z.clamp(0.0, 1.0);
    if z >= 1.0 {
        return 1.0;
    }
    if budget <= 0.0 {
        return z;
    }
    let n = n as f64;
    let mut lo = z;
    let mut hi = 1.0;
    for _ in 0..KL_SOLVE_MAX_ITER {
        if hi - lo <= KL_SOLVE_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if n * bernoulli_kl(z, mid) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// `(max(log t, 0), max(log log t, 0))`.
pub fn clamped_logs(t: f64) -> (f64, f64) {
    let l1 = if t > 1.0 { t.ln() } else { 0.0 };
    let l2 = if l1 > 0.0 { l1.ln().max(0.0) } else { 0.0 };
    (l1, l2)
}

/// KL-UCB exploration budget `Q(t)`.
pub fn kl_budget(t: f64, params: &ConfidenceParams, single_agent: bool) -> f64 {
    let (l1, l2) = clamped_logs(t);
    let base = l1 + 3.0 * l2;
    if single_agent {
        base
    } else {
        3.0 * (1.0 + params.varsigma) * base / (2.0 * params.neighborhood_size as f64)
    }
}

/// UCB1 confidence bonus `C(t, n)`.
pub fn ucb1_bonus(t: f64, n: u64, params: &ConfidenceParams, single_agent: bool) -> f64 {
    debug_assert!(n >= 1);
    let (l1, _) = clamped_logs(t);
    let n = n as f64;
    if single_agent {
        (2.0 * l1 / n).sqrt()
    } else {
        (1.0 + params.beta) * (3.0 * l1 / (params.neighborhood_size as f64 * n)).sqrt()
    }
}
