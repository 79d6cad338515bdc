//! Reward models on `[0, 1]` with known true means.

use std::fmt;

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const QUAD_TOL: f64 = 1e-13;
const MEAN_TARGET_TOL: f64 = 1e-9;
/// Truncated normals whose mass on `[0, 1]` falls below this are rejected;
/// rejection sampling would stall on them.
const MIN_TRUNCATED_MASS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArmSpec {
    Bernoulli { mean: f64 },
    /// Normal(`mu_raw`, `sigma`) conditioned on `[0, 1]`.
    TruncatedNormal { mu_raw: f64, sigma: f64 },
    Beta { a: f64, b: f64 },
}

impl ArmSpec {
    pub fn bernoulli(mean: f64) -> Result<Self> {
        let spec = ArmSpec::Bernoulli { mean };
        spec.validate()?;
        Ok(spec)
    }

    pub fn truncated_normal(mu_raw: f64, sigma: f64) -> Result<Self> {
        let spec = ArmSpec::TruncatedNormal { mu_raw, sigma };
        spec.validate()?;
        Ok(spec)
    }

    /// Truncated normal whose post-truncation mean equals `mean`; the
    /// pre-truncation location is found by bisection.
    pub fn truncated_normal_with_mean(mean: f64, sigma: f64) -> Result<Self> {
        if !(mean > 0.0 && mean < 1.0) {
            return Err(Error::Domain(format!("target mean {mean} must lie strictly inside (0, 1)")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!("sigma {sigma} must be positive")));
        }
        let mut lo = mean - 1.0;
        let mut hi = mean + 1.0;
        let mut widen = 0;
        while truncated_normal_mean(lo, sigma) > mean || truncated_normal_mean(hi, sigma) < mean {
            lo -= 1.0;
            hi += 1.0;
            widen += 1;
            if widen > 64 {
                return Err(Error::Domain(format!(
                    "cannot bracket truncated-normal location for mean {mean}, sigma {sigma}"
                )));
            }
        }
        while hi - lo > MEAN_TARGET_TOL {
            let mid = 0.5 * (lo + hi);
            if truncated_normal_mean(mid, sigma) < mean {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Self::truncated_normal(0.5 * (lo + hi), sigma)
    }

    pub fn beta(a: f64, b: f64) -> Result<Self> {
        let spec = ArmSpec::Beta { a, b };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ArmSpec::Bernoulli { mean } if (0.0..=1.0).contains(&mean) => Ok(()),
            ArmSpec::Bernoulli { mean } => {
                Err(Error::Domain(format!("bernoulli mean {mean} outside [0, 1]")))
            }
            ArmSpec::TruncatedNormal { mu_raw, sigma } => {
                if !(sigma > 0.0 && sigma.is_finite() && mu_raw.is_finite()) {
                    return Err(Error::Domain(format!("invalid truncated normal ({mu_raw}, {sigma})")));
                }
                let mass = truncated_normal_mass(mu_raw, sigma);
                if mass < MIN_TRUNCATED_MASS {
                    return Err(Error::Domain(format!(
                        "truncated normal ({mu_raw}, {sigma}) has mass {mass:e} on [0, 1]"
                    )));
                }
                Ok(())
            }
            ArmSpec::Beta { a, b } if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() => Ok(()),
            ArmSpec::Beta { a, b } => Err(Error::Domain(format!("beta shape ({a}, {b}) must be positive"))),
        }
    }

    /// Effective mean of the realized rewards.
    pub fn mean(&self) -> f64 {
        match *self {
            ArmSpec::Bernoulli { mean } => mean,
            ArmSpec::TruncatedNormal { mu_raw, sigma } => truncated_normal_mean(mu_raw, sigma),
            ArmSpec::Beta { a, b } => a / (a + b),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ArmSpec::Bernoulli { mean } => {
                if rng.random::<f64>() < mean {
                    1.0
                } else {
                    0.0
                }
            }
            ArmSpec::TruncatedNormal { mu_raw, sigma } => {
                let normal = Normal::new(mu_raw, sigma).expect("validated sigma");
                loop {
                    let x = normal.sample(rng);
                    if (0.0..=1.0).contains(&x) {
                        return x;
                    }
                }
            }
            ArmSpec::Beta { a, b } => Beta::new(a, b).expect("validated shape").sample(rng).clamp(0.0, 1.0),
        }
    }
}

impl fmt::Display for ArmSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArmSpec::Bernoulli { mean } => write!(f, "bern({mean})"),
            ArmSpec::TruncatedNormal { mu_raw, sigma } => write!(f, "tnorm({mu_raw},{sigma})"),
            ArmSpec::Beta { a, b } => write!(f, "beta({a},{b})"),
        }
    }
}

/// Unnormalized normal density rescaled so the peak over `[0, 1]` is 1.
/// Keeps far-off locations from underflowing.
fn scaled_density(x: f64, mu: f64, sigma: f64) -> f64 {
    let c = mu.clamp(0.0, 1.0);
    let s2 = 2.0 * sigma * sigma;
    (-((x - mu).powi(2) - (c - mu).powi(2)) / s2).exp()
}

fn truncated_normal_mass(mu: f64, sigma: f64) -> f64 {
    let c = mu.clamp(0.0, 1.0);
    let peak = (-(c - mu).powi(2) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    peak * adaptive_simpson(&|x| scaled_density(x, mu, sigma), 0.0, 1.0, QUAD_TOL)
}

/// Mean of Normal(`mu`, `sigma`) conditioned on `[0, 1]`, by quadrature.
pub fn truncated_normal_mean(mu: f64, sigma: f64) -> f64 {
    let mass = adaptive_simpson(&|x| scaled_density(x, mu, sigma), 0.0, 1.0, QUAD_TOL);
    let first = adaptive_simpson(&|x| x * scaled_density(x, mu, sigma), 0.0, 1.0, QUAD_TOL);
    (first / mass).clamp(0.0, 1.0)
}

pub(crate) fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Arms with their effective means and gaps to the best arm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmSet {
    arms: Vec<ArmSpec>,
    mu: Vec<f64>,
    delta: Vec<f64>,
}

impl ArmSet {
    pub fn new(arms: Vec<ArmSpec>) -> Result<Self> {
        if arms.is_empty() {
            return Err(Error::Domain("at least one arm is required".into()));
        }
        for a in &arms {
            a.validate()?;
        }
        let mu: Vec<f64> = arms.iter().map(ArmSpec::mean).collect();
        let delta = gaps(&mu);
        Ok(Self { arms, mu, delta })
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn arms(&self) -> &[ArmSpec] {
        &self.arms
    }

    pub fn means(&self) -> &[f64] {
        &self.mu
    }

    pub fn gaps(&self) -> &[f64] {
        &self.delta
    }

    pub fn best_mean(&self) -> f64 {
        self.mu.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `Δ_k = max_j μ_j - μ_k`; arms need not be sorted.
pub fn gaps(mu: &[f64]) -> Vec<f64> {
    let best = mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    mu.iter().map(|m| best - m).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_bernoulli() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let one = ArmSpec::bernoulli(1.0).unwrap();
        let zero = ArmSpec::bernoulli(0.0).unwrap();
        for _ in 0..1000 {
            assert_eq!(one.sample(&mut rng), 1.0);
            assert_eq!(zero.sample(&mut rng), 0.0);
        }
    }

    #[test]
    fn gap_vectors() {
        let g = gaps(&[0.6, 0.5, 0.4, 0.3, 0.2]);
        let want = [0.0, 0.1, 0.2, 0.3, 0.4];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(gaps(&[0.7]), vec![0.0]);
        let tied = gaps(&[0.5, 0.5, 0.1]);
        assert_eq!(tied[0], 0.0);
        assert_eq!(tied[1], 0.0);
        assert!((tied[2] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn unsorted_arms_are_fine() {
        let set = ArmSet::new(vec![
            ArmSpec::bernoulli(0.2).unwrap(),
            ArmSpec::bernoulli(0.9).unwrap(),
        ])
        .unwrap();
        assert_eq!(set.best_mean(), 0.9);
        assert!((set.gaps()[0] - 0.7).abs() < 1e-15);
        assert_eq!(set.gaps()[1], 0.0);
    }

    #[test]
    fn mean_targeted_truncated_normal() {
        for target in [0.2, 0.4, 0.6, 0.9] {
            let spec = ArmSpec::truncated_normal_with_mean(target, 0.1).unwrap();
            assert!((spec.mean() - target).abs() < 1e-8, "{target}");
        }
        // wide sigma pushes the raw location well outside [0, 1]
        let wide = ArmSpec::truncated_normal_with_mean(0.2, 0.5).unwrap();
        assert!(matches!(wide, ArmSpec::TruncatedNormal { mu_raw, .. } if mu_raw < 0.2));
    }

    #[test]
    fn invalid_specs() {
        assert!(ArmSpec::bernoulli(1.2).is_err());
        assert!(ArmSpec::beta(0.0, 1.0).is_err());
        assert!(ArmSpec::truncated_normal(50.0, 0.1).is_err());
        assert!(ArmSet::new(vec![]).is_err());
    }

    #[test]
    fn symmetric_truncation_keeps_center() {
        assert!((truncated_normal_mean(0.5, 0.3) - 0.5).abs() < 1e-12);
    }
}
