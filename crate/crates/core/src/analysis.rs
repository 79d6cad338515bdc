//! Regret-bound calculators: asymptotic `log T` coefficients, the
//! finite-time constants `F_2(ε)` and `Γ`, the decentralized UCB1
//! finite-time bound, and the lower-bound reference coefficient.

use std::f64::consts::PI;

use serde::Serialize;

use crate::agent::Policy;
use crate::error::{Error, Result};
use crate::graph::{metropolis_weights, NeighborGraph};
use crate::klcore::bernoulli_kl;
use crate::rewards::gaps;

pub const F2_SCAN_CAP: u64 = 1_000_000;
const F2_MIN_HORIZON: u64 = 10_000;

fn check_means(mu: &[f64]) -> Result<()> {
    if mu.is_empty() {
        return Err(Error::Domain("at least one arm mean is required".into()));
    }
    if let Some(m) = mu.iter().find(|m| !(0.0..=1.0).contains(*m)) {
        return Err(Error::Domain(format!("mean {m} outside [0, 1]")));
    }
    Ok(())
}

fn best(mu: &[f64]) -> f64 {
    mu.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Per-arm multiplier of `log T` for (decentralized) KL-UCB. Arms with
/// `Δ_k = 0` get 0.
pub fn asym_coeff_klucb(mu: &[f64], neighborhood: usize, varsigma: f64, single_agent: bool) -> Result<Vec<f64>> {
    check_means(mu)?;
    if neighborhood == 0 {
        return Err(Error::Domain("neighborhood size must be >= 1".into()));
    }
    let top = best(mu);
    let scale = if single_agent { 1.0 } else { 3.0 * (1.0 + varsigma) / (2.0 * neighborhood as f64) };
    Ok(mu
        .iter()
        .map(|&m| {
            let d = bernoulli_kl(m, top);
            if m >= top || d == 0.0 {
                0.0
            } else {
                scale / d
            }
        })
        .collect())
}

/// Per-arm multiplier of `log T` for (decentralized) UCB1.
pub fn asym_coeff_ucb1(mu: &[f64], neighborhood: usize, beta: f64, single_agent: bool) -> Result<Vec<f64>> {
    check_means(mu)?;
    if neighborhood == 0 {
        return Err(Error::Domain("neighborhood size must be >= 1".into()));
    }
    ucb1_coeff_from_gaps(&gaps(mu), neighborhood, beta, single_agent)
}

/// [`asym_coeff_ucb1`] taking the gaps `Δ_k` directly, which avoids the
/// rounding in `μ_1 - μ_k`.
pub fn ucb1_coeff_from_gaps(gaps: &[f64], neighborhood: usize, beta: f64, single_agent: bool) -> Result<Vec<f64>> {
    if neighborhood == 0 {
        return Err(Error::Domain("neighborhood size must be >= 1".into()));
    }
    if let Some(d) = gaps.iter().find(|d| !(**d >= 0.0 && **d <= 1.0)) {
        return Err(Error::Domain(format!("gap {d} outside [0, 1]")));
    }
    let scale = if single_agent { 8.0 } else { 12.0 * (1.0 + beta).powi(2) / neighborhood as f64 };
    Ok(gaps.iter().map(|&d| if d > 0.0 { scale / d } else { 0.0 }).collect())
}

/// Lai-Robbins style reference `Δ_k / (N d(μ_k; μ_1))`.
pub fn lower_bound_coeff(mu: &[f64], agents: usize) -> Result<Vec<f64>> {
    check_means(mu)?;
    if agents == 0 {
        return Err(Error::Domain("agent count must be >= 1".into()));
    }
    let top = best(mu);
    Ok(mu
        .iter()
        .map(|&m| {
            let d = bernoulli_kl(m, top);
            if m >= top || d == 0.0 || d.is_infinite() {
                0.0
            } else {
                (top - m) / (agents as f64 * d)
            }
        })
        .collect())
}

/// `2(M^2 + 2MN + N)`
pub fn f2_floor(agents: usize, arms: usize) -> u64 {
    let (n, m) = (agents as u64, arms as u64);
    2 * (m * m + 2 * m * n + n)
}

/// `(ρ^n + Σ_{h=2}^{n} ρ^{n-h} / ((h-1) h)) n^{3/2}` evaluated incrementally.
struct ConcentrationSeries {
    rho: f64,
    n: u64,
    tail: f64,
}

impl ConcentrationSeries {
    fn new(rho: f64) -> Self {
        Self { rho, n: 1, tail: 0.0 }
    }

    fn value(&self) -> f64 {
        let n = self.n as f64;
        (self.rho.powf(n) + self.tail) * n.powf(1.5)
    }

    fn advance(&mut self) {
        let n = self.n as f64;
        self.tail = self.rho * self.tail + 1.0 / (n * (n + 1.0));
        self.n += 1;
    }
}

/// `(2/n) log_{1/ρ} n < 1`
fn log_condition(n: u64, rho: f64) -> bool {
    if rho <= 0.0 || n <= 1 {
        return true;
    }
    2.0 * (n as f64).ln() / (n as f64 * (1.0 / rho).ln()) < 1.0
}

/// Both `F_2` conditions at one `n`.
pub fn f2_conditions_hold(n: u64, epsilon: f64, rho2: f64, agents: usize) -> bool {
    let mut s = ConcentrationSeries::new(rho2);
    while s.n < n {
        s.advance();
    }
    s.value() <= epsilon / agents as f64 && log_condition(n, rho2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct F2Value {
    /// Smallest `n` from which both conditions held through the verified horizon.
    pub f: u64,
    pub floor: u64,
    pub value: u64,
    pub verified_through: u64,
}

pub fn f2(epsilon: f64, rho2: f64, agents: usize, arms: usize) -> Result<u64> {
    f2_detailed(epsilon, rho2, agents, arms, F2_SCAN_CAP).map(|v| v.value)
}

/// `F_2(ε) = max(f(ε), 2(M^2 + 2MN + N))`.
///
/// `f(ε)` must make both conditions hold for every `n >= f(ε)`; persistence
/// is checked numerically up to `max(10 f, 10^4)`.
pub fn f2_detailed(epsilon: f64, rho2: f64, agents: usize, arms: usize, cap: u64) -> Result<F2Value> {
    if !(0.0..1.0).contains(&rho2) {
        return Err(Error::Domain(format!("F2 requires 0 <= rho2 < 1, got {rho2}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    if agents == 0 {
        return Err(Error::Domain("agent count must be >= 1".into()));
    }
    let threshold = epsilon / agents as f64;
    let mut series = ConcentrationSeries::new(rho2);
    let mut streak: Option<u64> = None;
    loop {
        let n = series.n;
        let holds = series.value() <= threshold && log_condition(n, rho2);
        match (holds, streak) {
            (true, None) => streak = Some(n),
            (false, Some(_)) => streak = None,
            _ => {}
        }
        if let Some(start) = streak {
            if start > cap {
                return Err(Error::ScanCap { what: "F2", cap });
            }
            let horizon = (10 * start).max(F2_MIN_HORIZON);
            if n >= horizon {
                let floor = f2_floor(agents, arms);
                return Ok(F2Value { f: start, floor, value: start.max(floor), verified_through: horizon });
            }
        } else if n > cap {
            return Err(Error::ScanCap { what: "F2", cap });
        }
        series.advance();
    }
}

/// `Γ = M^2 + 2MN + N + Σ_i (π^2/3 + 2 F_2(β_i) - 1)`.
pub fn gamma(agents: usize, arms: usize, betas: &[f64], rho2: f64) -> Result<f64> {
    if betas.len() != agents {
        return Err(Error::Length { expected: agents, got: betas.len() });
    }
    let (n, m) = (agents as f64, arms as f64);
    let mut total = m * m + 2.0 * m * n + n;
    for &b in betas {
        total += PI * PI / 3.0 + 2.0 * f2(b, rho2, agents, arms)? as f64 - 1.0;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiniteBoundConstants {
    /// `F_2(β_i)` of this agent.
    pub f2: u64,
    pub gamma: f64,
}

/// Decentralized UCB1 finite-time regret bound for one agent:
/// `Σ_{Δ_k > 0} (max{12(1+β)^2 log T / (|N_i| Δ_k^2), 2 F_2(β)} + Γ) Δ_k`.
pub fn finite_bound_ucb1(
    horizon: f64,
    mu: &[f64],
    neighborhood: usize,
    beta: f64,
    constants: &FiniteBoundConstants,
) -> Result<f64> {
    check_means(mu)?;
    if !(horizon >= 1.0) {
        return Err(Error::Domain(format!("horizon must be >= 1, got {horizon}")));
    }
    if neighborhood == 0 {
        return Err(Error::Domain("neighborhood size must be >= 1".into()));
    }
    let log_t = horizon.ln();
    let lead = 12.0 * (1.0 + beta).powi(2) * log_t / neighborhood as f64;
    Ok(gaps(mu)
        .into_iter()
        .filter(|&d| d > 0.0)
        .map(|d| ((lead / (d * d)).max(2.0 * constants.f2 as f64) + constants.gamma) * d)
        .sum())
}

/// Bound summary for one agent.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub agent: usize,
    pub policy: Policy,
    pub neighborhood_size: usize,
    /// `ς_i` for KL policies, `β_i` for UCB1 policies.
    pub parameter: f64,
    pub per_arm_coefficients: Vec<f64>,
    pub asymptotic_coefficient: f64,
    pub lower_bound_coefficient: f64,
    pub horizon: u64,
    /// Decentralized UCB1 only.
    pub finite_bound: Option<f64>,
    pub rho2: f64,
    pub f2: Option<u64>,
    pub gamma: Option<f64>,
    pub note: Option<String>,
}

/// Bound reports for every agent of a network. Constants are computed per
/// connected component (the algorithms decouple across components).
pub fn bound_reports(
    graph: &NeighborGraph,
    mu: &[f64],
    policies: &[Policy],
    varsigma: &[f64],
    beta: &[f64],
    horizon: u64,
) -> Result<Vec<BoundReport>> {
    let n = graph.node_count();
    for (what, len) in [("policy", policies.len()), ("varsigma", varsigma.len()), ("beta", beta.len())] {
        if len != n {
            return Err(Error::Config(format!("{what}: expected {n} per-agent entries, got {len}")));
        }
    }
    let arms = mu.len();
    let mut reports: Vec<Option<BoundReport>> = vec![None; n];
    for members in graph.connected_components() {
        let sub = graph.induced(&members)?;
        let rho2 = metropolis_weights(&sub).rho2();
        let size = members.len();
        let comp_betas: Vec<f64> = members.iter().map(|&i| beta[i]).collect();
        let all_dec_ucb1 = members.iter().all(|&i| policies[i].effective(graph.neighborhood_size(i)) == Policy::DecUcb1);
        // a scan-cap failure leaves the finite bound undefined instead of
        // aborting the whole report
        let comp_gamma = if size > 1 && all_dec_ucb1 {
            match gamma(size, arms, &comp_betas, rho2) {
                Ok(g) => Ok(g),
                Err(Error::ScanCap { cap, .. }) => Err(format!("F2 scan exceeded cap of {cap}; finite-time bound not computed")),
                Err(e) => return Err(e),
            }
        } else {
            Err("component mixes policies; finite-time bound not defined".to_string())
        };
        for &i in &members {
            let nb = graph.neighborhood_size(i);
            let policy = policies[i].effective(nb);
            let single = policy.is_single_agent();
            let (parameter, per_arm) = if policy.is_kl() {
                (varsigma[i], asym_coeff_klucb(mu, nb, varsigma[i], single)?)
            } else {
                (beta[i], asym_coeff_ucb1(mu, nb, beta[i], single)?)
            };
            let mut report = BoundReport {
                agent: i,
                policy,
                neighborhood_size: nb,
                parameter,
                asymptotic_coefficient: per_arm.iter().sum(),
                per_arm_coefficients: per_arm,
                lower_bound_coefficient: lower_bound_coeff(mu, size)?.iter().sum(),
                horizon,
                finite_bound: None,
                rho2,
                f2: None,
                gamma: None,
                note: None,
            };
            match (policy, &comp_gamma) {
                (Policy::DecUcb1, Ok(g)) => {
                    let g = *g;
                    let f2_beta = f2(beta[i], rho2, size, arms)?;
                    let constants = FiniteBoundConstants { f2: f2_beta, gamma: g };
                    report.finite_bound = Some(finite_bound_ucb1(horizon.max(1) as f64, mu, nb, beta[i], &constants)?);
                    report.f2 = Some(f2_beta);
                    report.gamma = Some(g);
                }
                (Policy::DecKlucb, _) => {
                    report.note = Some("finite-time KL-UCB constant not computed; asymptotic coefficient only".into());
                }
                (Policy::DecUcb1, Err(why)) => report.note = Some(why.clone()),
                _ => {}
            }
            reports[i] = Some(report);
        }
    }
    Ok(reports.into_iter().map(|r| r.expect("every node belongs to a component")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn klucb_coefficients() {
        let d = bernoulli_kl(0.5, 0.6);
        assert!((d - 0.0204110).abs() < 1e-6);
        let dec = asym_coeff_klucb(&[0.6, 0.5], 20, 0.01, false).unwrap();
        assert_eq!(dec[0], 0.0);
        assert!((dec[1] - 3.0 * 1.01 / (40.0 * d)).abs() < 1e-12);
        assert!((dec[1] - 3.71123).abs() < 1e-5);
        let single = asym_coeff_klucb(&[0.6, 0.5], 20, 0.01, true).unwrap();
        assert!((single[1] - 48.9932).abs() < 1e-4);
    }

    #[test]
    fn ucb1_coefficients() {
        let dec = asym_coeff_ucb1(&[0.6, 0.5], 20, 0.01, false).unwrap();
        assert!((dec[1] - 6.12060).abs() < 1e-5);
        let single = asym_coeff_ucb1(&[0.6, 0.5], 20, 0.01, true).unwrap();
        assert!((single[1] - 80.0).abs() < 1e-12);
        assert_eq!(ucb1_coeff_from_gaps(&[0.0, 0.1], 20, 0.01, true).unwrap()[1], 80.0);
        let twelve = asym_coeff_ucb1(&[0.6, 0.5], 12, 0.0, false).unwrap();
        assert!((twelve[1] - 10.0).abs() < 1e-12);
        assert!((single[1] / twelve[1] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn tied_arms_contribute_nothing() {
        let c = asym_coeff_ucb1(&[0.5, 0.5, 0.1], 3, 0.1, false).unwrap();
        assert_eq!(&c[..2], &[0.0, 0.0]);
        let k = asym_coeff_klucb(&[0.5, 0.5, 0.1], 3, 0.1, false).unwrap();
        assert_eq!(&k[..2], &[0.0, 0.0]);
    }

    #[test]
    fn lower_bound_values() {
        let one = lower_bound_coeff(&[0.6, 0.5], 1).unwrap();
        assert!((one[1] - 0.1 / bernoulli_kl(0.5, 0.6)).abs() < 1e-12);
        let twenty = lower_bound_coeff(&[0.6, 0.5], 20).unwrap();
        assert!((twenty[1] - 0.244966).abs() < 1e-6);
        let forty = lower_bound_coeff(&[0.6, 0.5], 40).unwrap();
        assert!((forty[1] * 2.0 - twenty[1]).abs() < 1e-15);
    }

    #[test]
    fn f2_floor_value() {
        assert_eq!(f2_floor(3, 2), 38);
        assert_eq!(f2(1e9, 2.0 / 3.0, 3, 2).unwrap(), 38);
    }

    #[test]
    fn f2_domain() {
        assert!(matches!(f2(1.0, 1.0, 3, 2), Err(Error::Domain(_))));
        assert!(matches!(f2(0.0, 0.5, 3, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn f2_scan_cap() {
        assert!(matches!(f2_detailed(1e-6, 0.999, 50, 5, 1000), Err(Error::ScanCap { .. })));
    }

    #[test]
    fn gamma_with_floor() {
        let g = gamma(3, 2, &[1e9; 3], 2.0 / 3.0).unwrap();
        assert!((g - (19.0 + 225.0 + PI * PI)).abs() < 1e-9);
        assert!((g - 253.870).abs() < 1e-3);
    }

    #[test]
    fn finite_bound_at_t1() {
        let c = FiniteBoundConstants { f2: 38, gamma: 100.0 };
        let b = finite_bound_ucb1(1.0, &[0.6, 0.5, 0.4], 3, 0.1, &c).unwrap();
        assert!((b - (76.0 + 100.0) * (0.1 + 0.2)).abs() < 1e-9);
        assert!(finite_bound_ucb1(0.5, &[0.6, 0.5], 3, 0.1, &c).is_err());
    }
}
