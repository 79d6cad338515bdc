//! Exact coefficient tracking: every consensus estimate `z_{i,k}(t)` is a
//! linear combination of raw rewards `X_{j,k}(τ)`. The ledger carries those
//! coefficients forward through the same recursions the agents run, and a
//! second, closed-form route built from powers of `W` cross-checks them.
//!
//! Coefficients are stored per pull: entry `h` for `(j, k)` belongs to the
//! `h`-th pull of arm `k` by agent `j`. Coefficients of rewards that were
//! never drawn are implicitly zero.

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::checks::{CheckOutcome, CheckReport};
use crate::engine::RunTrace;
use crate::error::{Error, Result};

pub const GUARD_MAX_AGENTS: usize = 16;
pub const GUARD_MAX_HORIZON: usize = 2000;
pub const RECONSTRUCTION_TOL: f64 = 1e-9;
pub const SUM_TO_ONE_TOL: f64 = 1e-10;
pub const CROSS_CHECK_TOL: f64 = 1e-10;

pub const CHECK_RECONSTRUCTION: &str = "reconstruction |z - sum c X| <= 1e-9";
pub const CHECK_SUM_TO_ONE: &str = "coefficients sum to 1 within 1e-10";
pub const CHECK_CLOSED_FORM: &str = "recursive and closed-form coefficients agree within 1e-10";
pub const CHECK_CONCENTRATION_ALL: &str = "coefficient concentration, every pull";
pub const CHECK_CONCENTRATION_INIT: &str = "coefficient concentration, initialization pull";

/// Coefficients at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerSnapshot {
    pub t: usize,
    /// `[i][k][j][h]`
    pub coeffs: Vec<Vec<Vec<Vec<f64>>>>,
    /// `[j][k]` pull times `τ` in ascending order (first is always 0).
    pub pull_times: Vec<Vec<Vec<usize>>>,
    /// `[j][k][h]` reward drawn at the `h`-th pull.
    pub rewards: Vec<Vec<Vec<f64>>>,
}

impl LedgerSnapshot {
    pub fn agent_count(&self) -> usize {
        self.coeffs.len()
    }

    pub fn arm_count(&self) -> usize {
        self.pull_times.first().map_or(0, Vec::len)
    }

    pub fn pulls(&self, j: usize, k: usize) -> usize {
        self.pull_times[j][k].len()
    }

    /// `Σ_{j,τ} c_{i,k,j}^{(τ)}(t) X_{j,k}(τ)`
    pub fn reconstruct(&self, i: usize, k: usize) -> f64 {
        self.coeffs[i][k]
            .iter()
            .zip(&self.rewards)
            .map(|(cj, xj)| cj.iter().zip(&xj[k]).map(|(c, x)| c * x).sum::<f64>())
            .sum()
    }

    pub fn coefficient_sum(&self, i: usize, k: usize) -> f64 {
        self.coeffs[i][k].iter().flatten().sum()
    }

    /// `c_{i,k,j}^{(τ)}(t)`; zero when `j` did not pull `k` at `τ`.
    pub fn coefficient(&self, i: usize, k: usize, j: usize, tau: usize) -> f64 {
        match self.pull_times[j][k].binary_search(&tau) {
            Ok(h) => self.coeffs[i][k][j][h],
            Err(_) => 0.0,
        }
    }
}

/// Propagates coefficients round by round alongside a trace.
#[derive(Debug, Clone)]
pub struct CoefficientTracker {
    weights: DMatrix<f64>,
    neighbor_rows: Vec<Vec<(usize, f64)>>,
    current: LedgerSnapshot,
}

impl CoefficientTracker {
    pub fn new(trace: &RunTrace) -> Result<Self> {
        let n = trace.agent_count();
        let m = trace.arm_count();
        if n == 0 || m == 0 || trace.weights.nrows() != n || trace.weights.ncols() != n {
            return Err(Error::Trace("trace dimensions do not match its weight matrix".into()));
        }
        let neighbor_rows = (0..n)
            .map(|i| (0..n).filter(|&l| trace.weights[(i, l)] != 0.0).map(|l| (l, trace.weights[(i, l)])).collect())
            .collect();
        let coeffs = (0..n)
            .map(|i| (0..m).map(|_| (0..n).map(|j| vec![if i == j { 1.0 } else { 0.0 }]).collect()).collect())
            .collect();
        let current = LedgerSnapshot {
            t: 0,
            coeffs,
            pull_times: vec![vec![vec![0]; m]; n],
            rewards: trace.init_rewards.iter().map(|row| row.iter().map(|&x| vec![x]).collect()).collect(),
        };
        Ok(Self { weights: trace.weights.clone(), neighbor_rows, current })
    }

    pub fn snapshot(&self) -> &LedgerSnapshot {
        &self.current
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Applies one round: pulls at time `t + 1`.
    pub fn step(&mut self, round: &crate::engine::RoundRecord) -> Result<()> {
        let n = self.current.agent_count();
        let m = self.current.arm_count();
        if round.chosen.len() != n || round.rewards.len() != n {
            return Err(Error::Trace(format!("round at t={} has wrong agent count", self.current.t)));
        }
        let next_t = self.current.t + 1;
        for (j, (&arm, &x)) in round.chosen.iter().zip(&round.rewards).enumerate() {
            if arm >= m {
                return Err(Error::Trace(format!("agent {j} pulled nonexistent arm {arm}")));
            }
            self.current.pull_times[j][arm].push(next_t);
            self.current.rewards[j][arm].push(x);
        }

        let old = &self.current.coeffs;
        let mut fresh = Vec::with_capacity(n);
        for i in 0..n {
            let mut per_arm = Vec::with_capacity(m);
            for k in 0..m {
                let mut per_source: Vec<Vec<f64>> =
                    (0..n).map(|j| vec![0.0; self.current.pull_times[j][k].len()]).collect();
                for &(l, w) in &self.neighbor_rows[i] {
                    for (dst, src) in per_source.iter_mut().zip(&old[l][k]) {
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += w * s;
                        }
                    }
                }
                if round.chosen[i] == k {
                    // sample-mean increment: every pull moves from 1/n to 1/(n+1)
                    let pulls = self.current.pull_times[i][k].len();
                    let before = 1.0 / (pulls - 1) as f64;
                    let after = 1.0 / pulls as f64;
                    let own = &mut per_source[i];
                    for c in own.iter_mut().take(pulls - 1) {
                        *c += after - before;
                    }
                    own[pulls - 1] += after;
                }
                per_arm.push(per_source);
            }
            fresh.push(per_arm);
        }
        self.current.coeffs = fresh;
        self.current.t = next_t;
        Ok(())
    }
}

/// All snapshots of one run.
#[derive(Debug, Clone)]
pub struct CoefficientLedger {
    pub weights: DMatrix<f64>,
    pub snapshots: Vec<LedgerSnapshot>,
}

impl CoefficientLedger {
    pub fn at(&self, t: usize) -> &LedgerSnapshot {
        &self.snapshots[t]
    }

    pub fn horizon(&self) -> usize {
        self.snapshots.len() - 1
    }

    /// Writes nonzero coefficients as `run,t,i,k,j,tau,c` (1-based agents and arms).
    pub fn write_csv<W: Write>(&self, run: u64, out: &mut W) -> Result<()> {
        writeln!(out, "run,t,i,k,j,tau,c")?;
        for snap in &self.snapshots {
            for (i, per_arm) in snap.coeffs.iter().enumerate() {
                for (k, per_source) in per_arm.iter().enumerate() {
                    for (j, cs) in per_source.iter().enumerate() {
                        for (h, &c) in cs.iter().enumerate() {
                            if c != 0.0 {
                                let tau = snap.pull_times[j][k][h];
                                writeln!(out, "{run},{},{},{},{},{tau},{c:.17e}", snap.t, i + 1, k + 1, j + 1)?;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn guard(trace: &RunTrace, allow_large: bool) -> Result<()> {
    let (n, t) = (trace.agent_count(), trace.horizon());
    if !allow_large && (n > GUARD_MAX_AGENTS || t > GUARD_MAX_HORIZON) {
        return Err(Error::Guard(format!(
            "coefficient oracle limited to N <= {GUARD_MAX_AGENTS}, T <= {GUARD_MAX_HORIZON} (got N = {n}, T = {t})"
        )));
    }
    Ok(())
}

/// Builds the full ledger (every time step kept).
pub fn track(trace: &RunTrace, allow_large: bool) -> Result<CoefficientLedger> {
    guard(trace, allow_large)?;
    let mut tracker = CoefficientTracker::new(trace)?;
    let mut snapshots = Vec::with_capacity(trace.horizon() + 1);
    snapshots.push(tracker.snapshot().clone());
    for round in &trace.rounds {
        tracker.step(round)?;
        snapshots.push(tracker.snapshot().clone());
    }
    Ok(CoefficientLedger { weights: trace.weights.clone(), snapshots })
}

pub fn reconstruct_z(ledger: &CoefficientLedger, i: usize, k: usize, t: usize) -> f64 {
    ledger.at(t).reconstruct(i, k)
}

/// Powers `W^0 ..= W^max` for the closed-form route.
#[derive(Debug, Clone)]
pub struct MatrixPowers {
    powers: Vec<DMatrix<f64>>,
}

impl MatrixPowers {
    pub fn new(w: &DMatrix<f64>, max: usize) -> Self {
        let n = w.nrows();
        let mut powers = Vec::with_capacity(max + 1);
        powers.push(DMatrix::identity(n, n));
        for p in 1..=max {
            let next = &powers[p - 1] * w;
            powers.push(next);
        }
        Self { powers }
    }

    pub fn get(&self, p: usize) -> &DMatrix<f64> {
        &self.powers[p]
    }
}

/// Closed-form coefficients of agent `j`'s pulls of one arm in `z_{i,·}(t)`:
/// `c_h = [W^{t-τ_h}]_ij / h - Σ_{h' > h} [W^{t-τ_h'}]_ij / ((h'-1) h')`.
pub fn closed_form_coefficients(powers: &MatrixPowers, pull_times: &[usize], t: usize, i: usize, j: usize) -> Vec<f64> {
    let n = pull_times.len();
    let entry = |h: usize| powers.get(t - pull_times[h])[(i, j)];
    let mut out = vec![0.0; n];
    let mut tail = 0.0;
    for h in (0..n).rev() {
        let rank = (h + 1) as f64;
        out[h] = entry(h) / rank - tail;
        if h > 0 {
            tail += entry(h) / ((rank - 1.0) * rank);
        }
    }
    out
}

/// Concentration scan over one snapshot.
///
/// For every pull `(j, τ)` of arm `k` with `n_{j,k}(t) >= f2`, checks
/// `|c - 1/(N n)| <= (ε/N) n^{-3/2}`. `all_pulls` covers every such pull,
/// `initialization` only the `τ = 0` pull.
pub fn scan_concentration(snap: &LedgerSnapshot, epsilon: f64, f2: u64, all_pulls: &mut CheckOutcome, initialization: &mut CheckOutcome) {
    let n_agents = snap.agent_count() as f64;
    for i in 0..snap.agent_count() {
        for k in 0..snap.arm_count() {
            for j in 0..snap.agent_count() {
                let pulls = snap.pulls(j, k);
                if (pulls as u64) < f2 {
                    continue;
                }
                let n = pulls as f64;
                let target = 1.0 / (n_agents * n);
                let bound = epsilon / n_agents * n.powf(-1.5);
                for (h, &c) in snap.coeffs[i][k][j].iter().enumerate() {
                    let margin = bound - (c - target).abs();
                    let tau = snap.pull_times[j][k][h];
                    let ctx = || format!("t={} i={} k={} j={} tau={tau} n={pulls}: c={c:.6e}, 1/(Nn)={target:.6e}, bound={bound:.3e}", snap.t, i + 1, k + 1, j + 1);
                    all_pulls.record(margin, ctx);
                    if h == 0 {
                        initialization.record(margin, ctx);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationReport {
    pub epsilon: f64,
    pub f2: u64,
    pub all_pulls: CheckOutcome,
    pub initialization: CheckOutcome,
}

pub fn check_concentration(ledger: &CoefficientLedger, epsilon: f64, f2: u64) -> ConcentrationReport {
    let mut all_pulls = CheckOutcome::new(CHECK_CONCENTRATION_ALL);
    let mut initialization = CheckOutcome::new(CHECK_CONCENTRATION_INIT);
    for snap in &ledger.snapshots {
        scan_concentration(snap, epsilon, f2, &mut all_pulls, &mut initialization);
    }
    ConcentrationReport { epsilon, f2, all_pulls, initialization }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub epsilon: f64,
    /// `F_2(ε)` gating the concentration scan; `None` skips the scan.
    pub f2: Option<u64>,
    /// Compare against the closed form at every step.
    pub closed_form: bool,
    pub allow_large: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { epsilon: 1.0, f2: None, closed_form: true, allow_large: false }
    }
}

/// Streams a trace through the tracker and scans every time step without
/// keeping the whole ledger.
///
/// The every-pull concentration scan is informational: coefficients of the most
/// recent pulls sit near `[W^{t-τ}]_ij / n` rather than `1/(N n)`.
pub fn verify_trace(trace: &RunTrace, opts: &OracleOptions) -> Result<CheckReport> {
    guard(trace, opts.allow_large)?;
    if trace.z.len() != trace.horizon() + 1 {
        return Err(Error::Trace("trace is missing consensus snapshots".into()));
    }
    let mut tracker = CoefficientTracker::new(trace)?;
    let powers = opts.closed_form.then(|| MatrixPowers::new(&trace.weights, trace.horizon()));
    let mut recon = CheckOutcome::new(CHECK_RECONSTRUCTION);
    let mut sums = CheckOutcome::new(CHECK_SUM_TO_ONE);
    let mut closed = if opts.closed_form {
        CheckOutcome::new(CHECK_CLOSED_FORM)
    } else {
        CheckOutcome::not_applicable(CHECK_CLOSED_FORM)
    };
    let mut conc_all = CheckOutcome::new(CHECK_CONCENTRATION_ALL).informational();
    let mut conc_init = CheckOutcome::new(CHECK_CONCENTRATION_INIT);
    if opts.f2.is_none() {
        conc_all = CheckOutcome::not_applicable(CHECK_CONCENTRATION_ALL).informational();
        conc_init = CheckOutcome::not_applicable(CHECK_CONCENTRATION_INIT);
    }

    for t in 0..=trace.horizon() {
        if t > 0 {
            tracker.step(&trace.rounds[t - 1])?;
        }
        let snap = tracker.snapshot();
        for i in 0..snap.agent_count() {
            for k in 0..snap.arm_count() {
                let z = trace.z[t][i][k];
                let rebuilt = snap.reconstruct(i, k);
                recon.record(RECONSTRUCTION_TOL - (z - rebuilt).abs(), || {
                    format!("t={t} i={} k={}: z={z:.12} rebuilt={rebuilt:.12}", i + 1, k + 1)
                });
                let s = snap.coefficient_sum(i, k);
                sums.record(SUM_TO_ONE_TOL - (s - 1.0).abs(), || format!("t={t} i={} k={}: sum={s:.15}", i + 1, k + 1));
                if let Some(p) = &powers {
                    for j in 0..snap.agent_count() {
                        let cf = closed_form_coefficients(p, &snap.pull_times[j][k], t, i, j);
                        let worst = cf
                            .iter()
                            .zip(&snap.coeffs[i][k][j])
                            .map(|(a, b)| (a - b).abs())
                            .fold(0.0, f64::max);
                        closed.record(CROSS_CHECK_TOL - worst, || {
                            format!("t={t} i={} k={} j={}: max diff {worst:.3e}", i + 1, k + 1, j + 1)
                        });
                    }
                }
            }
        }
        if let Some(f2) = opts.f2 {
            scan_concentration(snap, opts.epsilon, f2, &mut conc_all, &mut conc_init);
        }
    }

    let mut report = CheckReport::default();
    for c in [recon, sums, closed, conc_init, conc_all] {
        report.absorb(c);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::RoundRecord;

    fn isolated_trace() -> RunTrace {
        // one agent, two arms, pulls: arm 0 three times, arm 1 once
        let rounds = vec![
            RoundRecord { chosen: vec![0], rewards: vec![0.9] },
            RoundRecord { chosen: vec![1], rewards: vec![0.1] },
            RoundRecord { chosen: vec![0], rewards: vec![0.3] },
        ];
        RunTrace { weights: DMatrix::identity(1, 1), init_rewards: vec![vec![0.5, 0.2]], rounds, z: Vec::new() }
    }

    #[test]
    fn initial_coefficients_are_unit() {
        let ledger = track(&isolated_trace(), false).unwrap();
        let s0 = ledger.at(0);
        assert_eq!(s0.coefficient(0, 0, 0, 0), 1.0);
        assert_eq!(s0.coefficient(0, 1, 0, 0), 1.0);
        assert_eq!(reconstruct_z(&ledger, 0, 0, 0), 0.5);
    }

    #[test]
    fn isolated_agent_coefficients_are_running_average() {
        let ledger = track(&isolated_trace(), false).unwrap();
        let s3 = ledger.at(3);
        for tau in [0, 1, 3] {
            assert!((s3.coefficient(0, 0, 0, tau) - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(s3.coefficient(0, 0, 0, 2), 0.0);
        assert!((s3.coefficient(0, 1, 0, 2) - 0.5).abs() < 1e-15);
        assert!((reconstruct_z(&ledger, 0, 0, 3) - (0.5 + 0.9 + 0.3) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn closed_form_matches_recursion_on_isolated_agent() {
        let trace = isolated_trace();
        let ledger = track(&trace, false).unwrap();
        let powers = MatrixPowers::new(&trace.weights, 3);
        let snap = ledger.at(3);
        let cf = closed_form_coefficients(&powers, &snap.pull_times[0][0], 3, 0, 0);
        for (a, b) in cf.iter().zip(&snap.coeffs[0][0][0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn guard_blocks_large_traces() {
        let mut trace = isolated_trace();
        trace.rounds = vec![RoundRecord { chosen: vec![0], rewards: vec![0.5] }; GUARD_MAX_HORIZON + 1];
        assert!(matches!(track(&trace, false), Err(Error::Guard(_))));
    }

    #[test]
    fn bad_round_is_trace_error() {
        let mut trace = isolated_trace();
        trace.rounds[1].chosen = vec![5];
        assert!(matches!(track(&trace, false), Err(Error::Trace(_))));
    }

    #[test]
    fn ledger_csv_lists_nonzero_entries() {
        let ledger = track(&isolated_trace(), false).unwrap();
        let mut buf = Vec::new();
        ledger.write_csv(0, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("run,t,i,k,j,tau,c\n"));
        // pulls per step: t=0: 2, t=1: 3, t=2: 4, t=3: 5
        assert_eq!(text.lines().count(), 1 + 2 + 3 + 4 + 5);
    }
}
