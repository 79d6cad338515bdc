//! Round-synchronous simulator, regret accounting and seeded batches.
//!
//! A round at time `t` runs in lockstep: every agent decides from its
//! time-`t` state, rewards are drawn for the chosen arms, all time-`t`
//! broadcasts are frozen into one snapshot, and only then does any agent
//! update to `t + 1`.

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::agent::{AgentState, Broadcast, Policy};
use crate::checks::{CheckOutcome, CheckReport};
use crate::error::{Error, Result};
use crate::graph::{metropolis_weights, DistanceTable, NeighborGraph};
use crate::klcore::ConfidenceParams;
use crate::rewards::ArmSet;
use crate::seed::{self, Purpose};

pub const CHECK_COUNT_SUM: &str = "pull counts sum to t + M";
pub const CHECK_M_GE_N: &str = "m >= n";
pub const CHECK_XBAR_RANGE: &str = "sample means in [0, 1]";
pub const CHECK_DELAYED_MAX: &str = "delayed max: m equals max_j n_j(t - d_ji)";
pub const CHECK_COUNT_LAG: &str = "count lag: n > m - M(M+2N)";
pub const CHECK_COUNT_RATIO: &str = "count ratio within [1/2, 3/2]";
pub const CHECK_LOCKSTEP: &str = "lockstep snapshot unchanged during updates";

/// Adds `delta` to one consensus estimate right after the update that
/// produces time `time`. Used to exercise the verification harness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FaultInjection {
    pub time: u64,
    pub agent: usize,
    pub arm: usize,
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub graph: NeighborGraph,
    pub arms: ArmSet,
    pub policies: Vec<Policy>,
    pub varsigma: Vec<f64>,
    pub beta: Vec<f64>,
    pub horizon: u64,
    pub runs: u32,
    pub master_seed: u64,
    /// Regret is stored every `snapshot_interval` rounds, plus the final round.
    pub snapshot_interval: u64,
    pub invariant_checks: bool,
    /// Record a full trace for the coefficient oracle.
    pub oracle_tracking: bool,
    /// Run indices are `run_offset .. run_offset + runs`.
    pub run_offset: u64,
    /// Every run reuses the streams of run index `run_offset`.
    pub fixed_run_streams: bool,
    /// Identity used for each agent's random streams (defaults to its index).
    pub stream_ids: Option<Vec<u64>>,
    pub fault: Option<FaultInjection>,
}

impl SimConfig {
    /// One policy for every agent, with `varsigma = beta = param`.
    pub fn uniform(graph: NeighborGraph, arms: ArmSet, policy: Policy, param: f64, horizon: u64) -> Self {
        let n = graph.node_count();
        Self {
            graph,
            arms,
            policies: vec![policy; n],
            varsigma: vec![param; n],
            beta: vec![param; n],
            horizon,
            runs: 1,
            master_seed: 0,
            snapshot_interval: 1,
            invariant_checks: false,
            oracle_tracking: false,
            run_offset: 0,
            fixed_run_streams: false,
            stream_ids: None,
            fault: None,
        }
    }

    pub fn agent_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.agent_count();
        for (what, len) in [("policy", self.policies.len()), ("varsigma", self.varsigma.len()), ("beta", self.beta.len())] {
            if len != n {
                return Err(Error::Config(format!("{what} list has {len} entries for {n} agents")));
            }
        }
        if let Some(ids) = &self.stream_ids {
            if ids.len() != n {
                return Err(Error::Config(format!("stream id list has {} entries for {n} agents", ids.len())));
            }
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.snapshot_interval == 0 {
            return Err(Error::Config("snapshot_interval must be at least 1".into()));
        }
        for i in 0..n {
            ConfidenceParams::new(self.varsigma[i], self.beta[i], self.graph.neighborhood_size(i))?;
        }
        if let Some(f) = &self.fault {
            if f.agent >= n || f.arm >= self.arms.len() {
                return Err(Error::Config("fault injection targets a nonexistent agent or arm".into()));
            }
        }
        Ok(())
    }

    fn stream_id(&self, agent: usize) -> u64 {
        self.stream_ids.as_ref().map_or(agent as u64, |ids| ids[agent])
    }

    /// Policies after the isolated-agent fallback.
    pub fn effective_policies(&self) -> Vec<Policy> {
        (0..self.agent_count())
            .map(|i| self.policies[i].effective(self.graph.neighborhood_size(i)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RunSeeds {
    pub master_seed: u64,
    pub run_index: u64,
    /// Run index whose streams were actually used.
    pub stream_run: u64,
    pub run_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub chosen: Vec<usize>,
    pub rewards: Vec<f64>,
}

/// Everything the coefficient oracle needs to replay a run.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub weights: DMatrix<f64>,
    /// `[agent][arm]` rewards of the initialization sweep.
    pub init_rewards: Vec<Vec<f64>>,
    /// Round `t` produces the pulls at time `t + 1`.
    pub rounds: Vec<RoundRecord>,
    /// Engine consensus estimates `[t][agent][arm]` for `t = 0..=T`.
    pub z: Vec<Vec<Vec<f64>>>,
}

impl RunTrace {
    pub fn agent_count(&self) -> usize {
        self.init_rewards.len()
    }

    pub fn arm_count(&self) -> usize {
        self.init_rewards.first().map_or(0, Vec::len)
    }

    pub fn horizon(&self) -> usize {
        self.rounds.len()
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub seeds: RunSeeds,
    pub graph_fingerprint: String,
    /// Times at which regret was stored.
    pub times: Vec<u64>,
    /// `[agent][snapshot]` cumulative pseudo-regret.
    pub regret: Vec<Vec<f64>>,
    /// `[agent][arm]` pull counts at the horizon.
    pub pulls: Vec<Vec<u64>>,
    pub effective_policies: Vec<Policy>,
    pub invariants: Option<CheckReport>,
    pub trace: Option<RunTrace>,
}

impl RunResult {
    pub fn final_regret(&self, agent: usize) -> f64 {
        *self.regret[agent].last().expect("trajectory has t = 0")
    }

    pub fn mean_final_regret(&self) -> f64 {
        let n = self.regret.len() as f64;
        (0..self.regret.len()).map(|i| self.final_regret(i)).sum::<f64>() / n
    }
}

/// `sum_{k: Δ_k > 0} n_k Δ_k`, after checking the counts total `horizon + M`.
pub fn pseudo_regret(pull_counts: &[u64], gaps: &[f64], horizon: u64) -> Result<f64> {
    if pull_counts.len() != gaps.len() {
        return Err(Error::Length { expected: gaps.len(), got: pull_counts.len() });
    }
    let total: u64 = pull_counts.iter().sum();
    let expected = horizon + gaps.len() as u64;
    if total != expected {
        return Err(Error::Domain(format!("pull counts sum to {total}, expected T + M = {expected}")));
    }
    Ok(pull_counts
        .iter()
        .zip(gaps)
        .filter(|(_, d)| **d > 0.0)
        .map(|(&n, d)| n as f64 * d)
        .sum())
}

struct Checker {
    distances: DistanceTable,
    /// Per agent: fusion checks apply (every agent in its component is decentralized).
    applicable: Vec<bool>,
    components: Vec<usize>,
    history: Vec<Vec<Vec<u64>>>,
    report: CheckReport,
    count_sum: CheckOutcome,
    m_ge_n: CheckOutcome,
    xbar: CheckOutcome,
    delayed_max: CheckOutcome,
    count_lag: CheckOutcome,
    count_ratio: CheckOutcome,
    lockstep: CheckOutcome,
}

impl Checker {
    fn new(config: &SimConfig, effective: &[Policy]) -> Self {
        let g = &config.graph;
        let mut components = vec![0; g.node_count()];
        let mut applicable = vec![true; g.node_count()];
        for (c, members) in g.connected_components().iter().enumerate() {
            let fused = members.len() == 1 || members.iter().all(|&i| !effective[i].is_single_agent());
            for &i in members {
                components[i] = c;
                applicable[i] = fused;
            }
        }
        let any = applicable.iter().any(|&a| a);
        let fused = |name: &str| if any { CheckOutcome::new(name) } else { CheckOutcome::not_applicable(name) };
        Self {
            distances: g.shortest_distances(),
            delayed_max: fused(CHECK_DELAYED_MAX),
            count_lag: fused(CHECK_COUNT_LAG),
            count_ratio: fused(CHECK_COUNT_RATIO),
            applicable,
            components,
            history: Vec::new(),
            report: CheckReport::default(),
            count_sum: CheckOutcome::new(CHECK_COUNT_SUM),
            m_ge_n: CheckOutcome::new(CHECK_M_GE_N),
            xbar: CheckOutcome::new(CHECK_XBAR_RANGE),
            lockstep: CheckOutcome::new(CHECK_LOCKSTEP),
        }
    }

    fn observe(&mut self, t: u64, states: &[AgentState]) {
        let n_agents = states.len();
        let arms = states[0].arm_count();
        let m_u = arms as u64;
        let n_u = n_agents as u64;
        self.history.push(states.iter().map(|s| s.n.clone()).collect());
        let ratio_floor = 2 * (m_u * m_u + 2 * m_u * n_u + n_u);
        let lag_offset = (m_u * (m_u + 2 * n_u)) as f64;

        for (i, s) in states.iter().enumerate() {
            let total: u64 = s.n.iter().sum();
            let diff = total as f64 - (t + m_u) as f64;
            self.count_sum.record(-diff.abs(), || format!("agent {i} at t={t}: sum {total}"));
            for k in 0..arms {
                self.m_ge_n.record(s.m[k] as f64 - s.n[k] as f64, || format!("agent {i} arm {k} t={t}"));
                let x = s.xbar[k];
                self.xbar.record(x.min(1.0 - x), || format!("agent {i} arm {k} t={t}: {x}"));
            }
            if !self.applicable[i] {
                continue;
            }
            for k in 0..arms {
                // m_{i,k}(t) = max_j n_{j,k}(t - d_{j,i}), n = 0 before time 0
                let delayed_max = (0..n_agents)
                    .filter_map(|j| self.distances.get(j, i).map(|d| (j, d as u64)))
                    .map(|(j, d)| if d <= t { self.history[(t - d) as usize][j][k] } else { 0 })
                    .max()
                    .unwrap_or(0);
                let gap = -(s.m[k] as f64 - delayed_max as f64).abs();
                self.delayed_max.record(gap, || {
                    format!("agent {i} arm {k} t={t}: m={} delayed max={delayed_max}", s.m[k])
                });
                let slack = s.n[k] as f64 - (s.m[k] as f64 - lag_offset);
                self.count_lag
                    .record_strict(slack, || format!("agent {i} arm {k} t={t}: n={} m={}", s.n[k], s.m[k]));
                if s.n[k] >= ratio_floor {
                    let ni = s.n[k] as f64;
                    for (h, other) in states.iter().enumerate() {
                        if self.components[h] != self.components[i] {
                            continue;
                        }
                        let nh = other.n[k] as f64;
                        let margin = (ni - 0.5 * nh).min(1.5 * nh - ni);
                        self.count_ratio.record(margin, || format!("agents {i},{h} arm {k} t={t}: {ni} vs {nh}"));
                    }
                }
            }
        }
    }

    fn finish(mut self) -> CheckReport {
        for c in [self.count_sum, self.m_ge_n, self.xbar, self.delayed_max, self.count_lag, self.count_ratio, self.lockstep] {
            self.report.absorb(c);
        }
        self.report
    }
}

fn snapshot_digest(snapshot: &[Broadcast]) -> [u8; 32] {
    let mut h = Sha256::new();
    for b in snapshot {
        h.update((b.sender as u64).to_le_bytes());
        for m in &b.m_vec {
            h.update(m.to_le_bytes());
        }
        for z in &b.z_vec {
            h.update(z.to_bits().to_le_bytes());
        }
    }
    h.finalize().into()
}

/// Executes one run of `config`.
pub fn run(config: &SimConfig, run_index: u64) -> Result<RunResult> {
    config.validate()?;
    let g = &config.graph;
    let n_agents = g.node_count();
    let arms = config.arms.arms();
    let m_arms = arms.len();
    let gaps = config.arms.gaps();
    let weights = metropolis_weights(g);
    let rows: Vec<Vec<(usize, f64)>> = (0..n_agents)
        .map(|i| g.neighbors(i).iter().map(|&j| (j, weights.get(i, j))).collect())
        .collect();
    let effective = config.effective_policies();

    let stream_run = if config.fixed_run_streams { config.run_offset } else { run_index };
    let seeds = RunSeeds {
        master_seed: config.master_seed,
        run_index,
        stream_run,
        run_seed: seed::run_seed(config.master_seed, stream_run),
    };
    let mut reward_rngs: Vec<Vec<ChaCha8Rng>> = (0..n_agents)
        .map(|i| {
            (0..m_arms)
                .map(|k| seed::stream(config.master_seed, stream_run, config.stream_id(i), Purpose::ArmRewards, k as u64))
                .collect()
        })
        .collect();
    let mut tiebreak: Vec<ChaCha8Rng> = (0..n_agents)
        .map(|i| seed::stream(config.master_seed, stream_run, config.stream_id(i), Purpose::Tiebreak, 0))
        .collect();

    let mut init_rewards = Vec::with_capacity(n_agents);
    let mut states = Vec::with_capacity(n_agents);
    for i in 0..n_agents {
        let rewards: Vec<f64> = (0..m_arms).map(|k| arms[k].sample(&mut reward_rngs[i][k])).collect();
        let params = ConfidenceParams::new(config.varsigma[i], config.beta[i], g.neighborhood_size(i))?;
        states.push(AgentState::init(i, effective[i], params, &rewards)?);
        init_rewards.push(rewards);
    }
    let apply_fault = |states: &mut [AgentState], t: u64| {
        if let Some(f) = config.fault.filter(|f| f.time == t) {
            states[f.agent].z[f.arm] += f.delta;
        }
    };
    apply_fault(&mut states, 0);

    let horizon = config.horizon;
    let initial_regret: f64 = gaps.iter().sum();
    let mut current = vec![initial_regret; n_agents];
    let capacity = (horizon / config.snapshot_interval + 2) as usize;
    let mut times = Vec::with_capacity(capacity);
    let mut regret: Vec<Vec<f64>> = vec![Vec::with_capacity(capacity); n_agents];
    times.push(0);
    for i in 0..n_agents {
        regret[i].push(current[i]);
    }

    let mut checker = config.invariant_checks.then(|| Checker::new(config, &effective));
    if let Some(c) = checker.as_mut() {
        c.observe(0, &states);
    }
    let mut trace = config.oracle_tracking.then(|| RunTrace {
        weights: weights.entries().clone(),
        init_rewards: init_rewards.clone(),
        rounds: Vec::with_capacity(horizon as usize),
        z: vec![states.iter().map(|s| s.z.clone()).collect()],
    });

    let mut chosen = vec![0usize; n_agents];
    let mut rewards = vec![0.0f64; n_agents];
    for t in 0..horizon {
        for i in 0..n_agents {
            chosen[i] = states[i].decide(t, &mut tiebreak[i]);
            rewards[i] = arms[chosen[i]].sample(&mut reward_rngs[i][chosen[i]]);
        }
        let snapshot: Vec<Broadcast> = states.iter().map(AgentState::broadcast).collect();
        let digest = checker.as_ref().map(|_| snapshot_digest(&snapshot));
        for i in 0..n_agents {
            let inbox: Vec<&Broadcast> = rows[i].iter().map(|&(j, _)| &snapshot[j]).collect();
            states[i].update(chosen[i], rewards[i], &rows[i], &inbox)?;
        }
        apply_fault(&mut states, t + 1);
        for i in 0..n_agents {
            current[i] += gaps[chosen[i]];
        }
        if let Some(c) = checker.as_mut() {
            let unchanged = digest == Some(snapshot_digest(&snapshot));
            c.lockstep.record(if unchanged { 0.0 } else { -1.0 }, || format!("round {t}"));
            c.observe(t + 1, &states);
        }
        if let Some(tr) = trace.as_mut() {
            tr.rounds.push(RoundRecord { chosen: chosen.clone(), rewards: rewards.clone() });
            tr.z.push(states.iter().map(|s| s.z.clone()).collect());
        }
        let now = t + 1;
        if now % config.snapshot_interval == 0 || now == horizon {
            times.push(now);
            for i in 0..n_agents {
                regret[i].push(current[i]);
            }
        }
    }

    Ok(RunResult {
        seeds,
        graph_fingerprint: g.fingerprint(),
        times,
        regret,
        pulls: states.iter().map(|s| s.n.clone()).collect(),
        effective_policies: effective,
        invariants: checker.map(Checker::finish),
        trace,
    })
}

/// Runs of one batch plus fixed-order aggregates.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub runs: Vec<RunResult>,
    pub times: Vec<u64>,
    /// `[agent][snapshot]` mean over runs.
    pub mean_per_agent: Vec<Vec<f64>>,
    /// Mean over runs, then over agents.
    pub mean: Vec<f64>,
}

impl BatchResult {
    pub fn final_mean(&self) -> f64 {
        *self.mean.last().expect("non-empty trajectory")
    }

    /// Agent-averaged final regret of each run, in run order.
    pub fn final_per_run(&self) -> Vec<f64> {
        self.runs.iter().map(RunResult::mean_final_regret).collect()
    }

    /// Sample standard deviation of [`final_per_run`](Self::final_per_run).
    pub fn final_std(&self) -> f64 {
        sample_std(&self.final_per_run())
    }

    /// Trajectory averaged over runs and over the given agents.
    pub fn group_mean(&self, agents: &[usize]) -> Vec<f64> {
        let len = self.times.len();
        let mut out = vec![0.0; len];
        for &a in agents {
            for (o, v) in out.iter_mut().zip(&self.mean_per_agent[a]) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= agents.len() as f64);
        out
    }

    pub fn merged_checks(&self) -> Option<CheckReport> {
        let mut any = false;
        let mut report = CheckReport::default();
        for r in &self.runs {
            if let Some(c) = &r.invariants {
                any = true;
                report.merge(c);
            }
        }
        any.then_some(report)
    }
}

pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

pub fn run_batch(config: &SimConfig) -> Result<BatchResult> {
    run_batch_with_workers(config, None)
}

/// Runs every run index of `config`, in parallel when `workers` allows.
pub fn run_batch_with_workers(config: &SimConfig, workers: Option<usize>) -> Result<BatchResult> {
    config.validate()?;
    let indices: Vec<u64> = (0..config.runs as u64).map(|r| config.run_offset + r).collect();
    let execute = || indices.par_iter().map(|&r| run(config, r)).collect::<Result<Vec<_>>>();
    let runs = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(execute)?,
        None => execute()?,
    };
    Ok(aggregate(runs))
}

fn aggregate(runs: Vec<RunResult>) -> BatchResult {
    let times = runs[0].times.clone();
    let n_agents = runs[0].regret.len();
    let r = runs.len() as f64;
    let mut mean_per_agent = vec![vec![0.0; times.len()]; n_agents];
    for run in &runs {
        for (acc, traj) in mean_per_agent.iter_mut().zip(&run.regret) {
            for (a, v) in acc.iter_mut().zip(traj) {
                *a += v;
            }
        }
    }
    for row in &mut mean_per_agent {
        row.iter_mut().for_each(|v| *v /= r);
    }
    let mean = (0..times.len())
        .map(|s| mean_per_agent.iter().map(|row| row[s]).sum::<f64>() / n_agents as f64)
        .collect();
    BatchResult { runs, times, mean_per_agent, mean }
}
