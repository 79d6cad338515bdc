//! Experiment commands behind the `decbandit` binary: simulate, compare,
//! bounds and verify. Each writes CSV/JSON into an output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::analysis::{bound_reports, finite_bound_ucb1, f2, BoundReport, FiniteBoundConstants};
use crate::checks::{CheckOutcome, CheckReport};
use crate::config::{Experiment, SeedSource};
use crate::engine::{run, run_batch_with_workers, sample_std, BatchResult, FaultInjection, SimConfig};
use crate::error::{Error, Result};
use crate::graph::metropolis_weights;
use crate::oracle::{verify_trace, OracleOptions, GUARD_MAX_AGENTS, GUARD_MAX_HORIZON};
use crate::seed::graph_seed;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// `ε` used for the coefficient-concentration scan in `verify`.
pub const VERIFY_EPSILON: f64 = 1.0;
pub const CHECK_CONSENSUS_DECAY: &str = "consensus decay: |W^t - J/N| <= rho2^t for t <= 30";
const DECAY_HORIZON: usize = 30;
const DECAY_TOL: f64 = 1e-12;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Graph(_)
        | Error::Connectivity { .. }
        | Error::Domain(_)
        | Error::Length { .. }
        | Error::Guard(_) => EXIT_CONFIG,
        Error::Protocol(_) | Error::ScanCap { .. } | Error::Trace(_) | Error::Io(_) | Error::Json(_) => EXIT_RUNTIME,
    }
}

/// `%.12g`-style formatting used for every real-valued CSV cell.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let fixed = format!("{x:.decimals$}");
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        }
    } else {
        let m = if mantissa.contains('.') { mantissa.trim_end_matches('0').trim_end_matches('.') } else { mantissa };
        format!("{m}e{exp}")
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Output directory: the flag, then `output_dir` from the file, then `out/`.
pub fn resolve_out_dir(flag: Option<&Path>, exp: &Experiment) -> PathBuf {
    flag.map(Path::to_path_buf).or_else(|| exp.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub graph: String,
    pub graph_fingerprint: String,
    pub agents: usize,
    pub edges: usize,
    pub rho2: f64,
    pub arms: Vec<String>,
    pub arm_means: Vec<f64>,
    pub gaps: Vec<f64>,
    pub policies: Vec<String>,
    pub effective_policies: Vec<String>,
    pub varsigma: Vec<f64>,
    pub beta: Vec<f64>,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub runs: u32,
    pub seed: u64,
    pub seed_source: SeedSource,
    pub graph_seed: u64,
    pub snapshot_interval: u64,
    pub invariant_checks: bool,
    pub oracle: bool,
    pub label: String,
    pub groups: Vec<GroupEcho>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupEcho {
    pub name: String,
    pub agents: Vec<usize>,
}

pub fn resolved_config(exp: &Experiment) -> ResolvedConfig {
    let sim = &exp.sim;
    ResolvedConfig {
        graph: exp.graph_spec.to_string(),
        graph_fingerprint: sim.graph.fingerprint(),
        agents: sim.agent_count(),
        edges: sim.graph.edge_count(),
        rho2: metropolis_weights(&sim.graph).rho2(),
        arms: sim.arms.arms().iter().map(ToString::to_string).collect(),
        arm_means: sim.arms.means().to_vec(),
        gaps: sim.arms.gaps().to_vec(),
        policies: sim.policies.iter().map(|p| p.name().to_string()).collect(),
        effective_policies: sim.effective_policies().iter().map(|p| p.name().to_string()).collect(),
        varsigma: sim.varsigma.clone(),
        beta: sim.beta.clone(),
        horizon: sim.horizon,
        runs: sim.runs,
        seed: sim.master_seed,
        seed_source: exp.seed_source,
        graph_seed: graph_seed(sim.master_seed),
        snapshot_interval: sim.snapshot_interval,
        invariant_checks: sim.invariant_checks,
        oracle: exp.oracle,
        label: exp.label(),
        groups: exp
            .groups
            .iter()
            .map(|(name, agents)| GroupEcho { name: name.clone(), agents: agents.iter().map(|a| a + 1).collect() })
            .collect(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSeedEcho {
    pub run: u64,
    pub run_seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AgentStats {
    pub agent: usize,
    pub mean_final_regret: f64,
    pub std_final_regret: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupStats {
    pub name: String,
    pub mean_final_regret: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateSummary {
    pub config: ResolvedConfig,
    pub seeds: Vec<RunSeedEcho>,
    pub per_agent: Vec<AgentStats>,
    pub pooled_mean_final_regret: f64,
    pub pooled_std_final_regret: f64,
    pub groups: Vec<GroupStats>,
    pub invariants: Option<CheckReport>,
    pub oracle: Option<CheckReport>,
    pub runtime_seconds: f64,
}

impl SimulateSummary {
    pub fn passed(&self) -> bool {
        self.invariants.as_ref().is_none_or(CheckReport::all_passed)
            && self.oracle.as_ref().is_none_or(CheckReport::all_passed)
    }
}

fn write_trajectories<W: Write>(batch: &BatchResult, out: &mut W) -> Result<()> {
    writeln!(out, "run,t,agent,regret")?;
    for r in &batch.runs {
        for (s, t) in r.times.iter().enumerate() {
            for (agent, traj) in r.regret.iter().enumerate() {
                writeln!(out, "{},{t},{},{}", r.seeds.run_index, agent + 1, fmt_sig(traj[s]))?;
            }
        }
    }
    Ok(())
}

fn agent_stats(batch: &BatchResult) -> Vec<AgentStats> {
    let agents = batch.mean_per_agent.len();
    (0..agents)
        .map(|i| {
            let finals: Vec<f64> = batch.runs.iter().map(|r| r.final_regret(i)).collect();
            AgentStats {
                agent: i + 1,
                mean_final_regret: finals.iter().sum::<f64>() / finals.len() as f64,
                std_final_regret: sample_std(&finals),
            }
        })
        .collect()
}

fn group_stats(exp: &Experiment, batch: &BatchResult) -> Vec<GroupStats> {
    exp.groups
        .iter()
        .map(|(name, agents)| GroupStats {
            name: name.clone(),
            mean_final_regret: *batch.group_mean(agents).last().expect("non-empty trajectory"),
        })
        .collect()
}

fn oracle_report(sim: &SimConfig, override_guard: bool, fault: Option<FaultInjection>) -> Result<CheckReport> {
    let n = sim.agent_count();
    if !override_guard && (n > GUARD_MAX_AGENTS || sim.horizon as usize > GUARD_MAX_HORIZON) {
        return Err(Error::Guard(format!(
            "oracle limited to N <= {GUARD_MAX_AGENTS} and T <= {GUARD_MAX_HORIZON} (got N = {n}, T = {})",
            sim.horizon
        )));
    }
    let mut cfg = sim.clone();
    cfg.oracle_tracking = true;
    cfg.invariant_checks = true;
    cfg.fault = fault;
    cfg.validate()?;

    let w = metropolis_weights(&cfg.graph);
    let mut report = CheckReport::default();
    let mut decay = CheckOutcome::new(CHECK_CONSENSUS_DECAY);
    if cfg.graph.is_connected() {
        let excess = w.consensus_decay_excess(DECAY_HORIZON);
        decay.record(DECAY_TOL - excess, || format!("max excess {excess:.3e}"));
    } else {
        decay = CheckOutcome::not_applicable(CHECK_CONSENSUS_DECAY);
    }
    report.absorb(decay);

    // the concentration scan needs one mixing rate for the whole network
    let f2_value = if cfg.graph.is_connected() && n > 1 {
        Some(f2(VERIFY_EPSILON, w.rho2(), n, cfg.arms.len())?)
    } else {
        None
    };
    let opts = OracleOptions { epsilon: VERIFY_EPSILON, f2: f2_value, closed_form: true, allow_large: override_guard };
    for r in 0..cfg.runs as u64 {
        let result = run(&cfg, cfg.run_offset + r)?;
        if let Some(inv) = &result.invariants {
            report.merge(inv);
        }
        let trace = result.trace.as_ref().ok_or_else(|| Error::Trace("run produced no trace".into()))?;
        report.merge(&verify_trace(trace, &opts)?);
    }
    Ok(report)
}

/// Runs the batch and writes `trajectories.csv` and `summary.json`.
pub fn cmd_simulate(exp: &Experiment, out_dir: &Path, workers: Option<usize>, override_guard: bool) -> Result<SimulateSummary> {
    let started = Instant::now();
    let batch = run_batch_with_workers(&exp.sim, workers)?;
    let oracle = if exp.oracle { Some(oracle_report(&exp.sim, override_guard, None)?) } else { None };

    let mut csv = create(out_dir, "trajectories.csv")?;
    write_trajectories(&batch, &mut csv)?;
    csv.flush()?;

    let pooled = batch.final_per_run();
    let summary = SimulateSummary {
        config: resolved_config(exp),
        seeds: batch
            .runs
            .iter()
            .map(|r| RunSeedEcho { run: r.seeds.run_index, run_seed: r.seeds.run_seed })
            .collect(),
        per_agent: agent_stats(&batch),
        pooled_mean_final_regret: pooled.iter().sum::<f64>() / pooled.len() as f64,
        pooled_std_final_regret: sample_std(&pooled),
        groups: group_stats(exp, &batch),
        invariants: batch.merged_checks(),
        oracle,
        runtime_seconds: started.elapsed().as_secs_f64(),
    };
    let mut json = create(out_dir, "summary.json")?;
    serde_json::to_writer_pretty(&mut json, &summary)?;
    writeln!(json)?;
    json.flush()?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareEntry {
    pub label: String,
    pub policy: String,
    pub pooled_mean_final_regret: f64,
    pub pooled_std_final_regret: f64,
    pub groups: Vec<GroupStats>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareSummary {
    pub shared_streams: bool,
    pub entries: Vec<CompareEntry>,
    pub configs: Vec<ResolvedConfig>,
}

fn check_shared(exps: &[Experiment]) -> Result<()> {
    let first = &exps[0].sim;
    for (idx, e) in exps.iter().enumerate().skip(1) {
        let s = &e.sim;
        let mismatch = if s.graph != first.graph {
            Some("graph")
        } else if s.arms.arms() != first.arms.arms() {
            Some("arms")
        } else if s.horizon != first.horizon {
            Some("T")
        } else if s.runs != first.runs {
            Some("runs")
        } else if s.master_seed != first.master_seed {
            Some("seed")
        } else if s.snapshot_interval != first.snapshot_interval {
            Some("snapshot_interval")
        } else {
            None
        };
        if let Some(field) = mismatch {
            return Err(Error::Config(format!("config #{} differs from config #1 in shared field `{field}`", idx + 1)));
        }
    }
    Ok(())
}

fn unique_labels(exps: &[Experiment]) -> Vec<String> {
    let mut labels: Vec<String> = Vec::new();
    for e in exps {
        let base = e.label();
        let mut label = base.clone();
        let mut k = 2;
        while labels.contains(&label) {
            label = format!("{base}#{k}");
            k += 1;
        }
        labels.push(label);
    }
    labels
}

/// Runs several configs over the same graph, arms and seeds.
///
/// Writes `compare.csv` (long form with `label` and `policy` columns),
/// `compare_mean.csv` (one mean column per label, plus one per group) and
/// `compare_summary.json`. With `shared_streams` every config draws the
/// same rewards for the same (run, agent, arm, pull index).
pub fn cmd_compare(exps: &[Experiment], out_dir: &Path, workers: Option<usize>, shared_streams: bool) -> Result<CompareSummary> {
    if exps.is_empty() {
        return Err(Error::Config("compare needs at least one config".into()));
    }
    check_shared(exps)?;
    let labels = unique_labels(exps);
    let mut batches = Vec::with_capacity(exps.len());
    for (idx, e) in exps.iter().enumerate() {
        let mut sim = e.sim.clone();
        if !shared_streams {
            sim.run_offset = idx as u64 * sim.runs as u64;
        }
        batches.push(run_batch_with_workers(&sim, workers)?);
    }

    let mut long = create(out_dir, "compare.csv")?;
    writeln!(long, "label,policy,run,t,agent,regret")?;
    for ((e, label), batch) in exps.iter().zip(&labels).zip(&batches) {
        for r in &batch.runs {
            for (s, t) in r.times.iter().enumerate() {
                for (agent, traj) in r.regret.iter().enumerate() {
                    let policy = r.effective_policies[agent].name();
                    let run = r.seeds.run_index - if shared_streams { 0 } else { e.sim.run_offset };
                    writeln!(long, "{label},{policy},{run},{t},{},{}", agent + 1, fmt_sig(traj[s]))?;
                }
            }
        }
    }
    long.flush()?;

    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    for ((e, label), batch) in exps.iter().zip(&labels).zip(&batches) {
        columns.push((label.clone(), batch.mean.clone()));
        for (name, agents) in &e.groups {
            columns.push((format!("{label}:{name}"), batch.group_mean(agents)));
        }
    }
    let mut wide = create(out_dir, "compare_mean.csv")?;
    write!(wide, "t")?;
    for (name, _) in &columns {
        write!(wide, ",{name}")?;
    }
    writeln!(wide)?;
    for (s, t) in batches[0].times.iter().enumerate() {
        write!(wide, "{t}")?;
        for (_, col) in &columns {
            write!(wide, ",{}", fmt_sig(col[s]))?;
        }
        writeln!(wide)?;
    }
    wide.flush()?;

    let entries = exps
        .iter()
        .zip(&labels)
        .zip(&batches)
        .map(|((e, label), batch)| {
            let pooled = batch.final_per_run();
            CompareEntry {
                label: label.clone(),
                policy: e.sim.policies[0].name().to_string(),
                pooled_mean_final_regret: pooled.iter().sum::<f64>() / pooled.len() as f64,
                pooled_std_final_regret: sample_std(&pooled),
                groups: group_stats(e, batch),
            }
        })
        .collect();
    let summary = CompareSummary { shared_streams, entries, configs: exps.iter().map(resolved_config).collect() };
    let mut json = create(out_dir, "compare_summary.json")?;
    serde_json::to_writer_pretty(&mut json, &summary)?;
    writeln!(json)?;
    json.flush()?;
    Ok(summary)
}

fn bound_grid(horizon: u64, interval: u64) -> Vec<u64> {
    let mut ts: Vec<u64> = (1..=horizon).filter(|t| t % interval == 0).collect();
    if horizon >= 1 && ts.last() != Some(&horizon) {
        ts.push(horizon);
    }
    ts
}

/// Value of one agent's bound at horizon `t`: the finite-time bound for
/// decentralized UCB1, otherwise the asymptotic coefficient times `log t`.
fn bound_at(report: &BoundReport, mu: &[f64], t: u64) -> Result<(f64, &'static str)> {
    match (report.f2, report.gamma) {
        (Some(f2), Some(gamma)) => {
            let c = FiniteBoundConstants { f2, gamma };
            Ok((finite_bound_ucb1(t as f64, mu, report.neighborhood_size, report.parameter, &c)?, "finite"))
        }
        _ => Ok((report.asymptotic_coefficient * (t as f64).ln(), "asymptotic")),
    }
}

/// Writes `bounds.csv` (`T,bound_value,policy,agent_group,kind`) on the
/// snapshot grid and `bounds.json` with the per-agent reports.
pub fn cmd_bounds(exp: &Experiment, out_dir: &Path) -> Result<Vec<BoundReport>> {
    let sim = &exp.sim;
    let mu = sim.arms.means();
    let reports = bound_reports(&sim.graph, mu, &sim.policies, &sim.varsigma, &sim.beta, sim.horizon)?;

    let mut series: Vec<(String, Vec<usize>)> = if exp.groups.is_empty() {
        (0..sim.agent_count()).map(|i| (format!("agent{}", i + 1), vec![i])).collect()
    } else {
        exp.groups.clone()
    };
    series.push(("all".into(), (0..sim.agent_count()).collect()));

    let mut csv = create(out_dir, "bounds.csv")?;
    writeln!(csv, "T,bound_value,policy,agent_group,kind")?;
    for t in bound_grid(sim.horizon, sim.snapshot_interval) {
        for (name, agents) in &series {
            let policy = reports[agents[0]].policy;
            let policy = if agents.iter().all(|&a| reports[a].policy == policy) { policy.name() } else { "mixed" };
            let mut total = 0.0;
            let mut kinds = Vec::new();
            for &a in agents {
                let (v, kind) = bound_at(&reports[a], mu, t)?;
                total += v;
                kinds.push(kind);
            }
            let kind = if kinds.iter().all(|k| *k == kinds[0]) { kinds[0] } else { "mixed" };
            writeln!(csv, "{t},{},{policy},{name},{kind}", fmt_sig(total / agents.len() as f64))?;
            let lower: f64 = agents.iter().map(|&a| reports[a].lower_bound_coefficient).sum::<f64>() / agents.len() as f64;
            writeln!(csv, "{t},{},lower_bound,{name},lower", fmt_sig(lower * (t as f64).ln()))?;
        }
    }
    csv.flush()?;
    let mut json = create(out_dir, "bounds.json")?;
    serde_json::to_writer_pretty(&mut json, &reports)?;
    writeln!(json)?;
    json.flush()?;
    Ok(reports)
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyOutcome {
    pub config: ResolvedConfig,
    pub fault: Option<FaultInjection>,
    pub report: CheckReport,
    pub passed: bool,
}

/// Full invariant checking plus the coefficient oracle on every run.
/// Writes `verify_report.json` when `out_dir` is given.
pub fn cmd_verify(
    exp: &Experiment,
    out_dir: Option<&Path>,
    override_guard: bool,
    fault: Option<FaultInjection>,
) -> Result<VerifyOutcome> {
    let report = oracle_report(&exp.sim, override_guard, fault)?;
    let outcome = VerifyOutcome { config: resolved_config(exp), fault, passed: report.all_passed(), report };
    if let Some(dir) = out_dir {
        let mut json = create(dir, "verify_report.json")?;
        serde_json::to_writer_pretty(&mut json, &outcome)?;
        writeln!(json)?;
        json.flush()?;
    }
    Ok(outcome)
}

/// Parses `T,AGENT,ARM[,DELTA]` with 1-based agent and arm ids.
pub fn parse_fault(s: &str) -> Result<FaultInjection> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || Error::Config(format!("fault `{s}` must be T,AGENT,ARM[,DELTA] with 1-based ids"));
    if !(3..=4).contains(&parts.len()) {
        return Err(bad());
    }
    let time: u64 = parts[0].parse().map_err(|_| bad())?;
    let agent: usize = parts[1].parse().map_err(|_| bad())?;
    let arm: usize = parts[2].parse().map_err(|_| bad())?;
    let delta: f64 = match parts.get(3) {
        Some(d) => d.parse().map_err(|_| bad())?,
        None => 1e-3,
    };
    if agent == 0 || arm == 0 {
        return Err(bad());
    }
    Ok(FaultInjection { time, agent: agent - 1, arm: arm - 1, delta })
}
