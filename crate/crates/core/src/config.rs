//! Experiment files (TOML) and the graph / arm spec grammars.
//!
//! ```toml
//! graph = "er(20,0.5)"
//! arms = ["tnorm_mean(0.6)", "tnorm_mean(0.5)", "bern(0.3)"]
//! policy = "dec_klucb"          # or one name per agent
//! varsigma = 0.01               # or one value per agent
//! T = 10000
//! runs = 100
//! seed = 7
//! ```

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::agent::Policy;
use crate::engine::SimConfig;
use crate::error::{Error, Result};
use crate::graph::{builtin_graph, gen_erdos_renyi, BuiltinGraph, NeighborGraph};
use crate::rewards::{ArmSet, ArmSpec};
use crate::seed::graph_seed;

pub const DEFAULT_SIGMA: f64 = 0.1;
pub const DEFAULT_PARAM: f64 = 0.01;
pub const ER_MAX_ATTEMPTS: u32 = 1000;

/// Splits `name(a,b,...)` into the name and its raw arguments.
fn split_call(s: &str) -> Result<(&str, Vec<&str>), String> {
    match s.find('(') {
        None => Ok((s, Vec::new())),
        Some(open) => {
            let inner = s[open + 1..].strip_suffix(')').ok_or_else(|| format!("missing ')' in `{s}`"))?;
            let args = if inner.is_empty() { Vec::new() } else { inner.split(',').collect() };
            Ok((&s[..open], args))
        }
    }
}

fn num<T: FromStr>(raw: &str, what: &str) -> Result<T, String> {
    raw.parse().map_err(|_| format!("cannot parse {what} from `{raw}`"))
}

fn arity(name: &str, got: usize, allowed: Range<usize>) -> Result<(), String> {
    if allowed.contains(&got) {
        Ok(())
    } else {
        Err(format!("`{name}` takes {} argument(s), got {got}", allowed.start))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GraphSpec {
    ErdosRenyi { n: usize, p: f64 },
    Builtin(BuiltinGraph),
    /// 0-based pairs; the node count is the largest id.
    Edges(Vec<(usize, usize)>),
}

impl GraphSpec {
    /// Random graphs are drawn from the master seed, so every run of one
    /// experiment shares the same topology.
    pub fn build(&self, master_seed: u64) -> Result<NeighborGraph> {
        match self {
            GraphSpec::ErdosRenyi { n, p } => gen_erdos_renyi(*n, *p, graph_seed(master_seed), true, ER_MAX_ATTEMPTS),
            GraphSpec::Builtin(kind) => builtin_graph(*kind),
            GraphSpec::Edges(pairs) => {
                let n = pairs.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0);
                NeighborGraph::new(n, pairs.iter().copied())
            }
        }
    }
}

fn parse_edge_list(body: &str) -> Result<Vec<(usize, usize)>, String> {
    let inner = body
        .strip_prefix('[')
        .and_then(|b| b.strip_suffix(']'))
        .ok_or("edge list must be enclosed in [...]")?;
    if inner.is_empty() {
        return Err("edge list is empty".into());
    }
    let inner = inner
        .strip_prefix('(')
        .and_then(|b| b.strip_suffix(')'))
        .ok_or("edges must be written as (i,j)")?;
    inner
        .split("),(")
        .map(|pair| {
            let (a, b) = pair.split_once(',').ok_or_else(|| format!("bad edge `({pair})`"))?;
            let a: usize = num(a, "node id")?;
            let b: usize = num(b, "node id")?;
            if a == 0 || b == 0 {
                return Err("node ids are 1-based".to_string());
            }
            Ok((a - 1, b - 1))
        })
        .collect()
}

impl FromStr for GraphSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let parsed = (|| -> Result<GraphSpec, String> {
            if let Some(body) = compact.strip_prefix("edges:") {
                return Ok(GraphSpec::Edges(parse_edge_list(body)?));
            }
            let (name, args) = split_call(&compact)?;
            match name {
                "fig5" => {
                    arity(name, args.len(), 0..1)?;
                    Ok(GraphSpec::Builtin(BuiltinGraph::CliqueAndRing))
                }
                "er" => {
                    arity(name, args.len(), 2..3)?;
                    Ok(GraphSpec::ErdosRenyi { n: num(args[0], "n")?, p: num(args[1], "p")? })
                }
                "complete" | "cycle" | "path" => {
                    arity(name, args.len(), 1..2)?;
                    let n = num(args[0], "n")?;
                    Ok(GraphSpec::Builtin(match name {
                        "complete" => BuiltinGraph::Complete(n),
                        "cycle" => BuiltinGraph::Cycle(n),
                        _ => BuiltinGraph::Path(n),
                    }))
                }
                other => Err(format!("unknown graph kind `{other}`")),
            }
        })();
        parsed.map_err(|e| Error::Config(format!("graph `{s}`: {e}")))
    }
}

impl fmt::Display for GraphSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphSpec::ErdosRenyi { n, p } => write!(f, "er({n},{p})"),
            GraphSpec::Builtin(BuiltinGraph::Complete(n)) => write!(f, "complete({n})"),
            GraphSpec::Builtin(BuiltinGraph::Cycle(n)) => write!(f, "cycle({n})"),
            GraphSpec::Builtin(BuiltinGraph::Path(n)) => write!(f, "path({n})"),
            GraphSpec::Builtin(BuiltinGraph::CliqueAndRing) => write!(f, "fig5"),
            GraphSpec::Edges(pairs) => {
                write!(f, "edges:[")?;
                for (idx, (a, b)) in pairs.iter().enumerate() {
                    if idx > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "({},{})", a + 1, b + 1)?;
                }
                write!(f, "]")
            }
        }
    }
}

/// `bern(p)`, `tnorm(mu, sigma)`, `tnorm_mean(mean, sigma)` or `beta(a, b)`.
/// `sigma` may be omitted and falls back to `default_sigma`.
pub fn parse_arm(s: &str, default_sigma: f64) -> Result<ArmSpec> {
    let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let fields = (|| -> Result<(String, Vec<f64>), String> {
        let (name, args) = split_call(&compact)?;
        let values = args.iter().map(|a| num(a, "arm parameter")).collect::<Result<Vec<f64>, _>>()?;
        Ok((name.to_string(), values))
    })()
    .map_err(|e| Error::Config(format!("arm `{s}`: {e}")))?;
    let bad = |msg: String| Error::Config(format!("arm `{s}`: {msg}"));
    let (name, v) = fields;
    let sigma = || if v.len() == 2 { v[1] } else { default_sigma };
    match name.as_str() {
        "bern" | "bernoulli" => {
            arity(&name, v.len(), 1..2).map_err(bad)?;
            ArmSpec::bernoulli(v[0])
        }
        "tnorm" | "truncated_normal" => {
            arity(&name, v.len(), 1..3).map_err(bad)?;
            ArmSpec::truncated_normal(v[0], sigma())
        }
        "tnorm_mean" | "truncated_normal_mean_targeted" => {
            arity(&name, v.len(), 1..3).map_err(bad)?;
            ArmSpec::truncated_normal_with_mean(v[0], sigma())
        }
        "beta" => {
            arity(&name, v.len(), 2..3).map_err(bad)?;
            ArmSpec::beta(v[0], v[1])
        }
        other => Err(bad(format!("unknown arm kind `{other}`"))),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn expand(&self, n: usize, key: &str) -> Result<Vec<T>> {
        match self {
            OneOrMany::One(v) => Ok(vec![v.clone(); n]),
            OneOrMany::Many(vs) if vs.len() == n => Ok(vs.clone()),
            OneOrMany::Many(vs) => Err(Error::Config(format!("`{key}` lists {} values for {n} agents", vs.len()))),
        }
    }
}

/// `true`/`false` or `"on"`/`"off"`.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
pub enum Switch {
    Bool(bool),
    Word(OnOff),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnOff {
    On,
    Off,
}

impl Switch {
    pub fn enabled(self) -> bool {
        matches!(self, Switch::Bool(true) | Switch::Word(OnOff::On))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupEntry {
    pub name: String,
    /// 1-based agent ids.
    pub agents: Vec<usize>,
}

/// Raw experiment file as written by the user.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub graph: Spanned<String>,
    pub arms: Spanned<Vec<Spanned<String>>>,
    pub policy: Spanned<OneOrMany<String>>,
    pub varsigma: Option<Spanned<OneOrMany<f64>>>,
    pub beta: Option<Spanned<OneOrMany<f64>>>,
    /// Standard deviation for truncated-normal arms that omit it.
    pub sigma: Option<f64>,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub runs: Option<u32>,
    pub seed: Option<u64>,
    pub invariant_checks: Option<Switch>,
    pub oracle: Option<Switch>,
    pub output_dir: Option<PathBuf>,
    pub snapshot_interval: Option<u64>,
    /// Label used by `compare`.
    pub label: Option<String>,
    #[serde(default)]
    pub groups: Vec<GroupEntry>,
}

fn line_of(source: &str, span: Range<usize>) -> usize {
    source[..span.start.min(source.len())].matches('\n').count() + 1
}

/// Where the master seed came from, in priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSource {
    Flag,
    File,
    Environment,
    Default,
}

/// Fully resolved experiment: the simulator config plus output metadata.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub graph_spec: GraphSpec,
    pub arm_specs: Vec<String>,
    pub sim: SimConfig,
    pub seed_source: SeedSource,
    pub oracle: bool,
    pub output_dir: Option<PathBuf>,
    pub label: Option<String>,
    /// `(name, 0-based agents)`
    pub groups: Vec<(String, Vec<usize>)>,
}

impl Experiment {
    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        let p = self.sim.policies[0];
        let uniform = self.sim.policies.iter().all(|&q| q == p);
        let params = if p.is_kl() { &self.sim.varsigma } else { &self.sim.beta };
        let same_param = params.iter().all(|&v| v == params[0]);
        match (uniform, p.is_single_agent(), same_param) {
            (true, true, _) => p.name().to_string(),
            (true, false, true) => {
                format!("{}({}={})", p.name(), if p.is_kl() { "varsigma" } else { "beta" }, params[0])
            }
            (true, false, false) => format!("{}(per-agent)", p.name()),
            (false, _, _) => "mixed".to_string(),
        }
    }
}

pub fn load_experiment(path: &Path, seed_flag: Option<u64>) -> Result<Experiment> {
    let source = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_experiment(&source, seed_flag, std::env::var("DECBANDIT_SEED").ok().as_deref())
        .map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
}

/// Parses and resolves an experiment. The seed is taken from `seed_flag`,
/// then the file, then `env_seed`, then 0.
pub fn parse_experiment(source: &str, seed_flag: Option<u64>, env_seed: Option<&str>) -> Result<Experiment> {
    let file: ExperimentFile = toml::from_str(source).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
    let at = |key: &str, span: Range<usize>, e: Error| {
        let msg = match e {
            Error::Config(m) => m,
            other => other.to_string(),
        };
        Error::Config(format!("key `{key}` (line {}): {msg}", line_of(source, span)))
    };

    let (master_seed, seed_source) = match (seed_flag, file.seed, env_seed) {
        (Some(s), _, _) => (s, SeedSource::Flag),
        (None, Some(s), _) => (s, SeedSource::File),
        (None, None, Some(raw)) => {
            let s = raw
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("DECBANDIT_SEED=`{raw}` is not an unsigned integer")))?;
            (s, SeedSource::Environment)
        }
        (None, None, None) => (0, SeedSource::Default),
    };

    let graph_spec: GraphSpec = file.graph.get_ref().parse().map_err(|e| at("graph", file.graph.span(), e))?;
    let graph = graph_spec.build(master_seed).map_err(|e| at("graph", file.graph.span(), e))?;
    let n = graph.node_count();

    let sigma = file.sigma.unwrap_or(DEFAULT_SIGMA);
    let mut arms = Vec::new();
    for (idx, raw) in file.arms.get_ref().iter().enumerate() {
        arms.push(parse_arm(raw.get_ref(), sigma).map_err(|e| at(&format!("arms[{idx}]"), raw.span(), e))?);
    }
    let arm_specs: Vec<String> = file.arms.get_ref().iter().map(|s| s.get_ref().clone()).collect();
    let arms = ArmSet::new(arms).map_err(|e| at("arms", file.arms.span(), e))?;

    let policies = file
        .policy
        .get_ref()
        .expand(n, "policy")
        .and_then(|names| names.iter().map(|p| p.parse()).collect::<Result<Vec<Policy>>>())
        .map_err(|e| at("policy", file.policy.span(), e))?;
    let per_agent = |value: &Option<Spanned<OneOrMany<f64>>>, key: &str| -> Result<Vec<f64>> {
        match value {
            None => Ok(vec![DEFAULT_PARAM; n]),
            Some(v) => v.get_ref().expand(n, key).map_err(|e| at(key, v.span(), e)),
        }
    };
    let varsigma = per_agent(&file.varsigma, "varsigma")?;
    let beta = per_agent(&file.beta, "beta")?;

    let mut groups = Vec::new();
    for g in &file.groups {
        if g.agents.is_empty() || g.agents.iter().any(|&a| a == 0 || a > n) {
            return Err(Error::Config(format!("group `{}` must list 1-based agent ids in 1..={n}", g.name)));
        }
        groups.push((g.name.clone(), g.agents.iter().map(|a| a - 1).collect()));
    }

    let mut sim = SimConfig::uniform(graph, arms, policies[0], DEFAULT_PARAM, file.horizon);
    sim.policies = policies;
    sim.varsigma = varsigma;
    sim.beta = beta;
    sim.runs = file.runs.unwrap_or(1);
    sim.master_seed = master_seed;
    sim.snapshot_interval = file.snapshot_interval.unwrap_or(1);
    sim.invariant_checks = file.invariant_checks.is_some_and(Switch::enabled);
    sim.validate()?;

    Ok(Experiment {
        graph_spec,
        arm_specs,
        sim,
        seed_source,
        oracle: file.oracle.is_some_and(Switch::enabled),
        output_dir: file.output_dir,
        label: file.label,
        groups,
    })
}
