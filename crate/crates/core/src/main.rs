use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use decbandit::cli::{
    cmd_bounds, cmd_compare, cmd_simulate, cmd_verify, exit_code, parse_fault, resolve_out_dir, EXIT_CONFIG,
    EXIT_OK, EXIT_VIOLATION,
};
use decbandit::config::{load_experiment, Experiment};
use decbandit::Result;

#[derive(Parser)]
#[command(name = "decbandit", version, about = "Decentralized multi-armed bandit simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (overrides `output_dir` in the file).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed; beats the file's `seed`, which beats DECBANDIT_SEED.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads for batch runs (default: available parallelism).
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Turn on per-round invariant checks.
    #[arg(long)]
    check_invariants: bool,
    /// Turn on the coefficient oracle.
    #[arg(long)]
    oracle: bool,
    /// Lift the N <= 16, T <= 2000 oracle limit.
    #[arg(long)]
    override_guard: bool,
}

impl Common {
    fn load(&self) -> Result<Experiment> {
        let mut exp = load_experiment(&self.config, self.seed)?;
        exp.sim.invariant_checks |= self.check_invariants;
        exp.oracle |= self.oracle;
        Ok(exp)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch and write trajectories.csv and summary.json.
    Simulate(Common),
    /// Run several configs on shared graph, arms and seeds.
    Compare {
        /// Experiment files; graph, arms, T, runs and seed must agree.
        #[arg(long = "config", value_name = "PATH", required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long, value_name = "U64")]
        seed: Option<u64>,
        #[arg(long, value_name = "N")]
        workers: Option<usize>,
        /// Give each config its own reward streams.
        #[arg(long)]
        independent_streams: bool,
    },
    /// Write per-agent bound tables.
    Bounds(Common),
    /// Run with every invariant and oracle check; exit 2 on a violation.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Perturb one consensus estimate: T,AGENT,ARM[,DELTA] (1-based).
        #[arg(long, value_name = "SPEC")]
        inject_fault: Option<String>,
    },
}

fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Simulate(common) => {
            let exp = common.load()?;
            let dir = resolve_out_dir(common.out.as_deref(), &exp);
            let summary = cmd_simulate(&exp, &dir, common.workers, common.override_guard)?;
            println!(
                "{} runs, mean final regret {:.4} (std {:.4}); wrote {}",
                exp.sim.runs,
                summary.pooled_mean_final_regret,
                summary.pooled_std_final_regret,
                dir.display()
            );
            for report in [&summary.invariants, &summary.oracle].into_iter().flatten() {
                print!("{report}");
            }
            Ok(if summary.passed() { EXIT_OK } else { EXIT_VIOLATION })
        }
        Command::Compare { configs, out, seed, workers, independent_streams } => {
            let exps = configs.iter().map(|p| load_experiment(p, seed)).collect::<Result<Vec<_>>>()?;
            let dir = resolve_out_dir(out.as_deref(), &exps[0]);
            let summary = cmd_compare(&exps, &dir, workers, !independent_streams)?;
            for e in &summary.entries {
                println!("{:<32} mean final regret {:.4} (std {:.4})", e.label, e.pooled_mean_final_regret, e.pooled_std_final_regret);
                for g in &e.groups {
                    println!("  {:<30} {:.4}", g.name, g.mean_final_regret);
                }
            }
            Ok(EXIT_OK)
        }
        Command::Bounds(common) => {
            let exp = common.load()?;
            let dir = resolve_out_dir(common.out.as_deref(), &exp);
            for r in cmd_bounds(&exp, &dir)? {
                let finite = r.finite_bound.map_or("-".to_string(), |b| format!("{b:.4}"));
                println!(
                    "agent {:>3} {:<12} |N| = {:<3} log-T coefficient {:.6}  finite bound at T = {}: {finite}",
                    r.agent + 1,
                    r.policy.name(),
                    r.neighborhood_size,
                    r.asymptotic_coefficient,
                    r.horizon
                );
            }
            Ok(EXIT_OK)
        }
        Command::Verify { common, inject_fault } => {
            let exp = common.load()?;
            let fault = inject_fault.as_deref().map(parse_fault).transpose()?;
            let dir = common.out.clone().or_else(|| exp.output_dir.clone());
            let outcome = cmd_verify(&exp, dir.as_deref(), common.override_guard, fault)?;
            print!("{}", outcome.report);
            println!("{}", if outcome.passed { "all checks passed" } else { "violations found" });
            Ok(if outcome.passed { EXIT_OK } else { EXIT_VIOLATION })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let code = match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
