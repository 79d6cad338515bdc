use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_decbandit");

fn decbandit(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("DECBANDIT_SEED").output().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = r#"
graph = "path(4)"
arms = ["bern(0.7)", "bern(0.5)", "bern(0.3)"]
policy = "dec_ucb1"
beta = 0.01
T = 10
runs = 1
seed = 4
"#;

#[test]
fn simulate_writes_one_row_per_agent_and_time() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "a.toml", SMALL);
    let out = dir.path().join("out");
    let res = decbandit(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.join("trajectories.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("run,t,agent,regret"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 11 * 4);
    for agent in 1..=4 {
        assert_eq!(rows.iter().filter(|r| r.split(',').nth(2) == Some(&agent.to_string())).count(), 11);
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["seed"], 4);
    assert_eq!(summary["config"]["T"], 10);
    assert_eq!(summary["config"]["graph"], "path(4)");
    assert!(summary["config"]["graph_seed"].is_u64());
    assert_eq!(summary["seeds"].as_array().unwrap().len(), 1);
    assert_eq!(summary["per_agent"].as_array().unwrap().len(), 4);
}

#[test]
fn simulate_is_byte_identical_across_invocations() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "a.toml", &SMALL.replace("T = 10", "T = 300").replace("runs = 1", "runs = 3"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(decbandit(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(0));
    }
    assert_eq!(fs::read(a.join("trajectories.csv")).unwrap(), fs::read(b.join("trajectories.csv")).unwrap());
}

#[test]
fn seed_flag_and_environment() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "a.toml", &SMALL.replace("seed = 4\n", ""));
    let out = dir.path().join("o");
    let res = Command::new(BIN)
        .args(["simulate", "--config", &cfg, "--out", out.to_str().unwrap()])
        .env("DECBANDIT_SEED", "31")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["seed"], 31);
    assert_eq!(summary["config"]["seed_source"], "environment");

    let res = Command::new(BIN)
        .args(["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "12"])
        .env("DECBANDIT_SEED", "31")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["seed"], 12);
}

#[test]
fn config_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let bad_key = write(dir.path(), "k.toml", &format!("{SMALL}colour = \"red\"\n"));
    let res = decbandit(&["simulate", "--config", &bad_key]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("colour"));

    let bad_arm = write(dir.path(), "a.toml", &SMALL.replace("bern(0.3)", "bern(3)"));
    let res = decbandit(&["simulate", "--config", &bad_arm]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("arms[2]"));

    assert_eq!(decbandit(&["simulate"]).status.code(), Some(1));
    assert_eq!(decbandit(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(decbandit(&["--help"]).status.code(), Some(0));
}

#[test]
fn compare_merges_policies() {
    let dir = TempDir::new().unwrap();
    let base = SMALL.replace("T = 10", "T = 100").replace("runs = 1", "runs = 2");
    let mut configs = Vec::new();
    for (i, v) in ["1.0", "0.1", "0.01"].iter().enumerate() {
        let body = base.replace("policy = \"dec_ucb1\"", "policy = \"dec_klucb\"").replace("beta = 0.01", &format!("varsigma = {v}"));
        configs.push(write(dir.path(), &format!("k{i}.toml"), &body));
    }
    configs.push(write(dir.path(), "s.toml", &base.replace("dec_ucb1", "single_klucb")));
    let out = dir.path().join("cmp");
    let mut args = vec!["compare"];
    for c in &configs {
        args.extend(["--config", c.as_str()]);
    }
    args.extend(["--out", out.to_str().unwrap()]);
    let res = decbandit(&args);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let wide = fs::read_to_string(out.join("compare_mean.csv")).unwrap();
    let header = wide.lines().next().unwrap();
    assert_eq!(header, "t,dec_klucb(varsigma=1),dec_klucb(varsigma=0.1),dec_klucb(varsigma=0.01),single_klucb");
    let long = fs::read_to_string(out.join("compare.csv")).unwrap();
    assert!(long.starts_with("label,policy,run,t,agent,regret\n"));
    assert_eq!(long.lines().count(), 1 + 4 * 2 * 101 * 4);

    let mismatched = write(dir.path(), "m.toml", &base.replace("T = 100", "T = 50"));
    let res = decbandit(&["compare", "--config", &configs[0], "--config", &mismatched, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("`T`"));
}

#[test]
fn comparing_a_policy_with_itself_gives_identical_columns() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "a.toml", &SMALL.replace("T = 10", "T = 80"));
    let out = dir.path().join("o");
    let res = decbandit(&["compare", "--config", &cfg, "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    let wide = fs::read_to_string(out.join("compare_mean.csv")).unwrap();
    for line in wide.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[1], cells[2]);
    }
}

#[test]
fn compare_reports_group_columns() {
    let dir = TempDir::new().unwrap();
    let body = r#"
graph = "fig5"
arms = ["tnorm_mean(0.6)", "tnorm_mean(0.4)"]
policy = "dec_ucb1"
beta = [1, 1, 1, 0.01, 0.01, 0.01, 1, 1, 1, 0.01, 0.01, 0.01]
T = 50
runs = 2
[[groups]]
name = "Group 1"
agents = [1, 2, 3]
[[groups]]
name = "Group 2"
agents = [4, 5, 6]
[[groups]]
name = "Group 3"
agents = [7, 8, 9]
[[groups]]
name = "Group 4"
agents = [10, 11, 12]
"#;
    let cfg = write(dir.path(), "g.toml", body);
    let out = dir.path().join("o");
    assert_eq!(decbandit(&["compare", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(0));
    let header = fs::read_to_string(out.join("compare_mean.csv")).unwrap().lines().next().unwrap().to_string();
    assert_eq!(
        header,
        "t,dec_ucb1(per-agent),dec_ucb1(per-agent):Group 1,dec_ucb1(per-agent):Group 2,dec_ucb1(per-agent):Group 3,dec_ucb1(per-agent):Group 4"
    );
}

#[test]
fn bounds_table_schema() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "b.toml", &SMALL.replace("beta = 0.01", "beta = 1.0"));
    let out = dir.path().join("o");
    let res = decbandit(&["bounds", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.join("bounds.csv")).unwrap();
    assert!(csv.starts_with("T,bound_value,policy,agent_group,kind\n"));
    assert!(csv.lines().any(|l| l.starts_with("10,") && l.ends_with(",dec_ucb1,all,finite")));
    let reports: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("bounds.json")).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 4);
    assert!(reports[0]["finite_bound"].is_f64());
}

#[test]
fn verify_exit_codes() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "v.toml", &SMALL.replace("T = 10", "T = 200").replace("runs = 1", "runs = 5"));
    let res = decbandit(&["verify", "--config", &cfg]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stdout));

    let res = decbandit(&["verify", "--config", &cfg, "--inject-fault", "20,2,1"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stdout).contains("[FAIL] reconstruction"));

    let single = write(dir.path(), "s.toml", &SMALL.replace("dec_ucb1", "single_ucb1"));
    let res = decbandit(&["verify", "--config", &single]);
    assert_eq!(res.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("[N/A ] delayed max"));
    assert!(stdout.contains("[N/A ] count lag"));

    let big = write(dir.path(), "big.toml", &SMALL.replace("T = 10", "T = 2001"));
    let res = decbandit(&["verify", "--config", &big]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("--override-guard"));
}
