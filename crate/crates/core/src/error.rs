use thiserror::Error;

/// Errors surfaced by the simulator, calculators and experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("no connected Erdos-Renyi graph after {attempts} attempts (n = {n}, p = {p})")]
    Connectivity { attempts: u32, n: usize, p: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("length mismatch: expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{what} scan exceeded cap of {cap}")]
    ScanCap { what: &'static str, cap: u64 },

    #[error("desk-scale guard: {0} (pass --override-guard to run anyway)")]
    Guard(String),

    #[error("trace inconsistency: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
