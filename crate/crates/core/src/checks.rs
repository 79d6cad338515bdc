//! Named pass/fail checks with violation counts and tightest margins.

use std::fmt;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

/// Outcome of one invariant scanned over a whole run.
///
/// `tightest_margin` is the smallest slack seen (negative once violated).
#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub status: CheckStatus,
    pub evaluations: u64,
    pub violations: u64,
    pub tightest_margin: Option<f64>,
    pub first_violation: Option<String>,
    /// Informational checks are reported but never gate an exit code.
    pub gating: bool,
}

impl CheckOutcome {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: CheckStatus::Pass,
            evaluations: 0,
            violations: 0,
            tightest_margin: None,
            first_violation: None,
            gating: true,
        }
    }

    pub fn not_applicable(name: impl Into<String>) -> Self {
        Self { status: CheckStatus::NotApplicable, ..Self::new(name) }
    }

    pub fn informational(mut self) -> Self {
        self.gating = false;
        self
    }

    /// Records one evaluation; `margin >= 0` means the property held.
    pub fn record(&mut self, margin: f64, context: impl FnOnce() -> String) {
        self.record_with(margin >= 0.0, margin, context);
    }

    /// Like [`record`](Self::record) but the property needs `margin > 0`.
    pub fn record_strict(&mut self, margin: f64, context: impl FnOnce() -> String) {
        self.record_with(margin > 0.0, margin, context);
    }

    fn record_with(&mut self, held: bool, margin: f64, context: impl FnOnce() -> String) {
        if self.status == CheckStatus::NotApplicable {
            return;
        }
        self.evaluations += 1;
        self.tightest_margin = Some(match self.tightest_margin {
            Some(m) if m.is_nan() => m,
            Some(m) => m.min(margin),
            None => margin,
        });
        if !held {
            self.violations += 1;
            self.status = CheckStatus::Fail;
            if self.first_violation.is_none() {
                self.first_violation = Some(context());
            }
        }
    }

    pub fn merge(&mut self, other: &CheckOutcome) {
        if other.status == CheckStatus::NotApplicable {
            return;
        }
        if self.status == CheckStatus::NotApplicable {
            *self = other.clone();
            return;
        }
        self.evaluations += other.evaluations;
        self.violations += other.violations;
        self.tightest_margin = match (self.tightest_margin, other.tightest_margin) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        if other.status == CheckStatus::Fail {
            self.status = CheckStatus::Fail;
            if self.first_violation.is_none() {
                self.first_violation = other.first_violation.clone();
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.status != CheckStatus::Fail
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match self.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::NotApplicable => "N/A ",
        };
        write!(f, "[{status}] {}", self.name)?;
        if !self.gating {
            write!(f, " (informational)")?;
        }
        if self.status != CheckStatus::NotApplicable {
            write!(f, ": {} evaluations, {} violations", self.evaluations, self.violations)?;
            if let Some(m) = self.tightest_margin {
                write!(f, ", tightest margin {m:.3e}")?;
            }
        }
        if let Some(v) = &self.first_violation {
            write!(f, "; first violation: {v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CheckReport {
    pub checks: Vec<CheckOutcome>,
}

impl CheckReport {
    pub fn get(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Adds `outcome`, merging into an existing check of the same name.
    pub fn absorb(&mut self, outcome: CheckOutcome) {
        match self.checks.iter_mut().find(|c| c.name == outcome.name) {
            Some(existing) => existing.merge(&outcome),
            None => self.checks.push(outcome),
        }
    }

    pub fn merge(&mut self, other: &CheckReport) {
        for c in &other.checks {
            self.absorb(c.clone());
        }
    }

    /// True when no gating check failed.
    pub fn all_passed(&self) -> bool {
        self.checks.iter().filter(|c| c.gating).all(CheckOutcome::passed)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_tracks_violations_and_margin() {
        let mut c = CheckOutcome::new("x");
        c.record(0.5, String::new);
        c.record(0.1, String::new);
        assert!(c.passed());
        c.record(-0.2, || "t=3".into());
        c.record(-0.1, || "t=4".into());
        assert_eq!(c.violations, 2);
        assert_eq!(c.tightest_margin, Some(-0.2));
        assert_eq!(c.first_violation.as_deref(), Some("t=3"));
        assert!(!c.passed());
    }

    #[test]
    fn nan_margin_is_a_violation() {
        let mut c = CheckOutcome::new("nan");
        c.record(f64::NAN, || "nan".into());
        assert!(!c.passed());
        let mut strict = CheckOutcome::new("strict");
        strict.record_strict(0.0, || "zero".into());
        assert_eq!(strict.violations, 1);
    }

    #[test]
    fn informational_failures_do_not_gate() {
        let mut report = CheckReport::default();
        let mut c = CheckOutcome::new("soft").informational();
        c.record(-1.0, String::new);
        report.absorb(c);
        report.absorb(CheckOutcome::not_applicable("na"));
        assert!(report.all_passed());
    }
}
