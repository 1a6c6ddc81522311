//! One headline line per criterion, with its sub-checks indented below.

use std::fmt::Write as _;
use std::time::Duration;

/// A single pinned comparison.
#[derive(Debug, Clone)]
pub struct Check {
    pub label: String,
    pub observed: String,
    pub expected: String,
    pub pass: bool,
    /// Exact checks gate the run; Monte Carlo reproduction checks report only.
    pub exact: bool,
}

impl Check {
    /// `observed` within `tol` of `target`.
    pub fn near(label: impl Into<String>, observed: f64, target: f64, tol: f64) -> Self {
        Check {
            label: label.into(),
            observed: format!("{observed:.3}"),
            expected: format!("{target:.3} ± {tol:.3}"),
            pass: (observed - target).abs() <= tol,
            exact: false,
        }
    }

    pub fn at_least(label: impl Into<String>, observed: f64, floor: f64) -> Self {
        Check {
            label: label.into(),
            observed: format!("{observed:.3}"),
            expected: format!(">= {floor:.3}"),
            pass: observed >= floor,
            exact: false,
        }
    }

    pub fn at_most(label: impl Into<String>, observed: f64, ceiling: f64) -> Self {
        Check {
            label: label.into(),
            observed: format!("{observed:.3}"),
            expected: format!("<= {ceiling:.3}"),
            pass: observed <= ceiling,
            exact: false,
        }
    }

    /// `lower` strictly below `higher`.
    pub fn below(label: impl Into<String>, lower: f64, higher: f64) -> Self {
        Check {
            label: label.into(),
            observed: format!("{lower:.3} vs {higher:.3}"),
            expected: "first < second".into(),
            pass: lower < higher,
            exact: false,
        }
    }

    /// An exact property.
    pub fn holds(label: impl Into<String>, pass: bool, observed: impl Into<String>) -> Self {
        Check {
            label: label.into(),
            observed: observed.into(),
            expected: "holds".into(),
            pass,
            exact: true,
        }
    }

    /// Marks a numeric check as exact.
    pub fn exact(self) -> Self {
        Check { exact: true, ..self }
    }
}

/// Outcome of one numbered criterion.
#[derive(Debug, Clone)]
pub struct Criterion {
    pub number: u8,
    pub title: String,
    pub checks: Vec<Check>,
    pub elapsed: Duration,
    /// Time budget for this criterion, when it has one.
    pub budget: Option<Duration>,
    /// Set when the criterion could not run at all.
    pub error: Option<String>,
}

impl Criterion {
    fn within_budget(&self) -> bool {
        self.budget.is_none_or(|b| self.elapsed <= b)
    }

    pub fn pass(&self) -> bool {
        self.error.is_none() && self.checks.iter().all(|c| c.pass) && self.within_budget()
    }

    /// Failed for a reason other than a Monte Carlo reproduction gap: an
    /// exact check, a crash or a blown time budget.
    pub fn gating_failure(&self) -> bool {
        self.error.is_some() || !self.within_budget() || self.checks.iter().any(|c| c.exact && !c.pass)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let verdict = if self.pass() { "PASS" } else { "FAIL" };
        let failed = self.checks.iter().filter(|c| !c.pass).count();
        let _ = write!(
            out,
            "[{verdict}] criterion {}: {} ({} checks, {} failed, {:.1}s",
            self.number,
            self.title,
            self.checks.len(),
            failed,
            self.elapsed.as_secs_f64()
        );
        if let Some(b) = self.budget {
            let _ = write!(out, " of {:.0}s budget", b.as_secs_f64());
        }
        out.push(')');
        if let Some(e) = &self.error {
            let _ = write!(out, "\n      error: {e}");
        }
        for c in &self.checks {
            let mark = match (c.pass, c.exact) {
                (true, _) => "ok  ",
                (false, true) => "FAIL",
                (false, false) => "GAP ",
            };
            let _ = write!(out, "\n      {mark} {}: {} (expected {})", c.label, c.observed, c.expected);
        }
        out
    }
}

#[derive(Debug, Default)]
pub struct Report {
    pub criteria: Vec<Criterion>,
}

impl Report {
    pub fn push(&mut self, c: Criterion) {
        println!("{}", c.render());
        self.criteria.push(c);
    }

    pub fn failed(&self) -> Vec<u8> {
        self.criteria.iter().filter(|c| !c.pass()).map(|c| c.number).collect()
    }

    pub fn gating_failures(&self) -> Vec<u8> {
        self.criteria.iter().filter(|c| c.gating_failure()).map(|c| c.number).collect()
    }
}
