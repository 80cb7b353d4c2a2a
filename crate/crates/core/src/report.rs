//! Machine-readable run reports.

use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub bound: f64,
    /// What the bound is and where its value comes from.
    pub provenance: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, measured: f64, bound: f64, provenance: &str) -> Self {
        Self {
            name: name.into(),
            passed,
            measured,
            bound,
            provenance: provenance.into(),
        }
    }

    /// Passes when `measured < bound`.
    pub fn below(name: &str, measured: f64, bound: f64, provenance: &str) -> Self {
        Self::new(name, measured < bound, measured, bound, provenance)
    }

    /// Passes when `measured > bound`.
    pub fn above(name: &str, measured: f64, bound: f64, provenance: &str) -> Self {
        Self::new(name, measured > bound, measured, bound, provenance)
    }

    pub fn at_least(name: &str, measured: f64, bound: f64, provenance: &str) -> Self {
        Self::new(name, measured >= bound, measured, bound, provenance)
    }

    pub fn at_most(name: &str, measured: f64, bound: f64, provenance: &str) -> Self {
        Self::new(name, measured <= bound, measured, bound, provenance)
    }
}

/// Non-finite floats serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub command: String,
    pub seed: u64,
    pub config: Value,
    pub checks: Vec<Check>,
    pub details: Value,
    pub wall_time_ms: u64,
}

impl RunReport {
    pub fn new(command: &str, seed: u64, config: Value) -> Self {
        Self {
            command: command.into(),
            seed,
            config,
            checks: Vec::new(),
            details: Value::Null,
            wall_time_ms: 0,
        }
    }

    pub fn push(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report values serialize")
    }
}
