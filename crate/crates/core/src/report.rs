//! Pass/fail records shared by the reports and the command line.

use std::fmt;

use serde::Serialize;

/// One numerical check: `value` compared against `bound`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl CheckRecord {
    /// Passes when `value <= bound`.
    pub fn at_most(name: impl Into<String>, t: Option<f64>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            t,
            value,
            bound,
            pass: value <= bound,
        }
    }

    /// Passes when `value >= bound`.
    pub fn at_least(name: impl Into<String>, t: Option<f64>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            t,
            value,
            bound,
            pass: value >= bound,
        }
    }
}

impl fmt::Display for CheckRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.t.map_or_else(|| "-".to_string(), |t| t.to_string());
        write!(
            f,
            "{} {} {:e} {:e} {}",
            self.name,
            t,
            self.value,
            self.bound,
            if self.pass { "pass" } else { "FAIL" }
        )
    }
}

pub fn all_pass(checks: &[CheckRecord]) -> bool {
    checks.iter().all(|c| c.pass)
}
