use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use heatflow_core::{CheckRecord, DMatrix};
use serde::Serialize;

use crate::InputError;

/// Files produced by a run, held until the end so that a failed run leaves
/// nothing behind.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, String)>,
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<String>, contents: String) {
        self.files.push((name.into(), contents));
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|f| f.0.as_str()).collect()
    }

    pub fn write_all(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for (name, contents) in &self.files {
            fs::write(dir.join(name), contents)?;
        }
        Ok(())
    }
}

/// Shortest round-trip form, switching to exponent notation for very small
/// or very large magnitudes.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

/// `point,0,1,…` header followed by one row per point.
pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::from("point");
    for j in 0..m.ncols() {
        write!(s, ",{j}").unwrap();
    }
    s.push('\n');
    for i in 0..m.nrows() {
        write!(s, "{i}").unwrap();
        for j in 0..m.ncols() {
            write!(s, ",{}", num(m[(i, j)])).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn table_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

pub fn checks_csv(checks: &[CheckRecord]) -> String {
    table_csv(
        &["name", "t", "value", "bound", "pass"],
        checks.iter().map(|c| {
            vec![
                c.name.clone(),
                c.t.map_or_else(String::new, num),
                num(c.value),
                num(c.bound),
                c.pass.to_string(),
            ]
        }),
    )
}

/// Default bounds, each overridable with `--tol name=value`.
#[derive(Debug, Clone, Serialize)]
pub struct Tolerances(BTreeMap<&'static str, f64>);

impl Tolerances {
    const DEFAULTS: [(&'static str, f64); 9] = [
        ("triangle", 1e-8),
        ("order", 1e-8),
        ("decay", 1e-8),
        ("duality", 1e-8),
        ("contraction", 1e-6),
        ("tangency", 0.05),
        ("involution", 1e-9),
        ("sinkhorn", 0.01),
        ("closed_form", 1e-9),
    ];

    pub fn parse(overrides: &[String]) -> Result<Self, InputError> {
        let mut map: BTreeMap<&'static str, f64> = Self::DEFAULTS.into_iter().collect();
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| InputError(format!("tolerance override {o:?} is not name=value")))?;
            let slot = map
                .iter_mut()
                .find(|(k, _)| **k == key.trim())
                .map(|(_, v)| v)
                .ok_or_else(|| InputError(format!("unknown tolerance {key:?}")))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| InputError(format!("tolerance {key} = {value:?} is not a number")))?;
            if !(v >= 0.0 && v.is_finite()) {
                return Err(InputError(format!("tolerance {key} must be finite and non-negative")));
            }
            *slot = v;
        }
        Ok(Self(map))
    }

    pub fn get(&self, key: &str) -> f64 {
        self.0[key]
    }

    /// Rebinds the bounds of library check records to the active tolerances.
    pub fn apply(&self, checks: &mut [CheckRecord]) {
        for c in checks {
            let key = match c.name.as_str() {
                "dtilde_triangle" => "triangle",
                "dtilde_below_dt" => "order",
                "duality_gap" => "duality",
                n if n.starts_with("dt_decay") || n.starts_with("dtilde_decay") => "decay",
                _ => continue,
            };
            c.bound = self.get(key);
            c.pass = c.value <= c.bound;
        }
    }
}

#[derive(Serialize)]
pub struct Summary<'a, C: Serialize> {
    pub command: &'a str,
    pub config: C,
    pub checks: &'a [CheckRecord],
    pub files: Vec<&'a str>,
    pub wall_time_seconds: f64,
}
