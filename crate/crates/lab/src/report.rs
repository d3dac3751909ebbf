//! Structured run reports: one entry per check, serialized deterministically.

use std::path::PathBuf;

use serde::Serialize;

/// A single measured check with its pass verdict.  The threshold is kept as
/// the human-readable condition that was evaluated.
#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub condition: String,
}

impl CheckResult {
    /// `measured ≤ bound`.
    pub fn le(name: &str, measured: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            passed: measured <= bound,
            measured,
            condition: format!("<= {bound:.6e}"),
        }
    }

    /// `measured ≥ bound`.
    pub fn ge(name: &str, measured: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            passed: measured >= bound,
            measured,
            condition: format!(">= {bound:.6e}"),
        }
    }

    /// `|measured − target| ≤ tol`.
    pub fn within(name: &str, measured: f64, target: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            passed: (measured - target).abs() <= tol,
            measured,
            condition: format!("= {target:.6e} ± {tol:.6e}"),
        }
    }

    pub fn flag(name: &str, passed: bool) -> Self {
        Self {
            name: name.into(),
            passed,
            measured: if passed { 1.0 } else { 0.0 },
            condition: "boolean".into(),
        }
    }
}

/// Outcome of one experiment run.  Wall-clock is tracked for the console but
/// deliberately excluded from the serialized form, which must be
/// byte-identical across runs with the same config, seed and version.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub kind: String,
    pub seed: u64,
    /// Full echo of the configuration that produced this report.
    pub config: serde_json::Value,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
    pub artifacts: Vec<PathBuf>,
    #[serde(skip)]
    pub wall_clock: std::time::Duration,
}

impl RunReport {
    pub fn new(
        kind: &str,
        seed: u64,
        config: serde_json::Value,
        checks: Vec<CheckResult>,
        artifacts: Vec<PathBuf>,
    ) -> Self {
        let passed = checks.iter().all(|c| c.passed);
        Self {
            schema_version: 1,
            kind: kind.into(),
            seed,
            config,
            passed,
            checks,
            artifacts,
            wall_clock: std::time::Duration::ZERO,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One line per check, for console output.
    pub fn summary_lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| {
                format!(
                    "  [{}] {}: measured {:.6e} ({})",
                    if c.passed { "pass" } else { "FAIL" },
                    c.name,
                    c.measured,
                    c.condition
                )
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_constructors() {
        assert!(CheckResult::le("a", 1.0, 2.0).passed);
        assert!(!CheckResult::le("a", 3.0, 2.0).passed);
        assert!(CheckResult::ge("b", 3.0, 2.0).passed);
        assert!(CheckResult::within("c", 0.95, 1.0, 0.1).passed);
        assert!(!CheckResult::within("c", 0.85, 1.0, 0.1).passed);
    }

    #[test]
    fn report_pass_is_conjunction_and_json_is_stable() {
        let r = RunReport::new(
            "demo",
            7,
            serde_json::json!({"kind": "demo"}),
            vec![CheckResult::le("x", 1.0, 2.0), CheckResult::ge("y", 0.0, 1.0)],
            vec![],
        );
        assert!(!r.passed);
        let a = r.to_json();
        let b = r.to_json();
        assert_eq!(a, b);
        assert!(!a.contains("wall_clock"));
    }
}
