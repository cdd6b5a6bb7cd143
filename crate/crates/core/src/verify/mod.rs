//! Named oracle checks behind the `verify` subcommand.
//!
//! Each check compares an implementation route with a brute-force one on a
//! small enumerable space and reports a scalar metric against a threshold.
//! The `full` level runs the larger sample sizes; `fast` trades sample size for
//! runtime. A fault can be injected into the reverse-rate orientation to show
//! that the reversal checks notice it.

mod checks;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ctmc::RatioOrientation;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    #[default]
    Fast,
    Full,
}

impl std::str::FromStr for Level {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Self::Fast),
            "full" => Ok(Self::Full),
            other => Err(Error::config(format!("unknown verification level `{other}` (fast, full)"))),
        }
    }
}

/// Deliberate defects for negative-control runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Faults {
    pub orientation: RatioOrientation,
}

impl Faults {
    /// Flips the marginal ratio inside the reverse rate.
    pub fn ratio_sign_flip() -> Self {
        Self {
            orientation: RatioOrientation::Inverted,
        }
    }

    fn describe(&self) -> Option<String> {
        (self.orientation == RatioOrientation::Inverted).then(|| "inverted reverse-rate ratio".to_string())
    }
}

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub metric: f64,
    pub threshold: f64,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub level: Level,
    pub passed: bool,
    pub seed: u64,
    pub version: String,
    pub injected_fault: Option<String>,
    pub checks: Vec<CheckResult>,
}

impl Verdict {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}

pub(crate) struct Ctx {
    pub level: Level,
    pub faults: Faults,
    pub seed: u64,
}

impl Ctx {
    fn full(&self) -> bool {
        self.level == Level::Full
    }

    /// `fast` or `full` depending on the level.
    fn pick<T>(&self, fast: T, full: T) -> T {
        if self.full() {
            full
        } else {
            fast
        }
    }
}

/// Metric, threshold, pass flag and detail of one check.
pub(crate) struct Measured {
    pub metric: f64,
    pub threshold: f64,
    pub passed: bool,
    pub detail: String,
}

impl Measured {
    /// Passes when `metric <= threshold`.
    fn at_most(metric: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self {
            metric,
            threshold,
            passed: metric <= threshold,
            detail: detail.into(),
        }
    }
}

type CheckFn = fn(&Ctx) -> Result<Measured>;

fn registry() -> Vec<(&'static str, CheckFn)> {
    vec![
        ("gray_codec", checks::gray_codec),
        ("kolmogorov_forward", checks::kolmogorov_forward),
        ("transition_reversal", checks::transition_reversal),
        ("rate_reversal_flow", checks::rate_reversal_flow),
        ("reverse_simulation_tv", checks::reverse_simulation_tv),
        ("conditional_reconstruction", checks::conditional_reconstruction),
        ("loss_equivalence", checks::loss_equivalence),
        ("euler_local_order", checks::euler_local_order),
        ("analytical_exactness", checks::analytical_exactness),
        ("corrector_balance", checks::corrector_balance),
        ("binary_reduction", checks::binary_reduction),
        ("gradient_engine", checks::gradient_engine),
        ("leak_freedom", checks::leak_freedom),
        ("path_kl_optimality", checks::path_kl_optimality),
        ("ordinal_score", checks::ordinal_score),
        ("mmd_kernel", checks::mmd_kernel),
    ]
}

/// Names of all checks in run order.
pub fn check_names() -> Vec<&'static str> {
    registry().into_iter().map(|(n, _)| n).collect()
}

/// Runs the checks whose names pass `filter`.
pub fn run_suite(level: Level, faults: Faults, seed: u64, filter: &dyn Fn(&str) -> bool) -> Verdict {
    let ctx = Ctx { level, faults, seed };
    let mut results = Vec::new();
    for (name, check) in registry() {
        if !filter(name) {
            continue;
        }
        let start = Instant::now();
        let outcome = check(&ctx);
        let seconds = start.elapsed().as_secs_f64();
        results.push(match outcome {
            Ok(m) => CheckResult {
                name: name.to_string(),
                passed: m.passed && m.metric.is_finite(),
                metric: m.metric,
                threshold: m.threshold,
                detail: m.detail,
                seconds,
            },
            Err(e) => CheckResult {
                name: name.to_string(),
                passed: false,
                metric: f64::NAN,
                threshold: f64::NAN,
                detail: format!("error: {e}"),
                seconds,
            },
        });
    }
    Verdict {
        level,
        passed: results.iter().all(|r| r.passed),
        seed,
        version: crate::VERSION.to_string(),
        injected_fault: faults.describe(),
        checks: results,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let names = check_names();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
    }

    #[test]
    fn cheap_checks_pass() {
        let cheap = ["gray_codec", "kolmogorov_forward", "transition_reversal", "rate_reversal_flow", "binary_reduction"];
        let v = run_suite(Level::Fast, Faults::default(), 0, &|n| cheap.contains(&n));
        assert_eq!(v.checks.len(), cheap.len());
        assert!(v.passed, "{}", v.to_json().unwrap());
    }

    #[test]
    fn fast_level_passes() {
        let v = run_suite(Level::Fast, Faults::default(), 0, &|_| true);
        assert_eq!(v.checks.len(), check_names().len());
        eprintln!("{}", v.to_json().unwrap());
        assert!(v.passed, "{}", v.to_json().unwrap());
    }

    #[test]
    fn injected_fault_is_caught() {
        let v = run_suite(Level::Fast, Faults::ratio_sign_flip(), 0, &|n| {
            n == "rate_reversal_flow" || n == "reverse_simulation_tv"
        });
        assert!(v.checks.iter().all(|c| !c.passed), "{}", v.to_json().unwrap());
        assert!(v.injected_fault.is_some());
    }
}
