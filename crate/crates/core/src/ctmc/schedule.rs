//! Time schedules `beta(t)` and their integrals.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Slack allowed when a time argument overshoots the horizon by rounding.
const TIME_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScheduleKind {
    /// `beta(t) = base_rate`.
    Constant { base_rate: f64 },
    /// Integral `[1 - sqrt(cos(pi t / 2T))] - [1 - sqrt(cos(pi s / 2T))]`.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub horizon: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::constant(1.0)
    }
}

impl NoiseSchedule {
    pub fn constant(base_rate: f64) -> Self {
        Self {
            kind: ScheduleKind::Constant { base_rate },
            horizon: 1.0,
        }
    }

    pub fn cosine() -> Self {
        Self {
            kind: ScheduleKind::Cosine,
            horizon: 1.0,
        }
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::config(format!("horizon {} must be positive", self.horizon)));
        }
        if let ScheduleKind::Constant { base_rate } = self.kind {
            if !(base_rate >= 0.0 && base_rate.is_finite()) {
                return Err(Error::config(format!(
                    "base rate {base_rate} must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }

    fn check_time(&self, t: f64) -> Result<f64> {
        if !(t >= -TIME_SLACK && t <= self.horizon + TIME_SLACK) {
            return Err(Error::domain(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(t.clamp(0.0, self.horizon))
    }

    /// `1 - sqrt(cos(pi t / 2T))`, the cosine schedule's integral from 0.
    fn cosine_integral(&self, t: f64) -> f64 {
        1.0 - self.cosine_factor(t).sqrt()
    }

    /// `cos(pi t / 2T)`, written as a sine of the remaining time so it is
    /// exactly zero at the horizon.
    fn cosine_factor(&self, t: f64) -> f64 {
        (0.5 * PI * (self.horizon - t) / self.horizon).sin().max(0.0)
    }

    /// `int_s^t beta(u) du`.
    pub fn cumulative(&self, s: f64, t: f64) -> Result<f64> {
        if s > t {
            return Err(Error::domain(format!("cumulative rate needs s <= t, got {s} > {t}")));
        }
        let s = self.check_time(s)?;
        let t = self.check_time(t)?;
        Ok(match self.kind {
            ScheduleKind::Constant { base_rate } => base_rate * (t - s),
            ScheduleKind::Cosine => (self.cosine_integral(t) - self.cosine_integral(s)).max(0.0),
        })
    }

    /// Instantaneous rate multiplier; infinite at the horizon for the cosine kind.
    pub fn beta(&self, t: f64) -> Result<f64> {
        let t = self.check_time(t)?;
        Ok(match self.kind {
            ScheduleKind::Constant { base_rate } => base_rate,
            ScheduleKind::Cosine => {
                let c = self.cosine_factor(t);
                if c == 0.0 {
                    f64::INFINITY
                } else {
                    PI / (4.0 * self.horizon) * (0.5 * PI * t / self.horizon).sin() / c.sqrt()
                }
            }
        })
    }

    /// Mean rate multiplier over `[s, t]`, or `beta(t)` when the interval is empty.
    pub fn mean_beta(&self, s: f64, t: f64) -> Result<f64> {
        if t > s {
            Ok(self.cumulative(s, t)? / (t - s))
        } else {
            self.beta(t)
        }
    }

    /// Earliest `t >= s` with `cumulative(s, t) = target`, or `None` when the
    /// schedule does not accumulate that much before the horizon.
    pub fn advance(&self, s: f64, target: f64) -> Result<Option<f64>> {
        let s = self.check_time(s)?;
        if target < 0.0 {
            return Err(Error::domain("negative cumulative target"));
        }
        if target == 0.0 {
            return Ok(Some(s));
        }
        if self.cumulative(s, self.horizon)? < target {
            return Ok(None);
        }
        if let ScheduleKind::Constant { base_rate } = self.kind {
            return Ok(Some((s + target / base_rate).min(self.horizon)));
        }
        let (mut lo, mut hi) = (s, self.horizon);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if self.cumulative(s, mid)? < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(Some(hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_total_is_one() {
        let s = NoiseSchedule::cosine();
        assert!((s.cumulative(0.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_interval_and_linear_case() {
        for s in [NoiseSchedule::cosine(), NoiseSchedule::constant(2.5)] {
            assert_eq!(s.cumulative(0.37, 0.37).unwrap(), 0.0);
        }
        let c = NoiseSchedule::constant(1.0);
        assert!((c.cumulative(0.2, 0.5).unwrap() - 0.3).abs() < 1e-15);
        assert!(c.cumulative(0.5, 0.2).is_err());
        assert!(c.cumulative(0.0, 1.5).is_err());
    }

    #[test]
    fn cosine_beta_matches_derivative() {
        let s = NoiseSchedule::cosine().with_horizon(2.0);
        for t in [0.1, 0.7, 1.3, 1.9] {
            let h = 1e-6;
            let fd = (s.cumulative(0.0, t + h).unwrap() - s.cumulative(0.0, t - h).unwrap()) / (2.0 * h);
            assert!((fd - s.beta(t).unwrap()).abs() < 1e-6 * fd.max(1.0));
        }
        assert!(s.beta(2.0).unwrap().is_infinite());
    }

    #[test]
    fn advance_inverts_cumulative() {
        for sched in [NoiseSchedule::cosine(), NoiseSchedule::constant(0.8)] {
            let t = sched.advance(0.2, 0.3).unwrap().unwrap();
            assert!((sched.cumulative(0.2, t).unwrap() - 0.3).abs() < 1e-10);
            assert!(sched.advance(0.2, 10.0).unwrap().is_none());
        }
        assert!(NoiseSchedule::constant(0.0).advance(0.0, 1e-9).unwrap().is_none());
    }

    #[test]
    fn monotone_in_the_lower_limit() {
        let s = NoiseSchedule::cosine();
        let mut prev = f64::INFINITY;
        for k in 0..=10 {
            let lower = k as f64 * 0.08;
            let v = s.cumulative(lower, 0.9).unwrap();
            assert!(v <= prev && v >= 0.0);
            prev = v;
        }
    }
}
