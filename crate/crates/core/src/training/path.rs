//! Path-space objective of the learned reverse process, integrated over time.

use serde::{Deserialize, Serialize};

use super::losses::path_kl_slice;
use crate::ctmc::{exact_marginal, NoiseSchedule, RateSpec, TabularDistribution};
use crate::models::ConditionalModel;
use crate::{Error, Result};

/// Default number of trapezoid nodes.
pub const PATH_GRID_POINTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathKlReport {
    /// Objective value; equals the path KL up to model-independent terms.
    pub value: f64,
    /// Log-probabilities raised to the floor across all slices.
    pub clamped: usize,
}

/// `points` uniformly spaced times over `[t_min, T]`.
pub fn uniform_time_grid(t_min: f64, horizon: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || !(t_min >= 0.0 && t_min < horizon) {
        return Err(Error::config(format!(
            "time grid needs at least two points over a non-empty range, got {points} on [{t_min}, {horizon}]"
        )));
    }
    let h = (horizon - t_min) / (points - 1) as f64;
    Ok((0..points)
        .map(|k| if k + 1 == points { horizon } else { t_min + k as f64 * h })
        .collect())
}

/// Trapezoid integral over `grid` of the time-`t` path objective with the
/// model's conditionals and the exact marginals of `data`.
pub fn path_kl_tabular(
    model: &dyn ConditionalModel,
    data: &TabularDistribution,
    schedule: &NoiseSchedule,
    rate: &RateSpec,
    grid: &[f64],
) -> Result<PathKlReport> {
    if model.space() != *data.space() {
        return Err(Error::config("model and data spaces differ"));
    }
    let states: Vec<_> = data.space().states()?.collect();
    let mut values = Vec::with_capacity(grid.len());
    let mut clamped = 0;
    for &t in grid {
        let beta = schedule.beta(t)?;
        if !beta.is_finite() {
            return Err(Error::domain(format!("rate multiplier is infinite at t = {t}")));
        }
        let q_t = exact_marginal(data, t, schedule, rate)?;
        let logits = model.logits_batch(&states, &vec![t; states.len()])?;
        let slice = path_kl_slice(&logits, &q_t, beta, rate)?;
        clamped += slice.clamped;
        values.push(slice.value);
    }
    let value = grid
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum();
    Ok(PathKlReport { value, clamped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ExactModel, ModelMode, TabularModel};
    use crate::space::StateSpace;

    #[test]
    fn grid_endpoints() {
        let g = uniform_time_grid(1e-3, 1.0, 64).unwrap();
        assert_eq!(g.len(), 64);
        assert_eq!(g[0], 1e-3);
        assert_eq!(g[63], 1.0);
        assert!(uniform_time_grid(1.0, 1.0, 4).is_err());
    }

    #[test]
    fn uniform_case_has_no_log_term() {
        // Uniform data and uniform model: every ratio is 1, so the value is the
        // integrated total exit rate.
        let space = StateSpace::new(2, 3).unwrap();
        let data = TabularDistribution::uniform(space).unwrap();
        let model = TabularModel::new(space, ModelMode::NoisyMarginal).unwrap();
        let sched = NoiseSchedule::constant(1.0);
        let rate = RateSpec::uniform(3).unwrap();
        let grid = uniform_time_grid(0.0, 1.0, 8).unwrap();
        let r = path_kl_tabular(&model, &data, &sched, &rate, &grid).unwrap();
        assert!((r.value - 2.0 * 2.0).abs() < 1e-12);
        assert_eq!(r.clamped, 0);
        let exact = ExactModel::new(data, sched, rate.clone(), ModelMode::NoisyMarginal).unwrap();
        let e = path_kl_tabular(&exact, exact.data(), &sched, &rate, &grid).unwrap();
        assert!((e.value - r.value).abs() < 1e-12);
    }

    #[test]
    fn cosine_horizon_is_rejected() {
        let space = StateSpace::new(1, 2).unwrap();
        let data = TabularDistribution::uniform(space).unwrap();
        let model = TabularModel::new(space, ModelMode::NoisyMarginal).unwrap();
        let grid = uniform_time_grid(0.0, 1.0, 4).unwrap();
        let err = path_kl_tabular(&model, &data, &NoiseSchedule::cosine(), &RateSpec::uniform(2).unwrap(), &grid);
        assert!(matches!(err, Err(Error::Domain(_))));
    }
}
