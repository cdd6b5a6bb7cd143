//! Reverse-process generation.
//!
//! Chains start from the uniform reference law at the horizon and march down
//! a step grid with a predictor (Euler or analytical) followed by optional
//! locally balanced corrector steps. Chains are processed in chunks of
//! [`CHUNK`], each with its own random stream, so output does not depend on
//! the thread count.

pub mod oracle;
pub mod ordinal;
pub mod steps;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::models::{ConditionalModel, ModelMode};
use crate::rng::stream;
use crate::space::State;
use crate::training::ForwardProcess;
use crate::{Error, Result};

pub use oracle::{exact_reverse_simulate, sample_table, ExactReverseConfig};
pub use ordinal::{ordinal_birth_death_batch, ordinal_birth_death_step, NeighbourRatios, TableRatios};
pub use steps::{
    analytical_rows, analytical_step, draw_from_rows, euler_rows, euler_step, lb_corrector_rows, lb_corrector_step,
    noisy_log_conditionals, BalanceFunction,
};

/// Chains per random stream.
pub const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    Euler,
    Analytical,
    ExactOracle,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Self::Euler),
            "analytical" => Ok(Self::Analytical),
            "exact_oracle" => Ok(Self::ExactOracle),
            other => Err(Error::config(format!(
                "unknown sampler `{other}` (euler, analytical, exact_oracle)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepGrid {
    #[default]
    Uniform,
    /// Geometric spacing between `T` and a positive `t_min`.
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectorConfig {
    pub balance: BalanceFunction,
    pub steps_per_predictor: usize,
    /// Defaults to half the predictor step.
    pub step_size: Option<f64>,
}

impl Default for CorrectorConfig {
    fn default() -> Self {
        Self {
            balance: BalanceFunction::Sqrt,
            steps_per_predictor: 1,
            step_size: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub steps: usize,
    pub grid: StepGrid,
    /// Final time of the march.
    pub t_min: f64,
    pub corrector: Option<CorrectorConfig>,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Euler,
            steps: 1000,
            grid: StepGrid::Uniform,
            t_min: 0.0,
            corrector: None,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, horizon: f64) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("sampler needs at least one step"));
        }
        if !(self.t_min >= 0.0 && self.t_min < horizon) {
            return Err(Error::config(format!("t_min {} must lie in [0, {horizon})", self.t_min)));
        }
        if self.grid == StepGrid::Geometric && self.t_min == 0.0 {
            return Err(Error::config("a geometric grid needs a positive t_min"));
        }
        if let Some(c) = &self.corrector {
            if let Some(h) = c.step_size {
                if !(h > 0.0 && h.is_finite()) {
                    return Err(Error::config(format!("corrector step size {h} must be positive")));
                }
            }
        }
        Ok(())
    }

    /// Decreasing times from `horizon` to `t_min`, `steps + 1` entries.
    pub fn time_grid(&self, horizon: f64) -> Result<Vec<f64>> {
        self.validate(horizon)?;
        let k = self.steps as f64;
        Ok((0..=self.steps)
            .map(|i| {
                if i == 0 {
                    horizon
                } else if i == self.steps {
                    self.t_min
                } else {
                    let f = i as f64 / k;
                    match self.grid {
                        StepGrid::Uniform => horizon - f * (horizon - self.t_min),
                        StepGrid::Geometric => horizon * (self.t_min / horizon).powf(f),
                    }
                }
            })
            .collect())
    }
}

fn check_pairing(model: &dyn ConditionalModel, cfg: &SamplerConfig, process: &ForwardProcess) -> Result<()> {
    let space = model.space();
    process.rate.validate_for(space.vocab())?;
    process.schedule.validate()?;
    match cfg.kind {
        SamplerKind::Analytical if model.mode() != ModelMode::Denoising => {
            Err(Error::config("analytical sampling needs a denoising model"))
        }
        SamplerKind::ExactOracle => Err(Error::config(
            "the exact oracle sampler simulates a data table, not a model",
        )),
        _ if cfg.corrector.is_some() && space.is_ordinal() => Err(Error::config(
            "the locally balanced corrector is for categorical spaces",
        )),
        _ => Ok(()),
    }
}

fn run_chunk(
    model: &dyn ConditionalModel,
    cfg: &SamplerConfig,
    process: &ForwardProcess,
    grid: &[f64],
    count: usize,
    seed: u64,
    chunk: u64,
) -> Result<Vec<State>> {
    let space = model.space();
    let mut rng = stream(seed, chunk);
    let mut xs: Vec<State> = (0..count)
        .map(|_| State((0..space.dims()).map(|_| rng.random_range(0..space.vocab())).collect()))
        .collect();
    for w in grid.windows(2) {
        let (t, next) = (w[0], w[1]);
        let eps = t - next;
        let rows = match cfg.kind {
            SamplerKind::Analytical => analytical_rows(model, &xs, t, eps, process)?,
            _ => euler_rows(model, &xs, t, eps, process)?,
        };
        xs = draw_from_rows(&rows, &mut rng);
        if let Some(c) = &cfg.corrector {
            if next > 0.0 {
                let h = c.step_size.unwrap_or(0.5 * eps);
                for _ in 0..c.steps_per_predictor {
                    let rows = lb_corrector_rows(model, &xs, next, h, c.balance, process)?;
                    xs = draw_from_rows(&rows, &mut rng);
                }
            }
        }
    }
    Ok(xs)
}

/// Draws `n` samples from the model's reverse process.
pub fn sample_reverse(
    model: &dyn ConditionalModel,
    cfg: &SamplerConfig,
    process: &ForwardProcess,
    n: usize,
) -> Result<Vec<State>> {
    check_pairing(model, cfg, process)?;
    let horizon = process.schedule.horizon;
    let grid = cfg.time_grid(horizon)?;
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Vec<State>> = (0..chunks)
        .into_par_iter()
        .map(|k| run_chunk(model, cfg, process, &grid, CHUNK.min(n - k * CHUNK), cfg.seed, k as u64))
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}
