//! Exact reverse-time simulation on enumerable spaces.
//!
//! Rates `q_t(y) / q_t(x) beta(t) Q(y^d, x^d)` are frozen on each cell of a
//! fine time grid (marginal at the cell midpoint, mean rate multiplier over
//! the cell) and paths are simulated exactly under those piecewise-constant
//! rates.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::CHUNK;
use crate::ctmc::reverse::UNREACHABLE;
use crate::ctmc::{exact_marginal, RatioOrientation, TabularDistribution};
use crate::rng::{categorical, stream, unit_exponential};
use crate::space::State;
use crate::training::ForwardProcess;
use crate::{Error, Result};

/// Upper bound on `cells x states` for the frozen-rate tables.
const MAX_TABLE_ENTRIES: usize = 1 << 26;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactReverseConfig {
    /// Width of the frozen-rate cells.
    pub grid_step: f64,
    /// Time at which paths are returned.
    pub stop_at: f64,
    #[serde(skip)]
    pub orientation: RatioOrientation,
}

impl Default for ExactReverseConfig {
    fn default() -> Self {
        Self {
            grid_step: 1e-3,
            stop_at: 0.0,
            orientation: RatioOrientation::Correct,
        }
    }
}

/// `q(to) / q(from)`, or its inverse under the faulty orientation.
#[inline]
fn ratio(marginal: &[f64], from: usize, to: usize, orientation: RatioOrientation) -> f64 {
    match orientation {
        RatioOrientation::Correct => marginal[to] / marginal[from],
        RatioOrientation::Inverted if marginal[to] < UNREACHABLE => 0.0,
        RatioOrientation::Inverted => marginal[from] / marginal[to],
    }
}

struct Cell {
    length: f64,
    marginal: Vec<f64>,
    exit: Vec<f64>,
}

/// Draws `n` paths from `q_T` backwards to `cfg.stop_at` and returns their end states.
pub fn exact_reverse_simulate(
    data: &TabularDistribution,
    process: &ForwardProcess,
    n: usize,
    cfg: &ExactReverseConfig,
    seed: u64,
) -> Result<Vec<State>> {
    let space = *data.space();
    let size = space.enumerable_size()?;
    process.rate.validate_for(space.vocab())?;
    let horizon = process.schedule.horizon;
    if !(cfg.grid_step > 0.0) || !(0.0..=horizon).contains(&cfg.stop_at) {
        return Err(Error::config("reverse simulation needs a positive grid step and a stop time in [0, T]"));
    }
    let cells_count = ((horizon - cfg.stop_at) / cfg.grid_step).ceil() as usize;
    if cells_count.saturating_mul(size) > MAX_TABLE_ENTRIES {
        return Err(Error::Capacity(format!(
            "{cells_count} cells over {size} states exceed the simulation table budget"
        )));
    }
    let vocab = space.vocab();
    let dims = space.dims();
    let mut cells = Vec::with_capacity(cells_count);
    let mut upper = horizon;
    for _ in 0..cells_count {
        let lower = (upper - cfg.grid_step).max(cfg.stop_at);
        let beta = process.schedule.mean_beta(lower, upper)?;
        let marginal = exact_marginal(data, 0.5 * (lower + upper), &process.schedule, &process.rate)?.into_probs();
        let mut digits = vec![0; dims];
        let exit = (0..size)
            .map(|x| {
                if marginal[x] < UNREACHABLE {
                    return 0.0;
                }
                space.digits_into(x, &mut digits);
                let mut total = 0.0;
                for d in 0..dims {
                    let stride = space.stride(d);
                    let cur = digits[d];
                    for v in (0..vocab).filter(|&v| v != cur) {
                        let y = x + v * stride - cur * stride;
                        total += ratio(&marginal, x, y, cfg.orientation) * process.rate.entry(v, cur);
                    }
                }
                total * beta
            })
            .collect();
        cells.push(Cell {
            length: upper - lower,
            marginal,
            exit,
        });
        upper = lower;
    }
    let start = exact_marginal(data, horizon, &process.schedule, &process.rate)?;
    let start_sampler = start.sampler();

    let chunks = n.div_ceil(CHUNK);
    let out: Vec<Vec<State>> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, k as u64);
            let count = CHUNK.min(n - k * CHUNK);
            let mut digits = vec![0; dims];
            let mut weights = Vec::with_capacity(dims * vocab);
            (0..count)
                .map(|_| {
                    let mut x = start_sampler.sample_index(&mut rng);
                    let mut clock = unit_exponential(&mut rng);
                    for cell in &cells {
                        let mut left = cell.length;
                        loop {
                            let lambda = cell.exit[x];
                            if lambda * left <= clock {
                                clock -= lambda * left;
                                break;
                            }
                            left -= clock / lambda;
                            // Jump to a neighbour in proportion to its rate.
                            space.digits_into(x, &mut digits);
                            weights.clear();
                            for d in 0..dims {
                                let stride = space.stride(d);
                                for v in 0..vocab {
                                    let w = if v == digits[d] {
                                        0.0
                                    } else {
                                        let y = x + v * stride - digits[d] * stride;
                                        ratio(&cell.marginal, x, y, cfg.orientation) * process.rate.entry(v, digits[d])
                                    };
                                    weights.push(w);
                                }
                            }
                            let pick = categorical(&weights, &mut rng);
                            let (d, v) = (pick / vocab, pick % vocab);
                            x = x + v * space.stride(d) - digits[d] * space.stride(d);
                            clock = unit_exponential(&mut rng);
                        }
                    }
                    space.state_at(x)
                })
                .collect()
        })
        .collect();
    Ok(out.into_iter().flatten().collect())
}

/// Convenience for drawing from a table with a given generator.
pub fn sample_table<R: Rng + ?Sized>(table: &TabularDistribution, n: usize, rng: &mut R) -> Vec<State> {
    let sampler = table.sampler();
    (0..n).map(|_| table.space().state_at(sampler.sample_index(rng))).collect()
}
