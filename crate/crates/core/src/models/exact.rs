//! Oracle model: exact conditionals of the forward marginals of a table.

use std::sync::{Arc, Mutex};

use ndarray::Array3;

use super::{check_batch, ConditionalModel, ModelMode};
use crate::ctmc::{apply_kernel_dims, NoiseSchedule, RateSpec, TabularDistribution};
use crate::space::{State, StateSpace};
use crate::Result;

const CACHE_SLOTS: usize = 16;

/// Log-probabilities floor for unreachable entries.
const LOG_FLOOR: f64 = 1e-300;

/// Exact `q_t(X^d | x^{\d})` or `q_{0|t}(X_0^d | x_t^{\d})` of a data table
/// pushed through the forward process.
///
/// Noisy-marginal logits are `ln q_t(x with x^d = c)`. Denoising logits for
/// dimension `d` are `ln J_d`, where `J_d` is the data table with the forward
/// kernel applied to every dimension except `d`: position `d` then holds the
/// clean value and the others the noisy context.
pub struct ExactModel {
    data: TabularDistribution,
    schedule: NoiseSchedule,
    rate: RateSpec,
    mode: ModelMode,
    cache: Mutex<Vec<(u64, Arc<Vec<Vec<f64>>>)>>,
}

impl std::fmt::Debug for ExactModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExactModel")
            .field("space", self.data.space())
            .field("mode", &self.mode)
            .finish()
    }
}

impl ExactModel {
    pub fn new(data: TabularDistribution, schedule: NoiseSchedule, rate: RateSpec, mode: ModelMode) -> Result<Self> {
        schedule.validate()?;
        rate.validate_for(data.space().vocab())?;
        Ok(Self {
            data,
            schedule,
            rate,
            mode,
            cache: Mutex::new(Vec::new()),
        })
    }

    pub fn data(&self) -> &TabularDistribution {
        &self.data
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn rate(&self) -> &RateSpec {
        &self.rate
    }

    /// Tables for time `t`: one entry (`q_t`) in noisy mode, `D` in denoising mode.
    fn tables(&self, t: f64) -> Result<Arc<Vec<Vec<f64>>>> {
        let key = t.to_bits();
        if let Some((_, hit)) = self.cache.lock().expect("cache lock").iter().find(|(k, _)| *k == key) {
            return Ok(hit.clone());
        }
        let space = *self.data.space();
        let kernel = self.rate.kernel(self.schedule.cumulative(0.0, t)?)?;
        let tables = match self.mode {
            ModelMode::NoisyMarginal => {
                let all: Vec<usize> = (0..space.dims()).collect();
                vec![apply_kernel_dims(self.data.probs(), &space, &kernel, &all)]
            }
            ModelMode::Denoising => (0..space.dims())
                .map(|d| {
                    let others: Vec<usize> = (0..space.dims()).filter(|&e| e != d).collect();
                    apply_kernel_dims(self.data.probs(), &space, &kernel, &others)
                })
                .collect(),
        };
        let tables = Arc::new(tables);
        let mut cache = self.cache.lock().expect("cache lock");
        if cache.len() >= CACHE_SLOTS {
            cache.remove(0);
        }
        cache.push((key, tables.clone()));
        Ok(tables)
    }

    /// Exact `q_t` as a distribution.
    pub fn marginal(&self, t: f64) -> Result<TabularDistribution> {
        crate::ctmc::exact_marginal(&self.data, t, &self.schedule, &self.rate)
    }
}

impl ConditionalModel for ExactModel {
    fn space(&self) -> StateSpace {
        *self.data.space()
    }

    fn mode(&self) -> ModelMode {
        self.mode
    }

    fn horizon(&self) -> f64 {
        self.schedule.horizon
    }

    fn logits_batch(&self, xs: &[State], ts: &[f64]) -> Result<Array3<f64>> {
        let space = *self.data.space();
        check_batch(&space, xs, ts)?;
        let (dims, c) = (space.dims(), space.vocab());
        let mut out = Array3::zeros((xs.len(), dims, c));
        let mut current: Option<(u64, Arc<Vec<Vec<f64>>>)> = None;
        for (n, (x, &t)) in xs.iter().zip(ts).enumerate() {
            let tables = match &current {
                Some((k, tab)) if *k == t.to_bits() => tab.clone(),
                _ => {
                    let tab = self.tables(t)?;
                    current = Some((t.to_bits(), tab.clone()));
                    tab
                }
            };
            let base = space.index_of(&x.0);
            for d in 0..dims {
                let table = &tables[if tables.len() == 1 { 0 } else { d }];
                let stride = space.stride(d);
                let start = base - x.0[d] * stride;
                for v in 0..c {
                    out[[n, d, v]] = table[start + v * stride].max(LOG_FLOOR).ln();
                }
            }
        }
        Ok(out)
    }
}
