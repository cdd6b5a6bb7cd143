//! Training objectives, time sampling and the optimization loop.

pub mod adam;
pub mod losses;
pub mod ordinal;
pub mod path;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ctmc::{exact_marginal, forward_sample, NoiseSchedule, RateSpec, TabularDistribution};
use crate::models::{AnyModel, Architecture, ModelMode};
use crate::rng::{stream, SimRng};
use crate::space::{State, StateSpace};
use crate::{Error, Result};

pub use adam::{Adam, AdamConfig};
pub use losses::{
    ce_observed, ce_soft, conditional_entropy, conditional_kl, exact_objective, l2_observed, l2_soft, l2_term,
    path_kl_slice, x0_ce_observed, x0_marginal_transform, ExactObjective, PathSlice,
};
pub use ordinal::{ordinal_score_head, OrdinalKernelSpec};
pub use path::{path_kl_tabular, uniform_time_grid, PathKlReport, PATH_GRID_POINTS};

/// Where clean training states come from.
pub trait DataSource: Send + Sync {
    fn space(&self) -> StateSpace;

    fn sample(&self, rng: &mut SimRng) -> State;

    /// Exact table, when the data law is known in closed form.
    fn table(&self) -> Option<&TabularDistribution> {
        None
    }
}

/// Draws from a tabular distribution.
#[derive(Debug, Clone)]
pub struct TableSource {
    table: TabularDistribution,
    sampler: crate::ctmc::TableSampler,
}

impl TableSource {
    pub fn new(table: TabularDistribution) -> Self {
        let sampler = table.sampler();
        Self { table, sampler }
    }
}

impl DataSource for TableSource {
    fn space(&self) -> StateSpace {
        *self.table.space()
    }

    fn sample(&self, rng: &mut SimRng) -> State {
        self.table.space().state_at(self.sampler.sample_index(rng))
    }

    fn table(&self) -> Option<&TabularDistribution> {
        Some(&self.table)
    }
}

/// The forward corruption process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardProcess {
    pub schedule: NoiseSchedule,
    pub rate: RateSpec,
}

impl ForwardProcess {
    /// Uniform rate over `vocab` values under `schedule`.
    pub fn uniform(vocab: usize, schedule: NoiseSchedule) -> Result<Self> {
        Ok(Self {
            schedule,
            rate: RateSpec::uniform(vocab)?,
        })
    }

    /// Per-dimension kernel from time 0 to `t`.
    pub fn kernel(&self, t: f64) -> Result<ndarray::Array2<f64>> {
        self.rate.kernel(self.schedule.cumulative(0.0, t)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CeSimplified,
    CeOriginalTabular,
    L2Ratio,
    L2RatioSimplified,
    X0Ce,
    OrdinalScore,
    PathKlTabular,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::CeSimplified => "ce_simplified",
            LossKind::CeOriginalTabular => "ce_original_tabular",
            LossKind::L2Ratio => "l2_ratio",
            LossKind::L2RatioSimplified => "l2_ratio_simplified",
            LossKind::X0Ce => "x0_ce",
            LossKind::OrdinalScore => "ordinal_score",
            LossKind::PathKlTabular => "path_kl_tabular",
        }
    }

    /// Whether each step needs the exact data table.
    pub fn is_tabular(self) -> bool {
        matches!(self, LossKind::CeOriginalTabular | LossKind::L2Ratio | LossKind::PathKlTabular)
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ce" | "ce_simplified" => LossKind::CeSimplified,
            "ce_original_tabular" => LossKind::CeOriginalTabular,
            "l2_ratio" => LossKind::L2Ratio,
            "l2_ratio_simplified" | "l2" => LossKind::L2RatioSimplified,
            "x0_ce" => LossKind::X0Ce,
            "ordinal_score" => LossKind::OrdinalScore,
            "path_kl_tabular" => LossKind::PathKlTabular,
            other => return Err(Error::config(format!("unknown loss {other:?}"))),
        })
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `lambda(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeWeight {
    Constant { value: f64 },
    /// `scale * (t / T)^exponent`.
    Power { scale: f64, exponent: f64 },
}

impl Default for TimeWeight {
    fn default() -> Self {
        TimeWeight::Constant { value: 1.0 }
    }
}

impl TimeWeight {
    pub fn at(&self, t: f64, horizon: f64) -> f64 {
        match *self {
            TimeWeight::Constant { value } => value,
            TimeWeight::Power { scale, exponent } => scale * (t / horizon).powf(exponent),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            TimeWeight::Constant { value } => value > 0.0 && value.is_finite(),
            TimeWeight::Power { scale, exponent } => scale > 0.0 && scale.is_finite() && exponent.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config("time weight must be positive and finite"))
        }
    }
}

/// Lower end of the training time range.
pub const DEFAULT_T_MIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub time_weight: TimeWeight,
    pub t_min: f64,
    /// Upper end of the time range; the horizon when absent.
    pub t_max: Option<f64>,
    pub seed: u64,
    pub eval_every: usize,
    /// Kernel for the ordinal score loss.
    pub ordinal: Option<OrdinalKernelSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::CeSimplified,
            steps: 1000,
            batch_size: 128,
            optimizer: AdamConfig::new(1e-4),
            time_weight: TimeWeight::default(),
            t_min: DEFAULT_T_MIN,
            t_max: None,
            seed: 0,
            eval_every: 100,
            ordinal: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, horizon: f64) -> Result<()> {
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::config("batch size and logging interval must be positive"));
        }
        self.optimizer.validate()?;
        self.time_weight.validate()?;
        let t_max = self.t_max.unwrap_or(horizon);
        if !(self.t_min >= 0.0 && self.t_min <= t_max && t_max <= horizon) {
            return Err(Error::config(format!(
                "time range [{}, {t_max}] must lie inside [0, {horizon}]",
                self.t_min
            )));
        }
        if let Some(k) = &self.ordinal {
            k.validate()?;
        }
        Ok(())
    }
}

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTuple {
    pub x0: State,
    pub t: f64,
    pub xt: State,
    pub weight: f64,
}

/// `t ~ U(t_min, t_max)`, `x0 ~ data`, `x_t ~ q_{t|0}(. | x0)`.
pub fn sample_training_tuple<R: Rng + ?Sized>(
    data: &dyn DataSource,
    process: &ForwardProcess,
    t_range: (f64, f64),
    weight: &TimeWeight,
    rng: &mut R,
) -> Result<TrainingTuple> {
    let mut inner = crate::rng::seeded(rng.random());
    let x0 = data.sample(&mut inner);
    let t = draw_time(t_range, rng);
    let xt = forward_sample(&x0, 0.0, t, &process.schedule, &process.rate, rng)?;
    Ok(TrainingTuple {
        x0,
        t,
        xt,
        weight: weight.at(t, process.schedule.horizon),
    })
}

fn draw_time<R: Rng + ?Sized>((lo, hi): (f64, f64), rng: &mut R) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// One logged row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    /// Mean training loss since the previous record.
    pub loss: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<MetricRecord>,
}

impl TrainLog {
    /// Writes `step,loss,wall_ms` after `#`-prefixed comment lines. With
    /// `include_wall` false the wall column is written as 0, making reruns
    /// byte-identical.
    pub fn write_csv(&self, path: &Path, comments: &[String], include_wall: bool) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        for c in comments {
            writeln!(out, "# {c}").map_err(io)?;
        }
        writeln!(out, "step,loss,wall_ms").map_err(io)?;
        for r in &self.records {
            let wall = if include_wall { r.wall_ms } else { 0 };
            writeln!(out, "{},{},{}", r.step, r.loss, wall).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

fn at_step(step: usize, err: Error) -> Error {
    match err {
        Error::Numeric { location, detail } => Error::Numeric {
            location: format!("training step {step}: {location}"),
            detail,
        },
        other => other,
    }
}

/// Loss and parameter gradient of one optimization step.
fn step_loss(
    cfg: &TrainConfig,
    process: &ForwardProcess,
    data: &dyn DataSource,
    model: &AnyModel,
    rng: &mut SimRng,
) -> Result<(f64, Vec<f64>)> {
    let horizon = process.schedule.horizon;
    let t_range = (cfg.t_min, cfg.t_max.unwrap_or(horizon));
    if cfg.loss.is_tabular() {
        let table = data
            .table()
            .ok_or_else(|| Error::config(format!("{} needs an exact data table", cfg.loss)))?;
        let trainable = model
            .as_trainable()
            .ok_or_else(|| Error::config("loss needs a conditional model"))?;
        let t = draw_time(t_range, rng);
        let q_t = exact_marginal(table, t, &process.schedule, &process.rate)?;
        let lambda = cfg.time_weight.at(t, horizon);
        let (loss, mut grad) = match cfg.loss {
            LossKind::CeOriginalTabular => exact_objective(trainable, &q_t, t, ExactObjective::CeOriginal)?,
            LossKind::L2Ratio => exact_objective(trainable, &q_t, t, ExactObjective::L2Original)?,
            _ => {
                let beta = process.schedule.beta(t)?;
                if !beta.is_finite() {
                    return Err(Error::domain(format!("rate multiplier is infinite at t = {t}")));
                }
                let states: Vec<State> = q_t.space().states()?.collect();
                let ts = vec![t; states.len()];
                let mut head = |l: &Array3<f64>| {
                    let s = path_kl_slice(l, &q_t, beta, &process.rate)?;
                    Ok((s.value, s.grad))
                };
                trainable.value_and_grad(&states, &ts, &mut head)?
            }
        };
        grad.iter_mut().for_each(|g| *g *= lambda);
        return Ok((lambda * loss, grad));
    }

    let n = cfg.batch_size;
    if cfg.loss == LossKind::OrdinalScore {
        let kernel = cfg
            .ordinal
            .ok_or_else(|| Error::config("ordinal score loss needs an ordinal kernel"))?;
        if kernel.support != data.space().vocab() {
            return Err(Error::config("ordinal kernel support must equal the vocabulary size"));
        }
        let mut x0s = Vec::with_capacity(n);
        let mut xts = Vec::with_capacity(n);
        let mut ts = Vec::with_capacity(n);
        let mut ws = Vec::with_capacity(n);
        for _ in 0..n {
            let mut inner = crate::rng::seeded(rng.random());
            let x0 = data.sample(&mut inner);
            let t = draw_time(t_range, rng);
            xts.push(kernel.sample(&x0, t, rng));
            ws.push(cfg.time_weight.at(t, horizon) / n as f64);
            x0s.push(x0);
            ts.push(t);
        }
        let mut head = |s: &Array3<f64>| ordinal_score_head(s, &x0s, &xts, &ts, &ws, &kernel);
        return model.as_differentiable().value_and_grad(&xts, &ts, &mut head);
    }

    let tuples = (0..n)
        .map(|_| sample_training_tuple(data, process, t_range, &cfg.time_weight, rng))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<State> = tuples.iter().map(|b| b.xt.clone()).collect();
    let ts: Vec<f64> = tuples.iter().map(|b| b.t).collect();
    let ws: Vec<f64> = tuples.iter().map(|b| b.weight / n as f64).collect();
    let diff = model.as_differentiable();
    match cfg.loss {
        LossKind::CeSimplified => diff.value_and_grad(&xs, &ts, &mut |l| ce_observed(l, &xs, &ws)),
        LossKind::L2RatioSimplified => diff.value_and_grad(&xs, &ts, &mut |l| l2_observed(l, &xs, &ws)),
        LossKind::X0Ce => {
            losses::require_mode(diff.descriptor().mode, ModelMode::Denoising, "x0_ce")?;
            let kernels = ts.iter().map(|&t| process.kernel(t)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&ndarray::Array2<f64>> = kernels.iter().collect();
            diff.value_and_grad(&xs, &ts, &mut |l| x0_ce_observed(l, &xs, &refs, &ws))
        }
        _ => unreachable!("tabular and ordinal losses handled above"),
    }
}

/// Runs `cfg.steps` Adam steps on `model`. Step `k` draws its batch from
/// stream `k` of the configured seed, so runs are reproducible.
pub fn train(cfg: &TrainConfig, process: &ForwardProcess, data: &dyn DataSource, model: &mut AnyModel) -> Result<TrainLog> {
    let desc = model.as_differentiable().descriptor();
    cfg.validate(process.schedule.horizon)?;
    if desc.space != data.space() {
        return Err(Error::config("model and data spaces differ"));
    }
    process.rate.validate_for(desc.space.vocab())?;
    match (cfg.loss, desc.architecture) {
        (LossKind::OrdinalScore, Architecture::Score) => {}
        (LossKind::OrdinalScore, _) | (_, Architecture::Score) => {
            return Err(Error::config("the ordinal score loss pairs with the score architecture only"));
        }
        _ => {}
    }
    if cfg.loss == LossKind::X0Ce {
        losses::require_mode(desc.mode, ModelMode::Denoising, "x0_ce")?;
    }
    let mut opt = Adam::new(cfg.optimizer, model.as_differentiable().parameters().len())?;
    let mut log = TrainLog::default();
    let start = Instant::now();
    let mut window = (0.0, 0usize);
    for step in 0..cfg.steps {
        let mut rng = stream(cfg.seed, step as u64);
        let (loss, mut grad) = step_loss(cfg, process, data, model, &mut rng).map_err(|e| at_step(step, e))?;
        if !loss.is_finite() {
            return Err(Error::numeric(format!("training step {step}"), format!("loss is {loss}")));
        }
        let params = model.as_differentiable_mut().parameters_mut();
        params.mask_gradient(&mut grad);
        opt.step(params, &grad).map_err(|e| at_step(step, e))?;
        window.0 += loss;
        window.1 += 1;
        if (step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps {
            log.records.push(MetricRecord {
                step: step + 1,
                loss: window.0 / window.1 as f64,
                wall_ms: start.elapsed().as_millis() as u64,
            });
            window = (0.0, 0);
        }
    }
    Ok(log)
}
