//! Conditional-marginal models.
//!
//! A [`ConditionalModel`] maps `(x, t)` to one logit vector per dimension for
//! the law of `X^d` given the other coordinates `x^{\d}`. The `d`-th vector must
//! not depend on `x^d`; every realization here guarantees that structurally
//! and [`leak_check`] probes it.

pub mod checkpoint;
pub mod exact;
pub mod gradcheck;
pub mod leak;
pub mod mlp;
pub mod network;
pub mod params;
pub mod score;
pub mod tabular;

use std::collections::HashMap;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::space::{State, StateSpace};
use crate::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use exact::ExactModel;
pub use gradcheck::{gradient_check, GradCheckReport};
pub use leak::{leak_check, LeakReport, LeakingModel};
pub use mlp::{Precision, TimeInjection};
pub use network::NetworkModel;
pub use params::{LayoutBuilder, ParamBlock, ParameterVector};
pub use score::ScoreModel;
pub use tabular::{
    ratio_via_conditional_chain, reconstruct_from_conditionals, tabular_conditionals, ConditionalTable, TabularModel,
};

/// What the per-dimension outputs approximate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    /// `q_t(X^d | x^{\d})`.
    #[default]
    NoisyMarginal,
    /// `q_{0|t}(X_0^d | x_t^{\d})`.
    Denoising,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// Energy network; conditionals from `C` evaluations per dimension.
    Ebm,
    /// Network fed with `x^d` replaced by a mask token; one pass per dimension.
    Masked,
    /// Two causal streams whose `d`-th readout never sees `x^d`; one pass.
    Hollow,
    /// One free logit vector per (dimension, context).
    Tabular,
    /// Real-valued score per dimension for ordinal spaces.
    Score,
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ebm" => Ok(Self::Ebm),
            "masked" => Ok(Self::Masked),
            "hollow" => Ok(Self::Hollow),
            "tabular" => Ok(Self::Tabular),
            "score" => Ok(Self::Score),
            other => Err(Error::config(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Everything needed to rebuild a model's structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub architecture: Architecture,
    pub space: StateSpace,
    pub mode: ModelMode,
    /// Hidden widths; for the hollow network, units per position of each
    /// stream layer followed by the units per position of the combining layer.
    pub hidden: Vec<usize>,
    pub time_features: usize,
    pub horizon: f64,
    #[serde(default)]
    pub precision: Precision,
}

impl ModelDescriptor {
    /// Defaults: EBM 3 x 256, masked 2 x 256, hollow 16/16/16 units per position.
    pub fn new(architecture: Architecture, space: StateSpace) -> Self {
        let hidden = match architecture {
            Architecture::Ebm => vec![256; 3],
            Architecture::Masked => vec![256; 2],
            Architecture::Hollow => vec![16; 3],
            Architecture::Tabular => vec![],
            Architecture::Score => vec![64; 2],
        };
        Self {
            architecture,
            space,
            mode: ModelMode::NoisyMarginal,
            hidden,
            time_features: 64,
            horizon: 1.0,
            precision: Precision::F64,
        }
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn with_mode(mut self, mode: ModelMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    pub fn with_time_features(mut self, count: usize) -> Self {
        self.time_features = count;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }
}

/// Loss callback: receives model outputs, returns the loss and its gradient
/// with respect to those outputs.
pub type OutputHead<'a> = dyn FnMut(&Array3<f64>) -> Result<(f64, Array3<f64>)> + 'a;

/// Per-dimension conditional logits, shape `N x D x C`.
pub trait ConditionalModel: Send + Sync {
    fn space(&self) -> StateSpace;

    fn mode(&self) -> ModelMode;

    /// Largest time the model accepts.
    fn horizon(&self) -> f64 {
        1.0
    }

    fn logits_batch(&self, xs: &[State], ts: &[f64]) -> Result<Array3<f64>>;

    /// `D x C` logits of one state.
    fn logits(&self, x: &State, t: f64) -> Result<Array2<f64>> {
        let all = self.logits_batch(std::slice::from_ref(x), &[t])?;
        Ok(all.index_axis_move(ndarray::Axis(0), 0))
    }

    /// `D x C` conditional probabilities of one state.
    fn conditionals(&self, x: &State, t: f64) -> Result<Array2<f64>> {
        let mut l = self.logits(x, t)?;
        for mut row in l.rows_mut() {
            softmax_in_place(row.as_slice_mut().expect("contiguous"));
        }
        Ok(l)
    }
}

/// A model with parameters and exact gradients.
pub trait Differentiable: Send + Sync {
    fn descriptor(&self) -> ModelDescriptor;

    fn parameters(&self) -> &ParameterVector;

    fn parameters_mut(&mut self) -> &mut ParameterVector;

    /// Raw outputs, shape `N x D x K` (`K = C` for conditional models).
    fn outputs(&self, xs: &[State], ts: &[f64]) -> Result<Array3<f64>>;

    /// Loss from `head` and its gradient with respect to all parameters.
    fn value_and_grad(&self, xs: &[State], ts: &[f64], head: &mut OutputHead<'_>) -> Result<(f64, Vec<f64>)>;
}

/// Conditional model that can be trained.
pub trait TrainableModel: ConditionalModel + Differentiable {}

impl<T: ConditionalModel + Differentiable> TrainableModel for T {}

/// Owned model of any architecture.
pub enum AnyModel {
    Network(NetworkModel),
    Tabular(TabularModel),
    Score(ScoreModel),
}

impl AnyModel {
    /// Builds and initializes a model from its descriptor.
    pub fn build(desc: &ModelDescriptor, seed: u64) -> Result<Self> {
        Ok(match desc.architecture {
            Architecture::Ebm | Architecture::Masked | Architecture::Hollow => {
                AnyModel::Network(NetworkModel::new(desc.clone(), seed)?)
            }
            Architecture::Tabular => AnyModel::Tabular(TabularModel::new(desc.space, desc.mode)?),
            Architecture::Score => AnyModel::Score(ScoreModel::new(desc.clone(), seed)?),
        })
    }

    pub fn as_conditional(&self) -> Option<&dyn ConditionalModel> {
        match self {
            AnyModel::Network(m) => Some(m),
            AnyModel::Tabular(m) => Some(m),
            AnyModel::Score(_) => None,
        }
    }

    pub fn as_trainable(&self) -> Option<&dyn TrainableModel> {
        match self {
            AnyModel::Network(m) => Some(m),
            AnyModel::Tabular(m) => Some(m),
            AnyModel::Score(_) => None,
        }
    }

    pub fn as_trainable_mut(&mut self) -> Option<&mut dyn TrainableModel> {
        match self {
            AnyModel::Network(m) => Some(m),
            AnyModel::Tabular(m) => Some(m),
            AnyModel::Score(_) => None,
        }
    }

    pub fn as_differentiable(&self) -> &dyn Differentiable {
        match self {
            AnyModel::Network(m) => m,
            AnyModel::Tabular(m) => m,
            AnyModel::Score(m) => m,
        }
    }

    pub fn as_differentiable_mut(&mut self) -> &mut dyn Differentiable {
        match self {
            AnyModel::Network(m) => m,
            AnyModel::Tabular(m) => m,
            AnyModel::Score(m) => m,
        }
    }
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        let u = 1.0 / v.len() as f64;
        v.fill(u);
        return;
    }
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// Log-softmax of a logit vector.
pub fn log_softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}

/// Distinct times (by bit pattern) and each row's index into them.
pub(crate) fn distinct_times(ts: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut seen: HashMap<u64, usize> = HashMap::new();
    let mut times = Vec::new();
    let index = ts
        .iter()
        .map(|&t| {
            *seen.entry(t.to_bits()).or_insert_with(|| {
                times.push(t);
                times.len() - 1
            })
        })
        .collect();
    (times, index)
}

pub(crate) fn check_batch(space: &StateSpace, xs: &[State], ts: &[f64]) -> Result<()> {
    if xs.len() != ts.len() {
        return Err(Error::shape(format!("{} states but {} times", xs.len(), ts.len())));
    }
    for x in xs {
        space.validate(x)?;
    }
    if let Some(t) = ts.iter().find(|t| !t.is_finite()) {
        return Err(Error::domain(format!("time {t} is not finite")));
    }
    Ok(())
}
