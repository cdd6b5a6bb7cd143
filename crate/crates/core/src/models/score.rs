//! Real-valued per-dimension scores for ordinal spaces.

use ndarray::{Array2, Array3};

use super::mlp::{Mlp, MlpConfig, Precision, Real, TimeInjection};
use super::params::{LayoutBuilder, ParameterVector};
use super::{check_batch, distinct_times, Architecture, Differentiable, ModelDescriptor, OutputHead};
use crate::rng::seeded;
use crate::space::{State, StateSpace};
use crate::{Error, Result};

/// `s_d(x, t)`, an estimate of `1/2 [log q_t(x + e_d) - log q_t(x - e_d)]`.
///
/// Neighbour ratios are read off as `q_t(x + e_d)/q_t(x) ~ exp(s_d)` and
/// `q_t(x - e_d)/q_t(x) ~ exp(-s_d)`. Inputs are the values rescaled to
/// `[-1, 1]` with time features appended.
#[derive(Debug, Clone)]
pub struct ScoreModel {
    desc: ModelDescriptor,
    mlp: Mlp,
    params: ParameterVector,
}

impl ScoreModel {
    pub fn new(desc: ModelDescriptor, seed: u64) -> Result<Self> {
        if desc.architecture != Architecture::Score {
            return Err(Error::config("score model needs the score architecture"));
        }
        if !desc.space.is_ordinal() {
            return Err(Error::config("score models need an ordinal space"));
        }
        let cfg = MlpConfig {
            inputs: desc.space.dims(),
            hidden: desc.hidden.clone(),
            outputs: desc.space.dims(),
            injection: TimeInjection::Concat,
            time_features: desc.time_features,
            horizon: desc.horizon,
        };
        let mut builder = LayoutBuilder::new();
        let mlp = Mlp::new(cfg, vec![None; desc.hidden.len() + 1], &mut builder, "")?;
        let mut params = builder.finish();
        mlp.init(&mut params, &mut seeded(seed));
        Ok(Self { desc, mlp, params })
    }

    pub fn space(&self) -> StateSpace {
        self.desc.space
    }

    /// Scores, shape `N x D`.
    pub fn scores(&self, xs: &[State], ts: &[f64]) -> Result<Array2<f64>> {
        let out = self.outputs(xs, ts)?;
        let (n, d, _) = out.dim();
        Ok(out.into_shape_with_order((n, d)).expect("trailing unit axis"))
    }

    fn run<F: Real>(
        &self,
        xs: &[State],
        ts: &[f64],
        head: Option<&mut OutputHead<'_>>,
    ) -> Result<(Array3<f64>, Option<(f64, Vec<f64>)>)> {
        let space = self.desc.space;
        check_batch(&space, xs, ts)?;
        let dims = space.dims();
        let scale = 2.0 / (space.vocab() - 1) as f64;
        let input = Array2::from_shape_fn((xs.len(), dims), |(n, d)| F::of(xs[n].0[d] as f64 * scale - 1.0));
        let (times, row_time) = distinct_times(ts);
        let pass = self.mlp.forward(&self.params.values, input, &row_time, &times, head.is_some())?;
        let out = Array3::from_shape_fn((xs.len(), dims, 1), |(n, d, _)| pass.output[[n, d]].to64());
        let Some(head) = head else {
            return Ok((out, None));
        };
        let (loss, dout) = head(&out)?;
        if dout.dim() != out.dim() {
            return Err(Error::shape("loss gradient shape differs from the scores"));
        }
        let d_out = Array2::from_shape_fn((xs.len(), dims), |(n, d)| F::of(dout[[n, d, 0]]));
        let mut grad = vec![0.0; self.params.len()];
        self.mlp.backward(&self.params.values, &pass, d_out, &mut grad);
        Ok((out, Some((loss, grad))))
    }
}

impl Differentiable for ScoreModel {
    fn descriptor(&self) -> ModelDescriptor {
        self.desc.clone()
    }

    fn parameters(&self) -> &ParameterVector {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut ParameterVector {
        &mut self.params
    }

    fn outputs(&self, xs: &[State], ts: &[f64]) -> Result<Array3<f64>> {
        Ok(match self.desc.precision {
            Precision::F64 => self.run::<f64>(xs, ts, None)?.0,
            Precision::F32 => self.run::<f32>(xs, ts, None)?.0,
        })
    }

    fn value_and_grad(&self, xs: &[State], ts: &[f64], head: &mut OutputHead<'_>) -> Result<(f64, Vec<f64>)> {
        let out = match self.desc.precision {
            Precision::F64 => self.run::<f64>(xs, ts, Some(head))?.1,
            Precision::F32 => self.run::<f32>(xs, ts, Some(head))?.1,
        };
        Ok(out.expect("head supplied"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn requires_ordinal_space() {
        let nominal = ModelDescriptor::new(Architecture::Score, StateSpace::new(2, 5).unwrap());
        assert!(ScoreModel::new(nominal, 0).is_err());
        let ordinal = ModelDescriptor::new(Architecture::Score, StateSpace::ordinal(2, 5).unwrap());
        let m = ScoreModel::new(ordinal, 0).unwrap();
        let s = m.scores(&[State(vec![0, 4])], &[0.5]).unwrap();
        assert_eq!(s.dim(), (1, 2));
        assert!(s.iter().all(|&v| v == 0.0));
    }
}
