//! Energy, masked and hollow networks over one shared dense engine.

use ndarray::{Array2, Array3};

use super::mlp::{Mlp, MlpConfig, Precision, Real, TimeInjection};
use super::params::{LayoutBuilder, ParameterVector};
use super::{
    check_batch, distinct_times, Architecture, ConditionalModel, Differentiable, ModelDescriptor, ModelMode,
    OutputHead,
};
use crate::rng::seeded;
use crate::space::State;
use crate::{Error, Result};

/// A neural conditional-marginal model.
///
/// * EBM: `logits_d[c] = -f([x with x^d = c], t)` from a scalar energy network
///   with time features added to every hidden layer.
/// * Masked: one pass per dimension with `x^d` replaced by a mask token.
/// * Hollow: forward and backward causal streams over the positions; the
///   readout of position `d` combines the forward stream at `d` (inputs before
///   `d`) with the backward stream at `d` (inputs after `d`).
#[derive(Debug, Clone)]
pub struct NetworkModel {
    desc: ModelDescriptor,
    mlp: Mlp,
    params: ParameterVector,
}

/// Network input rows for a batch and the rows' time indices.
struct Encoded<F> {
    input: Array2<F>,
    row_time: Vec<usize>,
    times: Vec<f64>,
}

impl NetworkModel {
    pub fn new(desc: ModelDescriptor, seed: u64) -> Result<Self> {
        let space = desc.space;
        let (d, c) = (space.dims(), space.vocab());
        if desc.hidden.is_empty() || desc.hidden.contains(&0) {
            return Err(Error::config("networks need at least one non-empty hidden layer"));
        }
        let mut builder = LayoutBuilder::new();
        let tf = desc.time_features;
        let mlp = match desc.architecture {
            Architecture::Ebm => {
                let cfg = MlpConfig {
                    inputs: d * c,
                    hidden: desc.hidden.clone(),
                    outputs: 1,
                    injection: TimeInjection::Additive,
                    time_features: tf,
                    horizon: desc.horizon,
                };
                let masks = vec![None; desc.hidden.len() + 1];
                Mlp::new(cfg, masks, &mut builder, "")?
            }
            Architecture::Masked => {
                let cfg = MlpConfig {
                    inputs: d * (c + 1),
                    hidden: desc.hidden.clone(),
                    outputs: d * c,
                    injection: TimeInjection::Concat,
                    time_features: tf,
                    horizon: desc.horizon,
                };
                let masks = vec![None; desc.hidden.len() + 1];
                Mlp::new(cfg, masks, &mut builder, "")?
            }
            Architecture::Hollow => {
                if desc.hidden.len() < 2 {
                    return Err(Error::config(
                        "hollow network needs at least one stream layer and a combining layer",
                    ));
                }
                let (cfg, masks) = hollow_layout(d, c, &desc.hidden, tf, desc.horizon);
                Mlp::new(cfg, masks, &mut builder, "")?
            }
            other => {
                return Err(Error::config(format!("{other:?} is not a network architecture")));
            }
        };
        let mut params = builder.finish();
        mlp.init(&mut params, &mut seeded(seed));
        Ok(Self { desc, mlp, params })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    /// Network rows evaluated per state.
    fn rows_per_state(&self) -> usize {
        let space = self.desc.space;
        match self.desc.architecture {
            Architecture::Ebm => 1 + space.dims() * (space.vocab() - 1),
            Architecture::Masked => space.dims(),
            _ => 1,
        }
    }

    /// Row holding `x^d = value` among the EBM variants of `x`.
    #[inline]
    fn ebm_row(&self, x: &State, d: usize, value: usize) -> usize {
        let c = self.desc.space.vocab();
        let current = x.0[d];
        if value == current {
            0
        } else {
            1 + d * (c - 1) + if value < current { value } else { value - 1 }
        }
    }

    fn encode<F: Real>(&self, xs: &[State], ts: &[f64]) -> Encoded<F> {
        let space = self.desc.space;
        let (dims, c) = (space.dims(), space.vocab());
        let per = self.rows_per_state();
        let (times, time_of) = distinct_times(ts);
        let width = self.mlp.config().inputs;
        let mut input = Array2::<F>::zeros((xs.len() * per, width));
        let mut row_time = Vec::with_capacity(xs.len() * per);
        for (n, x) in xs.iter().enumerate() {
            let base = n * per;
            match self.desc.architecture {
                Architecture::Ebm => {
                    for r in 0..per {
                        let mut row = input.row_mut(base + r);
                        for (d, &v) in x.values().iter().enumerate() {
                            row[d * c + v] = F::one();
                        }
                    }
                    for d in 0..dims {
                        for value in (0..c).filter(|&v| v != x.0[d]) {
                            let mut row = input.row_mut(base + self.ebm_row(x, d, value));
                            row[d * c + x.0[d]] = F::zero();
                            row[d * c + value] = F::one();
                        }
                    }
                }
                Architecture::Masked => {
                    for masked in 0..dims {
                        let mut row = input.row_mut(base + masked);
                        for (d, &v) in x.values().iter().enumerate() {
                            let token = if d == masked { c } else { v };
                            row[d * (c + 1) + token] = F::one();
                        }
                    }
                }
                _ => {
                    let mut row = input.row_mut(base);
                    for (d, &v) in x.values().iter().enumerate() {
                        row[d * c + v] = F::one();
                    }
                }
            }
            row_time.extend(std::iter::repeat_n(time_of[n], per));
        }
        Encoded {
            input,
            row_time,
            times,
        }
    }

    fn decode<F: Real>(&self, xs: &[State], out: &Array2<F>) -> Array3<f64> {
        let space = self.desc.space;
        let (dims, c) = (space.dims(), space.vocab());
        let per = self.rows_per_state();
        let mut logits = Array3::zeros((xs.len(), dims, c));
        for (n, x) in xs.iter().enumerate() {
            let base = n * per;
            for d in 0..dims {
                for v in 0..c {
                    logits[[n, d, v]] = match self.desc.architecture {
                        Architecture::Ebm => -out[[base + self.ebm_row(x, d, v), 0]].to64(),
                        Architecture::Masked => out[[base + d, d * c + v]].to64(),
                        _ => out[[base, d * c + v]].to64(),
                    };
                }
            }
        }
        logits
    }

    /// Gradient with respect to network outputs given one w.r.t. logits.
    fn encode_grad<F: Real>(&self, xs: &[State], dlogits: &Array3<f64>, rows: usize) -> Array2<F> {
        let space = self.desc.space;
        let (dims, c) = (space.dims(), space.vocab());
        let per = self.rows_per_state();
        let mut d_out = Array2::<F>::zeros((rows, self.mlp.config().outputs));
        for (n, x) in xs.iter().enumerate() {
            let base = n * per;
            for d in 0..dims {
                for v in 0..c {
                    let g = dlogits[[n, d, v]];
                    match self.desc.architecture {
                        Architecture::Ebm => {
                            let r = base + self.ebm_row(x, d, v);
                            d_out[[r, 0]] = d_out[[r, 0]] - F::of(g);
                        }
                        Architecture::Masked => d_out[[base + d, d * c + v]] = F::of(g),
                        _ => d_out[[base, d * c + v]] = F::of(g),
                    }
                }
            }
        }
        d_out
    }

    fn run<F: Real>(&self, xs: &[State], ts: &[f64], head: Option<&mut OutputHead<'_>>) -> Result<(Array3<f64>, Option<(f64, Vec<f64>)>)> {
        check_batch(&self.desc.space, xs, ts)?;
        let enc = self.encode::<F>(xs, ts);
        let rows = enc.input.nrows();
        let keep = head.is_some();
        let pass = self.mlp.forward(&self.params.values, enc.input, &enc.row_time, &enc.times, keep)?;
        let logits = self.decode(xs, &pass.output);
        let Some(head) = head else {
            return Ok((logits, None));
        };
        let (loss, dlogits) = head(&logits)?;
        if dlogits.dim() != logits.dim() {
            return Err(Error::shape("loss gradient shape differs from the logits"));
        }
        let d_out = self.encode_grad::<F>(xs, &dlogits, rows);
        let mut grad = vec![0.0; self.params.len()];
        self.mlp.backward(&self.params.values, &pass, d_out, &mut grad);
        Ok((logits, Some((loss, grad))))
    }
}

/// Layer widths and connectivity masks of the hollow network.
///
/// `units[..n-1]` are per-position widths of the stream layers, `units[n-1]`
/// the per-position width of the combining layer.
fn hollow_layout(
    dims: usize,
    vocab: usize,
    units: &[usize],
    time_features: usize,
    horizon: f64,
) -> (MlpConfig, Vec<Option<Vec<bool>>>) {
    let stream = &units[..units.len() - 1];
    let combine = units[units.len() - 1];
    let mut hidden: Vec<usize> = stream.iter().map(|k| 2 * dims * k).collect();
    hidden.push(dims * combine);
    let mut masks = Vec::new();

    // Stream layer 0: forward group g sees positions p < g, backward sees p > g;
    // time features reach everything.
    let k0 = stream[0];
    let fan_in = dims * vocab + time_features;
    let fan_out = 2 * dims * k0;
    let mut m = vec![false; fan_in * fan_out];
    for i in 0..fan_in {
        for o in 0..fan_out {
            m[i * fan_out + o] = if i >= dims * vocab {
                true
            } else {
                let p = i / vocab;
                let (backward, g) = (o >= dims * k0, (o % (dims * k0)) / k0);
                if backward {
                    p > g
                } else {
                    p < g
                }
            };
        }
    }
    masks.push(Some(m));

    // Further stream layers keep each stream causal in its own direction.
    for w in stream.windows(2) {
        let (ki, ko) = (w[0], w[1]);
        let (fan_in, fan_out) = (2 * dims * ki, 2 * dims * ko);
        let mut m = vec![false; fan_in * fan_out];
        for i in 0..fan_in {
            let (bi, gi) = (i >= dims * ki, (i % (dims * ki)) / ki);
            for o in 0..fan_out {
                let (bo, go) = (o >= dims * ko, (o % (dims * ko)) / ko);
                m[i * fan_out + o] = bi == bo && if bi { gi >= go } else { gi <= go };
            }
        }
        masks.push(Some(m));
    }

    // Combining layer: position g reads both streams at g only.
    let kl = stream[stream.len() - 1];
    let (fan_in, fan_out) = (2 * dims * kl, dims * combine);
    let mut m = vec![false; fan_in * fan_out];
    for i in 0..fan_in {
        let gi = (i % (dims * kl)) / kl;
        for o in 0..fan_out {
            m[i * fan_out + o] = gi == o / combine;
        }
    }
    masks.push(Some(m));

    // Readout: position g's logits from its own combined units.
    let (fan_in, fan_out) = (dims * combine, dims * vocab);
    let mut m = vec![false; fan_in * fan_out];
    for i in 0..fan_in {
        for o in 0..fan_out {
            m[i * fan_out + o] = i / combine == o / vocab;
        }
    }
    masks.push(Some(m));

    let cfg = MlpConfig {
        inputs: dims * vocab,
        hidden,
        outputs: dims * vocab,
        injection: TimeInjection::Concat,
        time_features,
        horizon,
    };
    (cfg, masks)
}

impl ConditionalModel for NetworkModel {
    fn space(&self) -> crate::space::StateSpace {
        self.desc.space
    }

    fn mode(&self) -> ModelMode {
        self.desc.mode
    }

    fn horizon(&self) -> f64 {
        self.desc.horizon
    }

    fn logits_batch(&self, xs: &[State], ts: &[f64]) -> Result<Array3<f64>> {
        Ok(match self.desc.precision {
            Precision::F64 => self.run::<f64>(xs, ts, None)?.0,
            Precision::F32 => self.run::<f32>(xs, ts, None)?.0,
        })
    }
}

impl Differentiable for NetworkModel {
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
        self.logits_batch(xs, ts)
    }

    fn value_and_grad(&self, xs: &[State], ts: &[f64], head: &mut OutputHead<'_>) -> Result<(f64, Vec<f64>)> {
        let out = match self.desc.precision {
            Precision::F64 => self.run::<f64>(xs, ts, Some(head))?.1,
            Precision::F32 => self.run::<f32>(xs, ts, Some(head))?.1,
        };
        Ok(out.expect("head supplied"))
    }
}
