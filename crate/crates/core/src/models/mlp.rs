//! Dense networks with optional connectivity masks and reverse-mode gradients.
//!
//! Weights live in a shared `f64` [`ParameterVector`]; evaluation runs in any
//! [`Real`] precision, so long runs can use `f32` arithmetic while gradient
//! checks stay in `f64`.

use std::f64::consts::LN_10;

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{LayoutBuilder, ParameterVector};
use crate::{Error, Result};

/// Floating-point type the network can be evaluated in.
pub trait Real:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::iter::Sum
    + std::ops::AddAssign
    + std::fmt::Debug
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self;
    fn to64(self) -> f64;
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn to64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to64(self) -> f64 {
        self as f64
    }
}

/// Arithmetic used for network evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// How time features reach the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeInjection {
    /// Projected and added to every hidden pre-activation.
    Additive,
    /// Appended to the input features.
    Concat,
}

/// Sinusoidal features of `t / horizon`: `sin` and `cos` at `count / 2`
/// frequencies spaced geometrically over `[1, 1e4]`.
pub fn time_features(t: f64, horizon: f64, count: usize) -> Vec<f64> {
    let half = count / 2;
    let u = t / horizon;
    let mut out = Vec::with_capacity(count);
    for k in 0..half {
        let exponent = if half > 1 { 4.0 * k as f64 / (half - 1) as f64 } else { 0.0 };
        let freq = (exponent * LN_10).exp();
        out.push((freq * u).sin());
    }
    for k in 0..half {
        let exponent = if half > 1 { 4.0 * k as f64 / (half - 1) as f64 } else { 0.0 };
        let freq = (exponent * LN_10).exp();
        out.push((freq * u).cos());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Input width excluding concatenated time features.
    pub inputs: usize,
    pub hidden: Vec<usize>,
    pub outputs: usize,
    pub injection: TimeInjection,
    pub time_features: usize,
    pub horizon: f64,
}

#[derive(Debug, Clone)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    weight: usize,
    bias: usize,
    time: Option<usize>,
    mask: Option<Vec<bool>>,
}

/// Multilayer perceptron with ELU hidden activations and a linear readout.
#[derive(Debug, Clone)]
pub struct Mlp {
    cfg: MlpConfig,
    layers: Vec<Layer>,
}

/// Activations retained for the backward pass.
#[derive(Debug)]
pub struct ForwardPass<F> {
    pub output: Array2<F>,
    /// Input to each layer; entry `l > 0` is the ELU output of layer `l - 1`.
    inputs: Vec<Array2<F>>,
    features: Array2<F>,
    row_time: Vec<usize>,
}

impl<F> ForwardPass<F> {
    /// Input to layer `l`, available when activations were kept.
    pub fn layer_input(&self, l: usize) -> &Array2<F> {
        &self.inputs[l]
    }
}

impl Mlp {
    /// Registers the network's blocks under `prefix`.
    ///
    /// `masks[l]`, when present, is a row-major `fan_in x fan_out` connectivity
    /// pattern; for the first layer `fan_in` includes concatenated time features.
    pub fn new(cfg: MlpConfig, masks: Vec<Option<Vec<bool>>>, builder: &mut LayoutBuilder, prefix: &str) -> Result<Self> {
        if cfg.time_features % 2 != 0 {
            return Err(Error::config("time feature count must be even"));
        }
        let mut widths = vec![cfg.inputs
            + if cfg.injection == TimeInjection::Concat {
                cfg.time_features
            } else {
                0
            }];
        widths.extend(&cfg.hidden);
        widths.push(cfg.outputs);
        let n_layers = widths.len() - 1;
        if masks.len() != n_layers {
            return Err(Error::shape(format!("{} masks for {n_layers} layers", masks.len())));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (l, mask) in masks.into_iter().enumerate() {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            if let Some(m) = &mask {
                if m.len() != fan_in * fan_out {
                    return Err(Error::shape(format!("mask of layer {l} has wrong size")));
                }
            }
            let weight = builder.push(format!("{prefix}layer{l}.weight"), &[fan_in, fan_out], mask.as_deref());
            let bias = builder.push(format!("{prefix}layer{l}.bias"), &[fan_out], None);
            let hidden = l + 1 < n_layers;
            let time = (hidden && cfg.injection == TimeInjection::Additive && cfg.time_features > 0)
                .then(|| builder.push(format!("{prefix}layer{l}.time"), &[cfg.time_features, fan_out], None));
            layers.push(Layer {
                fan_in,
                fan_out,
                weight,
                bias,
                time,
                mask,
            });
        }
        Ok(Self { cfg, layers })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.cfg
    }

    /// Glorot-uniform hidden weights, zero biases and a zero readout.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParameterVector, rng: &mut R) {
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let n = layer.fan_in * layer.fan_out;
            let bound = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for i in 0..n {
                let free = layer.mask.as_ref().is_none_or(|m| m[i]);
                params.values[layer.weight + i] = if l == last || !free {
                    0.0
                } else {
                    bound * (2.0 * rng.random::<f64>() - 1.0)
                };
            }
            params.values[layer.bias..layer.bias + layer.fan_out].fill(0.0);
            if let Some(off) = layer.time {
                let tb = (6.0 / (self.cfg.time_features + layer.fan_out) as f64).sqrt();
                for v in &mut params.values[off..off + self.cfg.time_features * layer.fan_out] {
                    *v = tb * (2.0 * rng.random::<f64>() - 1.0);
                }
            }
        }
    }

    fn matrix<F: Real>(params: &[f64], offset: usize, rows: usize, cols: usize) -> Array2<F> {
        Array2::from_shape_vec(
            (rows, cols),
            params[offset..offset + rows * cols].iter().map(|&v| F::of(v)).collect(),
        )
        .expect("block shape")
    }

    fn features<F: Real>(&self, times: &[f64]) -> Array2<F> {
        let k = self.cfg.time_features;
        let mut out = Array2::zeros((times.len(), k));
        for (i, &t) in times.iter().enumerate() {
            for (j, v) in time_features(t, self.cfg.horizon, k).into_iter().enumerate() {
                out[[i, j]] = F::of(v);
            }
        }
        out
    }

    /// Evaluates the network on `x` (rows x `inputs`), where row `r` is taken
    /// at time `times[row_time[r]]`.
    pub fn forward<F: Real>(
        &self,
        params: &[f64],
        x: Array2<F>,
        row_time: &[usize],
        times: &[f64],
        keep: bool,
    ) -> Result<ForwardPass<F>> {
        if x.ncols() != self.cfg.inputs || x.nrows() != row_time.len() {
            return Err(Error::shape(format!(
                "network input is {}x{}, expected {} columns and {} rows",
                x.nrows(),
                x.ncols(),
                self.cfg.inputs,
                row_time.len()
            )));
        }
        let features: Array2<F> = self.features(times);
        let mut a = match self.cfg.injection {
            TimeInjection::Concat if self.cfg.time_features > 0 => {
                let per_row = features.select(Axis(0), row_time);
                concatenate(Axis(1), &[x.view(), per_row.view()]).expect("equal row counts")
            }
            _ => x,
        };
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        for (l, layer) in self.layers.iter().enumerate() {
            let w: Array2<F> = Self::matrix(params, layer.weight, layer.fan_in, layer.fan_out);
            let b: Array1<F> = params[layer.bias..layer.bias + layer.fan_out].iter().map(|&v| F::of(v)).collect();
            let mut z = a.dot(&w);
            z += &b;
            if let Some(off) = layer.time {
                let wt: Array2<F> = Self::matrix(params, off, self.cfg.time_features, layer.fan_out);
                let proj = features.dot(&wt);
                for (mut row, &ti) in z.rows_mut().into_iter().zip(row_time) {
                    row += &proj.row(ti);
                }
            }
            if l < last {
                z.mapv_inplace(|v| if v > F::zero() { v } else { v.exp_m1() });
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("network layer {l}"), "non-finite activation"));
            }
            if keep {
                inputs.push(a);
            }
            a = z;
        }
        Ok(ForwardPass {
            output: a,
            inputs,
            features,
            row_time: row_time.to_vec(),
        })
    }

    /// Accumulates into `grad` the gradient of `sum(d_out * output)`.
    pub fn backward<F: Real>(&self, params: &[f64], pass: &ForwardPass<F>, d_out: Array2<F>, grad: &mut [f64]) {
        assert_eq!(pass.inputs.len(), self.layers.len(), "forward pass kept no activations");
        let mut delta = d_out;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &pass.inputs[l];
            let dw = input.t().dot(&delta);
            let gw = &mut grad[layer.weight..layer.weight + layer.fan_in * layer.fan_out];
            match &layer.mask {
                Some(mask) => {
                    for ((g, v), &m) in gw.iter_mut().zip(dw.iter()).zip(mask) {
                        if m {
                            *g += v.to64();
                        }
                    }
                }
                None => gw.iter_mut().zip(dw.iter()).for_each(|(g, v)| *g += v.to64()),
            }
            let db = delta.sum_axis(Axis(0));
            for (g, v) in grad[layer.bias..layer.bias + layer.fan_out].iter_mut().zip(db.iter()) {
                *g += v.to64();
            }
            if let Some(off) = layer.time {
                let mut per_time = Array2::<F>::zeros((pass.features.nrows(), layer.fan_out));
                for (row, &ti) in delta.rows().into_iter().zip(&pass.row_time) {
                    let mut acc = per_time.row_mut(ti);
                    acc += &row;
                }
                let dwt = pass.features.t().dot(&per_time);
                for (g, v) in grad[off..off + dwt.len()].iter_mut().zip(dwt.iter()) {
                    *g += v.to64();
                }
            }
            if l > 0 {
                let w: Array2<F> = Self::matrix(params, layer.weight, layer.fan_in, layer.fan_out);
                let mut da = delta.dot(&w.t());
                // ELU'(z) is 1 for z > 0 and exp(z) = a + 1 otherwise.
                da.zip_mut_with(input, |g, &a| {
                    if a <= F::zero() {
                        *g = *g * (a + F::one());
                    }
                });
                delta = da;
            }
        }
    }

    /// Weight block of layer `l` as an `f64` view.
    pub fn weight_view<'a>(&self, params: &'a [f64], l: usize) -> ArrayView2<'a, f64> {
        let layer = &self.layers[l];
        ArrayView2::from_shape(
            (layer.fan_in, layer.fan_out),
            &params[layer.weight..layer.weight + layer.fan_in * layer.fan_out],
        )
        .expect("block shape")
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }
}
