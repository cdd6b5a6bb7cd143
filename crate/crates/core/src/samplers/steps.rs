//! Single reverse steps as per-dimension transition rows.
//!
//! Every step first produces an `N x D x C` array of rows, each a
//! distribution over the next value of one dimension, and then draws every
//! dimension independently. The row functions are what the exactness tests
//! compare against brute-force kernels.

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::models::{log_softmax, ConditionalModel, ModelMode};
use crate::rng::categorical;
use crate::space::State;
use crate::training::ForwardProcess;
use crate::{Error, Result};

/// Log-ratios beyond this are capped so rows stay finite.
const MAX_LOG_RATIO: f64 = 300.0;

/// Locally balanced weighting of a probability ratio: `g(u) = u g(1/u)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BalanceFunction {
    /// `sqrt(u)`.
    #[default]
    #[serde(rename = "sqrt")]
    Sqrt,
    /// `u / (1 + u)`.
    #[serde(rename = "t_over_1pt")]
    RatioOverOnePlus,
}

impl BalanceFunction {
    #[inline]
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Self::Sqrt => u.sqrt(),
            Self::RatioOverOnePlus => {
                if u.is_infinite() {
                    1.0
                } else {
                    u / (1.0 + u)
                }
            }
        }
    }
}

impl std::str::FromStr for BalanceFunction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt" => Ok(Self::Sqrt),
            "t_over_1pt" => Ok(Self::RatioOverOnePlus),
            other => Err(Error::config(format!("unknown balance function `{other}` (sqrt, t_over_1pt)"))),
        }
    }
}

/// `log p_t(X^d = c | x^{\d})`, converting denoising outputs through the
/// forward kernel from time 0 to `t`.
pub fn noisy_log_conditionals(
    model: &dyn ConditionalModel,
    xs: &[State],
    t: f64,
    process: &ForwardProcess,
) -> Result<Array3<f64>> {
    let mut logits = model.logits_batch(xs, &vec![t; xs.len()])?;
    let kernel = match model.mode() {
        ModelMode::NoisyMarginal => None,
        ModelMode::Denoising => Some(process.kernel(t)?),
    };
    let c = logits.dim().2;
    let mut p0 = vec![0.0; c];
    for mut lane in logits.lanes_mut(ndarray::Axis(2)) {
        let row = lane.as_slice_mut().expect("contiguous");
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|l| *l -= log_z);
        if let Some(k) = &kernel {
            p0.iter_mut().zip(row.iter()).for_each(|(p, l)| *p = l.exp());
            for (v, l) in row.iter_mut().enumerate() {
                *l = (0..c).map(|a| p0[a] * k[[a, v]]).sum::<f64>().ln();
            }
        }
    }
    Ok(logits)
}

/// Clips negative entries and rescales to sum one. A row with no mass left
/// becomes a point mass on `stay`.
pub(crate) fn clip_and_normalize(row: &mut [f64], stay: usize) {
    let mut total = 0.0;
    for v in row.iter_mut() {
        if !(*v > 0.0) {
            *v = 0.0;
        }
        total += *v;
    }
    if total > 0.0 && total.is_finite() {
        row.iter_mut().for_each(|v| *v /= total);
    } else {
        row.iter_mut().for_each(|v| *v = 0.0);
        row[stay] = 1.0;
    }
}

/// Builds rows where value `c != x^d` gets `off(n, d, c)` and the current
/// value gets the remainder, then clips and renormalizes.
fn jump_rows(log_cond: &Array3<f64>, xs: &[State], mut off: impl FnMut(usize, usize, f64) -> f64) -> Array3<f64> {
    let (n, dims, c) = log_cond.dim();
    let mut rows = Array3::zeros((n, dims, c));
    for i in 0..n {
        for d in 0..dims {
            let x = xs[i].0[d];
            let lx = log_cond[[i, d, x]];
            let mut lane = rows.slice_mut(ndarray::s![i, d, ..]);
            let row = lane.as_slice_mut().expect("contiguous");
            let mut moved = 0.0;
            for (v, slot) in row.iter_mut().enumerate() {
                if v != x {
                    let ratio = (log_cond[[i, d, v]] - lx).min(MAX_LOG_RATIO).exp();
                    *slot = off(x, v, ratio);
                    moved += *slot;
                }
            }
            row[x] = 1.0 - moved;
            clip_and_normalize(row, x);
        }
    }
    rows
}

fn check_interval(t: f64, eps: f64) -> Result<()> {
    if !(eps >= 0.0 && eps <= t) {
        return Err(Error::domain(format!("step {eps} must lie in [0, t = {t}]")));
    }
    Ok(())
}

/// Euler rows for the move `t -> t - eps`: value `c` gets
/// `eps * beta * p(c | .) / p(x^d | .) * Q(c, x^d)` with `beta` the mean rate
/// multiplier over the step.
pub fn euler_rows(
    model: &dyn ConditionalModel,
    xs: &[State],
    t: f64,
    eps: f64,
    process: &ForwardProcess,
) -> Result<Array3<f64>> {
    check_interval(t, eps)?;
    let log_cond = noisy_log_conditionals(model, xs, t, process)?;
    let beta = process.schedule.mean_beta(t - eps, t)?;
    if !beta.is_finite() {
        return Err(Error::domain(format!("rate multiplier is infinite over [{}, {t}]", t - eps)));
    }
    let rate = &process.rate;
    Ok(jump_rows(&log_cond, xs, |x, v, ratio| eps * beta * ratio * rate.entry(v, x)))
}

/// Analytical rows for `t -> t - eps`:
/// `p(c) ∝ sum_{c0} p_0(c0 | .) q_{t-eps|0}(c | c0) q_{t|t-eps}(x^d | c)`.
pub fn analytical_rows(
    model: &dyn ConditionalModel,
    xs: &[State],
    t: f64,
    eps: f64,
    process: &ForwardProcess,
) -> Result<Array3<f64>> {
    check_interval(t, eps)?;
    if model.mode() != ModelMode::Denoising {
        return Err(Error::config("analytical sampling needs a denoising model"));
    }
    let logits = model.logits_batch(xs, &vec![t; xs.len()])?;
    let sched = &process.schedule;
    let to_prev = process.rate.kernel(sched.cumulative(0.0, t - eps)?)?;
    let prev_to_now = process.rate.kernel(sched.cumulative(t - eps, t)?)?;
    let (n, dims, c) = logits.dim();
    let mut rows = Array3::zeros((n, dims, c));
    for i in 0..n {
        for d in 0..dims {
            let x = xs[i].0[d];
            let lane: Vec<f64> = (0..c).map(|v| logits[[i, d, v]]).collect();
            let p0: Vec<f64> = log_softmax(&lane).into_iter().map(f64::exp).collect();
            let mut row: Vec<f64> = (0..c)
                .map(|v| {
                    let prior: f64 = (0..c).map(|a| p0[a] * to_prev[[a, v]]).sum();
                    prior * prev_to_now[[v, x]]
                })
                .collect();
            clip_and_normalize(&mut row, x);
            for v in 0..c {
                rows[[i, d, v]] = row[v];
            }
        }
    }
    Ok(rows)
}

/// Locally balanced corrector rows at time `t`: value `c` gets
/// `h * g(p(c | .) / p(x^d | .))`.
pub fn lb_corrector_rows(
    model: &dyn ConditionalModel,
    xs: &[State],
    t: f64,
    h: f64,
    g: BalanceFunction,
    process: &ForwardProcess,
) -> Result<Array3<f64>> {
    if !(h >= 0.0 && h.is_finite()) {
        return Err(Error::domain(format!("corrector step {h} must be non-negative")));
    }
    if model.space().is_ordinal() {
        return Err(Error::config("the locally balanced corrector is for categorical spaces"));
    }
    let log_cond = noisy_log_conditionals(model, xs, t, process)?;
    Ok(jump_rows(&log_cond, xs, |_, _, ratio| h * g.apply(ratio)))
}

/// Draws one value per dimension from `rows`.
pub fn draw_from_rows<R: Rng + ?Sized>(rows: &Array3<f64>, rng: &mut R) -> Vec<State> {
    let (n, dims, _) = rows.dim();
    (0..n)
        .map(|i| {
            State(
                (0..dims)
                    .map(|d| categorical(rows.slice(ndarray::s![i, d, ..]).as_slice().expect("contiguous"), rng))
                    .collect(),
            )
        })
        .collect()
}

fn single<R: Rng + ?Sized>(rows: Result<Array3<f64>>, rng: &mut R) -> Result<State> {
    Ok(draw_from_rows(&rows?, rng).pop().expect("one row"))
}

pub fn euler_step<R: Rng + ?Sized>(
    model: &dyn ConditionalModel,
    x: &State,
    t: f64,
    eps: f64,
    process: &ForwardProcess,
    rng: &mut R,
) -> Result<State> {
    single(euler_rows(model, std::slice::from_ref(x), t, eps, process), rng)
}

pub fn analytical_step<R: Rng + ?Sized>(
    model: &dyn ConditionalModel,
    x: &State,
    t: f64,
    eps: f64,
    process: &ForwardProcess,
    rng: &mut R,
) -> Result<State> {
    single(analytical_rows(model, std::slice::from_ref(x), t, eps, process), rng)
}

pub fn lb_corrector_step<R: Rng + ?Sized>(
    model: &dyn ConditionalModel,
    x: &State,
    t: f64,
    h: f64,
    g: BalanceFunction,
    process: &ForwardProcess,
    rng: &mut R,
) -> Result<State> {
    single(lb_corrector_rows(model, std::slice::from_ref(x), t, h, g, process), rng)
}
