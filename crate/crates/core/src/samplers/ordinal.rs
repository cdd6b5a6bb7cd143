//! Birth/death corrector for ordinal variables.

use ndarray::Array3;
use rand::Rng;
use rand_distr::{Distribution, Poisson};

use super::steps::BalanceFunction;
use crate::ctmc::reverse::UNREACHABLE;
use crate::ctmc::TabularDistribution;
use crate::models::ScoreModel;
use crate::space::{State, StateSpace};
use crate::{Error, Result};

/// Source of neighbour ratios `q_t(x + e_d) / q_t(x)` and `q_t(x - e_d) / q_t(x)`.
pub trait NeighbourRatios: Send + Sync {
    fn space(&self) -> StateSpace;

    /// `N x D x 2` array of (up, down) ratios; a missing neighbour gives 0.
    fn neighbour_ratios(&self, xs: &[State], t: f64) -> Result<Array3<f64>>;
}

impl NeighbourRatios for ScoreModel {
    fn space(&self) -> StateSpace {
        ScoreModel::space(self)
    }

    /// `exp(s)` upward and `exp(-s)` downward.
    fn neighbour_ratios(&self, xs: &[State], t: f64) -> Result<Array3<f64>> {
        let scores = self.scores(xs, &vec![t; xs.len()])?;
        let c = self.space().vocab();
        let (n, dims) = scores.dim();
        let mut out = Array3::zeros((n, dims, 2));
        for i in 0..n {
            for d in 0..dims {
                let s = scores[[i, d]];
                let x = xs[i].0[d];
                out[[i, d, 0]] = if x + 1 < c { s.exp() } else { 0.0 };
                out[[i, d, 1]] = if x > 0 { (-s).exp() } else { 0.0 };
            }
        }
        Ok(out)
    }
}

/// Exact ratios of a fixed table.
#[derive(Debug, Clone)]
pub struct TableRatios {
    pub table: TabularDistribution,
}

impl NeighbourRatios for TableRatios {
    fn space(&self) -> StateSpace {
        *self.table.space()
    }

    fn neighbour_ratios(&self, xs: &[State], _t: f64) -> Result<Array3<f64>> {
        let space = self.space();
        let c = space.vocab();
        let mut out = Array3::zeros((xs.len(), space.dims(), 2));
        for (i, x) in xs.iter().enumerate() {
            space.validate(x)?;
            let here = self.table.prob(x);
            if here < UNREACHABLE {
                continue;
            }
            for d in 0..space.dims() {
                let v = x.0[d];
                if v + 1 < c {
                    out[[i, d, 0]] = self.table.prob(&x.with(d, v + 1)) / here;
                }
                if v > 0 {
                    out[[i, d, 1]] = self.table.prob(&x.with(d, v - 1)) / here;
                }
            }
        }
        Ok(out)
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<i64> {
    if mean <= 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean).map_err(|e| Error::numeric("birth/death corrector", e.to_string()))?;
    Ok(dist.sample(rng) as i64)
}

/// Moves every dimension by `N_up - N_down` with independent Poisson counts of
/// means `h g(r_up)` and `h g(r_down)`, clamped to the support.
pub fn ordinal_birth_death_batch<R: Rng + ?Sized>(
    ratios: &dyn NeighbourRatios,
    xs: &[State],
    t: f64,
    h: f64,
    g: BalanceFunction,
    rng: &mut R,
) -> Result<Vec<State>> {
    let space = ratios.space();
    if !space.is_ordinal() {
        return Err(Error::config("the birth/death corrector needs an ordinal space"));
    }
    if !(h >= 0.0 && h.is_finite()) {
        return Err(Error::domain(format!("corrector step {h} must be non-negative")));
    }
    if h == 0.0 {
        return Ok(xs.to_vec());
    }
    let r = ratios.neighbour_ratios(xs, t)?;
    let top = space.vocab() as i64 - 1;
    let mut out = Vec::with_capacity(xs.len());
    for (i, x) in xs.iter().enumerate() {
        let mut next = x.clone();
        for d in 0..space.dims() {
            let up = poisson(h * g.apply(r[[i, d, 0]]), rng)?;
            let down = poisson(h * g.apply(r[[i, d, 1]]), rng)?;
            next.0[d] = (x.0[d] as i64 + up - down).clamp(0, top) as usize;
        }
        out.push(next);
    }
    Ok(out)
}

pub fn ordinal_birth_death_step<R: Rng + ?Sized>(
    ratios: &dyn NeighbourRatios,
    x: &State,
    t: f64,
    h: f64,
    g: BalanceFunction,
    rng: &mut R,
) -> Result<State> {
    Ok(ordinal_birth_death_batch(ratios, std::slice::from_ref(x), t, h, g, rng)?
        .pop()
        .expect("one state"))
}
