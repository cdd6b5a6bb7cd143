//! Exact singleton-conditional tables and the free-logit tabular model.

use ndarray::Array3;

use super::params::{LayoutBuilder, ParameterVector};
use super::{
    check_batch, log_softmax, Architecture, ConditionalModel, Differentiable, ModelDescriptor, ModelMode, OutputHead,
};
use crate::ctmc::TabularDistribution;
use crate::space::{context_index, State, StateSpace};
use crate::{Error, Result};

/// `pi(X^d = c | x^{\d})` for every dimension and context.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalTable {
    space: StateSpace,
    /// `probs[d][ctx * C + c]`.
    probs: Vec<Vec<f64>>,
    /// `defined[d][ctx]` is false where the context has zero mass.
    defined: Vec<Vec<bool>>,
}

impl ConditionalTable {
    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    /// Number of contexts per dimension, `C^(D-1)`.
    pub fn contexts(&self) -> usize {
        self.probs[0].len() / self.space.vocab()
    }

    /// Conditional law of `X^d` given the other coordinates of `x`, or `None`
    /// when that context has zero probability.
    pub fn conditional(&self, x: &[usize], d: usize) -> Option<&[f64]> {
        let ctx = context_index(&self.space, x, d);
        let c = self.space.vocab();
        self.defined[d][ctx].then(|| &self.probs[d][ctx * c..(ctx + 1) * c])
    }

    pub fn is_defined(&self, d: usize, ctx: usize) -> bool {
        self.defined[d][ctx]
    }

    pub fn row(&self, d: usize, ctx: usize) -> &[f64] {
        let c = self.space.vocab();
        &self.probs[d][ctx * c..(ctx + 1) * c]
    }
}

/// Normalizes every slice `q(x^{\d}, .)` of a tabular distribution.
pub fn tabular_conditionals(q: &TabularDistribution) -> Result<ConditionalTable> {
    let space = *q.space();
    space.enumerable_size()?;
    let (dims, c) = (space.dims(), space.vocab());
    let n = q.probs().len();
    let contexts = n / c;
    let mut probs = vec![vec![0.0; n]; dims];
    let mut defined = vec![vec![false; contexts]; dims];
    let mut digits = vec![0; dims];
    for (i, &p) in q.probs().iter().enumerate() {
        space.digits_into(i, &mut digits);
        for d in 0..dims {
            let ctx = context_index(&space, &digits, d);
            probs[d][ctx * c + digits[d]] = p;
        }
    }
    for d in 0..dims {
        for ctx in 0..contexts {
            let row = &mut probs[d][ctx * c..(ctx + 1) * c];
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|v| *v /= total);
                defined[d][ctx] = true;
            }
        }
    }
    Ok(ConditionalTable { space, probs, defined })
}

/// `q(y)/q(x)` from singleton conditionals alone, swapping one coordinate at a
/// time from the last dimension to the first.
pub fn ratio_via_conditional_chain(table: &ConditionalTable, x: &State, y: &State) -> Result<f64> {
    let space = table.space;
    space.validate(x)?;
    space.validate(y)?;
    // Context for dimension d: x before d, y after d.
    let mut mixed = y.0.clone();
    let mut ratio = 1.0;
    for d in 0..space.dims() {
        mixed[d] = x.0[d];
        if x.0[d] != y.0[d] {
            let cond = table
                .conditional(&mixed, d)
                .ok_or_else(|| Error::Singular(format!("undefined conditional at dimension {d}")))?;
            let (num, den) = (cond[y.0[d]], cond[x.0[d]]);
            if num == 0.0 || den == 0.0 {
                return Err(Error::Singular(format!("zero conditional at dimension {d}")));
            }
            ratio *= num / den;
        }
    }
    Ok(ratio)
}

/// Rebuilds a strictly positive distribution from its conditionals by chain
/// ratios against the all-zero state and renormalization.
pub fn reconstruct_from_conditionals(table: &ConditionalTable) -> Result<TabularDistribution> {
    let space = table.space;
    let anchor = State::zeros(space.dims());
    let weights = space
        .states()?
        .map(|y| ratio_via_conditional_chain(table, &anchor, &y))
        .collect::<Result<Vec<_>>>()?;
    TabularDistribution::from_weights(space, weights)
}

/// One free logit vector per (dimension, context); ignores time.
#[derive(Debug, Clone)]
pub struct TabularModel {
    space: StateSpace,
    mode: ModelMode,
    params: ParameterVector,
    contexts: usize,
}

impl TabularModel {
    /// All-zero logits, i.e. uniform conditionals.
    pub fn new(space: StateSpace, mode: ModelMode) -> Result<Self> {
        let contexts = space.enumerable_size()? / space.vocab();
        let mut builder = LayoutBuilder::new();
        for d in 0..space.dims() {
            builder.push(format!("logits.d{d}"), &[contexts, space.vocab()], None);
        }
        Ok(Self {
            space,
            mode,
            params: builder.finish(),
            contexts,
        })
    }

    /// Logits `ln max(pi, 1e-300)` of an exact conditional table; undefined
    /// contexts stay uniform.
    pub fn from_table(table: &ConditionalTable, mode: ModelMode) -> Result<Self> {
        let mut model = Self::new(table.space, mode)?;
        let c = table.space.vocab();
        for d in 0..table.space.dims() {
            for ctx in 0..model.contexts {
                if table.is_defined(d, ctx) {
                    let o = model.offset(d, ctx);
                    for (v, &p) in table.row(d, ctx).iter().enumerate() {
                        model.params.values[o + v] = p.max(1e-300).ln();
                    }
                }
            }
        }
        debug_assert_eq!(model.params.len(), table.space.dims() * model.contexts * c);
        Ok(model)
    }

    #[inline]
    fn offset(&self, d: usize, ctx: usize) -> usize {
        (d * self.contexts + ctx) * self.space.vocab()
    }

    /// Conditional probabilities stored in the model, as a table.
    pub fn table(&self) -> ConditionalTable {
        let c = self.space.vocab();
        let probs = (0..self.space.dims())
            .map(|d| {
                let mut out = Vec::with_capacity(self.contexts * c);
                for ctx in 0..self.contexts {
                    let o = self.offset(d, ctx);
                    out.extend(log_softmax(&self.params.values[o..o + c]).iter().map(|l| l.exp()));
                }
                out
            })
            .collect();
        ConditionalTable {
            space: self.space,
            probs,
            defined: vec![vec![true; self.contexts]; self.space.dims()],
        }
    }
}

impl ConditionalModel for TabularModel {
    fn space(&self) -> StateSpace {
        self.space
    }

    fn mode(&self) -> ModelMode {
        self.mode
    }

    fn logits_batch(&self, xs: &[State], ts: &[f64]) -> Result<Array3<f64>> {
        check_batch(&self.space, xs, ts)?;
        let (dims, c) = (self.space.dims(), self.space.vocab());
        let mut out = Array3::zeros((xs.len(), dims, c));
        for (n, x) in xs.iter().enumerate() {
            for d in 0..dims {
                let o = self.offset(d, context_index(&self.space, &x.0, d));
                for v in 0..c {
                    out[[n, d, v]] = self.params.values[o + v];
                }
            }
        }
        Ok(out)
    }
}

impl Differentiable for TabularModel {
    fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor::new(Architecture::Tabular, self.space).with_mode(self.mode)
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
        let logits = self.logits_batch(xs, ts)?;
        let (loss, dl) = head(&logits)?;
        if dl.dim() != logits.dim() {
            return Err(Error::shape("loss gradient shape differs from the logits"));
        }
        let (dims, c) = (self.space.dims(), self.space.vocab());
        let mut grad = vec![0.0; self.params.len()];
        for (n, x) in xs.iter().enumerate() {
            for d in 0..dims {
                let o = self.offset(d, context_index(&self.space, &x.0, d));
                for v in 0..c {
                    grad[o + v] += dl[[n, d, v]];
                }
            }
        }
        Ok((loss, grad))
    }
}
