//! Product categorical spaces `{0..C-1}^D`, Gray coding and the 2-D toy
//! benchmark densities.

pub mod gray;
pub mod toy;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use gray::{gray_decode, gray_encode};
pub use toy::{dequantize2d, quantize2d, sample_toy2d, ToyDataset, ToyDatasetSpec};

/// Largest state count the enumerating oracles accept.
pub const MAX_ENUMERABLE: usize = 1 << 24;

/// The product space `C^D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSpace {
    dims: usize,
    vocab: usize,
    #[serde(default)]
    ordinal: bool,
}

impl StateSpace {
    pub fn new(dims: usize, vocab: usize) -> Result<Self> {
        if dims == 0 {
            return Err(Error::domain("state space needs at least one dimension"));
        }
        if vocab < 2 {
            return Err(Error::domain(format!("vocabulary size {vocab} < 2")));
        }
        Ok(Self {
            dims,
            vocab,
            ordinal: false,
        })
    }

    /// Integer-ordered vocabulary `{0..C-1}`.
    pub fn ordinal(dims: usize, vocab: usize) -> Result<Self> {
        Ok(Self {
            ordinal: true,
            ..Self::new(dims, vocab)?
        })
    }

    pub fn binary(dims: usize) -> Result<Self> {
        Self::new(dims, 2)
    }

    #[inline]
    pub fn dims(&self) -> usize {
        self.dims
    }

    #[inline]
    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn is_ordinal(&self) -> bool {
        self.ordinal
    }

    /// `C^D`, or `None` on overflow.
    pub fn size(&self) -> Option<usize> {
        let mut n: usize = 1;
        for _ in 0..self.dims {
            n = n.checked_mul(self.vocab)?;
        }
        Some(n)
    }

    /// `C^D` when it is small enough to enumerate.
    pub fn enumerable_size(&self) -> Result<usize> {
        match self.size() {
            Some(n) if n <= MAX_ENUMERABLE => Ok(n),
            _ => Err(Error::Capacity(format!(
                "{}^{} states exceed the enumeration limit of 2^24",
                self.vocab, self.dims
            ))),
        }
    }

    /// Lexicographic index; dimension 0 is the most significant digit.
    pub fn index_of(&self, values: &[usize]) -> usize {
        values.iter().fold(0, |acc, &v| acc * self.vocab + v)
    }

    /// Inverse of [`StateSpace::index_of`].
    pub fn state_at(&self, mut index: usize) -> State {
        let mut values = vec![0; self.dims];
        for slot in values.iter_mut().rev() {
            *slot = index % self.vocab;
            index /= self.vocab;
        }
        State(values)
    }

    /// Writes the digits of `index` into `out` without allocating.
    pub fn digits_into(&self, mut index: usize, out: &mut [usize]) {
        for slot in out.iter_mut().rev() {
            *slot = index % self.vocab;
            index /= self.vocab;
        }
    }

    /// Place value of dimension `d` in the lexicographic index.
    pub fn stride(&self, d: usize) -> usize {
        self.vocab.pow((self.dims - 1 - d) as u32)
    }

    pub fn validate(&self, state: &State) -> Result<()> {
        if state.len() != self.dims {
            return Err(Error::domain(format!(
                "state has {} entries, space has {} dimensions",
                state.len(),
                self.dims
            )));
        }
        if let Some(&v) = state.0.iter().find(|&&v| v >= self.vocab) {
            return Err(Error::domain(format!(
                "value {v} outside vocabulary of size {}",
                self.vocab
            )));
        }
        Ok(())
    }

    /// Iterates all states in index order.
    pub fn states(&self) -> Result<impl Iterator<Item = State> + '_> {
        let n = self.enumerable_size()?;
        Ok((0..n).map(move |i| self.state_at(i)))
    }
}

/// A point of the product space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct State(pub Vec<usize>);

impl State {
    pub fn zeros(dims: usize) -> Self {
        State(vec![0; dims])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[usize] {
        &self.0
    }

    /// Copy with dimension `d` set to `value`.
    pub fn with(&self, d: usize, value: usize) -> State {
        let mut next = self.clone();
        next.0[d] = value;
        next
    }

    pub fn hamming(&self, other: &State) -> usize {
        self.0
            .iter()
            .zip(&other.0)
            .filter(|(a, b)| a != b)
            .count()
    }

    /// Digit string for vocabularies up to 10, colon-separated otherwise.
    pub fn encode(&self, vocab: usize) -> String {
        if vocab <= 10 {
            self.0
                .iter()
                .map(|&v| char::from_digit(v as u32, 10).unwrap_or('?'))
                .collect()
        } else {
            self.0
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(":")
        }
    }

    /// Inverse of [`State::encode`].
    pub fn decode(text: &str, space: &StateSpace) -> Result<State> {
        let values: Result<Vec<usize>> = if space.vocab() <= 10 {
            text.chars()
                .map(|ch| {
                    ch.to_digit(10)
                        .map(|v| v as usize)
                        .ok_or_else(|| Error::Format(format!("bad state digit {ch:?}")))
                })
                .collect()
        } else {
            text.split(':')
                .map(|s| {
                    s.parse::<usize>()
                        .map_err(|_| Error::Format(format!("bad state entry {s:?}")))
                })
                .collect()
        };
        let state = State(values?);
        space.validate(&state)?;
        Ok(state)
    }
}

impl From<Vec<usize>> for State {
    fn from(values: Vec<usize>) -> Self {
        State(values)
    }
}

/// Index of the state with dimension `d` removed, in `C^(D-1)`.
pub(crate) fn context_index(space: &StateSpace, values: &[usize], d: usize) -> usize {
    values
        .iter()
        .enumerate()
        .filter(|&(e, _)| e != d)
        .fold(0, |acc, (_, &v)| acc * space.vocab() + v)
}
