//! Exact probability tables over enumerable product spaces.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::space::{State, StateSpace};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"CDTABLE\0";
const FORMAT_VERSION: u32 = 1;

/// Largest table written as JSON.
const JSON_LIMIT: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularDistribution {
    space: StateSpace,
    probs: Vec<f64>,
}

impl TabularDistribution {
    /// Validates non-negativity and normalization within 1e-9.
    pub fn new(space: StateSpace, probs: Vec<f64>) -> Result<Self> {
        let n = space.enumerable_size()?;
        if probs.len() != n {
            return Err(Error::shape(format!(
                "table has {} entries, space has {n} states",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
            return Err(Error::domain(format!("invalid probability {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("probabilities sum to {total}")));
        }
        Ok(Self { space, probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(space: StateSpace, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::domain("weights must have a positive finite sum"));
        }
        Self::new(space, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(space: StateSpace) -> Result<Self> {
        let n = space.enumerable_size()?;
        Ok(Self {
            space,
            probs: vec![1.0 / n as f64; n],
        })
    }

    pub fn point_mass(space: StateSpace, state: &State) -> Result<Self> {
        space.validate(state)?;
        let mut probs = vec![0.0; space.enumerable_size()?];
        probs[space.index_of(state.values())] = 1.0;
        Ok(Self { space, probs })
    }

    /// Strictly positive random table from weights uniform in `[floor, 1]`.
    pub fn random_positive<R: Rng + ?Sized>(space: StateSpace, floor: f64, rng: &mut R) -> Result<Self> {
        let n = space.enumerable_size()?;
        let weights = (0..n).map(|_| floor + (1.0 - floor) * rng.random::<f64>()).collect();
        Self::from_weights(space, weights)
    }

    /// Product of per-dimension marginals.
    pub fn product(space: StateSpace, marginals: &[Vec<f64>]) -> Result<Self> {
        if marginals.len() != space.dims() || marginals.iter().any(|m| m.len() != space.vocab()) {
            return Err(Error::shape("one marginal of length C per dimension required"));
        }
        let n = space.enumerable_size()?;
        let mut digits = vec![0; space.dims()];
        let probs = (0..n)
            .map(|i| {
                space.digits_into(i, &mut digits);
                digits.iter().enumerate().map(|(d, &v)| marginals[d][v]).product()
            })
            .collect();
        Self::from_weights(space, probs)
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn prob(&self, state: &State) -> f64 {
        self.probs[self.space.index_of(state.values())]
    }

    /// Law of dimension `d` alone.
    pub fn marginal(&self, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.space.vocab()];
        let stride = self.space.stride(d);
        let c = self.space.vocab();
        for (i, p) in self.probs.iter().enumerate() {
            out[(i / stride) % c] += p;
        }
        out
    }

    /// Draws a state index.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        crate::rng::categorical(&self.probs, rng)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        self.space.state_at(self.sample_index(rng))
    }

    /// Cumulative table for repeated sampling by binary search.
    pub fn sampler(&self) -> TableSampler {
        let mut acc = 0.0;
        let cdf = self
            .probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        TableSampler { cdf }
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(40 + 8 * self.probs.len());
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(self.space.dims() as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.space.vocab() as u64).to_le_bytes());
        bytes.push(self.space.is_ordinal() as u8);
        bytes.extend_from_slice(&(self.probs.len() as u64).to_le_bytes());
        for p in &self.probs {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut cursor = ByteCursor { bytes: &bytes, pos: 0 };
        if cursor.take(8)? != MAGIC {
            return Err(Error::Format("not a tabular distribution file".into()));
        }
        let version = u32::from_le_bytes(cursor.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported table version {version}")));
        }
        let dims = cursor.u64()? as usize;
        let vocab = cursor.u64()? as usize;
        let ordinal = cursor.take(1)?[0] != 0;
        let len = cursor.u64()? as usize;
        let space = if ordinal {
            StateSpace::ordinal(dims, vocab)?
        } else {
            StateSpace::new(dims, vocab)?
        };
        if len != space.enumerable_size()? || cursor.remaining() != 8 * len {
            return Err(Error::Format("table payload length mismatch".into()));
        }
        let probs = (0..len)
            .map(|_| cursor.take(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(space, probs)
    }

    pub fn to_json(&self) -> Result<String> {
        if self.probs.len() > JSON_LIMIT {
            return Err(Error::Capacity(format!(
                "JSON export is limited to {JSON_LIMIT} states"
            )));
        }
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: TabularDistribution =
            serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        Self::new(raw.space, raw.probs)
    }
}

/// Inverse-CDF sampler over a fixed table.
#[derive(Debug, Clone)]
pub struct TableSampler {
    cdf: Vec<f64>,
}

impl TableSampler {
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cdf.last().expect("non-empty table");
        let u = rng.random::<f64>() * total;
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn validation() {
        let space = StateSpace::binary(2).unwrap();
        assert!(TabularDistribution::new(space, vec![0.5, 0.5, 0.0, 0.0]).is_ok());
        assert!(TabularDistribution::new(space, vec![0.5, 0.6, 0.0, 0.0]).is_err());
        assert!(TabularDistribution::new(space, vec![1.5, -0.5, 0.0, 0.0]).is_err());
        assert!(TabularDistribution::new(space, vec![1.0]).is_err());
    }

    #[test]
    fn marginals_of_a_product() {
        let space = StateSpace::new(3, 3).unwrap();
        let m = vec![vec![0.2, 0.3, 0.5], vec![0.6, 0.2, 0.2], vec![0.1, 0.1, 0.8]];
        let p = TabularDistribution::product(space, &m).unwrap();
        for (d, md) in m.iter().enumerate() {
            for (a, b) in p.marginal(d).iter().zip(md) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn binary_and_json_roundtrip() {
        let space = StateSpace::new(2, 3).unwrap();
        let p = TabularDistribution::random_positive(space, 0.1, &mut seeded(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.bin");
        p.write_binary(&path).unwrap();
        assert_eq!(TabularDistribution::read_binary(&path).unwrap(), p);
        assert_eq!(TabularDistribution::from_json(&p.to_json().unwrap()).unwrap(), p);

        std::fs::write(&path, b"garbage").unwrap();
        assert!(matches!(TabularDistribution::read_binary(&path), Err(Error::Format(_))));
        assert!(matches!(
            TabularDistribution::read_binary(&dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn sampler_frequencies() {
        let space = StateSpace::binary(2).unwrap();
        let p = TabularDistribution::new(space, vec![0.1, 0.0, 0.6, 0.3]).unwrap();
        let s = p.sampler();
        let mut rng = seeded(8);
        let mut counts = [0usize; 4];
        for _ in 0..100_000 {
            counts[s.sample_index(&mut rng)] += 1;
        }
        assert_eq!(counts[1], 0);
        assert!((counts[2] as f64 / 1e5 - 0.6).abs() < 0.01);
    }
}
