//! Sample-quality metrics: exponential-Hamming MMD and total variation.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctmc::TabularDistribution;
use crate::rng::stream;
use crate::space::{State, StateSpace};
use crate::training::DataSource;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MmdEstimator {
    #[default]
    Biased,
    Unbiased,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdConfig {
    pub bandwidth: f64,
    pub estimator: MmdEstimator,
    pub repeats: usize,
    /// Divide the Hamming distance by the dimension before the bandwidth.
    pub normalized: bool,
}

impl Default for MmdConfig {
    fn default() -> Self {
        Self {
            bandwidth: 0.1,
            estimator: MmdEstimator::Biased,
            repeats: 10,
            normalized: true,
        }
    }
}

impl MmdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::config(format!("bandwidth {} must be positive", self.bandwidth)));
        }
        if self.repeats == 0 {
            return Err(Error::config("at least one repeat is needed"));
        }
        Ok(())
    }

    /// `k` as a function of the Hamming distance `0..=dims`.
    fn kernel_table(&self, dims: usize) -> Vec<f64> {
        let scale = if self.normalized { dims as f64 } else { 1.0 };
        (0..=dims).map(|h| (-(h as f64) / scale / self.bandwidth).exp()).collect()
    }
}

/// States packed into bit words so Hamming distances are popcounts.
///
/// Binary values are stored one bit per dimension; larger vocabularies are
/// one-hot coded, where every differing dimension flips two bits.
struct Packed {
    words: Vec<u64>,
    per: usize,
    halve: bool,
}

impl Packed {
    fn new(states: &[State], space: &StateSpace) -> Self {
        let binary = space.vocab() == 2;
        let bits = if binary { space.dims() } else { space.dims() * space.vocab() };
        let per = bits.div_ceil(64);
        let mut words = vec![0u64; per * states.len()];
        for (i, s) in states.iter().enumerate() {
            let row = &mut words[i * per..(i + 1) * per];
            for (d, &v) in s.0.iter().enumerate() {
                let bit = if binary {
                    if v == 0 {
                        continue;
                    }
                    d
                } else {
                    d * space.vocab() + v
                };
                row[bit / 64] |= 1 << (bit % 64);
            }
        }
        Self {
            words,
            per,
            halve: !binary,
        }
    }

    fn len(&self) -> usize {
        self.words.len() / self.per.max(1)
    }

    #[inline]
    fn hamming(&self, i: usize, other: &Packed, j: usize) -> usize {
        let a = &self.words[i * self.per..(i + 1) * self.per];
        let b = &other.words[j * other.per..(j + 1) * other.per];
        let bits: u32 = a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum();
        if self.halve {
            bits as usize / 2
        } else {
            bits as usize
        }
    }
}

/// Sum of `k(x_i, y_j)` over all pairs, optionally skipping `i == j`.
fn kernel_sum(a: &Packed, b: &Packed, table: &[f64], skip_diagonal: bool) -> f64 {
    (0..a.len())
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..b.len() {
                if !(skip_diagonal && i == j) {
                    acc += table[a.hamming(i, b, j)];
                }
            }
            acc
        })
        .sum()
}

/// MMD² between two sample sets under `k(x, y) = exp(-H(x, y) / D / bandwidth)`
/// (or `exp(-H / bandwidth)` when not normalized).
pub fn mmd_exp_hamming(xs: &[State], ys: &[State], space: &StateSpace, cfg: &MmdConfig) -> Result<f64> {
    cfg.validate()?;
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::domain("MMD needs non-empty sample sets"));
    }
    for s in xs.iter().chain(ys) {
        space.validate(s)?;
    }
    let table = cfg.kernel_table(space.dims());
    let (px, py) = (Packed::new(xs, space), Packed::new(ys, space));
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let xy = kernel_sum(&px, &py, &table, false) / (n * m);
    Ok(match cfg.estimator {
        MmdEstimator::Biased => {
            kernel_sum(&px, &px, &table, false) / (n * n) + kernel_sum(&py, &py, &table, false) / (m * m) - 2.0 * xy
        }
        MmdEstimator::Unbiased => {
            if xs.len() < 2 || ys.len() < 2 {
                return Err(Error::domain("unbiased MMD needs at least two samples per set"));
            }
            kernel_sum(&px, &px, &table, true) / (n * (n - 1.0)) + kernel_sum(&py, &py, &table, true) / (m * (m - 1.0))
                - 2.0 * xy
        }
    })
}

/// `1/2 sum |p - q|`.
pub fn tv_distance(p: &TabularDistribution, q: &TabularDistribution) -> Result<f64> {
    if p.space() != q.space() {
        return Err(Error::domain("total variation needs distributions over the same space"));
    }
    Ok(0.5 * p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Normalized counts of `samples`.
pub fn empirical_distribution(samples: &[State], space: &StateSpace) -> Result<TabularDistribution> {
    let n = space.enumerable_size()?;
    if samples.is_empty() {
        return Err(Error::domain("empirical distribution of no samples"));
    }
    let mut counts = vec![0.0; n];
    for s in samples {
        space.validate(s)?;
        counts[space.index_of(&s.0)] += 1.0;
    }
    TabularDistribution::from_weights(*space, counts)
}

/// Named metrics plus run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metrics: BTreeMap<String, f64>,
    /// MMD² of each repeat.
    pub per_repeat: Vec<f64>,
    pub metadata: BTreeMap<String, String>,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        if let Some((k, v)) = self.metrics.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::numeric("metrics report", format!("{k} = {v}")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// `repeat,mmd` rows followed by `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            out.push_str(&format!("# {k}: {v}\n"));
        }
        out.push_str("repeat,mmd\n");
        for (i, v) in self.per_repeat.iter().enumerate() {
            out.push_str(&format!("{i},{v}\n"));
        }
        out.push_str("metric,value\n");
        for (k, v) in &self.metrics {
            out.push_str(&format!("{k},{v}\n"));
        }
        out
    }

    pub fn write(&self, json: &Path, csv: &Path) -> Result<()> {
        self.validate()?;
        std::fs::write(json, self.to_json()?).map_err(|e| Error::io(json, e))?;
        std::fs::write(csv, self.to_csv()).map_err(|e| Error::io(csv, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mmd: MmdConfig,
    pub samples_per_repeat: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mmd: MmdConfig::default(),
            samples_per_repeat: 4000,
            seed: 0,
        }
    }
}

/// Mean and standard error.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per repeat, draws `samples_per_repeat` states from `generate(count, seed)`
/// and as many data states, and reports the MMD mean and standard error.
///
/// Repeat `r` uses generator seed `stream(seed, 2r)` and data stream
/// `stream(seed, 2r + 1)`.
pub fn evaluate_run(
    generate: &mut dyn FnMut(usize, u64) -> Result<Vec<State>>,
    data: &dyn DataSource,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    cfg.mmd.validate()?;
    let space = data.space();
    let n = cfg.samples_per_repeat;
    if n == 0 {
        return Err(Error::config("samples per repeat must be positive"));
    }
    let mut per_repeat = Vec::with_capacity(cfg.mmd.repeats);
    let mut tvs = Vec::new();
    for r in 0..cfg.mmd.repeats as u64 {
        let model_seed = rand::Rng::random::<u64>(&mut stream(cfg.seed, 2 * r));
        let samples = generate(n, model_seed)?;
        let mut rng = stream(cfg.seed, 2 * r + 1);
        let reference: Vec<State> = (0..n).map(|_| data.sample(&mut rng)).collect();
        per_repeat.push(mmd_exp_hamming(&samples, &reference, &space, &cfg.mmd)?);
        if let Some(table) = data.table() {
            tvs.push(tv_distance(&empirical_distribution(&samples, &space)?, table)?);
        }
    }
    let (mean, se) = mean_and_stderr(&per_repeat);
    let mut metrics = BTreeMap::new();
    metrics.insert("mmd_mean".into(), mean);
    metrics.insert("mmd_stderr".into(), se);
    metrics.insert("mmd_mean_x1e-4".into(), mean * 1e4);
    if !tvs.is_empty() {
        let (tv, tv_se) = mean_and_stderr(&tvs);
        metrics.insert("tv_mean".into(), tv);
        metrics.insert("tv_stderr".into(), tv_se);
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("seed".into(), cfg.seed.to_string());
    metadata.insert("samples_per_repeat".into(), n.to_string());
    metadata.insert("repeats".into(), cfg.mmd.repeats.to_string());
    metadata.insert("bandwidth".into(), cfg.mmd.bandwidth.to_string());
    metadata.insert(
        "kernel".into(),
        if cfg.mmd.normalized { "exp(-hamming/dims/bandwidth)" } else { "exp(-hamming/bandwidth)" }.into(),
    );
    metadata.insert("estimator".into(), format!("{:?}", cfg.mmd.estimator).to_lowercase());
    let report = MetricsReport {
        metrics,
        per_repeat,
        metadata,
    };
    report.validate()?;
    Ok(report)
}
