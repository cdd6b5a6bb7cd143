//! Flat dotted-key run configuration.
//!
//! A configuration is a map from dotted keys (`train.steps`) to TOML values.
//! Layers are merged defaults < file < command line; every key must appear in
//! [`KEYS`] and keep the type of its default. The normalized form lists every
//! key once, sorted, and its SHA-256 is the digest stamped on artifacts.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};
use toml::Value;

use crate::error::CliError;

/// Key, default (as TOML source), description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "master seed for data, initialization, training and sampling"),
    ("data.source", "\"toy\"", "toy | table | csv"),
    ("data.dataset", "\"2spirals\"", "toy density name"),
    ("data.bits", "16", "bits per axis of the toy quantization"),
    ("data.path", "\"\"", "table file (binary or .json) or samples CSV"),
    ("data.vocab", "2", "vocabulary size of CSV data"),
    ("model.architecture", "\"ebm\"", "ebm | masked | hollow | tabular | score"),
    ("model.mode", "\"noisy_marginal\"", "noisy_marginal | denoising"),
    ("model.hidden", "[]", "hidden widths; empty selects the architecture default"),
    ("model.time_features", "64", "number of sinusoidal time features"),
    ("model.precision", "\"f64\"", "f64 | f32 forward precision"),
    ("process.schedule", "\"constant\"", "constant | cosine"),
    ("process.base_rate", "1.0", "rate multiplier of the constant schedule"),
    ("process.horizon", "1.0", "terminal time T"),
    ("train.loss", "\"ce_simplified\"", "training objective"),
    ("train.steps", "1000", "optimizer steps"),
    ("train.batch_size", "128", "states per step"),
    ("train.learning_rate", "1e-4", "Adam step size"),
    ("train.beta1", "0.9", "Adam first-moment decay"),
    ("train.beta2", "0.999", "Adam second-moment decay"),
    ("train.adam_eps", "1e-8", "Adam denominator offset"),
    ("train.time_weight", "\"constant\"", "constant | power"),
    ("train.time_weight_value", "1.0", "weight of the constant time weighting"),
    ("train.time_weight_scale", "1.0", "scale of the power time weighting"),
    ("train.time_weight_exponent", "1.0", "exponent of the power time weighting"),
    ("train.t_min", "1e-3", "smallest training time"),
    ("train.t_max", "0.0", "largest training time; 0 selects the horizon"),
    ("train.eval_every", "100", "steps per logged loss"),
    ("train.corrupt_rate", "1.0", "ordinal kernel corrupt rate"),
    ("train.wall_clock", "false", "record wall-clock milliseconds in the metrics log"),
    ("sample.sampler", "\"euler\"", "euler | analytical | exact_oracle"),
    ("sample.steps", "1000", "predictor steps"),
    ("sample.grid", "\"uniform\"", "uniform | geometric"),
    ("sample.t_min", "0.0", "time at which sampling stops"),
    ("sample.corrector", "\"none\"", "none | lb"),
    ("sample.balance", "\"sqrt\"", "sqrt | t_over_1pt"),
    ("sample.corrector_steps", "1", "corrector steps per predictor step"),
    ("sample.corrector_step_size", "0.0", "corrector step; 0 selects half the predictor step"),
    ("sample.count", "4000", "number of samples"),
    ("sample.oracle_grid_step", "1e-3", "cell width of the exact reverse simulation"),
    ("eval.bandwidth", "0.1", "kernel bandwidth"),
    ("eval.estimator", "\"biased\"", "biased | unbiased"),
    ("eval.normalized", "true", "divide the Hamming distance by the number of dimensions"),
    ("eval.repeats", "10", "number of repeats"),
    ("eval.samples_per_repeat", "4000", "samples per repeat"),
];

fn parse_value(text: &str) -> Option<Value> {
    let table: toml::Table = toml::from_str(&format!("v = {text}")).ok()?;
    table.get("v").cloned()
}

fn default_of(key: &str) -> Option<Value> {
    KEYS.iter()
        .find(|(k, _, _)| *k == key)
        .map(|(_, v, _)| parse_value(v).expect("default parses"))
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "a string",
        Value::Integer(_) => "an integer",
        Value::Float(_) => "a number",
        Value::Boolean(_) => "a boolean",
        Value::Array(_) => "a list",
        Value::Table(_) => "a table",
        Value::Datetime(_) => "a datetime",
    }
}

/// Checks `value` against the default type of `key`, widening integers to floats.
fn coerce(key: &str, value: Value) -> Result<Value, CliError> {
    let default = default_of(key).ok_or_else(|| CliError::Usage(format!("unknown configuration key `{key}`")))?;
    let value = match (&default, value) {
        (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
        (_, v) => v,
    };
    let ok = match (&default, &value) {
        (Value::Array(_), Value::Array(items)) => items.iter().all(|i| matches!(i, Value::Integer(n) if *n >= 0)),
        (d, v) => std::mem::discriminant(d) == std::mem::discriminant(v),
    };
    if !ok {
        return Err(CliError::Usage(format!(
            "configuration key `{key}` expects {}, got {}",
            if matches!(default, Value::Array(_)) { "a list of non-negative integers" } else { type_name(&default) },
            type_name(&value)
        )));
    }
    Ok(value)
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(inner) => flatten(&key, inner, out),
            other => out.push((key, other.clone())),
        }
    }
}

/// A fully populated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, Value>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let values = KEYS
            .iter()
            .map(|(k, v, _)| (k.to_string(), parse_value(v).expect("default parses")))
            .collect();
        Self { values }
    }
}

impl RunConfig {
    /// Overlays the keys of a TOML document; sections and dotted keys are equivalent.
    pub fn merge_toml(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Usage(format!("{origin}: {}", e.message())))?;
        let mut pairs = Vec::new();
        flatten("", &table, &mut pairs);
        for (k, v) in pairs {
            let v = coerce(&k, v).map_err(|e| CliError::Usage(format!("{origin}: {e}")))?;
            self.values.insert(k, v);
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| catdiff::Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.merge_toml(&text, &path.display().to_string())
    }

    /// Sets one key from command-line text; unquoted text that is not a TOML
    /// literal is taken as a string.
    pub fn set(&mut self, key: &str, text: &str) -> Result<(), CliError> {
        let value = parse_value(text).unwrap_or_else(|| Value::String(text.to_string()));
        let value = match (default_of(key), value) {
            // String keys keep the raw text even when it looks like another literal.
            (Some(Value::String(_)), v) if !matches!(v, Value::String(_)) => Value::String(text.to_string()),
            (_, v) => v,
        };
        let value = coerce(key, value)?;
        self.values.insert(key.to_string(), value);
        Ok(())
    }

    /// `key=value` form of [`RunConfig::set`].
    pub fn set_assignment(&mut self, assignment: &str) -> Result<(), CliError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected key=value, got `{assignment}`")))?;
        self.set(k.trim(), v.trim())
    }

    /// One `key = value` line per key, sorted.
    pub fn normalized(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Hex SHA-256 of the normalized form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.normalized().as_bytes()))
    }

    fn get(&self, key: &str) -> &Value {
        self.values.get(key).unwrap_or_else(|| panic!("configuration key `{key}` is not registered"))
    }

    pub fn str(&self, key: &str) -> &str {
        self.get(key).as_str().expect("type checked on insert")
    }

    pub fn float(&self, key: &str) -> f64 {
        self.get(key).as_float().expect("type checked on insert")
    }

    pub fn bool(&self, key: &str) -> bool {
        self.get(key).as_bool().expect("type checked on insert")
    }

    /// Non-negative integer value.
    pub fn count(&self, key: &str) -> Result<usize, CliError> {
        let v = self.get(key).as_integer().expect("type checked on insert");
        usize::try_from(v).map_err(|_| CliError::Usage(format!("configuration key `{key}` must be non-negative, got {v}")))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        let v = self.get("seed").as_integer().expect("type checked on insert");
        u64::try_from(v).map_err(|_| CliError::Usage(format!("configuration key `seed` must be non-negative, got {v}")))
    }

    pub fn counts(&self, key: &str) -> Vec<usize> {
        self.get(key)
            .as_array()
            .expect("type checked on insert")
            .iter()
            .map(|v| v.as_integer().expect("type checked on insert") as usize)
            .collect()
    }

    /// Parses a string key, prefixing failures with the key path.
    pub fn parsed<T>(&self, key: &str) -> Result<T, CliError>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        self.str(key)
            .parse()
            .map_err(|e| CliError::Usage(format!("configuration key `{key}`: {e}")))
    }
}

/// `KEYS` as a help table.
pub fn describe_keys() -> String {
    KEYS.iter()
        .map(|(k, v, d)| format!("{k:30} {v:18} {d}\n"))
        .collect()
}
