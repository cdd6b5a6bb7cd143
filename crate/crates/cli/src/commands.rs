//! Subcommand bodies.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use catdiff::ctmc::{NoiseSchedule, TabularDistribution};
use catdiff::eval::{evaluate_run, EvalConfig, MetricsReport, MmdConfig, MmdEstimator};
use catdiff::models::{
    load_checkpoint, save_checkpoint, AnyModel, Architecture, Checkpoint, ModelDescriptor, ModelMode, Precision,
};
use catdiff::rng::{seeded, stream, SimRng};
use catdiff::samplers::{
    exact_reverse_simulate, sample_reverse, sample_table, BalanceFunction, CorrectorConfig, ExactReverseConfig,
    SamplerConfig, SamplerKind, StepGrid,
};
use catdiff::space::toy::{dequantize2d, sample_toy2d, write_points_csv, ToyDataset, ToyDatasetSpec, ToySource};
use catdiff::training::{
    train, AdamConfig, DataSource, ForwardProcess, LossKind, OrdinalKernelSpec, TableSource, TimeWeight, TrainConfig,
};
use catdiff::verify::{run_suite, Faults, Level};
use catdiff::{State, StateSpace, VERSION};
use rand::Rng;

use crate::config::RunConfig;
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| {
        CliError::Core(catdiff::Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Provenance lines written at the top of every artifact.
pub fn stamp(cfg: &RunConfig) -> Result<Vec<String>> {
    Ok(vec![
        format!("catdiff {VERSION}"),
        format!("config_digest {}", cfg.digest()),
        format!("seed {}", cfg.seed()?),
    ])
}

fn stamp_map(cfg: &RunConfig) -> Result<BTreeMap<String, String>> {
    let mut m = BTreeMap::new();
    m.insert("version".into(), VERSION.to_string());
    m.insert("config_digest".into(), cfg.digest());
    m.insert("seed".into(), cfg.seed()?.to_string());
    Ok(m)
}

/// Seed of the freshly initialized model.
pub fn init_seed(seed: u64) -> u64 {
    stream(seed, 1).random()
}

/// Uniform draws from a fixed list of states.
pub struct EmpiricalSource {
    space: StateSpace,
    states: Vec<State>,
}

impl DataSource for EmpiricalSource {
    fn space(&self) -> StateSpace {
        self.space
    }

    fn sample(&self, rng: &mut SimRng) -> State {
        self.states[rng.random_range(0..self.states.len())].clone()
    }
}

/// The configured data law plus what the commands need to know about it.
pub struct Data {
    pub source: Box<dyn DataSource>,
    pub toy: Option<ToyDatasetSpec>,
    pub table: Option<TabularDistribution>,
}

pub fn read_table(path: &Path) -> Result<TabularDistribution> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Ok(TabularDistribution::from_json(&text)?)
    } else {
        Ok(TabularDistribution::read_binary(path)?)
    }
}

pub fn build_data(cfg: &RunConfig) -> Result<Data> {
    let path = PathBuf::from(cfg.str("data.path"));
    match cfg.str("data.source") {
        "toy" => {
            let dataset: ToyDataset = cfg.parsed("data.dataset")?;
            let bits = u32::try_from(cfg.count("data.bits")?)
                .map_err(|_| CliError::Usage("configuration key `data.bits` is too large".into()))?;
            let spec = ToyDatasetSpec::new(dataset, bits)
                .map_err(|e| CliError::Usage(format!("configuration key `data.bits`: {e}")))?;
            Ok(Data {
                source: Box::new(ToySource { spec }),
                toy: Some(spec),
                table: None,
            })
        }
        "table" => {
            let table = read_table(&path)?;
            Ok(Data {
                source: Box::new(TableSource::new(table.clone())),
                toy: None,
                table: Some(table),
            })
        }
        "csv" => {
            let vocab = cfg.count("data.vocab")?;
            let states = read_states_csv(&path, None, vocab)?;
            let space = StateSpace::new(states[0].len(), vocab)?;
            Ok(Data {
                source: Box::new(EmpiricalSource { space, states }),
                toy: None,
                table: None,
            })
        }
        other => Err(CliError::Usage(format!(
            "configuration key `data.source`: unknown source `{other}` (toy, table, csv)"
        ))),
    }
}

pub fn build_process(cfg: &RunConfig, vocab: usize) -> Result<ForwardProcess> {
    let horizon = cfg.float("process.horizon");
    let schedule = match cfg.str("process.schedule") {
        "constant" => NoiseSchedule::constant(cfg.float("process.base_rate")),
        "cosine" => NoiseSchedule::cosine(),
        other => {
            return Err(CliError::Usage(format!(
                "configuration key `process.schedule`: unknown schedule `{other}` (constant, cosine)"
            )))
        }
    }
    .with_horizon(horizon);
    schedule
        .validate()
        .map_err(|e| CliError::Usage(format!("configuration keys `process.*`: {e}")))?;
    Ok(ForwardProcess::uniform(vocab, schedule)?)
}

pub fn build_descriptor(cfg: &RunConfig, space: StateSpace) -> Result<ModelDescriptor> {
    let architecture: Architecture = cfg.parsed("model.architecture")?;
    let mode = match cfg.str("model.mode") {
        "noisy_marginal" => ModelMode::NoisyMarginal,
        "denoising" => ModelMode::Denoising,
        other => {
            return Err(CliError::Usage(format!(
                "configuration key `model.mode`: unknown mode `{other}` (noisy_marginal, denoising)"
            )))
        }
    };
    let precision = match cfg.str("model.precision") {
        "f64" => Precision::F64,
        "f32" => Precision::F32,
        other => {
            return Err(CliError::Usage(format!(
                "configuration key `model.precision`: unknown precision `{other}` (f64, f32)"
            )))
        }
    };
    let mut desc = ModelDescriptor::new(architecture, space)
        .with_mode(mode)
        .with_precision(precision)
        .with_time_features(cfg.count("model.time_features")?)
        .with_horizon(cfg.float("process.horizon"));
    let hidden = cfg.counts("model.hidden");
    if !hidden.is_empty() {
        desc = desc.with_hidden(hidden);
    }
    Ok(desc)
}

pub fn build_train_config(cfg: &RunConfig, space: StateSpace) -> Result<TrainConfig> {
    let loss: LossKind = cfg.parsed("train.loss")?;
    let time_weight = match cfg.str("train.time_weight") {
        "constant" => TimeWeight::Constant {
            value: cfg.float("train.time_weight_value"),
        },
        "power" => TimeWeight::Power {
            scale: cfg.float("train.time_weight_scale"),
            exponent: cfg.float("train.time_weight_exponent"),
        },
        other => {
            return Err(CliError::Usage(format!(
                "configuration key `train.time_weight`: unknown weighting `{other}` (constant, power)"
            )))
        }
    };
    let t_max = cfg.float("train.t_max");
    Ok(TrainConfig {
        loss,
        steps: cfg.count("train.steps")?,
        batch_size: cfg.count("train.batch_size")?,
        optimizer: AdamConfig {
            learning_rate: cfg.float("train.learning_rate"),
            beta1: cfg.float("train.beta1"),
            beta2: cfg.float("train.beta2"),
            eps: cfg.float("train.adam_eps"),
        },
        time_weight,
        t_min: cfg.float("train.t_min"),
        t_max: (t_max > 0.0).then_some(t_max),
        seed: cfg.seed()?,
        eval_every: cfg.count("train.eval_every")?,
        ordinal: (loss == LossKind::OrdinalScore).then(|| OrdinalKernelSpec {
            corrupt_rate: cfg.float("train.corrupt_rate"),
            support: space.vocab(),
        }),
    })
}

pub fn build_sampler_config(cfg: &RunConfig, seed: u64) -> Result<SamplerConfig> {
    let kind: SamplerKind = cfg.parsed("sample.sampler")?;
    let grid = match cfg.str("sample.grid") {
        "uniform" => StepGrid::Uniform,
        "geometric" => StepGrid::Geometric,
        other => {
            return Err(CliError::Usage(format!(
                "configuration key `sample.grid`: unknown grid `{other}` (uniform, geometric)"
            )))
        }
    };
    let corrector = match cfg.str("sample.corrector") {
        "none" => None,
        "lb" => {
            let h = cfg.float("sample.corrector_step_size");
            Some(CorrectorConfig {
                balance: cfg.parsed::<BalanceFunction>("sample.balance")?,
                steps_per_predictor: cfg.count("sample.corrector_steps")?,
                step_size: (h != 0.0).then_some(h),
            })
        }
        other => {
            return Err(CliError::Usage(format!(
                "configuration key `sample.corrector`: unknown corrector `{other}` (none, lb)"
            )))
        }
    };
    Ok(SamplerConfig {
        kind,
        steps: cfg.count("sample.steps")?,
        grid,
        t_min: cfg.float("sample.t_min"),
        corrector,
        seed,
    })
}

pub fn build_eval_config(cfg: &RunConfig) -> Result<EvalConfig> {
    let estimator = match cfg.str("eval.estimator") {
        "biased" => MmdEstimator::Biased,
        "unbiased" => MmdEstimator::Unbiased,
        other => {
            return Err(CliError::Usage(format!(
                "configuration key `eval.estimator`: unknown estimator `{other}` (biased, unbiased)"
            )))
        }
    };
    let mmd = MmdConfig {
        bandwidth: cfg.float("eval.bandwidth"),
        estimator,
        repeats: cfg.count("eval.repeats")?,
        normalized: cfg.bool("eval.normalized"),
    };
    mmd.validate()
        .map_err(|e| CliError::Usage(format!("configuration keys `eval.*`: {e}")))?;
    Ok(EvalConfig {
        mmd,
        samples_per_repeat: cfg.count("eval.samples_per_repeat")?,
        seed: cfg.seed()?,
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

/// Artifact paths written by [`run_train`].
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub config: PathBuf,
}

impl TrainOutputs {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            checkpoint: dir.join("checkpoint.bin"),
            metrics: dir.join("metrics.csv"),
            config: dir.join("config.toml"),
        }
    }
}

fn config_file_text(cfg: &RunConfig) -> Result<String> {
    let mut text: String = stamp(cfg)?.iter().map(|l| format!("# {l}\n")).collect();
    text.push_str(&cfg.normalized());
    Ok(text)
}

pub fn run_train(cfg: &RunConfig, out: &Path) -> Result<TrainOutputs> {
    let data = build_data(cfg)?;
    let space = data.source.space();
    let process = build_process(cfg, space.vocab())?;
    let desc = build_descriptor(cfg, space)?;
    let train_cfg = build_train_config(cfg, space)?;
    train_cfg
        .validate(process.schedule.horizon)
        .map_err(|e| CliError::Usage(format!("configuration keys `train.*`: {e}")))?;
    let mut model = AnyModel::build(&desc, init_seed(cfg.seed()?))?;
    let log = train(&train_cfg, &process, data.source.as_ref(), &mut model)?;

    ensure_dir(out)?;
    let outputs = TrainOutputs::in_dir(out);
    let mut meta = stamp_map(cfg)?;
    meta.insert("loss".into(), train_cfg.loss.to_string());
    meta.insert("steps".into(), train_cfg.steps.to_string());
    save_checkpoint(&outputs.checkpoint, &Checkpoint::of(model.as_differentiable(), meta))?;
    log.write_csv(&outputs.metrics, &stamp(cfg)?, cfg.bool("train.wall_clock"))?;
    write_text(&outputs.config, &config_file_text(cfg)?)?;
    Ok(outputs)
}

/// Loads a checkpoint whose descriptor must equal the configured one.
pub fn load_model(cfg: &RunConfig, space: StateSpace, checkpoint: &Path) -> Result<AnyModel> {
    let desc = build_descriptor(cfg, space)?;
    Ok(load_checkpoint(checkpoint)?.into_model(Some(&desc))?)
}

/// What produces samples for `sample` and `eval`.
pub enum Generator {
    Model(AnyModel),
    /// Exact reverse simulation of the data table.
    Oracle(TabularDistribution),
    /// Fresh draws from the data law.
    Data,
}

impl Generator {
    pub fn generate(
        &self,
        cfg: &RunConfig,
        data: &Data,
        process: &ForwardProcess,
        n: usize,
        seed: u64,
    ) -> Result<Vec<State>> {
        match self {
            Generator::Model(model) => {
                let conditional = model.as_conditional().ok_or_else(|| {
                    CliError::Usage("score checkpoints have no conditional sampler; use a categorical architecture".into())
                })?;
                let sampler = build_sampler_config(cfg, seed)?;
                if sampler.kind == SamplerKind::ExactOracle {
                    return Err(CliError::Usage(
                        "configuration key `sample.sampler`: exact_oracle simulates the data table and takes no checkpoint"
                            .into(),
                    ));
                }
                Ok(sample_reverse(conditional, &sampler, process, n)?)
            }
            Generator::Oracle(table) => {
                let oracle = ExactReverseConfig {
                    grid_step: cfg.float("sample.oracle_grid_step"),
                    stop_at: cfg.float("sample.t_min"),
                    ..Default::default()
                };
                Ok(exact_reverse_simulate(table, process, n, &oracle, seed)?)
            }
            Generator::Data => {
                let mut rng = seeded(seed);
                match &data.table {
                    Some(table) => Ok(sample_table(table, n, &mut rng)),
                    None => Ok((0..n).map(|_| data.source.sample(&mut rng)).collect()),
                }
            }
        }
    }
}

/// Picks the generator from the sampler kind and the optional checkpoint.
pub fn generator_for(cfg: &RunConfig, data: &Data, checkpoint: Option<&Path>) -> Result<Generator> {
    let kind: SamplerKind = cfg.parsed("sample.sampler")?;
    match (kind, checkpoint) {
        (SamplerKind::ExactOracle, None) => match &data.table {
            Some(t) => Ok(Generator::Oracle(t.clone())),
            None => Err(CliError::Usage(
                "configuration key `sample.sampler`: exact_oracle needs `data.source = \"table\"`".into(),
            )),
        },
        (_, Some(path)) => Ok(Generator::Model(load_model(cfg, data.source.space(), path)?)),
        (_, None) => Err(CliError::Usage("a checkpoint is required for this sampler".into())),
    }
}

/// Writes `state` rows, with dequantized `x,y` columns for toy spaces.
pub fn write_samples_csv(
    path: &Path,
    comments: &[String],
    states: &[State],
    space: &StateSpace,
    toy: Option<&ToyDatasetSpec>,
) -> Result<()> {
    let io = io_err(path);
    let file = std::fs::File::create(path).map_err(&io)?;
    let mut w = std::io::BufWriter::new(file);
    for c in comments {
        writeln!(w, "# {c}").map_err(&io)?;
    }
    match toy {
        Some(spec) => {
            writeln!(w, "x,y,state").map_err(&io)?;
            for s in states {
                let [x, y] = dequantize2d(s, spec)?;
                writeln!(w, "{x},{y},{}", s.encode(2)).map_err(&io)?;
            }
        }
        None => {
            writeln!(w, "state").map_err(&io)?;
            for s in states {
                writeln!(w, "{}", s.encode(space.vocab())).map_err(&io)?;
            }
        }
    }
    w.flush().map_err(&io)
}

/// Reads the `state` column of a samples or dataset CSV.
pub fn read_states_csv(path: &Path, space: Option<&StateSpace>, vocab: usize) -> Result<Vec<State>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut column = None;
    let mut states = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let Some(col) = column else {
            column = Some(fields.iter().position(|f| f.trim() == "state").ok_or_else(|| {
                catdiff::Error::Format(format!("{}: header has no `state` column", path.display()))
            })?);
            continue;
        };
        let text = fields
            .get(col)
            .ok_or_else(|| catdiff::Error::Format(format!("{}:{}: missing state field", path.display(), i + 1)))?;
        let fallback;
        let space = match space {
            Some(s) => s,
            None => {
                let dims = if vocab <= 10 { text.len() } else { text.split(':').count() };
                fallback = StateSpace::new(dims, vocab)?;
                &fallback
            }
        };
        let state = State::decode(text.trim(), space)
            .map_err(|e| catdiff::Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        states.push(state);
    }
    if states.is_empty() {
        return Err(catdiff::Error::Format(format!("{}: no states", path.display())).into());
    }
    Ok(states)
}

pub fn run_sample(cfg: &RunConfig, checkpoint: Option<&Path>, out: &Path) -> Result<usize> {
    let data = build_data(cfg)?;
    let space = data.source.space();
    let process = build_process(cfg, space.vocab())?;
    let generator = generator_for(cfg, &data, checkpoint)?;
    let n = cfg.count("sample.count")?;
    let seed: u64 = stream(cfg.seed()?, 2).random();
    let states = generator.generate(cfg, &data, &process, n, seed)?;
    let mut comments = stamp(cfg)?;
    comments.push(format!("sampler {}", cfg.str("sample.sampler")));
    write_samples_csv(out, &comments, &states, &space, data.toy.as_ref())?;
    Ok(states.len())
}

/// Sample source of an `eval` run.
pub enum EvalInput<'a> {
    Samples(&'a Path),
    Checkpoint(&'a Path),
    /// Data against data.
    Null,
    /// A freshly initialized model.
    Init,
    /// Exact reverse simulation of the data table.
    Oracle,
}

pub fn run_eval(cfg: &RunConfig, input: EvalInput<'_>, out: &Path) -> Result<MetricsReport> {
    let data = build_data(cfg)?;
    let space = data.source.space();
    let process = build_process(cfg, space.vocab())?;
    let mut eval_cfg = build_eval_config(cfg)?;
    let mut extra = BTreeMap::new();
    let report = match input {
        EvalInput::Samples(path) => {
            let states = read_states_csv(path, Some(&space), space.vocab())?;
            let repeats = eval_cfg.mmd.repeats;
            let wanted = eval_cfg.samples_per_repeat;
            // Disjoint blocks when the file is large enough, the whole file otherwise.
            let disjoint = states.len() >= repeats * wanted;
            if !disjoint {
                eval_cfg.samples_per_repeat = states.len();
            }
            extra.insert("samples_file".into(), path.display().to_string());
            extra.insert("sample_blocks".into(), if disjoint { "disjoint" } else { "reused" }.to_string());
            let mut r = 0;
            let mut generate = |n: usize, _seed: u64| -> catdiff::Result<Vec<State>> {
                let block = if disjoint { states[r * n..(r + 1) * n].to_vec() } else { states.clone() };
                r += 1;
                Ok(block)
            };
            evaluate_run(&mut generate, data.source.as_ref(), &eval_cfg)?
        }
        other => {
            let generator = match other {
                EvalInput::Checkpoint(path) => generator_for(cfg, &data, Some(path))?,
                EvalInput::Null => Generator::Data,
                EvalInput::Init => {
                    let desc = build_descriptor(cfg, space)?;
                    Generator::Model(AnyModel::build(&desc, init_seed(cfg.seed()?))?)
                }
                EvalInput::Oracle => generator_for(cfg, &data, None)?,
                EvalInput::Samples(_) => unreachable!(),
            };
            let mut failure = None;
            let mut generate = |n: usize, seed: u64| -> catdiff::Result<Vec<State>> {
                generator.generate(cfg, &data, &process, n, seed).map_err(|e| match e {
                    CliError::Core(inner) => inner,
                    other => {
                        let msg = other.to_string();
                        failure = Some(other);
                        catdiff::Error::Config(msg)
                    }
                })
            };
            let result = evaluate_run(&mut generate, data.source.as_ref(), &eval_cfg);
            if let Some(e) = failure {
                return Err(e);
            }
            result?
        }
    };
    let mut report = report;
    report.metadata.extend(stamp_map(cfg)?);
    report.metadata.extend(extra);
    ensure_dir(out)?;
    report.write(&out.join("metrics.json"), &out.join("metrics.csv"))?;
    Ok(report)
}

pub fn run_gen_data(cfg: &RunConfig, n: usize, out: &Path) -> Result<()> {
    let data = build_data(cfg)?;
    let seed = cfg.seed()?;
    match data.toy {
        Some(spec) => {
            let points = sample_toy2d(&spec, n, seed)?;
            write_points_csv(out, &stamp(cfg)?.join("; "), &points, &spec)?;
        }
        None => {
            let space = data.source.space();
            let states = Generator::Data.generate(cfg, &data, &build_process(cfg, space.vocab())?, n, seed)?;
            write_samples_csv(out, &stamp(cfg)?, &states, &space, None)?;
        }
    }
    Ok(())
}

/// Runs the verification suite; the JSON verdict carries the config digest.
/// Per-check timings are dropped unless `timings` is set so that reruns
/// produce identical files.
pub fn run_verify(
    cfg: &RunConfig,
    level: Level,
    inject_fault: bool,
    only: &[String],
    timings: bool,
    out: Option<&Path>,
) -> Result<(bool, String)> {
    for name in only {
        if !catdiff::verify::check_names().contains(&name.as_str()) {
            return Err(CliError::Usage(format!(
                "unknown check `{name}`; available: {}",
                catdiff::verify::check_names().join(", ")
            )));
        }
    }
    let faults = if inject_fault { Faults::ratio_sign_flip() } else { Faults::default() };
    let verdict = run_suite(level, faults, cfg.seed()?, &|n| only.is_empty() || only.iter().any(|o| o == n));
    let mut json = serde_json::to_value(&verdict).map_err(|e| catdiff::Error::Format(e.to_string()))?;
    json["config_digest"] = serde_json::Value::String(cfg.digest());
    if !timings {
        if let Some(checks) = json["checks"].as_array_mut() {
            for c in checks {
                if let Some(obj) = c.as_object_mut() {
                    obj.remove("seconds");
                }
            }
        }
    }
    let text = serde_json::to_string_pretty(&json).map_err(|e| catdiff::Error::Format(e.to_string()))?;
    if let Some(path) = out {
        write_text(path, &format!("{text}\n"))?;
    }
    Ok((verdict.passed, text))
}
