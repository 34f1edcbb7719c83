//! Command-line front end: `gen-data`, `train`, `eval`, `predict`,
//! `grad-check` and `init-spec`.
//!
//! Settings come from a flat `key = value` run configuration; every command
//! writes the resolved configuration next to its outputs. Exit codes: 0
//! success, 1 usage, 2 data error, 3 numeric failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{read_corpus, write_corpus, CorpusError, CorpusRecord, GeneratorSpec};
use crate::diffcore::{gradient_check, Graph};
use crate::eval::{
    default_bounds, export_histogram, header_lines, histogram_csv, likelihood_sweep,
    predict_corpus, records_csv, sweep_csv, BootstrapConfig, EvalError, EvalSummary, Transform,
};
use crate::geo::GeoPoint;
use crate::model::{
    Checkpoint, Model, ModelConfig, ModelError, ModelKind, NeuralModel, Prediction, Standardizer,
};
use crate::text::{encode, percentile_length, tokenize, EncodedTweet, TextError, Vocab};
use crate::train::{batch_loss, history_csv, train, Dataset, TrainConfig, TrainError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Largest acceptable relative error in `grad-check`.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Spec(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Usage(e.to_string()),
            ModelError::Diverged { .. } | ModelError::Diff(_) | ModelError::Mixture(_) => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Diff(_) | TrainError::Mixture(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::NoLikelihood | EvalError::Argument(_) => CliError::Usage(e.to_string()),
            EvalError::Model(m) => m.into(),
            EvalError::Coordinate(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TextError> for CliError {
    fn from(e: TextError) -> Self {
        match e {
            TextError::Parse { .. } => CliError::Data(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

fn io(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io(path))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io(path))
}

/// Creates `dir`, refusing one that already holds files.
fn fresh_dir(dir: &Path) -> Result<(), CliError> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(io(dir))?;
        if entries.next().is_some() {
            return Err(CliError::Usage(format!(
                "output directory {} is not empty",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(io(dir))
}

/// Resolved settings of a run. Every key has a default, so an empty file
/// is a valid configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Generator spec included by `generator = path`; the desk default
    /// when absent.
    pub generator_path: Option<PathBuf>,
    pub generator: GeneratorSpec,
    pub seed: u64,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub model: ModelKind,
    pub min_count: usize,
    /// `None` selects the 95th-percentile training tweet length.
    pub max_len: Option<usize>,
    pub model_config: ModelConfig,
    pub train: TrainConfig,
    pub bootstrap_resamples: usize,
    pub ci_level: f64,
    pub sweep_points: usize,
    pub hist_bins: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let generator = GeneratorSpec::desk_default();
        Self {
            generator_path: None,
            seed: generator.seed,
            generator,
            train_size: 20_000,
            dev_size: 2_000,
            test_size: 2_000,
            model: ModelKind::Cmdn,
            min_count: 1,
            max_len: None,
            model_config: ModelConfig::default(),
            train: TrainConfig::default(),
            bootstrap_resamples: 1000,
            ci_level: 0.95,
            sweep_points: 12,
            hist_bins: 30,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| CliError::Usage(format!("{key} = {v:?}: {e}")))
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment. Relative include
    /// paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut c = Self::default();
        let mut seen = BTreeMap::new();
        let mut seed_given = false;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("config line {}: expected key = value", n + 1))
            })?;
            let (key, v) = (key.trim(), value.trim());
            if seen.insert(key.to_string(), n + 1).is_some() {
                return Err(CliError::Usage(format!(
                    "config line {}: duplicate key {key}",
                    n + 1
                )));
            }
            match key {
                "generator" => {
                    let path = base.join(v);
                    if !path.is_file() {
                        return Err(CliError::Usage(format!(
                            "generator spec {} not found",
                            path.display()
                        )));
                    }
                    c.generator = GeneratorSpec::load(&path)?;
                    c.generator_path = Some(path);
                }
                "seed" => {
                    c.seed = parse_value(key, v)?;
                    seed_given = true;
                }
                "train_size" => c.train_size = parse_value(key, v)?,
                "dev_size" => c.dev_size = parse_value(key, v)?,
                "test_size" => c.test_size = parse_value(key, v)?,
                "model" => c.model = v.parse().map_err(CliError::Usage)?,
                "min_count" => c.min_count = parse_value(key, v)?,
                "max_len" => {
                    c.max_len = if v == "auto" {
                        None
                    } else {
                        Some(parse_value(key, v)?)
                    }
                }
                "embed_dim" => c.model_config.embed_dim = parse_value(key, v)?,
                "windows" => {
                    c.model_config.windows = v
                        .split(',')
                        .map(|w| parse_value(key, w.trim()))
                        .collect::<Result<_, _>>()?
                }
                "filters" => c.model_config.filters = parse_value(key, v)?,
                "mixtures" => c.model_config.mixtures = parse_value(key, v)?,
                "hidden" => c.model_config.hidden = parse_value(key, v)?,
                "epochs" => c.train.epochs = parse_value(key, v)?,
                "batch_size" => c.train.batch_size = parse_value(key, v)?,
                "learning_rate" => c.train.learning_rate = parse_value(key, v)?,
                "dropout" => c.train.dropout = parse_value(key, v)?,
                "patience" => c.train.patience = parse_value(key, v)?,
                "lambda1" => c.train.enet.lambda1 = parse_value(key, v)?,
                "lambda2" => c.train.enet.lambda2 = parse_value(key, v)?,
                "enet_max_iter" => c.train.enet.max_iter = parse_value(key, v)?,
                "enet_tol" => c.train.enet.tol = parse_value(key, v)?,
                "bootstrap_resamples" => c.bootstrap_resamples = parse_value(key, v)?,
                "ci_level" => c.ci_level = parse_value(key, v)?,
                "sweep_points" => c.sweep_points = parse_value(key, v)?,
                "hist_bins" => c.hist_bins = parse_value(key, v)?,
                _ => {
                    return Err(CliError::Usage(format!(
                        "config line {}: unknown key {key:?}",
                        n + 1
                    )))
                }
            }
        }
        if !seed_given {
            c.seed = c.generator.seed;
        }
        c.train.seed = c.seed;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        if !path.is_file() {
            return Err(CliError::Usage(format!(
                "config {} not found",
                path.display()
            )));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&read_file(path)?, base)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.train_size == 0 || self.dev_size == 0 || self.test_size == 0 {
            return Err(CliError::Usage("split sizes must be positive".into()));
        }
        if self.min_count == 0 {
            return Err(CliError::Usage("min_count must be at least 1".into()));
        }
        if self.bootstrap_resamples < 100 || !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(CliError::Usage(
                "bootstrap needs >= 100 resamples and a level in (0, 1)".into(),
            ));
        }
        if self.sweep_points == 0 || self.hist_bins == 0 {
            return Err(CliError::Usage(
                "sweep_points and hist_bins must be positive".into(),
            ));
        }
        let mut probe = self.model_config.clone();
        probe.max_len = self.max_len.unwrap_or(probe.widest_window()).max(1);
        probe.validate()?;
        self.train.validate(self.model)?;
        Ok(())
    }

    /// Canonical text of every setting. The generator appears by path; its
    /// contents enter [`RunConfig::hash`] instead.
    pub fn to_text(&self) -> String {
        let m = &self.model_config;
        let t = &self.train;
        let mut out = String::new();
        if let Some(p) = &self.generator_path {
            out.push_str(&format!("generator = {}\n", p.display()));
        }
        let windows: Vec<String> = m.windows.iter().map(|w| w.to_string()).collect();
        let max_len = self.max_len.map_or("auto".to_string(), |l| l.to_string());
        for (k, v) in [
            ("seed", self.seed.to_string()),
            ("train_size", self.train_size.to_string()),
            ("dev_size", self.dev_size.to_string()),
            ("test_size", self.test_size.to_string()),
            ("model", self.model.to_string()),
            ("min_count", self.min_count.to_string()),
            ("max_len", max_len),
            ("embed_dim", m.embed_dim.to_string()),
            ("windows", windows.join(",")),
            ("filters", m.filters.to_string()),
            ("mixtures", m.mixtures.to_string()),
            ("hidden", m.hidden.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("dropout", t.dropout.to_string()),
            ("patience", t.patience.to_string()),
            ("lambda1", t.enet.lambda1.to_string()),
            ("lambda2", t.enet.lambda2.to_string()),
            ("enet_max_iter", t.enet.max_iter.to_string()),
            ("enet_tol", t.enet.tol.to_string()),
            ("bootstrap_resamples", self.bootstrap_resamples.to_string()),
            ("ci_level", self.ci_level.to_string()),
            ("sweep_points", self.sweep_points.to_string()),
            ("hist_bins", self.hist_bins.to_string()),
        ] {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// SHA-256 over the settings and the generator spec contents, so the
    /// hash does not depend on where files live.
    pub fn hash(&self) -> String {
        let body: String = self
            .to_text()
            .lines()
            .filter(|l| !l.starts_with("generator ="))
            .map(|l| format!("{l}\n"))
            .collect();
        let mut h = Sha256::new();
        h.update(body.as_bytes());
        h.update(self.generator.to_toml().as_bytes());
        h.finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect::<String>()[..16]
            .to_string()
    }

    pub fn header(&self) -> String {
        header_lines(&self.hash(), self.seed)
    }

    pub fn bootstrap(&self) -> BootstrapConfig {
        BootstrapConfig {
            resamples: self.bootstrap_resamples,
            level: self.ci_level,
            seed: self.seed,
        }
    }

    /// Writes the resolved settings plus the generator spec they used.
    fn write_resolved(&self, dir: &Path) -> Result<(), CliError> {
        let mut text = format!("# config_hash={}\n", self.hash());
        text.push_str(
            &self
                .to_text()
                .lines()
                .filter(|l| !l.starts_with("generator ="))
                .map(|l| format!("{l}\n"))
                .collect::<String>(),
        );
        text.push_str("generator = generator.toml\n");
        write_file(&dir.join("config.txt"), &text)?;
        write_file(&dir.join("generator.toml"), &self.generator.to_toml())
    }
}

pub const TRAIN_FILE: &str = "train.jsonl";
pub const DEV_FILE: &str = "dev.jsonl";
pub const TEST_FILE: &str = "test.jsonl";

/// Generates train/dev/test splits from one seeded stream.
pub fn cmd_gen_data(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    fresh_dir(out)?;
    let total = config.train_size + config.dev_size + config.test_size;
    let records = config.generator.generate(total, config.seed);
    let (train, rest) = records.split_at(config.train_size);
    let (dev, test) = rest.split_at(config.dev_size);
    write_corpus(&out.join(TRAIN_FILE), train)?;
    write_corpus(&out.join(DEV_FILE), dev)?;
    write_corpus(&out.join(TEST_FILE), test)?;
    config.write_resolved(out)
}

/// Vocabulary and sequence length derived from the training split.
pub fn build_vocab(train: &[CorpusRecord], config: &RunConfig) -> Result<(Vocab, usize), CliError> {
    let tokens: Vec<Vec<String>> = train.iter().map(|r| tokenize(&r.text)).collect();
    let vocab = Vocab::build(&tokens, config.min_count)?;
    let max_len = match config.max_len {
        Some(l) => l,
        None => percentile_length(tokens.iter().map(Vec::len), 0.95)
            .max(config.model_config.widest_window()),
    };
    Ok((vocab, max_len))
}

/// Summary of a finished `train` call.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub skipped_steps: usize,
    pub aborted: Option<String>,
}

/// Trains `config.model` on `data/train.jsonl`, selecting on
/// `data/dev.jsonl`. Writes `checkpoint.json`, `vocab.txt`, `history.csv`
/// and the resolved configuration into `out`. A non-finite loss still
/// writes the last good checkpoint, then fails with a numeric error.
pub fn cmd_train(config: &RunConfig, data: &Path, out: &Path) -> Result<TrainReport, CliError> {
    let train_records = read_corpus(&data.join(TRAIN_FILE))?;
    let dev_records = read_corpus(&data.join(DEV_FILE))?;
    let (vocab, max_len) = build_vocab(&train_records, config)?;
    let model_config = ModelConfig {
        max_len,
        ..config.model_config.clone()
    };
    let train_set = Dataset::from_records(&train_records, &vocab, max_len);
    let dev_set = Dataset::from_records(&dev_records, &vocab, max_len);
    fresh_dir(out)?;
    let outcome = train(
        config.model,
        &model_config,
        vocab.len(),
        &train_set,
        &dev_set,
        &config.train,
    )?;
    config.write_resolved(out)?;
    write_file(&out.join("vocab.txt"), &vocab.to_text(max_len))?;
    Checkpoint::from_model(&outcome.model, &vocab, max_len)
        .save(&out.join("checkpoint.json"))
        .map_err(io(out))?;
    let history = config.header() + &history_csv(&outcome.history);
    write_file(&out.join("history.csv"), &history)?;
    let report = TrainReport {
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.history.len(),
        skipped_steps: outcome.skipped_steps,
        aborted: outcome.aborted,
    };
    if let Some(msg) = &report.aborted {
        return Err(CliError::Numeric(format!(
            "{msg}; kept the checkpoint from epoch {}",
            report.best_epoch
        )));
    }
    Ok(report)
}

/// A trained run directory loaded back into memory.
pub struct LoadedRun {
    pub config: RunConfig,
    pub vocab: Vocab,
    pub max_len: usize,
    pub model: Model,
}

pub fn load_run(run: &Path) -> Result<LoadedRun, CliError> {
    let config = RunConfig::load(&run.join("config.txt"))?;
    let (vocab, max_len) = Vocab::from_text(&read_file(&run.join("vocab.txt"))?)?;
    let model = Checkpoint::load(&run.join("checkpoint.json"))?.into_model(&vocab)?;
    Ok(LoadedRun {
        config,
        vocab,
        max_len,
        model,
    })
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EvalOptions {
    pub sweep: bool,
    pub hist: bool,
}

/// Evaluates a run on a corpus: `records.csv` and `summary.json`, plus
/// `sweep.csv` and `histogram.csv` when requested.
pub fn cmd_eval(
    run: &Path,
    corpus: &Path,
    out: &Path,
    options: EvalOptions,
) -> Result<EvalSummary, CliError> {
    let loaded = load_run(run)?;
    let config = &loaded.config;
    if options.sweep && !loaded.model.kind().is_density() {
        return Err(EvalError::NoLikelihood.into());
    }
    let records = read_corpus(corpus)?;
    fresh_dir(out)?;
    let data = Dataset::from_records(&records, &loaded.vocab, loaded.max_len);
    let truths: Vec<GeoPoint> = records
        .iter()
        .map(|r| r.point())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Data(e.to_string()))?;
    let predictions = predict_corpus(&loaded.model, &data.tweets, &truths)?;
    let header = config.header();
    let bootstrap = config.bootstrap();
    let summary = EvalSummary::new(
        loaded.model.kind().name(),
        &predictions,
        &bootstrap,
        &config.hash(),
        config.seed,
    )?;
    fresh_dir(out)?;
    write_file(
        &out.join("records.csv"),
        &records_csv(&predictions, &header),
    )?;
    write_file(&out.join("summary.json"), &summary.to_json())?;
    if options.sweep {
        let bounds = default_bounds(&predictions, config.sweep_points)?;
        let rows = likelihood_sweep(&predictions, &bounds, &bootstrap)?;
        write_file(&out.join("sweep.csv"), &sweep_csv(&rows, &header))?;
    }
    if options.hist {
        let h = export_histogram(&predictions, config.hist_bins, Transform::Log10, None)?;
        write_file(&out.join("histogram.csv"), &histogram_csv(&h, &header))?;
    }
    Ok(summary)
}

/// One JSON line per input line: point estimate, likelihood for density
/// models, and with `emit_density` the full mixture. An empty line encodes
/// to all padding and still gets a prediction.
pub fn cmd_predict(
    run: &Path,
    lines: &[String],
    emit_density: bool,
) -> Result<Vec<String>, CliError> {
    let loaded = load_run(run)?;
    if emit_density && !loaded.model.kind().is_density() {
        return Err(CliError::Usage(format!(
            "--emit-density needs a density model; {} predicts points",
            loaded.model.kind()
        )));
    }
    let tweets: Vec<EncodedTweet> = lines
        .iter()
        .map(|l| encode(&tokenize(l), &loaded.vocab, loaded.max_len))
        .collect();
    let predictions = loaded.model.predict(&tweets)?;
    Ok(lines
        .iter()
        .zip(&predictions)
        .map(|(text, p)| {
            let (q, likelihood) = p.point();
            let mut obj = serde_json::json!({
                "text": text,
                "lat": q[0],
                "lon": q[1],
                "likelihood": likelihood,
            });
            if let (true, Prediction::Density(gmm)) = (emit_density, p) {
                obj["density"] = serde_json::to_value(gmm).expect("mixture serializes");
            }
            obj.to_string()
        })
        .collect())
}

/// Maximum relative gradient error of one loss kind, overall and per
/// parameter tensor.
#[derive(Clone, Debug)]
pub struct GradCheckLine {
    pub kind: ModelKind,
    pub max_rel_error: f64,
    pub per_param: Vec<(String, f64)>,
}

/// Finite-difference check of every neural model kind on a tiny random
/// configuration.
pub fn cmd_grad_check(config: &RunConfig) -> Result<Vec<GradCheckLine>, CliError> {
    let tiny = ModelConfig {
        embed_dim: 3,
        windows: vec![1, 2, 3],
        filters: 2,
        mixtures: 3,
        hidden: 4,
        max_len: 5,
    };
    let vocab = 9;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let tweets: Vec<EncodedTweet> = (0..4)
        .map(|_| {
            let len = rng.random_range(1..=5);
            let mut ids: Vec<usize> = (0..len).map(|_| rng.random_range(1..vocab)).collect();
            ids.resize(5, 0);
            EncodedTweet {
                ids,
                true_length: len,
            }
        })
        .collect();
    let targets: Vec<[f64; 2]> = (0..4)
        .map(|_| [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)])
        .collect();
    let mut lines = Vec::new();
    for kind in [
        ModelKind::CnnL1,
        ModelKind::CnnL2,
        ModelKind::MlpL1,
        ModelKind::MlpL2,
        ModelKind::Mdn,
        ModelKind::Cmdn,
    ] {
        let model = NeuralModel::new(
            kind,
            tiny.clone(),
            vocab,
            Standardizer::identity(),
            config.seed,
        )?;
        let mut g = Graph::new();
        let loss = batch_loss(&model, &mut g, &tweets, &targets, None)?;
        let report =
            gradient_check(&mut g, loss, 1e-5).map_err(|e| CliError::Numeric(e.to_string()))?;
        lines.push(GradCheckLine {
            kind,
            max_rel_error: report.max_rel_error,
            per_param: report
                .per_param
                .iter()
                .map(|(id, e)| (model.params().name(*id).to_string(), *e))
                .collect(),
        });
    }
    Ok(lines)
}

#[derive(Parser, Debug)]
#[command(
    name = "cmdn",
    version,
    about = "Text-to-coordinate density estimation with convolutional mixture density networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate train/dev/test corpora from a generator spec.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Generator spec; overrides the config's `generator` key.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a generated data directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained run on a corpus file.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Likelihood-threshold sweep (density models only).
        #[arg(long)]
        sweep: bool,
        /// Histogram of log10 errors.
        #[arg(long)]
        hist: bool,
    },
    /// Predict locations for text given as arguments or on stdin.
    Predict {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        emit_density: bool,
        text: Vec<String>,
    },
    /// Compare analytic and finite-difference gradients for every loss.
    GradCheck {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write the default generator spec.
    InitSpec {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut say = |s: String| {
        let _ = writeln!(out, "{s}");
    };
    match command {
        Command::GenData { config, spec, out } => {
            let mut c = load_config(config.as_deref())?;
            if let Some(spec) = spec {
                if !spec.is_file() {
                    return Err(CliError::Usage(format!(
                        "spec {} not found",
                        spec.display()
                    )));
                }
                c.generator = GeneratorSpec::load(&spec)?;
                c.generator_path = Some(spec);
            }
            cmd_gen_data(&c, &out)?;
            say(format!(
                "wrote {} / {} / {} records to {}",
                c.train_size,
                c.dev_size,
                c.test_size,
                out.display()
            ));
        }
        Command::Train { config, data, out } => {
            let c = load_config(config.as_deref())?;
            let report = cmd_train(&c, &data, &out)?;
            say(format!(
                "{}: best epoch {} of {} ({} skipped steps), saved to {}",
                c.model,
                report.best_epoch,
                report.epochs_run,
                report.skipped_steps,
                out.display()
            ));
        }
        Command::Eval {
            run,
            corpus,
            out,
            sweep,
            hist,
        } => {
            let s = cmd_eval(&run, &corpus, &out, EvalOptions { sweep, hist })?;
            say(format!(
                "{}: n={} mean {:.2} km [{:.2}, {:.2}], median {:.2} km [{:.2}, {:.2}]",
                s.model,
                s.count,
                s.mean_km,
                s.mean_ci.0,
                s.mean_ci.1,
                s.median_km,
                s.median_ci.0,
                s.median_ci.1
            ));
        }
        Command::Predict {
            run,
            emit_density,
            text,
        } => {
            let lines = if text.is_empty() {
                io::stdin()
                    .lock()
                    .lines()
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| CliError::Data(e.to_string()))?
            } else {
                text
            };
            for l in cmd_predict(&run, &lines, emit_density)? {
                say(l);
            }
        }
        Command::GradCheck { config } => {
            let c = load_config(config.as_deref())?;
            let lines = cmd_grad_check(&c)?;
            let mut worst = 0.0f64;
            for l in &lines {
                say(format!(
                    "{:<7} max_rel_error {:.3e}",
                    l.kind.name(),
                    l.max_rel_error
                ));
                for (name, e) in &l.per_param {
                    say(format!("    {name:<18} {e:.3e}"));
                }
                worst = worst.max(l.max_rel_error);
            }
            if worst.is_nan() || worst >= GRAD_CHECK_TOLERANCE {
                return Err(CliError::Numeric(format!(
                    "gradient error {worst:.3e} exceeds {GRAD_CHECK_TOLERANCE:e}"
                )));
            }
        }
        Command::InitSpec { out } => {
            write_file(&out, &GeneratorSpec::desk_default().to_toml())?;
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("cmdn: {e}");
            e.exit_code()
        }
    }
}
