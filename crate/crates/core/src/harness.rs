//! Batch experiment runner: configuration, data sources, seeded trials and
//! report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::itene::{fit_itene, Denominator, IteneConfig};
use crate::nn::UpdateRule;
use crate::rng::{derive_named, rng_from_seed};
use crate::synthetic::{
    closed_form_te, gen_independent, gen_threshold_process, gen_xor_process, ThresholdProcessSpec,
};
use crate::te::{estimate_te, nats_to_bits, EmbeddingConfig, SeriesPair};

/// Where the two series come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    Threshold {
        rho: f64,
        lambda: f64,
        len: usize,
    },
    Xor {
        noise_std: f64,
        len: usize,
    },
    Independent {
        len: usize,
    },
    Csv {
        path: PathBuf,
        x_col: String,
        y_col: String,
        /// Replace prices by their quantized daily returns.
        quantize: bool,
        /// Standard deviation of Gaussian dither added after loading; 0 disables it.
        dither_std: f64,
    },
}

impl Source {
    fn name(&self) -> &'static str {
        match self {
            Source::Threshold { .. } => "threshold",
            Source::Xor { .. } => "xor",
            Source::Independent { .. } => "independent",
            Source::Csv { .. } => "csv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Lambda,
    Len,
    Rho,
}

impl SweepParam {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "lambda" => Some(SweepParam::Lambda),
            "len" | "t" | "T" => Some(SweepParam::Len),
            "rho" => Some(SweepParam::Rho),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

/// Full description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: Source,
    pub embedding: EmbeddingConfig,
    /// Estimator settings; `itene.mine` holds the classifier settings.
    pub itene: IteneConfig,
    /// Skip the channel optimization and report transfer entropy only.
    pub te_only: bool,
    pub trials: usize,
    pub base_seed: u64,
    pub sweep: Option<Sweep>,
    pub output_dir: PathBuf,
    pub workers: usize,
    /// Also write bit-valued columns.
    pub bits: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            source: Source::Threshold {
                rho: 0.9,
                lambda: 0.0,
                len: 20_000,
            },
            embedding: EmbeddingConfig::default(),
            itene: IteneConfig::default(),
            te_only: false,
            trials: 10,
            base_seed: 0,
            sweep: None,
            output_dir: PathBuf::from("results"),
            workers: 1,
            bits: false,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        other => Err(Error::Config(format!(
            "{key}: expected a boolean, got {other:?}"
        ))),
    }
}

impl ExperimentConfig {
    /// Keys understood by [`ExperimentConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "source",
        "rho",
        "lambda",
        "len",
        "noise_std",
        "csv_path",
        "x_col",
        "y_col",
        "quantize",
        "dither_std",
        "m",
        "n",
        "trials",
        "seed",
        "sweep_param",
        "sweep_values",
        "output_dir",
        "workers",
        "bits",
        "te_only",
        "hidden",
        "clip_tau",
        "learning_rate",
        "optimizer",
        "train_fraction",
        "epochs",
        "batch_size",
        "patience",
        "coupled_split",
        "outer_iterations",
        "phi_steps",
        "phi_learning_rate",
        "phi_optimizer",
        "phi_hidden",
        "init_log_std",
        "log_std_floor",
        "log_std_ceiling",
        "warm_start",
        "refit_epochs",
        "denominator",
        "tolerance",
        "smoothing_window",
    ];

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let mine = &mut self.itene.mine;
        match key {
            "source" => {
                let len = self.source_len().unwrap_or(20_000);
                self.source = match value {
                    "threshold" => Source::Threshold {
                        rho: 0.9,
                        lambda: 0.0,
                        len,
                    },
                    "xor" => Source::Xor {
                        noise_std: 0.05,
                        len,
                    },
                    "independent" => Source::Independent { len },
                    "csv" => Source::Csv {
                        path: PathBuf::new(),
                        x_col: "x".into(),
                        y_col: "y".into(),
                        quantize: false,
                        dither_std: 0.0,
                    },
                    other => return Err(Error::Config(format!("unknown source {other:?}"))),
                };
            }
            "rho" => match &mut self.source {
                Source::Threshold { rho, .. } => *rho = parse_value(key, value)?,
                _ => return Err(self.wrong_source(key)),
            },
            "lambda" => match &mut self.source {
                Source::Threshold { lambda, .. } => *lambda = parse_value(key, value)?,
                _ => return Err(self.wrong_source(key)),
            },
            "noise_std" => match &mut self.source {
                Source::Xor { noise_std, .. } => *noise_std = parse_value(key, value)?,
                _ => return Err(self.wrong_source(key)),
            },
            "len" => {
                let v: usize = parse_value(key, value)?;
                match &mut self.source {
                    Source::Threshold { len, .. }
                    | Source::Xor { len, .. }
                    | Source::Independent { len } => *len = v,
                    Source::Csv { .. } => return Err(self.wrong_source(key)),
                }
            }
            "csv_path" | "x_col" | "y_col" | "quantize" | "dither_std" => {
                let Source::Csv {
                    path,
                    x_col,
                    y_col,
                    quantize,
                    dither_std,
                } = &mut self.source
                else {
                    return Err(self.wrong_source(key));
                };
                match key {
                    "csv_path" => *path = PathBuf::from(value),
                    "x_col" => *x_col = value.to_string(),
                    "y_col" => *y_col = value.to_string(),
                    "quantize" => *quantize = parse_bool(key, value)?,
                    _ => *dither_std = parse_value(key, value)?,
                }
            }
            "m" => self.embedding.m = parse_value(key, value)?,
            "n" => self.embedding.n = parse_value(key, value)?,
            "trials" => self.trials = parse_value(key, value)?,
            "seed" => {
                self.base_seed = parse_value(key, value)?;
            }
            "sweep_param" => {
                let param = SweepParam::parse(value)
                    .ok_or_else(|| Error::Config(format!("unknown sweep parameter {value:?}")))?;
                let values = self.sweep.take().map(|s| s.values).unwrap_or_default();
                self.sweep = Some(Sweep { param, values });
            }
            "sweep_values" => {
                let values = parse_list(key, value)?;
                let param = self.sweep.as_ref().map_or(SweepParam::Lambda, |s| s.param);
                self.sweep = Some(Sweep { param, values });
            }
            "output_dir" => self.output_dir = PathBuf::from(value),
            "workers" => self.workers = parse_value(key, value)?,
            "bits" => self.bits = parse_bool(key, value)?,
            "te_only" => self.te_only = parse_bool(key, value)?,
            "hidden" => mine.hidden_widths = parse_list(key, value)?,
            "clip_tau" => mine.clip_tau = parse_value(key, value)?,
            "learning_rate" => mine.learning_rate = parse_value(key, value)?,
            "optimizer" => mine.optimizer = parse_rule(key, value)?,
            "train_fraction" => mine.train_fraction = parse_value(key, value)?,
            "epochs" => mine.epochs = parse_value(key, value)?,
            "batch_size" => mine.batch_size = parse_value(key, value)?,
            "patience" => mine.patience = parse_value(key, value)?,
            "coupled_split" => mine.coupled_split = parse_bool(key, value)?,
            "outer_iterations" => self.itene.outer_iterations = parse_value(key, value)?,
            "phi_steps" => self.itene.phi_steps_per_iter = parse_value(key, value)?,
            "phi_learning_rate" => self.itene.phi_learning_rate = parse_value(key, value)?,
            "phi_optimizer" => self.itene.phi_optimizer = parse_rule(key, value)?,
            "phi_hidden" => self.itene.phi_hidden = parse_list(key, value)?,
            "init_log_std" => self.itene.init_log_std = parse_value(key, value)?,
            "log_std_floor" => self.itene.log_std_floor = parse_value(key, value)?,
            "log_std_ceiling" => self.itene.log_std_ceiling = parse_value(key, value)?,
            "warm_start" => self.itene.warm_start = parse_bool(key, value)?,
            "refit_epochs" => self.itene.refit_epochs = parse_value(key, value)?,
            "denominator" => {
                self.itene.denominator = match value {
                    "unclipped" => Denominator::Unclipped,
                    "clipped" => Denominator::Clipped,
                    other => return Err(Error::Config(format!("unknown denominator {other:?}"))),
                }
            }
            "tolerance" => self.itene.tolerance = parse_value(key, value)?,
            "smoothing_window" => self.itene.smoothing_window = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    fn wrong_source(&self, key: &str) -> Error {
        Error::Config(format!(
            "{key} does not apply to source {:?}",
            self.source.name()
        ))
    }

    fn source_len(&self) -> Option<usize> {
        match self.source {
            Source::Threshold { len, .. }
            | Source::Xor { len, .. }
            | Source::Independent { len } => Some(len),
            Source::Csv { .. } => None,
        }
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_kv_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            self.set(key.trim(), value).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Defaults overridden by a key-value file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = ExperimentConfig::default();
        cfg.apply_kv_text(&text, path)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::Config("sweep has no values".into()));
            }
            if let Some(v) = sweep.values.iter().find(|v| !v.is_finite()) {
                return Err(Error::Config(format!("sweep value {v} is not finite")));
            }
            if matches!(self.source, Source::Csv { .. }) {
                return Err(Error::Config("csv sources cannot be swept".into()));
            }
            if sweep.param != SweepParam::Len && !matches!(self.source, Source::Threshold { .. }) {
                return Err(Error::Config(
                    "only the threshold source has rho and lambda".into(),
                ));
            }
            if sweep.param == SweepParam::Len
                && sweep.values.iter().any(|v| *v < 2.0 || v.fract() != 0.0)
            {
                return Err(Error::Config(
                    "length sweep values must be integers >= 2".into(),
                ));
            }
        }
        if let Source::Csv {
            path, dither_std, ..
        } = &self.source
        {
            if path.as_os_str().is_empty() {
                return Err(Error::Config("csv source needs csv_path".into()));
            }
            if !(*dither_std >= 0.0 && dither_std.is_finite()) {
                return Err(Error::Config(format!(
                    "dither_std must be >= 0, got {dither_std}"
                )));
            }
        }
        self.itene.validate()
    }

    /// The source with one sweep value applied.
    fn source_at(&self, value: Option<f64>) -> Source {
        let mut source = self.source.clone();
        let (Some(v), Some(sweep)) = (value, &self.sweep) else {
            return source;
        };
        match (&mut source, sweep.param) {
            (Source::Threshold { lambda, .. }, SweepParam::Lambda) => *lambda = v,
            (Source::Threshold { rho, .. }, SweepParam::Rho) => *rho = v,
            (
                Source::Threshold { len, .. }
                | Source::Xor { len, .. }
                | Source::Independent { len },
                SweepParam::Len,
            ) => *len = v as usize,
            _ => unreachable!("rejected by validate"),
        }
        source
    }
}

fn parse_rule(key: &str, value: &str) -> Result<UpdateRule> {
    UpdateRule::parse(value).ok_or_else(|| Error::Config(format!("{key}: unknown rule {value:?}")))
}

/// Series for one trial. Generators are seeded by `seed`; CSV data is fixed
/// and only the dither depends on it.
pub fn load_source(source: &Source, seed: u64) -> Result<SeriesPair> {
    match source {
        Source::Threshold { rho, lambda, len } => gen_threshold_process(&ThresholdProcessSpec {
            rho: *rho,
            lambda: *lambda,
            len: *len,
            seed,
        }),
        Source::Xor { noise_std, len } => gen_xor_process(*noise_std, *len, seed),
        Source::Independent { len } => gen_independent(*len, seed),
        Source::Csv {
            path,
            x_col,
            y_col,
            quantize,
            dither_std,
        } => {
            let mut series = ingest_csv(path, x_col, y_col)?;
            if *quantize {
                let spec = QuantizeSpec::default();
                series = SeriesPair::new(
                    quantize_returns(series.x(), &spec)?,
                    quantize_returns(series.y(), &spec)?,
                )?;
            }
            if *dither_std > 0.0 {
                series = dither(&series, *dither_std, seed)?;
            }
            Ok(series)
        }
    }
}

fn dither(series: &SeriesPair, std: f64, seed: u64) -> Result<SeriesPair> {
    let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = rng_from_seed(derive_named(seed, "dither"));
    let x = series
        .x()
        .iter()
        .map(|v| v + normal.sample(&mut rng))
        .collect();
    let y = series
        .y()
        .iter()
        .map(|v| v + normal.sample(&mut rng))
        .collect();
    SeriesPair::new(x, y)
}

/// Fewest data rows accepted from a CSV file.
pub const MIN_CSV_ROWS: usize = 3;

/// Read two named columns of a comma-separated file with a header row.
pub fn ingest_csv(path: &Path, x_col: &str, y_col: &str) -> Result<SeriesPair> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    if let Some(i) = text.lines().position(|l| l.trim().is_empty()) {
        return Err(parse_err(i + 1, "blank line".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("missing column {name:?}")))
    };
    let (xi, yi) = (column(x_col)?, column(y_col)?);
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let cell = |idx: usize, name: &str| -> Result<f64> {
            let raw = record
                .get(idx)
                .ok_or_else(|| parse_err(line, format!("missing value for {name:?}")))?;
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(line, format!("{name}: {raw:?} is not a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(line, format!("{name}: {raw:?} is not finite")))
            }
        };
        x.push(cell(xi, x_col)?);
        y.push(cell(yi, y_col)?);
    }
    if x.len() < MIN_CSV_ROWS {
        return Err(Error::Empty(format!(
            "{}: {} data rows, need at least {MIN_CSV_ROWS}",
            path.display(),
            x.len()
        )));
    }
    SeriesPair::new(x, y)
}

/// Write a series pair in the format read by [`ingest_csv`].
pub fn write_series_csv(path: &Path, series: &SeriesPair, x_col: &str, y_col: &str) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    writer.write_record([x_col, y_col])?;
    for (x, y) in series.x().iter().zip(series.y()) {
        writer.write_record([x.to_string(), y.to_string()])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Daily return thresholds of the three-level quantizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizeSpec {
    pub up_threshold: f64,
    pub down_threshold: f64,
}

impl Default for QuantizeSpec {
    fn default() -> Self {
        QuantizeSpec {
            up_threshold: 0.008,
            down_threshold: -0.008,
        }
    }
}

impl QuantizeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.down_threshold < 0.0 && 0.0 < self.up_threshold) {
            return Err(Error::Config(format!(
                "need down < 0 < up, got {} and {}",
                self.down_threshold, self.up_threshold
            )));
        }
        Ok(())
    }
}

/// Levels in {-1, 0, 1} of the relative returns of `prices`. The output is
/// one shorter than the input.
pub fn quantize_returns(prices: &[f64], spec: &QuantizeSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if prices.len() < 2 {
        return Err(Error::Empty(format!(
            "need at least 2 prices, got {}",
            prices.len()
        )));
    }
    if let Some((i, p)) = prices
        .iter()
        .enumerate()
        .find(|(_, p)| !(**p > 0.0) || !p.is_finite())
    {
        return Err(Error::Config(format!("price {i} is {p}, must be positive")));
    }
    Ok(prices
        .windows(2)
        .map(|w| {
            let r = (w[1] - w[0]) / w[0];
            if r > spec.up_threshold {
                1.0
            } else if r < spec.down_threshold {
                -1.0
            } else {
                0.0
            }
        })
        .collect())
}

/// One successful trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub sweep_value: Option<f64>,
    pub trial: usize,
    pub seed: u64,
    pub te_nats: f64,
    pub ite_nats: Option<f64>,
    pub ste_nats: Option<f64>,
    pub oracle_te_nats: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub sweep_value: Option<f64>,
    pub trial: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Success,
    PartialFailure,
    Fatal,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Success => 0,
            RunStatus::PartialFailure => 1,
            RunStatus::Fatal => 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rows: Vec<TrialRow>,
    pub failures: Vec<TrialFailure>,
    pub wall_clock_secs: f64,
    pub started_unix_secs: u64,
}

impl ExperimentReport {
    /// Partial failure if any trial failed, fatal if every trial of some
    /// sweep point failed.
    pub fn status(&self) -> RunStatus {
        if self.failures.is_empty() {
            return RunStatus::Success;
        }
        let all_failed = self
            .sweep_points()
            .into_iter()
            .any(|point| !self.rows.iter().any(|r| same_point(r.sweep_value, point)));
        if all_failed {
            RunStatus::Fatal
        } else {
            RunStatus::PartialFailure
        }
    }

    fn sweep_points(&self) -> Vec<Option<f64>> {
        match &self.config.sweep {
            Some(s) => s.values.iter().copied().map(Some).collect(),
            None => vec![None],
        }
    }
}

fn same_point(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => a.to_bits() == b.to_bits(),
        (None, None) => true,
        _ => false,
    }
}

/// Closed-form transfer entropy when the source has one.
pub fn oracle_te(source: &Source, embedding: &EmbeddingConfig) -> Option<f64> {
    match source {
        Source::Threshold { rho, lambda, .. } if embedding.m == 1 && embedding.n == 1 => {
            closed_form_te(*rho, *lambda).ok()
        }
        _ => None,
    }
}

/// Seed of trial `k`.
pub fn trial_seed(base_seed: u64, k: usize) -> u64 {
    base_seed.wrapping_add(k as u64)
}

/// Run one trial of one sweep point.
pub fn run_trial(
    cfg: &ExperimentConfig,
    sweep_value: Option<f64>,
    trial: usize,
) -> Result<TrialRow> {
    let seed = trial_seed(cfg.base_seed, trial);
    let source = cfg.source_at(sweep_value);
    let series = load_source(&source, derive_named(seed, "data"))?;
    let mut icfg = cfg.itene.clone();
    icfg.rng_seed = derive_named(seed, "estimator");
    icfg.mine.rng_seed = icfg.rng_seed;
    let (te, ite) = if cfg.te_only {
        let est = estimate_te(&series, &cfg.embedding, &icfg.mine)?;
        (est.te_nats, None)
    } else {
        let fit = fit_itene(&series, &cfg.embedding, &icfg)?;
        (fit.flow.te_nats, Some(fit.flow.ite_nats))
    };
    Ok(TrialRow {
        sweep_value,
        trial,
        seed,
        te_nats: te,
        ite_nats: ite,
        ste_nats: ite.map(|i| te - i),
        oracle_te_nats: oracle_te(&source, &cfg.embedding),
    })
}

/// Run every trial of every sweep point on a pool of `cfg.workers` threads.
/// Trial failures are collected rather than propagated.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let started_unix_secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let points: Vec<Option<f64>> = match &cfg.sweep {
        Some(s) => s.values.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let jobs: Vec<(Option<f64>, usize)> = points
        .iter()
        .flat_map(|&p| (0..cfg.trials).map(move |k| (p, k)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let outcomes: Vec<_> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, k)| (p, k, run_trial(cfg, p, k)))
            .collect()
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (sweep_value, trial, outcome) in outcomes {
        match outcome {
            Ok(row) => rows.push(row),
            Err(e) => failures.push(TrialFailure {
                sweep_value,
                trial,
                seed: trial_seed(cfg.base_seed, trial),
                message: e.to_string(),
            }),
        }
    }
    Ok(ExperimentReport {
        config: cfg.clone(),
        rows,
        failures,
        wall_clock_secs: clock.elapsed().as_secs_f64(),
        started_unix_secs,
    })
}

/// Median, minimum and maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Band {
    pub fn of(values: &[f64]) -> Option<Band> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mid = v.len() / 2;
        let median = if v.len() % 2 == 1 {
            v[mid]
        } else {
            0.5 * (v[mid - 1] + v[mid])
        };
        Some(Band {
            median,
            min: v[0],
            max: v[v.len() - 1],
        })
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    Band::of(values).map(|b| b.median)
}

/// Aggregate of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sweep_value: Option<f64>,
    pub trials_ok: usize,
    pub te: Band,
    pub ite: Option<Band>,
    pub ste: Option<Band>,
    pub oracle_te_nats: Option<f64>,
}

pub fn summarize(report: &ExperimentReport) -> Vec<SummaryRow> {
    report
        .sweep_points()
        .into_iter()
        .filter_map(|point| {
            let rows: Vec<&TrialRow> = report
                .rows
                .iter()
                .filter(|r| same_point(r.sweep_value, point))
                .collect();
            let te: Vec<f64> = rows.iter().map(|r| r.te_nats).collect();
            let ite: Vec<f64> = rows.iter().filter_map(|r| r.ite_nats).collect();
            let ste: Vec<f64> = rows.iter().filter_map(|r| r.ste_nats).collect();
            Some(SummaryRow {
                sweep_value: point,
                trials_ok: rows.len(),
                te: Band::of(&te)?,
                ite: Band::of(&ite),
                ste: Band::of(&ste),
                oracle_te_nats: rows.first().and_then(|r| r.oracle_te_nats),
            })
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// Contents of `trials.csv`.
pub fn trials_csv(report: &ExperimentReport) -> String {
    let bits = report.config.bits;
    let mut out = String::from("sweep_value,trial,seed,te_nats,ite_nats,ste_nats,oracle_te_nats");
    if bits {
        out.push_str(",te_bits,ite_bits,ste_bits");
    }
    out.push('\n');
    for r in &report.rows {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{}",
            cell(r.sweep_value),
            r.trial,
            r.seed,
            r.te_nats,
            cell(r.ite_nats),
            cell(r.ste_nats),
            cell(r.oracle_te_nats)
        );
        if bits {
            let _ = write!(
                out,
                ",{},{},{}",
                nats_to_bits(r.te_nats),
                cell(r.ite_nats.map(nats_to_bits)),
                cell(r.ste_nats.map(nats_to_bits))
            );
        }
        out.push('\n');
    }
    out
}

/// Contents of `summary.csv`.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("sweep_value,trials_ok");
    for est in ["te", "ite", "ste"] {
        for stat in ["median", "min", "max"] {
            let _ = write!(out, ",{est}_nats_{stat}");
        }
    }
    out.push_str(",oracle_te_nats\n");
    for r in rows {
        let _ = write!(out, "{},{}", cell(r.sweep_value), r.trials_ok);
        for band in [Some(r.te), r.ite, r.ste] {
            let _ = write!(
                out,
                ",{},{},{}",
                cell(band.map(|b| b.median)),
                cell(band.map(|b| b.min)),
                cell(band.map(|b| b.max))
            );
        }
        let _ = writeln!(out, ",{}", cell(r.oracle_te_nats));
    }
    out
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    format_version: u32,
    package: &'static str,
    package_version: &'static str,
    config: &'a ExperimentConfig,
    classifier_optimizer: &'static str,
    channel_optimizer: &'static str,
    started_unix_secs: u64,
    wall_clock_secs: f64,
    trials_ok: usize,
    failures: &'a [TrialFailure],
    status: RunStatus,
    exit_code: i32,
}

/// Write `trials.csv`, `summary.csv` and `run.json` into `dir`.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    if report.rows.is_empty() {
        return Err(Error::Empty("no successful trials to report".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, contents: &str| {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(path, e))
    };
    write("trials.csv", &trials_csv(report))?;
    write("summary.csv", &summary_csv(&summarize(report)))?;
    let status = report.status();
    let meta = RunMetadata {
        format_version: 1,
        package: env!("CARGO_PKG_NAME"),
        package_version: env!("CARGO_PKG_VERSION"),
        config: &report.config,
        classifier_optimizer: report.config.itene.mine.optimizer.name(),
        channel_optimizer: report.config.itene.phi_optimizer.name(),
        started_unix_secs: report.started_unix_secs,
        wall_clock_secs: report.wall_clock_secs,
        trials_ok: report.rows.len(),
        failures: &report.failures,
        status,
        exit_code: status.exit_code(),
    };
    let mut json = serde_json::to_string_pretty(&meta)?;
    json.push('\n');
    write("run.json", &json)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_examples() {
        let spec = QuantizeSpec::default();
        assert_eq!(quantize_returns(&[100.0, 101.0], &spec).unwrap(), vec![1.0]);
        assert_eq!(quantize_returns(&[100.0, 100.5], &spec).unwrap(), vec![0.0]);
        assert_eq!(quantize_returns(&[100.0, 99.0], &spec).unwrap(), vec![-1.0]);
    }

    #[test]
    fn quantize_is_strict_and_validates() {
        let spec = QuantizeSpec {
            up_threshold: 0.5,
            down_threshold: -0.5,
        };
        assert_eq!(
            quantize_returns(&[2.0, 3.0, 1.5], &spec).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(quantize_returns(&[1.0, 0.0], &spec).is_err());
        assert!(quantize_returns(&[1.0], &spec).is_err());
        let bad = QuantizeSpec {
            up_threshold: -0.1,
            down_threshold: 0.1,
        };
        assert!(quantize_returns(&[1.0, 2.0], &bad).is_err());
    }

    #[test]
    fn band_statistics() {
        let b = Band::of(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!((b.median, b.min, b.max), (2.0, 1.0, 3.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert!(Band::of(&[]).is_none());
    }

    #[test]
    fn kv_parsing() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_kv_text(
            "# comment\nsource = xor\nlen = 500\nnoise_std=0.1\ntrials = 2 # inline\nhidden = 8, 8\nsweep_param = len\nsweep_values = 500, 1000\n",
            Path::new("cfg"),
        )
        .unwrap();
        assert_eq!(
            cfg.source,
            Source::Xor {
                noise_std: 0.1,
                len: 500
            }
        );
        assert_eq!(cfg.trials, 2);
        assert_eq!(cfg.itene.mine.hidden_widths, vec![8, 8]);
        assert_eq!(cfg.sweep.as_ref().unwrap().values, vec![500.0, 1000.0]);
        cfg.validate().unwrap();

        let err = cfg
            .apply_kv_text("lambda = 1\n", Path::new("cfg"))
            .unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        assert!(cfg.set("bogus", "1").is_err());
        assert!(cfg.set("trials", "x").is_err());
    }

    #[test]
    fn validate_rejects_bad_configs() {
        let cfg = ExperimentConfig {
            trials: 0,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            sweep: Some(Sweep {
                param: SweepParam::Lambda,
                values: vec![f64::NAN],
            }),
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.set("source", "independent").unwrap();
        cfg.set("sweep_param", "rho").unwrap();
        cfg.set("sweep_values", "0.5").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn oracle_only_for_threshold_with_unit_memory() {
        let src = Source::Threshold {
            rho: 0.9,
            lambda: 0.0,
            len: 10,
        };
        assert!(oracle_te(&src, &EmbeddingConfig::new(1, 1)).is_some());
        assert!(oracle_te(&src, &EmbeddingConfig::new(2, 1)).is_none());
        assert!(oracle_te(
            &Source::Independent { len: 10 },
            &EmbeddingConfig::default()
        )
        .is_none());
    }

    #[test]
    fn status_from_failures() {
        let row = TrialRow {
            sweep_value: Some(1.0),
            trial: 0,
            seed: 0,
            te_nats: 0.1,
            ite_nats: None,
            ste_nats: None,
            oracle_te_nats: None,
        };
        let fail = |v| TrialFailure {
            sweep_value: Some(v),
            trial: 1,
            seed: 1,
            message: "x".into(),
        };
        let cfg = ExperimentConfig {
            sweep: Some(Sweep {
                param: SweepParam::Lambda,
                values: vec![1.0, 2.0],
            }),
            ..ExperimentConfig::default()
        };
        let mut report = ExperimentReport {
            config: cfg,
            rows: vec![
                row.clone(),
                TrialRow {
                    sweep_value: Some(2.0),
                    ..row
                },
            ],
            failures: vec![],
            wall_clock_secs: 0.0,
            started_unix_secs: 0,
        };
        assert_eq!(report.status(), RunStatus::Success);
        report.failures.push(fail(1.0));
        assert_eq!(report.status(), RunStatus::PartialFailure);
        report.rows.pop();
        report.failures.push(fail(2.0));
        assert_eq!(report.status(), RunStatus::Fatal);
        assert_eq!(RunStatus::Fatal.exit_code(), 2);
    }
}
