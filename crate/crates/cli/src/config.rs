//! Flat `key = value` run configuration.
//!
//! Values are resolved in layers: built-in defaults, then an optional
//! preset, then a config file, then command-line flags. Every layer goes
//! through [`RunConfig::set`], so a key means the same thing everywhere.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use metass_core::eval::Bins;
use metass_core::trainer::{ReductionMode, TrainConfig};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SystemKind {
    Benchmark,
    Linear,
}

impl FromStr for SystemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "benchmark" => Ok(SystemKind::Benchmark),
            "linear" => Ok(SystemKind::Linear),
            _ => Err(format!("unknown system `{s}` (expected benchmark or linear)")),
        }
    }
}

impl SystemKind {
    fn as_str(self) -> &'static str {
        match self {
            SystemKind::Benchmark => "benchmark",
            SystemKind::Linear => "linear",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(format!("unknown precision `{s}` (expected f32 or f64)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Table-scale sizes.
    Paper,
    /// Smaller data for quick runs: train 50k, val 5k, S = N = 1000.
    Desk,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            _ => Err(format!("unknown preset `{s}` (expected paper or desk)")),
        }
    }
}

/// Every setting any subcommand reads.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub system: SystemKind,
    pub n_train: usize,
    pub n_val: usize,
    pub ensemble_s: usize,
    pub ensemble_n: usize,
    pub transient: usize,
    pub input_std: f64,
    pub train: TrainConfig,
    pub precision: Precision,
    pub eval_burn_in: usize,
    /// Vasicek window; `None` means `⌊√S⌋`.
    pub vasicek_window: Option<usize>,
    pub times: Vec<usize>,
    pub bins: Bins,
    pub nz_values: Vec<usize>,
    /// Worker threads; `None` defers to `METASS_THREADS`, then all cores.
    pub threads: Option<usize>,
    pub deterministic: bool,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub model: PathBuf,
    pub ensemble: PathBuf,
    pub input: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            system: SystemKind::Benchmark,
            n_train: 300_000,
            n_val: 10_000,
            ensemble_s: 5000,
            ensemble_n: 4000,
            transient: 100,
            input_std: 2.0,
            train: TrainConfig {
                seed: 1,
                ..TrainConfig::default()
            },
            precision: Precision::F64,
            eval_burn_in: 10,
            vasicek_window: None,
            times: vec![50, 300, 1200],
            bins: Bins::Auto,
            nz_values: vec![2, 3, 4],
            threads: None,
            deterministic: false,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            model: PathBuf::from("out/model.mss"),
            ensemble: PathBuf::from("data/ensemble.csv"),
            input: PathBuf::from("input.csv"),
        }
    }
}

/// Keys in the order `--print-config` writes them.
pub const KEYS: &[&str] = &[
    "seed",
    "system",
    "n_train",
    "n_val",
    "ensemble_s",
    "ensemble_n",
    "transient",
    "input_std",
    "n_z",
    "n_normals",
    "n_layers",
    "n_hidden",
    "activation",
    "section_len",
    "burn_in",
    "batch_size",
    "learning_rate",
    "max_epochs",
    "patience",
    "chunk_size",
    "reduction",
    "max_wall_secs",
    "precision",
    "eval_burn_in",
    "vasicek_window",
    "times",
    "bins",
    "nz_values",
    "threads",
    "deterministic",
    "data_dir",
    "out_dir",
    "model",
    "ensemble",
    "input",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| CliError::Usage(format!("invalid value `{value}` for `{key}`: {e}")))
}

fn parse_auto<T: FromStr>(key: &str, value: &str, auto: &str) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    if value == auto {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, CliError> {
    value
        .split(',')
        .map(|v| parse::<usize>(key, v.trim()))
        .collect()
}

fn join(xs: &[usize]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let t = &mut self.train;
        match key {
            "seed" => {
                self.seed = parse(key, value)?;
                t.seed = self.seed;
            }
            "system" => self.system = parse(key, value)?,
            "n_train" => self.n_train = parse(key, value)?,
            "n_val" => self.n_val = parse(key, value)?,
            "ensemble_s" => self.ensemble_s = parse(key, value)?,
            "ensemble_n" => self.ensemble_n = parse(key, value)?,
            "transient" => self.transient = parse(key, value)?,
            "input_std" => self.input_std = parse(key, value)?,
            "n_z" => t.n_z = parse(key, value)?,
            "n_normals" => t.n_normals = parse(key, value)?,
            "n_layers" => t.n_layers = parse(key, value)?,
            "n_hidden" => t.n_hidden = parse(key, value)?,
            "activation" => t.activation = parse(key, value)?,
            "section_len" => t.section_len = parse(key, value)?,
            "burn_in" => t.burn_in = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "max_epochs" => t.max_epochs = parse(key, value)?,
            "patience" => t.patience = parse(key, value)?,
            "chunk_size" => t.chunk_size = parse(key, value)?,
            "reduction" => {
                t.reduction = match value {
                    "ordered" => ReductionMode::Ordered,
                    "unordered" => ReductionMode::Unordered,
                    _ => {
                        return Err(CliError::Usage(format!(
                            "invalid value `{value}` for `reduction` (expected ordered or unordered)"
                        )))
                    }
                }
            }
            "max_wall_secs" => t.max_wall_secs = parse_auto(key, value, "none")?,
            "precision" => self.precision = parse(key, value)?,
            "eval_burn_in" => self.eval_burn_in = parse(key, value)?,
            "vasicek_window" => self.vasicek_window = parse_auto(key, value, "auto")?,
            "times" => self.times = parse_list(key, value)?,
            "bins" => self.bins = parse(key, value)?,
            "nz_values" => self.nz_values = parse_list(key, value)?,
            "threads" => self.threads = parse_auto(key, value, "auto")?,
            "deterministic" => self.deterministic = parse(key, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "model" => self.model = PathBuf::from(value),
            "ensemble" => self.ensemble = PathBuf::from(value),
            "input" => self.input = PathBuf::from(value),
            _ => return Err(CliError::Usage(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Textual value of `key`, in the form [`RunConfig::set`] accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let path = |p: &Path| p.display().to_string();
        Some(match key {
            "seed" => self.seed.to_string(),
            "system" => self.system.as_str().to_string(),
            "n_train" => self.n_train.to_string(),
            "n_val" => self.n_val.to_string(),
            "ensemble_s" => self.ensemble_s.to_string(),
            "ensemble_n" => self.ensemble_n.to_string(),
            "transient" => self.transient.to_string(),
            "input_std" => self.input_std.to_string(),
            "n_z" => t.n_z.to_string(),
            "n_normals" => t.n_normals.to_string(),
            "n_layers" => t.n_layers.to_string(),
            "n_hidden" => t.n_hidden.to_string(),
            "activation" => t.activation.to_string(),
            "section_len" => t.section_len.to_string(),
            "burn_in" => t.burn_in.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "learning_rate" => t.learning_rate.to_string(),
            "max_epochs" => t.max_epochs.to_string(),
            "patience" => t.patience.to_string(),
            "chunk_size" => t.chunk_size.to_string(),
            "reduction" => match t.reduction {
                ReductionMode::Ordered => "ordered".into(),
                ReductionMode::Unordered => "unordered".into(),
            },
            "max_wall_secs" => t.max_wall_secs.map_or("none".into(), |v| v.to_string()),
            "precision" => match self.precision {
                Precision::F32 => "f32".into(),
                Precision::F64 => "f64".into(),
            },
            "eval_burn_in" => self.eval_burn_in.to_string(),
            "vasicek_window" => self.vasicek_window.map_or("auto".into(), |v| v.to_string()),
            "times" => join(&self.times),
            "bins" => match self.bins {
                Bins::Auto => "auto".into(),
                Bins::Count(n) => n.to_string(),
            },
            "nz_values" => join(&self.nz_values),
            "threads" => self.threads.map_or("auto".into(), |v| v.to_string()),
            "deterministic" => self.deterministic.to_string(),
            "data_dir" => path(&self.data_dir),
            "out_dir" => path(&self.out_dir),
            "model" => path(&self.model),
            "ensemble" => path(&self.ensemble),
            "input" => path(&self.input),
            _ => return None,
        })
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        match preset {
            Preset::Paper => {
                let d = RunConfig::default();
                self.n_train = d.n_train;
                self.n_val = d.n_val;
                self.ensemble_s = d.ensemble_s;
                self.ensemble_n = d.ensemble_n;
            }
            Preset::Desk => {
                self.n_train = 50_000;
                self.n_val = 5_000;
                self.ensemble_s = 1000;
                self.ensemble_n = 1000;
            }
        }
    }

    /// Applies the lines of a config file. Blank lines and lines starting
    /// with `#` are ignored; a repeated key keeps its last value.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("config line {}: expected `key = value`", i + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| CliError::Usage(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// Renders every key; parsing the result reproduces this config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = self.get(key).expect("every listed key has a value");
            writeln!(out, "{key} = {value}").expect("writing to a String");
        }
        out
    }

    /// Cross-field checks that a single `set` cannot make.
    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.deterministic && self.train.max_wall_secs.is_some() {
            return Err(CliError::Usage(
                "max_wall_secs makes training time-dependent; it cannot be combined with deterministic mode".into(),
            ));
        }
        if self.threads == Some(0) {
            return Err(CliError::Usage("threads must be >= 1".into()));
        }
        if self.nz_values.is_empty() || self.nz_values.contains(&0) {
            return Err(CliError::Usage("nz_values must be a list of positive sizes".into()));
        }
        if !(self.input_std >= 0.0 && self.input_std.is_finite()) {
            return Err(CliError::Usage("input_std must be finite and >= 0".into()));
        }
        Ok(())
    }
}
