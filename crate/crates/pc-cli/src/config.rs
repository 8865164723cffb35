//! Flat key=value experiment configuration with CLI flag overrides.
//!
//! The file format is one `key = value` pair per line; `#` starts a comment.
//! Every key has a documented default, so an empty (or absent) file is a
//! valid configuration. Unknown keys are rejected.
//!
//! | key          | default            | meaning                                          |
//! |--------------|--------------------|--------------------------------------------------|
//! | `task`       | `classify`         | `classify`, `compress`, `bp-compare`, `kf-track`, `gradcheck` |
//! | `dims`       | (task-derived)     | comma list of layer widths, bottom..top          |
//! | `activation` | `tanh`             | `identity`, `tanh`, `logistic`, `rectifier`      |
//! | `step`       | `0.1`              | inference (Euler) step size                      |
//! | `steps`      | (task-derived)     | inference steps per batch (classify 10, compress 35); trajectory length for `kf-track` (100) |
//! | `eta`        | `0.02`             | weight learning rate                             |
//! | `batch_size` | `32`               | mini-batch size                                  |
//! | `epochs`     | `10`               | training epochs                                  |
//! | `seed`       | `0`                | master seed for all randomness                   |
//! | `data`       | `data`             | dataset directory                                |
//! | `dataset`    | `auto`             | `auto`, `mnist`, `blobs`                         |
//! | `classes`    | `4`                | blob generator: number of classes                |
//! | `per_class`  | `100`              | blob generator: samples per class                |
//! | `dim`        | `16`               | blob generator: feature dimension                |
//! | `spread`     | `0.02`             | blob generator: cluster standard deviation       |
//! | `lambdas`    | `1,10,100,1000`    | precision scales for `bp-compare`                |
//! | `out`        | `metrics.csv`      | metric CSV output path                           |
//!
//! Precedence for the data directory: `--data` flag, then the `PC_DATA_DIR`
//! environment variable, then the `data` key.

use std::path::{Path, PathBuf};

use pc_core::Activation;

use crate::{CliError, Result};

/// Which experiment driver to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Classify,
    Compress,
    BpCompare,
    KfTrack,
    GradCheck,
}

impl TaskKind {
    pub fn tag(self) -> &'static str {
        match self {
            TaskKind::Classify => "classify",
            TaskKind::Compress => "compress",
            TaskKind::BpCompare => "bp-compare",
            TaskKind::KfTrack => "kf-track",
            TaskKind::GradCheck => "gradcheck",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "classify" => Some(TaskKind::Classify),
            "compress" => Some(TaskKind::Compress),
            "bp-compare" => Some(TaskKind::BpCompare),
            "kf-track" => Some(TaskKind::KfTrack),
            "gradcheck" => Some(TaskKind::GradCheck),
            _ => None,
        }
    }
}

/// Which dataset the training tasks consume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// MNIST-style IDX files when present in the data directory, blobs
    /// otherwise.
    Auto,
    Mnist,
    Blobs,
}

/// Fully resolved experiment settings; see the module docs for defaults.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    /// Layer widths bottom..top; empty means task-derived.
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub step: f64,
    /// `None` means the task default (classify 10, compress 35, kf-track 100).
    pub steps: Option<usize>,
    pub eta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub data_dir: PathBuf,
    pub dataset: DatasetKind,
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
    pub lambdas: Vec<f64>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: TaskKind::Classify,
            dims: Vec::new(),
            activation: Activation::Tanh,
            step: 0.1,
            steps: None,
            eta: 0.02,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            data_dir: PathBuf::from("data"),
            dataset: DatasetKind::Auto,
            classes: 4,
            per_class: 100,
            dim: 16,
            spread: 0.02,
            lambdas: vec![1.0, 10.0, 100.0, 1000.0],
            out: PathBuf::from("metrics.csv"),
        }
    }
}

/// CLI flag values that take precedence over the file contents.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub steps: Option<usize>,
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("bad value for {key}: {value:?}")))
}

impl ExperimentConfig {
    /// Parse the flat key=value text; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "task" => {
                    cfg.task = TaskKind::from_tag(value)
                        .ok_or_else(|| CliError::Config(format!("unknown task {value:?}")))?;
                }
                "dims" => {
                    cfg.dims = value
                        .split(',')
                        .map(|v| parse_num("dims", v.trim()))
                        .collect::<Result<_>>()?;
                }
                "activation" => {
                    cfg.activation = Activation::from_tag(value).ok_or_else(|| {
                        CliError::Config(format!("unknown activation {value:?}"))
                    })?;
                }
                "step" => cfg.step = parse_num(key, value)?,
                "steps" => cfg.steps = Some(parse_num(key, value)?),
                "eta" => cfg.eta = parse_num(key, value)?,
                "batch_size" => cfg.batch_size = parse_num(key, value)?,
                "epochs" => cfg.epochs = parse_num(key, value)?,
                "seed" => cfg.seed = parse_num(key, value)?,
                "data" => cfg.data_dir = PathBuf::from(value),
                "dataset" => {
                    cfg.dataset = match value {
                        "auto" => DatasetKind::Auto,
                        "mnist" => DatasetKind::Mnist,
                        "blobs" => DatasetKind::Blobs,
                        _ => {
                            return Err(CliError::Config(format!(
                                "unknown dataset {value:?}"
                            )))
                        }
                    };
                }
                "classes" => cfg.classes = parse_num(key, value)?,
                "per_class" => cfg.per_class = parse_num(key, value)?,
                "dim" => cfg.dim = parse_num(key, value)?,
                "spread" => cfg.spread = parse_num(key, value)?,
                "lambdas" => {
                    cfg.lambdas = value
                        .split(',')
                        .map(|v| parse_num("lambdas", v.trim()))
                        .collect::<Result<_>>()?;
                }
                "out" => cfg.out = PathBuf::from(value),
                _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
            }
        }
        cfg.check()?;
        Ok(cfg)
    }

    /// Load from a file; the file must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    /// Apply flag overrides and the `PC_DATA_DIR` environment variable
    /// (flag beats env beats file).
    pub fn apply_overrides(&mut self, ov: &Overrides) {
        if let Ok(env_dir) = std::env::var("PC_DATA_DIR") {
            if !env_dir.is_empty() {
                self.data_dir = PathBuf::from(env_dir);
            }
        }
        if let Some(seed) = ov.seed {
            self.seed = seed;
        }
        if let Some(data) = &ov.data {
            self.data_dir = data.clone();
        }
        if let Some(out) = &ov.out {
            self.out = out.clone();
        }
        if let Some(epochs) = ov.epochs {
            self.epochs = epochs;
        }
        if let Some(steps) = ov.steps {
            self.steps = Some(steps);
        }
    }

    /// Inference steps (or trajectory length) with task defaults filled in.
    pub fn effective_steps(&self) -> usize {
        self.steps.unwrap_or(match self.task {
            TaskKind::Classify => 10,
            TaskKind::Compress => 35,
            TaskKind::KfTrack => 100,
            TaskKind::BpCompare | TaskKind::GradCheck => 200,
        })
    }

    fn check(&self) -> Result<()> {
        if self.step <= 0.0 || self.eta <= 0.0 {
            return Err(CliError::Config("step and eta must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(CliError::Config(
                "batch_size and epochs must be positive".into(),
            ));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return Err(CliError::Config("dims must be positive".into()));
        }
        if self.lambdas.is_empty() {
            return Err(CliError::Config("lambdas must be non-empty".into()));
        }
        Ok(())
    }
}
