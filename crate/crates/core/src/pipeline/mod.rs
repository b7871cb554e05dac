//! End-to-end commands over files on disk: preprocess, extract, train,
//! evaluate, predict and inspect.

mod extract;
mod preprocess;
mod run;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetError;
use crate::dsp::{DspConfig, DspError};
use crate::eval::EvalError;
use crate::models::ModelError;
use crate::train::{TrainConfig, TrainError};

pub use extract::{cache_path_for, extract, load_feature_set, ExtractSummary};
pub use preprocess::{preprocess, PreprocessOptions, PreprocessSummary};
pub use run::{evaluate_checkpoint, format_predictions, inspect, predict, train, HeadPrediction, TrainSummary};

/// Environment variable naming the feature cache root.
pub const CACHE_ENV: &str = "ACCENT_CACHE_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad flags, configuration or arguments.
    Usage,
    /// Missing or malformed input data.
    Data,
    /// A violated internal invariant.
    Internal,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Internal => 3,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{msg}")]
pub struct PipelineError {
    pub kind: ErrorKind,
    pub msg: String,
}

impl PipelineError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Usage, msg: msg.into() }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Data, msg: msg.into() }
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Internal, msg: msg.into() }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl From<DatasetError> for PipelineError {
    fn from(e: DatasetError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<DspError> for PipelineError {
    fn from(e: DspError) -> Self {
        match e {
            DspError::InvalidConfig(_) | DspError::UnknownWindow(_) | DspError::NotPowerOfTwo(_) => Self::usage(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<ModelError> for PipelineError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::UnknownModel { .. } => Self::usage(e.to_string()),
            ModelError::State { .. } | ModelError::InputShape { .. } => Self::data(e.to_string()),
            _ => Self::internal(e.to_string()),
        }
    }
}

impl From<TrainError> for PipelineError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_)
            | TrainError::BadWeights(_)
            | TrainError::WeightCount { .. }
            | TrainError::UnknownTask(_)
            | TrainError::ScheduleMismatch { .. } => Self::usage(e.to_string()),
            TrainError::NonFiniteLoss { .. } | TrainError::NonFiniteGradient(_) | TrainError::Tensor(_) => {
                Self::internal(e.to_string())
            }
            TrainError::Model(m) => m.into(),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Train(t) => t.into(),
            EvalError::Model(m) => m.into(),
            EvalError::NegativeBeta(_) => Self::usage(e.to_string()),
            EvalError::Empty => Self::data(e.to_string()),
            _ => Self::internal(e.to_string()),
        }
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// Dataset subsets written by `preprocess`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
    /// Every standardized clip without augmented copies.
    All,
}

impl Split {
    pub fn manifest_name(self) -> &'static str {
        match self {
            Split::Train => "train.csv",
            Split::Validation => "validation.csv",
            Split::Test => "test.csv",
            Split::All => "all.csv",
        }
    }
}

impl FromStr for Split {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            "all" => Ok(Split::All),
            _ => Err(PipelineError::usage(format!(
                "unknown split {s:?} (expected train, validation, test or all)"
            ))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
            Split::All => "all",
        })
    }
}

/// Everything a run needs. Loaded from TOML; flags override file values,
/// which override defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: String,
    /// Drives the split, augmentation noise, initialization and shuffling.
    pub seed: u64,
    /// Standardized audio and split manifests.
    pub data_dir: PathBuf,
    /// Feature cache root; falls back to `ACCENT_CACHE_DIR`, then `cache`.
    pub cache_dir: Option<PathBuf>,
    pub runs_dir: PathBuf,
    pub reports_dir: PathBuf,
    /// Noisy copies per training clip.
    pub augment: usize,
    pub noise_sigma_lsb: f64,
    pub beta: f64,
    pub dsp: DspConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: "mpsa".into(),
            seed: 0,
            data_dir: "data".into(),
            cache_dir: None,
            runs_dir: "runs".into(),
            reports_dir: "reports".into(),
            augment: 0,
            noise_sigma_lsb: 10.0,
            beta: 0.5,
            dsp: DspConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PipelineError::usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::usage(format!("config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn cache_root(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("cache"))
    }

    /// Training configuration with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dsp.validate()?;
        self.train_config().validate()?;
        crate::models::schedule_for(&self.model)?;
        if !(self.noise_sigma_lsb >= 0.0) {
            return Err(PipelineError::usage(format!("noise_sigma_lsb {} is negative", self.noise_sigma_lsb)));
        }
        if !(self.beta >= 0.0) {
            return Err(PipelineError::usage(format!("beta {} is negative", self.beta)));
        }
        Ok(())
    }

    /// Hex SHA-256 over every field that affects outputs.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.train.seed = self.seed;
        crate::train::config_hash(&c)
    }
}
