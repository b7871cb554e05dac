//! Labeled corpora: WAV I/O, clip standardization and noise augmentation,
//! manifests and seeded train/validation/test splits.

mod audio;
mod labels;
mod manifest;
mod split;
mod wav;

use std::path::PathBuf;

pub use audio::{add_gaussian_noise, standardize, AudioClip, TARGET_DURATION_S, TARGET_SAMPLE_RATE};
pub use labels::{Accent, AgeGroup, Gender};
pub use manifest::{load_manifest, parse_manifest, write_manifest, SampleRecord, MANIFEST_HEADER};
pub use split::{split_dataset, DatasetSplit, RefitMode};
pub use wav::{encode_wav, load_wav, quantize_pcm16, write_wav, WavFormat};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed WAV: {msg}")]
    MalformedWav { path: PathBuf, msg: String },
    #[error("{path}: unsupported WAV {field} = {value}")]
    UnsupportedWav {
        path: PathBuf,
        field: &'static str,
        value: u32,
    },
    #[error("empty audio clip")]
    EmptyClip,
    #[error("invalid clip: {0}")]
    InvalidClip(String),
    #[error("noise standard deviation must be non-negative, got {0}")]
    NegativeSigma(f64),
    #[error("manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },
    #[error("manifest {path}, row {row}: {msg}")]
    ManifestRow { path: PathBuf, row: usize, msg: String },
    #[error("need at least 3 records to split, got {0}")]
    TooFewRecords(usize),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;
