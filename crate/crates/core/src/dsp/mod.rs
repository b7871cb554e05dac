//! MFCC feature extraction.
//!
//! Per channel: pre-emphasis, centered framing, windowing, power spectrum,
//! mel filterbank, log compression and an orthonormal DCT-II over the mel
//! axis. Feature maps are cached on disk in the `MFC1` format.

mod cache;
mod fft;
mod frames;
mod mel;
mod mfcc;

use serde::{Deserialize, Serialize};

pub use cache::{read_feature_cache, write_feature_cache, FEATURE_MAGIC};
pub use fft::{fft, Radix2Fft};
pub use frames::{apply_window, frame_signal, power_spectrum, pre_emphasis, WindowKind};
pub use mel::{hz_to_mel, mel_filterbank, mel_points_hz, mel_to_hz};
pub use mfcc::{dct_ii_ortho, dct_iii_ortho, mfcc, MfccExtractor, LOG_FLOOR};

#[derive(Debug, thiserror::Error)]
pub enum DspError {
    #[error("invalid DSP configuration: {0}")]
    InvalidConfig(String),
    #[error("empty signal")]
    EmptySignal,
    #[error("FFT size {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("unknown window {0:?} (expected \"hann\" or \"rectangular\")")]
    UnknownWindow(String),
    #[error("negative frequency {0} Hz")]
    NegativeFrequency(f64),
    #[error("mel filter {index} of {n_mels} covers no FFT bin at n_fft = {n_fft}")]
    EmptyFilter { index: usize, n_mels: usize, n_fft: usize },
    #[error("feature cache: bad magic {0:?}, expected \"MFC1\"")]
    BadMagic([u8; 4]),
    #[error("feature cache: truncated, header promises {expected} bytes but file has {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("feature cache: dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DspError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DspConfig {
    /// Pre-emphasis factor.
    pub alpha: f64,
    pub frame_len: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    /// Multiplier in `mel(f) = c * log10(1 + f / 700)`.
    pub mel_constant: f64,
    pub fmin: f64,
    /// Upper filterbank edge; `None` means Nyquist.
    pub fmax: Option<f64>,
    pub window: WindowKind,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            alpha: 0.97,
            frame_len: 2048,
            hop: 512,
            n_fft: 2048,
            n_mels: 128,
            n_mfcc: 64,
            mel_constant: 2995.0,
            fmin: 0.0,
            fmax: None,
            window: WindowKind::Hann,
        }
    }
}

impl DspConfig {
    pub fn fmax_for(&self, sample_rate: u32) -> f64 {
        self.fmax.unwrap_or(sample_rate as f64 / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DspError::InvalidConfig(m));
        if !self.n_fft.is_power_of_two() {
            return bad(format!("n_fft {} is not a power of two", self.n_fft));
        }
        if self.frame_len == 0 || self.n_fft < self.frame_len {
            return bad(format!("need 1 <= frame_len ({}) <= n_fft ({})", self.frame_len, self.n_fft));
        }
        if self.hop == 0 {
            return bad("hop must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1)", self.alpha));
        }
        if self.n_mfcc == 0 || self.n_mfcc > self.n_mels {
            return bad(format!("need 1 <= n_mfcc ({}) <= n_mels ({})", self.n_mfcc, self.n_mels));
        }
        if self.mel_constant <= 0.0 {
            return bad(format!("mel_constant {} must be positive", self.mel_constant));
        }
        if self.fmin < 0.0 {
            return bad(format!("fmin {} is negative", self.fmin));
        }
        if let Some(fmax) = self.fmax {
            if self.fmin >= fmax {
                return bad(format!("fmin {} must be below fmax {fmax}", self.fmin));
            }
        }
        Ok(())
    }
}

/// Dense row-major `f64` matrix used along the DSP chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// MFCC spectrogram of one clip, laid out `(channels, coeffs, frames)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub source: String,
    pub channels: usize,
    pub coeffs: usize,
    pub frames: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.coeffs, self.frames]
    }

    pub fn at(&self, channel: usize, coeff: usize, frame: usize) -> f32 {
        self.data[(channel * self.coeffs + coeff) * self.frames + frame]
    }
}
