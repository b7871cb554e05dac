use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{DspError, Matrix, Radix2Fft, Result};

/// First-order high-pass: `y[0] = x[0]`, `y[n] = x[n] - alpha * x[n-1]`.
pub fn pre_emphasis(signal: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(signal.len());
    if let Some(&first) = signal.first() {
        out.push(first);
    }
    out.extend(signal.windows(2).map(|w| w[1] - alpha * w[0]));
    out
}

/// Mirror index into `[0, len)` without repeating the edge sample
/// (`x[-1] = x[1]`), folding repeatedly for pads longer than the signal.
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Centered framing: the signal is reflection-padded by `frame_len / 2` on
/// both sides and frame `i` starts at `i * hop` in the padded signal, so its
/// center sits on original sample `i * hop`. Yields `floor(len / hop)` frames.
pub fn frame_signal(signal: &[f64], frame_len: usize, hop: usize) -> Result<Matrix> {
    if signal.is_empty() {
        return Err(DspError::EmptySignal);
    }
    if frame_len == 0 || hop == 0 {
        return Err(DspError::InvalidConfig(format!(
            "frame_len ({frame_len}) and hop ({hop}) must be at least 1"
        )));
    }
    let n_frames = signal.len() / hop;
    let pad = (frame_len / 2) as isize;
    let mut m = Matrix::zeros(n_frames, frame_len);
    for f in 0..n_frames {
        let row = m.row_mut(f);
        let start = (f * hop) as isize - pad;
        for (k, v) in row.iter_mut().enumerate() {
            *v = signal[reflect(start + k as isize, signal.len())];
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hann,
    Rectangular,
}

impl FromStr for WindowKind {
    type Err = DspError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hann" => Ok(Self::Hann),
            "rectangular" | "rect" | "boxcar" => Ok(Self::Rectangular),
            other => Err(DspError::UnknownWindow(other.to_string())),
        }
    }
}

impl WindowKind {
    /// Symmetric window of length `len`.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Self::Rectangular => vec![1.0; len],
            Self::Hann if len < 2 => vec![1.0; len],
            Self::Hann => {
                let denom = (len - 1) as f64;
                (0..len)
                    .map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / denom).cos())
                    .collect()
            }
        }
    }
}

pub fn apply_window(frames: &Matrix, kind: WindowKind) -> Result<Matrix> {
    if frames.rows() == 0 || frames.cols() == 0 {
        return Err(DspError::EmptySignal);
    }
    let w = kind.coefficients(frames.cols());
    let mut out = frames.clone();
    for r in 0..out.rows() {
        for (v, c) in out.row_mut(r).iter_mut().zip(&w) {
            *v *= c;
        }
    }
    Ok(out)
}

/// `|FFT|^2` of every frame (zero-padded to `n_fft`) on bins `0..=n_fft/2`.
pub fn power_spectrum(frames: &Matrix, n_fft: usize) -> Result<Matrix> {
    let plan = Radix2Fft::new(n_fft)?;
    power_spectrum_with(&plan, frames)
}

pub(crate) fn power_spectrum_with(plan: &Radix2Fft, frames: &Matrix) -> Result<Matrix> {
    let n_fft = plan.len();
    if frames.cols() > n_fft {
        return Err(DspError::InvalidConfig(format!(
            "frame length {} exceeds n_fft {n_fft}",
            frames.cols()
        )));
    }
    let bins = n_fft / 2 + 1;
    let mut out = Matrix::zeros(frames.rows(), bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for r in 0..frames.rows() {
        buf.fill(Complex64::new(0.0, 0.0));
        for (b, &v) in buf.iter_mut().zip(frames.row(r)) {
            b.re = v;
        }
        plan.process(&mut buf);
        for (o, b) in out.row_mut(r).iter_mut().zip(&buf) {
            *o = b.norm_sqr();
        }
    }
    Ok(out)
}
