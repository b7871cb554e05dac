use super::{DspConfig, DspError, Matrix, Result};

/// `mel(f) = c * log10(1 + f / 700)`.
pub fn hz_to_mel(f: f64, mel_constant: f64) -> Result<f64> {
    if f < 0.0 || f.is_nan() {
        return Err(DspError::NegativeFrequency(f));
    }
    Ok(mel_constant * (1.0 + f / 700.0).log10())
}

pub fn mel_to_hz(m: f64, mel_constant: f64) -> f64 {
    700.0 * (10f64.powf(m / mel_constant) - 1.0)
}

/// Filter edge/center frequencies in Hz: `n_mels + 2` points uniformly
/// spaced on the mel axis between `fmin` and `fmax`.
pub fn mel_points_hz(cfg: &DspConfig, sample_rate: u32) -> Result<Vec<f64>> {
    let fmax = cfg.fmax_for(sample_rate);
    let lo = hz_to_mel(cfg.fmin, cfg.mel_constant)?;
    let hi = hz_to_mel(fmax, cfg.mel_constant)?;
    let n = cfg.n_mels + 2;
    Ok((0..n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n - 1) as f64, cfg.mel_constant))
        .collect())
}

/// Triangular filters, area-normalized so filter `m` is scaled by
/// `2 / (hz[m + 2] - hz[m])`. Shape `n_mels x (n_fft / 2 + 1)`.
pub fn mel_filterbank(cfg: &DspConfig, sample_rate: u32) -> Result<Matrix> {
    cfg.validate()?;
    let hz = mel_points_hz(cfg, sample_rate)?;
    let bins = cfg.n_fft / 2 + 1;
    let bin_hz: Vec<f64> = (0..bins)
        .map(|k| k as f64 * sample_rate as f64 / cfg.n_fft as f64)
        .collect();
    let mut fb = Matrix::zeros(cfg.n_mels, bins);
    for m in 0..cfg.n_mels {
        let (left, center, right) = (hz[m], hz[m + 1], hz[m + 2]);
        let norm = 2.0 / (right - left);
        let row = fb.row_mut(m);
        for (w, &f) in row.iter_mut().zip(&bin_hz) {
            let rise = (f - left) / (center - left);
            let fall = (right - f) / (right - center);
            *w = rise.min(fall).max(0.0) * norm;
        }
        if !row.iter().any(|&w| w > 0.0) {
            return Err(DspError::EmptyFilter {
                index: m,
                n_mels: cfg.n_mels,
                n_fft: cfg.n_fft,
            });
        }
    }
    Ok(fb)
}

/// Non-zero span of each filter row, for a sparse mel projection.
#[derive(Debug, Clone)]
pub(crate) struct SparseFilterbank {
    spans: Vec<(usize, Vec<f64>)>,
}

impl SparseFilterbank {
    pub fn from_dense(fb: &Matrix) -> Self {
        let spans = (0..fb.rows())
            .map(|m| {
                let row = fb.row(m);
                let first = row.iter().position(|&w| w > 0.0).unwrap_or(0);
                let last = row.iter().rposition(|&w| w > 0.0).unwrap_or(0);
                (first, row[first..=last].to_vec())
            })
            .collect();
        Self { spans }
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, (start, w)) in out.iter_mut().zip(&self.spans) {
            *o = w.iter().zip(&power[*start..]).map(|(a, b)| a * b).sum();
        }
    }
}
