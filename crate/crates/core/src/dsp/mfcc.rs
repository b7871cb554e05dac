use super::frames::power_spectrum_with;
use super::mel::SparseFilterbank;
use super::{
    apply_window, frame_signal, mel_filterbank, pre_emphasis, DspConfig, DspError, FeatureMap, Matrix,
    Radix2Fft, Result,
};
use crate::dataset::AudioClip;

/// Added before the log so silent frames stay finite.
pub const LOG_FLOOR: f64 = 1e-10;

fn dct_scale(k: usize, n: usize) -> f64 {
    if k == 0 {
        (1.0 / n as f64).sqrt()
    } else {
        (2.0 / n as f64).sqrt()
    }
}

fn dct_basis(k: usize, i: usize, n: usize) -> f64 {
    (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos()
}

/// Orthonormal DCT-II, first `keep` coefficients.
pub fn dct_ii_ortho(x: &[f64], keep: usize) -> Vec<f64> {
    let n = x.len();
    (0..keep.min(n))
        .map(|k| dct_scale(k, n) * x.iter().enumerate().map(|(i, v)| v * dct_basis(k, i, n)).sum::<f64>())
        .collect()
}

/// Inverse of [`dct_ii_ortho`] for a full-length coefficient vector.
pub fn dct_iii_ortho(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    (0..n)
        .map(|i| (0..n).map(|k| dct_scale(k, n) * c[k] * dct_basis(k, i, n)).sum())
        .collect()
}

/// Reusable MFCC pipeline for one `(config, sample_rate)` pair.
pub struct MfccExtractor {
    cfg: DspConfig,
    plan: Radix2Fft,
    filters: SparseFilterbank,
    /// `n_mfcc x n_mels` DCT-II rows.
    dct: Matrix,
}

impl MfccExtractor {
    pub fn new(cfg: &DspConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate()?;
        let fb = mel_filterbank(cfg, sample_rate)?;
        let n = cfg.n_mels;
        let mut dct = Matrix::zeros(cfg.n_mfcc, n);
        for k in 0..cfg.n_mfcc {
            for (i, v) in dct.row_mut(k).iter_mut().enumerate() {
                *v = dct_scale(k, n) * dct_basis(k, i, n);
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            plan: Radix2Fft::new(cfg.n_fft)?,
            filters: SparseFilterbank::from_dense(&fb),
            dct,
        })
    }

    /// `n_mfcc x n_frames` coefficients of one channel.
    pub fn channel(&self, signal: &[f64]) -> Result<Matrix> {
        let cfg = &self.cfg;
        let emphasized = pre_emphasis(signal, cfg.alpha);
        let frames = frame_signal(&emphasized, cfg.frame_len, cfg.hop)?;
        let n_frames = frames.rows();
        let mut out = Matrix::zeros(cfg.n_mfcc, n_frames);
        if n_frames == 0 {
            return Ok(out);
        }
        let windowed = apply_window(&frames, cfg.window)?;
        let power = power_spectrum_with(&self.plan, &windowed)?;
        let mut mel = vec![0.0; cfg.n_mels];
        for t in 0..n_frames {
            self.filters.apply(power.row(t), &mut mel);
            for v in mel.iter_mut() {
                *v = (*v + LOG_FLOOR).ln();
            }
            for k in 0..cfg.n_mfcc {
                let c: f64 = self.dct.row(k).iter().zip(&mel).map(|(a, b)| a * b).sum();
                out.row_mut(k)[t] = c;
            }
        }
        Ok(out)
    }

    pub fn extract(&self, clip: &AudioClip, source: &str) -> Result<FeatureMap> {
        if clip.is_empty() {
            return Err(DspError::EmptySignal);
        }
        let mut data = Vec::new();
        let mut frames = 0;
        for ch in clip.channels() {
            let signal: Vec<f64> = ch.iter().map(|&v| v as f64).collect();
            let m = self.channel(&signal)?;
            frames = m.cols();
            data.extend(m.as_slice().iter().map(|&v| v as f32));
        }
        Ok(FeatureMap {
            source: source.to_string(),
            channels: clip.num_channels(),
            coeffs: self.cfg.n_mfcc,
            frames,
            data,
        })
    }
}

/// Full MFCC feature map of a clip, one plane per audio channel.
pub fn mfcc(clip: &AudioClip, cfg: &DspConfig) -> Result<FeatureMap> {
    MfccExtractor::new(cfg, clip.sample_rate())?.extract(clip, "")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dct_round_trip_reconstructs_full_vector() {
        let x: Vec<f64> = (0..128).map(|i| ((i * 7919) % 113) as f64 / 10.0 - 5.0).collect();
        let c = dct_ii_ortho(&x, 128);
        let back = dct_iii_ortho(&c);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn silent_clip_gives_identical_frames() {
        let clip = AudioClip::new(vec![vec![0.0; 44100]; 2], 44100).unwrap();
        let fm = mfcc(&clip, &DspConfig::default()).unwrap();
        assert_eq!(fm.shape(), [2, 64, 44100 / 512]);
        let mel = vec![LOG_FLOOR.ln(); 128];
        let want = dct_ii_ortho(&mel, 64);
        for ch in 0..2 {
            for k in 0..64 {
                for t in 0..fm.frames {
                    assert_eq!(fm.at(ch, k, t), fm.at(ch, k, 0));
                }
                assert!((fm.at(ch, k, 0) as f64 - want[k]).abs() < 1e-3 * want[k].abs().max(1.0));
            }
        }
    }
}
