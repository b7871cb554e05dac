use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DatasetError, Result};

pub const TARGET_SAMPLE_RATE: u32 = 44100;
pub const TARGET_DURATION_S: f64 = 6.0;

/// Multi-channel waveform with amplitudes nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    channels: Vec<Vec<f32>>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(channels: Vec<Vec<f32>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(DatasetError::InvalidClip("no channels".into()));
        }
        if sample_rate == 0 {
            return Err(DatasetError::InvalidClip("sample rate is zero".into()));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(DatasetError::InvalidClip("channels differ in length".into()));
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(DatasetError::InvalidClip("non-finite sample".into()));
        }
        Ok(Self { channels, sample_rate })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> &[Vec<f32>] {
        &self.channels
    }

    pub fn channel(&self, i: usize) -> &[f32] {
        &self.channels[i]
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }
}

/// Linear-interpolation resampling; stops at the last source sample.
fn resample_linear(x: &[f32], from: u32, to: u32, max_len: usize) -> Vec<f32> {
    if from == to {
        return x.iter().take(max_len).copied().collect();
    }
    let ratio = from as f64 / to as f64;
    let last = (x.len() - 1) as f64;
    let n = (((x.len() - 1) as f64 / ratio).floor() as usize + 1).min(max_len);
    (0..n)
        .map(|i| {
            let pos = (i as f64 * ratio).min(last);
            let j = pos.floor() as usize;
            let frac = pos - j as f64;
            let a = x[j] as f64;
            let b = x[(j + 1).min(x.len() - 1)] as f64;
            (a + (b - a) * frac) as f32
        })
        .collect()
}

/// Resamples to `target_sr`, duplicates mono into two channels and fixes the
/// length at `duration_s * target_sr` by trimming the tail or appending
/// silence.
pub fn standardize(clip: &AudioClip, target_sr: u32, duration_s: f64) -> Result<AudioClip> {
    if clip.is_empty() {
        return Err(DatasetError::EmptyClip);
    }
    if target_sr == 0 || !(duration_s > 0.0) {
        return Err(DatasetError::InvalidClip(format!(
            "target rate {target_sr} Hz and duration {duration_s} s must be positive"
        )));
    }
    let target_len = (duration_s * target_sr as f64).round() as usize;
    let mono_or_stereo: Vec<&Vec<f32>> = match clip.num_channels() {
        1 => vec![&clip.channels[0], &clip.channels[0]],
        2 => clip.channels.iter().collect(),
        n => {
            return Err(DatasetError::InvalidClip(format!(
                "{n} channels; only mono and stereo are supported"
            )))
        }
    };
    let channels = mono_or_stereo
        .into_iter()
        .map(|ch| {
            let mut out = resample_linear(ch, clip.sample_rate, target_sr, target_len);
            out.resize(target_len, 0.0);
            out
        })
        .collect();
    AudioClip::new(channels, target_sr)
}

/// Adds i.i.d. zero-mean Gaussian noise whose standard deviation is given in
/// 16-bit LSB units (`sigma_lsb / 32768` on the normalized scale), then clamps
/// to `[-1, 1]`.
pub fn add_gaussian_noise(clip: &AudioClip, sigma_lsb: f64, seed: u64) -> Result<AudioClip> {
    if !(sigma_lsb >= 0.0) {
        return Err(DatasetError::NegativeSigma(sigma_lsb));
    }
    if sigma_lsb == 0.0 {
        return Ok(clip.clone());
    }
    let normal = Normal::new(0.0, sigma_lsb / 32768.0).expect("sigma is finite and positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels = clip
        .channels
        .iter()
        .map(|ch| {
            ch.iter()
                .map(|&v| ((v as f64 + normal.sample(&mut rng)).clamp(-1.0, 1.0)) as f32)
                .collect()
        })
        .collect();
    AudioClip::new(channels, clip.sample_rate)
}
