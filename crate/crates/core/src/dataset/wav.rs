//! RIFF/WAVE reading and writing for 16-bit PCM and 32-bit float audio.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{AudioClip, DatasetError, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

struct Fmt {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn le_u16(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

/// Decodes a WAV file. PCM16 samples are scaled by `1 / 32768`; float
/// samples pass through unchanged.
pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let bytes = fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_wav(&bytes, path)
}

fn decode_wav(bytes: &[u8], path: &Path) -> Result<AudioClip> {
    let malformed = |msg: &str| DatasetError::MalformedWav {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    let unsupported = |field: &'static str, value: u32| DatasetError::UnsupportedWav {
        path: path.to_path_buf(),
        field,
        value,
    };
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed("missing RIFF/WAVE header"));
    }
    let mut pos = 12;
    let mut fmt: Option<Fmt> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(&bytes[pos + 4..pos + 8]) as usize;
        let body_start = pos + 8;
        // A data chunk may be cut short by a truncated file; keep what is there.
        let body_end = body_start.saturating_add(size).min(bytes.len());
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(malformed("fmt chunk shorter than 16 bytes"));
                }
                let mut format = le_u16(&body[0..2]);
                if format == FORMAT_EXTENSIBLE {
                    if body.len() < 26 {
                        return Err(malformed("extensible fmt chunk too short"));
                    }
                    format = le_u16(&body[24..26]);
                }
                fmt = Some(Fmt {
                    format,
                    channels: le_u16(&body[2..4]),
                    sample_rate: le_u32(&body[4..8]),
                    bits: le_u16(&body[14..16]),
                });
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_start.saturating_add(size + (size & 1));
    }
    let fmt = fmt.ok_or_else(|| malformed("no fmt chunk"))?;
    let data = data.ok_or_else(|| malformed("no data chunk"))?;
    match (fmt.format, fmt.bits) {
        (FORMAT_PCM, 16) | (FORMAT_FLOAT, 32) => {}
        (FORMAT_PCM, bits) | (FORMAT_FLOAT, bits) => return Err(unsupported("bits_per_sample", bits as u32)),
        (other, _) => return Err(unsupported("audio_format", other as u32)),
    }
    if !(1..=2).contains(&fmt.channels) {
        return Err(unsupported("channels", fmt.channels as u32));
    }
    if fmt.sample_rate == 0 {
        return Err(unsupported("sample_rate", 0));
    }
    let nch = fmt.channels as usize;
    let width = (fmt.bits / 8) as usize;
    let frames = data.len() / (width * nch);
    let mut channels = vec![Vec::with_capacity(frames); nch];
    for f in 0..frames {
        for (c, ch) in channels.iter_mut().enumerate() {
            let s = &data[(f * nch + c) * width..][..width];
            let v = if fmt.format == FORMAT_PCM {
                i16::from_le_bytes([s[0], s[1]]) as f32 / 32768.0
            } else {
                f32::from_le_bytes([s[0], s[1], s[2], s[3]])
            };
            ch.push(v);
        }
    }
    AudioClip::new(channels, fmt.sample_rate).map_err(|e| malformed(&e.to_string()))
}

/// Quantizes to `round(x * 32768)` clamped to the `i16` range.
pub fn quantize_pcm16(x: f32) -> i16 {
    (x as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn encode_wav(clip: &AudioClip, format: WavFormat) -> Vec<u8> {
    let nch = clip.num_channels() as u16;
    let (code, bits) = match format {
        WavFormat::Pcm16 => (FORMAT_PCM, 16u16),
        WavFormat::Float32 => (FORMAT_FLOAT, 32u16),
    };
    let block = nch as u32 * bits as u32 / 8;
    let data_len = clip.len() as u32 * block;
    let mut buf = Vec::with_capacity(44 + data_len as usize);
    buf.extend_from_slice(b"RIFF");
    buf.extend_from_slice(&(36 + data_len).to_le_bytes());
    buf.extend_from_slice(b"WAVEfmt ");
    buf.extend_from_slice(&16u32.to_le_bytes());
    buf.extend_from_slice(&code.to_le_bytes());
    buf.extend_from_slice(&nch.to_le_bytes());
    buf.extend_from_slice(&clip.sample_rate().to_le_bytes());
    buf.extend_from_slice(&(clip.sample_rate() * block).to_le_bytes());
    buf.extend_from_slice(&(block as u16).to_le_bytes());
    buf.extend_from_slice(&bits.to_le_bytes());
    buf.extend_from_slice(b"data");
    buf.extend_from_slice(&data_len.to_le_bytes());
    for i in 0..clip.len() {
        for ch in clip.channels() {
            match format {
                WavFormat::Pcm16 => buf.extend_from_slice(&quantize_pcm16(ch[i]).to_le_bytes()),
                WavFormat::Float32 => buf.extend_from_slice(&ch[i].to_le_bytes()),
            }
        }
    }
    buf
}

/// Writes atomically through a temp file in the same directory.
pub fn write_wav(path: &Path, clip: &AudioClip, format: WavFormat) -> Result<()> {
    let io = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let tmp = path.with_extension("wav.tmp");
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(&encode_wav(clip, format)).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}
