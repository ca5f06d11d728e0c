//! RIFF WAVE decoding for 16-bit PCM soundtracks.
//!
//! Only the subset the pipeline ingests is supported: format code 1
//! (integer PCM), 16 bits per sample, one or two channels. Stereo is
//! averaged to mono. Unknown chunks are skipped (with the RIFF even-byte
//! padding rule), so files with `LIST`/`fact` metadata load fine.

use std::fs;
use std::path::Path;

use super::{AudioError, PcmAudio};

fn wav_err(path: &Path, reason: impl Into<String>) -> AudioError {
    AudioError::Wav {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn u16_at(bytes: &[u8], pos: usize) -> Option<u16> {
    Some(u16::from_le_bytes(bytes.get(pos..pos + 2)?.try_into().ok()?))
}

fn u32_at(bytes: &[u8], pos: usize) -> Option<u32> {
    Some(u32::from_le_bytes(bytes.get(pos..pos + 4)?.try_into().ok()?))
}

/// Reads a 16-bit PCM WAV file, averaging stereo to mono. The decoded
/// track must be at least [`super::MIN_AUDIO_SECS`] long.
pub fn read_wav(path: &Path) -> Result<PcmAudio, AudioError> {
    let bytes = fs::read(path).map_err(|source| AudioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(wav_err(path, "not a RIFF WAVE file"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(&bytes, pos + 4).unwrap() as usize;
        let body_start = pos + 8;
        let body_end = body_start + size;
        if body_end > bytes.len() {
            return Err(wav_err(path, "chunk overruns file"));
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(wav_err(path, "fmt chunk too small"));
                }
                let format = u16_at(body, 0).unwrap();
                let channels = u16_at(body, 2).unwrap();
                let rate = u32_at(body, 4).unwrap();
                let bits = u16_at(body, 14).unwrap();
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (size & 1);
    }
    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| wav_err(path, "missing fmt chunk"))?;
    if format != 1 {
        return Err(wav_err(path, format!("unsupported format code {format} (need PCM)")));
    }
    if bits != 16 {
        return Err(wav_err(path, format!("unsupported bit depth {bits} (need 16)")));
    }
    if channels != 1 && channels != 2 {
        return Err(wav_err(path, format!("unsupported channel count {channels}")));
    }
    if rate == 0 {
        return Err(wav_err(path, "zero sample rate"));
    }
    let data = data.ok_or_else(|| wav_err(path, "missing data chunk"))?;
    let values: Vec<i16> = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();
    let samples: Vec<f64> = if channels == 1 {
        values.iter().map(|&v| v as f64 / 32768.0).collect()
    } else {
        values
            .chunks_exact(2)
            .map(|lr| (lr[0] as f64 + lr[1] as f64) / 2.0 / 32768.0)
            .collect()
    };
    let audio = PcmAudio {
        sample_rate: rate,
        samples,
    };
    if audio.duration_secs() < super::MIN_AUDIO_SECS {
        return Err(AudioError::TooShort {
            secs: audio.duration_secs(),
            need: super::MIN_AUDIO_SECS,
        });
    }
    Ok(audio)
}

/// Encodes 16-bit PCM samples as WAV bytes (test corpora and tools).
pub fn wav_bytes(sample_rate: u32, channels: u16, values: &[i16]) -> Vec<u8> {
    let block_align = channels * 2;
    let byte_rate = sample_rate * block_align as u32;
    let data_len = values.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}
