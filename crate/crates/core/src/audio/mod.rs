//! Auditory feature extraction.
//!
//! The soundtrack is cut into non-overlapping 100 ms rectangular frames
//! (a trailing partial frame is dropped). Each frame's DFT magnitudes
//! over bins `1..=K`, `K = floor(n/2)`, feed four per-frame features:
//!
//! * **loudness** — `log10(sum_k S(k) * eta(k))`, where `eta` is a
//!   perceptual weighting with maximum 1; the sum is clamped below at
//!   `1e-12`, so silence reads exactly `-12`;
//! * **timbre centroid** — magnitude-weighted mean bin
//!   `sum_k k*S(k) / sum_k S(k)` (0 for silence);
//! * **timbre width** — magnitude-weighted standard deviation of the bin
//!   index around the centroid (0 for silence);
//! * **onset significance** — positive spectral flux
//!   `sum_k max(0, S_t(k) - S_{t-1}(k))`, normalized by the track's peak
//!   flux; frame 0 has no predecessor and is always 0.
//!
//! Onset *events* are the frames whose significance strictly exceeds a
//! threshold (default 0.1). Coarse statistics — onset density, onset
//! spectrum strength/variation, dynamic range — are computed per temporal
//! partition, and densities always come from the event list itself, never
//! from resampling a finer density track.

pub mod wav;

use std::path::PathBuf;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::data::{Modality, ModalityFeatures, RESOLUTIONS};
use crate::matrix::{mean, population_std, Matrix};
use crate::timeline::{self, TimelineError};

/// Errors from audio decoding and feature extraction.
#[derive(Debug, Error)]
pub enum AudioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad WAV file {path}: {reason}")]
    Wav { path: PathBuf, reason: String },
    #[error("audio is {secs:.3} s long; need at least {need} s")]
    TooShort { secs: f64, need: f64 },
    #[error("bad auditory weighting: {0}")]
    BadWeighting(String),
    #[error(transparent)]
    Series(#[from] TimelineError),
}

/// Minimum track length accepted by the loader, in seconds.
pub const MIN_AUDIO_SECS: f64 = 1.0;

/// Analysis frame length in seconds.
pub const FRAME_SECS: f64 = 0.1;

/// Default onset significance threshold.
pub const DEFAULT_ONSET_THRESHOLD: f64 = 0.1;

/// Floor applied to weighted magnitude sums before `log10`.
pub const LOUDNESS_FLOOR: f64 = 1e-12;

/// Decoded mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct PcmAudio {
    pub sample_rate: u32,
    /// Mono samples in `[-1, 1]`.
    pub samples: Vec<f64>,
}

impl PcmAudio {
    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Samples per 100 ms analysis frame.
    pub fn frame_len(&self) -> usize {
        ((self.sample_rate as f64 * FRAME_SECS).round() as usize).max(1)
    }
}

/// Cuts the track into non-overlapping 100 ms frames, dropping a trailing
/// partial frame.
pub fn segment_frames(audio: &PcmAudio) -> Vec<&[f64]> {
    let len = audio.frame_len();
    audio.samples.chunks_exact(len).collect()
}

/// DFT magnitudes of one frame over bins `1..=K`, `K = floor(n/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrame {
    /// `magnitudes[i]` is `|X_{i+1}|`; the DC bin is excluded.
    pub magnitudes: Vec<f64>,
    /// Width of one bin in Hz.
    pub bin_hz: f64,
}

impl SpectralFrame {
    /// Number of retained bins `K`.
    pub fn bins(&self) -> usize {
        self.magnitudes.len()
    }
}

/// Computes one frame's magnitude spectrum.
pub fn spectral_magnitude(samples: &[f64], sample_rate: u32) -> SpectralFrame {
    let mut planner = FftPlanner::new();
    spectral_magnitude_with(&mut planner, samples, sample_rate)
}

fn spectral_magnitude_with(
    planner: &mut FftPlanner<f64>,
    samples: &[f64],
    sample_rate: u32,
) -> SpectralFrame {
    let n = samples.len();
    assert!(n >= 2, "spectral frame needs at least 2 samples");
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft.process(&mut buf);
    let k = n / 2;
    let magnitudes = (1..=k).map(|i| buf[i].norm()).collect();
    SpectralFrame {
        magnitudes,
        bin_hz: sample_rate as f64 / n as f64,
    }
}

/// Magnitude spectra of every frame of a track, sharing one FFT plan.
pub fn spectra_of_frames(frames: &[&[f64]], sample_rate: u32) -> Vec<SpectralFrame> {
    let mut planner = FftPlanner::new();
    frames
        .iter()
        .map(|f| spectral_magnitude_with(&mut planner, f, sample_rate))
        .collect()
}

/// Perceptual per-bin weighting with maximum exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditoryWeighting {
    eta: Vec<f64>,
}

impl AuditoryWeighting {
    /// The default curve: the standard A-weighting magnitude response
    ///
    /// `R_A(f) = 12194^2 f^4 / ((f^2+20.6^2) sqrt((f^2+107.7^2)(f^2+737.9^2)) (f^2+12194^2))`
    ///
    /// evaluated at the bin centers `f_k = k * bin_hz` and renormalized so
    /// the largest retained bin weighs exactly 1.
    pub fn a_curve(bins: usize, bin_hz: f64) -> Self {
        let gains: Vec<f64> = (1..=bins).map(|k| a_response(k as f64 * bin_hz)).collect();
        Self::from_gains(gains).expect("A-curve gains are positive")
    }

    /// Builds a weighting from raw per-bin gains, renormalizing to max 1.
    /// This is the swap point for alternative curves.
    pub fn from_gains(gains: Vec<f64>) -> Result<Self, AudioError> {
        if gains.is_empty() {
            return Err(AudioError::BadWeighting("no bins".into()));
        }
        if gains.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(AudioError::BadWeighting(
                "gains must be finite and non-negative".into(),
            ));
        }
        let max = gains.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max <= 0.0 {
            return Err(AudioError::BadWeighting("all gains are zero".into()));
        }
        Ok(Self {
            eta: gains.into_iter().map(|g| g / max).collect(),
        })
    }

    /// Builds a weighting by linear interpolation of a `(frequency, gain)`
    /// table at the bin centers. Frequencies outside the table clamp to
    /// its end gains. The table must be sorted by frequency.
    pub fn from_table(table: &[(f64, f64)], bins: usize, bin_hz: f64) -> Result<Self, AudioError> {
        if table.is_empty() {
            return Err(AudioError::BadWeighting("empty weighting table".into()));
        }
        if table.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(AudioError::BadWeighting(
                "weighting table frequencies must be strictly increasing".into(),
            ));
        }
        let gains = (1..=bins)
            .map(|k| {
                let f = k as f64 * bin_hz;
                interpolate(table, f)
            })
            .collect();
        Self::from_gains(gains)
    }

    /// Uniform weighting (every bin 1).
    pub fn flat(bins: usize) -> Self {
        Self {
            eta: vec![1.0; bins],
        }
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }
}

fn interpolate(table: &[(f64, f64)], f: f64) -> f64 {
    if f <= table[0].0 {
        return table[0].1;
    }
    if f >= table[table.len() - 1].0 {
        return table[table.len() - 1].1;
    }
    let i = table.partition_point(|&(tf, _)| tf <= f);
    let (f0, g0) = table[i - 1];
    let (f1, g1) = table[i];
    g0 + (g1 - g0) * (f - f0) / (f1 - f0)
}

/// Standard A-weighting magnitude response (linear, unnormalized).
fn a_response(f: f64) -> f64 {
    let f2 = f * f;
    let c1 = 20.6f64 * 20.6;
    let c2 = 107.7f64 * 107.7;
    let c3 = 737.9f64 * 737.9;
    let c4 = 12194.0f64 * 12194.0;
    (c4 * f2 * f2) / ((f2 + c1) * ((f2 + c2) * (f2 + c3)).sqrt() * (f2 + c4))
}

/// Weighted log-energy loudness of one frame. Silence reads exactly
/// `log10(1e-12) = -12`.
pub fn loudness(frame: &SpectralFrame, weighting: &AuditoryWeighting) -> f64 {
    assert_eq!(
        frame.bins(),
        weighting.eta().len(),
        "weighting does not match bin count"
    );
    let sum: f64 = frame
        .magnitudes
        .iter()
        .zip(weighting.eta())
        .map(|(s, e)| s * e)
        .sum();
    sum.max(LOUDNESS_FLOOR).log10()
}

/// Magnitude-weighted mean bin index (1-based); 0 for silence.
pub fn timbre_centroid(frame: &SpectralFrame) -> f64 {
    let total: f64 = frame.magnitudes.iter().sum();
    if total < LOUDNESS_FLOOR {
        return 0.0;
    }
    let weighted: f64 = frame
        .magnitudes
        .iter()
        .enumerate()
        .map(|(i, s)| (i + 1) as f64 * s)
        .sum();
    weighted / total
}

/// Magnitude-weighted standard deviation of the bin index around the
/// centroid; 0 for silence.
pub fn timbre_width(frame: &SpectralFrame) -> f64 {
    let total: f64 = frame.magnitudes.iter().sum();
    if total < LOUDNESS_FLOOR {
        return 0.0;
    }
    let c = timbre_centroid(frame);
    let var: f64 = frame
        .magnitudes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let d = (i + 1) as f64 - c;
            s * d * d
        })
        .sum::<f64>()
        / total;
    var.sqrt()
}

/// A detected onset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnsetEvent {
    /// Start time of the triggering frame, in seconds.
    pub time: f64,
    /// Peak-normalized positive spectral flux in `(0, 1]`.
    pub significance: f64,
}

/// Peak-normalized positive spectral flux per frame; index 0 is always 0.
/// A silent (zero-flux) track normalizes to all zeros.
pub fn onset_significance_track(spectra: &[SpectralFrame]) -> Vec<f64> {
    let mut flux = vec![0.0; spectra.len()];
    for t in 1..spectra.len() {
        flux[t] = spectra[t]
            .magnitudes
            .iter()
            .zip(&spectra[t - 1].magnitudes)
            .map(|(cur, prev)| (cur - prev).max(0.0))
            .sum();
    }
    let max = flux.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        for v in &mut flux {
            *v /= max;
        }
    }
    flux
}

/// Emits the frames whose onset significance strictly exceeds `threshold`.
/// The first frame never emits (it has no predecessor).
pub fn detect_onsets(spectra: &[SpectralFrame], threshold: f64) -> Vec<OnsetEvent> {
    onset_significance_track(spectra)
        .into_iter()
        .enumerate()
        .skip(1)
        .filter(|(_, sig)| *sig > threshold)
        .map(|(t, significance)| OnsetEvent {
            time: t as f64 * FRAME_SECS,
            significance,
        })
        .collect()
}

/// Index of the uniform time partition holding `time`; a boundary time
/// belongs to the later partition (half-open intervals).
fn partition_of(time: f64, duration: f64, partitions: usize) -> usize {
    debug_assert!(duration > 0.0);
    ((time * partitions as f64 / duration) as usize).min(partitions - 1)
}

/// Events per second in each of `partitions` uniform time partitions.
/// Densities are always counted from the event list itself.
pub fn onset_density(events: &[OnsetEvent], duration: f64, partitions: usize) -> Vec<f64> {
    let mut counts = vec![0usize; partitions];
    for e in events {
        counts[partition_of(e.time, duration, partitions)] += 1;
    }
    let seg = duration / partitions as f64;
    counts.iter().map(|&c| c as f64 / seg).collect()
}

/// Mean and population standard deviation of event significance per
/// partition; partitions without events yield `(0, 0)`.
pub fn onset_strength_stats(
    events: &[OnsetEvent],
    duration: f64,
    partitions: usize,
) -> Vec<(f64, f64)> {
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); partitions];
    for e in events {
        buckets[partition_of(e.time, duration, partitions)].push(e.significance);
    }
    buckets
        .iter()
        .map(|b| (mean(b), population_std(b)))
        .collect()
}

/// Max minus min loudness inside each index partition of the frame
/// sequence; partitions with fewer than one sample yield 0.
pub fn dynamic_range(loudness_track: &[f64], partitions: usize) -> Vec<f64> {
    (0..partitions)
        .map(|s| {
            let range = timeline::segment_range(loudness_track.len(), partitions, s);
            let slice = &loudness_track[range];
            if slice.is_empty() {
                0.0
            } else {
                let hi = slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lo = slice.iter().cloned().fold(f64::INFINITY, f64::min);
                hi - lo
            }
        })
        .collect()
}

/// Base column names of the per-frame audio track.
pub fn track_schema() -> Vec<String> {
    ["loudness", "timbre centroid", "timbre width", "onset significance"]
        .into_iter()
        .map(String::from)
        .collect()
}

/// Extra per-partition column names appended to each resolution matrix.
pub fn partition_extras_schema() -> Vec<String> {
    [
        "onset density",
        "onset spectrum strength",
        "onset spectrum variation",
        "dynamic range",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

/// Full auditory extraction: per-frame track plus 50/20/5 summaries with
/// the per-partition onset and dynamic-range columns appended. The track
/// must contain at least 50 frames (5 s) for the finest resolution.
pub fn extract_audio_features(
    audio: &PcmAudio,
    weighting: Option<&AuditoryWeighting>,
    onset_threshold: f64,
) -> Result<ModalityFeatures, AudioError> {
    let frames = segment_frames(audio);
    if frames.is_empty() {
        return Err(AudioError::TooShort {
            secs: audio.duration_secs(),
            need: FRAME_SECS,
        });
    }
    let spectra = spectra_of_frames(&frames, audio.sample_rate);
    let default_weighting;
    let weighting = match weighting {
        Some(w) => {
            if w.eta().len() != spectra[0].bins() {
                return Err(AudioError::BadWeighting(format!(
                    "weighting has {} bins, spectra have {}",
                    w.eta().len(),
                    spectra[0].bins()
                )));
            }
            w
        }
        None => {
            default_weighting =
                AuditoryWeighting::a_curve(spectra[0].bins(), spectra[0].bin_hz);
            &default_weighting
        }
    };

    let significance = onset_significance_track(&spectra);
    let loud: Vec<f64> = spectra.iter().map(|s| loudness(s, weighting)).collect();
    let rows: Vec<Vec<f64>> = spectra
        .iter()
        .enumerate()
        .map(|(t, s)| {
            vec![
                loud[t],
                timbre_centroid(s),
                timbre_width(s),
                significance[t],
            ]
        })
        .collect();
    let high_res = Matrix::from_rows(&rows);

    let events = detect_onsets(&spectra, onset_threshold);
    let framed_duration = frames.len() as f64 * FRAME_SECS;

    let mut summary_schema = timeline::summary_schema(&track_schema());
    summary_schema.extend(partition_extras_schema());

    let build = |resolution: usize| -> Result<Matrix, AudioError> {
        let base = timeline::summarize(&high_res, resolution)?;
        let density = onset_density(&events, framed_duration, resolution);
        let strength = onset_strength_stats(&events, framed_duration, resolution);
        let ranges = dynamic_range(&loud, resolution);
        let mut rows = Vec::with_capacity(resolution);
        for s in 0..resolution {
            let mut row = base.row(s).to_vec();
            row.push(density[s]);
            row.push(strength[s].0);
            row.push(strength[s].1);
            row.push(ranges[s]);
            rows.push(row);
        }
        Ok(Matrix::from_rows(&rows))
    };

    let res50 = build(RESOLUTIONS[0])?;
    let res20 = build(RESOLUTIONS[1])?;
    let res5 = build(RESOLUTIONS[2])?;
    Ok(ModalityFeatures {
        modality: Modality::Audio,
        dims_schema: track_schema(),
        high_res,
        summary_schema,
        res50,
        res20,
        res5,
    })
}
