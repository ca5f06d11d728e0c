//! Visual feature extraction.
//!
//! Every tenth frame of an advertisement (indices 0, 10, 20, ...) is
//! decoded and converted to hue/saturation/brightness, and each sampled
//! frame is reduced to a 69-value descriptor:
//!
//! * global mean H, S, B;
//! * mean H, S, B of each cell of a 3x3 spatial grid (zones 1..9 in
//!   row-major reading order; indivisible remainders extend the last row
//!   and column band);
//! * absolute mean differences of the 12 rook-adjacent zone pairs per
//!   channel (the 6 horizontal pairs in reading order, then the 6
//!   vertical pairs);
//! * per-channel span (max minus min over all pixels).
//!
//! The descriptor sequence is then summarized into 50/20/5 temporal
//! segments (see [`crate::timeline`]). Hue is averaged arithmetically on
//! its `[0, 1)` scale; the wrap-around at red means hues straddling zero
//! average toward the middle of the scale, a deliberate simplification
//! that keeps every statistic a plain moment.

pub mod ppm;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::{Modality, ModalityFeatures};
use crate::matrix::Matrix;
use crate::timeline::TimelineError;

/// Errors from frame decoding and visual feature extraction.
#[derive(Debug, Error)]
pub enum VideoError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad PPM frame {path}: {reason}")]
    Ppm { path: PathBuf, reason: String },
    #[error("need at least {need} frames, found {found}")]
    TooFewFrames { found: usize, need: usize },
    #[error("frame is {width}x{height}; spatial zoning needs at least 3x3")]
    FrameTooSmall { width: usize, height: usize },
    #[error(transparent)]
    Series(#[from] TimelineError),
}

/// Decoded RGB frame, 8 bits per channel, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    pub width: usize,
    pub height: usize,
    /// `width * height * 3` interleaved RGB bytes.
    pub pixels: Vec<u8>,
}

impl RgbFrame {
    pub fn rgb_at(&self, x: usize, y: usize) -> (u8, u8, u8) {
        let i = (y * self.width + x) * 3;
        (self.pixels[i], self.pixels[i + 1], self.pixels[i + 2])
    }
}

/// Hexcone RGB -> HSB conversion; every channel lands in `[0, 1]`
/// (hue in `[0, 1)`, with 0 = red). Achromatic pixels get hue 0 and
/// saturation 0; black also gets brightness 0.
pub fn rgb_to_hsb(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let rf = r as f64 / 255.0;
    let gf = g as f64 / 255.0;
    let bf = b as f64 / 255.0;
    let max = rf.max(gf).max(bf);
    let min = rf.min(gf).min(bf);
    let delta = max - min;
    let brightness = max;
    let saturation = if max > 0.0 { delta / max } else { 0.0 };
    let hue = if delta == 0.0 {
        0.0
    } else if max == rf {
        (((gf - bf) / delta).rem_euclid(6.0)) / 6.0
    } else if max == gf {
        ((bf - rf) / delta + 2.0) / 6.0
    } else {
        ((rf - gf) / delta + 4.0) / 6.0
    };
    (hue, saturation, brightness)
}

/// Sampling stride over the frame listing: frames 0, 10, 20, ... are kept.
pub const FRAME_STRIDE: usize = 10;

/// Indices of the frames the extractor keeps. Errors when fewer than
/// [`crate::data::MIN_FRAMES`] frames exist.
pub fn sampled_indices(frame_count: usize) -> Result<Vec<usize>, VideoError> {
    if frame_count < crate::data::MIN_FRAMES {
        return Err(VideoError::TooFewFrames {
            found: frame_count,
            need: crate::data::MIN_FRAMES,
        });
    }
    Ok((0..frame_count).step_by(FRAME_STRIDE).collect())
}

/// Keeps every tenth element of a frame sequence.
pub fn sample_frames<T: Clone>(frames: &[T]) -> Result<Vec<T>, VideoError> {
    Ok(sampled_indices(frames.len())?
        .into_iter()
        .map(|i| frames[i].clone())
        .collect())
}

/// Number of spatial zones (3x3 grid).
pub const ZONES: usize = 9;

/// Rook-adjacent zone pairs (1-based zone numbers, reading order):
/// the six horizontal neighbors first, then the six vertical neighbors.
pub const ZONE_PAIRS: [(usize, usize); 12] = [
    (1, 2),
    (2, 3),
    (4, 5),
    (5, 6),
    (7, 8),
    (8, 9),
    (1, 4),
    (2, 5),
    (3, 6),
    (4, 7),
    (5, 8),
    (6, 9),
];

/// Per-frame HSB descriptor. Channel order is always (hue, saturation,
/// brightness).
#[derive(Debug, Clone, PartialEq)]
pub struct HsbStats {
    /// Global per-channel means.
    pub mean: [f64; 3],
    /// Per-zone per-channel means, zones in reading order.
    pub zone_means: [[f64; 3]; ZONES],
    /// `|mean(zone a) - mean(zone b)|` for each [`ZONE_PAIRS`] entry.
    pub zone_diffs: [[f64; 3]; 12],
    /// Per-channel max minus min over all pixels.
    pub span: [f64; 3],
}

const CHANNELS: [&str; 3] = ["hue", "saturation", "brightness"];

impl HsbStats {
    /// Number of values in the flattened descriptor.
    pub const LEN: usize = 3 + ZONES * 3 + 12 * 3 + 3;

    /// Flattens to the column order given by [`descriptor_schema`].
    pub fn to_row(&self) -> Vec<f64> {
        let mut row = Vec::with_capacity(Self::LEN);
        row.extend_from_slice(&self.mean);
        for z in &self.zone_means {
            row.extend_from_slice(z);
        }
        for d in &self.zone_diffs {
            row.extend_from_slice(d);
        }
        row.extend_from_slice(&self.span);
        row
    }
}

/// Column names of the flattened [`HsbStats`] descriptor.
pub fn descriptor_schema() -> Vec<String> {
    let mut names = Vec::with_capacity(HsbStats::LEN);
    for c in CHANNELS {
        names.push(format!("mean {c}"));
    }
    for z in 1..=ZONES {
        for c in CHANNELS {
            names.push(format!("zone {z} {c}"));
        }
    }
    for (a, b) in ZONE_PAIRS {
        for c in CHANNELS {
            names.push(format!("zone diff {a}-{b} {c}"));
        }
    }
    for c in CHANNELS {
        names.push(format!("{c} span"));
    }
    names
}

/// Zone band index (0..3) for a coordinate: three equal bands with the
/// remainder absorbed by the last band.
fn band(coord: usize, size: usize) -> usize {
    let base = size / 3;
    (coord / base).min(2)
}

/// Computes the 69-value descriptor of one frame. The frame must be at
/// least 3x3 so every spatial zone holds at least one pixel.
pub fn frame_descriptor(frame: &RgbFrame) -> Result<HsbStats, VideoError> {
    if frame.width < 3 || frame.height < 3 {
        return Err(VideoError::FrameTooSmall {
            width: frame.width,
            height: frame.height,
        });
    }
    let mut sum = [0.0; 3];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut zone_sum = [[0.0; 3]; ZONES];
    let mut zone_count = [0usize; ZONES];
    for y in 0..frame.height {
        let band_y = band(y, frame.height);
        for x in 0..frame.width {
            let zone = band_y * 3 + band(x, frame.width);
            let (r, g, b) = frame.rgb_at(x, y);
            let hsb = rgb_to_hsb(r, g, b);
            let hsb = [hsb.0, hsb.1, hsb.2];
            for c in 0..3 {
                sum[c] += hsb[c];
                lo[c] = lo[c].min(hsb[c]);
                hi[c] = hi[c].max(hsb[c]);
                zone_sum[zone][c] += hsb[c];
            }
            zone_count[zone] += 1;
        }
    }
    let n = (frame.width * frame.height) as f64;
    let mean = [sum[0] / n, sum[1] / n, sum[2] / n];
    let mut zone_means = [[0.0; 3]; ZONES];
    for z in 0..ZONES {
        debug_assert!(zone_count[z] > 0);
        for c in 0..3 {
            zone_means[z][c] = zone_sum[z][c] / zone_count[z] as f64;
        }
    }
    let mut zone_diffs = [[0.0; 3]; 12];
    for (i, (a, b)) in ZONE_PAIRS.iter().enumerate() {
        for c in 0..3 {
            zone_diffs[i][c] = (zone_means[a - 1][c] - zone_means[b - 1][c]).abs();
        }
    }
    let span = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    Ok(HsbStats {
        mean,
        zone_means,
        zone_diffs,
        span,
    })
}

/// Summarizes a descriptor sequence into `resolution` temporal segments;
/// identical semantics to [`crate::timeline::summarize`].
pub fn summarize_series(series: &Matrix, resolution: usize) -> Result<Matrix, VideoError> {
    Ok(crate::timeline::summarize(series, resolution)?)
}

/// Builds the sampled descriptor track (`samples x 69`) from frame files.
pub fn descriptor_track(frame_paths: &[PathBuf]) -> Result<Matrix, VideoError> {
    let indices = sampled_indices(frame_paths.len())?;
    let mut rows = Vec::with_capacity(indices.len());
    for i in indices {
        let frame = ppm::read_ppm(&frame_paths[i])?;
        rows.push(frame_descriptor(&frame)?.to_row());
    }
    Ok(Matrix::from_rows(&rows))
}

/// Full visual extraction for one advertisement: sampled descriptor track
/// plus its 50/20/5 summaries. The video must yield at least 50 sampled
/// frames (500 source frames) for the finest resolution to exist.
pub fn extract_video_features(frame_paths: &[PathBuf]) -> Result<ModalityFeatures, VideoError> {
    let track = descriptor_track(frame_paths)?;
    Ok(ModalityFeatures::from_track(
        Modality::Video,
        descriptor_schema(),
        track,
    )?)
}

/// Loads a frame directory (sorted `.ppm` files) and extracts features.
pub fn extract_video_features_from_dir(dir: &Path) -> Result<ModalityFeatures, VideoError> {
    let frames = crate::data::list_frame_files(dir).map_err(|e| match e {
        crate::data::DataError::Io { path, source } => VideoError::Io { path, source },
        other => VideoError::Ppm {
            path: dir.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    extract_video_features(&frames)
}
