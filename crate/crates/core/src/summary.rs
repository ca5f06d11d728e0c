//! Fixed-length named feature vectors per modality.
//!
//! The sequence models consume the full-rate tracks; the Boltzmann
//! classifier and the forest importance analysis need one flat vector per
//! advertisement instead. This module derives those vectors with
//! human-readable names built from the reporting vocabulary: "chroma"
//! refers to the hue channel, "intensity" to brightness, video time is
//! split into 5 "video segments" and audio time into 5 "audio
//! partitions", and a "span" inside a spatial zone is the within-segment
//! temporal range (max minus min) of that zone's mean.

use thiserror::Error;

use crate::data::{Modality, ModalityFeatures};
use crate::matrix::{mean, population_std};
use crate::timeline::segment_range;

/// Errors from summary-vector derivation.
#[derive(Debug, Error)]
pub enum SummaryError {
    #[error("expected {expected} features, got {found}")]
    WrongModality { expected: Modality, found: Modality },
    #[error("feature column \"{0}\" is missing")]
    MissingColumn(String),
}

/// A flat feature vector with one name per value.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl NamedVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Appends another named vector.
    pub fn extend(&mut self, other: NamedVector) {
        self.names.extend(other.names);
        self.values.extend(other.values);
    }
}

/// Number of coarse temporal partitions used for reporting.
pub const REPORT_PARTITIONS: usize = 5;

const REPORT_CHANNELS: [(&str, &str); 3] = [
    ("chroma", "hue"),
    ("saturation", "saturation"),
    ("intensity", "brightness"),
];

fn column_index(schema: &[String], name: &str) -> Result<usize, SummaryError> {
    schema
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| SummaryError::MissingColumn(name.to_string()))
}

fn expect_modality(f: &ModalityFeatures, expected: Modality) -> Result<(), SummaryError> {
    if f.modality != expected {
        return Err(SummaryError::WrongModality {
            expected,
            found: f.modality,
        });
    }
    Ok(())
}

/// Derives the 96 named video reporting features from a visual feature
/// set: per-segment channel averages and spans, per-zone averages and
/// spans, and their variations across segments and zones.
pub fn video_summary(f: &ModalityFeatures) -> Result<NamedVector, SummaryError> {
    expect_modality(f, Modality::Video)?;
    let track = &f.high_res;
    let n = track.rows();
    let segments: Vec<std::ops::Range<usize>> = (0..REPORT_PARTITIONS)
        .map(|s| segment_range(n, REPORT_PARTITIONS, s))
        .collect();

    let seg_mean = |col: usize, seg: &std::ops::Range<usize>| -> f64 {
        let vals: Vec<f64> = seg.clone().map(|t| track.get(t, col)).collect();
        mean(&vals)
    };
    let seg_span = |col: usize, seg: &std::ops::Range<usize>| -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for t in seg.clone() {
            let v = track.get(t, col);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi >= lo {
            hi - lo
        } else {
            0.0
        }
    };

    let mut out = NamedVector {
        names: Vec::with_capacity(96),
        values: Vec::with_capacity(96),
    };
    // Stash per-channel statistic collections for the variation features.
    let mut per_segment_avgs: Vec<Vec<f64>> = Vec::new();
    let mut per_segment_spans: Vec<Vec<f64>> = Vec::new();
    let mut per_zone_avgs: Vec<Vec<f64>> = Vec::new();
    let mut per_zone_spans: Vec<Vec<f64>> = Vec::new();

    for (report_name, channel) in REPORT_CHANNELS {
        let mean_col = column_index(&f.dims_schema, &format!("mean {channel}"))?;
        let span_col = column_index(&f.dims_schema, &format!("{channel} span"))?;

        let avgs: Vec<f64> = segments.iter().map(|s| seg_mean(mean_col, s)).collect();
        for (s, v) in avgs.iter().enumerate() {
            out.names
                .push(format!("average {report_name} for video segment {}", s + 1));
            out.values.push(*v);
        }
        let spans: Vec<f64> = segments.iter().map(|s| seg_mean(span_col, s)).collect();
        for (s, v) in spans.iter().enumerate() {
            out.names.push(format!(
                "average {report_name} span for video segment {}",
                s + 1
            ));
            out.values.push(*v);
        }

        let mut zone_avgs = Vec::with_capacity(crate::video::ZONES);
        let mut zone_spans = Vec::with_capacity(crate::video::ZONES);
        for z in 1..=crate::video::ZONES {
            let zcol = column_index(&f.dims_schema, &format!("zone {z} {channel}"))?;
            let all: Vec<f64> = (0..n).map(|t| track.get(t, zcol)).collect();
            let avg = mean(&all);
            let span = mean(
                &segments
                    .iter()
                    .map(|s| seg_span(zcol, s))
                    .collect::<Vec<f64>>(),
            );
            out.names
                .push(format!("average {report_name} for spatial zone {z}"));
            out.values.push(avg);
            out.names
                .push(format!("average {report_name} span for spatial zone {z}"));
            out.values.push(span);
            zone_avgs.push(avg);
            zone_spans.push(span);
        }

        per_segment_avgs.push(avgs);
        per_segment_spans.push(spans);
        per_zone_avgs.push(zone_avgs);
        per_zone_spans.push(zone_spans);
    }

    for (c, (report_name, _)) in REPORT_CHANNELS.iter().enumerate() {
        out.names.push(format!(
            "variation of average {report_name} across temporal segments"
        ));
        out.values.push(population_std(&per_segment_avgs[c]));
        out.names.push(format!(
            "variation of {report_name} span across temporal segments"
        ));
        out.values.push(population_std(&per_segment_spans[c]));
        out.names.push(format!(
            "variation of average {report_name} across spatial zones"
        ));
        out.values.push(population_std(&per_zone_avgs[c]));
        out.names.push(format!(
            "variation of {report_name} span across spatial zones"
        ));
        out.values.push(population_std(&per_zone_spans[c]));
    }
    Ok(out)
}

/// Derives the 51 named audio reporting features from the 5-partition
/// summary matrix: per-partition loudness, timbre, onset and range
/// statistics plus the mean of the timbre-width variation.
pub fn audio_summary(f: &ModalityFeatures) -> Result<NamedVector, SummaryError> {
    expect_modality(f, Modality::Audio)?;
    let m = &f.res5;
    let schema = &f.summary_schema;
    let picks: [(&str, &str); 10] = [
        ("loudness", "mean loudness"),
        ("loudness variation", "std loudness"),
        ("timbre centroid", "mean timbre centroid"),
        ("timbre centroid variation", "std timbre centroid"),
        ("timbre width", "mean timbre width"),
        ("timbre width variation", "std timbre width"),
        ("onset density", "onset density"),
        ("onset spectrum strength", "onset spectrum strength"),
        ("onset spectrum variation", "onset spectrum variation"),
        ("dynamic range", "dynamic range"),
    ];
    let mut out = NamedVector {
        names: Vec::with_capacity(51),
        values: Vec::with_capacity(51),
    };
    for (report_name, col_name) in picks {
        let col = column_index(schema, col_name)?;
        for p in 0..REPORT_PARTITIONS {
            out.names
                .push(format!("{report_name} for audio partition {}", p + 1));
            out.values.push(m.get(p, col));
        }
    }
    let width_var_col = column_index(schema, "std timbre width")?;
    let width_vars: Vec<f64> = (0..REPORT_PARTITIONS)
        .map(|p| m.get(p, width_var_col))
        .collect();
    out.names.push("mean of timbre width variation".to_string());
    out.values.push(mean(&width_vars));
    Ok(out)
}

/// Mean token embedding (one value per embedding dimension).
pub fn text_summary(f: &ModalityFeatures) -> Result<NamedVector, SummaryError> {
    expect_modality(f, Modality::Text)?;
    let track = &f.high_res;
    let names = f
        .dims_schema
        .iter()
        .map(|n| format!("mean {n}"))
        .collect();
    let values = (0..track.cols())
        .map(|c| {
            let col: Vec<f64> = (0..track.rows()).map(|r| track.get(r, c)).collect();
            mean(&col)
        })
        .collect();
    Ok(NamedVector { names, values })
}
