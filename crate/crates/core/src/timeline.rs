//! Hierarchical temporal partitioning shared by the video and audio
//! feature tracks.
//!
//! A series of `n` samples is divided into `r` contiguous half-open
//! segments; segment `s` covers sample indices
//! `[floor(s*n/r), floor((s+1)*n/r))`. When `n >= r` every segment is
//! non-empty and the segment lengths differ by at most one sample split
//! according to the floor rule. Each segment of each feature column is
//! summarized by its temporal mean, its population standard deviation,
//! and the sum of absolute differences of consecutive samples that both
//! fall inside the segment.

use std::ops::Range;

use thiserror::Error;

use crate::matrix::{mean, population_std, Matrix};

/// Errors from temporal summarization.
#[derive(Debug, Error)]
pub enum TimelineError {
    /// The series has fewer samples than the requested segment count.
    #[error("series of length {len} cannot be split into {resolution} segments")]
    SeriesTooShort { len: usize, resolution: usize },
}

/// Half-open index range of segment `s` out of `resolution` over `n` samples.
pub fn segment_range(n: usize, resolution: usize, s: usize) -> Range<usize> {
    debug_assert!(s < resolution);
    (s * n / resolution)..((s + 1) * n / resolution)
}

/// Number of summary statistics produced per input column.
pub const STATS_PER_COLUMN: usize = 3;

/// Column names of a summarized series: `mean/std/diff` of each input column.
pub fn summary_schema(base: &[String]) -> Vec<String> {
    let mut names = Vec::with_capacity(base.len() * STATS_PER_COLUMN);
    for b in base {
        names.push(format!("mean {b}"));
        names.push(format!("std {b}"));
        names.push(format!("diff {b}"));
    }
    names
}

/// Summarizes a `(time x features)` series into `resolution` segments.
///
/// The output has `resolution` rows and `3 * cols` columns laid out as
/// `[mean c0, std c0, diff c0, mean c1, ...]` (see [`summary_schema`]).
/// Errors when the series is shorter than `resolution`.
pub fn summarize(series: &Matrix, resolution: usize) -> Result<Matrix, TimelineError> {
    if series.rows() < resolution {
        return Err(TimelineError::SeriesTooShort {
            len: series.rows(),
            resolution,
        });
    }
    Ok(summarize_allowing_empty(series, resolution))
}

/// Like [`summarize`] but tolerates series shorter than the resolution:
/// empty segments summarize to all zeros. Used for token sequences, which
/// are routinely shorter than the coarsest frame resolutions.
pub fn summarize_allowing_empty(series: &Matrix, resolution: usize) -> Matrix {
    let n = series.rows();
    let cols = series.cols();
    let mut out = Matrix::zeros(resolution, cols * STATS_PER_COLUMN);
    let mut segment = Vec::new();
    for s in 0..resolution {
        let range = segment_range(n, resolution, s);
        for c in 0..cols {
            segment.clear();
            segment.extend(range.clone().map(|t| series.get(t, c)));
            let m = mean(&segment);
            let sd = population_std(&segment);
            let diff: f64 = segment.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
            let base = c * STATS_PER_COLUMN;
            out.set(s, base, m);
            out.set(s, base + 1, sd);
            out.set(s, base + 2, diff);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_bounds_partition_the_series() {
        // 7 samples into 5 segments: lengths 1,1,2,1,2 under the floor rule.
        let lens: Vec<usize> = (0..5).map(|s| segment_range(7, 5, s).len()).collect();
        assert_eq!(lens, vec![1, 1, 2, 1, 2]);
        assert_eq!(lens.iter().sum::<usize>(), 7);
    }

    #[test]
    fn every_segment_nonempty_when_long_enough() {
        for n in 5..200 {
            for s in 0..5 {
                assert!(
                    !segment_range(n, 5, s).is_empty(),
                    "empty segment {s} for n={n}"
                );
            }
        }
    }

    #[test]
    fn alternating_series_two_segments() {
        // [0,1,0,1] in two segments: each has mean 0.5, population std 0.5,
        // and one interior jump of size 1.
        let series = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![0.0], vec![1.0]]);
        let out = summarize(&series, 2).unwrap();
        for s in 0..2 {
            assert!((out.get(s, 0) - 0.5).abs() < 1e-15);
            assert!((out.get(s, 1) - 0.5).abs() < 1e-15);
            assert!((out.get(s, 2) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn diff_counts_only_interior_pairs() {
        // Segments [0,2) and [2,4): the 1->2 boundary jump belongs to
        // neither segment.
        let series = Matrix::from_rows(&[vec![0.0], vec![0.0], vec![5.0], vec![5.0]]);
        let out = summarize(&series, 2).unwrap();
        assert_eq!(out.get(0, 2), 0.0);
        assert_eq!(out.get(1, 2), 0.0);
    }

    #[test]
    fn short_series_is_an_error() {
        let series = Matrix::zeros(3, 1);
        let err = summarize(&series, 5).unwrap_err();
        assert!(matches!(
            err,
            TimelineError::SeriesTooShort {
                len: 3,
                resolution: 5
            }
        ));
    }

    #[test]
    fn empty_segments_summarize_to_zero() {
        let series = Matrix::from_rows(&[vec![2.0], vec![4.0]]);
        let out = summarize_allowing_empty(&series, 5);
        assert_eq!(out.rows(), 5);
        // Segments: [0,0),[0,0),[0,1),[1,1),[1,2) -> rows 2 and 4 carry data.
        assert_eq!(out.get(0, 0), 0.0);
        assert_eq!(out.get(2, 0), 2.0);
        assert_eq!(out.get(4, 0), 4.0);
    }

    #[test]
    fn duplicated_half_series_repeats_summaries() {
        // Concatenating a block with itself makes segment k and k + r/2
        // identical for even r.
        let half: Vec<Vec<f64>> = (0..8).map(|i| vec![(i as f64).sin(), i as f64]).collect();
        let mut both = half.clone();
        both.extend(half);
        let series = Matrix::from_rows(&both);
        let out = summarize(&series, 4).unwrap();
        for s in 0..2 {
            for c in 0..out.cols() {
                assert!(
                    (out.get(s, c) - out.get(s + 2, c)).abs() < 1e-12,
                    "segment {s} col {c}"
                );
            }
        }
    }

    #[test]
    fn schema_names_follow_column_order() {
        let names = summary_schema(&["loudness".to_string(), "width".to_string()]);
        assert_eq!(
            names,
            vec![
                "mean loudness",
                "std loudness",
                "diff loudness",
                "mean width",
                "std width",
                "diff width"
            ]
        );
    }
}
