//! Advertisement records, manifest loading and per-modality feature sets.
//!
//! A dataset is described by a JSON-Lines manifest: one advertisement per
//! line with its media locations and viewer signals. Relative media paths
//! are resolved against the manifest's parent directory so a dataset
//! directory can be moved as a unit.

pub mod cache;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::timeline;

/// Errors from manifest parsing, record validation and the feature cache.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {message}")]
    ManifestLine { line: usize, message: String },
    #[error("duplicate advertisement id \"{0}\"")]
    DuplicateId(String),
    #[error("record \"{id}\": {reason}")]
    Validation { id: String, reason: String },
    #[error("no cached {modality} features for \"{id}\"")]
    CacheMissing { id: String, modality: Modality },
    #[error("unsupported feature cache version {found} (expected {expected})")]
    CacheVersion { found: u32, expected: u32 },
    #[error("corrupt feature cache {path}: {reason}")]
    CacheCorrupt { path: PathBuf, reason: String },
    #[error("invalid feature set: {0}")]
    InvalidFeatures(String),
}

/// The three input channels of an advertisement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Video,
    Audio,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Video, Modality::Audio, Modality::Text];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Video => "video",
            Modality::Audio => "audio",
            Modality::Text => "text",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A binary effectiveness judgment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectivenessLabel {
    Effective,
    Ineffective,
}

impl EffectivenessLabel {
    pub fn is_effective(self) -> bool {
        matches!(self, EffectivenessLabel::Effective)
    }

    pub fn from_bool(effective: bool) -> Self {
        if effective {
            EffectivenessLabel::Effective
        } else {
            EffectivenessLabel::Ineffective
        }
    }
}

/// Raw manifest line as written on disk.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    frames_dir: String,
    audio_path: String,
    transcript: String,
    likes: u64,
    views: u64,
    comments: Vec<String>,
    #[serde(default)]
    study_ratings: Option<Vec<f64>>,
    #[serde(default)]
    category: Option<String>,
}

/// One advertisement: media locations plus viewer signals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdRecord {
    /// Unique non-empty identifier.
    pub id: String,
    /// Directory of still frames (`.ppm`), ordered by file name.
    pub frames_dir: PathBuf,
    /// Soundtrack file (RIFF WAVE, 16-bit PCM).
    pub audio_path: PathBuf,
    /// Spoken/shown transcript text.
    pub transcript: String,
    /// Like count at collection time.
    pub likes: u64,
    /// View count at collection time.
    pub views: u64,
    /// Viewer comment texts (possibly empty).
    pub comments: Vec<String>,
    /// Per-respondent mean questionnaire ratings, when a user study exists.
    pub study_ratings: Option<Vec<f64>>,
    /// Optional product category tag.
    pub category: Option<String>,
}

/// Loads a JSON-Lines manifest. Blank lines are ignored; any other
/// malformed line fails with its 1-based line number, and duplicate ids
/// fail naming the id. Relative media paths are resolved against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<AdRecord>, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(line).map_err(|e| DataError::ManifestLine {
                line: idx + 1,
                message: e.to_string(),
            })?;
        if !seen.insert(raw.id.clone()) {
            return Err(DataError::DuplicateId(raw.id));
        }
        records.push(AdRecord {
            id: raw.id,
            frames_dir: resolve(base, &raw.frames_dir),
            audio_path: resolve(base, &raw.audio_path),
            transcript: raw.transcript,
            likes: raw.likes,
            views: raw.views,
            comments: raw.comments,
            study_ratings: raw.study_ratings,
            category: raw.category,
        });
    }
    Ok(records)
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Minimum number of frame files a record must provide.
pub const MIN_FRAMES: usize = 10;

/// Lists a record's frame files (`.ppm`), sorted by file name.
pub fn list_frame_files(frames_dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let entries = fs::read_dir(frames_dir).map_err(|source| DataError::Io {
        path: frames_dir.to_path_buf(),
        source,
    })?;
    let mut frames: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("ppm"))
        })
        .collect();
    frames.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(frames)
}

/// Checks that a record's media exist and its signals are well-formed:
/// non-empty id, at least [`MIN_FRAMES`] frame files, an existing audio
/// file, and finite non-empty study ratings when present.
pub fn validate_record(record: &AdRecord) -> Result<(), DataError> {
    let fail = |reason: String| DataError::Validation {
        id: record.id.clone(),
        reason,
    };
    if record.id.is_empty() {
        return Err(DataError::Validation {
            id: "<empty>".into(),
            reason: "id must be non-empty".into(),
        });
    }
    if !record.frames_dir.is_dir() {
        return Err(fail(format!(
            "frames_dir {} is not a directory",
            record.frames_dir.display()
        )));
    }
    let frames = list_frame_files(&record.frames_dir)?;
    if frames.len() < MIN_FRAMES {
        return Err(fail(format!(
            "frames_dir has {} frame files, need at least {MIN_FRAMES}",
            frames.len()
        )));
    }
    if !record.audio_path.is_file() {
        return Err(fail(format!(
            "audio_path {} is not a file",
            record.audio_path.display()
        )));
    }
    match &record.study_ratings {
        Some(r) if r.is_empty() => Err(fail("study_ratings present but empty".into())),
        Some(r) if r.iter().any(|v| !v.is_finite()) => {
            Err(fail("study_ratings contain a non-finite value".into()))
        }
        _ => Ok(()),
    }
}

/// Segment counts of the three temporal resolutions, finest first.
pub const RESOLUTIONS: [usize; 3] = [50, 20, 5];

/// Extracted features of one modality of one advertisement.
///
/// `high_res` holds the full-rate track (one row per sampled frame,
/// 100 ms audio frame, or token); the three resolution matrices summarize
/// it into exactly 50, 20 and 5 temporal segments with a `mean/std/diff`
/// triple per high-rate column (plus extra per-segment columns for audio;
/// see the module that built the set).
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityFeatures {
    pub modality: Modality,
    /// Names of the `high_res` columns.
    pub dims_schema: Vec<String>,
    /// Full-rate track, `time x dims_schema.len()`.
    pub high_res: Matrix,
    /// Names of the resolution-matrix columns.
    pub summary_schema: Vec<String>,
    /// 50-segment summary, `50 x summary_schema.len()`.
    pub res50: Matrix,
    /// 20-segment summary.
    pub res20: Matrix,
    /// 5-segment summary.
    pub res5: Matrix,
}

impl ModalityFeatures {
    /// Enforces the shape and finiteness invariants.
    pub fn validate(&self) -> Result<(), DataError> {
        let err = |m: String| DataError::InvalidFeatures(m);
        if self.high_res.rows() == 0 {
            return Err(err("high_res must have at least one row".into()));
        }
        if self.high_res.cols() != self.dims_schema.len() {
            return Err(err(format!(
                "high_res has {} columns but dims_schema names {}",
                self.high_res.cols(),
                self.dims_schema.len()
            )));
        }
        for (m, want) in [(&self.res50, 50), (&self.res20, 20), (&self.res5, 5)] {
            if m.rows() != want {
                return Err(err(format!(
                    "resolution matrix has {} rows, expected {want}",
                    m.rows()
                )));
            }
            if m.cols() != self.summary_schema.len() {
                return Err(err(format!(
                    "resolution matrix has {} columns but summary_schema names {}",
                    m.cols(),
                    self.summary_schema.len()
                )));
            }
        }
        for m in [&self.high_res, &self.res50, &self.res20, &self.res5] {
            if !m.all_finite() {
                return Err(err("feature matrices must be finite".into()));
            }
        }
        Ok(())
    }

    /// Builds a feature set whose resolution matrices are the plain
    /// `mean/std/diff` summaries of `high_res`. Modalities that append
    /// extra per-segment columns (audio) assemble their sets directly.
    pub fn from_track(
        modality: Modality,
        dims_schema: Vec<String>,
        high_res: Matrix,
    ) -> Result<Self, crate::timeline::TimelineError> {
        let summary_schema = timeline::summary_schema(&dims_schema);
        let res50 = timeline::summarize(&high_res, 50)?;
        let res20 = timeline::summarize(&high_res, 20)?;
        let res5 = timeline::summarize(&high_res, 5)?;
        Ok(Self {
            modality,
            dims_schema,
            high_res,
            summary_schema,
            res50,
            res20,
            res5,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(path: &Path, bytes: &[u8]) {
        let mut f = fs::File::create(path).unwrap();
        f.write_all(bytes).unwrap();
    }

    fn manifest_line(id: &str, frames: &str, audio: &str) -> String {
        format!(
            "{{\"id\":\"{id}\",\"frames_dir\":\"{frames}\",\"audio_path\":\"{audio}\",\
             \"transcript\":\"buy now\",\"likes\":10,\"views\":100,\"comments\":[\"nice\"]}}"
        )
    }

    #[test]
    fn load_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("ads.jsonl");
        write_file(&manifest, manifest_line("a1", "media/a1", "media/a1.wav").as_bytes());
        let records = load_manifest(&manifest).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].frames_dir, dir.path().join("media/a1"));
        assert_eq!(records[0].audio_path, dir.path().join("media/a1.wav"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("ads.jsonl");
        let good = manifest_line("a1", "f", "a.wav");
        write_file(&manifest, format!("{good}\n{{not json}}\n").as_bytes());
        let err = load_manifest(&manifest).unwrap_err();
        match err {
            DataError::ManifestLine { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("ads.jsonl");
        let mut line = manifest_line("a1", "f", "a.wav");
        line.insert_str(line.len() - 1, ",\"bogus\":1");
        write_file(&manifest, line.as_bytes());
        assert!(matches!(
            load_manifest(&manifest),
            Err(DataError::ManifestLine { line: 1, .. })
        ));
    }

    #[test]
    fn duplicate_id_is_rejected_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("ads.jsonl");
        let line = manifest_line("dup", "f", "a.wav");
        write_file(&manifest, format!("{line}\n{line}\n").as_bytes());
        match load_manifest(&manifest).unwrap_err() {
            DataError::DuplicateId(id) => assert_eq!(id, "dup"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn blank_lines_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("ads.jsonl");
        let line = manifest_line("a1", "f", "a.wav");
        write_file(&manifest, format!("\n{line}\n\n").as_bytes());
        assert_eq!(load_manifest(&manifest).unwrap().len(), 1);
    }

    fn record_with_media(dir: &Path, frames: usize) -> AdRecord {
        let frames_dir = dir.join("frames");
        fs::create_dir_all(&frames_dir).unwrap();
        for i in 0..frames {
            write_file(&frames_dir.join(format!("f{i:04}.ppm")), b"P6\n1 1\n255\n\0\0\0");
        }
        let audio = dir.join("a.wav");
        write_file(&audio, b"RIFF");
        AdRecord {
            id: "ad".into(),
            frames_dir,
            audio_path: audio,
            transcript: String::new(),
            likes: 0,
            views: 0,
            comments: vec![],
            study_ratings: None,
            category: None,
        }
    }

    #[test]
    fn validate_accepts_ten_frames_and_rejects_nine() {
        let dir = tempfile::tempdir().unwrap();
        let record = record_with_media(dir.path(), 10);
        assert!(validate_record(&record).is_ok());

        let dir2 = tempfile::tempdir().unwrap();
        let record2 = record_with_media(dir2.path(), 9);
        let err = validate_record(&record2).unwrap_err();
        assert!(err.to_string().contains("9 frame files"), "{err}");
    }

    #[test]
    fn validate_rejects_missing_audio_and_empty_ratings() {
        let dir = tempfile::tempdir().unwrap();
        let mut record = record_with_media(dir.path(), 10);
        record.audio_path = dir.path().join("missing.wav");
        assert!(validate_record(&record).is_err());

        let mut record = record_with_media(dir.path(), 10);
        record.study_ratings = Some(vec![]);
        assert!(validate_record(&record).is_err());
    }

    #[test]
    fn frame_listing_is_sorted_and_filtered() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.ppm", "a.ppm", "c.txt", "d.PPM"] {
            write_file(&dir.path().join(name), b"x");
        }
        let frames = list_frame_files(dir.path()).unwrap();
        let names: Vec<_> = frames
            .iter()
            .map(|p| p.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        assert_eq!(names, vec!["a.ppm", "b.ppm", "d.PPM"]);
    }

    #[test]
    fn feature_invariants_catch_bad_shapes() {
        let schema = vec!["x".to_string()];
        let track = Matrix::from_rows(&(0..60).map(|i| vec![i as f64]).collect::<Vec<_>>());
        let good = ModalityFeatures::from_track(Modality::Video, schema, track).unwrap();
        assert!(good.validate().is_ok());

        let mut short = good.clone();
        short.res5 = Matrix::zeros(4, short.summary_schema.len());
        assert!(short.validate().is_err());

        let mut misnamed = good.clone();
        misnamed.dims_schema.push("extra".into());
        assert!(misnamed.validate().is_err());

        let mut infinite = good;
        let c = infinite.high_res.cols();
        infinite.high_res.set(0, c - 1, f64::INFINITY);
        assert!(infinite.validate().is_err());
    }
}
