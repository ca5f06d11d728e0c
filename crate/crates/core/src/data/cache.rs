//! On-disk feature cache.
//!
//! Extraction results are memoized as one binary file per
//! `(advertisement, modality)` pair so repeated runs skip the media
//! decode. A cache file is a fixed container:
//!
//! ```text
//! magic  4 bytes  "ADFC"
//! u32    version, little-endian (currently 1)
//! u8     modality tag (0 = video, 1 = audio, 2 = text)
//! 4 matrix blocks in order: high_res, res50, res20, res5
//! ```
//!
//! Each matrix block is `u32 rows`, `u32 cols`, then `cols` length-prefixed
//! UTF-8 column names (`u32 len` + bytes), then `rows * cols` `f64` values,
//! little-endian, row-major. The `high_res` block carries the modality's
//! base column names; the resolution blocks carry their own derived names.
//!
//! Writers replace files atomically (temp file + rename), so concurrent
//! writers of one key settle on whichever finished last, and readers never
//! observe a torn file. Round-trips are bit-exact: floats are moved as raw
//! IEEE-754 words.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use super::{DataError, Modality, ModalityFeatures};
use crate::matrix::Matrix;

const MAGIC: [u8; 4] = *b"ADFC";
const VERSION: u32 = 1;

fn modality_tag(m: Modality) -> u8 {
    match m {
        Modality::Video => 0,
        Modality::Audio => 1,
        Modality::Text => 2,
    }
}

/// Encodes an id so it is safe as a file-name component: alphanumerics,
/// `-`, `_` and `.` pass through, everything else becomes `%XX` per byte.
fn sanitize_id(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for b in id.bytes() {
        match b {
            b'a'..=b'z' | b'A'..=b'Z' | b'0'..=b'9' | b'-' | b'_' | b'.' => {
                out.push(b as char)
            }
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

/// Cache file path for one `(id, modality)` key.
pub fn cache_path(dir: &Path, id: &str, modality: Modality) -> PathBuf {
    dir.join(format!("{}.{}.adfc", sanitize_id(id), modality.as_str()))
}

/// True when a cache entry exists for the key.
pub fn has_entry(dir: &Path, id: &str, modality: Modality) -> bool {
    cache_path(dir, id, modality).is_file()
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_matrix(buf: &mut Vec<u8>, names: &[String], m: &Matrix) {
    buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    debug_assert_eq!(names.len(), m.cols());
    for name in names {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
    }
    for v in m.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

static WRITE_NONCE: AtomicU64 = AtomicU64::new(0);

/// Serializes a validated feature set to the cache, replacing any previous
/// entry for the key. Returns the final path.
pub fn write_features(
    dir: &Path,
    id: &str,
    features: &ModalityFeatures,
) -> Result<PathBuf, DataError> {
    features.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(modality_tag(features.modality));
    write_matrix(&mut buf, &features.dims_schema, &features.high_res);
    write_matrix(&mut buf, &features.summary_schema, &features.res50);
    write_matrix(&mut buf, &features.summary_schema, &features.res20);
    write_matrix(&mut buf, &features.summary_schema, &features.res5);

    let path = cache_path(dir, id, features.modality);
    let nonce = WRITE_NONCE.fetch_add(1, Ordering::Relaxed);
    let tmp = dir.join(format!(
        ".{}.{}.{}.{}.tmp",
        sanitize_id(id),
        features.modality.as_str(),
        std::process::id(),
        nonce
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(&buf).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, &path).map_err(io_err(&path))?;
    Ok(path)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        if self.pos + n > self.bytes.len() {
            return Err(DataError::CacheCorrupt {
                path: self.path.to_path_buf(),
                reason: "file truncated".into(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn corrupt(&self, reason: &str) -> DataError {
        DataError::CacheCorrupt {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn matrix(&mut self) -> Result<(Vec<String>, Matrix), DataError> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let mut names = Vec::with_capacity(cols);
        for _ in 0..cols {
            let len = self.u32()? as usize;
            let raw = self.take(len)?;
            let name = std::str::from_utf8(raw)
                .map_err(|_| self.corrupt("column name is not UTF-8"))?;
            names.push(name.to_string());
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(f64::from_le_bytes(self.take(8)?.try_into().unwrap()));
        }
        Ok((names, Matrix::from_vec(rows, cols, data)))
    }
}

/// Loads a cached feature set. Distinguishes a missing entry
/// ([`DataError::CacheMissing`]) from a present-but-unreadable one so
/// callers can decide between extraction and recomputation.
pub fn read_features(
    dir: &Path,
    id: &str,
    modality: Modality,
) -> Result<ModalityFeatures, DataError> {
    let path = cache_path(dir, id, modality);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(DataError::CacheMissing {
                id: id.to_string(),
                modality,
            })
        }
        Err(source) => return Err(DataError::Io { path, source }),
    };
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: &path,
    };
    if r.take(4)? != MAGIC {
        return Err(r.corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(DataError::CacheVersion {
            found: version,
            expected: VERSION,
        });
    }
    let tag = r.take(1)?[0];
    if tag != modality_tag(modality) {
        return Err(r.corrupt(&format!(
            "modality tag {tag} does not match requested {modality}"
        )));
    }
    let (dims_schema, high_res) = r.matrix()?;
    let (summary_schema, res50) = r.matrix()?;
    let (schema20, res20) = r.matrix()?;
    let (schema5, res5) = r.matrix()?;
    if r.pos != r.bytes.len() {
        return Err(r.corrupt("trailing bytes"));
    }
    if schema20 != summary_schema || schema5 != summary_schema {
        return Err(r.corrupt("resolution blocks disagree on column names"));
    }
    let features = ModalityFeatures {
        modality,
        dims_schema,
        high_res,
        summary_schema,
        res50,
        res20,
        res5,
    };
    features.validate()?;
    Ok(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn sample_features(modality: Modality, seed: u64) -> ModalityFeatures {
        let mut rng = SplitMix64::new(seed);
        let schema = vec!["alpha".to_string(), "beta".to_string()];
        let track = Matrix::random_uniform(64, 2, -3.0, 3.0, &mut rng);
        ModalityFeatures::from_track(modality, schema, track).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let features = sample_features(Modality::Audio, 5);
        write_features(dir.path(), "ad/1", &features).unwrap();
        let back = read_features(dir.path(), "ad/1", Modality::Audio).unwrap();
        assert_eq!(features, back);
        // Bit-for-bit, not just approximately equal.
        for (a, b) in features
            .high_res
            .as_slice()
            .iter()
            .zip(back.high_res.as_slice())
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn missing_entry_is_distinguished() {
        let dir = tempfile::tempdir().unwrap();
        match read_features(dir.path(), "nope", Modality::Video) {
            Err(DataError::CacheMissing { id, .. }) => assert_eq!(id, "nope"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let features = sample_features(Modality::Video, 6);
        let path = write_features(dir.path(), "v", &features).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_features(dir.path(), "v", Modality::Video),
            Err(DataError::CacheVersion { found: 9, .. })
        ));
    }

    #[test]
    fn truncation_and_bad_magic_are_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let features = sample_features(Modality::Text, 7);
        let path = write_features(dir.path(), "t", &features).unwrap();
        let bytes = fs::read(&path).unwrap();

        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            read_features(dir.path(), "t", Modality::Text),
            Err(DataError::CacheCorrupt { .. })
        ));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&path, bad).unwrap();
        assert!(matches!(
            read_features(dir.path(), "t", Modality::Text),
            Err(DataError::CacheCorrupt { .. })
        ));
    }

    #[test]
    fn modality_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let features = sample_features(Modality::Video, 8);
        write_features(dir.path(), "x", &features).unwrap();
        // Same id, asking for a modality that was never written.
        assert!(matches!(
            read_features(dir.path(), "x", Modality::Audio),
            Err(DataError::CacheMissing { .. })
        ));
    }

    #[test]
    fn last_writer_wins() {
        let dir = tempfile::tempdir().unwrap();
        let first = sample_features(Modality::Audio, 1);
        let second = sample_features(Modality::Audio, 2);
        write_features(dir.path(), "k", &first).unwrap();
        write_features(dir.path(), "k", &second).unwrap();
        let back = read_features(dir.path(), "k", Modality::Audio).unwrap();
        assert_eq!(back, second);
    }

    #[test]
    fn ids_with_path_separators_are_safe() {
        assert_eq!(sanitize_id("a/b c"), "a%2Fb%20c");
        let dir = tempfile::tempdir().unwrap();
        let features = sample_features(Modality::Text, 3);
        let path = write_features(dir.path(), "../evil", &features).unwrap();
        assert_eq!(path.parent().unwrap(), dir.path());
    }
}
