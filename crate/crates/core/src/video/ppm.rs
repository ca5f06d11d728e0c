//! Binary PPM (`P6`) frame decoding.
//!
//! Frames are stored as plain binary PPM with a maxval of 255: the header
//! `P6 <width> <height> 255` (tokens separated by whitespace, `#` comments
//! allowed through the end of their line), one whitespace byte, then
//! `width * height` interleaved RGB byte triples.

use std::fs;
use std::path::Path;

use super::{RgbFrame, VideoError};

fn ppm_err(path: &Path, reason: &str) -> VideoError {
    VideoError::Ppm {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Reads one header token, skipping whitespace and `#` comments.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    if *pos >= bytes.len() {
        return None;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Some(&bytes[start..*pos])
}

fn parse_dim(token: &[u8]) -> Option<usize> {
    std::str::from_utf8(token).ok()?.parse().ok()
}

/// Decodes a binary PPM file into an [`RgbFrame`].
pub fn read_ppm(path: &Path) -> Result<RgbFrame, VideoError> {
    let bytes = fs::read(path).map_err(|source| VideoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut pos = 0;
    let magic = next_token(&bytes, &mut pos).ok_or_else(|| ppm_err(path, "missing header"))?;
    if magic != b"P6" {
        return Err(ppm_err(path, "not a binary PPM (expected magic P6)"));
    }
    let width = next_token(&bytes, &mut pos)
        .and_then(parse_dim)
        .ok_or_else(|| ppm_err(path, "bad width"))?;
    let height = next_token(&bytes, &mut pos)
        .and_then(parse_dim)
        .ok_or_else(|| ppm_err(path, "bad height"))?;
    let maxval = next_token(&bytes, &mut pos)
        .and_then(parse_dim)
        .ok_or_else(|| ppm_err(path, "bad maxval"))?;
    if maxval != 255 {
        return Err(ppm_err(path, &format!("unsupported maxval {maxval} (need 255)")));
    }
    if width == 0 || height == 0 {
        return Err(ppm_err(path, "zero-sized frame"));
    }
    // Exactly one whitespace byte separates the header from pixel data.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(ppm_err(path, "missing pixel-data separator"));
    }
    pos += 1;
    let need = width * height * 3;
    let data = &bytes[pos..];
    if data.len() < need {
        return Err(ppm_err(
            path,
            &format!("pixel data truncated: have {}, need {need}", data.len()),
        ));
    }
    Ok(RgbFrame {
        width,
        height,
        pixels: data[..need].to_vec(),
    })
}

/// Encodes a frame as binary PPM bytes (used by tests and tools).
pub fn ppm_bytes(frame: &RgbFrame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.pixels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(bytes: &[u8]) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.ppm");
        fs::write(&path, bytes).unwrap();
        (dir, path)
    }

    #[test]
    fn round_trips_a_frame() {
        let frame = RgbFrame {
            width: 2,
            height: 1,
            pixels: vec![255, 0, 0, 0, 255, 0],
        };
        let (_dir, path) = write_tmp(&ppm_bytes(&frame));
        let back = read_ppm(&path).unwrap();
        assert_eq!(back, frame);
    }

    #[test]
    fn header_comments_are_skipped() {
        let (_dir, path) = write_tmp(b"P6\n# made by a camera\n1 1\n# more\n255\n\xff\x00\x7f");
        let frame = read_ppm(&path).unwrap();
        assert_eq!(frame.pixels, vec![255, 0, 127]);
    }

    #[test]
    fn rejects_wrong_magic_maxval_and_truncation() {
        let (_d1, p1) = write_tmp(b"P5\n1 1\n255\n\x00");
        assert!(read_ppm(&p1).is_err());

        let (_d2, p2) = write_tmp(b"P6\n1 1\n254\n\x00\x00\x00");
        assert!(read_ppm(&p2).is_err());

        let (_d3, p3) = write_tmp(b"P6\n2 2\n255\n\x00\x00\x00");
        assert!(read_ppm(&p3).is_err());
    }
}
