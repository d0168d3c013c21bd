//! On-disk matrix, label and role formats.
//!
//! RVF1 layout: the four magic bytes `RVF1`, `rows` and `cols` as
//! little-endian `u32`, then `rows * cols` little-endian IEEE-754 `f64`
//! values in row-major order. No padding.

use std::fs;
use std::path::Path;

use crate::dataio::dataset::ImageRole;
use crate::error::{Error, Result};
use crate::numcore::Matrix;

pub const RVF1_MAGIC: [u8; 4] = *b"RVF1";
const HEADER_LEN: usize = 12;

pub fn encode_rvf1(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.len());
    out.extend_from_slice(&RVF1_MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes one RVF1 blob starting at `bytes[0]`; returns the matrix and the
/// number of bytes consumed. `base` is added to reported byte offsets.
pub fn decode_rvf1_at(bytes: &[u8], base: usize) -> Result<(Matrix, usize)> {
    let err = |offset: usize, message: String| Error::Format {
        location: format!("byte {}", base + offset),
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(err(bytes.len(), "truncated RVF1 header".into()));
    }
    if bytes[..4] != RVF1_MAGIC {
        return Err(err(
            0,
            format!("bad magic {:02x?}, expected \"RVF1\"", &bytes[..4]),
        ));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| err(4, format!("shape {rows}x{cols} overflows")))?;
    let need = HEADER_LEN + 8 * count;
    if bytes.len() < need {
        let have = (bytes.len() - HEADER_LEN) / 8;
        return Err(err(
            bytes.len(),
            format!(
                "truncated payload: header declares {rows}x{cols} = {count} values, found {have}"
            ),
        ));
    }
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let off = HEADER_LEN + 8 * i;
        let v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        if !v.is_finite() {
            return Err(err(off, format!("non-finite value {v} at entry {i}")));
        }
        data.push(v);
    }
    Ok((Matrix::from_vec(rows, cols, data)?, need))
}

/// Decodes a buffer that must hold exactly one RVF1 matrix.
pub fn decode_rvf1(bytes: &[u8]) -> Result<Matrix> {
    let (m, used) = decode_rvf1_at(bytes, 0)?;
    if used != bytes.len() {
        return Err(Error::Format {
            location: format!("byte {used}"),
            message: format!("{} trailing bytes after payload", bytes.len() - used),
        });
    }
    Ok(m)
}

pub fn save_rvf1(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_rvf1(m)).map_err(|e| Error::io(path, e))
}

/// Parses comma-separated decimal rows. Blank lines are ignored.
pub fn parse_csv(text: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (col, cell) in line.split(',').enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Format {
                location: format!("line {}", lineno + 1),
                message: format!("column {}: not a number: {:?}", col + 1, cell.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::Format {
                    location: format!("line {}", lineno + 1),
                    message: format!("column {}: non-finite value", col + 1),
                });
            }
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Format {
                    location: format!("line {}", lineno + 1),
                    message: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

pub fn format_csv(m: &Matrix) -> String {
    let mut s = String::new();
    for r in 0..m.rows() {
        let line: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

/// Loads a feature matrix, detecting RVF1 by its magic bytes and falling
/// back to CSV otherwise.
pub fn load_feature_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(&RVF1_MAGIC) {
        return decode_rvf1(&bytes);
    }
    let text = String::from_utf8(bytes).map_err(|e| Error::Format {
        location: format!("byte {}", e.utf8_error().valid_up_to()),
        message: "neither RVF1 (bad magic) nor UTF-8 CSV".into(),
    })?;
    parse_csv(&text)
}

fn parse_indexed_lines<T>(
    text: &str,
    what: &str,
    mut parse_value: impl FnMut(&str) -> Option<T>,
) -> Result<Vec<T>> {
    let mut entries: Vec<(usize, T, usize)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let loc = || format!("line {}", lineno + 1);
        let (idx, val) = line.split_once(',').ok_or_else(|| Error::Format {
            location: loc(),
            message: format!("expected `<image_index>,<{what}>`"),
        })?;
        let idx: usize = idx.trim().parse().map_err(|_| Error::Format {
            location: loc(),
            message: format!("bad image index {:?}", idx.trim()),
        })?;
        let val = parse_value(val.trim()).ok_or_else(|| Error::Format {
            location: loc(),
            message: format!("bad {what} {:?}", val.trim()),
        })?;
        entries.push((idx, val, lineno + 1));
    }
    let n = entries.len();
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    for (idx, val, lineno) in entries {
        if idx >= n || slots[idx].is_some() {
            return Err(Error::Format {
                location: format!("line {lineno}"),
                message: format!("image index {idx} is out of range or repeated ({n} lines)"),
            });
        }
        slots[idx] = Some(val);
    }
    Ok(slots.into_iter().map(|s| s.unwrap()).collect())
}

/// Parses `<image_index>,<class_index>` lines into a label per image.
pub fn parse_labels(text: &str) -> Result<Vec<usize>> {
    parse_indexed_lines(text, "class_index", |s| s.parse().ok())
}

/// Parses `<image_index>,<train|unlab|test>` lines into a role per image.
pub fn parse_roles(text: &str) -> Result<Vec<ImageRole>> {
    parse_indexed_lines(text, "role", ImageRole::parse)
}

pub fn format_labels(labels: &[usize]) -> String {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{i},{l}\n"))
        .collect()
}

pub fn format_roles(roles: &[ImageRole]) -> String {
    roles
        .iter()
        .enumerate()
        .map(|(i, r)| format!("{i},{}\n", r.as_str()))
        .collect()
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
