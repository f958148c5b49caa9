//! Row-major `f64` matrix files.
//!
//! Layout: ASCII `LLEF64\n`, ASCII `"<rows> <cols>\n"`, then `rows * cols`
//! little-endian IEEE-754 doubles.

use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub const MAGIC: &[u8] = b"LLEF64\n";

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayData {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl ArrayData {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

pub fn encode_array(rows: usize, cols: usize, data: &[f64]) -> Result<Vec<u8>> {
    if data.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "array of {} values cannot be {rows}x{cols}",
            data.len()
        )));
    }
    let header = format!("{rows} {cols}\n");
    let mut out = Vec::with_capacity(MAGIC.len() + header.len() + data.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_array(bytes: &[u8]) -> Result<ArrayData> {
    for (i, &expected) in MAGIC.iter().enumerate() {
        match bytes.get(i) {
            Some(&b) if b == expected => {}
            Some(_) => {
                return Err(Error::Format {
                    offset: i,
                    message: "bad magic".into(),
                })
            }
            None => {
                return Err(Error::Format {
                    offset: i,
                    message: "truncated magic".into(),
                })
            }
        }
    }
    let start = MAGIC.len();
    let newline = bytes[start..]
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format {
            offset: bytes.len(),
            message: "unterminated shape line".into(),
        })?;
    let line = std::str::from_utf8(&bytes[start..start + newline]).map_err(|_| Error::Format {
        offset: start,
        message: "shape line is not ASCII".into(),
    })?;
    let mut parts = line.split(' ');
    let mut dim = || -> Result<usize> {
        parts
            .next()
            .and_then(|p| p.parse::<usize>().ok())
            .ok_or_else(|| Error::Format {
                offset: start,
                message: format!("malformed shape line {line:?}"),
            })
    };
    let rows = dim()?;
    let cols = dim()?;
    if parts.next().is_some() {
        return Err(Error::Format {
            offset: start,
            message: format!("malformed shape line {line:?}"),
        });
    }
    let payload_start = start + newline + 1;
    let count = rows.checked_mul(cols).ok_or_else(|| Error::Format {
        offset: start,
        message: "shape overflows".into(),
    })?;
    let expected_end = payload_start + count * 8;
    if bytes.len() < expected_end {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!("truncated payload, expected {count} values ending at byte {expected_end}"),
        });
    }
    if bytes.len() > expected_end {
        return Err(Error::Format {
            offset: expected_end,
            message: "trailing bytes after payload".into(),
        });
    }
    let data = bytes[payload_start..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ArrayData { rows, cols, data })
}

pub fn save_array(path: impl AsRef<Path>, rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    fs::write(path, encode_array(rows, cols, data)?)?;
    Ok(())
}

pub fn load_array(path: impl AsRef<Path>) -> Result<ArrayData> {
    decode_array(&fs::read(path)?)
}
