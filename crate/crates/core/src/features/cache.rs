//! Binary matrix container used for the feature cache and for attention
//! array dumps.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic        8 bytes   "WSEDMAT1"
//! n_records    u32
//! n_records times:
//!   name_len   u16
//!   name       name_len bytes, UTF-8
//!   config     u64       hash of the producing configuration
//!   rows       u32
//!   cols       u32
//!   values     rows * cols f32, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"WSEDMAT1";

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRecord {
    pub name: String,
    pub config_hash: u64,
    /// Stored at single precision.
    pub values: Array2<f32>,
}

impl MatrixRecord {
    pub fn from_f64(name: impl Into<String>, config_hash: u64, values: &Array2<f64>) -> Self {
        Self {
            name: name.into(),
            config_hash,
            values: values.mapv(|v| v as f32),
        }
    }
}

/// First 8 bytes of the SHA-256 of the value's JSON encoding.
pub fn config_hash<T: Serialize>(value: &T) -> u64 {
    let json = serde_json::to_vec(value).expect("config types serialize to JSON");
    let digest = Sha256::digest(&json);
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn write_matrix_records(path: impl AsRef<Path>, records: &[MatrixRecord]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        let name = r.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::InvalidArgument(format!("record name too long: {}", r.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&r.config_hash.to_le_bytes());
        let (rows, cols) = r.values.dim();
        out.extend_from_slice(&(rows as u32).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
        for v in r.values.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::File::create(path.as_ref())?.write_all(&out)?;
    Ok(())
}

pub fn read_matrix_records(path: impl AsRef<Path>) -> Result<Vec<MatrixRecord>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let malformed = |detail: &str| Error::Format {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    let mut cursor = Cursor { bytes: &bytes, pos: 0 };
    if cursor.take(8).ok_or_else(|| malformed("truncated header"))? != MAGIC {
        return Err(malformed("bad magic"));
    }
    let n = cursor.u32().ok_or_else(|| malformed("truncated header"))?;
    let mut records = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let truncated = || malformed("truncated record");
        let name_len = cursor.u16().ok_or_else(truncated)? as usize;
        let name = std::str::from_utf8(cursor.take(name_len).ok_or_else(truncated)?)
            .map_err(|_| malformed("record name is not UTF-8"))?
            .to_string();
        let config_hash = cursor.u64().ok_or_else(truncated)?;
        let rows = cursor.u32().ok_or_else(truncated)? as usize;
        let cols = cursor.u32().ok_or_else(truncated)? as usize;
        let raw = cursor.take(rows * cols * 4).ok_or_else(truncated)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        let values = Array2::from_shape_vec((rows, cols), data).map_err(|_| truncated())?;
        records.push(MatrixRecord {
            name,
            config_hash,
            values,
        });
    }
    if cursor.pos != bytes.len() {
        return Err(malformed("trailing bytes"));
    }
    Ok(records)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }
    fn u16(&mut self) -> Option<u16> {
        Some(u16::from_le_bytes(self.take(2)?.try_into().ok()?))
    }
    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}
