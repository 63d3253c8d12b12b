//! Shared persistence helpers: exact float text, content hashes, and the
//! `MINE` binary record format.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{MineError, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const RECORD_MAGIC: &[u8; 4] = b"MINE";
pub const RECORD_FORMAT_VERSION: u16 = 1;

/// Seventeen significant digits; parses back to the identical f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| MineError::InvalidInput(format!("cannot parse {s:?} as f64: {e}")))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Fixed-width rows of `features ‖ target` stored as little-endian f64.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordTable {
    pub feature_count: usize,
    pub target_width: usize,
    pub data: Vec<f64>,
}

impl RecordTable {
    pub fn new(feature_count: usize, target_width: usize) -> Self {
        Self { feature_count, target_width, data: Vec::new() }
    }

    pub fn row_width(&self) -> usize {
        self.feature_count + self.target_width
    }

    pub fn len(&self) -> usize {
        if self.row_width() == 0 {
            0
        } else {
            self.data.len() / self.row_width()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&mut self, features: &[f64], target: &[f64]) -> Result<()> {
        if features.len() != self.feature_count || target.len() != self.target_width {
            return Err(MineError::shape(format!(
                "record ({}, {}) does not match table ({}, {})",
                features.len(),
                target.len(),
                self.feature_count,
                self.target_width
            )));
        }
        self.data.extend_from_slice(features);
        self.data.extend_from_slice(target);
        Ok(())
    }

    pub fn features(&self, i: usize) -> &[f64] {
        let start = i * self.row_width();
        &self.data[start..start + self.feature_count]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        let start = i * self.row_width() + self.feature_count;
        &self.data[start..start + self.target_width]
    }

    /// Header: magic, format version (u16), feature count (u16); then rows.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let fc = u16::try_from(self.feature_count)
            .map_err(|_| MineError::Capacity { n: self.feature_count, max: u16::MAX as usize })?;
        let mut out = Vec::with_capacity(8 + self.data.len() * 8);
        out.extend_from_slice(RECORD_MAGIC);
        out.extend_from_slice(&RECORD_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&fc.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    /// The target width is not in the header; it comes from the sidecar.
    pub fn from_bytes(bytes: &[u8], target_width: usize) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != RECORD_MAGIC {
            return Err(MineError::InvalidInput("missing MINE record header".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != RECORD_FORMAT_VERSION {
            return Err(MineError::InvalidInput(format!("unsupported record format version {version}")));
        }
        let feature_count = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        let body = &bytes[8..];
        let width = feature_count + target_width;
        if body.len() % 8 != 0 || (width > 0 && (body.len() / 8) % width != 0) {
            return Err(MineError::InvalidInput("record body is not a whole number of rows".into()));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self { feature_count, target_width, data })
    }

    pub fn write_to(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(sha256_hex(&bytes))
    }

    pub fn read_from(path: &Path, target_width: usize) -> Result<(Self, String)> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        let hash = sha256_hex(&bytes);
        Ok((Self::from_bytes(&bytes, target_width)?, hash))
    }
}
