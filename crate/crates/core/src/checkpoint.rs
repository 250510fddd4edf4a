//! Language-neutral checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset 0   8 bytes   magic "CATPRB01"
//! offset 8   u64       header length H in bytes
//! offset 16  H bytes   UTF-8 JSON header
//! offset 16+H          array payload: f64 little-endian, arrays back to back
//! ```
//!
//! The header is `{"kind": str, "meta": object, "arrays": [{"name", "rows",
//! "cols", "offset"}]}` where `offset` counts f64 elements from the start of
//! the payload. Arrays are row-major.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

pub const MAGIC: &[u8; 8] = b"CATPRB01";

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: serde_json::Value,
    pub arrays: Vec<(String, Mat)>,
}

impl Checkpoint {
    pub fn new(kind: &str, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.to_string(),
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, m: &Mat) {
        self.arrays.push((name.into(), m.clone()));
    }

    pub fn get(&self, name: &str) -> Result<&Mat> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Checkpoint(format!("array {name} not found")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let arrays = self
            .arrays
            .iter()
            .map(|(name, m)| {
                let e = ArrayEntry {
                    name: name.clone(),
                    rows: m.rows,
                    cols: m.cols,
                    offset,
                };
                offset += m.len();
                e
            })
            .collect();
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            arrays,
        };
        let hbytes = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + hbytes.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(hbytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&hbytes);
        for (_, m) in &self.arrays {
            out.extend_from_slice(&m.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let hend = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..hend])?;
        let payload = &bytes[hend..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in header.arrays {
            let n = e.rows * e.cols;
            let start = e.offset * 8;
            let end = start + n * 8;
            if end > payload.len() {
                return Err(Error::Checkpoint(format!("array {} truncated", e.name)));
            }
            let data = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.push((e.name, Mat::from_vec(e.rows, e.cols, data)));
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            arrays,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Loads named arrays into existing tensors, checking shapes.
pub fn restore(ckpt: &Checkpoint, targets: Vec<(String, &mut Mat)>) -> Result<()> {
    for (name, m) in targets {
        let src = ckpt.get(&name)?;
        if (src.rows, src.cols) != (m.rows, m.cols) {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {}x{} vs expected {}x{}",
                src.rows, src.cols, m.rows, m.cols
            )));
        }
        m.data.copy_from_slice(&src.data);
    }
    Ok(())
}
