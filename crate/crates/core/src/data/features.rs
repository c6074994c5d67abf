//! Frozen-feature matrices and their file format.
//!
//! ```text
//! b"RXGBFEAT"  u32 version  u64 rows  u64 cols      (28-byte header, little-endian)
//! rows·cols f32 values, row-major
//! rows u8 labels
//! ```

use std::path::Path;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"RXGBFEAT";
pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_HEADER_BYTES: usize = 28;

/// Row-major `rows × cols` features with one label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub labels: Vec<u8>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::shape(
                "FeatureMatrix::new",
                format!("{} values for {}×{}", values.len(), rows, cols),
            ));
        }
        if labels.len() != rows {
            return Err(Error::shape(
                "FeatureMatrix::new",
                format!("{} labels for {} rows", labels.len(), rows),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature row {} col {}", i / cols.max(1), i % cols.max(1))));
        }
        Ok(FeatureMatrix {
            rows,
            cols,
            values,
            labels,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn labels_usize(&self) -> Vec<usize> {
        self.labels.iter().map(|&l| l as usize).collect()
    }

    /// Values rounded to the 32-bit precision the file stores.
    pub fn quantized(&self) -> FeatureMatrix {
        FeatureMatrix {
            values: self.values.iter().map(|&v| v as f32 as f64).collect(),
            ..self.clone()
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FEATURE_HEADER_BYTES + self.values.len() * 4 + self.rows);
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols as u64).to_le_bytes());
        for &v in &self.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.extend_from_slice(&self.labels);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |at: usize, d: String| Error::format("feature file", format!("byte {}", at), d);
        if bytes.len() < FEATURE_HEADER_BYTES {
            return Err(bad(bytes.len(), format!("header needs {} bytes", FEATURE_HEADER_BYTES)));
        }
        if &bytes[0..8] != FEATURE_MAGIC {
            return Err(bad(0, "bad magic (expected RXGBFEAT)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FEATURE_VERSION {
            return Err(bad(8, format!("unsupported version {}", version)));
        }
        let rows = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
        let body = rows
            .checked_mul(cols)
            .and_then(|rc| rc.checked_mul(4))
            .and_then(|b| b.checked_add(rows))
            .ok_or_else(|| bad(12, "dimensions overflow".into()))?;
        if bytes.len() - FEATURE_HEADER_BYTES != body {
            return Err(bad(
                FEATURE_HEADER_BYTES,
                format!("{}×{} needs {} body bytes, found {}", rows, cols, body, bytes.len() - FEATURE_HEADER_BYTES),
            ));
        }
        let vend = FEATURE_HEADER_BYTES + rows * cols * 4;
        let values = bytes[FEATURE_HEADER_BYTES..vend]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        FeatureMatrix::new(rows, cols, values, bytes[vend..].to_vec())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::backbone::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "run `reactxgb extract` first".into(),
            },
            _ => Error::io(path, e),
        })?;
        Self::from_bytes(&bytes)
    }
}
