//! Versioned binary bundle of named `f64` matrices plus a JSON metadata block.
//!
//! Layout (little endian): 8-byte magic `VTBUNDLE`, `u32` format version,
//! `u64` header length, UTF-8 JSON header, then each array's values in row
//! major order, in header order.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"VTBUNDLE";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayHeader {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    arrays: Vec<ArrayHeader>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub kind: String,
    pub meta: serde_json::Value,
    arrays: Vec<(String, Array2<f64>)>,
}

impl Bundle {
    pub fn new(kind: &str, meta: serde_json::Value) -> Self {
        Bundle {
            kind: kind.to_string(),
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push_matrix(&mut self, name: &str, m: Array2<f64>) -> &mut Self {
        self.arrays.push((name.to_string(), m));
        self
    }

    pub fn push_vector(&mut self, name: &str, v: &Array1<f64>) -> &mut Self {
        let m = v.clone().into_shape_with_order((v.len(), 1)).expect("column shape");
        self.push_matrix(name, m)
    }

    pub fn matrix(&self, name: &str) -> Result<&Array2<f64>> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Format(format!("bundle `{}` has no array `{name}`", self.kind)))
    }

    pub fn vector(&self, name: &str) -> Result<Array1<f64>> {
        let m = self.matrix(name)?;
        if m.ncols() != 1 {
            return Err(Error::Format(format!("array `{name}` is not a column vector")));
        }
        Ok(m.column(0).to_owned())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(name, m)| ArrayHeader {
                    name: name.clone(),
                    rows: m.nrows(),
                    cols: m.ncols(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let payload: usize = self.arrays.iter().map(|(_, m)| m.len() * 8).sum();
        let mut out = Vec::with_capacity(20 + header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, m) in &self.arrays {
            for x in m.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let short = || Error::Format("truncated bundle".into());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::Format("missing bundle magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported bundle version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header_end = 20usize.checked_add(header_len).ok_or_else(short)?;
        let header: Header = serde_json::from_slice(bytes.get(20..header_end).ok_or_else(short)?)?;
        let mut offset = header_end;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for a in &header.arrays {
            let n = a.rows * a.cols;
            let chunk = bytes.get(offset..offset + n * 8).ok_or_else(short)?;
            let values: Vec<f64> = chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset += n * 8;
            let m = Array2::from_shape_vec((a.rows, a.cols), values)
                .map_err(|e| Error::Format(e.to_string()))?;
            arrays.push((a.name.clone(), m));
        }
        if offset != bytes.len() {
            return Err(Error::Format("trailing bytes after bundle payload".into()));
        }
        Ok(Bundle {
            kind: header.kind,
            meta: header.meta,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn expect_kind(self, kind: &str) -> Result<Self> {
        if self.kind == kind {
            Ok(self)
        } else {
            Err(Error::Format(format!("expected a `{kind}` bundle, found `{}`", self.kind)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bytes_round_trip(rows in 0usize..5, cols in 1usize..5, seed in any::<u64>()) {
            let values: Vec<f64> = (0..rows * cols)
                .map(|i| ((seed.wrapping_mul(i as u64 + 1)) as f64).sin() * 1e3)
                .collect();
            let m = Array2::from_shape_vec((rows, cols), values).unwrap();
            let mut b = Bundle::new("t", serde_json::json!({"k": 3}));
            b.push_matrix("m", m.clone());
            b.push_vector("v", &array![1.5, -2.0]);
            let back = Bundle::from_bytes(&b.to_bytes()).unwrap();
            prop_assert_eq!(&back, &b);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(Bundle::from_bytes(b"nope").is_err());
        let mut b = Bundle::new("t", serde_json::Value::Null);
        b.push_vector("v", &array![1.0]);
        let mut bytes = b.to_bytes();
        bytes.pop();
        assert!(Bundle::from_bytes(&bytes).is_err());
        assert!(b.clone().expect_kind("other").is_err());
    }
}
