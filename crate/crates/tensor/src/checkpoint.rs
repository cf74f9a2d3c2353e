//! Self-describing binary container for named tensors.
//!
//! Layout: the 8-byte magic `BTRKCKPT`, a little-endian `u32` format
//! version, a `u64` header length, a JSON header, then the raw
//! little-endian tensor data in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::element::{DType, Element};
use crate::error::{Result, TensorError};
use crate::tensor::{numel, Tensor};

const MAGIC: &[u8; 8] = b"BTRKCKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    meta: Value,
    dtype: DType,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

/// Named tensors plus free-form JSON metadata.
#[derive(Clone, Debug)]
pub struct Checkpoint<E: Element> {
    pub meta: Value,
    pub tensors: Vec<(String, Tensor<E>)>,
}

impl<E: Element> Checkpoint<E> {
    pub fn new(meta: Value) -> Self {
        Self {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<E>) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = Header {
            meta: self.meta.clone(),
            dtype: E::DTYPE,
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| Entry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::new();
        for (_, t) in &self.tensors {
            buf.clear();
            t.data().iter().for_each(|v| v.write_le(&mut buf));
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TensorError::Checkpoint("bad magic bytes".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        if header.dtype != E::DTYPE {
            return Err(TensorError::Checkpoint(format!(
                "stored as {:?}, requested {:?}",
                header.dtype,
                E::DTYPE
            )));
        }
        let size = E::DTYPE.size();
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let mut bytes = vec![0u8; numel(&entry.shape) * size];
            r.read_exact(&mut bytes)
                .map_err(|_| TensorError::Checkpoint(format!("truncated data for `{}`", entry.name)))?;
            let data = bytes.chunks_exact(size).map(E::read_le).collect();
            tensors.push((entry.name, Tensor::new(entry.shape, data)?));
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
