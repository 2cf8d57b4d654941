//! Self-describing checkpoint container shared by the encoder and the filter.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic   b"SKFGCKPT"
//! version u32
//! hlen    u32
//! header  hlen bytes of UTF-8 JSON: {"kind", "config", "metadata", "tensors": [{"name", "shape"}]}
//! data    every tensor in header order, row-major f32
//! sha256  32 bytes over everything above
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::sha256_bytes;

pub const MAGIC: &[u8; 8] = b"SKFGCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub config: serde_json::Value,
    pub metadata: serde_json::Value,
    pub tensors: Vec<TensorHeader>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    /// One flat buffer per tensor, matching `header.tensors`.
    pub data: Vec<Vec<f32>>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.data.len() != self.header.tensors.len() {
            return Err(Error::Checkpoint("tensor count does not match header".into()));
        }
        for (t, d) in self.header.tensors.iter().zip(&self.data) {
            if t.shape.iter().product::<usize>() != d.len() {
                return Err(Error::Checkpoint(format!("tensor {} has wrong length", t.name)));
            }
        }
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(header.len() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for d in &self.data {
            for x in d {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = sha256_bytes(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 + 32 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic or too short)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if sha256_bytes(body) != digest {
            return Err(bad("checksum mismatch (file is truncated or corrupted)"));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let header_end = 16 + hlen;
        if header_end > body.len() {
            return Err(bad("header runs past end of file"));
        }
        let header: Header = serde_json::from_slice(&body[16..header_end])?;
        let mut pos = header_end;
        let mut data = Vec::with_capacity(header.tensors.len());
        for t in &header.tensors {
            let n: usize = t.shape.iter().product();
            let end = pos + n * 4;
            if end > body.len() {
                return Err(bad(&format!("tensor {} truncated", t.name)));
            }
            data.push(
                body[pos..end]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            );
            pos = end;
        }
        if pos != body.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Self { header, data })
    }

    pub fn tensor(&self, name: &str) -> Option<&[f32]> {
        self.header
            .tensors
            .iter()
            .position(|t| t.name == name)
            .map(|i| self.data[i].as_slice())
    }
}
