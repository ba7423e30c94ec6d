//! Named-parameter container file used for checkpoints.
//!
//! Layout: 8-byte magic, little-endian u64 header length, JSON header
//! (entries with name/dtype/shape/offset plus free-form meta), then the
//! payload of little-endian f32 values. Offsets are relative to the start
//! of the payload and count bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

const MAGIC: &[u8; 8] = b"TAGPARM1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContainerEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ContainerHeader {
    entries: Vec<ContainerEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Debug)]
pub enum ContainerError {
    Io(std::io::Error),
    BadMagic,
    BadHeader(String),
    BadPayload(String),
}

impl std::fmt::Display for ContainerError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ContainerError::Io(e) => write!(f, "container i/o error: {e}"),
            ContainerError::BadMagic => write!(f, "not a parameter container (bad magic)"),
            ContainerError::BadHeader(m) => write!(f, "container header error: {m}"),
            ContainerError::BadPayload(m) => write!(f, "container payload error: {m}"),
        }
    }
}

impl std::error::Error for ContainerError {}

impl From<std::io::Error> for ContainerError {
    fn from(e: std::io::Error) -> Self {
        ContainerError::Io(e)
    }
}

/// A named tensor loaded from (or destined for) a container file.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn write_container(
    path: &Path,
    tensors: &[NamedTensor],
    meta: &serde_json::Value,
) -> Result<(), ContainerError> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for t in tensors {
        let n: usize = t.shape.iter().product();
        if n != t.data.len() {
            return Err(ContainerError::BadPayload(format!(
                "tensor {}: shape {:?} does not match {} values",
                t.name,
                t.shape,
                t.data.len()
            )));
        }
        entries.push(ContainerEntry {
            name: t.name.clone(),
            dtype: "f32".to_string(),
            shape: t.shape.clone(),
            offset,
        });
        offset += (t.data.len() * 4) as u64;
    }
    let header = ContainerHeader { entries, meta: meta.clone() };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| ContainerError::BadHeader(e.to_string()))?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for t in tensors {
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<(Vec<NamedTensor>, serde_json::Value), ContainerError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: ContainerHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| ContainerError::BadHeader(e.to_string()))?;

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;

    let mut tensors = Vec::with_capacity(header.entries.len());
    for e in &header.entries {
        if e.dtype != "f32" {
            return Err(ContainerError::BadHeader(format!(
                "tensor {}: unsupported dtype {}",
                e.name, e.dtype
            )));
        }
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + n * 4;
        if end > payload.len() {
            return Err(ContainerError::BadPayload(format!(
                "tensor {} extends past payload ({} > {})",
                e.name,
                end,
                payload.len()
            )));
        }
        let data: Vec<f32> = payload[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push(NamedTensor { name: e.name.clone(), shape: e.shape.clone(), data });
    }
    Ok((tensors, header.meta))
}
