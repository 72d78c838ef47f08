//! Self-describing binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic `ESTR` | u32 version | u16 kind-len, kind bytes
//! u64 config-len, config JSON | u32 tensor count
//! per tensor: u16 name-len, name | u8 ndim | u64 × ndim dims | f32 × n data
//! ```
//!
//! Tensor data is row-major. Both the toy-LM and SAE checkpoints use this
//! container; `kind` distinguishes them and `config` carries the typed
//! model config as JSON.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ESTR";
pub const FORMAT_VERSION: u32 = 1;

/// A named row-major f32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// An in-memory checkpoint: kind tag, JSON config block, named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub config: serde_json::Value,
    tensors: Vec<NamedTensor>,
}

impl Container {
    pub fn new(kind: &str, config: &impl Serialize) -> Result<Self> {
        Ok(Container {
            kind: kind.to_string(),
            config: serde_json::to_value(config)
                .map_err(|e| Error::Container(format!("config serialization: {e}")))?,
            tensors: Vec::new(),
        })
    }

    pub fn config_as<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.config.clone())
            .map_err(|e| Error::Container(format!("config deserialization: {e}")))
    }

    pub fn push_tensor(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Container(format!(
                "tensor {name:?}: shape {shape:?} holds {n} elements, data has {}",
                data.len()
            )));
        }
        if self.tensors.iter().any(|t| t.name == name) {
            return Err(Error::Container(format!("duplicate tensor name {name:?}")));
        }
        self.tensors.push(NamedTensor {
            name: name.to_string(),
            shape,
            data,
        });
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Container(format!("missing tensor {name:?}")))
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::Container(format!(
                "checkpoint kind is {:?}, expected {kind:?}",
                self.kind
            )))
        }
    }

    // ── Serialization ──────────────────────────────────────────────────

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        let io_err = |e: std::io::Error| Error::Container(format!("write: {e}"));
        w.write_all(MAGIC).map_err(io_err)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io_err)?;
        write_str16(w, &self.kind)?;
        let config = serde_json::to_vec(&self.config)
            .map_err(|e| Error::Container(format!("config serialization: {e}")))?;
        w.write_all(&(config.len() as u64).to_le_bytes())
            .map_err(io_err)?;
        w.write_all(&config).map_err(io_err)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())
            .map_err(io_err)?;
        for t in &self.tensors {
            write_str16(w, &t.name)?;
            w.write_all(&[t.shape.len() as u8]).map_err(io_err)?;
            for &d in &t.shape {
                w.write_all(&(d as u64).to_le_bytes()).map_err(io_err)?;
            }
            for &x in &t.data {
                w.write_all(&x.to_le_bytes()).map_err(io_err)?;
            }
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Container(format!(
                "bad magic {magic:?}, expected {MAGIC:?}"
            )));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Container(format!(
                "unsupported format version {version} (supported: {FORMAT_VERSION})"
            )));
        }
        let kind = read_str16(r)?;
        let config_len = read_u64(r)? as usize;
        let mut config_bytes = vec![0u8; config_len];
        read_exact(r, &mut config_bytes)?;
        let config = serde_json::from_slice(&config_bytes)
            .map_err(|e| Error::Container(format!("config JSON: {e}")))?;
        let n_tensors = read_u32(r)? as usize;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name = read_str16(r)?;
            let mut ndim = [0u8; 1];
            read_exact(r, &mut ndim)?;
            let mut shape = Vec::with_capacity(ndim[0] as usize);
            for _ in 0..ndim[0] {
                shape.push(read_u64(r)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 4];
            read_exact(r, &mut raw)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        Ok(Container {
            kind,
            config,
            tensors,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Container::read(&mut &bytes[..])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        self.write(&mut w)?;
        w.flush()
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Container::read(&mut BufReader::new(file))
    }
}

fn write_str16(w: &mut impl Write, s: &str) -> Result<()> {
    let bytes = s.as_bytes();
    if bytes.len() > u16::MAX as usize {
        return Err(Error::Container(format!("string too long: {} bytes", bytes.len())));
    }
    w.write_all(&(bytes.len() as u16).to_le_bytes())
        .and_then(|_| w.write_all(bytes))
        .map_err(|e| Error::Container(format!("write: {e}")))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Container(format!("truncated checkpoint: {e}")))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str16(r: &mut impl Read) -> Result<String> {
    let mut len = [0u8; 2];
    read_exact(r, &mut len)?;
    let mut bytes = vec![0u8; u16::from_le_bytes(len) as usize];
    read_exact(r, &mut bytes)?;
    String::from_utf8(bytes).map_err(|e| Error::Container(format!("non-utf8 string: {e}")))
}
