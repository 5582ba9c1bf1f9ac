//! On-disk weights and optimizer state.
//!
//! Layout: `b"RSTT"`, format version (u32 LE), header length in bytes
//! (u64 LE), a JSON header naming every tensor with its shape and byte
//! offset, then the little-endian tensor data in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use rstt_tensor::{DType, Float, Tensor};

use crate::config::ModelConfig;
use crate::error::{Result, RsttError};
use crate::params::ParamStore;
use crate::train::optim::AdamState;

pub const MAGIC: &[u8; 4] = b"RSTT";
pub const VERSION: u32 = 1;
const M_PREFIX: &str = "optimizer.m.";
const V_PREFIX: &str = "optimizer.v.";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dtype: String,
    iteration: u64,
    config: ModelConfig,
    adam_step: Option<u64>,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    /// Training iterations completed.
    pub iteration: u64,
    pub params: ParamStore<T>,
    pub optimizer: Option<AdamState<T>>,
}

fn bad(msg: impl Into<String>) -> RsttError {
    RsttError::Checkpoint(msg.into())
}

fn dtype_named(name: &str) -> Result<DType> {
    match name {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(bad(format!("unknown dtype {other:?}"))),
    }
}

impl<T: Float> Checkpoint<T> {
    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = self.params.iter().map(|(n, t)| (n.to_string(), t)).collect();
        if let Some(opt) = &self.optimizer {
            let names: Vec<&str> = self.params.iter().map(|(n, _)| n).collect();
            out.extend(names.iter().zip(&opt.m).map(|(n, t)| (format!("{M_PREFIX}{n}"), t)));
            out.extend(names.iter().zip(&opt.v).map(|(n, t)| (format!("{V_PREFIX}{n}"), t)));
        }
        out
    }

    /// Serialize in the native precision of `T`.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dtype = T::DTYPE;
        let tensors = self.named_tensors();
        let mut offset = 0u64;
        let entries = tensors
            .iter()
            .map(|(name, t)| {
                let e = Entry { name: name.clone(), shape: t.shape().to_vec(), offset };
                offset += (t.numel() * dtype.size_of()) as u64;
                e
            })
            .collect();
        let header = Header {
            dtype: dtype.name().into(),
            iteration: self.iteration,
            config: self.config.clone(),
            adam_step: self.optimizer.as_ref().map(|o| o.step),
            tensors: entries,
        };
        let text = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + text.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(&text);
        for (_, t) in &tensors {
            for &v in t.data() {
                match dtype {
                    DType::F32 => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                    DType::F64 => out.extend_from_slice(&v.as_f64().to_le_bytes()),
                }
            }
        }
        Ok(out)
    }

    /// Parse a checkpoint, converting stored values to `T`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not an RSTT checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported format version {version}, expected {VERSION}")));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let text = bytes.get(16..16 + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(text).map_err(|e| bad(format!("header: {e}")))?;
        header.config.validate()?;
        let dtype = dtype_named(&header.dtype)?;
        let blob = &bytes[16 + len..];
        let read = |e: &Entry| -> Result<Tensor<T>> {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let raw = blob.get(start..start + n * dtype.size_of()).ok_or_else(|| bad(format!("data of {} is truncated", e.name)))?;
            let data = match dtype {
                DType::F32 => raw.chunks_exact(4).map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().expect("4")) as f64)).collect(),
                DType::F64 => raw.chunks_exact(8).map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8")))).collect(),
            };
            Ok(Tensor::new(&e.shape, data)?)
        };
        let mut params = ParamStore::new();
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for e in &header.tensors {
            if e.name.starts_with(M_PREFIX) {
                m.push(read(e)?);
            } else if e.name.starts_with(V_PREFIX) {
                v.push(read(e)?);
            } else {
                params.add(e.name.clone(), read(e)?)?;
            }
        }
        let optimizer = match header.adam_step {
            Some(step) if m.len() == params.len() && v.len() == params.len() => Some(AdamState { m, v, step }),
            Some(_) => return Err(bad("optimizer state does not cover every parameter")),
            None => None,
        };
        Ok(Checkpoint { config: header.config, iteration: header.iteration, params, optimizer })
    }

    /// Write atomically: a partial file never replaces an existing one.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("partial");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
