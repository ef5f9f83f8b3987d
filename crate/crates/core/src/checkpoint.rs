//! Single-file checkpoint archives.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes   b"PGCKPT\0\0"
//! version   u32       currently 1
//! mlen      u64       manifest length in bytes
//! manifest  mlen      UTF-8 JSON (see `Manifest`)
//! payload   ...       raw little-endian tensors; offsets in the manifest are
//!                     relative to the start of this section
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::ParamId;
use crate::model::{Model, ModelConfig, ModelError, Parameter, Role};
use crate::optim::{OptimizerKind, OptimizerState, ParamState};
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"PGCKPT\0\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint archive (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint holds {stored:?} tensors, requested {requested:?}")]
    DType { stored: DType, requested: DType },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Span {
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamEntry {
    pub id: ParamId,
    pub name: String,
    pub role: Role,
    pub shape: Vec<usize>,
    #[serde(flatten)]
    pub span: Span,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BufferEntry {
    pub id: ParamId,
    pub step: u64,
    pub m: Span,
    pub v: Option<Span>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerManifest {
    pub kind: OptimizerKind,
    pub buffers: Vec<BufferEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ModelConfig,
    pub dtype: DType,
    pub next_id: u64,
    /// Training step at which the checkpoint was taken.
    pub step: u64,
    pub params: Vec<ParamEntry>,
    pub optimizer: Option<OptimizerManifest>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub optimizer: Option<OptimizerState<T>>,
    pub step: u64,
}

fn push_tensor<T: Scalar>(payload: &mut Vec<u8>, t: &Tensor<T>) -> Span {
    let offset = payload.len() as u64;
    t.data().iter().for_each(|x| x.write_le(payload));
    Span {
        offset,
        nbytes: payload.len() as u64 - offset,
    }
}

pub fn to_bytes<T: Scalar>(model: &Model<T>, optimizer: Option<&OptimizerState<T>>, step: u64) -> Vec<u8> {
    let mut payload = Vec::new();
    let params = model
        .parameters()
        .map(|p| ParamEntry {
            id: p.id(),
            name: p.name().to_string(),
            role: p.role(),
            shape: p.value().shape().to_vec(),
            span: push_tensor(&mut payload, p.value()),
        })
        .collect();
    let optimizer = optimizer.map(|st| OptimizerManifest {
        kind: st.kind(),
        buffers: st
            .buffers()
            .iter()
            .map(|(id, b)| BufferEntry {
                id: *id,
                step: b.step,
                m: push_tensor(&mut payload, &b.m),
                v: b.v.as_ref().map(|v| push_tensor(&mut payload, v)),
            })
            .collect(),
    });
    let manifest = Manifest {
        config: model.config().clone(),
        dtype: T::DTYPE,
        next_id: model.next_id(),
        step,
        params,
        optimizer,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(20 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

/// Splits an archive into its manifest and payload section.
pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, &[u8]), CheckpointError> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let end = 20usize
        .checked_add(mlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| CheckpointError::Corrupt("manifest length exceeds file".into()))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[20..end])
        .map_err(|e| CheckpointError::Corrupt(format!("manifest: {e}")))?;
    Ok((manifest, &bytes[end..]))
}

fn read_tensor<T: Scalar>(payload: &[u8], span: Span, shape: &[usize]) -> Result<Tensor<T>, CheckpointError> {
    let width = T::DTYPE.size_of();
    let numel: usize = shape.iter().product();
    let (start, n) = (span.offset as usize, span.nbytes as usize);
    if n != numel * width || start.checked_add(n).is_none_or(|e| e > payload.len()) {
        return Err(CheckpointError::Corrupt(format!(
            "tensor span {start}+{n} invalid for shape {shape:?}"
        )));
    }
    let data = payload[start..start + n].chunks_exact(width).map(T::read_le).collect();
    Tensor::new(shape.to_vec(), data).map_err(|e| CheckpointError::Corrupt(e.to_string()))
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>, CheckpointError> {
    let (manifest, payload) = read_manifest(bytes)?;
    if manifest.dtype != T::DTYPE {
        return Err(CheckpointError::DType {
            stored: manifest.dtype,
            requested: T::DTYPE,
        });
    }
    let depth = manifest.config.depth;
    let mut embed = Vec::new();
    let mut blocks: Vec<Vec<Parameter<T>>> = vec![Vec::new(); depth];
    let mut head = Vec::new();
    for e in &manifest.params {
        let value = read_tensor(payload, e.span, &e.shape)?;
        let p = Parameter::new(e.id, e.name.clone(), e.role, value);
        match e.role {
            Role::E => embed.push(p),
            Role::L => head.push(p),
            Role::H(i) if i < depth => blocks[i].push(p),
            Role::H(i) => {
                return Err(CheckpointError::Corrupt(format!("block index {i} beyond depth {depth}")));
            }
        }
    }
    let model = Model::from_parts(manifest.config.clone(), embed, blocks, head, manifest.next_id)?;
    let optimizer = match &manifest.optimizer {
        None => None,
        Some(om) => {
            let mut st = OptimizerState::new(om.kind);
            for b in &om.buffers {
                let p = model
                    .parameter(b.id)
                    .ok_or_else(|| CheckpointError::Corrupt(format!("optimizer buffer for unknown {}", b.id)))?;
                let shape = p.value().shape();
                let v = b.v.map(|s| read_tensor(payload, s, shape)).transpose()?;
                if v.is_some() != (om.kind == OptimizerKind::Adamw) {
                    return Err(CheckpointError::Corrupt(format!("second moment presence for {}", b.id)));
                }
                st.insert(
                    b.id,
                    ParamState {
                        m: read_tensor(payload, b.m, shape)?,
                        v,
                        step: b.step,
                    },
                );
            }
            Some(st)
        }
    };
    Ok(Checkpoint {
        model,
        optimizer,
        step: manifest.step,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save<T: Scalar>(
    path: &Path,
    model: &Model<T>,
    optimizer: Option<&OptimizerState<T>>,
    step: u64,
) -> Result<(), CheckpointError> {
    std::fs::write(path, to_bytes(model, optimizer, step)).map_err(io_err(path))
}

pub fn load<T: Scalar>(path: &Path) -> Result<Checkpoint<T>, CheckpointError> {
    from_bytes(&std::fs::read(path).map_err(io_err(path))?)
}

/// Element type stored in an archive, for dispatching to `load::<f32>` or `load::<f64>`.
pub fn stored_dtype(path: &Path) -> Result<DType, CheckpointError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(read_manifest(&bytes)?.0.dtype)
}
