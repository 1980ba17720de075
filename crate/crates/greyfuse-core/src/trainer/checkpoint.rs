//! Versioned checkpoint container.
//!
//! Layout: magic `GRCK`, version (u32 LE), header length (u64 LE), a JSON
//! header, then the payload of concatenated little-endian f32 tensors. The
//! header echoes the network configuration, carries training progress
//! (epoch, step, seed — the random streams are pure functions of seed and
//! epoch, so that pair IS the restorable rng state), and indexes every
//! tensor by canonical name: parameter values, batch-norm buffers, and the
//! optimizer's momentum slots. A SHA-256 of the payload makes corruption an
//! explicit error.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::NetworkConfig;
use crate::nn::{ParamKind, ParamStore};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GRCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum TensorRole {
    Param,
    Buffer,
    Momentum,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    role: TensorRole,
    shape: Vec<usize>,
    /// Offset into the payload, in f32 elements.
    offset: u64,
    len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    network: NetworkConfig,
    epoch: usize,
    global_step: usize,
    seed: u64,
    entries: Vec<TensorEntry>,
    payload_sha256: String,
}

/// A loaded checkpoint, ready to be applied to a network.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: NetworkConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub global_step: usize,
    pub seed: u64,
    values: HashMap<String, ArrayD<f32>>,
    momentum: HashMap<String, Vec<f32>>,
}

fn ck_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_checkpoint(
    path: &Path,
    network: &NetworkConfig,
    store: &ParamStore,
    epoch: usize,
    global_step: usize,
    seed: u64,
) -> Result<()> {
    let mut entries = Vec::new();
    let mut payload: Vec<f32> = Vec::new();
    for p in store.iter() {
        let role = match p.kind {
            ParamKind::Trainable => TensorRole::Param,
            ParamKind::Buffer => TensorRole::Buffer,
        };
        entries.push(TensorEntry {
            name: p.name.clone(),
            role,
            shape: p.value.shape().to_vec(),
            offset: payload.len() as u64,
            len: p.value.len() as u64,
        });
        payload.extend(p.value.iter());
    }
    for p in store.iter() {
        if p.kind == ParamKind::Trainable {
            entries.push(TensorEntry {
                name: p.name.clone(),
                role: TensorRole::Momentum,
                shape: p.momentum.shape().to_vec(),
                offset: payload.len() as u64,
                len: p.momentum.len() as u64,
            });
            payload.extend(p.momentum.iter());
        }
    }

    let mut payload_bytes = Vec::with_capacity(payload.len() * 4);
    for v in &payload {
        payload_bytes.extend_from_slice(&v.to_le_bytes());
    }
    let header = Header {
        network: network.clone(),
        epoch,
        global_step,
        seed,
        entries,
        payload_sha256: hex(&Sha256::digest(&payload_bytes)),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| ck_err(path, format!("header encoding: {e}")))?;

    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(CHECKPOINT_MAGIC)
        .map_err(|e| Error::io(path, e))?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)
        .map_err(|e| Error::io(path, e))?;
    w.write_u64::<LittleEndian>(header_json.len() as u64)
        .map_err(|e| Error::io(path, e))?;
    w.write_all(&header_json).map_err(|e| Error::io(path, e))?;
    w.write_all(&payload_bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ck_err(path, "bad magic bytes (not a checkpoint)"));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|e| Error::io(path, e))?;
    if version != CHECKPOINT_VERSION {
        return Err(ck_err(path, format!("unsupported version {version}")));
    }
    let header_len = r
        .read_u64::<LittleEndian>()
        .map_err(|e| Error::io(path, e))? as usize;
    let mut header_json = vec![0u8; header_len];
    r.read_exact(&mut header_json)
        .map_err(|_| ck_err(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| ck_err(path, format!("header decoding: {e}")))?;

    let mut payload_bytes = Vec::new();
    r.read_to_end(&mut payload_bytes)
        .map_err(|e| Error::io(path, e))?;
    if hex(&Sha256::digest(&payload_bytes)) != header.payload_sha256 {
        return Err(ck_err(path, "integrity check failed: payload hash mismatch"));
    }
    if payload_bytes.len() % 4 != 0 {
        return Err(ck_err(path, "payload length not a multiple of 4"));
    }
    let payload: Vec<f32> = payload_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let mut values = HashMap::new();
    let mut momentum = HashMap::new();
    for e in &header.entries {
        let start = e.offset as usize;
        let end = start + e.len as usize;
        if end > payload.len() {
            return Err(ck_err(path, format!("entry {} overruns payload", e.name)));
        }
        let data = payload[start..end].to_vec();
        match e.role {
            TensorRole::Momentum => {
                momentum.insert(e.name.clone(), data);
            }
            _ => {
                let arr = ArrayD::from_shape_vec(IxDyn(&e.shape), data)
                    .map_err(|err| ck_err(path, format!("entry {}: {err}", e.name)))?;
                values.insert(e.name.clone(), arr);
            }
        }
    }
    Ok(Checkpoint {
        network: header.network,
        epoch: header.epoch,
        global_step: header.global_step,
        seed: header.seed,
        values,
        momentum,
    })
}

impl Checkpoint {
    /// Copy parameter values, buffers and momentum into `store`, which must
    /// hold exactly the same canonical names and shapes.
    pub fn apply(&self, path: &Path, store: &mut ParamStore) -> Result<()> {
        for p in store.iter_mut() {
            let value = self.values.get(&p.name).ok_or_else(|| {
                Error::CheckpointConfig {
                    path: path.to_path_buf(),
                    message: format!("missing tensor {:?}", p.name),
                }
            })?;
            if value.shape() != p.value.shape() {
                return Err(Error::CheckpointConfig {
                    path: path.to_path_buf(),
                    message: format!(
                        "tensor {:?} has shape {:?}, expected {:?}",
                        p.name,
                        value.shape(),
                        p.value.shape()
                    ),
                });
            }
            p.value.assign(value);
            if p.kind == ParamKind::Trainable {
                if let Some(m) = self.momentum.get(&p.name) {
                    p.momentum
                        .as_slice_mut()
                        .expect("standard layout")
                        .copy_from_slice(m);
                }
            }
        }
        Ok(())
    }

    /// Reject resumption under a different architecture.
    pub fn check_config(&self, path: &Path, expected: &NetworkConfig) -> Result<()> {
        if &self.network != expected {
            return Err(Error::CheckpointConfig {
                path: path.to_path_buf(),
                message: format!(
                    "checkpoint was written for {:?}, requested {:?}",
                    self.network, expected
                ),
            });
        }
        Ok(())
    }
}
