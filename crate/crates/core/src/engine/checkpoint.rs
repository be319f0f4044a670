//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, JSON
//! header, then for each network (g_A, g_B, d_A, d_B) its parameter values,
//! Adam first moments and second moments as little-endian scalars. A CRC-32
//! of everything before it closes the file.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::ParamSpec;
use super::model::{Adam, AdamConfig, ModelBundle, NetId, TrainState};
use super::network::ModelConfig;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"KNKCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetHeader {
    name: String,
    adam_steps: u64,
    params: Vec<ParamSpec>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    scalar: String,
    model: ModelConfig,
    init_seed: u64,
    adam: AdamConfig,
    epoch: usize,
    global_step: u64,
    rng: ChaCha8Rng,
    nets: Vec<NetHeader>,
    /// Caller-owned configuration snapshot.
    extra: serde_json::Value,
}

/// A loaded checkpoint: training state plus the caller's snapshot.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub state: TrainState<T>,
    pub extra: serde_json::Value,
}

pub fn encode_checkpoint<T: Scalar>(state: &TrainState<T>, extra: &serde_json::Value) -> Result<Vec<u8>> {
    let b = &state.bundle;
    let header = Header {
        scalar: T::TYPE_NAME.to_string(),
        model: b.config,
        init_seed: b.init_seed,
        adam: state.adam,
        epoch: state.epoch,
        global_step: state.global_step,
        rng: state.rng.clone(),
        nets: NetId::ALL
            .iter()
            .zip(&state.optimizers)
            .map(|(&id, opt)| NetHeader {
                name: id.name().to_string(),
                adam_steps: opt.t,
                params: b.params(id).specs.clone(),
            })
            .collect(),
        extra: extra.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::invalid(format!("checkpoint header: {e}")))?;
    let mut out = Vec::with_capacity(json.len() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (&id, opt) in NetId::ALL.iter().zip(&state.optimizers) {
        for bufs in [&b.params(id).values, &opt.m, &opt.v] {
            for v in bufs.iter().flatten() {
                v.write_le(&mut out);
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn save_checkpoint<T: Scalar>(path: &Path, state: &TrainState<T>, extra: &serde_json::Value) -> Result<()> {
    fsutil::write_atomic(path, &encode_checkpoint(state, extra)?)
}

pub fn decode_checkpoint<T: Scalar>(path: &Path, bytes: &[u8]) -> Result<Checkpoint<T>> {
    let bad = |msg: String| Error::format(path, msg);
    if bytes.len() < MAGIC.len() + 4 + 8 + 4 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let found = crc32fast::hash(body);
    if stored != found {
        return Err(Error::Checksum { path: path.to_path_buf(), expected: format!("{stored:08x}"), found: format!("{found:08x}") });
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let json = body.get(20..20 + hlen).ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| bad(format!("header: {e}")))?;
    if header.scalar != T::TYPE_NAME {
        return Err(bad(format!("checkpoint holds {} values, expected {}", header.scalar, T::TYPE_NAME)));
    }
    let mut bundle = ModelBundle::<T>::from_config(header.model, header.init_seed);
    let mut cursor = &body[20 + hlen..];
    let mut read_buf = |len: usize| -> Result<Vec<T>> {
        let n = len * T::BYTES;
        if cursor.len() < n {
            return Err(bad("truncated parameter data".into()));
        }
        let (head, rest) = cursor.split_at(n);
        cursor = rest;
        Ok(head.chunks_exact(T::BYTES).map(T::read_le).collect())
    };
    let mut optimizers = Vec::with_capacity(4);
    if header.nets.len() != 4 {
        return Err(bad(format!("expected 4 networks, found {}", header.nets.len())));
    }
    for (&id, net) in NetId::ALL.iter().zip(&header.nets) {
        let p = bundle.params_mut(id);
        if net.name != id.name() || net.params != p.specs {
            return Err(bad(format!("network {} does not match the recorded architecture", net.name)));
        }
        let lens: Vec<usize> = p.specs.iter().map(|s| s.len).collect();
        for (i, &len) in lens.iter().enumerate() {
            p.values[i] = read_buf(len)?;
        }
        let m = lens.iter().map(|&len| read_buf(len)).collect::<Result<Vec<_>>>()?;
        let v = lens.iter().map(|&len| read_buf(len)).collect::<Result<Vec<_>>>()?;
        optimizers.push(Adam { t: net.adam_steps, m, v });
    }
    if !cursor.is_empty() {
        return Err(bad(format!("{} trailing bytes", cursor.len())));
    }
    let optimizers: [Adam<T>; 4] = optimizers.try_into().map_err(|_| bad("network count".into()))?;
    let state = TrainState {
        bundle,
        adam: header.adam,
        optimizers,
        rng: header.rng,
        epoch: header.epoch,
        global_step: header.global_step,
    };
    Ok(Checkpoint { state, extra: header.extra })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    decode_checkpoint(path, &fsutil::read(path)?)
}
