//! Binary model checkpoints.
//!
//! Layout: the magic `JNT1`, a little-endian `u32` format version, a `u32`
//! header length, a JSON header describing every member (topology
//! descriptor, covariate use, parameter and batch-norm tables) plus the
//! training provenance, then the payload of little-endian `f32` values in
//! table order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::backbone::BackboneSpec;
use super::ensemble::EnsembleModel;
use super::network::{AuxUse, Network};
use crate::autodiff::{AdamWConfig, Real, Tensor};
use crate::error::{Error, Result};
use crate::rng;

pub const MAGIC: &[u8; 4] = b"JNT1";
pub const FORMAT_VERSION: u32 = 1;

/// How a checkpoint was produced.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub fold: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Option<AdamWConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct MemberHeader {
    topology: String,
    aux_use: AuxUse,
    params: Vec<TensorEntry>,
    /// Batch-norm layers; each stores running mean then running variance.
    batch_norm: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    members: Vec<MemberHeader>,
    provenance: Provenance,
}

pub fn encode<T: Real>(model: &EnsembleModel<T>, provenance: &Provenance) -> Vec<u8> {
    let mut payload = Vec::new();
    let mut push = |values: &[T]| {
        for v in values {
            payload.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    };
    let mut members = Vec::new();
    for m in model.members() {
        let params = m
            .params()
            .names()
            .iter()
            .zip(m.params().tensors())
            .map(|(name, t)| {
                push(t.data());
                TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                }
            })
            .collect();
        let batch_norm = m
            .stat_names()
            .iter()
            .zip(m.running_stats())
            .map(|(name, s)| {
                push(&s.mean);
                push(&s.var);
                TensorEntry {
                    name: name.clone(),
                    shape: vec![2, s.mean.len()],
                }
            })
            .collect();
        members.push(MemberHeader {
            topology: m.spec().descriptor(),
            aux_use: m.aux_use(),
            params,
            batch_norm,
        });
    }
    let header = serde_json::to_vec(&Header {
        members,
        provenance: provenance.clone(),
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(12 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<(EnsembleModel<T>, Provenance)> {
    let bad = |msg: String| Error::Format(format!("checkpoint: {msg}"));
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("missing JNT1 magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let header_bytes = bytes
        .get(12..12 + header_len)
        .ok_or_else(|| bad("truncated header".into()))?;
    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| bad(format!("bad header: {e}")))?;
    let mut payload = bytes[12 + header_len..].chunks_exact(4);
    if payload.len() * 4 != bytes.len() - 12 - header_len {
        return Err(bad("payload is not a whole number of f32 values".into()));
    }
    let mut take = |n: usize, what: &str| -> Result<Vec<T>> {
        if payload.len() < n {
            return Err(bad(format!("payload ends inside {what}")));
        }
        Ok(payload
            .by_ref()
            .take(n)
            .map(|b| T::lit(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64))
            .collect())
    };

    let mut members = Vec::with_capacity(header.members.len());
    for mh in &header.members {
        let spec = BackboneSpec::parse_descriptor(&mh.topology)?;
        // Initial values are overwritten below; only the layout matters.
        let mut net: Network<T> = Network::build(&spec, mh.aux_use, &mut rng::stream(0, &[]))?;
        if net.params().len() != mh.params.len() {
            return Err(bad(format!(
                "{} expects {} parameter tensors, file has {}",
                mh.topology,
                net.params().len(),
                mh.params.len()
            )));
        }
        for (i, entry) in mh.params.iter().enumerate() {
            let (name, shape) = (net.params().name(i), net.params().tensor(i).shape());
            if name != entry.name || shape != entry.shape.as_slice() {
                return Err(bad(format!(
                    "parameter {i} is {} {:?} in the file but {name} {shape:?} in {}",
                    entry.name, entry.shape, mh.topology
                )));
            }
            let n = entry.shape.iter().product();
            *net.params_mut().tensor_mut(i) = Tensor::new(&entry.shape, take(n, &entry.name)?)?;
        }
        if net.stat_names().len() != mh.batch_norm.len() {
            return Err(bad(format!(
                "{} has {} batch-norm layers, file has {}",
                mh.topology,
                net.stat_names().len(),
                mh.batch_norm.len()
            )));
        }
        for (i, entry) in mh.batch_norm.iter().enumerate() {
            let channels = net.running_stats()[i].mean.len();
            if net.stat_names()[i] != entry.name || entry.shape != [2, channels] {
                return Err(bad(format!(
                    "batch-norm layer {i} is {} {:?} in the file but {} [2, {channels}]",
                    entry.name,
                    entry.shape,
                    net.stat_names()[i]
                )));
            }
            let mean = take(channels, &entry.name)?;
            let var = take(channels, &entry.name)?;
            let stats = &mut net.running_stats_mut()[i];
            stats.mean = mean;
            stats.var = var;
        }
        members.push(net);
    }
    if payload.len() != 0 {
        return Err(bad(format!("{} trailing payload values", payload.len())));
    }
    Ok((EnsembleModel::new(members)?, header.provenance))
}

pub fn save<T: Real>(path: &Path, model: &EnsembleModel<T>, provenance: &Provenance) -> Result<()> {
    fs::write(path, encode(model, provenance)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Real>(path: &Path) -> Result<(EnsembleModel<T>, Provenance)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
