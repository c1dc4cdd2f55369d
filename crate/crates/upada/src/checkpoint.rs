//! Checkpoint file: `UPADA001`, a little-endian u64 header length, a JSON
//! header, then every parameter and optimizer moment as little-endian f64.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use upada_core::model::{ArchConfig, ModelBundle};
use upada_core::tensor::{AdamMoments, Optimizer, OptimizerSettings, ParamSet, Tensor};
use upada_core::train::{AblationMode, TrainProgress, TrainState};

use crate::error::{io, Error, Result};

pub const MAGIC: &[u8; 8] = b"UPADA001";

/// The grid cell a checkpoint was trained for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub mode: AblationMode,
    pub subject: usize,
    pub seed: u64,
    pub recon_probe_init: f64,
    pub dataset_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub bundle: ModelBundle,
    pub optimizer: Optimizer,
    pub progress: Option<TrainProgress>,
    pub run: Option<RunInfo>,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState, run: Option<RunInfo>) -> Self {
        Self {
            bundle: state.bundle.clone(),
            optimizer: state.optimizer.clone(),
            progress: Some(state.progress()),
            run,
        }
    }

    pub fn into_state(self) -> upada_core::Result<TrainState> {
        let progress = self
            .progress
            .ok_or_else(|| upada_core::Error::Usage("checkpoint carries no training progress".into()))?;
        TrainState::from_progress(progress, self.bundle, self.optimizer)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct MomentEntry {
    name: String,
    t: u64,
    len: usize,
    /// `m` at `offset`, `v` at `offset + len`.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    arch: ArchConfig,
    tensors: Vec<TensorEntry>,
    optimizer: OptimizerSettings,
    moments: Vec<MomentEntry>,
    progress: Option<TrainProgress>,
    run: Option<RunInfo>,
    /// Number of f64 values after the header.
    values: usize,
}

pub fn to_bytes(c: &Checkpoint) -> Vec<u8> {
    let mut values: Vec<f64> = Vec::new();
    let tensors = c
        .bundle
        .params
        .iter()
        .map(|(_, name, t)| {
            let offset = values.len();
            values.extend_from_slice(t.data());
            TensorEntry {
                name: name.into(),
                shape: t.shape().to_vec(),
                offset,
            }
        })
        .collect();
    let moments = c
        .optimizer
        .state
        .iter()
        .map(|(name, st)| {
            let offset = values.len();
            values.extend_from_slice(&st.m);
            values.extend_from_slice(&st.v);
            MomentEntry {
                name: name.clone(),
                t: st.t,
                len: st.m.len(),
                offset,
            }
        })
        .collect();
    let header = Header {
        arch: c.bundle.arch,
        tensors,
        optimizer: c.optimizer.settings,
        moments,
        progress: c.progress.clone(),
        run: c.run.clone(),
        values: values.len(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + values.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |field: &str, reason: String| Error::format(path, field, reason);
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("offset 0", "missing UPADA001 magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("offset 8", format!("header length {hlen} exceeds file size {}", bytes.len())))?;
    let header: Header = serde_json::from_slice(&bytes[16..body]).map_err(|e| bad("header", e.to_string()))?;
    let expected = body + header.values * 8;
    if bytes.len() != expected {
        return Err(bad(
            &format!("offset {}", bytes.len().min(expected)),
            format!("value blob has {} bytes, expected {}", bytes.len() - body, header.values * 8),
        ));
    }
    let values: Vec<f64> = bytes[body..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let slice = |what: &str, offset: usize, len: usize| -> Result<&[f64]> {
        values
            .get(offset..offset.saturating_add(len))
            .ok_or_else(|| bad(what, format!("range {offset}+{len} outside {} values", values.len())))
    };

    let mut params = ParamSet::new();
    for t in &header.tensors {
        let n = t.shape.iter().product();
        let data = slice(&format!("tensors.{}", t.name), t.offset, n)?.to_vec();
        let tensor = Tensor::new(t.shape.clone(), data).map_err(|e| bad(&format!("tensors.{}", t.name), e.to_string()))?;
        params
            .insert(&t.name, tensor)
            .map_err(|e| bad(&format!("tensors.{}", t.name), e.to_string()))?;
    }
    let bundle = ModelBundle::from_params(header.arch, params).map_err(|e| bad("tensors", e.to_string()))?;
    let mut state = BTreeMap::new();
    for m in &header.moments {
        let what = format!("moments.{}", m.name);
        state.insert(
            m.name.clone(),
            AdamMoments {
                m: slice(&what, m.offset, m.len)?.to_vec(),
                v: slice(&what, m.offset + m.len, m.len)?.to_vec(),
                t: m.t,
            },
        );
    }
    Ok(Checkpoint {
        bundle,
        optimizer: Optimizer {
            settings: header.optimizer,
            state,
        },
        progress: header.progress,
        run: header.run,
    })
}

pub fn write_checkpoint(path: &Path, c: &Checkpoint) -> Result<()> {
    fs::write(path, to_bytes(c)).map_err(io(path))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(io(path))?;
    from_bytes(&bytes, path)
}
