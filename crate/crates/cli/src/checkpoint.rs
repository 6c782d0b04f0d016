//! Binary checkpoint container.
//!
//! Layout: the magic bytes `JTNC`, a little-endian `u32` format version, a
//! little-endian `u64` header length, the JSON header, then every array listed
//! in the header as little-endian `f64` values in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use jam_autodiff::Tensor;
use jam_core::model::{ArchConfig, ModelParams};
use jam_core::trainer::{AdamState, TrainState};
use jam_core::AuctionConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"JTNC";
pub const VERSION: u32 = 1;

const RELATION: &str = "instance.relation";
const CTRS: &str = "instance.ctrs";
const LAMBDA: &str = "train.lambda";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// Training provenance stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub iteration: usize,
    pub seed: u64,
    /// Seconds spent training up to `iteration`, summed over resumed runs.
    pub wall_seconds: f64,
    /// Free-form key identifying the experiment that produced the weights.
    pub run_key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: AuctionConfig,
    arch: ArchConfig,
    meta: TrainingMeta,
    adam_steps: Option<u64>,
    arrays: Vec<ArrayEntry>,
}

/// Everything a checkpoint holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: AuctionConfig,
    pub meta: TrainingMeta,
    pub state: TrainState,
    /// Whether optimizer moments were stored (resumable checkpoints).
    pub has_optimizer: bool,
}

fn relation_tensor(config: &AuctionConfig) -> Tensor {
    Tensor::from_fn(config.num_brands(), config.num_stores(), |i, j| {
        f64::from(u8::from(config.relation()[i][j]))
    })
}

fn ctr_tensor(config: &AuctionConfig) -> Tensor {
    Tensor::row(config.ctrs().to_vec())
}

/// Serializes the state. Optimizer moments are included when `with_optimizer` is set.
pub fn encode(
    config: &AuctionConfig,
    state: &TrainState,
    meta: &TrainingMeta,
    with_optimizer: bool,
) -> CliResult<Vec<u8>> {
    let mut arrays: Vec<(String, Tensor)> = vec![
        (RELATION.to_string(), relation_tensor(config)),
        (CTRS.to_string(), ctr_tensor(config)),
        (LAMBDA.to_string(), Tensor::row(state.lambda.clone())),
    ];
    for (name, t) in state.params.named() {
        arrays.push((name, t.clone()));
    }
    if with_optimizer {
        let names: Vec<String> = state.params.named().into_iter().map(|(n, _)| n).collect();
        for (name, t) in names.iter().zip(&state.adam.m) {
            arrays.push((format!("adam.m.{name}"), t.clone()));
        }
        for (name, t) in names.iter().zip(&state.adam.v) {
            arrays.push((format!("adam.v.{name}"), t.clone()));
        }
    }
    let header = Header {
        config: config.clone(),
        arch: *state.params.arch(),
        meta: TrainingMeta {
            iteration: state.iteration,
            ..meta.clone()
        },
        adam_steps: with_optimizer.then_some(state.adam.steps),
        arrays: arrays
            .iter()
            .map(|(name, t)| ArrayEntry {
                name: name.clone(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let payload: usize = arrays.iter().map(|(_, t)| t.data().len() * 8).sum();
    let mut out = Vec::with_capacity(16 + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &arrays {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn corrupt(msg: impl Into<String>) -> CliError {
    CliError::Corrupt(msg.into())
}

/// Parses a checkpoint. When `expected` is given, the stored instance must
/// match it; a mismatch names the offending array.
pub fn decode(bytes: &[u8], expected: Option<&AuctionConfig>) -> CliResult<Checkpoint> {
    if bytes.len() < 16 {
        return Err(corrupt(format!(
            "file has {} bytes, shorter than the fixed prefix",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("missing JTNC magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CliError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|l| l.checked_add(16))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt(format!("header length {header_len} exceeds the file")))?;
    let header: Header =
        serde_json::from_slice(&bytes[16..header_end]).map_err(|e| corrupt(format!("bad header: {e}")))?;
    let mut offset = header_end;
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for entry in &header.arrays {
        let len = entry
            .rows
            .checked_mul(entry.cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| corrupt(format!("array {} has an impossible shape", entry.name)))?;
        let end = offset
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt(format!("payload truncated inside array {}", entry.name)))?;
        let data = bytes[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        arrays.push((entry.name.clone(), Tensor::new(entry.rows, entry.cols, data)?));
        offset = end;
    }
    if offset != bytes.len() {
        return Err(corrupt(format!(
            "{} trailing bytes after the last array",
            bytes.len() - offset
        )));
    }
    let mut arrays = arrays.into_iter();
    let mut take = |want: &str| -> CliResult<Tensor> {
        match arrays.next() {
            Some((name, t)) if name == want => Ok(t),
            Some((name, _)) => Err(corrupt(format!("expected array {want}, found {name}"))),
            None => Err(corrupt(format!("missing array {want}"))),
        }
    };
    let relation = take(RELATION)?;
    let ctrs = take(CTRS)?;
    if relation != relation_tensor(&header.config) || ctrs != ctr_tensor(&header.config) {
        return Err(corrupt("instance arrays disagree with the header"));
    }
    if let Some(want) = expected {
        check_instance(RELATION, &relation, &relation_tensor(want))?;
        check_instance(CTRS, &ctrs, &ctr_tensor(want))?;
    }
    let lambda = take(LAMBDA)?;
    if lambda.rows() != 1 || lambda.cols() != header.config.num_bidders() {
        return Err(CliError::ShapeMismatch {
            array: LAMBDA.into(),
            found: lambda.shape(),
            expected: (1, header.config.num_bidders()),
        });
    }
    let layout = header.arch.layout();
    let mut named = Vec::with_capacity(layout.len());
    for (name, _) in &layout {
        named.push((name.clone(), take(name)?));
    }
    let params = ModelParams::from_named(header.arch, named)?;
    let mut state = TrainState::new(params, header.config.num_bidders());
    state.lambda = lambda.data().to_vec();
    state.iteration = header.meta.iteration;
    if let Some(steps) = header.adam_steps {
        let mut m = Vec::with_capacity(layout.len());
        let mut v = Vec::with_capacity(layout.len());
        for (name, shape) in &layout {
            let t = take(&format!("adam.m.{name}"))?;
            check_shape(&format!("adam.m.{name}"), &t, *shape)?;
            m.push(t);
        }
        for (name, shape) in &layout {
            let t = take(&format!("adam.v.{name}"))?;
            check_shape(&format!("adam.v.{name}"), &t, *shape)?;
            v.push(t);
        }
        state.adam = AdamState { m, v, steps };
    }
    if let Some((name, _)) = arrays.next() {
        return Err(corrupt(format!("unexpected array {name}")));
    }
    Ok(Checkpoint {
        config: header.config,
        meta: header.meta,
        state,
        has_optimizer: header.adam_steps.is_some(),
    })
}

fn check_shape(name: &str, t: &Tensor, want: (usize, usize)) -> CliResult<()> {
    if t.shape() != want {
        return Err(CliError::ShapeMismatch {
            array: name.into(),
            found: t.shape(),
            expected: want,
        });
    }
    Ok(())
}

fn check_instance(name: &str, stored: &Tensor, want: &Tensor) -> CliResult<()> {
    check_shape(name, stored, want.shape())?;
    if stored != want {
        return Err(CliError::InstanceMismatch { array: name.into() });
    }
    Ok(())
}

/// Writes atomically through a sibling temporary file.
pub fn save(
    path: &Path,
    config: &AuctionConfig,
    state: &TrainState,
    meta: &TrainingMeta,
    with_optimizer: bool,
) -> CliResult<()> {
    let bytes = encode(config, state, meta, with_optimizer)?;
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| CliError::io(&tmp, e))?;
        f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path, expected: Option<&AuctionConfig>) -> CliResult<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes, expected)
}
