//! Training checkpoints as JSON text.
//!
//! Every float is written as a decimal string with 17 significant digits
//! (`{:.16e}`), which round-trips any `f64` exactly, so a resumed run
//! continues bit-for-bit and a load/save cycle reproduces the file byte for
//! byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ecm::LambdaVec;
use crate::error::{Error, Result};
use crate::network::{NetworkParams, NetworkShape};
use crate::train::{AdamState, HistoryRow, TrainState};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    /// Hash of the settings a resumed run must share.
    pub trajectory_hash: String,
    pub state: TrainState,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileHistory {
    epoch: usize,
    loss: String,
    r0: String,
    r1: String,
    c: String,
    terms: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileAdam {
    t: u64,
    m: Vec<String>,
    v: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileCheckpoint {
    format_version: u32,
    config_hash: String,
    trajectory_hash: String,
    epoch: usize,
    shape: NetworkShape,
    weights: Vec<String>,
    lambda_init: Vec<String>,
    lambda_scaled: Vec<String>,
    adam: FileAdam,
    term_names: Vec<String>,
    history: Vec<FileHistory>,
}

/// Only the version, read first so a newer layout gives a version error
/// rather than a field error.
#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

fn txt(x: f64) -> String {
    format!("{x:.16e}")
}

fn txts(xs: &[f64]) -> Vec<String> {
    xs.iter().map(|&x| txt(x)).collect()
}

fn num(s: &str, field: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::CorruptCheckpoint(format!("{field}: `{s}` is not a number")))
}

fn nums(xs: &[String], field: &str, len: usize) -> Result<Vec<f64>> {
    if xs.len() != len {
        return Err(Error::CorruptCheckpoint(format!(
            "{field} has {} entries, expected {len}",
            xs.len()
        )));
    }
    xs.iter().map(|s| num(s, field)).collect()
}

pub fn checkpoint_to_string(ck: &Checkpoint) -> String {
    let s = &ck.state;
    let file = FileCheckpoint {
        format_version: CHECKPOINT_VERSION,
        config_hash: ck.config_hash.clone(),
        trajectory_hash: ck.trajectory_hash.clone(),
        epoch: s.epoch,
        shape: s.params.shape,
        weights: txts(&s.params.data),
        lambda_init: txts(&s.lambda_init.as_array()),
        lambda_scaled: txts(&s.lambda_scaled),
        adam: FileAdam {
            t: s.adam.t,
            m: txts(&s.adam.m),
            v: txts(&s.adam.v),
        },
        term_names: s.term_names.clone(),
        history: s
            .history
            .iter()
            .map(|r| FileHistory {
                epoch: r.epoch,
                loss: txt(r.loss),
                r0: txt(r.r0),
                r1: txt(r.r1),
                c: txt(r.c),
                terms: txts(&r.terms),
            })
            .collect(),
    };
    let mut out = serde_json::to_string_pretty(&file).expect("checkpoint serializes");
    out.push('\n');
    out
}

pub fn checkpoint_from_str(text: &str) -> Result<Checkpoint> {
    let probe: VersionProbe = serde_json::from_str(text).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    if probe.format_version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: probe.format_version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let f: FileCheckpoint = serde_json::from_str(text).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    let np = f.shape.param_count();
    let weights = nums(&f.weights, "weights", np)?;
    let params = NetworkParams::from_flat(f.shape, weights).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    let init = nums(&f.lambda_init, "lambda_init", 3)?;
    let lambda_init = LambdaVec::new(init[0], init[1], init[2]).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    let scaled = nums(&f.lambda_scaled, "lambda_scaled", 3)?;
    let m = nums(&f.adam.m, "adam.m", np + 3)?;
    let v = nums(&f.adam.v, "adam.v", np + 3)?;
    if v.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::CorruptCheckpoint("adam.v has negative entries".into()));
    }
    if f.history.len() != f.epoch {
        return Err(Error::CorruptCheckpoint(format!(
            "history has {} rows for epoch {}",
            f.history.len(),
            f.epoch
        )));
    }
    let mut history = Vec::with_capacity(f.history.len());
    for (i, r) in f.history.iter().enumerate() {
        if r.epoch != i + 1 {
            return Err(Error::CorruptCheckpoint(format!(
                "history row {i} has epoch {}",
                r.epoch
            )));
        }
        history.push(HistoryRow {
            epoch: r.epoch,
            loss: num(&r.loss, "history.loss")?,
            r0: num(&r.r0, "history.r0")?,
            r1: num(&r.r1, "history.r1")?,
            c: num(&r.c, "history.c")?,
            terms: nums(&r.terms, "history.terms", f.term_names.len())?,
        });
    }
    Ok(Checkpoint {
        config_hash: f.config_hash,
        trajectory_hash: f.trajectory_hash,
        state: TrainState {
            params,
            lambda_scaled: [scaled[0], scaled[1], scaled[2]],
            lambda_init,
            adam: AdamState { m, v, t: f.adam.t },
            epoch: f.epoch,
            term_names: f.term_names,
            history,
        },
    })
}

/// Writes through a temporary file and renames, so an interrupted write
/// never clobbers the previous checkpoint.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, checkpoint_to_string(ck)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text)
}
