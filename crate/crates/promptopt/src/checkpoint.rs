//! Versioned JSON checkpoint files.
//!
//! Probabilities are written as decimal strings (shortest round-trip form)
//! so the file is byte-stable across platforms and JSON parsers, and the
//! RNG word position as a string because it is a 128-bit integer.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use promptopt_core::oracle::LedgerState;
use promptopt_core::trainer::{Checkpoint, RngState, TrainConfig, CHECKPOINT_VERSION};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config: TrainConfig,
    vocab: Vec<String>,
    rows: Vec<Vec<String>>,
    ledger: LedgerState,
    rng_state: RngStateFile,
    best_dev: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct RngStateFile {
    seed: u64,
    word_pos: String,
}

pub fn to_json(ck: &Checkpoint) -> String {
    let file = CheckpointFile {
        version: ck.version,
        config: ck.config.clone(),
        vocab: ck.vocab.clone(),
        rows: ck.rows.iter().map(|r| r.iter().map(|p| p.to_string()).collect()).collect(),
        ledger: ck.ledger,
        rng_state: RngStateFile { seed: ck.rng_state.seed, word_pos: ck.rng_state.word_pos.to_string() },
        best_dev: ck.best_dev,
    };
    let mut s = serde_json::to_string_pretty(&file).expect("checkpoint serializes");
    s.push('\n');
    s
}

pub fn from_json(text: &str) -> Result<Checkpoint> {
    // Read the version alone first so a future layout still reports it.
    let probe: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("not valid JSON: {e}")))?;
    match probe.get("version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
        Some(v) => {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {v} (expected {CHECKPOINT_VERSION})"
            )))
        }
        None => return Err(Error::Checkpoint("missing checkpoint version".into())),
    }
    let file: CheckpointFile =
        serde_json::from_value(probe).map_err(|e| Error::Checkpoint(format!("version {CHECKPOINT_VERSION}: {e}")))?;
    let rows = file
        .rows
        .iter()
        .map(|r| r.iter().map(|p| p.parse::<f64>()).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Error::Checkpoint(format!("bad probability: {e}")))?;
    let word_pos = file
        .rng_state
        .word_pos
        .parse::<u128>()
        .map_err(|e| Error::Checkpoint(format!("bad rng word position: {e}")))?;
    let ck = Checkpoint {
        version: file.version,
        config: file.config,
        vocab: file.vocab,
        rows,
        ledger: file.ledger,
        rng_state: RngState { seed: file.rng_state.seed, word_pos },
        best_dev: file.best_dev,
    };
    if !ck.rows.is_empty() {
        ck.distribution().map_err(|e| Error::Checkpoint(format!("invalid distribution: {e}")))?;
        if ck.rows[0].len() != ck.vocab.len() {
            return Err(Error::Checkpoint("row width differs from vocabulary size".into()));
        }
    }
    Ok(ck)
}

pub fn write(path: &Path, ck: &Checkpoint) -> Result<()> {
    fs::write(path, to_json(ck)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}
