//! Model checkpoints.
//!
//! A checkpoint is one line of JSON (dimensions, strategy, training config,
//! the IDF table used for sampling, and the list of parameter blocks),
//! followed by the parameter blocks as little-endian `f64`, row-major, in
//! header order.

use std::fs;
use std::path::Path;

use comac_core::grounding::FusionParams;
use comac_core::model::{ModelState, Strategy};
use comac_core::objective::TrainConfig;
use comac_core::saliency::IdfTable;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "comac-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: ModelState,
    pub config: TrainConfig,
    pub idf: Option<IdfTable>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Block {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    d: usize,
    d0: usize,
    strategy: Strategy,
    normalize_tokens: bool,
    config: TrainConfig,
    idf: Option<IdfTable>,
    params: Vec<Block>,
}

fn fusion(p: &FusionParams) -> [f64; 3] {
    [p.w1, p.w2, p.b]
}

pub fn to_bytes(ck: &Checkpoint) -> Vec<u8> {
    let state = &ck.state;
    let (d, d0) = (state.input_dim(), state.reduced_dim());
    let mut blocks = vec![Block {
        name: "reduction".into(),
        rows: d,
        cols: d0,
    }];
    let mut payload: Vec<f64> = state.reduction.weight.as_slice().to_vec();
    if let Some(s) = &state.scorer {
        blocks.push(Block {
            name: "scorer_v".into(),
            rows: 1,
            cols: s.v.len(),
        });
        blocks.push(Block {
            name: "scorer_c".into(),
            rows: 1,
            cols: 1,
        });
        payload.extend_from_slice(&s.v);
        payload.push(s.c);
    }
    for (name, p) in [("pg", &state.pg), ("kg", &state.kg)] {
        blocks.push(Block {
            name: name.into(),
            rows: 1,
            cols: 3,
        });
        payload.extend_from_slice(&fusion(p));
    }
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        d,
        d0,
        strategy: state.strategy(),
        normalize_tokens: state.reduction.normalize,
        config: ck.config.clone(),
        idf: ck.idf.clone(),
        params: blocks,
    };
    let mut out = serde_json::to_vec(&header).expect("checkpoint headers serialize");
    out.push(b'\n');
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("checkpoint has no header line".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[..split]).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::Format(format!(
            "not a version {VERSION} checkpoint: {} v{}",
            header.format, header.version
        )));
    }
    let body = &bytes[split + 1..];
    if !body.len().is_multiple_of(8) {
        return Err(Error::Format(
            "checkpoint payload is not a whole number of f64 values".into(),
        ));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut state = ModelState::init(header.d, header.d0, header.strategy, header.normalize_tokens, 0)?;
    let expected: Vec<(String, usize, usize)> = {
        let mut v = vec![("reduction".to_string(), header.d, header.d0)];
        if header.strategy == Strategy::FeedForward {
            v.push(("scorer_v".into(), 1, header.d0));
            v.push(("scorer_c".into(), 1, 1));
        }
        v.push(("pg".into(), 1, 3));
        v.push(("kg".into(), 1, 3));
        v
    };
    let found: Vec<(String, usize, usize)> = header.params.iter().map(|b| (b.name.clone(), b.rows, b.cols)).collect();
    if found != expected {
        return Err(Error::Format(format!(
            "checkpoint parameter blocks {found:?}, expected {expected:?}"
        )));
    }
    if values.len() != state.n_params() {
        return Err(Error::Format(format!(
            "checkpoint holds {} values, model needs {}",
            values.len(),
            state.n_params()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("checkpoint holds non-finite parameters".into()));
    }
    state.set_flat(&values)?;
    Ok(Checkpoint {
        state,
        config: header.config,
        idf: header.idf,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    fs::write(path, to_bytes(ck)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
