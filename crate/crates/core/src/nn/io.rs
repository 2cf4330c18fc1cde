use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::LayerKind;
use super::model::{Model, ModelSpec};
use super::train::{EpochLoss, TrainConfig, TrainedModel};
use crate::error::{Error, Result};
use crate::fingerprint::sha256_hex;

const MAGIC: &[u8; 8] = b"SIMGWTS1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub kind: LayerKind,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub param_count: usize,
}

/// JSON header stored in front of the raw parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightHeader {
    pub spec: ModelSpec,
    pub layers: Vec<LayerRecord>,
    pub param_count: usize,
    pub seed: u64,
    pub config: TrainConfig,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
}

/// Serializes weights as `MAGIC | u64 LE header length | JSON header | f64 LE params`.
pub fn encode_weights(trained: &TrainedModel) -> Result<Vec<u8>> {
    let m = &trained.model;
    let header = WeightHeader {
        spec: m.spec.clone(),
        layers: m
            .layers
            .iter()
            .map(|l| LayerRecord {
                kind: l.kind.clone(),
                in_shape: l.in_shape.clone(),
                out_shape: l.out_shape.clone(),
                param_count: l.param_count(),
            })
            .collect(),
        param_count: m.param_count(),
        seed: trained.config.seed,
        config: trained.config.clone(),
        stopped_epoch: trained.stopped_epoch,
        best_epoch: trained.best_epoch,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * m.params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in &m.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_weights(bytes: &[u8]) -> Result<(Model, WeightHeader)> {
    let corrupt = |why: &str| Error::CorruptWeights(why.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..).ok_or_else(|| corrupt("truncated"))?;
    if hlen > body.len() {
        return Err(corrupt("truncated header"));
    }
    let header: WeightHeader = serde_json::from_slice(&body[..hlen])?;
    let raw = &body[hlen..];
    if raw.len() != header.param_count * 8 {
        return Err(corrupt("parameter block length does not match header"));
    }
    let params: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut model = Model::zeros(header.spec.clone())?;
    let layout_matches = model.layers.len() == header.layers.len()
        && model
            .layers
            .iter()
            .zip(&header.layers)
            .all(|(l, r)| l.kind == r.kind && l.in_shape == r.in_shape && l.param_count() == r.param_count);
    if !layout_matches {
        return Err(corrupt("layer records disagree with the model spec"));
    }
    model.set_params(params)?;
    Ok((model, header))
}

/// Writes the weight file and returns its sha256.
pub fn save_weights(trained: &TrainedModel, path: &Path) -> Result<String> {
    let bytes = encode_weights(trained)?;
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn load_weights(path: &Path) -> Result<(Model, WeightHeader)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}

/// Training history as CSV with columns `epoch,train_loss,val_loss`.
pub fn write_history(history: &[EpochLoss], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "epoch,train_loss,val_loss").expect("vec write");
    for h in history {
        writeln!(out, "{},{},{}", h.epoch, h.train_loss, h.val_loss).expect("vec write");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
