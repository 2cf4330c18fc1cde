use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use synthimg_core::eval::MetricReport;
use synthimg_core::fingerprint::sha256_hex;
use synthimg_core::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

/// Fingerprints of the artifacts fitted for one repeat/fold cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFingerprints {
    pub dataset: String,
    pub pipeline: String,
    pub repeat: usize,
    pub fold: String,
    pub seed: u64,
    pub train_rows: String,
    pub test_rows: Option<String>,
    pub binner_sha256: String,
    pub map_sha256: Option<String>,
    pub weights_sha256: Option<String>,
}

impl CellFingerprints {
    pub fn from_report(r: &MetricReport) -> Vec<CellFingerprints> {
        r.folds
            .iter()
            .map(|f| CellFingerprints {
                dataset: r.dataset.clone(),
                pipeline: r.pipeline.clone(),
                repeat: f.repeat,
                fold: f.fold.to_string(),
                seed: f.seed,
                train_rows: f.train_fingerprint.to_string(),
                test_rows: Some(f.test_fingerprint.to_string()),
                binner_sha256: f.binner_sha256.clone(),
                map_sha256: f.map_sha256.clone(),
                weights_sha256: Some(f.weights_sha256.clone()),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStoppingPolicy {
    pub monitor: String,
    pub min_delta: f64,
    pub restore_best_weights: bool,
}

impl Default for EarlyStoppingPolicy {
    fn default() -> Self {
        EarlyStoppingPolicy {
            monitor: "validation loss on a stratified hold-out of the training fold".into(),
            min_delta: 0.0,
            restore_best_weights: true,
        }
    }
}

/// Every table, species or genus level, goes through the same sort.
pub const FEATURE_ORDER: &str =
    "features sorted by taxonomy string (the feature name when no taxonomy file is given) before any fitting";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub early_stopping: EarlyStoppingPolicy,
    #[serde(default)]
    pub feature_order: String,
    pub fingerprints: Vec<CellFingerprints>,
    pub wall_clock_seconds: f64,
    /// Output files (relative to the output directory) and their sha256.
    pub files: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            early_stopping: EarlyStoppingPolicy::default(),
            feature_order: FEATURE_ORDER.into(),
            fingerprints: Vec::new(),
            wall_clock_seconds: 0.0,
            files: BTreeMap::new(),
        }
    }

    /// Hashes everything under `out` (except the manifest) and writes the manifest there.
    pub fn finish(mut self, out: &Path, started: Instant) -> Result<RunManifest> {
        self.files = hash_tree(out)?;
        self.wall_clock_seconds = started.elapsed().as_secs_f64();
        let path = out.join(MANIFEST_NAME);
        let mut text = serde_json::to_vec_pretty(&self)?;
        text.push(b'\n');
        fs::write(&path, text).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
        Ok(self)
    }
}

pub fn hash_tree(root: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = fs::read_dir(&dir).map_err(|e| Error::Config(format!("cannot list {}: {e}", dir.display())))?;
        for entry in entries {
            let path = entry
                .map_err(|e| Error::Config(format!("cannot list {}: {e}", dir.display())))?
                .path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path
                .strip_prefix(root)
                .expect("walk stays under root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            if rel == MANIFEST_NAME {
                continue;
            }
            let bytes = fs::read(&path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            files.insert(rel, sha256_hex(&bytes));
        }
    }
    Ok(files)
}
