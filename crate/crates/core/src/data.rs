//! Abundance tables: loading, validation, phylogenetic ordering, presence
//! transformation and log-scale histograms.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on per-sample row sums of raw abundance tables.
pub const ROW_SUM_TOLERANCE: f64 = 1e-3;

/// Binary class tag. `1` is a patient, `0` a control.
pub type Label = u8;

/// N samples by d features of relative abundances, with labels and taxonomy.
///
/// Values are stored row-major (one row per sample).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbundanceTable {
    sample_ids: Vec<String>,
    features: Vec<String>,
    values: Vec<f64>,
    labels: Vec<Label>,
    taxonomy: Vec<String>,
    presence: bool,
    warnings: Vec<String>,
    taxonomy_fallbacks: usize,
}

impl AbundanceTable {
    /// Builds and validates a raw abundance table. Missing taxonomy entries
    /// (`None`) fall back to the feature name.
    pub fn new(
        sample_ids: Vec<String>,
        features: Vec<String>,
        values: Vec<f64>,
        labels: Vec<Label>,
        taxonomy: Option<Vec<Option<String>>>,
    ) -> Result<Self> {
        let d = features.len();
        let n = sample_ids.len();
        if n == 0 {
            return Err(Error::InvalidTable("no samples".into()));
        }
        if d == 0 {
            return Err(Error::InvalidTable("no features".into()));
        }
        if n < 2 {
            return Err(Error::InvalidTable(format!("need at least 2 samples, got {n}")));
        }
        if values.len() != n * d {
            return Err(Error::InvalidTable(format!(
                "value count {} does not match {n}x{d}",
                values.len()
            )));
        }
        if labels.len() != n {
            return Err(Error::InvalidTable(format!(
                "label count {} does not match sample count {n}",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidTable(format!("label {bad} is not 0 or 1")));
        }
        if !labels.contains(&0) || !labels.contains(&1) {
            return Err(Error::InvalidTable("labels must contain both classes".into()));
        }
        let mut seen = HashSet::with_capacity(d);
        for f in &features {
            if !seen.insert(f.as_str()) {
                return Err(Error::InvalidTable(format!("duplicate feature name {f:?}")));
            }
        }
        for (k, v) in values.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                return Err(Error::InvalidTable(format!(
                    "value {v} at sample {:?}, feature {:?} is outside [0, 1]",
                    sample_ids[k / d],
                    features[k % d]
                )));
            }
        }

        let mut taxonomy_fallbacks = 0;
        let taxonomy = match taxonomy {
            None => {
                taxonomy_fallbacks = d;
                features.clone()
            }
            Some(tax) => {
                if tax.len() != d {
                    return Err(Error::InvalidTable(format!(
                        "taxonomy count {} does not match feature count {d}",
                        tax.len()
                    )));
                }
                tax.into_iter()
                    .zip(&features)
                    .map(|(t, f)| match t {
                        Some(t) => t,
                        None => {
                            taxonomy_fallbacks += 1;
                            f.clone()
                        }
                    })
                    .collect()
            }
        };

        let mut table = AbundanceTable {
            sample_ids,
            features,
            values,
            labels,
            taxonomy,
            presence: false,
            warnings: Vec::new(),
            taxonomy_fallbacks,
        };
        table.check_row_sums();
        Ok(table)
    }

    fn check_row_sums(&mut self) {
        for i in 0..self.n_samples() {
            let sum: f64 = self.row(i).iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                let msg = format!(
                    "sample {:?} abundances sum to {sum:.6}, not 1",
                    self.sample_ids[i]
                );
                log::warn!("{msg}");
                self.warnings.push(msg);
            }
        }
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn taxonomy(&self) -> &[String] {
        &self.taxonomy
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_features();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn value(&self, sample: usize, feature: usize) -> f64 {
        self.values[sample * self.n_features() + feature]
    }

    pub fn is_presence(&self) -> bool {
        self.presence
    }

    /// Validation warnings (row-sum violations).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Number of features whose taxonomy fell back to the feature name.
    pub fn taxonomy_fallbacks(&self) -> usize {
        self.taxonomy_fallbacks
    }

    /// Count of samples per class as `(controls, patients)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        (self.labels.len() - pos, pos)
    }

    /// Copy of the rows at `indices`, in that order. Validation is not rerun
    /// so single-class subsets (e.g. one test fold) are allowed.
    pub fn select_rows(&self, indices: &[usize]) -> AbundanceTable {
        let d = self.n_features();
        let mut values = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        AbundanceTable {
            sample_ids: indices.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            features: self.features.clone(),
            values,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            taxonomy: self.taxonomy.clone(),
            presence: self.presence,
            warnings: Vec::new(),
            taxonomy_fallbacks: self.taxonomy_fallbacks,
        }
    }

    /// Reorders feature columns so that new column `k` is old column `order.permutation()[k]`.
    pub fn permute_features(&self, order: &FeatureOrder) -> AbundanceTable {
        let perm = order.permutation();
        assert_eq!(perm.len(), self.n_features(), "permutation length");
        let mut values = Vec::with_capacity(self.values.len());
        for i in 0..self.n_samples() {
            let row = self.row(i);
            values.extend(perm.iter().map(|&j| row[j]));
        }
        AbundanceTable {
            sample_ids: self.sample_ids.clone(),
            features: perm.iter().map(|&j| self.features[j].clone()).collect(),
            values,
            labels: self.labels.clone(),
            taxonomy: perm.iter().map(|&j| self.taxonomy[j].clone()).collect(),
            presence: self.presence,
            warnings: self.warnings.clone(),
            taxonomy_fallbacks: self.taxonomy_fallbacks,
        }
    }
}

/// Ordering criterion of a [`FeatureOrder`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderKey {
    Phylogenetic,
    Original,
}

/// A bijection on feature indices: position `k` holds original column `permutation[k]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureOrder {
    permutation: Vec<usize>,
    key: OrderKey,
}

impl FeatureOrder {
    pub fn new(permutation: Vec<usize>, key: OrderKey) -> Result<Self> {
        let n = permutation.len();
        let mut seen = vec![false; n];
        for &p in &permutation {
            if p >= n || seen[p] {
                return Err(Error::Domain(format!("not a permutation of 0..{n}")));
            }
            seen[p] = true;
        }
        Ok(FeatureOrder { permutation, key })
    }

    pub fn identity(d: usize) -> Self {
        FeatureOrder {
            permutation: (0..d).collect(),
            key: OrderKey::Original,
        }
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn key(&self) -> OrderKey {
        self.key
    }

    /// Applies the order to a per-feature slice.
    pub fn apply<T: Clone>(&self, items: &[T]) -> Vec<T> {
        self.permutation.iter().map(|&j| items[j].clone()).collect()
    }
}

/// Stable byte-wise lexicographic sort of features by taxonomy string.
pub fn phylo_sort(table: &AbundanceTable) -> FeatureOrder {
    let tax = table.taxonomy();
    let mut permutation: Vec<usize> = (0..tax.len()).collect();
    // slice::sort_by is stable, so equal strings keep column order.
    permutation.sort_by(|&a, &b| tax[a].as_bytes().cmp(tax[b].as_bytes()));
    FeatureOrder {
        permutation,
        key: OrderKey::Phylogenetic,
    }
}

/// Maps every positive abundance to 1 and zero to 0.
pub fn to_presence(table: &AbundanceTable) -> AbundanceTable {
    let mut out = table.clone();
    for v in &mut out.values {
        *v = if *v > 0.0 { 1.0 } else { 0.0 };
    }
    out.presence = true;
    out.warnings.clear();
    out
}

/// Histogram of `floor(log_base(v))` over all non-zero values.
///
/// Edges are in log units, so every bucket `[edges[i], edges[i+1])` has width 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHistogram {
    pub base: f64,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub zeros_excluded: u64,
}

impl LogHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.zeros_excluded
    }

    /// Writes `edge_low,edge_high,count` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["edge_low", "edge_high", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            w.write_record([
                self.edges[i].to_string(),
                self.edges[i + 1].to_string(),
                c.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Integer bucket `b` with `base^b <= v < base^(b+1)`, robust to rounding in `ln`.
pub(crate) fn log_bucket(v: f64, base: f64) -> i64 {
    let mut b = (v.ln() / base.ln()).floor() as i64;
    if base.powi((b + 1) as i32) <= v {
        b += 1;
    } else if base.powi(b as i32) > v {
        b -= 1;
    }
    b
}

pub fn log_histogram(table: &AbundanceTable, base: f64) -> Result<LogHistogram> {
    if !(base > 1.0) || !base.is_finite() {
        return Err(Error::Domain(format!("histogram base must exceed 1, got {base}")));
    }
    let mut zeros = 0u64;
    let mut buckets: Vec<i64> = Vec::new();
    for &v in table.values() {
        if v == 0.0 {
            zeros += 1;
        } else {
            buckets.push(log_bucket(v, base));
        }
    }
    let (Some(&lo), Some(&hi)) = (buckets.iter().min(), buckets.iter().max()) else {
        return Err(Error::EmptyHistogram);
    };
    let mut counts = vec![0u64; (hi - lo + 1) as usize];
    for b in buckets {
        counts[(b - lo) as usize] += 1;
    }
    let edges = (lo..=hi + 1).map(|e| e as f64).collect();
    Ok(LogHistogram {
        base,
        edges,
        counts,
        zeros_excluded: zeros,
    })
}

fn delimiter_for(path: &Path, first_line: &str) -> u8 {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => b',',
        Some(ext) if ext.eq_ignore_ascii_case("tsv") || ext.eq_ignore_ascii_case("txt") => b'\t',
        _ if first_line.contains('\t') => b'\t',
        _ => b',',
    }
}

fn read_records(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = text.lines().next().unwrap_or("");
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter_for(path, first))
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        out.push(rec);
    }
    Ok(out)
}

/// Reads a two-column `key, value` file. A first row rejected by `is_record`
/// is treated as a header and skipped.
fn read_pairs(path: &Path, is_record: impl Fn(&str, &str) -> bool) -> Result<Vec<(usize, String, String)>> {
    let records = read_records(path)?;
    let mut out = Vec::with_capacity(records.len());
    for (k, rec) in records.iter().enumerate() {
        if rec.len() < 2 {
            return Err(Error::Malformed {
                path: path.into(),
                line: k + 1,
                reason: format!("expected 2 columns, found {}", rec.len()),
            });
        }
        let (key, val) = (rec[0].trim(), rec[1].trim());
        if k == 0 && !is_record(key, val) {
            continue;
        }
        out.push((k + 1, key.to_string(), val.to_string()));
    }
    Ok(out)
}

fn parse_label(s: &str) -> Option<Label> {
    match s {
        "0" => Some(0),
        "1" => Some(1),
        _ => None,
    }
}

/// Loads a sample-by-feature table plus labels, and optionally a taxonomy file.
///
/// The data file's header row holds feature names after a sample-id column;
/// each following row is one sample. Delimiter is chosen from the extension
/// (`.csv` comma, `.tsv`/`.txt` tab) or sniffed from the header.
pub fn load_abundance_table(
    data_path: &Path,
    labels_path: &Path,
    taxonomy_path: Option<&Path>,
) -> Result<AbundanceTable> {
    let records = read_records(data_path)?;
    let Some((header, rows)) = records.split_first() else {
        return Err(Error::NoSamples {
            path: data_path.into(),
        });
    };
    if rows.is_empty() {
        return Err(Error::NoSamples {
            path: data_path.into(),
        });
    }
    let features: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut seen = HashSet::with_capacity(features.len());
    for f in &features {
        if !seen.insert(f.as_str()) {
            return Err(Error::DuplicateFeature {
                path: data_path.into(),
                name: f.clone(),
            });
        }
    }
    let d = features.len();

    let mut sample_ids = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len() * d);
    for (k, rec) in rows.iter().enumerate() {
        let line = k + 2;
        if rec.len() != d + 1 {
            return Err(Error::Malformed {
                path: data_path.into(),
                line,
                reason: format!("expected {} columns, found {}", d + 1, rec.len()),
            });
        }
        sample_ids.push(rec[0].trim().to_string());
        for (j, cell) in rec.iter().skip(1).enumerate() {
            let cell = cell.trim();
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                path: data_path.into(),
                line,
                column: features[j].clone(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonNumeric {
                    path: data_path.into(),
                    line,
                    column: features[j].clone(),
                    value: cell.to_string(),
                });
            }
            if v < 0.0 {
                return Err(Error::NegativeValue {
                    path: data_path.into(),
                    line,
                    column: features[j].clone(),
                    value: v,
                });
            }
            if v > 1.0 {
                return Err(Error::OutOfRange {
                    path: data_path.into(),
                    line,
                    column: features[j].clone(),
                    value: v,
                });
            }
            values.push(v);
        }
    }

    let mut label_map = HashMap::new();
    for (line, id, val) in read_pairs(labels_path, |_, v| parse_label(v).is_some())? {
        let label = parse_label(&val).ok_or_else(|| Error::Malformed {
            path: labels_path.into(),
            line,
            reason: format!("label {val:?} is not 0 or 1"),
        })?;
        label_map.insert(id, label);
    }
    let labels = sample_ids
        .iter()
        .map(|s| {
            label_map
                .get(s)
                .copied()
                .ok_or_else(|| Error::MissingLabel { sample: s.clone() })
        })
        .collect::<Result<Vec<_>>>()?;

    let taxonomy = match taxonomy_path {
        None => None,
        Some(p) => {
            let known: HashSet<&str> = features.iter().map(String::as_str).collect();
            let map: HashMap<String, String> = read_pairs(p, |k, _| known.contains(k))?
                .into_iter()
                .map(|(_, k, v)| (k, v))
                .collect();
            Some(features.iter().map(|f| map.get(f).cloned()).collect())
        }
    };

    AbundanceTable::new(sample_ids, features, values, labels, taxonomy)
}

/// Writes a table in the loader's format (tab-separated data and labels files).
pub fn write_abundance_table(table: &AbundanceTable, data_path: &Path, labels_path: &Path) -> Result<()> {
    let mut f = File::create(data_path).map_err(|e| Error::io(data_path, e))?;
    let mut buf = String::from("sample");
    for name in table.features() {
        buf.push('\t');
        buf.push_str(name);
    }
    buf.push('\n');
    for i in 0..table.n_samples() {
        buf.push_str(&table.sample_ids()[i]);
        for v in table.row(i) {
            buf.push('\t');
            buf.push_str(&v.to_string());
        }
        buf.push('\n');
    }
    f.write_all(buf.as_bytes()).map_err(|e| Error::io(data_path, e))?;

    let mut buf = String::from("sample\tlabel\n");
    for (id, l) in table.sample_ids().iter().zip(table.labels()) {
        buf.push_str(&format!("{id}\t{l}\n"));
    }
    std::fs::write(labels_path, buf).map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}
