//! Abundance discretization (EQW, SPB, QTF, PR) and bin-to-color lookup.
//!
//! Bin index 0 is reserved for an exact zero (absent feature) and renders as
//! background. Non-zero values fall into 1-based bins with left-open,
//! right-closed intervals `(edge[i-1], edge[i]]`; values above the top edge
//! clamp to the highest bin.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::colormap::VIRIDIS;
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;

/// Upper edges of the species bins; the implicit lower bound is 0.
pub const SPB_BREAKS: [f64; 10] = [
    1e-7, 4e-7, 1.6e-6, 6.4e-6, 2.56e-5, 1.024e-4, 4.096e-4, 1.6384e-3, 6.5536e-3, 1.0,
];

pub const DEFAULT_BINS: usize = 10;
pub const DEFAULT_QUANTILES: usize = 1000;
const EDGE_SLACK: f64 = 1e-9;

/// Returns the fixed species-bin upper edges.
pub fn spb_breaks() -> Vec<f64> {
    SPB_BREAKS.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum BinningScheme {
    /// Equal-width bins over `[min, max]`.
    Eqw { k: usize, min: f64, max: f64 },
    /// Fixed log-base-4 species bins.
    Spb,
    /// Per-feature quantile map to a uniform output, then `k` equal-width bins.
    Qtf { k: usize, quantile_count: usize },
    /// Presence/absence.
    Pr,
}

impl BinningScheme {
    pub fn eqw() -> Self {
        BinningScheme::Eqw {
            k: DEFAULT_BINS,
            min: 0.0,
            max: 1.0,
        }
    }

    pub fn qtf() -> Self {
        BinningScheme::Qtf {
            k: DEFAULT_BINS,
            quantile_count: DEFAULT_QUANTILES,
        }
    }

    /// Total number of bins including the absent bin (PR has 2).
    pub fn k(&self) -> usize {
        match self {
            BinningScheme::Eqw { k, .. } | BinningScheme::Qtf { k, .. } => *k,
            BinningScheme::Spb => SPB_BREAKS.len(),
            BinningScheme::Pr => 2,
        }
    }

    /// Highest bin index produced by [`FittedBinner::bin_value`].
    pub fn max_index(&self) -> usize {
        match self {
            BinningScheme::Pr => 1,
            other => other.k(),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            BinningScheme::Eqw { .. } => "eqw",
            BinningScheme::Spb => "spb",
            BinningScheme::Qtf { .. } => "qtf",
            BinningScheme::Pr => "pr",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BinningScheme::Eqw { k, min, max } => {
                if k < 2 {
                    return Err(Error::Config(format!("EQW needs k >= 2, got {k}")));
                }
                if !(min < max) || !min.is_finite() || !max.is_finite() {
                    return Err(Error::Config(format!("EQW needs min < max, got [{min}, {max}]")));
                }
            }
            BinningScheme::Qtf { k, quantile_count } => {
                if k < 2 {
                    return Err(Error::Config(format!("QTF needs k >= 2, got {k}")));
                }
                if quantile_count < 2 {
                    return Err(Error::Config("QTF needs at least 2 quantiles".into()));
                }
            }
            BinningScheme::Spb | BinningScheme::Pr => {}
        }
        Ok(())
    }
}

/// Empirical quantiles of one feature at evenly spaced references in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureQuantiles {
    pub quantiles: Vec<f64>,
}

impl FeatureQuantiles {
    fn fit(column: &mut [f64], count: usize) -> Self {
        column.sort_by(f64::total_cmp);
        let n = column.len();
        let count = count.min(n).max(1);
        let quantiles = (0..count)
            .map(|q| {
                let r = if count == 1 { 0.0 } else { q as f64 / (count - 1) as f64 };
                let pos = r * (n - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(n - 1);
                let frac = pos - lo as f64;
                column[lo] + (column[hi] - column[lo]) * frac
            })
            .collect();
        FeatureQuantiles { quantiles }
    }

    fn reference(&self, q: usize) -> f64 {
        let n = self.quantiles.len();
        if n == 1 {
            0.0
        } else {
            q as f64 / (n - 1) as f64
        }
    }

    /// Maps `x` to `[0, 1]`. Values at or below the lowest quantile go to 0,
    /// values at or above the highest to 1; a constant feature maps everything to 0.
    pub fn transform(&self, x: f64) -> f64 {
        let q = &self.quantiles;
        let last = q.len() - 1;
        if x <= q[0] || q[0] == q[last] {
            return 0.0;
        }
        if x >= q[last] {
            return 1.0;
        }
        // Average of forward interpolation and interpolation on the reversed
        // table, which splits the difference across runs of tied quantiles.
        let fwd = {
            let j = q.partition_point(|&v| v <= x) - 1;
            let (r0, r1) = (self.reference(j), self.reference(j + 1));
            r0 + (r1 - r0) * (x - q[j]) / (q[j + 1] - q[j])
        };
        let bwd = {
            let j = q.partition_point(|&v| v < x);
            let (r0, r1) = (self.reference(j - 1), self.reference(j));
            r1 - (r1 - r0) * (q[j] - x) / (q[j] - q[j - 1])
        };
        0.5 * (fwd + bwd)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BinRule {
    Edges { edges: Vec<f64> },
    Quantiles { features: Vec<FeatureQuantiles> },
    Presence,
}

/// A discretization rule learned from training rows only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedBinner {
    pub scheme: BinningScheme,
    pub rule: BinRule,
    pub fitted_on: Fingerprint,
}

/// Fits a binner on a row-major `train_values` matrix with `n_features` columns.
pub fn fit_binner(
    scheme: &BinningScheme,
    train_values: &[f64],
    n_features: usize,
    fitted_on: Fingerprint,
) -> Result<FittedBinner> {
    scheme.validate()?;
    let rule = match *scheme {
        BinningScheme::Eqw { k, min, max } => {
            let w = (max - min) / k as f64;
            let mut edges: Vec<f64> = (1..k).map(|i| min + i as f64 * w).collect();
            edges.push(max);
            BinRule::Edges { edges }
        }
        BinningScheme::Spb => BinRule::Edges { edges: spb_breaks() },
        BinningScheme::Pr => BinRule::Presence,
        BinningScheme::Qtf { quantile_count, .. } => {
            if n_features == 0 || train_values.is_empty() || !train_values.len().is_multiple_of(n_features) {
                return Err(Error::Domain(format!(
                    "QTF fit needs a non-empty matrix with {n_features} columns"
                )));
            }
            let n = train_values.len() / n_features;
            let mut column = vec![0.0; n];
            let features = (0..n_features)
                .map(|j| {
                    for (i, c) in column.iter_mut().enumerate() {
                        *c = train_values[i * n_features + j];
                    }
                    FeatureQuantiles::fit(&mut column, quantile_count)
                })
                .collect();
            BinRule::Quantiles { features }
        }
    };
    Ok(FittedBinner {
        scheme: scheme.clone(),
        rule,
        fitted_on,
    })
}

impl FittedBinner {
    pub fn max_index(&self) -> usize {
        self.scheme.max_index()
    }

    /// Bin index of value `x` for feature column `feature` (only QTF is per-feature).
    pub fn bin_value(&self, feature: usize, x: f64) -> Result<usize> {
        if !(x >= 0.0) {
            return Err(Error::Domain(format!("cannot bin negative or NaN value {x}")));
        }
        if x == 0.0 {
            return Ok(0);
        }
        Ok(match &self.rule {
            BinRule::Presence => 1,
            BinRule::Edges { edges } => (edges.partition_point(|&e| e < x) + 1).min(edges.len()),
            BinRule::Quantiles { features } => {
                let fq = features.get(feature).ok_or_else(|| {
                    Error::Domain(format!(
                        "feature {feature} out of range for QTF binner with {} features",
                        features.len()
                    ))
                })?;
                let k = self.scheme.k();
                let u = fq.transform(x);
                // right-closed intervals; absorb interpolation round-off at edges
                ((u * k as f64 - EDGE_SLACK).ceil() as usize).clamp(1, k)
            }
        })
    }

    /// Bins one sample row (feature order must match the fitting order).
    pub fn bin_row(&self, row: &[f64]) -> Result<Vec<usize>> {
        row.iter()
            .enumerate()
            .map(|(j, &x)| self.bin_value(j, x))
            .collect()
    }

    pub fn edges(&self) -> Option<&[f64]> {
        match &self.rule {
            BinRule::Edges { edges } => Some(edges),
            _ => None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colors {
    Viridis,
    Gray,
    Bw,
}

impl Colors {
    pub fn channels(self) -> usize {
        match self {
            Colors::Viridis => 3,
            Colors::Gray | Colors::Bw => 1,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Colors::Viridis => "viridis",
            Colors::Gray => "gray",
            Colors::Bw => "bw",
        }
    }
}

/// Lookup table from bin index to pixel values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorScheme {
    variant: Colors,
    levels: usize,
    background: Vec<f64>,
    /// `levels * channels` values; entry `i - 1` colors bin `i`.
    lut: Vec<f64>,
}

impl ColorScheme {
    /// Builds a scheme for bins `1..=levels`.
    pub fn new(variant: Colors, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::Config("color scheme needs at least one level".into()));
        }
        let c = variant.channels();
        let background = vec![1.0; c];
        let lut = match variant {
            Colors::Bw => vec![0.0; levels],
            Colors::Gray => (1..=levels).map(|i| 1.0 - i as f64 / levels as f64).collect(),
            Colors::Viridis => (0..levels)
                .flat_map(|i| {
                    let pos = (i as f64 + 0.5) / levels as f64;
                    let idx = ((pos * VIRIDIS.len() as f64).floor() as usize).min(VIRIDIS.len() - 1);
                    VIRIDIS[idx]
                })
                .collect(),
        };
        Ok(ColorScheme {
            variant,
            levels,
            background,
            lut,
        })
    }

    pub fn for_binner(variant: Colors, binner: &FittedBinner) -> Result<Self> {
        ColorScheme::new(variant, binner.max_index())
    }

    pub fn variant(&self) -> Colors {
        self.variant
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn channels(&self) -> usize {
        self.variant.channels()
    }

    pub fn background(&self) -> &[f64] {
        &self.background
    }

    pub fn lut(&self) -> &[f64] {
        &self.lut
    }

    /// Pixel value(s) for bin `index`; index 0 is the background.
    pub fn color_of(&self, index: usize) -> Result<&[f64]> {
        if index == 0 {
            return Ok(&self.background);
        }
        if index > self.levels {
            return Err(Error::Domain(format!(
                "bin index {index} exceeds {} color levels",
                self.levels
            )));
        }
        let c = self.channels();
        Ok(&self.lut[(index - 1) * c..index * c])
    }

    /// Inverse lookup. Returns the lowest bin index whose color equals `pixel` exactly.
    pub fn index_of(&self, pixel: &[f64]) -> Option<usize> {
        if pixel == self.background.as_slice() {
            return Some(0);
        }
        self.lut
            .chunks_exact(self.channels())
            .position(|c| c == pixel)
            .map(|i| i + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fp() -> Fingerprint {
        Fingerprint::of_indices(&[0])
    }

    fn fit(scheme: BinningScheme) -> FittedBinner {
        fit_binner(&scheme, &[0.5], 1, fp()).unwrap()
    }

    // Independent oracle: linear scan for the first edge >= x.
    fn scan(edges: &[f64], x: f64) -> usize {
        if x == 0.0 {
            return 0;
        }
        for (i, &e) in edges.iter().enumerate() {
            if x <= e {
                return i + 1;
            }
        }
        edges.len()
    }

    #[test]
    fn spb_edges() {
        let e = spb_breaks();
        assert_eq!(e.len(), 10);
        assert_eq!(e[0], 1e-7);
        assert_eq!(e[8], 0.0065536);
        assert_eq!(e[3] / e[2], 4.0);
        assert_eq!(*e.last().unwrap(), 1.0);
    }

    #[test]
    fn eqw_edges() {
        let b = fit(BinningScheme::eqw());
        let edges = b.edges().unwrap();
        let expected = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
        for (a, e) in edges.iter().zip(expected) {
            assert!((a - e).abs() < 1e-15, "{a} vs {e}");
        }
        assert_eq!(b.bin_value(0, 0.05).unwrap(), 1);
        assert_eq!(b.bin_value(0, 1.0).unwrap(), 10);
        assert!(BinningScheme::Eqw { k: 1, min: 0.0, max: 1.0 }.validate().is_err());
        assert!(BinningScheme::Eqw { k: 4, min: 1.0, max: 1.0 }.validate().is_err());
    }

    #[test]
    fn spb_bins() {
        let b = fit(BinningScheme::Spb);
        assert_eq!(b.bin_value(0, 0.0).unwrap(), 0);
        assert_eq!(b.bin_value(0, 5e-7).unwrap(), scan(&SPB_BREAKS, 5e-7));
        assert_eq!(b.bin_value(0, 5e-7).unwrap(), 3);
        assert_eq!(b.bin_value(0, 1e-7).unwrap(), 1);
        assert_eq!(b.bin_value(0, 1e-9).unwrap(), 1);
        assert_eq!(b.bin_value(0, 1.0).unwrap(), 10);
        assert_eq!(b.bin_value(0, 2.0).unwrap(), 10);
        assert!(b.bin_value(0, -1e-3).is_err());
        assert!(b.bin_value(0, f64::NAN).is_err());
    }

    #[test]
    fn spb_ignores_training_data() {
        let a = fit_binner(&BinningScheme::Spb, &[0.1, 0.9], 2, Fingerprint::of_indices(&[1])).unwrap();
        let b = fit_binner(&BinningScheme::Spb, &[0.3, 0.7, 0.2, 0.8], 2, Fingerprint::of_indices(&[2, 3])).unwrap();
        assert_eq!(a.rule, b.rule);
    }

    #[test]
    fn pr_bins() {
        let b = fit(BinningScheme::Pr);
        assert_eq!(b.bin_value(0, 0.0).unwrap(), 0);
        assert_eq!(b.bin_value(0, 1e-12).unwrap(), 1);
        assert_eq!(b.bin_value(0, 1.0).unwrap(), 1);
    }

    #[test]
    fn qtf_midpoint() {
        let train: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let b = fit_binner(&BinningScheme::qtf(), &train, 1, fp()).unwrap();
        // Brute-force empirical CDF: 0.55 sits halfway between the 5th and 6th
        // of 10 ordered values, i.e. reference (4.5)/9 = 0.5.
        let below = train.iter().filter(|&&v| v < 0.55).count() as f64;
        let u = (below - 0.5) / (train.len() - 1) as f64;
        assert!((u - 0.5).abs() < 1e-12);
        assert_eq!(b.bin_value(0, 0.55).unwrap(), 5);
        // out-of-range values clamp to the bounds
        assert_eq!(b.bin_value(0, 0.01).unwrap(), 1);
        assert_eq!(b.bin_value(0, 1.0).unwrap(), 10);
    }

    #[test]
    fn qtf_constant_feature() {
        let b = fit_binner(&BinningScheme::qtf(), &[0.3, 0.3, 0.3], 1, fp()).unwrap();
        for x in [1e-6, 0.3, 0.9] {
            assert_eq!(b.bin_value(0, x).unwrap(), 1);
        }
        assert_eq!(b.bin_value(0, 0.0).unwrap(), 0);
    }

    #[test]
    fn qtf_ties_average() {
        let fq = FeatureQuantiles {
            quantiles: vec![0.0, 0.0, 0.0, 0.5, 1.0],
        };
        // x = 0.25 halfway between quantiles 2 and 3 -> references 0.5 and 0.75
        assert!((fq.transform(0.25) - 0.625).abs() < 1e-15);
        assert_eq!(fq.transform(0.0), 0.0);
        assert_eq!(fq.transform(1.0), 1.0);
    }

    #[test]
    fn colors() {
        let bw = ColorScheme::new(Colors::Bw, 1).unwrap();
        assert_eq!(bw.color_of(0).unwrap(), &[1.0]);
        assert_eq!(bw.color_of(1).unwrap(), &[0.0]);
        assert!(bw.color_of(2).is_err());

        let gray = ColorScheme::new(Colors::Gray, 10).unwrap();
        assert_eq!(gray.color_of(10).unwrap(), &[0.0]);
        assert!((gray.color_of(1).unwrap()[0] - 0.9).abs() < 1e-15);
        for i in 1..=10 {
            assert!((gray.color_of(i).unwrap()[0] - (1.0 - i as f64 / 10.0)).abs() < 1e-15);
        }

        let v = ColorScheme::new(Colors::Viridis, 10).unwrap();
        assert_eq!(v.lut().len(), 30);
        for i in 0..=10 {
            let c = v.color_of(i).unwrap();
            assert_eq!(c.len(), 3);
            assert!(c.iter().all(|x| (0.0..=1.0).contains(x)));
            assert_eq!(v.index_of(c), Some(i));
        }
        assert_eq!(v.color_of(1).unwrap(), &VIRIDIS[12]);
    }

    #[test]
    fn binner_file_roundtrip() {
        let train: Vec<f64> = (0..300).map(|i| ((i * 37) % 101) as f64 / 1013.0).collect();
        let b = fit_binner(&BinningScheme::qtf(), &train, 3, fp()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("binner.json");
        b.save(&p).unwrap();
        assert_eq!(FittedBinner::load(&p).unwrap(), b);
    }

    proptest! {
        #[test]
        fn bin_value_monotone(a in 0.0f64..1.2, b in 0.0f64..1.2, seed in 0u64..50) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let train: Vec<f64> = (0..64).map(|i| (((i as u64 * 7919 + seed * 31) % 97) as f64 / 97.0).powi(3)).collect();
            for scheme in [BinningScheme::eqw(), BinningScheme::Spb, BinningScheme::qtf(), BinningScheme::Pr] {
                let binner = fit_binner(&scheme, &train, 1, fp()).unwrap();
                prop_assert!(binner.bin_value(0, lo).unwrap() <= binner.bin_value(0, hi).unwrap());
            }
        }

        #[test]
        fn spb_matches_scan(x in 0.0f64..1.5) {
            let b = fit(BinningScheme::Spb);
            prop_assert_eq!(b.bin_value(0, x).unwrap(), scan(&SPB_BREAKS, x));
        }

        #[test]
        fn pr_agrees_with_presence(x in prop_oneof![Just(0.0), 0.0f64..1.0]) {
            let b = fit(BinningScheme::Pr);
            let present = if x > 0.0 { 1 } else { 0 };
            prop_assert_eq!(b.bin_value(0, x).unwrap(), present);
        }

        #[test]
        fn qtf_uniform_on_fitting_values(n in 20usize..1000, k in 2usize..12) {
            // distinct values in a skewed distribution
            let values: Vec<f64> = (1..=n).map(|i| (i as f64 / (n + 1) as f64).powi(4)).collect();
            let scheme = BinningScheme::Qtf { k, quantile_count: DEFAULT_QUANTILES };
            let b = fit_binner(&scheme, &values, 1, fp()).unwrap();
            let mut counts = vec![0usize; k + 1];
            for &v in &values {
                counts[b.bin_value(0, v).unwrap()] += 1;
            }
            let expect = n as f64 / k as f64;
            for c in &counts[1..] {
                prop_assert!((*c as f64 - expect).abs() <= 2.0, "{:?} expect {}", counts, expect);
            }
        }
    }
}
