//! Exact t-SNE over features. Each feature is one point whose coordinates are
//! its abundances across the training samples.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::AbundanceTable;
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;

/// Floor applied to every low-dimensional affinity.
pub const Q_FLOOR: f64 = 1e-12;
const MAX_BISECTIONS: usize = 50;
const ENTROPY_TOL_BITS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub init_std: f64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 5.0,
            learning_rate: 200.0,
            iterations: 300,
            seed: 0,
            early_exaggeration: 4.0,
            exaggeration_iterations: 50,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            init_std: 1e-4,
        }
    }
}

/// Row-major `n x dim` point matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Points {
    pub data: Vec<f64>,
    pub dim: usize,
}

impl Points {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Domain(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        Ok(Points { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Feature points from the given training rows: one point per feature, one
/// coordinate per training sample, each sample column standardized to zero
/// mean and unit variance across features.
pub fn feature_points(table: &AbundanceTable, train_rows: &[usize]) -> Result<Points> {
    let d = table.n_features();
    let m = train_rows.len();
    if m == 0 {
        return Err(Error::Domain("no training rows for t-SNE".into()));
    }
    let mut data = vec![0.0; d * m];
    for (c, &i) in train_rows.iter().enumerate() {
        let row = table.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for (j, v) in row.iter().enumerate() {
            data[j * m + c] = (v - mean) / sd;
        }
    }
    Points::new(data, m)
}

pub fn squared_distances(points: &Points) -> Vec<f64> {
    let n = points.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let a = points.row(i);
        for j in (i + 1)..n {
            let b = points.row(j);
            let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    out
}

/// Result of the perplexity calibration.
#[derive(Clone, Debug)]
pub struct Affinities {
    pub n: usize,
    /// Symmetric joint affinities, sums to 1, zero diagonal.
    pub joint: Vec<f64>,
    /// Row-stochastic conditional affinities `p_{j|i}` before symmetrization.
    pub conditional: Vec<f64>,
    /// Gaussian bandwidth of each point.
    pub sigmas: Vec<f64>,
}

/// Conditional distribution of row `i` for precision `beta = 1 / (2 sigma^2)`,
/// written into `out`; returns its Shannon entropy in nats.
fn conditional_row(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let dmin = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, o) in out.iter_mut().enumerate() {
        let excess = dist[j] - dmin;
        *o = if j == i {
            0.0
        } else if excess == 0.0 {
            1.0
        } else {
            (-excess * beta).exp()
        };
        sum += *o;
    }
    let mut h = 0.0;
    for o in out.iter_mut() {
        *o /= sum;
        if *o > 0.0 {
            h -= *o * o.ln();
        }
    }
    h
}

/// Calibrates per-point Gaussian bandwidths by bisection so each conditional
/// distribution has entropy `log2(perplexity)` bits, then symmetrizes.
pub fn conditional_affinities(points: &Points, perplexity: f64) -> Result<Affinities> {
    let n = points.len();
    if n < 3 {
        return Err(Error::Domain(format!("t-SNE needs at least 3 points, got {n}")));
    }
    if !(perplexity > 0.0) || perplexity >= n as f64 {
        return Err(Error::Config(format!(
            "perplexity {perplexity} must be positive and below the point count {n}"
        )));
    }
    let dist = squared_distances(points);
    if dist.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroVariance);
    }
    let target = perplexity.ln();
    let mut conditional = vec![0.0; n * n];
    let mut sigmas = vec![0.0; n];

    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        let out = &mut conditional[i * n..(i + 1) * n];
        // Bisect on ln(beta) within a bracket scaled to this row's distances.
        let dmin = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| v)
            .fold(f64::INFINITY, f64::min);
        let spread = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| v - dmin)
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let (mut lo, mut hi) = ((1e-12 / spread).ln().max(-700.0), (1e12 / spread).ln().min(700.0));
        let mut log_beta = 0.5 * (lo + hi);
        for _ in 0..MAX_BISECTIONS {
            let h = conditional_row(row, i, log_beta.exp(), out);
            let diff = h - target;
            if (diff / std::f64::consts::LN_2).abs() < ENTROPY_TOL_BITS {
                break;
            }
            // entropy decreases with beta
            if diff > 0.0 {
                lo = log_beta;
            } else {
                hi = log_beta;
            }
            log_beta = 0.5 * (lo + hi);
        }
        let beta = log_beta.exp();
        conditional_row(row, i, beta, out);
        sigmas[i] = (0.5 / beta).sqrt();
    }

    let mut joint = vec![0.0; n * n];
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            joint[i * n + j] = (conditional[i * n + j] + conditional[j * n + i]) / denom;
        }
    }
    Ok(Affinities {
        n,
        joint,
        conditional,
        sigmas,
    })
}

/// `sum p log(p / q)` in nats with `0 log(0 / q) = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![p.len()],
            got: vec![q.len()],
        });
    }
    let mut kl = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return Err(Error::Numeric("q = 0 where p > 0".into()));
            }
            kl += a * (a / b).ln();
        }
    }
    Ok(kl)
}

/// Student-t (one degree of freedom) affinities of a 2D layout, floored at [`Q_FLOOR`].
/// Also returns the unnormalized kernel `1 / (1 + |yi - yj|^2)`.
pub fn student_t_affinities(coords: &[[f64; 2]]) -> (Vec<f64>, Vec<f64>) {
    let n = coords.len();
    let mut num = vec![0.0; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = coords[i][0] - coords[j][0];
            let dy = coords[i][1] - coords[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            sum += 2.0 * v;
        }
    }
    let q = num
        .iter()
        .enumerate()
        .map(|(k, &v)| if k / n == k % n { 0.0 } else { (v / sum).max(Q_FLOOR) })
        .collect();
    (q, num)
}

/// Seeded Gaussian initial layout.
pub fn initial_layout(n: usize, cfg: &TsneConfig) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.init_std).expect("finite std");
    (0..n)
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect()
}

/// Gradient descent on KL(P || Q) from `init`. Returns the final layout and
/// the KL divergence (against the unexaggerated P) after every iteration.
pub fn optimize(p: &[f64], init: Vec<[f64; 2]>, cfg: &TsneConfig) -> Result<(Vec<[f64; 2]>, Vec<f64>)> {
    let n = init.len();
    if p.len() != n * n {
        return Err(Error::ShapeMismatch {
            expected: vec![n, n],
            got: vec![p.len()],
        });
    }
    if cfg.iterations == 0 {
        return Err(Error::Config("t-SNE needs at least one iteration".into()));
    }
    // Work relative to the first initial point; the objective only sees differences.
    let anchor = init.first().copied().unwrap_or([0.0; 2]);
    let mut y: Vec<[f64; 2]> = init.iter().map(|c| [c[0] - anchor[0], c[1] - anchor[1]]).collect();
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut trace = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let exaggeration = if it < cfg.exaggeration_iterations {
            cfg.early_exaggeration
        } else {
            1.0
        };
        let momentum = if it < cfg.momentum_switch {
            cfg.initial_momentum
        } else {
            cfg.final_momentum
        };
        let (q, num) = student_t_affinities(&y);
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = (exaggeration * p[i * n + j] - q[i * n + j]) * num[i * n + j];
                g[0] += w * (y[i][0] - y[j][0]);
                g[1] += w * (y[i][1] - y[j][1]);
            }
            // Step along g, i.e. a quarter of the KL gradient: the learning rate is in
            // the units of the original reference implementation.
            for a in 0..2 {
                let grad = g[a];
                let gain = &mut gains[i][a];
                if (grad > 0.0) != (update[i][a] > 0.0) {
                    *gain += 0.2;
                } else {
                    *gain *= 0.8;
                }
                *gain = gain.max(0.01);
                update[i][a] = momentum * update[i][a] - cfg.learning_rate * *gain * grad;
            }
        }
        for (yi, ui) in y.iter_mut().zip(&update) {
            yi[0] += ui[0];
            yi[1] += ui[1];
        }
        let (q, _) = student_t_affinities(&y);
        trace.push(kl_divergence(p, &q)?);
    }
    if y.iter().any(|c| !c[0].is_finite() || !c[1].is_finite()) {
        return Err(Error::Numeric("t-SNE diverged to non-finite coordinates".into()));
    }
    for c in &mut y {
        c[0] += anchor[0];
        c[1] += anchor[1];
    }
    Ok((y, trace))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl BBox {
    pub fn of(coords: &[[f64; 2]]) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for c in coords {
            for a in 0..2 {
                min[a] = min[a].min(c[a]);
                max[a] = max[a].max(c[a]);
            }
        }
        BBox { min, max }
    }
}

/// 2D coordinates per feature, fitted on one set of training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalMap {
    pub coords: Vec<[f64; 2]>,
    pub bbox: BBox,
    pub config: TsneConfig,
    pub fitted_on: Fingerprint,
}

impl GlobalMap {
    pub fn new(coords: Vec<[f64; 2]>, config: TsneConfig, fitted_on: Fingerprint) -> Self {
        let bbox = BBox::of(&coords);
        GlobalMap {
            coords,
            bbox,
            config,
            fitted_on,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
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

/// A full t-SNE run plus its per-iteration KL trace.
#[derive(Clone, Debug)]
pub struct TsneRun {
    pub map: GlobalMap,
    pub kl_trace: Vec<f64>,
}

impl TsneRun {
    /// KL divergence after `iteration` (1-based) updates.
    pub fn kl_at(&self, iteration: usize) -> Option<f64> {
        iteration.checked_sub(1).and_then(|i| self.kl_trace.get(i).copied())
    }
}

pub fn run_tsne_traced(points: &Points, cfg: &TsneConfig, fitted_on: Fingerprint) -> Result<TsneRun> {
    let aff = conditional_affinities(points, cfg.perplexity)?;
    let init = initial_layout(aff.n, cfg);
    let (coords, kl_trace) = optimize(&aff.joint, init, cfg)?;
    Ok(TsneRun {
        map: GlobalMap::new(coords, cfg.clone(), fitted_on),
        kl_trace,
    })
}

pub fn run_tsne(points: &Points, cfg: &TsneConfig, fitted_on: Fingerprint) -> Result<GlobalMap> {
    run_tsne_traced(points, cfg, fitted_on).map(|r| r.map)
}

/// Fits a map on the training rows of `table`.
pub fn fit_global_map(table: &AbundanceTable, train_rows: &[usize], cfg: &TsneConfig) -> Result<GlobalMap> {
    let points = feature_points(table, train_rows)?;
    run_tsne(&points, cfg, Fingerprint::of_indices(train_rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_points(n: usize, dim: usize, seed: u64) -> Points {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Points::new((0..n * dim).map(|_| rng.random::<f64>()).collect(), dim).unwrap()
    }

    fn fp() -> Fingerprint {
        Fingerprint::of_indices(&[])
    }

    // brute-force entropy (bits) from sigma and raw distances
    fn entropy_bits(points: &Points, i: usize, sigma: f64) -> f64 {
        let n = points.len();
        let w: Vec<f64> = (0..n)
            .map(|j| {
                if j == i {
                    return 0.0;
                }
                let d2: f64 = points.row(i).iter().zip(points.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
                (-d2 / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let s: f64 = w.iter().sum();
        -w.iter().filter(|&&v| v > 0.0).map(|v| (v / s) * (v / s).log2()).sum::<f64>()
    }

    #[test]
    fn perplexity_calibration() {
        let pts = random_points(50, 10, 7);
        let aff = conditional_affinities(&pts, 5.0).unwrap();
        for i in 0..50 {
            let h = entropy_bits(&pts, i, aff.sigmas[i]);
            assert!((h - 5f64.log2()).abs() <= 1e-4, "point {i}: {h}");
            let row: f64 = aff.conditional[i * 50..(i + 1) * 50].iter().sum();
            assert!((row - 1.0).abs() < 1e-8);
        }
        let total: f64 = aff.joint.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for i in 0..50 {
            assert_eq!(aff.joint[i * 50 + i], 0.0);
            for j in 0..50 {
                assert_eq!(aff.joint[i * 50 + j], aff.joint[j * 50 + i]);
            }
        }
    }

    #[test]
    fn equilateral_uniform() {
        // unit vectors: every squared distance is exactly 2
        let pts = Points::new(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], 3).unwrap();
        let aff = conditional_affinities(&pts, 1.5).unwrap();
        let off: Vec<f64> = (0..9).filter(|k| k / 3 != k % 3).map(|k| aff.joint[k]).collect();
        for v in &off {
            assert!((v - off[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn affinity_errors() {
        let same = Points::new(vec![1.0; 12], 3).unwrap();
        assert!(matches!(conditional_affinities(&same, 1.5), Err(Error::ZeroVariance)));
        let two = random_points(2, 3, 1);
        assert!(conditional_affinities(&two, 1.0).is_err());
        let pts = random_points(5, 3, 1);
        assert!(conditional_affinities(&pts, 5.0).is_err());
    }

    #[test]
    fn kl_values() {
        let p = [0.0, 0.5, 0.5, 0.0];
        let q = [0.0, 0.25, 0.75, 0.0];
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        let kl = kl_divergence(&p, &q).unwrap();
        assert!((kl - expected).abs() < 1e-15);
        assert!((kl - 0.1438).abs() < 1e-4);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        assert!(kl_divergence(&[1.0, 0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn deterministic_and_decreasing() {
        let pts = random_points(30, 8, 3);
        let cfg = TsneConfig {
            seed: 11,
            ..TsneConfig::default()
        };
        let a = run_tsne_traced(&pts, &cfg, fp()).unwrap();
        let b = run_tsne_traced(&pts, &cfg, fp()).unwrap();
        assert_eq!(a.map.coords, b.map.coords);
        assert!(a.kl_at(300).unwrap() <= a.kl_at(60).unwrap());
        assert!(a.kl_at(301).is_none());
    }

    #[test]
    fn duplicate_points_stay_together() {
        let mut pts = random_points(10, 6, 5);
        let dup: Vec<f64> = pts.row(0).to_vec();
        pts.data[6..12].copy_from_slice(&dup);
        let cfg = TsneConfig {
            perplexity: 3.0,
            ..TsneConfig::default()
        };
        let map = run_tsne(&pts, &cfg, fp()).unwrap();
        let dist = |a: usize, b: usize| {
            let (p, q) = (map.coords[a], map.coords[b]);
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
        };
        let pair = dist(0, 1);
        for k in 2..10 {
            assert!(pair < dist(0, k) && pair < dist(1, k), "third point {k}");
        }
    }

    #[test]
    fn translation_invariance() {
        let pts = random_points(20, 5, 9);
        let cfg = TsneConfig {
            perplexity: 4.0,
            ..TsneConfig::default()
        };
        let aff = conditional_affinities(&pts, cfg.perplexity).unwrap();
        // dyadic initial layout so the shift is exactly representable
        let init: Vec<[f64; 2]> = initial_layout(20, &cfg)
            .into_iter()
            .map(|c| c.map(|v| (v * 2f64.powi(30)).round() / 2f64.powi(30)))
            .collect();
        let shift = [0.75, -0.5];
        let shifted: Vec<[f64; 2]> = init.iter().map(|c| [c[0] + shift[0], c[1] + shift[1]]).collect();
        let (a, _) = optimize(&aff.joint, init, &cfg).unwrap();
        let (b, _) = optimize(&aff.joint, shifted, &cfg).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p[0] + shift[0] - q[0]).abs() < 1e-9, "{p:?} {q:?}");
            assert!((p[1] + shift[1] - q[1]).abs() < 1e-9, "{p:?} {q:?}");
        }
    }

    #[test]
    fn map_file_roundtrip() {
        let pts = random_points(12, 4, 2);
        let cfg = TsneConfig {
            perplexity: 3.0,
            iterations: 20,
            ..TsneConfig::default()
        };
        let map = run_tsne(&pts, &cfg, Fingerprint::of_indices(&[1, 2])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("map.json");
        map.save(&p).unwrap();
        assert_eq!(GlobalMap::load(&p).unwrap(), map);
    }
}
