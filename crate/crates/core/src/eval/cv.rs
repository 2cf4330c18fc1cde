use std::fs;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::{complement, stratified_folds};
use super::metrics::{accuracy, mcc, mean_std, ConfusionMatrix};
use crate::binning::{fit_binner, BinningScheme, ColorScheme, Colors, FittedBinner};
use crate::data::{phylo_sort, AbundanceTable, FeatureOrder};
use crate::embedding::{fit_global_map, GlobalMap, TsneConfig};
use crate::error::{Error, Result};
use crate::fingerprint::{sha256_hex, Fingerprint};
use crate::imaging::{autofit_size, render_fillup, render_tsne, FillDirection, Provenance, SyntheticImage, TSNE_GRID};
use crate::nn::io::encode_weights;
use crate::nn::{predict, train, Arch, ModelSpec, Prediction, Tensor, TrainConfig, TrainedModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Fillup,
    Tsne,
    Raw1d,
}

impl Layout {
    pub fn tag(self) -> &'static str {
        match self {
            Layout::Fillup => "fillup",
            Layout::Tsne => "tsne",
            Layout::Raw1d => "raw1d",
        }
    }
}

fn default_filters() -> usize {
    64
}

/// One complete data-to-prediction recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub bins: BinningScheme,
    pub layout: Layout,
    pub arch: Arch,
    pub colors: Colors,
    #[serde(default)]
    pub fill: FillDirection,
    #[serde(default)]
    pub tsne: TsneConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_filters")]
    pub filters: usize,
}

impl Pipeline {
    pub fn new(bins: BinningScheme, layout: Layout, arch: Arch, colors: Colors) -> Self {
        Pipeline {
            bins,
            layout,
            arch,
            colors,
            fill: FillDirection::default(),
            tsne: TsneConfig::default(),
            train: TrainConfig::default(),
            filters: default_filters(),
        }
    }

    /// Rejects layout/model and binning/color combinations that do not fit together.
    pub fn validate(&self) -> Result<()> {
        match (self.layout, self.arch) {
            (Layout::Raw1d, Arch::Fc | Arch::Cnn1d) | (Layout::Fillup | Layout::Tsne, Arch::Fc | Arch::Cnn2d) => {}
            (l, a) => {
                return Err(Error::Config(format!(
                    "layout {} cannot feed model {}; raw1d pairs with fc/cnn1d, image layouts with fc/cnn2d",
                    l.tag(),
                    a.tag()
                )))
            }
        }
        if self.layout != Layout::Raw1d {
            let pr = matches!(self.bins, BinningScheme::Pr);
            if pr != (self.colors == Colors::Bw) {
                return Err(Error::Config(format!(
                    "bins {} with colors {}: presence binning pairs with bw and only with bw",
                    self.bins.tag(),
                    self.colors.tag()
                )));
            }
        }
        if self.filters == 0 {
            return Err(Error::Config("filters must be positive".into()));
        }
        self.bins.validate()?;
        self.train.validate()
    }

    pub fn tag(&self) -> String {
        match self.layout {
            Layout::Raw1d => format!("raw1d-{}-{}", self.bins.tag(), self.arch.tag()),
            l => format!("{}-{}-{}-{}", l.tag(), self.bins.tag(), self.arch.tag(), self.colors.tag()),
        }
    }

    /// Per-sample network input shape for `d` features.
    pub fn input_shape(&self, d: usize) -> Vec<usize> {
        let c = self.colors.channels();
        match self.layout {
            Layout::Fillup => {
                let s = autofit_size(d);
                vec![s, s, c]
            }
            Layout::Tsne => vec![TSNE_GRID, TSNE_GRID, c],
            Layout::Raw1d => vec![d, 1],
        }
    }

    pub fn model_spec(&self, d: usize) -> ModelSpec {
        ModelSpec::new(self.arch, self.input_shape(d)).with_filters(self.filters)
    }
}

/// Everything fitted on one set of training rows, ready to render any sample.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub train_fingerprint: Fingerprint,
    pub binner: FittedBinner,
    pub map: Option<GlobalMap>,
    pub colors: ColorScheme,
}

impl Artifacts {
    pub fn binner_sha256(&self) -> Result<String> {
        Ok(sha256_hex(&serde_json::to_vec(&self.binner)?))
    }

    pub fn map_sha256(&self) -> Result<Option<String>> {
        self.map
            .as_ref()
            .map(|m| Ok(sha256_hex(&serde_json::to_vec(m)?)))
            .transpose()
    }
}

fn guard(expected: &Fingerprint, got: &Fingerprint, what: &str) -> Result<()> {
    if expected != got {
        return Err(Error::Leakage(format!(
            "{what} was fitted on {got}, expected training rows {expected}"
        )));
    }
    Ok(())
}

/// Derived seed of one repeat/fold cell.
pub fn cell_seed(base: u64, repeat: usize, fold: usize) -> u64 {
    base.wrapping_add(repeat as u64)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(fold as u64)
}

/// Fits the binner (and t-SNE map for the t-SNE layout) on `train_rows` only.
pub fn fit_artifacts(table: &AbundanceTable, pipeline: &Pipeline, train_rows: &[usize], seed: u64) -> Result<Artifacts> {
    let fp = Fingerprint::of_indices(train_rows);
    let d = table.n_features();
    let mut train_values = Vec::with_capacity(train_rows.len() * d);
    for &i in train_rows {
        train_values.extend_from_slice(table.row(i));
    }
    let binner = fit_binner(&pipeline.bins, &train_values, d, fp.clone())?;
    guard(&fp, &binner.fitted_on, "binner")?;
    let map = if pipeline.layout == Layout::Tsne {
        let cfg = TsneConfig {
            seed,
            ..pipeline.tsne.clone()
        };
        let map = fit_global_map(table, train_rows, &cfg)?;
        guard(&fp, &map.fitted_on, "t-SNE map")?;
        Some(map)
    } else {
        None
    };
    let colors = ColorScheme::for_binner(pipeline.colors, &binner)?;
    Ok(Artifacts {
        train_fingerprint: fp,
        binner,
        map,
        colors,
    })
}

/// Image of sample `row` under the fitted artifacts (image layouts only).
pub fn render_sample(table: &AbundanceTable, pipeline: &Pipeline, art: &Artifacts, row: usize) -> Result<SyntheticImage> {
    let bins = art.binner.bin_row(table.row(row))?;
    let img = match pipeline.layout {
        Layout::Fillup => render_fillup(&bins, &art.colors, autofit_size(bins.len()), pipeline.fill)?,
        Layout::Tsne => render_tsne(art.map.as_ref().expect("t-SNE layout has a map"), &bins, &art.colors)?,
        Layout::Raw1d => return Err(Error::Config("raw1d layout produces no images".into())),
    };
    let layout = img.provenance.layout.clone();
    Ok(img.with_provenance(Provenance {
        layout,
        binner: art.train_fingerprint.to_string(),
        sample_id: table.sample_ids()[row].clone(),
    }))
}

/// Network inputs for `rows`, stacked into one batch.
pub fn build_inputs(table: &AbundanceTable, pipeline: &Pipeline, art: &Artifacts, rows: &[usize]) -> Result<Tensor> {
    let d = table.n_features();
    let shape = pipeline.input_shape(d);
    let per: usize = shape.iter().product();
    let mut data = Vec::with_capacity(rows.len() * per);
    for &i in rows {
        match pipeline.layout {
            Layout::Raw1d => {
                let presence = matches!(pipeline.bins, BinningScheme::Pr);
                data.extend(
                    table
                        .row(i)
                        .iter()
                        .map(|&v| if presence { f64::from(u8::from(v > 0.0)) } else { v }),
                );
            }
            _ => data.extend_from_slice(&render_sample(table, pipeline, art, i)?.pixels),
        }
    }
    let mut full = vec![rows.len()];
    full.extend(shape);
    Tensor::new(full, data)
}

/// Fitted artifacts plus the trained network.
#[derive(Clone, Debug)]
pub struct FittedPipeline {
    pub pipeline: Pipeline,
    pub artifacts: Artifacts,
    pub trained: TrainedModel,
}

impl FittedPipeline {
    pub fn predict_rows(&self, table: &AbundanceTable, rows: &[usize]) -> Result<Prediction> {
        let x = build_inputs(table, &self.pipeline, &self.artifacts, rows)?;
        predict(&self.trained, &x)
    }

    pub fn weights_sha256(&self) -> Result<String> {
        Ok(sha256_hex(&encode_weights(&self.trained)?))
    }
}

/// Fits artifacts and trains a model on `train_rows`; `seed` drives the map and the trainer.
pub fn fit_pipeline(table: &AbundanceTable, pipeline: &Pipeline, train_rows: &[usize], seed: u64) -> Result<FittedPipeline> {
    pipeline.validate()?;
    let artifacts = fit_artifacts(table, pipeline, train_rows, seed)?;
    let x = build_inputs(table, pipeline, &artifacts, train_rows)?;
    let labels: Vec<u8> = train_rows.iter().map(|&i| table.labels()[i]).collect();
    let cfg = pipeline.train.clone().with_seed(seed);
    let trained = train(pipeline.model_spec(table.n_features()), &x, &labels, &cfg)?;
    Ok(FittedPipeline {
        pipeline: pipeline.clone(),
        artifacts,
        trained,
    })
}

/// Features in phylogenetic order, as every layout expects.
pub fn ordered(table: &AbundanceTable) -> (AbundanceTable, FeatureOrder) {
    let order = phylo_sort(table);
    (table.permute_features(&order), order)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Worker threads; 1 runs cells in order on the calling thread.
    #[serde(default = "one")]
    pub jobs: usize,
}

fn one() -> usize {
    1
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            repeats: 10,
            seed: 0,
            jobs: 1,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 || self.repeats < 1 || self.jobs < 1 {
            return Err(Error::Config(format!(
                "need folds >= 2, repeats >= 1 and jobs >= 1, got {}/{}/{}",
                self.folds, self.repeats, self.jobs
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub repeat: usize,
    pub fold: usize,
    pub acc: f64,
    pub mcc: f64,
    pub confusion: ConfusionMatrix,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub train_fingerprint: Fingerprint,
    pub test_fingerprint: Fingerprint,
    pub binner_sha256: String,
    pub map_sha256: Option<String>,
    pub weights_sha256: String,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub pipeline: String,
    pub folds: Vec<FoldResult>,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub mcc_mean: f64,
    pub mcc_std: f64,
}

impl MetricReport {
    /// Sorts by (repeat, fold) and aggregates.
    pub fn from_folds(dataset: &str, pipeline: &str, mut folds: Vec<FoldResult>) -> Self {
        folds.sort_by_key(|f| (f.repeat, f.fold));
        let accs: Vec<f64> = folds.iter().map(|f| f.acc).collect();
        let mccs: Vec<f64> = folds.iter().map(|f| f.mcc).collect();
        let (acc_mean, acc_std) = mean_std(&accs);
        let (mcc_mean, mcc_std) = mean_std(&mccs);
        MetricReport {
            dataset: dataset.to_string(),
            pipeline: pipeline.to_string(),
            folds,
            acc_mean,
            acc_std,
            mcc_mean,
            mcc_std,
        }
    }
}

fn evaluate_cell(
    table: &AbundanceTable,
    pipeline: &Pipeline,
    train_rows: &[usize],
    test_rows: &[usize],
    seed: u64,
    (repeat, fold): (usize, usize),
) -> Result<FoldResult> {
    let fitted = fit_pipeline(table, pipeline, train_rows, seed)?;
    let pred = fitted.predict_rows(table, test_rows)?;
    let truth: Vec<u8> = test_rows.iter().map(|&i| table.labels()[i]).collect();
    let cm = ConfusionMatrix::from_predictions(&truth, &pred.labels)?;
    log::info!("repeat {repeat} fold {fold}: acc {:.4} mcc {:.4}", accuracy(&cm), mcc(&cm));
    Ok(FoldResult {
        repeat,
        fold,
        acc: accuracy(&cm),
        mcc: mcc(&cm),
        confusion: cm,
        n_train: train_rows.len(),
        n_test: test_rows.len(),
        seed,
        train_fingerprint: fitted.artifacts.train_fingerprint.clone(),
        test_fingerprint: Fingerprint::of_indices(test_rows),
        binner_sha256: fitted.artifacts.binner_sha256()?,
        map_sha256: fitted.artifacts.map_sha256()?,
        weights_sha256: fitted.weights_sha256()?,
        stopped_epoch: fitted.trained.stopped_epoch,
        best_epoch: fitted.trained.best_epoch,
    })
}

/// Repeated stratified cross-validation. Every fitted artifact sees only the
/// training part of its fold. Repeat `r` draws its folds with seed `cfg.seed + r`.
pub fn run_cv(dataset: &str, table: &AbundanceTable, pipeline: &Pipeline, cfg: &CvConfig) -> Result<MetricReport> {
    cfg.validate()?;
    pipeline.validate()?;
    let (table, _) = ordered(table);
    let n = table.n_samples();
    let mut cells = Vec::with_capacity(cfg.folds * cfg.repeats);
    for r in 0..cfg.repeats {
        let folds = stratified_folds(table.labels(), cfg.folds, cfg.seed.wrapping_add(r as u64))?;
        for (f, test) in folds.into_iter().enumerate() {
            let train = complement(&test, n);
            cells.push((r, f, train, test));
        }
    }
    let run = |(r, f, train, test): &(usize, usize, Vec<usize>, Vec<usize>)| {
        evaluate_cell(&table, pipeline, train, test, cell_seed(cfg.seed, *r, *f), (*r, *f))
    };
    let results: Vec<FoldResult> = if cfg.jobs == 1 {
        cells.iter().map(run).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| cells.par_iter().map(run).collect::<Result<_>>())?
    };
    Ok(MetricReport::from_folds(dataset, &pipeline.tag(), results))
}

/// Fits on all of `train_table` and scores `test_table` once.
pub fn external_validate(
    dataset: &str,
    train_table: &AbundanceTable,
    test_table: &AbundanceTable,
    pipeline: &Pipeline,
    seed: u64,
) -> Result<MetricReport> {
    if train_table.features() != test_table.features() {
        let d1 = train_table.n_features();
        let d2 = test_table.n_features();
        let first = train_table
            .features()
            .iter()
            .zip(test_table.features())
            .position(|(a, b)| a != b);
        return Err(Error::FeatureMismatch(match first {
            Some(j) => format!("feature {j} differs: {:?} vs {:?}", train_table.features()[j], test_table.features()[j]),
            None => format!("{d1} training features vs {d2} external features"),
        }));
    }
    let (train_ord, order) = ordered(train_table);
    let test_ord = test_table.permute_features(&order);
    let rows: Vec<usize> = (0..train_ord.n_samples()).collect();
    let fitted = fit_pipeline(&train_ord, pipeline, &rows, seed)?;
    let test_rows: Vec<usize> = (0..test_ord.n_samples()).collect();
    let pred = fitted.predict_rows(&test_ord, &test_rows)?;
    let cm = ConfusionMatrix::from_predictions(test_ord.labels(), &pred.labels)?;
    let result = FoldResult {
        repeat: 0,
        fold: 0,
        acc: accuracy(&cm),
        mcc: mcc(&cm),
        confusion: cm,
        n_train: rows.len(),
        n_test: test_rows.len(),
        seed,
        train_fingerprint: fitted.artifacts.train_fingerprint.clone(),
        test_fingerprint: Fingerprint::of_indices(&test_rows),
        binner_sha256: fitted.artifacts.binner_sha256()?,
        map_sha256: fitted.artifacts.map_sha256()?,
        weights_sha256: fitted.weights_sha256()?,
        stopped_epoch: fitted.trained.stopped_epoch,
        best_epoch: fitted.trained.best_epoch,
    };
    Ok(MetricReport::from_folds(dataset, &pipeline.tag(), vec![result]))
}

/// Per-fold rows `dataset,pipeline,fold,repeat,acc,mcc` for every report.
pub fn write_results_csv(reports: &[MetricReport], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "dataset,pipeline,fold,repeat,acc,mcc").expect("vec write");
    for r in reports {
        for f in &r.folds {
            writeln!(out, "{},{},{},{},{},{}", r.dataset, r.pipeline, f.fold, f.repeat, f.acc, f.mcc).expect("vec write");
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub pipeline: String,
    pub n: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub mcc_mean: f64,
    pub mcc_std: f64,
}

impl From<&MetricReport> for SummaryRow {
    fn from(r: &MetricReport) -> Self {
        SummaryRow {
            dataset: r.dataset.clone(),
            pipeline: r.pipeline.clone(),
            n: r.folds.len(),
            acc_mean: r.acc_mean,
            acc_std: r.acc_std,
            mcc_mean: r.mcc_mean,
            mcc_std: r.mcc_std,
        }
    }
}

pub fn write_summary_json<T: Serialize>(summary: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(summary)?;
    text.push(b'\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
