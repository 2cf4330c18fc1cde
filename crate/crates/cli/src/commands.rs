use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use synthimg_core::data::{load_abundance_table, log_histogram, AbundanceTable};
use synthimg_core::eval::cv::{cell_seed, fit_artifacts, ordered, render_sample};
use synthimg_core::eval::folds::complement;
use synthimg_core::eval::{
    baseline, compare, external_validate, fit_pipeline, run_cv, stratified_folds, write_results_csv,
    write_summary_json, Comparison, Layout, Metric, MetricReport, Summary, SummaryRow,
};
use synthimg_core::imaging::export_image;
use synthimg_core::nn::io::{save_weights, write_history};
use synthimg_core::{Error, Result};

use crate::config::RunConfig;
use crate::manifest::{CellFingerprints, RunManifest};

/// Body of `summary.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub rows: Vec<SummaryRow>,
    #[serde(default)]
    pub comparisons: Vec<Comparison>,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

fn echo<T: Serialize>(value: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(value)?)
}

fn load(cfg: &RunConfig) -> Result<(String, AbundanceTable)> {
    let table = load_abundance_table(cfg.require_data()?, cfg.require_labels()?, cfg.taxonomy.as_deref())?;
    Ok((cfg.dataset_name()?, table))
}

/// Keeps file names portable.
fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect()
}

pub fn hist(data: &[PathBuf], labels: &[PathBuf], base: f64, out: &Path) -> Result<RunManifest> {
    let started = Instant::now();
    if data.len() != labels.len() {
        return Err(Error::Config(format!(
            "{} --data files but {} --labels files",
            data.len(),
            labels.len()
        )));
    }
    if !(base > 1.0) {
        return Err(Error::Config(format!("histogram base must exceed 1, got {base}")));
    }
    create_dir(out)?;
    for (d, l) in data.iter().zip(labels) {
        let table = load_abundance_table(d, l, None)?;
        let h = log_histogram(&table, base)?;
        let stem = d.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        h.write_csv(&out.join(format!("{}_hist.csv", file_safe(&stem))))?;
        println!("{stem}: {} positive values, {} zeros", h.total(), h.zeros_excluded);
    }
    let config = serde_json::json!({ "data": data, "labels": labels, "base": base, "out": out });
    RunManifest::new("hist", config).finish(out, started)
}

pub fn render(cfg: &RunConfig) -> Result<RunManifest> {
    let started = Instant::now();
    let pipeline = cfg.pipeline()?;
    if pipeline.layout == Layout::Raw1d {
        return Err(Error::Config("render needs an image layout (fillup or tsne)".into()));
    }
    let format = cfg.image_format(&pipeline)?;
    let cv = cfg.cv_config();
    let resolved = cfg.resolved()?;
    let (name, table) = load(cfg)?;
    let (table, _) = ordered(&table);
    let n = table.n_samples();
    let (train_rows, test_rows, fold_tag, seed) = match cfg.fold {
        Some(f) => {
            if f >= cv.folds {
                return Err(Error::Config(format!("--fold {f} out of range for {} folds", cv.folds)));
            }
            let folds = stratified_folds(table.labels(), cv.folds, cv.seed)?;
            let test = folds[f].clone();
            (complement(&test, n), Some(test), f.to_string(), cell_seed(cv.seed, 0, f))
        }
        None => ((0..n).collect::<Vec<_>>(), None, "all".to_string(), cv.seed),
    };
    let art = fit_artifacts(&table, &pipeline, &train_rows, seed)?;

    let out = cfg.out_dir();
    let images = out.join("images");
    create_dir(&images)?;
    for i in 0..n {
        let img = render_sample(&table, &pipeline, &art, i)?;
        let file = format!(
            "{}_{}_{}.{}",
            file_safe(&name),
            fold_tag,
            file_safe(&table.sample_ids()[i]),
            format.extension()
        );
        export_image(&img, &images.join(file), format)?;
    }
    art.binner.save(&out.join("binner.json"))?;
    if let Some(map) = &art.map {
        map.save(&out.join("map.json"))?;
    }
    println!("{name}: rendered {n} images ({}) into {}", pipeline.tag(), images.display());

    let mut manifest = RunManifest::new("render", echo(&resolved)?);
    manifest.fingerprints.push(CellFingerprints {
        dataset: name,
        pipeline: pipeline.tag(),
        repeat: 0,
        fold: fold_tag,
        seed,
        train_rows: art.train_fingerprint.to_string(),
        test_rows: test_rows.map(|t| synthimg_core::Fingerprint::of_indices(&t).to_string()),
        binner_sha256: art.binner_sha256()?,
        map_sha256: art.map_sha256()?,
        weights_sha256: None,
    });
    manifest.finish(&out, started)
}

pub fn train(cfg: &RunConfig) -> Result<RunManifest> {
    let started = Instant::now();
    let pipeline = cfg.pipeline()?;
    let seed = cfg.cv_config().seed;
    let resolved = cfg.resolved()?;
    let (name, table) = load(cfg)?;
    let (table, _) = ordered(&table);
    let rows: Vec<usize> = (0..table.n_samples()).collect();
    let fitted = fit_pipeline(&table, &pipeline, &rows, seed)?;

    let out = cfg.out_dir();
    create_dir(&out)?;
    let weights_sha = save_weights(&fitted.trained, &out.join("weights.bin"))?;
    write_history(&fitted.trained.history, &out.join("history.csv"))?;
    fitted.artifacts.binner.save(&out.join("binner.json"))?;
    if let Some(map) = &fitted.artifacts.map {
        map.save(&out.join("map.json"))?;
    }
    let last = fitted.trained.history.last();
    println!(
        "{name}: {} trained for {} epochs (best {}), final train loss {:.4}",
        pipeline.tag(),
        fitted.trained.stopped_epoch,
        fitted.trained.best_epoch,
        last.map_or(f64::NAN, |h| h.train_loss)
    );

    let mut manifest = RunManifest::new("train", echo(&resolved)?);
    manifest.fingerprints.push(CellFingerprints {
        dataset: name,
        pipeline: pipeline.tag(),
        repeat: 0,
        fold: "all".into(),
        seed,
        train_rows: fitted.artifacts.train_fingerprint.to_string(),
        test_rows: None,
        binner_sha256: fitted.artifacts.binner_sha256()?,
        map_sha256: fitted.artifacts.map_sha256()?,
        weights_sha256: Some(weights_sha),
    });
    manifest.finish(&out, started)
}

/// Fails before any computation when an inline comparison cannot run.
fn check_inline_baseline(cfg: &RunConfig, dataset: &str) -> Result<()> {
    if let Some(tag) = &cfg.baseline {
        let b = baseline(tag)?;
        if b.mean(dataset).is_none() {
            return Err(Error::Config(format!("baseline {} has no entry for dataset {dataset:?}", b.tag)));
        }
        if cfg.baseline_sd.or(b.sd).is_none() || cfg.baseline_n.or(b.n).is_none() {
            return Err(Error::Config(format!(
                "baseline {} publishes only means; pass --baseline-sd and --baseline-n",
                b.tag
            )));
        }
    }
    Ok(())
}

fn comparisons(rows: &[SummaryRow], tag: &str, sd: Option<f64>, n: Option<usize>, dataset: Option<&str>) -> Result<Vec<Comparison>> {
    let b = baseline(tag)?;
    rows.iter()
        .map(|r| {
            let ours = match b.metric {
                Metric::Acc => Summary { mean: r.acc_mean, sd: r.acc_std, n: r.n },
                Metric::Mcc => Summary { mean: r.mcc_mean, sd: r.mcc_std, n: r.n },
            };
            let mut c = compare(dataset.unwrap_or(&r.dataset), ours, b, sd, n)?;
            c.dataset = format!("{}/{}", r.dataset, r.pipeline);
            Ok(c)
        })
        .collect()
}

fn write_reports(cfg: &RunConfig, resolved: &RunConfig, command: &str, reports: &[MetricReport], started: Instant) -> Result<RunManifest> {
    let out = cfg.out_dir();
    create_dir(&out)?;
    write_results_csv(reports, &out.join("results.csv"))?;
    let rows: Vec<SummaryRow> = reports.iter().map(SummaryRow::from).collect();
    let comparisons = match &cfg.baseline {
        Some(tag) => comparisons(&rows, tag, cfg.baseline_sd, cfg.baseline_n, None)?,
        None => Vec::new(),
    };
    for r in &rows {
        println!(
            "{} {}: acc {:.4} +/- {:.4}, mcc {:.4} +/- {:.4} over {} runs",
            r.dataset, r.pipeline, r.acc_mean, r.acc_std, r.mcc_mean, r.mcc_std, r.n
        );
    }
    print_comparisons(&comparisons);
    write_summary_json(&CvSummary { rows, comparisons }, &out.join("summary.json"))?;
    let mut manifest = RunManifest::new(command, echo(resolved)?);
    for r in reports {
        manifest.fingerprints.extend(CellFingerprints::from_report(r));
    }
    manifest.finish(&out, started)
}

pub fn cv(cfg: &RunConfig) -> Result<RunManifest> {
    let started = Instant::now();
    let pipelines = cfg.pipelines()?;
    let resolved = cfg.resolved()?;
    let cv = cfg.cv_config();
    cv.validate()?;
    let name = cfg.dataset_name()?;
    check_inline_baseline(cfg, &name)?;
    let (_, table) = load(cfg)?;
    let reports = pipelines
        .iter()
        .map(|p| run_cv(&name, &table, p, &cv))
        .collect::<Result<Vec<_>>>()?;
    write_reports(cfg, &resolved, "cv", &reports, started)
}

pub fn external(cfg: &RunConfig) -> Result<RunManifest> {
    let started = Instant::now();
    let pipelines = cfg.pipelines()?;
    let resolved = cfg.resolved()?;
    let name = cfg.dataset_name()?;
    if cfg.baseline.is_some() {
        return Err(Error::Config("a single external score has no spread; compare it by hand".into()));
    }
    let (test_data, test_labels) = match (&cfg.test_data, &cfg.test_labels) {
        (Some(d), Some(l)) => (d, l),
        _ => return Err(Error::Config("external needs --test-data and --test-labels".into())),
    };
    let (_, table) = load(cfg)?;
    let test = load_abundance_table(test_data, test_labels, cfg.test_taxonomy.as_deref())?;
    let seed = cfg.cv_config().seed;
    let reports = pipelines
        .iter()
        .map(|p| external_validate(&name, &table, &test, p, seed))
        .collect::<Result<Vec<_>>>()?;
    write_reports(cfg, &resolved, "external", &reports, started)
}

fn print_comparisons(cs: &[Comparison]) {
    for c in cs {
        println!(
            "{} vs {}: {:.4} vs {:.4}, t = {:.3}, df = {:.1}, p = {:.4}{}",
            c.dataset,
            c.baseline,
            c.ours.mean,
            c.reference.mean,
            c.t,
            c.df,
            c.p,
            if c.significant { "  significant" } else { "" }
        );
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareRequest {
    pub summary: PathBuf,
    pub baseline: String,
    pub baseline_sd: Option<f64>,
    pub baseline_n: Option<usize>,
    pub dataset: Option<String>,
    pub out: PathBuf,
}

pub fn compare_cmd(req: &CompareRequest) -> Result<RunManifest> {
    let started = Instant::now();
    let text = fs::read_to_string(&req.summary)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", req.summary.display())))?;
    let summary: CvSummary =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", req.summary.display())))?;
    let cs = comparisons(&summary.rows, &req.baseline, req.baseline_sd, req.baseline_n, req.dataset.as_deref())?;
    print_comparisons(&cs);
    create_dir(&req.out)?;
    write_summary_json(
        &CvSummary {
            rows: summary.rows,
            comparisons: cs,
        },
        &req.out.join("compare.json"),
    )?;
    RunManifest::new("compare", echo(req)?).finish(&req.out, started)
}
