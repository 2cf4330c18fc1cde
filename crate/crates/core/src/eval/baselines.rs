//! Published reference scores kept as fixed constants.
//!
//! Only means were published; standard deviations and run counts are unknown
//! and must be supplied by the caller before any significance test.

use serde::{Deserialize, Serialize};

use super::stats::{welch_t_one_tailed, Summary};
use crate::error::{Error, Result};

/// Significance level for one-tailed comparisons.
pub const ALPHA: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Acc,
    Mcc,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PublishedBaseline {
    pub tag: &'static str,
    pub citation: &'static str,
    pub metric: Metric,
    /// `(dataset, mean)` pairs.
    pub means: &'static [(&'static str, f64)],
    pub sd: Option<f64>,
    pub n: Option<usize>,
}

impl PublishedBaseline {
    pub fn mean(&self, dataset: &str) -> Option<f64> {
        let key = dataset.to_ascii_lowercase();
        self.means.iter().find(|(d, _)| *d == key).map(|&(_, m)| m)
    }
}

const METAML: &str = "Pasolli et al. 2016, MetAML";
const PHCNN: &str = "Fioravanti et al. 2017, Ph-CNN";

pub const BASELINES: &[PublishedBaseline] = &[
    PublishedBaseline {
        tag: "MetAML-RF",
        citation: METAML,
        metric: Metric::Acc,
        means: &[("cir", 0.877), ("col", 0.805), ("ibd", 0.809), ("obe", 0.644), ("t2d", 0.664), ("wt2", 0.703)],
        sd: None,
        n: None,
    },
    PublishedBaseline {
        tag: "MetAML-SVM",
        citation: METAML,
        metric: Metric::Acc,
        means: &[("cir", 0.834), ("col", 0.743), ("ibd", 0.809), ("obe", 0.636), ("t2d", 0.613), ("wt2", 0.596)],
        sd: None,
        n: None,
    },
    PublishedBaseline {
        tag: "RF-rerun",
        citation: "random forest on raw abundances, same protocol",
        metric: Metric::Acc,
        means: &[("cir", 0.877), ("col", 0.812), ("ibd", 0.808), ("obe", 0.645), ("t2d", 0.672), ("wt2", 0.703)],
        sd: None,
        n: None,
    },
    PublishedBaseline {
        tag: "Ph-CNN-internal",
        citation: PHCNN,
        metric: Metric::Mcc,
        means: &[("cdf", 0.630), ("cdr", 0.241), ("icdf", 0.704), ("icdr", 0.556), ("ucf", 0.668), ("ucr", 0.464)],
        sd: None,
        n: None,
    },
    PublishedBaseline {
        tag: "Ph-CNN-external",
        citation: PHCNN,
        metric: Metric::Mcc,
        means: &[("cdf", 0.858), ("cdr", 0.853), ("icdf", 0.842), ("icdr", 0.628), ("ucf", 0.741), ("ucr", 0.583)],
        sd: None,
        n: None,
    },
];

pub fn baseline(tag: &str) -> Result<&'static PublishedBaseline> {
    BASELINES.iter().find(|b| b.tag.eq_ignore_ascii_case(tag)).ok_or_else(|| {
        let known: Vec<&str> = BASELINES.iter().map(|b| b.tag).collect();
        Error::Config(format!("unknown baseline {tag:?}; known: {}", known.join(", ")))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub dataset: String,
    pub baseline: String,
    pub ours: Summary,
    pub reference: Summary,
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub significant: bool,
}

/// One-tailed test of our mean above the published one. The baseline's spread
/// must come from the caller whenever the published constants lack it.
pub fn compare(
    dataset: &str,
    ours: Summary,
    base: &PublishedBaseline,
    sd: Option<f64>,
    n: Option<usize>,
) -> Result<Comparison> {
    let mean = base.mean(dataset).ok_or_else(|| {
        Error::Config(format!("baseline {} has no entry for dataset {dataset:?}", base.tag))
    })?;
    let (Some(sd), Some(n)) = (sd.or(base.sd), n.or(base.n)) else {
        return Err(Error::Config(format!(
            "baseline {} publishes only a mean for {dataset}; pass its standard deviation and run count \
             (--baseline-sd, --baseline-n) to test significance",
            base.tag
        )));
    };
    let reference = Summary { mean, sd, n };
    let r = welch_t_one_tailed(ours, reference)?;
    Ok(Comparison {
        dataset: dataset.to_string(),
        baseline: base.tag.to_string(),
        ours,
        reference,
        t: r.t,
        df: r.df,
        p: r.p,
        significant: r.p < ALPHA,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup() {
        let rf = baseline("metaml-rf").unwrap();
        assert_eq!(rf.mean("CIR"), Some(0.877));
        assert_eq!(rf.sd, None);
        assert_eq!(baseline("Ph-CNN-external").unwrap().mean("ucr"), Some(0.583));
        assert!(baseline("nope").is_err());
        assert_eq!(rf.mean("zzz"), None);
    }

    #[test]
    fn comparisons() {
        let rf = baseline("MetAML-RF").unwrap();
        let ours = Summary { mean: 0.905, sd: 0.01, n: 100 };
        assert!(matches!(compare("cir", ours, rf, None, None), Err(Error::Config(_))));
        let c = compare("cir", ours, rf, Some(0.01), Some(100)).unwrap();
        assert!(c.significant && c.p < 0.0005);
        let same = Summary { mean: 0.877, ..ours };
        let c = compare("cir", same, rf, Some(0.01), Some(100)).unwrap();
        assert_eq!(c.p, 0.5);
        assert!(!c.significant);
    }

    #[test]
    fn published_averages() {
        // each row's printed AVG column, to three decimals
        for (tag, avg) in [
            ("MetAML-RF", 0.750),
            ("MetAML-SVM", 0.705),
            ("RF-rerun", 0.753),
            ("Ph-CNN-internal", 0.544),
            ("Ph-CNN-external", 0.751),
        ] {
            let b = baseline(tag).unwrap();
            let m = b.means.iter().map(|(_, v)| v).sum::<f64>() / b.means.len() as f64;
            assert!((m - avg).abs() < 0.0015, "{tag}: {m}");
        }
    }
}
