use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use synthimg_core::binning::{BinningScheme, Colors};
use synthimg_core::eval::{CvConfig, Layout, Pipeline};
use synthimg_core::imaging::{FillDirection, ImageFormat};
use synthimg_core::nn::Arch;
use synthimg_core::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BinsArg {
    Spb,
    Qtf,
    Pr,
    Eqw,
}

impl BinsArg {
    fn scheme(self) -> BinningScheme {
        match self {
            BinsArg::Spb => BinningScheme::Spb,
            BinsArg::Qtf => BinningScheme::qtf(),
            BinsArg::Pr => BinningScheme::Pr,
            BinsArg::Eqw => BinningScheme::eqw(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LayoutArg {
    Fillup,
    Tsne,
    Raw1d,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelArg {
    Fc,
    Cnn1d,
    Cnn2d,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ColorsArg {
    Viridis,
    Gray,
    Bw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FillArg {
    Ltr,
    Rtl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Png,
    Pgm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
pub enum Preset {
    /// Species-level grid: fill-up and t-SNE pipelines, 10 folds x 10 repeats.
    #[serde(rename = "groupA")]
    #[value(name = "groupA")]
    GroupA,
    /// Genus-level grid: fill-up with heat-map colors, 5 folds x 10 repeats.
    #[serde(rename = "groupB")]
    #[value(name = "groupB")]
    GroupB,
}

impl Preset {
    pub fn folds(self) -> usize {
        match self {
            Preset::GroupA => 10,
            Preset::GroupB => 5,
        }
    }

    pub fn repeats(self) -> usize {
        10
    }

    /// `(layout, bins, model, colors)` rows of the grid.
    pub fn grid(self) -> Vec<(LayoutArg, BinsArg, ModelArg, ColorsArg)> {
        use BinsArg::*;
        use ColorsArg::*;
        use LayoutArg::*;
        use ModelArg::*;
        match self {
            Preset::GroupA => vec![
                (Fillup, Pr, Cnn2d, Bw),
                (Fillup, Qtf, Cnn2d, Viridis),
                (Fillup, Spb, Cnn2d, Gray),
                (Fillup, Spb, Cnn2d, Viridis),
                (Fillup, Pr, Fc, Bw),
                (Fillup, Qtf, Fc, Viridis),
                (Fillup, Spb, Fc, Gray),
                (Fillup, Spb, Fc, Viridis),
                (Tsne, Pr, Cnn2d, Bw),
                (Tsne, Qtf, Cnn2d, Viridis),
                (Tsne, Qtf, Cnn2d, Gray),
                (Tsne, Spb, Cnn2d, Gray),
                (Tsne, Spb, Cnn2d, Viridis),
                (Tsne, Pr, Fc, Bw),
                (Tsne, Qtf, Fc, Gray),
                (Tsne, Qtf, Fc, Viridis),
                (Tsne, Spb, Fc, Gray),
                (Tsne, Spb, Fc, Viridis),
            ],
            Preset::GroupB => vec![
                (Fillup, Qtf, Cnn2d, Viridis),
                (Fillup, Spb, Cnn2d, Viridis),
                (Fillup, Qtf, Fc, Viridis),
                (Fillup, Spb, Fc, Viridis),
            ],
        }
    }
}

/// Every tunable of a run. The JSON config file uses the same field names as
/// the long flags (with `_` for `-`); flags override file values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Abundance table (samples x features, first column sample ids)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Two-column sample id / label file
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Two-column feature / taxonomy-path file
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Dataset name used in output file names (default: data file stem)
    #[arg(long)]
    pub name: Option<String>,
    /// External validation table
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
    #[arg(long)]
    pub test_taxonomy: Option<PathBuf>,

    #[arg(long, value_enum)]
    pub bins: Option<BinsArg>,
    #[arg(long, value_enum)]
    pub layout: Option<LayoutArg>,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    #[arg(long, value_enum)]
    pub colors: Option<ColorsArg>,
    /// Fill-up column order
    #[arg(long, value_enum)]
    pub fill: Option<FillArg>,
    /// Convolution filters
    #[arg(long)]
    pub filters: Option<usize>,
    /// Maximum training epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long)]
    pub tsne_iterations: Option<usize>,

    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for fold x repeat cells
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Render: fit on the training part of this fold instead of all samples
    #[arg(long)]
    pub fold: Option<usize>,
    /// Image file format (default: pgm for one channel, png otherwise)
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Run a whole published pipeline grid
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Baseline tag for an inline significance test after cv
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long)]
    pub baseline_sd: Option<f64>,
    #[arg(long)]
    pub baseline_n: Option<usize>,

    #[arg(long)]
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl RunConfig {
    /// Reads a config file. A run manifest is accepted too; its `config` echo is used.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let value = match value.get("config") {
            Some(inner) if value.get("tool").is_some() => inner.clone(),
            _ => value,
        };
        serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Values set in `flags` win over values in `self`.
    pub fn overlay(mut self, flags: &RunConfig) -> Self {
        overlay!(self, flags; data, labels, taxonomy, name, test_data, test_labels, test_taxonomy,
            bins, layout, model, colors, fill, filters, epochs, patience, batch_size, learning_rate,
            val_fraction, perplexity, tsne_iterations, folds, repeats, seed, jobs, fold, format,
            preset, baseline, baseline_sd, baseline_n, out);
        self
    }

    pub fn dataset_name(&self) -> Result<String> {
        if let Some(n) = &self.name {
            return Ok(n.clone());
        }
        let data = self.require_data()?;
        Ok(data
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into()))
    }

    pub fn require_data(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::Config("--data is required".into()))
    }

    pub fn require_labels(&self) -> Result<&Path> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Config("--labels is required".into()))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn cv_config(&self) -> CvConfig {
        let preset = self.preset;
        CvConfig {
            folds: self.folds.or(preset.map(Preset::folds)).unwrap_or(10),
            repeats: self.repeats.or(preset.map(Preset::repeats)).unwrap_or(10),
            seed: self.seed.unwrap_or(0),
            jobs: self.jobs.unwrap_or(1),
        }
    }

    fn pipeline_from(&self, layout: LayoutArg, bins: BinsArg, model: ModelArg, colors: ColorsArg) -> Result<Pipeline> {
        let mut p = Pipeline::new(
            bins.scheme(),
            match layout {
                LayoutArg::Fillup => Layout::Fillup,
                LayoutArg::Tsne => Layout::Tsne,
                LayoutArg::Raw1d => Layout::Raw1d,
            },
            match model {
                ModelArg::Fc => Arch::Fc,
                ModelArg::Cnn1d => Arch::Cnn1d,
                ModelArg::Cnn2d => Arch::Cnn2d,
            },
            match colors {
                ColorsArg::Viridis => Colors::Viridis,
                ColorsArg::Gray => Colors::Gray,
                ColorsArg::Bw => Colors::Bw,
            },
        );
        if let Some(f) = self.fill {
            p.fill = match f {
                FillArg::Ltr => FillDirection::LeftToRight,
                FillArg::Rtl => FillDirection::RightToLeft,
            };
        }
        if let Some(v) = self.filters {
            p.filters = v;
        }
        if let Some(v) = self.epochs {
            p.train.max_epochs = v;
        }
        if let Some(v) = self.patience {
            p.train.patience = v;
        }
        if let Some(v) = self.batch_size {
            p.train.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            p.train.adam.lr = v;
        }
        if let Some(v) = self.val_fraction {
            p.train.val_fraction = v;
        }
        if let Some(v) = self.perplexity {
            p.tsne.perplexity = v;
        }
        if let Some(v) = self.tsne_iterations {
            p.tsne.iterations = v;
        }
        p.validate()?;
        Ok(p)
    }

    /// The pipelines this run covers: the preset grid, or the single pipeline from flags.
    pub fn pipelines(&self) -> Result<Vec<Pipeline>> {
        if let Some(preset) = self.preset {
            if self.bins.is_some() || self.layout.is_some() || self.model.is_some() || self.colors.is_some() {
                return Err(Error::Config(
                    "--preset fixes bins, layout, model and colors; drop those flags".into(),
                ));
            }
            return preset
                .grid()
                .into_iter()
                .map(|(l, b, m, c)| self.pipeline_from(l, b, m, c))
                .collect();
        }
        let bins = self.bins.unwrap_or(BinsArg::Spb);
        let layout = self.layout.unwrap_or(LayoutArg::Fillup);
        let model = self.model.unwrap_or(match layout {
            LayoutArg::Raw1d => ModelArg::Cnn1d,
            _ => ModelArg::Cnn2d,
        });
        let colors = self.colors.unwrap_or(if bins == BinsArg::Pr { ColorsArg::Bw } else { ColorsArg::Gray });
        Ok(vec![self.pipeline_from(layout, bins, model, colors)?])
    }

    pub fn pipeline(&self) -> Result<Pipeline> {
        let mut all = self.pipelines()?;
        if all.len() != 1 {
            return Err(Error::Config("this command takes a single pipeline, not a preset".into()));
        }
        Ok(all.remove(0))
    }

    pub fn image_format(&self, pipeline: &Pipeline) -> Result<ImageFormat> {
        let channels = pipeline.colors.channels();
        match self.format {
            Some(FormatArg::Pgm) if channels != 1 => Err(Error::Config(format!(
                "PGM holds one channel; colors {} need --format png",
                pipeline.colors.tag()
            ))),
            Some(FormatArg::Pgm) => Ok(ImageFormat::Pgm),
            Some(FormatArg::Png) => Ok(ImageFormat::Png),
            None if channels == 1 => Ok(ImageFormat::Pgm),
            None => Ok(ImageFormat::Png),
        }
    }

    /// Copy with every default made explicit, for the manifest echo.
    pub fn resolved(&self) -> Result<RunConfig> {
        let mut c = self.clone();
        let cv = self.cv_config();
        c.folds = Some(cv.folds);
        c.repeats = Some(cv.repeats);
        c.seed = Some(cv.seed);
        c.jobs = Some(cv.jobs);
        c.out = Some(self.out_dir());
        if self.data.is_some() && c.name.is_none() {
            c.name = Some(self.dataset_name()?);
        }
        for p in self.pipelines()? {
            self.image_format(&p)?;
        }
        if self.preset.is_none() {
            let p = self.pipeline()?;
            c.bins = Some(match p.bins {
                BinningScheme::Spb => BinsArg::Spb,
                BinningScheme::Qtf { .. } => BinsArg::Qtf,
                BinningScheme::Pr => BinsArg::Pr,
                BinningScheme::Eqw { .. } => BinsArg::Eqw,
            });
            c.layout = Some(match p.layout {
                Layout::Fillup => LayoutArg::Fillup,
                Layout::Tsne => LayoutArg::Tsne,
                Layout::Raw1d => LayoutArg::Raw1d,
            });
            c.model = Some(match p.arch {
                Arch::Fc => ModelArg::Fc,
                Arch::Cnn1d => ModelArg::Cnn1d,
                Arch::Cnn2d => ModelArg::Cnn2d,
            });
            c.colors = Some(match p.colors {
                Colors::Viridis => ColorsArg::Viridis,
                Colors::Gray => ColorsArg::Gray,
                Colors::Bw => ColorsArg::Bw,
            });
            c.fill = Some(match p.fill {
                FillDirection::LeftToRight => FillArg::Ltr,
                FillDirection::RightToLeft => FillArg::Rtl,
            });
            c.filters = Some(p.filters);
            c.epochs = Some(p.train.max_epochs);
            c.patience = Some(p.train.patience);
            c.batch_size = Some(p.train.batch_size);
            c.learning_rate = Some(p.train.adam.lr);
            c.val_fraction = Some(p.train.val_fraction);
            c.perplexity = Some(p.tsne.perplexity);
            c.tsne_iterations = Some(p.tsne.iterations);
        }
        Ok(c)
    }
}
