//! Synthetic-image classification of abundance tables.
//!
//! Pipeline: load an [`AbundanceTable`], fit a [`FittedBinner`] (and for the
//! t-SNE layout a [`GlobalMap`]) on training rows only, render per-sample
//! [`SyntheticImage`]s, train a small network and score it with repeated
//! stratified cross-validation.

pub mod binning;
pub mod colormap;
pub mod data;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod fingerprint;
pub mod imaging;
pub mod nn;
pub mod synthetic;

pub use binning::{fit_binner, spb_breaks, BinningScheme, ColorScheme, Colors, FittedBinner};
pub use data::{load_abundance_table, log_histogram, phylo_sort, to_presence, AbundanceTable, FeatureOrder, LogHistogram};
pub use embedding::{run_tsne, GlobalMap, TsneConfig};
pub use error::{Error, Result};
pub use eval::{run_cv, CvConfig, Layout, MetricReport, Pipeline};
pub use fingerprint::Fingerprint;
pub use nn::{Arch, Model, ModelSpec, Tensor, TrainConfig, TrainedModel};
pub use imaging::{autofit_size, render_fillup, render_tsne, FillDirection, ImageFormat, SyntheticImage};
