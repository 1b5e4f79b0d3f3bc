use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use downscale_core::geo::QuantityKind;
use downscale_core::numerics::BfgsOptions;
use downscale_core::pipeline::{BundlePaths, PipelineOptions};

/// Statistical downscaling of coarse areal data with auxiliary datasets at
/// arbitrary granularities.
#[derive(Debug, Parser)]
#[command(name = "downscale", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the auxiliary GPs and the downscaling model; write models as JSON.
    Fit(FitArgs),
    /// Predict fine-level values from fitted models; write CSV and an SVG map.
    Refine(RefineArgs),
    /// Run one baseline method (gpr, lr or sd2).
    Baseline(BaselineArgs),
    /// Compare methods against fine-level truth with t-test stars.
    Eval(EvalArgs),
    /// Write a synthetic instance directory with known truth.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    /// Per-area quantity (density, rate, average); used as is.
    Intensive,
    /// Total over the region (count, sum); divided by area on load.
    Extensive,
}

impl From<Kind> for QuantityKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Intensive => QuantityKind::Intensive,
            Kind::Extensive => QuantityKind::Extensive,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// CSV of coarse target values (`region_id,value`).
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, value_enum, default_value_t = Kind::Intensive)]
    pub target_kind: Kind,
    /// GeoJSON of the coarse partition the target is reported on.
    #[arg(long)]
    pub coarse: PathBuf,
    /// GeoJSON of the fine partition to predict on.
    #[arg(long)]
    pub fine: PathBuf,
    /// JSON array of `{id, geojson, csv[, kind]}`; order fixes column order.
    #[arg(long)]
    pub aux_manifest: PathBuf,
    /// CSV aggregation matrix (coarse rows, fine columns, by id). Defaults to
    /// centroid membership.
    #[arg(long)]
    pub h_matrix: Option<PathBuf>,
}

impl InputArgs {
    pub fn paths(&self) -> BundlePaths {
        BundlePaths {
            target: self.target.clone(),
            target_kind: self.target_kind.into(),
            coarse: self.coarse.clone(),
            fine: self.fine.clone(),
            aux_manifest: self.aux_manifest.clone(),
            h_matrix: self.h_matrix.clone(),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitSettings {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random restarts per optimization in addition to the default start.
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    /// Penalty on the squared auxiliary weights (bias excluded).
    #[arg(long, default_value_t = 0.0)]
    pub ridge: f64,
    /// Diagonal jitter, relative to the kernel scale.
    #[arg(long, default_value_t = downscale_core::kernel::DEFAULT_JITTER)]
    pub jitter: f64,
    /// Gradient infinity-norm tolerance of the optimizer.
    #[arg(long, default_value_t = BfgsOptions::default().gtol)]
    pub gtol: f64,
}

impl FitSettings {
    pub fn options(&self) -> PipelineOptions {
        let mut o = PipelineOptions::new(self.seed, self.restarts);
        o.gp.jitter = self.jitter;
        o.gp.bfgs.gtol = self.gtol;
        o.downscale.jitter = self.jitter;
        o.downscale.bfgs.gtol = self.gtol;
        o.downscale.ridge = self.ridge;
        o
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub settings: FitSettings,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Directory holding `model.json` and `aux_models.json`; defaults to
    /// `--out`.
    #[arg(long)]
    pub models: Option<PathBuf>,
    /// Also write the full fine-level posterior covariance.
    #[arg(long)]
    pub covariance: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub settings: FitSettings,
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub settings: FitSettings,
    /// CSV of fine-level truth (`region_id,value`).
    #[arg(long)]
    pub truth: PathBuf,
    /// Methods to compare, comma separated; the first is the reference.
    #[arg(long, value_delimiter = ',', default_value = "proposed,gpr,lr,sd2")]
    pub method: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// `recovery` (three auxiliaries) or `twin` (one field at two
    /// granularities).
    #[arg(long, default_value = "recovery")]
    pub preset: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}
