//! End-to-end runs over a data bundle: auxiliary fits, the downscaling
//! model, and the baselines, sharing one set of auxiliary posteriors.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::baselines::{gpr_baseline, lr_baseline, sd2_baseline, BaselineParams};
use crate::downscale::{
    fit_downscale, DownscaleFit, DownscaleModelRecord, DownscaleOptions, DownscaleProblem, Refinement, BIAS_COLUMN,
};
use crate::error::{Error, Result};
use crate::geo::{
    build_aggregation, load_dataset_csv, load_partition_file, to_intensive, AggregationMap, ArealDataset, Partition,
    QuantityKind,
};
use crate::gp_aux::{fit_all_aux, AuxGpModel, AuxModelRecord, AuxPosterior, GpFitOptions};
use crate::kernel::CoordTransform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Proposed,
    Gpr,
    Lr,
    Sd2,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Proposed, Method::Gpr, Method::Lr, Method::Sd2];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Gpr => "gpr",
            Method::Lr => "lr",
            Method::Sd2 => "sd2",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::Validation(format!(
                "unknown method `{s}`; valid methods are {}",
                Method::ALL.map(|m| m.name()).join(", ")
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub gp: GpFitOptions,
    pub downscale: DownscaleOptions,
}

impl PipelineOptions {
    /// Same seed, restarts and optimizer settings for both inference steps.
    pub fn new(seed: u64, restarts: usize) -> Self {
        PipelineOptions {
            gp: GpFitOptions {
                seed,
                restarts,
                ..Default::default()
            },
            downscale: DownscaleOptions {
                seed,
                restarts,
                ..Default::default()
            },
        }
    }
}

/// Coarse target, fine partition, aggregation map and auxiliary datasets.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub target: ArealDataset,
    pub fine: Arc<Partition>,
    pub map: AggregationMap,
    pub aux: Vec<ArealDataset>,
}

/// Input file locations of a [`Bundle`].
#[derive(Debug, Clone, PartialEq)]
pub struct BundlePaths {
    /// Coarse target values, one row per coarse region.
    pub target: PathBuf,
    pub target_kind: QuantityKind,
    pub coarse: PathBuf,
    pub fine: PathBuf,
    pub aux_manifest: PathBuf,
    /// Explicit aggregation matrix; centroid membership when absent.
    pub h_matrix: Option<PathBuf>,
}

impl Bundle {
    pub fn load(paths: &BundlePaths) -> Result<Bundle> {
        let coarse = Arc::new(load_partition_file(&paths.coarse)?);
        let fine = Arc::new(load_partition_file(&paths.fine)?);
        let target = load_dataset_csv("target", coarse.clone(), paths.target_kind, &paths.target)?;
        let target = match paths.target_kind {
            QuantityKind::Intensive => target,
            QuantityKind::Extensive => to_intensive(&target)?,
        };
        let map = match &paths.h_matrix {
            Some(p) => {
                let f = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
                AggregationMap::read_csv(coarse, fine.clone(), std::io::BufReader::new(f))?
            }
            None => build_aggregation(coarse, fine.clone())?,
        };
        let aux = load_aux(&read_aux_manifest(&paths.aux_manifest)?)?;
        Ok(Bundle { target, fine, map, aux })
    }

    pub fn transform(&self) -> CoordTransform {
        CoordTransform::standardizing(&self.fine.centroids())
    }
}

/// First inference step over every auxiliary dataset.
#[derive(Debug, Clone)]
pub struct AuxStage {
    pub transform: CoordTransform,
    pub models: Vec<AuxGpModel>,
    pub posteriors: Vec<AuxPosterior>,
}

pub fn fit_aux_stage(bundle: &Bundle, opts: &GpFitOptions) -> Result<AuxStage> {
    let transform = bundle.transform();
    let fitted = fit_all_aux(&bundle.aux, &bundle.fine.centroids(), &transform, opts)?;
    let (models, posteriors) = fitted.into_iter().unzip();
    Ok(AuxStage {
        transform,
        models,
        posteriors,
    })
}

#[derive(Debug, Clone)]
pub struct ProposedRun {
    pub problem: DownscaleProblem,
    pub fit: DownscaleFit,
    pub refinement: Refinement,
}

/// Second inference step and the fine-level prediction.
pub fn run_proposed(bundle: &Bundle, stage: &AuxStage, opts: &DownscaleOptions) -> Result<ProposedRun> {
    let problem = DownscaleProblem::from_map(&stage.posteriors, &bundle.map, &stage.transform, opts.jitter)?;
    let a = DVector::from_column_slice(bundle.target.values());
    let fit = fit_downscale(&problem, &a, opts)?;
    let refinement = refine(&problem, &fit, &a, &bundle.fine)?;
    Ok(ProposedRun {
        problem,
        fit,
        refinement,
    })
}

pub fn refine(
    problem: &DownscaleProblem,
    fit: &DownscaleFit,
    a: &DVector<f64>,
    fine: &Partition,
) -> Result<Refinement> {
    let (mean, cov) = problem.predict_fine(&fit.params, a)?;
    Ok(Refinement {
        region_ids: fine.ids().map(str::to_string).collect(),
        mean,
        cov,
        params: fit.params.clone(),
        log_marginal: fit.diagnostics.log_marginal,
    })
}

/// Rebuilds the auxiliary stage from saved records without refitting. The
/// records must match the bundle's auxiliary datasets in id and order.
pub fn restore_aux_stage(bundle: &Bundle, records: &[AuxModelRecord]) -> Result<AuxStage> {
    let saved: Vec<&str> = records.iter().map(|r| r.dataset_id.as_str()).collect();
    let current: Vec<&str> = bundle.aux.iter().map(|d| d.id.as_str()).collect();
    if saved != current {
        return Err(Error::Validation(format!(
            "saved auxiliary models are for [{}] but the manifest lists [{}]",
            saved.join(", "),
            current.join(", ")
        )));
    }
    let transform = bundle.transform();
    let test_points = transform.apply_all(&bundle.fine.centroids());
    let mut models = Vec::with_capacity(records.len());
    let mut posteriors = Vec::with_capacity(records.len());
    for (rec, data) in records.iter().zip(&bundle.aux) {
        let model = AuxGpModel::from_record(rec, transform.apply_all(&data.partition().centroids()), data.values())?;
        posteriors.push(model.predict(&test_points)?);
        models.push(model);
    }
    Ok(AuxStage {
        transform,
        models,
        posteriors,
    })
}

/// Fine-level prediction from a saved downscaling model. Fails when the
/// model was fitted on different auxiliary columns or a different fine
/// partition.
pub fn restore_refinement(bundle: &Bundle, stage: &AuxStage, record: &DownscaleModelRecord) -> Result<Refinement> {
    let problem = DownscaleProblem::from_map(&stage.posteriors, &bundle.map, &stage.transform, record.jitter)?;
    let saved: Vec<&str> = record.weights.iter().map(|w| w.column.as_str()).collect();
    let expected: Vec<&str> = problem.design().column_ids.iter().map(String::as_str).collect();
    if saved != expected {
        return Err(Error::Validation(format!(
            "model weights are for columns [{}] but the inputs give [{}]",
            saved.join(", "),
            expected.join(", ")
        )));
    }
    if record.coordinate_transform != stage.transform {
        return Err(Error::Validation(
            "model was fitted on a different fine partition (coordinate transform differs)".into(),
        ));
    }
    debug_assert_eq!(saved.last().copied(), Some(BIAS_COLUMN));
    let fit = DownscaleFit {
        params: record.params(),
        diagnostics: record.diagnostics.clone(),
    };
    refine(
        &problem,
        &fit,
        &DVector::from_column_slice(bundle.target.values()),
        &bundle.fine,
    )
}

/// Fine-level output of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutput {
    pub method: Method,
    pub mean: DVector<f64>,
    pub variance: Option<DVector<f64>>,
    pub baseline_params: Option<BaselineParams>,
}

/// Runs `methods` in order, fitting the auxiliary GPs once if any method
/// needs them.
pub fn run_methods(bundle: &Bundle, methods: &[Method], opts: &PipelineOptions) -> Result<Vec<MethodOutput>> {
    let needs_aux = methods.iter().any(|m| *m != Method::Gpr);
    let stage = if needs_aux {
        Some(fit_aux_stage(bundle, &opts.gp)?)
    } else {
        None
    };
    let transform = bundle.transform();
    methods
        .iter()
        .map(|&method| {
            let baseline = |r: crate::baselines::BaselineResult| MethodOutput {
                method,
                mean: r.prediction,
                variance: r.variance,
                baseline_params: Some(r.params),
            };
            Ok(match method {
                Method::Proposed => {
                    let run = run_proposed(bundle, stage.as_ref().expect("fitted"), &opts.downscale)?;
                    MethodOutput {
                        method,
                        variance: Some(run.refinement.variance()),
                        mean: run.refinement.mean,
                        baseline_params: None,
                    }
                }
                Method::Gpr => baseline(gpr_baseline(&bundle.target, &bundle.fine, &transform, &opts.gp)?),
                Method::Lr => baseline(lr_baseline(
                    &bundle.target,
                    &stage.as_ref().expect("fitted").posteriors,
                    &bundle.map,
                )?),
                Method::Sd2 => baseline(sd2_baseline(
                    &bundle.target,
                    &stage.as_ref().expect("fitted").posteriors,
                    &bundle.map,
                    &transform,
                    &opts.gp,
                )?),
            })
        })
        .collect()
}

/// One entry of the auxiliary manifest. Paths are relative to the manifest's
/// directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxManifestEntry {
    pub id: String,
    pub geojson: PathBuf,
    pub csv: PathBuf,
    #[serde(default = "intensive", skip_serializing_if = "is_intensive")]
    pub kind: QuantityKind,
}

fn intensive() -> QuantityKind {
    QuantityKind::Intensive
}

fn is_intensive(k: &QuantityKind) -> bool {
    *k == QuantityKind::Intensive
}

pub fn read_aux_manifest(path: &Path) -> Result<Vec<AuxManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries: Vec<AuxManifestEntry> =
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for e in entries.iter_mut() {
        e.geojson = base.join(&e.geojson);
        e.csv = base.join(&e.csv);
    }
    let mut ids: Vec<&str> = entries.iter().map(|e| e.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Validation(format!(
            "auxiliary id `{}` appears twice in the manifest",
            w[0]
        )));
    }
    Ok(entries)
}

pub fn load_aux(entries: &[AuxManifestEntry]) -> Result<Vec<ArealDataset>> {
    entries
        .iter()
        .map(|e| {
            let part = Arc::new(load_partition_file(&e.geojson)?);
            let d = load_dataset_csv(&e.id, part, e.kind, &e.csv)?;
            match e.kind {
                QuantityKind::Intensive => Ok(d),
                QuantityKind::Extensive => to_intensive(&d),
            }
        })
        .collect()
}
