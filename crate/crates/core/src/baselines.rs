//! Comparison methods: GP interpolation of the coarse values, regression on
//! aggregated auxiliaries, and regression followed by kriging of the coarse
//! residuals.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::downscale::{build_design, WeightEntry};
use crate::error::{Error, Result};
use crate::geo::{AggregationMap, ArealDataset, Partition};
use crate::gp_aux::{fit_aux_gp, fit_gp, AuxModelRecord, AuxPosterior, GpFitOptions};
use crate::kernel::CoordTransform;
use crate::numerics::min_norm_lstsq;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Gpr,
    Lr,
    Sd2,
}

impl BaselineMethod {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineMethod::Gpr => "gpr",
            BaselineMethod::Lr => "lr",
            BaselineMethod::Sd2 => "sd2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum BaselineParams {
    Gpr {
        gp: AuxModelRecord,
    },
    Lr {
        weights: Vec<WeightEntry>,
    },
    Sd2 {
        weights: Vec<WeightEntry>,
        residual_gp: AuxModelRecord,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub method: BaselineMethod,
    /// Predicted values at the fine centroids, target units.
    pub prediction: DVector<f64>,
    /// Predictive variances, for methods that have them.
    pub variance: Option<DVector<f64>>,
    pub params: BaselineParams,
}

/// GP fitted to the coarse values at the coarse centroids, evaluated at the
/// fine centroids.
pub fn gpr_baseline(
    a: &ArealDataset,
    fine: &Partition,
    transform: &CoordTransform,
    opts: &GpFitOptions,
) -> Result<BaselineResult> {
    let model = fit_aux_gp(a, transform, &GpFitOptions { center: true, ..*opts })?;
    let post = model.predict(&transform.apply_all(&fine.centroids()))?;
    Ok(BaselineResult {
        method: BaselineMethod::Gpr,
        prediction: post.mean_original(),
        variance: Some(post.variance_original()),
        params: BaselineParams::Gpr { gp: model.record() },
    })
}

/// Least-squares weights (bias last) of the coarse values on the
/// aggregated posterior means, with the fine-level design.
pub struct LinearFit {
    pub weights: DVector<f64>,
    pub column_ids: Vec<String>,
    /// `F̄ w` at the fine centroids.
    pub fine_values: DVector<f64>,
    /// `H F̄ w` at the coarse regions.
    pub coarse_values: DVector<f64>,
}

pub fn linear_fit(a: &[f64], posteriors: &[AuxPosterior], map: &AggregationMap) -> Result<LinearFit> {
    let h = map.matrix();
    if a.len() != h.nrows() {
        return Err(Error::Shape(format!(
            "{} coarse values for {} coarse regions",
            a.len(),
            h.nrows()
        )));
    }
    let design = build_design(posteriors, h.ncols())?;
    let x = h * &design.matrix;
    let weights = min_norm_lstsq(&x, &DVector::from_column_slice(a))?;
    Ok(LinearFit {
        fine_values: &design.matrix * &weights,
        coarse_values: x * &weights,
        weights,
        column_ids: design.column_ids,
    })
}

fn weight_entries(fit: &LinearFit) -> Vec<WeightEntry> {
    fit.column_ids
        .iter()
        .zip(fit.weights.iter())
        .map(|(c, w)| WeightEntry {
            column: c.clone(),
            weight: *w,
        })
        .collect()
}

pub fn lr_baseline(a: &ArealDataset, posteriors: &[AuxPosterior], map: &AggregationMap) -> Result<BaselineResult> {
    let fit = linear_fit(a.values(), posteriors, map)?;
    Ok(BaselineResult {
        method: BaselineMethod::Lr,
        params: BaselineParams::Lr {
            weights: weight_entries(&fit),
        },
        prediction: fit.fine_values,
        variance: None,
    })
}

/// Regression surface plus a zero-mean GP kriging of the coarse residuals
/// from the coarse centroids to the fine centroids. Set
/// `opts.fixed_noise` to hold the residual noise instead of estimating it.
pub fn sd2_baseline(
    a: &ArealDataset,
    posteriors: &[AuxPosterior],
    map: &AggregationMap,
    transform: &CoordTransform,
    opts: &GpFitOptions,
) -> Result<BaselineResult> {
    let fit = linear_fit(a.values(), posteriors, map)?;
    let residuals: Vec<f64> = a
        .values()
        .iter()
        .zip(fit.coarse_values.iter())
        .map(|(a, m)| a - m)
        .collect();
    let coarse_pts = transform.apply_all(&map.coarse().centroids());
    let gp = fit_gp(
        "residual",
        &coarse_pts,
        &residuals,
        &GpFitOptions { center: false, ..*opts },
    )
    .map_err(|e| Error::Fit {
        dataset: format!("{} residuals", a.id),
        source: Box::new(e),
    })?;
    let kriged = gp.predict(&transform.apply_all(&map.fine().centroids()))?;
    Ok(BaselineResult {
        method: BaselineMethod::Sd2,
        prediction: &fit.fine_values + kriged.mean_original(),
        variance: None,
        params: BaselineParams::Sd2 {
            weights: weight_entries(&fit),
            residual_gp: gp.record(),
        },
    })
}
