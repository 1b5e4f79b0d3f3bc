//! Metrics, significance tests, synthetic instances with known truth, and
//! repeated-seed experiments on them.

mod comparison;
mod metrics;
mod synthetic;

pub use comparison::{run_comparison, ComparisonOutcome, ComparisonRow, ComparisonTable};
pub use metrics::{mape, metrics, paired_ttest, MetricReport, Significance, TTest};
pub use synthetic::{generate_synthetic, write_instance, AuxSpec, FieldSpec, SyntheticInstance, SyntheticSpec};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{gpr_baseline, lr_baseline, sd2_baseline};
use crate::error::Result;
use crate::pipeline::{fit_aux_stage, run_proposed, Method, PipelineOptions};

/// Sample Pearson correlation; NaN when either input has no spread.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

/// Outcome of all four methods on one synthetic instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// MAPE per method, in [`Method::ALL`] order.
    pub mape: Vec<(Method, f64)>,
    /// Fitted auxiliary weights per unit of the raw auxiliary values.
    pub fitted_weights: Vec<f64>,
    pub true_weights: Vec<f64>,
    /// Average predictive variance of each auxiliary posterior, in
    /// standardized units.
    pub aux_avg_variance: Vec<f64>,
}

impl SeedResult {
    pub fn mape_of(&self, m: Method) -> f64 {
        self.mape
            .iter()
            .find(|(k, _)| *k == m)
            .map(|(_, v)| *v)
            .expect("every method is scored")
    }
}

pub fn run_seed(spec: &SyntheticSpec, seed: u64, opts: &PipelineOptions) -> Result<SeedResult> {
    let inst = generate_synthetic(spec, seed)?;
    let bundle = inst.bundle();
    let stage = fit_aux_stage(&bundle, &opts.gp)?;
    let proposed = run_proposed(&bundle, &stage, &opts.downscale)?;
    let transform = stage.transform;
    let gpr = gpr_baseline(&bundle.target, &bundle.fine, &transform, &opts.gp)?;
    let lr = lr_baseline(&bundle.target, &stage.posteriors, &bundle.map)?;
    let sd2 = sd2_baseline(&bundle.target, &stage.posteriors, &bundle.map, &transform, &opts.gp)?;
    let score = |pred: &[f64]| mape(&inst.z_true, pred).map(|r| r.mape);
    let mape = vec![
        (Method::Proposed, score(proposed.refinement.mean.as_slice())?),
        (Method::Gpr, score(gpr.prediction.as_slice())?),
        (Method::Lr, score(lr.prediction.as_slice())?),
        (Method::Sd2, score(sd2.prediction.as_slice())?),
    ];
    let fitted_weights = proposed
        .fit
        .params
        .aux_weights()
        .iter()
        .zip(&stage.posteriors)
        .map(|(w, p)| w / p.scale)
        .collect();
    Ok(SeedResult {
        seed,
        mape,
        fitted_weights,
        true_weights: inst.true_aux_weights(),
        aux_avg_variance: stage.posteriors.iter().map(|p| p.avg_variance).collect(),
    })
}

/// [`run_seed`] over `seeds`, in parallel; results are in seed order.
pub fn run_sweep(spec: &SyntheticSpec, seeds: &[u64], opts: &PipelineOptions) -> Result<Vec<SeedResult>> {
    seeds.par_iter().map(|&s| run_seed(spec, s, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_and_median() {
        // deviations (-1, 0, 1) and (-13, -1, 14)/6: r = 27 / sqrt(732)
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.5]) - 27.0 / 732f64.sqrt()).abs() < 1e-14);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_nan());
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn single_seed_runs_every_method() {
        let r = run_seed(&SyntheticSpec::recovery(), 0, &PipelineOptions::new(0, 2)).unwrap();
        assert_eq!(r.mape.len(), 4);
        assert!(r.mape.iter().all(|(_, v)| v.is_finite() && *v > 0.0));
        assert_eq!(r.fitted_weights.len(), 3);
        assert_eq!(r.true_weights, vec![1.0, -0.7, 0.4]);
    }
}
