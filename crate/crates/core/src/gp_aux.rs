//! First inference step: an independent zero-mean GP per auxiliary dataset,
//! fitted by maximizing its marginal likelihood, then evaluated as a
//! predictive distribution at the fine-partition centroids.
//!
//! Values are centered and scaled to unit variance before fitting. The
//! posterior is kept in those standardized units (the regression weights of
//! the downscaling model absorb the scale); `offset` and `scale` map back.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{ArealDataset, Location};
use crate::kernel::{
    cov_matrix, gram_matrix, median_pairwise_distance, sq_dist_matrix, CoordTransform, SEKernelParams, DEFAULT_JITTER,
};
use crate::numerics::{add_diagonal, bfgs_minimize, cholesky, symmetrize, BfgsOptions, CholeskyFactor};

pub const DEFAULT_NOISE_FLOOR: f64 = 1e-6;
const RESTART_SPREAD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpFitOptions {
    /// Number of optimizer starts; the first is the heuristic initialisation.
    pub restarts: usize,
    pub seed: u64,
    /// Noise standard deviations below this are rejected by the objective.
    pub noise_floor: f64,
    /// Hold the noise at this value instead of estimating it.
    pub fixed_noise: Option<f64>,
    /// Relative diagonal jitter, multiplied by `alpha²`.
    pub jitter: f64,
    /// Subtract the empirical mean before fitting.
    pub center: bool,
    pub bfgs: BfgsOptions,
}

impl Default for GpFitOptions {
    fn default() -> Self {
        GpFitOptions {
            restarts: 5,
            seed: 0,
            noise_floor: DEFAULT_NOISE_FLOOR,
            fixed_noise: None,
            jitter: DEFAULT_JITTER,
            center: true,
            bfgs: BfgsOptions::default(),
        }
    }
}

/// A fitted auxiliary GP together with its factorized training covariance.
#[derive(Debug, Clone)]
pub struct AuxGpModel {
    pub dataset_id: String,
    pub params: SEKernelParams,
    pub noise_sigma: f64,
    /// Empirical mean removed before fitting (0 when centering is off).
    pub offset: f64,
    /// Standard deviation the centered values were divided by.
    pub scale: f64,
    pub log_marginal: f64,
    pub jitter: f64,
    /// Training centroids, in transformed coordinates.
    train_points: Vec<Location>,
    /// Standardized training values.
    train_values: DVector<f64>,
    factor: CholeskyFactor,
    /// `(K + sigma² I)⁻¹ y`
    weights: DVector<f64>,
}

/// Serialized form of a fitted auxiliary model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxModelRecord {
    pub dataset_id: String,
    pub log_alpha: f64,
    pub log_gamma: f64,
    pub log_sigma: f64,
    pub offset: f64,
    pub scale: f64,
    pub log_marginal: f64,
    pub jitter: f64,
}

/// Predictive distribution of an auxiliary field at a set of test points,
/// in standardized value units.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxPosterior {
    pub dataset_id: String,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Mean of the predictive variances.
    pub avg_variance: f64,
    pub offset: f64,
    pub scale: f64,
}

impl AuxPosterior {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean_original(&self) -> DVector<f64> {
        self.mean.map(|m| self.offset + self.scale * m)
    }

    pub fn variance_original(&self) -> DVector<f64> {
        self.cov.diagonal() * (self.scale * self.scale)
    }
}

fn kernel_matrix(params: &SEKernelParams, sigma: f64, points: &[Location], jitter: f64) -> DMatrix<f64> {
    let mut k = gram_matrix(params, points);
    add_diagonal(&mut k, jitter * params.variance() + sigma * sigma);
    k
}

/// `log N(y | 0, K + sigma² I)` with the kernel's relative jitter on the diagonal.
pub fn gp_log_marginal(
    params: &SEKernelParams,
    sigma: f64,
    points: &[Location],
    y: &[f64],
    jitter: f64,
) -> Result<f64> {
    if points.len() != y.len() {
        return Err(Error::Shape(format!("{} points for {} values", points.len(), y.len())));
    }
    let factor = cholesky(&kernel_matrix(params, sigma, points, jitter))?;
    let y = DVector::from_column_slice(y);
    let beta = factor.solve_vec(&y)?;
    Ok(-0.5 * y.dot(&beta) - 0.5 * factor.log_det() - 0.5 * y.len() as f64 * (2.0 * PI).ln())
}

/// Negative log marginal likelihood and its gradient in
/// `(log alpha, log gamma, log sigma)`. Returns `+inf` below the noise floor
/// or when the covariance cannot be factorized.
fn neg_log_marginal(
    theta: &[f64; 3],
    sq_dists: &DMatrix<f64>,
    y: &DVector<f64>,
    jitter: f64,
    noise_floor: f64,
) -> (f64, [f64; 3]) {
    let fail = (f64::INFINITY, [f64::NAN; 3]);
    let (alpha2, gamma2, sigma) = ((2.0 * theta[0]).exp(), (2.0 * theta[1]).exp(), theta[2].exp());
    if !(sigma >= noise_floor) || !alpha2.is_finite() || !gamma2.is_finite() || !(gamma2 > 0.0) {
        return fail;
    }
    let sigma2 = sigma * sigma;
    let n = y.len();
    let corr = sq_dists.map(|d| (-0.5 * d / gamma2).exp());
    let mut ky = &corr * alpha2;
    add_diagonal(&mut ky, alpha2 * jitter + sigma2);
    let Ok(factor) = cholesky(&ky) else {
        return fail;
    };
    let beta = factor.solve_vec(y).expect("shapes agree");
    let nll = 0.5 * y.dot(&beta) + 0.5 * factor.log_det() + 0.5 * n as f64 * (2.0 * PI).ln();

    // d nll / d theta = -1/2 tr((beta betaᵀ - K⁻¹) dK/dtheta)
    let kinv = factor.inverse();
    let mut g = [0.0; 3];
    for j in 0..n {
        for i in 0..n {
            let w = beta[i] * beta[j] - kinv[(i, j)];
            let diag = if i == j { 1.0 } else { 0.0 };
            let r = corr[(i, j)];
            g[0] += w * 2.0 * alpha2 * (r + jitter * diag);
            g[1] += w * alpha2 * r * sq_dists[(i, j)] / gamma2;
            g[2] += w * 2.0 * sigma2 * diag;
        }
    }
    (nll, g.map(|v| -0.5 * v))
}

fn mean_std(values: &[f64], center: bool) -> (f64, f64) {
    let n = values.len() as f64;
    let offset = if center { values.iter().sum::<f64>() / n } else { 0.0 };
    let ss: f64 = values.iter().map(|v| (v - offset).powi(2)).sum();
    let dof = if center { (n - 1.0).max(1.0) } else { n };
    (offset, (ss / dof).sqrt())
}

/// Fits a GP to `values` observed at `points` (already in transformed
/// coordinates).
pub fn fit_gp(id: &str, points: &[Location], values: &[f64], opts: &GpFitOptions) -> Result<AuxGpModel> {
    if points.len() != values.len() {
        return Err(Error::Shape(format!(
            "`{id}`: {} points for {} values",
            points.len(),
            values.len()
        )));
    }
    if points.len() < 2 {
        return Err(Error::Validation(format!(
            "`{id}` needs at least 2 regions to fit a GP"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("`{id}` has non-finite values")));
    }
    let (offset, spread) = mean_std(values, opts.center);
    let degenerate = !(spread > 1e-12 * (1.0 + offset.abs()));
    let scale = if degenerate { 1.0 } else { spread };
    let y = DVector::from_iterator(values.len(), values.iter().map(|v| (v - offset) / scale));
    let gamma0 = median_pairwise_distance(points);

    if degenerate {
        // Constant field: nothing to explain. Shrink signal and noise to the floor.
        let floor = opts.noise_floor.max(f64::MIN_POSITIVE);
        let sigma = opts.fixed_noise.unwrap_or(floor);
        let params = SEKernelParams::from_log(floor.ln(), gamma0.ln());
        let y_zero = DVector::zeros(values.len());
        return AuxGpModel::from_parts(id, params, sigma, offset, scale, points.to_vec(), y_zero, opts.jitter);
    }

    let sq_dists = sq_dist_matrix(points);
    let init = [0.0, gamma0.ln(), opts.fixed_noise.unwrap_or(0.1).ln()];
    let free: Vec<usize> = if opts.fixed_noise.is_some() {
        vec![0, 1]
    } else {
        vec![0, 1, 2]
    };
    let objective = |x: &DVector<f64>| {
        let mut theta = init;
        for (k, &idx) in free.iter().enumerate() {
            theta[idx] = x[k];
        }
        let (f, g) = neg_log_marginal(
            &theta,
            &sq_dists,
            &y,
            opts.jitter,
            opts.noise_floor.min(opts.fixed_noise.unwrap_or(f64::INFINITY)),
        );
        (f, DVector::from_iterator(free.len(), free.iter().map(|&i| g[i])))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let normal = Normal::new(0.0, RESTART_SPREAD).expect("valid spread");
    let start0 = DVector::from_iterator(free.len(), free.iter().map(|&i| init[i]));
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut failures = Vec::new();
    for restart in 0..opts.restarts.max(1) {
        let start = if restart == 0 {
            start0.clone()
        } else {
            start0.map(|v| v + normal.sample(&mut rng))
        };
        match bfgs_minimize(objective, &start, &opts.bfgs) {
            Ok(r) => {
                if best.as_ref().is_none_or(|(f, _)| r.objective < *f) {
                    best = Some((r.objective, r.argmin));
                }
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    let Some((_, x)) = best else {
        return Err(Error::Optimization(format!(
            "all restarts failed for `{id}`: {}",
            failures.join("; ")
        )));
    };
    let mut theta = init;
    for (k, &idx) in free.iter().enumerate() {
        theta[idx] = x[k];
    }
    let params = SEKernelParams::from_log(theta[0], theta[1]);
    AuxGpModel::from_parts(
        id,
        params,
        theta[2].exp(),
        offset,
        scale,
        points.to_vec(),
        y,
        opts.jitter,
    )
}

/// Fits the GP of one auxiliary dataset; centroids are mapped through
/// `transform` first.
pub fn fit_aux_gp(data: &ArealDataset, transform: &CoordTransform, opts: &GpFitOptions) -> Result<AuxGpModel> {
    let points = transform.apply_all(&data.partition().centroids());
    fit_gp(&data.id, &points, data.values(), opts).map_err(|e| Error::Fit {
        dataset: data.id.clone(),
        source: Box::new(e),
    })
}

impl AuxGpModel {
    /// Builds a model from known hyperparameters and standardized training
    /// values. `noise_sigma` may be zero here; the jitter keeps the
    /// covariance factorizable.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        id: &str,
        params: SEKernelParams,
        noise_sigma: f64,
        offset: f64,
        scale: f64,
        train_points: Vec<Location>,
        train_values: DVector<f64>,
        jitter: f64,
    ) -> Result<Self> {
        if train_points.len() != train_values.len() || train_points.is_empty() {
            return Err(Error::Shape(format!(
                "`{id}`: {} points for {} values",
                train_points.len(),
                train_values.len()
            )));
        }
        let factor = cholesky(&kernel_matrix(&params, noise_sigma, &train_points, jitter))?;
        let weights = factor.solve_vec(&train_values)?;
        let n = train_values.len() as f64;
        let log_marginal = -0.5 * train_values.dot(&weights) - 0.5 * factor.log_det() - 0.5 * n * (2.0 * PI).ln();
        Ok(AuxGpModel {
            dataset_id: id.to_string(),
            params,
            noise_sigma,
            offset,
            scale,
            log_marginal,
            jitter,
            train_points,
            train_values,
            factor,
            weights,
        })
    }

    pub fn record(&self) -> AuxModelRecord {
        AuxModelRecord {
            dataset_id: self.dataset_id.clone(),
            log_alpha: self.params.log_alpha(),
            log_gamma: self.params.log_gamma(),
            log_sigma: self.noise_sigma.ln(),
            offset: self.offset,
            scale: self.scale,
            log_marginal: self.log_marginal,
            jitter: self.jitter,
        }
    }

    /// Rebuilds a fitted model from its record and the original training
    /// data (values in original units, points in transformed coordinates).
    pub fn from_record(record: &AuxModelRecord, points: Vec<Location>, values: &[f64]) -> Result<Self> {
        let y = DVector::from_iterator(values.len(), values.iter().map(|v| (v - record.offset) / record.scale));
        let params = SEKernelParams::from_log(record.log_alpha, record.log_gamma);
        let y = if record.log_alpha.exp() <= DEFAULT_NOISE_FLOOR && y.iter().all(|v| v.abs() < 1e-12) {
            DVector::zeros(values.len())
        } else {
            y
        };
        AuxGpModel::from_parts(
            &record.dataset_id,
            params,
            record.log_sigma.exp(),
            record.offset,
            record.scale,
            points,
            y,
            record.jitter,
        )
    }

    pub fn train_points(&self) -> &[Location] {
        &self.train_points
    }

    /// Standardized training values.
    pub fn train_values(&self) -> &DVector<f64> {
        &self.train_values
    }

    /// Predictive mean and covariance at `test_points` (transformed
    /// coordinates), standardized units.
    pub fn predict(&self, test_points: &[Location]) -> Result<AuxPosterior> {
        let k_star = cov_matrix(&self.params, &self.train_points, test_points);
        let mean = k_star.transpose() * &self.weights;
        let v = self.factor.solve_lower(&k_star);
        let mut cov = gram_matrix(&self.params, test_points) - v.transpose() * v;
        symmetrize(&mut cov);
        for j in 0..cov.nrows() {
            if cov[(j, j)] < 0.0 {
                cov[(j, j)] = 0.0;
            }
        }
        let avg_variance = if cov.nrows() == 0 { 0.0 } else { cov.diagonal().mean() };
        Ok(AuxPosterior {
            dataset_id: self.dataset_id.clone(),
            mean,
            cov,
            avg_variance,
            offset: self.offset,
            scale: self.scale,
        })
    }
}

pub fn predict_aux(model: &AuxGpModel, test_points: &[Location]) -> Result<AuxPosterior> {
    model.predict(test_points)
}

/// Fits every auxiliary dataset independently (in parallel) and predicts at
/// the fine centroids. Output order follows input order; every dataset uses
/// the same seed, so results do not depend on scheduling.
pub fn fit_all_aux(
    datasets: &[ArealDataset],
    fine_points: &[Location],
    transform: &CoordTransform,
    opts: &GpFitOptions,
) -> Result<Vec<(AuxGpModel, AuxPosterior)>> {
    let test_points = transform.apply_all(fine_points);
    let results: Vec<Result<(AuxGpModel, AuxPosterior)>> = datasets
        .par_iter()
        .map(|d| {
            let model = fit_aux_gp(d, transform, opts)?;
            let post = model.predict(&test_points).map_err(|e| Error::Fit {
                dataset: d.id.clone(),
                source: Box::new(e),
            })?;
            Ok((model, post))
        })
        .collect();
    let mut ok = Vec::with_capacity(results.len());
    let mut errs = Vec::new();
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => errs.push(e),
        }
    }
    if errs.is_empty() {
        Ok(ok)
    } else {
        Err(Error::Multiple(errs))
    }
}
