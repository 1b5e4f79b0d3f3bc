//! Second inference step: the target GP whose mean is a linear combination
//! of the auxiliary posteriors, observed only through the aggregation
//! operator. Fine-level latent values and auxiliary fields are integrated
//! out analytically, leaving a Gaussian over the coarse observations with
//! covariance
//!
//! ```text
//! Lambda = sigma² I + H Omega Hᵀ,   Omega = K + sum_s w_s² Sigma*_s
//! ```
//!
//! Parameters live in the units of the target data. Fitting standardizes the
//! target internally and maps the optimum back.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{AggregationMap, Location};
use crate::gp_aux::{AuxPosterior, DEFAULT_NOISE_FLOOR};
use crate::kernel::{
    gram_matrix, median_pairwise_distance, sq_dist_matrix, CoordTransform, SEKernelParams, DEFAULT_JITTER,
};
use crate::numerics::{
    add_diagonal, bfgs_minimize, cholesky, min_norm_lstsq, symmetrize, BfgsOptions, CholeskyFactor, StopReason,
};

pub const BIAS_COLUMN: &str = "bias";
const RESTART_SPREAD: f64 = 0.5;

/// Auxiliary posterior means at the fine centroids, one column per
/// auxiliary, followed by a column of ones for the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub column_ids: Vec<String>,
    pub matrix: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn n_aux(&self) -> usize {
        self.matrix.ncols() - 1
    }

    pub fn n_fine(&self) -> usize {
        self.matrix.nrows()
    }
}

pub fn build_design(posteriors: &[AuxPosterior], n_fine: usize) -> Result<DesignMatrix> {
    if let Some(p) = posteriors.iter().find(|p| p.len() != n_fine) {
        return Err(Error::Shape(format!(
            "posterior `{}` has {} fine values, expected {n_fine}",
            p.dataset_id,
            p.len()
        )));
    }
    if let Some(p) = posteriors.iter().find(|p| p.mean.iter().any(|v| !v.is_finite())) {
        return Err(Error::Validation(format!(
            "posterior `{}` has non-finite means",
            p.dataset_id
        )));
    }
    let s = posteriors.len();
    let matrix = DMatrix::from_fn(n_fine, s + 1, |j, c| if c < s { posteriors[c].mean[j] } else { 1.0 });
    let mut column_ids: Vec<String> = posteriors.iter().map(|p| p.dataset_id.clone()).collect();
    column_ids.push(BIAS_COLUMN.to_string());
    Ok(DesignMatrix { column_ids, matrix })
}

/// Regression weights (bias last, matching the design columns), target
/// kernel and observation noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownscaleParams {
    pub w: Vec<f64>,
    pub kernel: SEKernelParams,
    pub noise_sigma: f64,
}

impl DownscaleParams {
    pub fn bias(&self) -> f64 {
        *self.w.last().expect("w includes the bias")
    }

    pub fn aux_weights(&self) -> &[f64] {
        &self.w[..self.w.len() - 1]
    }

    /// `(w..., log alpha, log gamma, log sigma)`, the optimizer's coordinates.
    pub fn to_vector(&self) -> DVector<f64> {
        let mut v: Vec<f64> = self.w.clone();
        v.extend([self.kernel.log_alpha(), self.kernel.log_gamma(), self.noise_sigma.ln()]);
        DVector::from_vec(v)
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        let n = v.len();
        DownscaleParams {
            w: v.as_slice()[..n - 3].to_vec(),
            kernel: SEKernelParams::from_log(v[n - 3], v[n - 2]),
            noise_sigma: v[n - 1].exp(),
        }
    }

    fn validate(&self, n_cols: usize) -> Result<()> {
        if self.w.len() != n_cols {
            return Err(Error::Shape(format!(
                "{} weights for {n_cols} design columns",
                self.w.len()
            )));
        }
        let finite = self.w.iter().all(|v| v.is_finite())
            && self.kernel.alpha.is_finite()
            && self.kernel.gamma.is_finite()
            && self.kernel.gamma > 0.0
            && self.noise_sigma.is_finite();
        if !finite || !(self.noise_sigma > 0.0) {
            return Err(Error::Validation(format!("invalid downscaling parameters {self:?}")));
        }
        Ok(())
    }
}

/// `Omega`, `Lambda` (jitter included) and the Cholesky factor of `Lambda`.
#[derive(Debug, Clone)]
pub struct LambdaAssembly {
    pub omega: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub factor: CholeskyFactor,
}

/// Fine-level predictive distribution of the target.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub region_ids: Vec<String>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub params: DownscaleParams,
    pub log_marginal: f64,
}

impl Refinement {
    pub fn variance(&self) -> DVector<f64> {
        self.cov.diagonal()
    }
}

/// Everything the marginal likelihood needs that does not depend on the
/// parameters: design, posterior covariances, `H`, and cached products.
#[derive(Debug, Clone)]
pub struct DownscaleProblem {
    design: DesignMatrix,
    aux_covs: Vec<DMatrix<f64>>,
    h: DMatrix<f64>,
    fine_points: Vec<Location>,
    jitter: f64,
    /// `H F̄`
    hf: DMatrix<f64>,
    /// `H Sigma*_s Hᵀ`
    h_sigma_ht: Vec<DMatrix<f64>>,
    sq_dists: DMatrix<f64>,
}

impl DownscaleProblem {
    /// `fine_points` must already be in the coordinates the kernel sees.
    pub fn new(posteriors: &[AuxPosterior], h: DMatrix<f64>, fine_points: Vec<Location>, jitter: f64) -> Result<Self> {
        let n_f = fine_points.len();
        if h.ncols() != n_f {
            return Err(Error::Shape(format!(
                "aggregation matrix has {} columns for {n_f} fine regions",
                h.ncols()
            )));
        }
        if h.nrows() == 0 {
            return Err(Error::Validation("no coarse observations".into()));
        }
        let design = build_design(posteriors, n_f)?;
        let aux_covs: Vec<DMatrix<f64>> = posteriors.iter().map(|p| p.cov.clone()).collect();
        if let Some(p) = posteriors.iter().find(|p| p.cov.shape() != (n_f, n_f)) {
            return Err(Error::Shape(format!(
                "posterior `{}` covariance has the wrong shape",
                p.dataset_id
            )));
        }
        let hf = &h * &design.matrix;
        let ht = h.transpose();
        let h_sigma_ht = aux_covs.iter().map(|c| &h * c * &ht).collect();
        let sq_dists = sq_dist_matrix(&fine_points);
        Ok(DownscaleProblem {
            design,
            aux_covs,
            h,
            fine_points,
            jitter,
            hf,
            h_sigma_ht,
            sq_dists,
        })
    }

    pub fn from_map(
        posteriors: &[AuxPosterior],
        map: &AggregationMap,
        transform: &CoordTransform,
        jitter: f64,
    ) -> Result<Self> {
        let pts = transform.apply_all(&map.fine().centroids());
        DownscaleProblem::new(posteriors, map.matrix().clone(), pts, jitter)
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn n_coarse(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_fine(&self) -> usize {
        self.h.ncols()
    }

    pub fn aggregation(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn check_target(&self, a: &DVector<f64>) -> Result<()> {
        if a.len() != self.n_coarse() {
            return Err(Error::Shape(format!(
                "{} coarse values for {} coarse regions",
                a.len(),
                self.n_coarse()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("coarse values must be finite".into()));
        }
        Ok(())
    }

    fn lambda_jitter(&self, p: &DownscaleParams) -> f64 {
        self.jitter * (p.noise_sigma.powi(2) + p.kernel.variance())
    }

    pub fn omega(&self, params: &DownscaleParams) -> DMatrix<f64> {
        let pts = &self.fine_points;
        let mut omega = gram_matrix(&params.kernel, pts);
        for (w, c) in params.aux_weights().iter().zip(&self.aux_covs) {
            if *w != 0.0 {
                omega += c * (w * w);
            }
        }
        omega
    }

    pub fn assemble_lambda(&self, params: &DownscaleParams) -> Result<LambdaAssembly> {
        params.validate(self.design.matrix.ncols())?;
        let omega = self.omega(params);
        let mut lambda = &self.h * &omega * self.h.transpose();
        symmetrize(&mut lambda);
        add_diagonal(&mut lambda, params.noise_sigma.powi(2) + self.lambda_jitter(params));
        let factor = factor_lambda(&lambda)?;
        Ok(LambdaAssembly { omega, lambda, factor })
    }

    /// `log N(a | H F̄ w, Lambda)`.
    pub fn log_marginal(&self, params: &DownscaleParams, a: &DVector<f64>) -> Result<f64> {
        self.check_target(a)?;
        let asm = self.assemble_lambda(params)?;
        let r = a - &self.hf * DVector::from_column_slice(&params.w);
        let p = asm.factor.solve_vec(&r)?;
        let n = a.len() as f64;
        Ok(-0.5 * r.dot(&p) - 0.5 * asm.factor.log_det() - 0.5 * n * (2.0 * PI).ln())
    }

    /// Log marginal and its gradient over `(w..., log alpha, log gamma, log sigma)`.
    pub fn log_marginal_and_grad(&self, params: &DownscaleParams, a: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.check_target(a)?;
        params.validate(self.design.matrix.ncols())?;
        let n_c = self.n_coarse();
        let s_count = self.design.n_aux();
        let (alpha2, gamma2, sigma2) = (
            params.kernel.variance(),
            params.kernel.gamma.powi(2),
            params.noise_sigma.powi(2),
        );

        let corr = self.sq_dists.map(|d| (-0.5 * d / gamma2).exp());
        let corr_d2 = corr.component_mul(&self.sq_dists);
        let ht = self.h.transpose();
        let hrh = &self.h * &corr * &ht;
        let hrdh = &self.h * &corr_d2 * &ht;

        let mut lambda = &hrh * alpha2;
        for (w, hs) in params.aux_weights().iter().zip(&self.h_sigma_ht) {
            lambda += hs * (w * w);
        }
        symmetrize(&mut lambda);
        add_diagonal(&mut lambda, sigma2 + self.lambda_jitter(params));
        let factor = factor_lambda(&lambda)?;

        let r = a - &self.hf * DVector::from_column_slice(&params.w);
        let p = factor.solve_vec(&r)?;
        let value = -0.5 * r.dot(&p) - 0.5 * factor.log_det() - 0.5 * n_c as f64 * (2.0 * PI).ln();

        // dL/dtheta = (dmean/dtheta)ᵀ p + 1/2 tr((p pᵀ - Lambda⁻¹) dLambda/dtheta)
        let q = &p * p.transpose() - factor.inverse();
        let tr = |m: &DMatrix<f64>| q.component_mul(m).sum();
        let mut g = DVector::zeros(s_count + 4);
        for s in 0..=s_count {
            g[s] = self.hf.column(s).dot(&p);
        }
        for (s, hs) in self.h_sigma_ht.iter().enumerate() {
            g[s] += params.w[s] * tr(hs);
        }
        let trace_q = q.trace();
        g[s_count + 1] = alpha2 * (tr(&hrh) + self.jitter * trace_q);
        g[s_count + 2] = 0.5 * alpha2 * tr(&hrdh) / gamma2;
        g[s_count + 3] = sigma2 * (1.0 + self.jitter) * trace_q;
        Ok((value, g))
    }

    /// Fine-level predictive mean and covariance given `a`.
    pub fn predict_fine(&self, params: &DownscaleParams, a: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check_target(a)?;
        let asm = self.assemble_lambda(params)?;
        let prior_mean = &self.design.matrix * DVector::from_column_slice(&params.w);
        let r = a - &self.h * &prior_mean;
        let b = &asm.omega * self.h.transpose();
        let mean = &prior_mean + &b * asm.factor.solve_vec(&r)?;
        let v = asm.factor.solve_lower(&b.transpose());
        let mut cov = asm.omega - v.transpose() * v;
        symmetrize(&mut cov);
        for j in 0..cov.nrows() {
            cov[(j, j)] = cov[(j, j)].max(0.0);
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                point: params.to_vector().iter().copied().collect(),
            });
        }
        Ok((mean, cov))
    }

    /// Minimum-norm least-squares weights of `a` on `H F̄`.
    fn least_squares_start(&self, a: &DVector<f64>) -> Result<DVector<f64>> {
        min_norm_lstsq(&self.hf, a)
    }
}

fn factor_lambda(lambda: &DMatrix<f64>) -> Result<CholeskyFactor> {
    cholesky(lambda).map_err(|e| match e {
        Error::NotPositiveDefinite { .. } => Error::Indefinite {
            what: "coarse covariance".into(),
            min_eigenvalue: lambda.clone().symmetric_eigenvalues().min(),
        },
        other => other,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DownscaleOptions {
    pub restarts: usize,
    pub seed: u64,
    /// L2 penalty on the auxiliary weights (bias excluded), in
    /// standardized target units.
    pub ridge: f64,
    pub jitter: f64,
    pub noise_floor: f64,
    pub bfgs: BfgsOptions,
}

impl Default for DownscaleOptions {
    fn default() -> Self {
        DownscaleOptions {
            restarts: 5,
            seed: 0,
            ridge: 0.0,
            jitter: DEFAULT_JITTER,
            noise_floor: DEFAULT_NOISE_FLOOR,
            bfgs: BfgsOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Log marginal likelihood at the optimum, target units.
    pub log_marginal: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub gradient_norm: f64,
    pub restarts_succeeded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownscaleFit {
    pub params: DownscaleParams,
    pub diagnostics: FitDiagnostics,
}

fn standardize(a: &DVector<f64>) -> (f64, f64) {
    let n = a.len() as f64;
    let mean = a.mean();
    let var = if a.len() > 1 {
        a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let sd = var.sqrt();
    (mean, if sd > 1e-12 * (1.0 + mean.abs()) { sd } else { 1.0 })
}

/// Maximizes the log marginal likelihood over `(w, log alpha, log gamma,
/// log sigma)`, starting from the least-squares weights.
pub fn fit_downscale(problem: &DownscaleProblem, a: &DVector<f64>, opts: &DownscaleOptions) -> Result<DownscaleFit> {
    problem.check_target(a)?;
    let (offset, scale) = standardize(a);
    let a_std = a.map(|v| (v - offset) / scale);
    let n_w = problem.design.matrix.ncols();

    let w0 = problem.least_squares_start(&a_std)?;
    let resid = &a_std - &problem.hf * &w0;
    let resid_var = resid.norm_squared() / resid.len() as f64;
    let alpha0 = resid_var.max(1e-2).sqrt();
    let sigma0 = (0.1 * alpha0).max(10.0 * opts.noise_floor);
    let gamma0 = median_pairwise_distance(&problem.fine_points);

    let mut start0 = w0.as_slice().to_vec();
    start0.extend([alpha0.ln(), gamma0.ln(), sigma0.ln()]);
    let start0 = DVector::from_vec(start0);

    let ridge = opts.ridge;
    let objective = |x: &DVector<f64>| -> (f64, DVector<f64>) {
        let fail = (f64::INFINITY, DVector::from_element(x.len(), f64::NAN));
        if !(x[n_w + 2].exp() >= opts.noise_floor) {
            return fail;
        }
        let params = DownscaleParams::from_vector(x);
        match problem.log_marginal_and_grad(&params, &a_std) {
            Ok((v, g)) if v.is_finite() => {
                let mut f = -v;
                let mut grad = -g;
                for s in 0..n_w - 1 {
                    f += ridge * x[s] * x[s];
                    grad[s] += 2.0 * ridge * x[s];
                }
                (f, grad)
            }
            _ => fail,
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let normal = Normal::new(0.0, RESTART_SPREAD).expect("valid spread");
    let mut best: Option<crate::numerics::OptimizeResult> = None;
    let mut succeeded = 0;
    let mut failures = Vec::new();
    for restart in 0..opts.restarts.max(1) {
        let mut start = start0.clone();
        if restart > 0 {
            for k in n_w..n_w + 3 {
                start[k] += normal.sample(&mut rng);
            }
        }
        match bfgs_minimize(objective, &start, &opts.bfgs) {
            Ok(r) => {
                succeeded += 1;
                if best.as_ref().is_none_or(|b| r.objective < b.objective) {
                    best = Some(r);
                }
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    let Some(best) = best else {
        return Err(Error::Optimization(format!(
            "all restarts failed: {}",
            failures.join("; ")
        )));
    };

    let std_params = DownscaleParams::from_vector(&best.argmin);
    let mut w: Vec<f64> = std_params.w.iter().map(|v| v * scale).collect();
    w[n_w - 1] += offset;
    let params = DownscaleParams {
        w,
        kernel: SEKernelParams::from_log(
            std_params.kernel.log_alpha() + scale.ln(),
            std_params.kernel.log_gamma(),
        ),
        noise_sigma: std_params.noise_sigma * scale,
    };
    let log_marginal = problem.log_marginal(&params, a)?;
    Ok(DownscaleFit {
        params,
        diagnostics: FitDiagnostics {
            log_marginal,
            iterations: best.iterations,
            converged: best.converged,
            stop: best.stop,
            gradient_norm: best.gradient_norm,
            restarts_succeeded: succeeded,
        },
    })
}

/// Serialized form of a fitted downscaling model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownscaleModelRecord {
    pub weights: Vec<WeightEntry>,
    pub log_alpha: f64,
    pub log_gamma: f64,
    pub log_sigma: f64,
    pub jitter: f64,
    pub coordinate_transform: CoordTransform,
    pub diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub column: String,
    pub weight: f64,
}

impl DownscaleModelRecord {
    pub fn new(design: &DesignMatrix, fit: &DownscaleFit, transform: CoordTransform, jitter: f64) -> Self {
        DownscaleModelRecord {
            weights: design
                .column_ids
                .iter()
                .zip(&fit.params.w)
                .map(|(c, w)| WeightEntry {
                    column: c.clone(),
                    weight: *w,
                })
                .collect(),
            log_alpha: fit.params.kernel.log_alpha(),
            log_gamma: fit.params.kernel.log_gamma(),
            log_sigma: fit.params.noise_sigma.ln(),
            jitter,
            coordinate_transform: transform,
            diagnostics: fit.diagnostics.clone(),
        }
    }

    pub fn params(&self) -> DownscaleParams {
        DownscaleParams {
            w: self.weights.iter().map(|e| e.weight).collect(),
            kernel: SEKernelParams::from_log(self.log_alpha, self.log_gamma),
            noise_sigma: self.log_sigma.exp(),
        }
    }
}
