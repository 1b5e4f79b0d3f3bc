//! Dense BFGS with a backtracking Armijo line search.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BfgsOptions {
    /// Stop when the infinity norm of the gradient drops to this value.
    pub gtol: f64,
    /// Secondary stop on relative objective change between iterations.
    pub ftol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            gtol: 1e-6,
            ftol: 1e-10,
            max_iter: 500,
            c1: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    ObjectiveTolerance,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub argmin: DVector<f64>,
    pub objective: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
}

/// Minimizes `f`, which returns the objective and its gradient.
///
/// An infinite objective at a trial point is treated as a rejected step, so
/// callers may use `+inf` as a barrier. A NaN objective, or a non-finite
/// gradient at an accepted point, is an error.
pub fn bfgs_minimize<F>(mut f: F, x0: &DVector<f64>, opts: &BfgsOptions) -> Result<OptimizeResult>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let mut x = x0.clone();
    let (mut fx, mut g) = f(&x);
    check_point(&x, fx, &g)?;

    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut fresh_hessian = true;
    let mut iterations = 0;

    let stop = loop {
        if inf_norm(&g) <= opts.gtol {
            break StopReason::GradientTolerance;
        }
        if iterations >= opts.max_iter {
            break StopReason::MaxIterations;
        }

        let mut dir = -(&h_inv * &g);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            h_inv.fill_with_identity();
            fresh_hessian = true;
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        if fresh_hessian {
            // keep the first steepest-descent trial step at unit length
            let len = dir.norm();
            if len > 1.0 {
                dir /= len;
                slope /= len;
            }
        }

        let Some((x_new, f_new, g_new)) = line_search(&mut f, &x, fx, &dir, slope, opts)? else {
            if fresh_hessian {
                break StopReason::LineSearchFailed;
            }
            h_inv.fill_with_identity();
            fresh_hessian = true;
            continue;
        };
        iterations += 1;

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-10 * s.norm() * y.norm() {
            if fresh_hessian {
                // Nocedal & Wright scaling of the initial inverse Hessian
                h_inv *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (H y sᵀ + s yᵀ H) + (rho² yᵀHy + rho) s sᵀ
            h_inv -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h_inv += (&s * s.transpose()) * (rho * rho * yhy + rho);
            fresh_hessian = false;
        }

        let f_change = (fx - f_new).abs();
        x = x_new;
        g = g_new;
        let f_old = fx;
        fx = f_new;
        if inf_norm(&g) <= opts.gtol {
            break StopReason::GradientTolerance;
        }
        if f_change <= opts.ftol * f_old.abs().max(fx.abs()).max(1.0) {
            break StopReason::ObjectiveTolerance;
        }
    };

    let gradient_norm = inf_norm(&g);
    Ok(OptimizeResult {
        argmin: x,
        objective: fx,
        gradient_norm,
        iterations,
        converged: stop == StopReason::GradientTolerance,
        stop,
    })
}

type Accepted = (DVector<f64>, f64, DVector<f64>);

fn line_search<F>(
    f: &mut F,
    x: &DVector<f64>,
    fx: f64,
    dir: &DVector<f64>,
    slope: f64,
    opts: &BfgsOptions,
) -> Result<Option<Accepted>>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let mut t = 1.0;
    for _ in 0..=opts.max_backtracks {
        let trial = x + dir * t;
        let (ft, gt) = f(&trial);
        if ft.is_nan() {
            return Err(Error::NonFinite {
                point: trial.iter().copied().collect(),
            });
        }
        if ft.is_finite() && ft <= fx + opts.c1 * t * slope {
            check_point(&trial, ft, &gt)?;
            return Ok(Some((trial, ft, gt)));
        }
        t *= opts.backtrack_factor;
    }
    Ok(None)
}

fn check_point(x: &DVector<f64>, fx: f64, g: &DVector<f64>) -> Result<()> {
    if fx.is_finite() && g.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            point: x.iter().copied().collect(),
        })
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Largest per-coordinate discrepancy between the analytic gradient and a
/// central finite difference with step `h`, relative to `max(1, |numeric|)`.
pub fn grad_check<F>(mut f: F, x: &DVector<f64>, h: f64) -> f64
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let (_, analytic) = f(x);
    let mut worst = 0.0f64;
    for k in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        let numeric = (f(&xp).0 - f(&xm).0) / (2.0 * h);
        let err = (analytic[k] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}
