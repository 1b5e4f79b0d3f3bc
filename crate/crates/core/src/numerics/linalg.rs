use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = M`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    l: DMatrix<f64>,
}

/// Factorizes a symmetric positive-definite matrix. The caller is
/// responsible for any diagonal jitter.
///
/// A non-positive pivot is reported with its 1-based position.
pub fn cholesky(m: &DMatrix<f64>) -> Result<CholeskyFactor> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Shape(format!("cholesky of a {}x{} matrix", n, m.ncols())));
    }
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut asym = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric(asym / scale));
    }

    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j + 1, value: d });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(CholeskyFactor { l })
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// `M⁻¹ b` for every column of `b`, via forward then backward substitution.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if b.nrows() != self.dim() {
            return Err(Error::Shape(format!(
                "right-hand side has {} rows, factor is {}x{}",
                b.nrows(),
                self.dim(),
                self.dim()
            )));
        }
        let mut x = b.clone();
        self.solve_in_place(&mut x);
        Ok(x)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.dim() {
            return Err(Error::Shape(format!(
                "right-hand side has length {}, factor is {}x{}",
                b.len(),
                self.dim(),
                self.dim()
            )));
        }
        let mut x = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        self.solve_in_place(&mut x);
        Ok(DVector::from_column_slice(x.as_slice()))
    }

    fn solve_in_place(&self, x: &mut DMatrix<f64>) {
        let n = self.dim();
        let l = &self.l;
        for c in 0..x.ncols() {
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s -= l[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / l[(i, i)];
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in (i + 1)..n {
                    s -= l[(k, i)] * x[(k, c)];
                }
                x[(i, c)] = s / l[(i, i)];
            }
        }
    }

    /// `L⁻¹ b`, i.e. only the forward substitution.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.l
            .solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let mut inv = DMatrix::identity(self.dim(), self.dim());
        self.solve_in_place(&mut inv);
        // exact symmetry for downstream trace products
        let t = inv.transpose();
        (inv + t) * 0.5
    }
}

pub fn log_det(f: &CholeskyFactor) -> f64 {
    f.log_det()
}

/// Adds `value` to every diagonal entry.
pub fn add_diagonal(m: &mut DMatrix<f64>, value: f64) {
    for i in 0..m.nrows().min(m.ncols()) {
        m[(i, i)] += value;
    }
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Minimum-norm least-squares solution of `x b = y` via the SVD; singular
/// values below `max(m, n) * eps * s_max` are treated as zero.
pub fn min_norm_lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!(
            "design has {} rows, response has {}",
            x.nrows(),
            y.len()
        )));
    }
    if x.ncols() == 0 {
        return Ok(DVector::zeros(0));
    }
    if x.nrows() == 0 {
        return Ok(DVector::zeros(x.ncols()));
    }
    let svd = x.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let tol = x.nrows().max(x.ncols()) as f64 * f64::EPSILON * s_max;
    svd.solve(y, tol)
        .map_err(|e| Error::Optimization(format!("least squares: {e}")))
}
