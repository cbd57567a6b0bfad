//! Dense helpers: LU-based log-determinants and inverses, symmetric
//! spectra, and a rank-revealing least-squares solve.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SardError};

pub fn to_faer(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn from_faer(m: faer::MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Partial-pivoting LU of a square matrix.
pub struct Lu {
    lu: faer::linalg::solvers::PartialPivLu<f64>,
    n: usize,
}

impl Lu {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(SardError::DimensionMismatch {
                what: "LU operand",
                got: m.ncols(),
                expected: m.nrows(),
            });
        }
        Ok(Self {
            lu: to_faer(m).partial_piv_lu(),
            n: m.nrows(),
        })
    }

    /// `log |det|`; `-inf` when an exact zero pivot appears.
    pub fn log_abs_det(&self) -> f64 {
        let u = self.lu.U();
        (0..self.n).map(|i| u[(i, i)].abs().ln()).sum()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        from_faer(self.lu.inverse().as_ref())
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        DVector::from_fn(b.len(), |i, _| x[(i, 0)])
    }
}

/// Eigenvalues of a symmetric matrix in nondecreasing order.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    to_faer(m)
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| SardError::Numerical(format!("eigenvalue solver failed: {e:?}")))
}

#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub beta: DVector<f64>,
    pub residuals: DVector<f64>,
    /// `(X'X)^{-1}`.
    pub xtx_inv: DMatrix<f64>,
}

/// Relative threshold on the diagonal of `R` (after column equilibration)
/// below which a design is declared rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// OLS via QR of the column-equilibrated design.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LeastSquares> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(SardError::DimensionMismatch {
            what: "response",
            got: y.len(),
            expected: n,
        });
    }
    if n < p {
        return Err(SardError::RankDeficient(format!("{p} regressors for {n} observations")));
    }
    let norms: Vec<f64> = (0..p).map(|j| x.column(j).norm()).collect();
    if let Some(j) = norms.iter().position(|&v| v == 0.0 || !v.is_finite()) {
        return Err(SardError::RankDeficient(format!("column {j} is zero or non-finite")));
    }
    let mut xs = x.clone();
    for (j, s) in norms.iter().enumerate() {
        xs.column_mut(j).unscale_mut(*s);
    }
    let qr = xs.qr();
    let r = qr.r();
    let rmax = r.diagonal().amax();
    if let Some(j) = (0..p).find(|&j| r[(j, j)].abs() <= RANK_TOL * rmax) {
        return Err(SardError::RankDeficient(format!("column {j} is (nearly) collinear with the others")));
    }
    let qty = qr.q().transpose() * y;
    let bs = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| SardError::RankDeficient("singular R".into()))?;
    let rinv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| SardError::RankDeficient("singular R".into()))?;
    let mut xtx_inv = &rinv * rinv.transpose();
    let beta = DVector::from_fn(p, |j, _| bs[j] / norms[j]);
    for i in 0..p {
        for j in 0..p {
            xtx_inv[(i, j)] /= norms[i] * norms[j];
        }
    }
    let residuals = y - x * &beta;
    Ok(LeastSquares {
        beta,
        residuals,
        xtx_inv,
    })
}

/// Restarted GMRES for `A x = b` with `A` given as a closure. Returns the
/// solution once the residual norm drops below `tol · ‖b‖`.
pub fn gmres<F>(apply: F, b: &DVector<f64>, restart: usize, tol: f64, max_iter: usize) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = b.len();
    let bnorm = b.norm();
    let mut x = DVector::zeros(n);
    if bnorm == 0.0 {
        return Ok(x);
    }
    let m = restart.clamp(1, n.max(1));
    let mut total = 0;
    while total < max_iter {
        let r = b - apply(&x);
        let beta = r.norm();
        if beta <= tol * bnorm {
            return Ok(x);
        }
        let mut v: Vec<DVector<f64>> = vec![r / beta];
        let mut h = DMatrix::<f64>::zeros(m + 1, m);
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = DVector::<f64>::zeros(m + 1);
        g[0] = beta;
        let mut k = 0;
        while k < m && total < max_iter {
            let mut w = apply(&v[k]);
            for (i, vi) in v.iter().enumerate() {
                h[(i, k)] = w.dot(vi);
                w.axpy(-h[(i, k)], vi, 1.0);
            }
            h[(k + 1, k)] = w.norm();
            for i in 0..k {
                let t = cs[i] * h[(i, k)] + sn[i] * h[(i + 1, k)];
                h[(i + 1, k)] = -sn[i] * h[(i, k)] + cs[i] * h[(i + 1, k)];
                h[(i, k)] = t;
            }
            let d = h[(k, k)].hypot(h[(k + 1, k)]);
            if d == 0.0 {
                break;
            }
            cs[k] = h[(k, k)] / d;
            sn[k] = h[(k + 1, k)] / d;
            h[(k, k)] = d;
            h[(k + 1, k)] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            let breakdown = w.norm() <= 1e-300;
            if !breakdown {
                let nw = w.norm();
                v.push(w / nw);
            }
            k += 1;
            total += 1;
            if g[k].abs() <= tol * bnorm || breakdown {
                break;
            }
        }
        // back substitution on the k×k triangle
        let mut yk = DVector::<f64>::zeros(k);
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|j| h[(i, j)] * yk[j]).sum();
            yk[i] = (g[i] - s) / h[(i, i)];
        }
        for (i, yi) in yk.iter().enumerate() {
            x.axpy(*yi, &v[i], 1.0);
        }
        if g[k.min(m)].abs() <= tol * bnorm {
            return Ok(x);
        }
    }
    let r = (b - apply(&x)).norm();
    if r <= tol * bnorm {
        Ok(x)
    } else {
        Err(SardError::Numerical(format!("GMRES stalled at relative residual {:e}", r / bnorm)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gmres_solves_nonsymmetric_system() {
        let n = 40;
        let a = DMatrix::from_fn(n, n, |i, j| if i == j { 4.0 } else { ((i * 7 + j * 3) % 5) as f64 * 0.05 - 0.1 });
        let b = DVector::from_fn(n, |i, _| (i as f64).sin());
        let x = gmres(|v| &a * v, &b, 10, 1e-12, 500).unwrap();
        assert!((&a * &x - &b).norm() < 1e-10);
        assert_eq!(gmres(|v| &a * v, &DVector::zeros(n), 10, 1e-12, 5).unwrap(), DVector::zeros(n));
    }

    #[test]
    fn lu_logdet_and_inverse() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, -3.0, 1.0, 0.0, 2.0, 5.0]);
        let lu = Lu::new(&m).unwrap();
        let det = m.clone().determinant();
        assert!((lu.log_abs_det() - det.abs().ln()).abs() < 1e-12);
        assert!((&m * lu.inverse() - DMatrix::identity(3, 3)).amax() < 1e-12);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!((&m * lu.solve(&b) - b).amax() < 1e-12);
    }

    #[test]
    fn eigenvalues_sorted() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let e = symmetric_eigenvalues(&m).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-12 && (e[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn exact_fit_and_rank_detection() {
        let x = DMatrix::from_fn(20, 3, |i, j| ((i + 1) as f64).powi(j as i32));
        let beta = DVector::from_vec(vec![1.5, -2.0, 0.25]);
        let ls = least_squares(&x, &(&x * &beta)).unwrap();
        assert!((ls.beta - beta).amax() < 1e-10);
        let mut bad = x.clone();
        let c = bad.column(1) * 2.0;
        bad.set_column(2, &c);
        assert!(matches!(least_squares(&bad, &DVector::zeros(20)), Err(SardError::RankDeficient(_))));
    }
}
