use nalgebra::{DMatrix, DVector};

use super::{gaussian_loglik, robust_covariance, Method, SardFit};
use crate::design::SardDesign;
use crate::error::{Result, SardError};
use crate::linalg::least_squares;

/// Columns whose component orthogonal to the previously kept ones is
/// below this fraction of their norm are dropped.
const PRUNE_TOL: f64 = 1e-8;

/// Instruments `[X, M_S²X, M_A²X, M_R²X, M_D²X]` for the active terms.
pub fn instrument_matrix(design: &SardDesign) -> DMatrix<f64> {
    let x = design.exogenous();
    let (n, p) = x.shape();
    let terms = design.terms();
    let mut z = DMatrix::zeros(n, p * (1 + terms.len()));
    z.columns_mut(0, p).copy_from(&x);
    let maps = design.maps();
    for (k, &t) in terms.iter().enumerate() {
        for j in 0..p {
            let col = x.column(j).into_owned();
            z.set_column(p * (k + 1) + j, &maps.apply(t, &maps.apply(t, &col)));
        }
    }
    z
}

/// Orthonormal basis of the column space, in column order, dropping
/// dependent columns (two passes of modified Gram–Schmidt).
fn orthonormal_basis(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut kept: Vec<DVector<f64>> = Vec::new();
    for j in 0..z.ncols() {
        let mut v = z.column(j).into_owned();
        let norm0 = v.norm();
        if norm0 == 0.0 || !norm0.is_finite() {
            continue;
        }
        for _ in 0..2 {
            for q in &kept {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let nv = v.norm();
        if nv > PRUNE_TOL * norm0 {
            kept.push(v / nv);
        }
    }
    DMatrix::from_columns(&kept)
}

#[derive(Debug, Clone)]
pub struct IvResult {
    pub beta: DVector<f64>,
    pub residuals: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub robust_covariance: DMatrix<f64>,
    pub first_stage_f: Vec<f64>,
    pub instrument_rank: usize,
}

/// 2SLS of `y` on `[X, E]` with instruments `Z` (which should contain `X`).
pub fn two_stage_least_squares(y: &DVector<f64>, x: &DMatrix<f64>, e: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<IvResult> {
    let n = y.len();
    let (p, k) = (x.ncols(), e.ncols());
    let q = orthonormal_basis(z);
    let r = q.ncols();
    if r < p + k {
        return Err(SardError::RankDeficient(format!(
            "{r} independent instruments for {} regressors",
            p + k
        )));
    }
    let proj = |m: &DMatrix<f64>| &q * (q.transpose() * m);
    let mut full = DMatrix::zeros(n, p + k);
    full.columns_mut(0, p).copy_from(x);
    full.columns_mut(p, k).copy_from(e);
    let mut xhat = full.clone();
    xhat.columns_mut(p, k).copy_from(&proj(e));
    let ls = least_squares(&xhat, y)?;
    let residuals = y - &full * &ls.beta;
    let s2 = residuals.norm_squared() / (n - p - k).max(1) as f64;

    // first stage: excluded instruments' joint significance per endogenous column
    let qx = orthonormal_basis(x);
    let first_stage_f = (0..k)
        .map(|j| {
            let ej = e.column(j).into_owned();
            let ssr_u = (&ej - &q * (q.transpose() * &ej)).norm_squared();
            let ssr_r = (&ej - &qx * (qx.transpose() * &ej)).norm_squared();
            let df1 = (r - qx.ncols()).max(1) as f64;
            let df2 = (n - r).max(1) as f64;
            ((ssr_r - ssr_u) / df1) / (ssr_u / df2)
        })
        .collect();
    Ok(IvResult {
        robust_covariance: robust_covariance(&xhat, &ls.xtx_inv, &residuals),
        covariance: &ls.xtx_inv * s2,
        beta: ls.beta,
        residuals,
        first_stage_f,
        instrument_rank: r,
    })
}

/// Two-stage least squares with the `M_j Δτy` regressors instrumented by
/// squared-correction images of the exogenous block.
pub fn fit_iv(design: &SardDesign) -> Result<SardFit> {
    let x = design.exogenous();
    let e = design.endogenous();
    let z = instrument_matrix(design);
    let iv = two_stage_least_squares(&design.dy, &x, &e, &z)?;
    let n = design.len();
    let p = x.ncols();
    let mut names = design.exogenous_names();
    names.extend(design.endogenous_names());
    let warnings = iv
        .first_stage_f
        .iter()
        .zip(design.endogenous_names())
        .filter(|(f, _)| **f < 10.0)
        .map(|(f, name)| format!("weak instruments for {name}: first-stage F = {f:.2}"))
        .collect();
    let sse = iv.residuals.norm_squared();
    let beta = iv.beta.as_slice();
    Ok(SardFit {
        method: Method::Iv,
        names,
        tilde: design.tilde_from(&beta[..p], &beta[p..]),
        lambda: None,
        sigma2: sse / n as f64,
        covariance: iv.covariance,
        robust_covariance: Some(iv.robust_covariance),
        log_likelihood: gaussian_loglik(sse, n),
        n_params: iv.beta.len() + 1,
        innovations: iv.residuals.clone(),
        residuals: iv.residuals,
        coefficients: iv.beta,
        first_stage_f: iv.first_stage_f,
        warnings,
        iterations: 0,
        converged: true,
        trace: Vec::new(),
    })
}
