use nalgebra::DMatrix;

use super::{gaussian_loglik, robust_covariance, Method, SardFit};
use crate::design::SardDesign;
use crate::error::Result;
use crate::linalg::least_squares;

/// Least squares on `[1, y, x_j…]` (naive) or `[1, y, x_j…, M_j Δτy…]`.
pub fn fit_ols(design: &SardDesign, naive: bool) -> Result<SardFit> {
    let exog = design.exogenous();
    let p_exog = exog.ncols();
    let (x, names) = if naive {
        (exog, design.exogenous_names())
    } else {
        let endog = design.endogenous();
        let mut x = DMatrix::zeros(design.len(), p_exog + endog.ncols());
        x.columns_mut(0, p_exog).copy_from(&exog);
        x.columns_mut(p_exog, endog.ncols()).copy_from(&endog);
        let mut names = design.exogenous_names();
        names.extend(design.endogenous_names());
        (x, names)
    };
    let n = x.nrows();
    let p = x.ncols();
    let ls = least_squares(&x, &design.dy)?;
    let sse = ls.residuals.norm_squared();
    let s2 = sse / (n - p).max(1) as f64;
    let beta = ls.beta.as_slice();
    let tilde = design.tilde_from(&beta[..p_exog], &beta[p_exog..]);
    Ok(SardFit {
        method: if naive { Method::OlsNaive } else { Method::Ols },
        names,
        tilde,
        lambda: None,
        sigma2: sse / n as f64,
        covariance: &ls.xtx_inv * s2,
        robust_covariance: Some(robust_covariance(&x, &ls.xtx_inv, &ls.residuals)),
        log_likelihood: gaussian_loglik(sse, n),
        n_params: p + 1,
        innovations: ls.residuals.clone(),
        residuals: ls.residuals,
        coefficients: ls.beta,
        first_stage_f: Vec::new(),
        warnings: Vec::new(),
        iterations: 0,
        converged: true,
        trace: Vec::new(),
    })
}
