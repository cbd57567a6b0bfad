//! Comparison models: income-lag regressions, SLX, spatial lag and spatial
//! Durbin with inverse-squared-distance weights truncated at `d̄`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::ml::{MlEngine, MlOptions, MlProblem, SpectrumOrMatrices};
use super::{aicc, gaussian_loglik};
use crate::diagnostics::nagelkerke_r2;
use crate::error::{check_len, Result, SardError};
use crate::geometry::{NeighborIndex, SpatialDomain};
use crate::linalg::{least_squares, symmetric_eigenvalues};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineModel {
    IncomeLag,
    AltIncomeLag,
    SIncomeLag,
    Slx,
    SpatialLag,
    SpatialDurbin,
}

impl BaselineModel {
    pub const ALL: [BaselineModel; 6] = [
        BaselineModel::IncomeLag,
        BaselineModel::AltIncomeLag,
        BaselineModel::SIncomeLag,
        BaselineModel::Slx,
        BaselineModel::SpatialLag,
        BaselineModel::SpatialDurbin,
    ];

    pub fn uses_weights(self) -> bool {
        matches!(self, BaselineModel::Slx | BaselineModel::SpatialLag | BaselineModel::SpatialDurbin)
    }
}

impl fmt::Display for BaselineModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineModel::IncomeLag => "INCOME-LAG",
            BaselineModel::AltIncomeLag => "ALT-INCOME-LAG",
            BaselineModel::SIncomeLag => "S-INCOME-LAG",
            BaselineModel::Slx => "SLX",
            BaselineModel::SpatialLag => "SPATIAL-LAG",
            BaselineModel::SpatialDurbin => "SPATIAL-DURBIN",
        })
    }
}

pub struct BaselineInputs<'a> {
    pub domain: &'a SpatialDomain,
    pub y0: &'a DVector<f64>,
    pub dy: &'a DVector<f64>,
    pub alt: Option<&'a DVector<f64>>,
    pub x_s: Option<&'a DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct BaselineFit {
    pub model: BaselineModel,
    pub names: Vec<String>,
    pub coefficients: DVector<f64>,
    pub std_errors: DVector<f64>,
    pub d_bar: Option<f64>,
    pub log_likelihood: f64,
    pub n_params: usize,
    pub aicc: f64,
    pub mse: f64,
    pub r2_nagelkerke: f64,
    pub residuals: DVector<f64>,
    /// `(d̄, AICc)` for every threshold tried.
    pub search: Vec<(f64, f64)>,
}

impl BaselineFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|k| self.coefficients[k])
    }
}

/// Row-standardized `w_ij ∝ 1/d_ij²` for `0 < d_ij ≤ d̄`; isolated rows stay zero.
pub fn distance_weights(domain: &SpatialDomain, d_bar: f64) -> CsrMatrix {
    let idx = NeighborIndex::new(domain);
    let rows: Vec<Vec<(usize, f64)>> = (0..domain.len())
        .into_par_iter()
        .map(|i| {
            let mut row: Vec<(usize, f64)> = idx
                .within(i, d_bar)
                .into_iter()
                .filter(|&(j, d)| j != i && d > 0.0)
                .map(|(j, d)| (j, 1.0 / (d * d)))
                .collect();
            let s: f64 = row.iter().map(|e| e.1).sum();
            if s > 0.0 {
                row.iter_mut().for_each(|e| e.1 /= s);
            }
            row
        })
        .collect();
    CsrMatrix::from_rows(domain.len(), rows)
}

/// Spectrum of a row-standardized symmetric-pattern weight matrix via its
/// symmetric similar form `D^{-1/2} C D^{-1/2}`.
fn row_standardized_spectrum(domain: &SpatialDomain, d_bar: f64) -> Result<Vec<f64>> {
    let n = domain.len();
    let idx = NeighborIndex::new(domain);
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for (j, d) in idx.within(i, d_bar) {
            if j != i && d > 0.0 {
                c[(i, j)] = 1.0 / (d * d);
            }
        }
    }
    let deg: Vec<f64> = (0..n).map(|i| c.row(i).sum()).collect();
    for i in 0..n {
        for j in 0..n {
            if c[(i, j)] != 0.0 {
                c[(i, j)] /= (deg[i] * deg[j]).sqrt();
            }
        }
    }
    symmetric_eigenvalues(&c)
}

fn columns(cols: Vec<(String, DVector<f64>)>) -> (Vec<String>, DMatrix<f64>) {
    let names = cols.iter().map(|c| c.0.clone()).collect();
    let m = DMatrix::from_columns(&cols.iter().map(|c| c.1.clone()).collect::<Vec<_>>());
    (names, m)
}

fn fit_once(model: BaselineModel, inp: &BaselineInputs, d_bar: Option<f64>) -> Result<BaselineFit> {
    let n = inp.y0.len();
    let mut cols = vec![("alpha".to_string(), DVector::from_element(n, 1.0)), ("phi".to_string(), inp.y0.clone())];
    let need_alt = matches!(
        model,
        BaselineModel::AltIncomeLag | BaselineModel::Slx | BaselineModel::SpatialLag | BaselineModel::SpatialDurbin
    );
    if need_alt {
        match inp.alt {
            Some(a) => cols.push(("gamma_ALT".into(), a.clone())),
            None if model == BaselineModel::AltIncomeLag => {
                return Err(SardError::InvalidArgument("ALT-INCOME-LAG needs an altimetry field".into()))
            }
            None => {}
        }
    }
    if model == BaselineModel::SIncomeLag {
        let xs = inp
            .x_s
            .ok_or_else(|| SardError::InvalidArgument("S-INCOME-LAG needs the x_S regressor".into()))?;
        cols.push(("gamma_S".into(), xs.clone()));
    }
    let w = d_bar.map(|d| distance_weights(inp.domain, d));
    if matches!(model, BaselineModel::Slx | BaselineModel::SpatialDurbin) {
        let w = w.as_ref().expect("weights required");
        cols.push(("theta".into(), w.mul_vec(inp.y0)));
        if let Some(a) = inp.alt {
            cols.push(("theta_ALT".into(), w.mul_vec(a)));
        }
    }
    let (mut names, x) = columns(cols);
    let null_ll = gaussian_loglik(inp.dy.add_scalar(-inp.dy.mean()).norm_squared(), n);

    let (coef, se, ll, k, residuals) = if matches!(model, BaselineModel::SpatialLag | BaselineModel::SpatialDurbin) {
        let w = w.as_ref().expect("weights required");
        let wy = DMatrix::from_columns(&[w.mul_vec(inp.dy)]);
        let mu = row_standardized_spectrum(inp.domain, d_bar.expect("threshold"))?;
        let engine = MlEngine::new(MlProblem {
            y: inp.dy,
            x: &x,
            endog: &wy,
            a: SpectrumOrMatrices::Spectrum(mu),
            error: None,
        })?;
        let sol = engine.solve(&MlOptions::default())?;
        let p = x.ncols();
        let sigma2 = sol.profile.sse / n as f64;
        let mut coef: Vec<f64> = sol.profile.beta.iter().cloned().collect();
        coef.push(sol.rho[0]);
        let mut se: Vec<f64> = (0..p).map(|j| (sol.profile.xs_inv[(j, j)] * sigma2).sqrt()).collect();
        se.push(sol.outer_cov[(0, 0)].max(0.0).sqrt());
        names.push("rho".into());
        (coef, se, sol.profile.loglik, p + 2, sol.profile.eps)
    } else {
        let ls = least_squares(&x, inp.dy)?;
        let sse = ls.residuals.norm_squared();
        let p = x.ncols();
        let s2 = sse / (n - p).max(1) as f64;
        let se = (0..p).map(|j| (ls.xtx_inv[(j, j)] * s2).sqrt()).collect();
        (ls.beta.iter().cloned().collect(), se, gaussian_loglik(sse, n), p + 1, ls.residuals)
    };
    Ok(BaselineFit {
        model,
        names,
        coefficients: DVector::from_vec(coef),
        std_errors: DVector::from_vec(se),
        d_bar,
        log_likelihood: ll,
        n_params: k,
        aicc: aicc(ll, k, n),
        mse: residuals.norm_squared() / n as f64,
        r2_nagelkerke: nagelkerke_r2(ll, null_ll, n),
        residuals,
        search: Vec::new(),
    })
}

/// Fits `model`; weight-based models try every `d̄` in `d_grid` and keep
/// the lowest AICc.
pub fn fit_baseline(model: BaselineModel, inputs: &BaselineInputs, d_grid: &[f64]) -> Result<BaselineFit> {
    let n = inputs.domain.len();
    check_len("y0", inputs.y0.len(), n)?;
    check_len("dy", inputs.dy.len(), n)?;
    if !model.uses_weights() {
        return fit_once(model, inputs, None);
    }
    if d_grid.is_empty() {
        return Err(SardError::InvalidArgument("empty distance grid".into()));
    }
    let fits: Vec<Result<BaselineFit>> = d_grid.iter().map(|&d| fit_once(model, inputs, Some(d))).collect();
    let search: Vec<(f64, f64)> = d_grid
        .iter()
        .zip(&fits)
        .map(|(d, f)| (*d, f.as_ref().map_or(f64::NAN, |f| f.aicc)))
        .collect();
    let mut best: Option<BaselineFit> = None;
    let mut last_err = None;
    for f in fits {
        match f {
            Ok(f) if best.as_ref().is_none_or(|b| f.aicc < b.aicc) => best = Some(f),
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some(mut b) => {
            b.search = search;
            Ok(b)
        }
        None => Err(last_err.unwrap_or_else(|| SardError::Numerical("no threshold could be fitted".into()))),
    }
}
