//! Estimators for the SARD regression and its comparison models.

mod baseline;
mod bootstrap;
mod error_weights;
mod iv;
mod ml;
mod ols;

pub use baseline::{distance_weights, fit_baseline, BaselineFit, BaselineInputs, BaselineModel};
pub use bootstrap::{bootstrap_se, simulate_response};
pub use error_weights::{estimate_error_weights, ErrorWeights};
pub use iv::{fit_iv, instrument_matrix, two_stage_least_squares, IvResult};
pub use ml::{fit_ml, fit_ml_with_error_weights, MlEngine, MlOptions, MlProblem, SpectrumOrMatrices};
pub use ols::fit_ols;

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::design::TildeCoefficients;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    OlsNaive,
    Ols,
    Iv,
    Ml,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::OlsNaive, Method::Ols, Method::Iv, Method::Ml];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::OlsNaive => "OLS-NAIVE",
            Method::Ols => "OLS",
            Method::Iv => "IV",
            Method::Ml => "ML",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SardFit {
    pub method: Method,
    /// Coefficient names, exogenous block first, then `rho_*`, then
    /// `lambda` when estimated.
    pub names: Vec<String>,
    pub coefficients: DVector<f64>,
    pub tilde: TildeCoefficients,
    pub lambda: Option<f64>,
    /// Maximum-likelihood variance `η'η / n`.
    pub sigma2: f64,
    pub covariance: DMatrix<f64>,
    /// Heteroskedasticity-robust covariance where available.
    pub robust_covariance: Option<DMatrix<f64>>,
    pub log_likelihood: f64,
    /// Number of estimated parameters including `σ²` (and `λ`).
    pub n_params: usize,
    /// `ε = dy − fitted systematic part`.
    pub residuals: DVector<f64>,
    /// `η = (I − λ W_ε) ε`; equal to `residuals` without an error model.
    pub innovations: DVector<f64>,
    pub first_stage_f: Vec<f64>,
    pub warnings: Vec<String>,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood after each accepted optimizer step (ML only).
    pub trace: Vec<f64>,
}

impl SardFit {
    pub fn n_obs(&self) -> usize {
        self.residuals.len()
    }

    pub fn aicc(&self) -> f64 {
        aicc(self.log_likelihood, self.n_params, self.n_obs())
    }

    pub fn mse(&self) -> f64 {
        self.residuals.norm_squared() / self.n_obs() as f64
    }

    pub fn std_errors(&self) -> DVector<f64> {
        self.covariance.diagonal().map(|v| v.max(0.0).sqrt())
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|k| self.coefficients[k])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|k| self.covariance[(k, k)].max(0.0).sqrt())
    }
}

/// `−2 logL + 2k + 2k(k+1)/(n−k−1)`.
pub fn aicc(log_likelihood: f64, k: usize, n: usize) -> f64 {
    let (k, n) = (k as f64, n as f64);
    -2.0 * log_likelihood + 2.0 * k + 2.0 * k * (k + 1.0) / (n - k - 1.0)
}

/// Gaussian log-likelihood at the ML variance `sse / n`.
pub fn gaussian_loglik(sse: f64, n: usize) -> f64 {
    let n = n as f64;
    -0.5 * n * ((2.0 * PI).ln() + 1.0 + (sse / n).ln())
}

/// `(X'X)^{-1} X' diag(e²) X (X'X)^{-1} · n/(n−p)`.
pub(crate) fn robust_covariance(x: &DMatrix<f64>, xtx_inv: &DMatrix<f64>, e: &DVector<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut xe = x.clone();
    for (i, ei) in e.iter().enumerate() {
        xe.row_mut(i).scale_mut(*ei);
    }
    let meat = xe.transpose() * &xe;
    xtx_inv * meat * xtx_inv * (n as f64 / (n - p).max(1) as f64)
}
