//! Concentrated maximum likelihood for
//! `(I − Σ_j ρ_j M_j) y = Xβ + ε`, `ε = λ W ε + η`, `η ~ N(0, σ²I)`.
//!
//! β and σ² are profiled out; the outer problem over (ρ, λ) is solved by
//! BFGS with analytic gradients
//! `∂ℓ/∂ρ_j = −tr(A⁻¹M_j) + n r'B m_j / SSE` and
//! `∂ℓ/∂λ = −Σ μ_i/(1−λμ_i) + n r'W e / SSE`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{fit_iv, fit_ols, Method, SardFit};
use crate::design::SardDesign;
use crate::error::{Result, SardError};
use crate::estimators::error_weights::{estimate_error_weights, ErrorWeights};
use crate::geometry::ContiguityStructure;
use crate::linalg::{least_squares, Lu};
use crate::optim::{bfgs, numerical_hessian, BfgsOptions};
use crate::sparse::{CsrMatrix, LinOp};

/// How `log|det(I − Σρ_j M_j)|` is obtained.
pub enum SpectrumOrMatrices<'a> {
    /// Dense LU of the assembled matrix at every trial point.
    Matrices(&'a [LinOp]),
    /// Real eigenvalues of the single `M` (one endogenous term only).
    Spectrum(Vec<f64>),
}

pub struct MlProblem<'a> {
    pub y: &'a DVector<f64>,
    pub x: &'a DMatrix<f64>,
    /// Columns `M_j y`.
    pub endog: &'a DMatrix<f64>,
    pub a: SpectrumOrMatrices<'a>,
    /// Error weight matrix and its eigenvalues.
    pub error: Option<(&'a CsrMatrix, &'a [f64])>,
}

#[derive(Debug, Clone)]
pub struct MlOptions {
    pub bfgs: BfgsOptions,
    pub fix_rho: Option<Vec<f64>>,
    pub fix_lambda: Option<f64>,
    pub start_rho: Option<Vec<f64>>,
    pub start_lambda: f64,
    /// Relative step of the finite-difference Hessian.
    pub hessian_step: f64,
    pub compute_se: bool,
}

impl Default for MlOptions {
    fn default() -> Self {
        Self {
            bfgs: BfgsOptions::default(),
            fix_rho: None,
            fix_lambda: None,
            start_rho: None,
            start_lambda: 0.0,
            hessian_step: 1e-4,
            compute_se: true,
        }
    }
}

/// Profiled quantities at one `(ρ, λ)`.
#[derive(Debug, Clone)]
pub struct Profile {
    pub loglik: f64,
    pub beta: DVector<f64>,
    pub sse: f64,
    /// `ε = A y − Xβ`.
    pub eps: DVector<f64>,
    /// `η = B ε`.
    pub eta: DVector<f64>,
    pub xs_inv: DMatrix<f64>,
}

pub struct MlEngine<'a> {
    p: MlProblem<'a>,
    n: usize,
    k: usize,
    scales: Vec<f64>,
    w_y: Option<DVector<f64>>,
    w_x: Option<DMatrix<f64>>,
    w_m: Option<DMatrix<f64>>,
    lambda_range: (f64, f64),
}

impl<'a> MlEngine<'a> {
    pub fn new(p: MlProblem<'a>) -> Result<Self> {
        let n = p.y.len();
        let k = p.endog.ncols();
        if p.x.nrows() != n || p.endog.nrows() != n {
            return Err(SardError::DimensionMismatch {
                what: "ML design",
                got: p.x.nrows(),
                expected: n,
            });
        }
        let scales = match &p.a {
            SpectrumOrMatrices::Matrices(ms) => {
                if ms.len() != k {
                    return Err(SardError::DimensionMismatch {
                        what: "correction matrices",
                        got: ms.len(),
                        expected: k,
                    });
                }
                ms.iter().map(|m| m.norm_inf().max(f64::MIN_POSITIVE)).collect()
            }
            SpectrumOrMatrices::Spectrum(mu) => {
                if k != 1 {
                    return Err(SardError::InvalidArgument("spectral log-determinant needs exactly one lag".into()));
                }
                vec![mu.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE)]
            }
        };
        let (w_y, w_x, w_m, lambda_range) = match p.error {
            Some((w, mu)) => {
                let wx = DMatrix::from_columns(&(0..p.x.ncols()).map(|j| w.mul_vec(&p.x.column(j).into_owned())).collect::<Vec<_>>());
                let wm = if k > 0 {
                    DMatrix::from_columns(&(0..k).map(|j| w.mul_vec(&p.endog.column(j).into_owned())).collect::<Vec<_>>())
                } else {
                    DMatrix::zeros(n, 0)
                };
                (Some(w.mul_vec(p.y)), Some(wx), Some(wm), admissible_range(mu))
            }
            None => (None, None, None, (0.0, 0.0)),
        };
        Ok(Self {
            p,
            n,
            k,
            scales,
            w_y,
            w_x,
            w_m,
            lambda_range,
        })
    }

    pub fn lambda_range(&self) -> (f64, f64) {
        self.lambda_range
    }

    pub fn has_error_model(&self) -> bool {
        self.p.error.is_some()
    }

    fn log_det_a(&self, rho: &[f64], want_traces: bool) -> Option<(f64, Vec<f64>)> {
        if self.k == 0 {
            return Some((0.0, Vec::new()));
        }
        match &self.p.a {
            SpectrumOrMatrices::Spectrum(mu) => {
                let r = rho[0];
                let mut ld = 0.0;
                let mut tr = 0.0;
                for m in mu {
                    let d = 1.0 - r * m;
                    if d <= 0.0 {
                        return None;
                    }
                    ld += d.ln();
                    tr += m / d;
                }
                Some((ld, vec![tr]))
            }
            SpectrumOrMatrices::Matrices(ms) => {
                let mut a = DMatrix::identity(self.n, self.n);
                for (m, r) in ms.iter().zip(rho) {
                    if *r != 0.0 {
                        m.add_to_dense(&mut a, -r);
                    }
                }
                let lu = Lu::new(&a).ok()?;
                let ld = lu.log_abs_det();
                if !ld.is_finite() {
                    return None;
                }
                let traces = if want_traces {
                    let inv = lu.inverse();
                    ms.iter().map(|m| m.trace_product(&inv)).collect()
                } else {
                    Vec::new()
                };
                Some((ld, traces))
            }
        }
    }

    fn log_det_b(&self, lambda: f64) -> Option<(f64, f64)> {
        let Some((_, mu)) = self.p.error else {
            return Some((0.0, 0.0));
        };
        let mut ld = 0.0;
        let mut d_ld = 0.0;
        for m in mu {
            let d = 1.0 - lambda * m;
            if d <= 0.0 {
                return None;
            }
            ld += d.ln();
            d_ld -= m / d;
        }
        Some((ld, d_ld))
    }

    fn profile_core(&self, rho: &[f64], lambda: f64) -> Option<(Profile, DVector<f64>, DVector<f64>)> {
        let mut ay = self.p.y.clone();
        for (j, r) in rho.iter().enumerate() {
            ay.axpy(-r, &self.p.endog.column(j), 1.0);
        }
        let (ys, xs) = match (&self.w_y, &self.w_x, &self.w_m) {
            (Some(wy), Some(wx), Some(wm)) if lambda != 0.0 => {
                let mut way = wy.clone();
                for (j, r) in rho.iter().enumerate() {
                    way.axpy(-r, &wm.column(j), 1.0);
                }
                (&ay - way * lambda, self.p.x - wx * lambda)
            }
            _ => (ay.clone(), self.p.x.clone()),
        };
        let ls = least_squares(&xs, &ys).ok()?;
        let eta = ls.residuals;
        let sse = eta.norm_squared();
        if !(sse > 0.0) {
            return None;
        }
        let eps = &ay - self.p.x * &ls.beta;
        let n = self.n as f64;
        let loglik = -0.5 * n * ((2.0 * PI).ln() + 1.0 + (sse / n).ln());
        Some((
            Profile {
                loglik,
                beta: ls.beta,
                sse,
                eps: eps.clone(),
                eta: eta.clone(),
                xs_inv: ls.xtx_inv,
            },
            eta,
            eps,
        ))
    }

    /// Concentrated log-likelihood and profiled β, σ² at `(ρ, λ)`.
    pub fn profile(&self, rho: &[f64], lambda: f64) -> Option<Profile> {
        let (lda, _) = self.log_det_a(rho, false)?;
        let (ldb, _) = self.log_det_b(lambda)?;
        let (mut pr, _, _) = self.profile_core(rho, lambda)?;
        pr.loglik += lda + ldb;
        pr.loglik.is_finite().then_some(pr)
    }

    /// Log-likelihood and its gradient with respect to `(ρ, λ)`.
    pub fn loglik_grad(&self, rho: &[f64], lambda: f64) -> Option<(f64, DVector<f64>, DVector<f64>)> {
        let (lda, traces) = self.log_det_a(rho, true)?;
        let (ldb, d_ldb) = self.log_det_b(lambda)?;
        let (pr, eta, eps) = self.profile_core(rho, lambda)?;
        let n = self.n as f64;
        let c = n / pr.sse;
        let g_rho = DVector::from_fn(self.k, |j, _| {
            // B m_j
            let mut bm = self.p.endog.column(j).into_owned();
            if let Some(wm) = &self.w_m {
                bm.axpy(-lambda, &wm.column(j), 1.0);
            }
            -traces[j] + c * eta.dot(&bm)
        });
        let g_lambda = match self.p.error {
            Some((w, _)) => d_ldb + c * eta.dot(&w.mul_vec(&eps)),
            None => 0.0,
        };
        let ll = pr.loglik + lda + ldb;
        ll.is_finite().then(|| (ll, g_rho, DVector::from_element(1, g_lambda)))
    }
}

/// Open interval of λ keeping `I − λW` nonsingular around zero.
fn admissible_range(mu: &[f64]) -> (f64, f64) {
    let lo = mu.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (if lo < 0.0 { 1.0 / lo } else { f64::NEG_INFINITY }, if hi > 0.0 { 1.0 / hi } else { f64::INFINITY })
}

/// Outcome of an ML fit in problem coordinates.
#[derive(Debug, Clone)]
pub struct MlSolution {
    pub rho: Vec<f64>,
    pub lambda: f64,
    pub profile: Profile,
    /// Covariance of the free `(ρ, λ)` entries, in that order.
    pub outer_cov: DMatrix<f64>,
    pub free_rho: Vec<bool>,
    pub lambda_free: bool,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

impl<'a> MlEngine<'a> {
    pub fn solve(&self, opts: &MlOptions) -> Result<MlSolution> {
        let k = self.k;
        let fixed_rho = opts.fix_rho.clone();
        if let Some(r) = &fixed_rho {
            if r.len() != k {
                return Err(SardError::DimensionMismatch {
                    what: "fixed rho",
                    got: r.len(),
                    expected: k,
                });
            }
        }
        let lambda_free = self.has_error_model() && opts.fix_lambda.is_none();
        let lambda_fixed = if self.has_error_model() { opts.fix_lambda.unwrap_or(0.0) } else { 0.0 };
        let (lo, hi) = self.lambda_range;
        if self.has_error_model() && !(lambda_fixed > lo && lambda_fixed < hi) {
            return Err(SardError::LambdaOutOfRange {
                lambda: lambda_fixed,
                lo,
                hi,
            });
        }
        let free_rho = vec![fixed_rho.is_none(); k];
        let n_free_rho = if fixed_rho.is_none() { k } else { 0 };
        let start_rho = fixed_rho.clone().or_else(|| opts.start_rho.clone()).unwrap_or_else(|| vec![0.0; k]);

        // θ = [ρ_j · s_j (free ones)…, λ (if free)]
        let unpack = |theta: &DVector<f64>| -> (Vec<f64>, f64) {
            let rho = match &fixed_rho {
                Some(r) => r.clone(),
                None => (0..k).map(|j| theta[j] / self.scales[j]).collect(),
            };
            let lambda = if lambda_free { theta[n_free_rho] } else { lambda_fixed };
            (rho, lambda)
        };
        let mut theta0 = Vec::new();
        if fixed_rho.is_none() {
            theta0.extend(start_rho.iter().zip(&self.scales).map(|(r, s)| r * s));
        }
        if lambda_free {
            theta0.push(opts.start_lambda.clamp(0.9 * lo.max(-1e300), 0.9 * hi.min(1e300)));
        }
        let theta0 = DVector::from_vec(theta0);
        let value = |th: &DVector<f64>| {
            let (rho, lambda) = unpack(th);
            self.profile(&rho, lambda).map_or(f64::INFINITY, |p| -p.loglik)
        };
        let grad_of = |th: &DVector<f64>| -> Option<(f64, DVector<f64>)> {
            let (rho, lambda) = unpack(th);
            let (ll, gr, gl) = self.loglik_grad(&rho, lambda)?;
            let mut g = Vec::with_capacity(th.len());
            if fixed_rho.is_none() {
                g.extend((0..k).map(|j| -gr[j] / self.scales[j]));
            }
            if lambda_free {
                g.push(-gl[0]);
            }
            Some((-ll, DVector::from_vec(g)))
        };
        if !value(&theta0).is_finite() {
            return Err(SardError::Numerical("likelihood undefined at the starting point".into()));
        }
        let value_grad = |th: &DVector<f64>| grad_of(th).unwrap_or_else(|| (f64::INFINITY, DVector::zeros(th.len())));
        let res = bfgs(value, value_grad, theta0, opts.bfgs);
        let (rho, lambda) = unpack(&res.x);
        let profile = self
            .profile(&rho, lambda)
            .ok_or_else(|| SardError::Numerical("likelihood undefined at the optimum".into()))?;
        let dim = res.x.len();
        let outer_cov = if opts.compute_se && dim > 0 {
            let h = numerical_hessian(|th| value_grad(th).1, &res.x, opts.hessian_step);
            // Cov(θ) = H⁻¹ of −ℓ; map back to ρ = θ / s
            let cov_theta = h.clone().try_inverse().unwrap_or_else(|| DMatrix::from_element(dim, dim, f64::NAN));
            let mut jac = DVector::from_element(dim, 1.0);
            if fixed_rho.is_none() {
                for j in 0..k {
                    jac[j] = 1.0 / self.scales[j];
                }
            }
            DMatrix::from_fn(dim, dim, |a, b| cov_theta[(a, b)] * jac[a] * jac[b])
        } else {
            DMatrix::zeros(dim, dim)
        };
        Ok(MlSolution {
            rho,
            lambda,
            profile,
            outer_cov,
            free_rho,
            lambda_free,
            iterations: res.iterations,
            converged: res.converged,
            trace: res.history.iter().map(|f| -f).collect(),
        })
    }
}

fn eigenvalues_of(w: &CsrMatrix) -> Result<Vec<f64>> {
    crate::linalg::symmetric_eigenvalues(&w.to_dense())
}

/// ML fit of the SARD regression; `weights` adds the spatial-error layer.
/// Starts from IV and falls back to OLS when IV is unavailable or
/// infeasible.
pub fn fit_ml(design: &SardDesign, weights: Option<&ErrorWeights>, opts: &MlOptions) -> Result<SardFit> {
    let x = design.exogenous();
    let e = design.endogenous();
    let ms = design.corrections();
    let mu;
    let error = match weights {
        Some(w) if w.q_hat > 0 => {
            mu = match &w.eigenvalues {
                Some(v) => v.clone(),
                None => eigenvalues_of(&w.matrix)?,
            };
            Some((&w.matrix, mu.as_slice()))
        }
        _ => None,
    };
    let engine = MlEngine::new(MlProblem {
        y: &design.dy,
        x: &x,
        endog: &e,
        a: SpectrumOrMatrices::Matrices(ms),
        error,
    })?;
    let mut opts = opts.clone();
    let mut warnings = Vec::new();
    if opts.start_rho.is_none() && opts.fix_rho.is_none() {
        let p = x.ncols();
        let candidates = [fit_iv(design), fit_ols(design, false)];
        let start = candidates
            .iter()
            .filter_map(|f| f.as_ref().ok())
            .map(|f| f.coefficients.as_slice()[p..].to_vec())
            .find(|r| engine.profile(r, 0.0).is_some());
        if start.is_none() {
            warnings.push("no feasible IV/OLS start; starting from rho = 0".to_string());
        }
        opts.start_rho = start;
    }
    let sol = engine.solve(&opts)?;
    if !sol.converged {
        warnings.push(format!("optimizer stopped after {} iterations without meeting tolerances", sol.iterations));
    }
    Ok(to_fit(design, &x, &sol, warnings))
}

fn to_fit(design: &SardDesign, x: &DMatrix<f64>, sol: &MlSolution, warnings: Vec<String>) -> SardFit {
    let n = design.len();
    let p = x.ncols();
    let k = sol.rho.len();
    let n_free_rho = sol.free_rho.iter().filter(|f| **f).count();
    let mut names = design.exogenous_names();
    names.extend(design.endogenous_names());
    let mut coef: Vec<f64> = sol.profile.beta.iter().cloned().chain(sol.rho.iter().cloned()).collect();
    if sol.lambda_free || sol.lambda != 0.0 {
        names.push("lambda".into());
        coef.push(sol.lambda);
    }
    let dim = coef.len();
    let sigma2 = sol.profile.sse / n as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    cov.view_mut((0, 0), (p, p)).copy_from(&(&sol.profile.xs_inv * sigma2));
    // free (ρ, λ) block
    let mut free_idx: Vec<usize> = (0..k).filter(|&j| sol.free_rho[j]).map(|j| p + j).collect();
    if sol.lambda_free {
        free_idx.push(p + k);
    }
    for (a, &ia) in free_idx.iter().enumerate() {
        for (b, &ib) in free_idx.iter().enumerate() {
            cov[(ia, ib)] = sol.outer_cov[(a, b)];
        }
    }
    let beta = sol.profile.beta.as_slice();
    SardFit {
        method: Method::Ml,
        names,
        tilde: design.tilde_from(beta, &sol.rho),
        lambda: (sol.lambda_free || sol.lambda != 0.0).then_some(sol.lambda),
        sigma2,
        covariance: cov,
        robust_covariance: None,
        log_likelihood: sol.profile.loglik,
        n_params: p + n_free_rho + usize::from(sol.lambda_free) + 1,
        residuals: sol.profile.eps.clone(),
        innovations: sol.profile.eta.clone(),
        coefficients: DVector::from_vec(coef),
        first_stage_f: Vec::new(),
        warnings,
        iterations: sol.iterations,
        converged: sol.converged,
        trace: sol.trace.clone(),
    }
}

/// Two-stage workflow: ML without the error layer, error weights from its
/// residuals over `max_order` contiguity rings, then ML with `W_ε` started
/// at the first-stage ρ. Returns the first stage as well.
pub fn fit_ml_with_error_weights(
    design: &SardDesign,
    contiguity: &ContiguityStructure,
    max_order: usize,
    opts: &MlOptions,
) -> Result<(SardFit, ErrorWeights, SardFit)> {
    let first = fit_ml(design, None, opts)?;
    let mut weights = estimate_error_weights(&first.residuals, contiguity, max_order)?;
    if weights.q_hat == 0 {
        return Ok((first.clone(), weights, first));
    }
    weights.eigenvalues = Some(eigenvalues_of(&weights.matrix)?);
    let p = design.exogenous().ncols();
    let mut o2 = opts.clone();
    if o2.fix_rho.is_none() {
        o2.start_rho = Some(first.coefficients.as_slice()[p..p + design.terms().len()].to_vec());
    }
    let second = fit_ml(design, Some(&weights), &o2)?;
    Ok((second, weights, first))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn ring_weights(n: usize) -> CsrMatrix {
        let rows = (0..n).map(|i| vec![((i + 1) % n, 0.5), ((i + n - 1) % n, 0.5)]).collect();
        CsrMatrix::from_rows(n, rows)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let n = 60;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut z = || -> f64 { StandardNormal.sample(&mut rng) };
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { (i as f64 * 0.3).sin() });
        let y = DVector::from_fn(n, |_, _| z());
        let w = ring_weights(n);
        let m2 = CsrMatrix::from_rows(n, (0..n).map(|i| vec![((i + 2) % n, 0.3), ((i + n - 3) % n, 0.2)]).collect());
        let ms = vec![LinOp::Sparse(w.clone()), LinOp::Sparse(m2.clone())];
        let endog = DMatrix::from_columns(&[w.mul_vec(&y), m2.mul_vec(&y)]);
        let mu = crate::linalg::symmetric_eigenvalues(&w.to_dense()).unwrap();
        let eng = MlEngine::new(MlProblem {
            y: &y,
            x: &x,
            endog: &endog,
            a: SpectrumOrMatrices::Matrices(&ms),
            error: Some((&w, &mu)),
        })
        .unwrap();
        let (rho, lam) = ([0.2, -0.1], 0.3);
        let (_, gr, gl) = eng.loglik_grad(&rho, lam).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let mut rp = rho;
            rp[j] += h;
            let mut rm = rho;
            rm[j] -= h;
            let fd = (eng.profile(&rp, lam).unwrap().loglik - eng.profile(&rm, lam).unwrap().loglik) / (2.0 * h);
            assert!((fd - gr[j]).abs() < 1e-5 * (1.0 + fd.abs()), "rho {j}: {fd} vs {}", gr[j]);
        }
        let fd = (eng.profile(&rho, lam + h).unwrap().loglik - eng.profile(&rho, lam - h).unwrap().loglik) / (2.0 * h);
        assert!((fd - gl[0]).abs() < 1e-5 * (1.0 + fd.abs()));
    }

    #[test]
    fn recovers_spatial_error_parameter() {
        // y = Xβ + (I − λW)⁻¹ η with λ = 0.6 on a ring
        let n = 400;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { (i as f64 * 0.05).cos() });
        let w = ring_weights(n);
        let eta = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let b = DMatrix::identity(n, n) - w.to_dense() * 0.6;
        let eps = Lu::new(&b).unwrap().solve(&eta);
        let y = &x * DVector::from_vec(vec![1.0, 2.0]) + eps;
        let mu = crate::linalg::symmetric_eigenvalues(&w.to_dense()).unwrap();
        let endog = DMatrix::zeros(n, 0);
        let ms: Vec<LinOp> = Vec::new();
        let eng = MlEngine::new(MlProblem {
            y: &y,
            x: &x,
            endog: &endog,
            a: SpectrumOrMatrices::Matrices(&ms),
            error: Some((&w, &mu)),
        })
        .unwrap();
        let sol = eng.solve(&MlOptions::default()).unwrap();
        assert!(sol.converged);
        assert!((sol.lambda - 0.6).abs() < 0.1, "lambda {}", sol.lambda);
        assert!(sol.trace.windows(2).all(|t| t[1] >= t[0] - 1e-9));
        let se = sol.outer_cov[(0, 0)].sqrt();
        assert!(se > 0.01 && se < 0.1);
    }

    #[test]
    fn fixed_zero_parameters_reduce_to_ols() {
        let n = 50;
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_fn(n, |i, _| 0.5 + 0.1 * i as f64 + ((i * 7) % 5) as f64 * 0.01);
        let w = ring_weights(n);
        let endog = DMatrix::from_columns(&[w.mul_vec(&y)]);
        let ms = vec![LinOp::Sparse(w.clone())];
        let eng = MlEngine::new(MlProblem {
            y: &y,
            x: &x,
            endog: &endog,
            a: SpectrumOrMatrices::Matrices(&ms),
            error: None,
        })
        .unwrap();
        let sol = eng
            .solve(&MlOptions {
                fix_rho: Some(vec![0.0]),
                ..Default::default()
            })
            .unwrap();
        let ols = least_squares(&x, &y).unwrap();
        assert!((sol.profile.beta - ols.beta).amax() < 1e-12);
    }
}
