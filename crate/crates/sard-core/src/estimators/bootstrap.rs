use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ErrorWeights, Method, SardFit};
use crate::design::SardDesign;
use crate::error::{Result, SardError};
use crate::linalg::Lu;

/// Generates responses from a fitted model:
/// `Δτy = A(ρ̂)⁻¹ (Xβ̂ + B(λ̂)⁻¹ η)`.
pub struct ResponseGenerator {
    xb: DVector<f64>,
    a: Option<Lu>,
    b: Option<Lu>,
}

impl ResponseGenerator {
    pub fn new(design: &SardDesign, fit: &SardFit, weights: Option<&ErrorWeights>) -> Result<Self> {
        let x = design.exogenous();
        let p = x.ncols();
        let n = design.len();
        let xb = &x * fit.coefficients.rows(0, p);
        let rho: Vec<f64> = if fit.method == Method::OlsNaive {
            Vec::new()
        } else {
            fit.coefficients.as_slice()[p..p + design.terms().len()].to_vec()
        };
        let a = if rho.iter().any(|r| *r != 0.0) {
            let mut m = DMatrix::identity(n, n);
            for (op, r) in design.corrections().iter().zip(&rho) {
                op.add_to_dense(&mut m, -r);
            }
            Some(Lu::new(&m)?)
        } else {
            None
        };
        let b = match (fit.lambda, weights) {
            (Some(l), Some(w)) if l != 0.0 => {
                let mut m = DMatrix::identity(n, n);
                for (i, j, v) in w.matrix.triplets() {
                    m[(i, j)] -= l * v;
                }
                Some(Lu::new(&m)?)
            }
            (Some(l), None) if l != 0.0 => {
                return Err(SardError::InvalidArgument("fit has lambda but no error weights were given".into()))
            }
            _ => None,
        };
        Ok(Self { xb, a, b })
    }

    pub fn generate(&self, eta: &DVector<f64>) -> DVector<f64> {
        let eps = self.b.as_ref().map_or_else(|| eta.clone(), |b| b.solve(eta));
        let rhs = &self.xb + eps;
        self.a.as_ref().map_or_else(|| rhs.clone(), |a| a.solve(&rhs))
    }
}

/// One simulated response with the given innovations.
pub fn simulate_response(design: &SardDesign, fit: &SardFit, weights: Option<&ErrorWeights>, eta: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(ResponseGenerator::new(design, fit, weights)?.generate(eta))
}

/// Residual bootstrap standard errors: innovations are resampled with
/// replacement (centered), pushed through the fitted model, and `refit`
/// is applied to each replicated design. Replication `r` uses ChaCha
/// stream `r` of `seed`, so results do not depend on scheduling.
pub fn bootstrap_se<F>(
    design: &SardDesign,
    fit: &SardFit,
    weights: Option<&ErrorWeights>,
    replications: usize,
    seed: u64,
    refit: F,
) -> Result<DVector<f64>>
where
    F: Fn(&SardDesign) -> Result<SardFit> + Sync,
{
    if replications < 2 {
        return Err(SardError::InvalidArgument("need at least two replications".into()));
    }
    let gen = ResponseGenerator::new(design, fit, weights)?;
    let centered = fit.innovations.add_scalar(-fit.innovations.mean());
    let n = centered.len();
    let dim = fit.coefficients.len();
    let draws: Vec<Option<DVector<f64>>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let eta = DVector::from_fn(n, |_, _| centered[rng.random_range(0..n)]);
            let d = design.with_response(gen.generate(&eta)).ok()?;
            let f = refit(&d).ok()?;
            (f.coefficients.len() == dim).then_some(f.coefficients)
        })
        .collect();
    let ok: Vec<DVector<f64>> = draws.into_iter().flatten().collect();
    if ok.len() < 2 {
        return Err(SardError::Numerical("fewer than two bootstrap replications succeeded".into()));
    }
    let m = ok.len() as f64;
    let mean = ok.iter().fold(DVector::zeros(dim), |a, b| a + b) / m;
    let var = ok.iter().fold(DVector::zeros(dim), |a, b| a + (b - &mean).map(|v| v * v)) / (m - 1.0);
    Ok(var.map(f64::sqrt))
}
