use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Result, SardError};
use crate::geometry::ContiguityStructure;
use crate::linalg::least_squares;
use crate::sparse::CsrMatrix;

/// Two-sided significance level for retaining contiguity orders.
pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct ErrorWeights {
    /// `ℓ̂_1..ℓ̂_Q` for every requested order.
    pub ell: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Length of the leading run of significant orders.
    pub q_hat: usize,
    /// `Σ_{q ≤ Q̂} ℓ̂_q (W_q − W_{q−1})`.
    pub matrix: CsrMatrix,
    /// Spectrum of `matrix`, filled in lazily by the ML workflow.
    pub eigenvalues: Option<Vec<f64>>,
}

impl ErrorWeights {
    /// Orders beyond `q` that are nevertheless significant.
    pub fn significant_beyond(&self, q: usize) -> Vec<usize> {
        (q..self.ell.len()).filter(|&k| self.p_values[k] < SIGNIFICANCE).map(|k| k + 1).collect()
    }
}

/// Regresses the residuals on their ring lags `(W_q − W_{q−1}) ê`,
/// `q = 1..Q`, without intercept, keeps the leading run of orders
/// significant at 5% (two-sided t test) and assembles `W_ε`.
pub fn estimate_error_weights(residuals: &DVector<f64>, contiguity: &ContiguityStructure, max_order: usize) -> Result<ErrorWeights> {
    let n = residuals.len();
    if max_order == 0 {
        return Err(SardError::InvalidArgument("max order must be at least 1".into()));
    }
    if contiguity.len() != n {
        return Err(SardError::DimensionMismatch {
            what: "contiguity",
            got: contiguity.len(),
            expected: n,
        });
    }
    if max_order > contiguity.max_order() {
        return Err(SardError::InvalidArgument(format!(
            "contiguity was built to order {}, {} requested",
            contiguity.max_order(),
            max_order
        )));
    }
    let bands: Vec<CsrMatrix> = (1..=max_order).map(|q| contiguity.band(q)).collect();
    if bands.iter().any(|b| b.nnz() == 0) {
        return Err(SardError::EmptyBand);
    }
    let x = DMatrix::from_columns(&bands.iter().map(|b| b.mul_vec(residuals)).collect::<Vec<_>>());
    let ls = least_squares(&x, residuals)?;
    let dof = (n - max_order).max(1);
    let s2 = ls.residuals.norm_squared() / dof as f64;
    let t_dist = StudentsT::new(0.0, 1.0, dof as f64).map_err(|e| SardError::Numerical(e.to_string()))?;
    let ell: Vec<f64> = ls.beta.iter().cloned().collect();
    let std_errors: Vec<f64> = (0..max_order).map(|q| (ls.xtx_inv[(q, q)] * s2).sqrt()).collect();
    let t_stats: Vec<f64> = ell.iter().zip(&std_errors).map(|(b, s)| b / s).collect();
    let p_values: Vec<f64> = t_stats.iter().map(|t| 2.0 * (1.0 - t_dist.cdf(t.abs()))).collect();
    let q_hat = p_values.iter().take_while(|p| **p < SIGNIFICANCE).count();
    let mut matrix = CsrMatrix::zeros(n, n);
    for q in 0..q_hat {
        matrix = matrix.add(&bands[q], 1.0, ell[q]);
    }
    Ok(ErrorWeights {
        ell,
        std_errors,
        t_stats,
        p_values,
        q_hat,
        matrix,
        eigenvalues: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{contiguity, ContiguityMethod, SpatialDomain};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn iid_residuals_rarely_retain_orders() {
        let d = SpatialDomain::unit_torus(30).unwrap();
        let c = contiguity(&d, ContiguityMethod::RookOnGrid, 10).unwrap();
        let mut zero = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = DVector::from_fn(900, |_, _| StandardNormal.sample(&mut rng));
            let w = estimate_error_weights(&e, &c, 10).unwrap();
            if w.q_hat == 0 {
                zero += 1;
                assert_eq!(w.matrix.nnz(), 0);
            }
        }
        assert!(zero >= 17, "{zero}/20");
    }

    #[test]
    fn first_order_structure_is_found() {
        let d = SpatialDomain::unit_torus(30).unwrap();
        let c = contiguity(&d, ContiguityMethod::RookOnGrid, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let eta = DVector::from_fn(900, |_, _| StandardNormal.sample(&mut rng));
        // moving-average field: strong first-ring correlation
        let e = &eta + c.band(1).mul_vec(&eta) * 0.5;
        let w = estimate_error_weights(&e, &c, 10).unwrap();
        assert!(w.q_hat >= 1);
        assert!(w.ell[0] > 0.0 && w.ell[0].abs() > w.ell[1..].iter().fold(0.0f64, |a, v| a.max(v.abs())));
        let m = w.matrix.to_dense();
        assert!((&m - m.transpose()).amax() < 1e-14);
        assert!(m.diagonal().amax() == 0.0);
    }
}
