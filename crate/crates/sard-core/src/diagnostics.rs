//! Fit statistics, Moran's I correlograms and Monte Carlo summaries.

use std::io::Write;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use crate::estimators::aicc;
use crate::error::{Result, SardError};
use crate::estimators::SardFit;
use crate::geometry::ContiguityStructure;
use crate::sparse::CsrMatrix;

/// `(1 − exp(2(ℓ0 − ℓ)/n)) / (1 − exp(2ℓ0/n))` with `ℓ0` the log-likelihood
/// of the intercept-only model. Gaussian densities can make `ℓ0 ≥ 0`, where
/// the rescaling is undefined; the Cox–Snell numerator is returned then.
pub fn nagelkerke_r2(loglik: f64, null_loglik: f64, n: usize) -> f64 {
    let n = n as f64;
    let cox_snell = 1.0 - (2.0 * (null_loglik - loglik) / n).exp();
    let max = 1.0 - (2.0 * null_loglik / n).exp();
    if max > 0.0 {
        cox_snell / max
    } else {
        cox_snell
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoranResult {
    pub i: f64,
    pub expectation: f64,
    pub variance: f64,
}

impl MoranResult {
    pub fn z_score(&self) -> f64 {
        (self.i - self.expectation) / self.variance.sqrt()
    }

    /// Central 95% interval of the null distribution.
    pub fn null_band(&self) -> (f64, f64) {
        let h = 1.959963984540054 * self.variance.sqrt();
        (self.expectation - h, self.expectation + h)
    }

    pub fn inside_null_band(&self) -> bool {
        let (lo, hi) = self.null_band();
        self.i >= lo && self.i <= hi
    }
}

fn row_standardize(band: &CsrMatrix) -> CsrMatrix {
    let s: Vec<f64> = band.row_sums().iter().map(|v| if *v != 0.0 { 1.0 / v } else { 0.0 }).collect();
    band.scale_rows(&s)
}

/// Moran's I of `field` against a (binary or weighted) band, row-
/// standardized, with moments under the normality assumption.
pub fn morans_i(field: &DVector<f64>, band: &CsrMatrix) -> Result<MoranResult> {
    let n = field.len();
    if band.nrows() != n {
        return Err(SardError::DimensionMismatch {
            what: "weight band",
            got: band.nrows(),
            expected: n,
        });
    }
    if band.nnz() == 0 {
        return Err(SardError::EmptyBand);
    }
    let w = row_standardize(band);
    let z = field.add_scalar(-field.mean());
    let zz = z.norm_squared();
    if !(zz > 1e-300) {
        return Err(SardError::ZeroVariance);
    }
    let s0: f64 = w.row_sums().iter().sum();
    let nf = n as f64;
    let i = nf / s0 * z.dot(&w.mul_vec(&z)) / zz;

    let wt = w.transpose();
    let sym = w.add(&wt, 1.0, 1.0);
    let s1 = 0.5 * sym.triplets().map(|(_, _, v)| v * v).sum::<f64>();
    let out = w.row_sums();
    let inn = wt.row_sums();
    let s2: f64 = out.iter().zip(&inn).map(|(a, b)| (a + b).powi(2)).sum();
    let e = -1.0 / (nf - 1.0);
    let e2 = (nf * nf * s1 - nf * s2 + 3.0 * s0 * s0) / ((nf * nf - 1.0) * s0 * s0);
    Ok(MoranResult {
        i,
        expectation: e,
        variance: e2 - e * e,
    })
}

/// Pseudo p-value (two-sided) of Moran's I from random relabelings.
pub fn morans_i_permutation(field: &DVector<f64>, band: &CsrMatrix, permutations: usize, seed: u64) -> Result<(f64, f64)> {
    let obs = morans_i(field, band)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = field.iter().cloned().collect();
    let mut extreme = 0usize;
    for _ in 0..permutations {
        v.shuffle(&mut rng);
        let r = morans_i(&DVector::from_column_slice(&v), band)?;
        if (r.i - obs.expectation).abs() >= (obs.i - obs.expectation).abs() {
            extreme += 1;
        }
    }
    Ok((obs.i, (extreme + 1) as f64 / (permutations + 1) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelogramEntry {
    pub order: usize,
    /// `None` when the ring is empty or the field is constant.
    pub value: Option<f64>,
    pub expectation: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Moran's I on each exclusive contiguity ring `W_q − W_{q−1}`.
pub fn correlogram(field: &DVector<f64>, contiguity: &ContiguityStructure, max_order: usize) -> Vec<CorrelogramEntry> {
    let e = -1.0 / (field.len() as f64 - 1.0);
    (1..=max_order.min(contiguity.max_order()))
        .map(|q| match morans_i(field, &contiguity.band(q)) {
            Ok(m) => {
                let (lo, hi) = m.null_band();
                CorrelogramEntry {
                    order: q,
                    value: Some(m.i),
                    expectation: m.expectation,
                    lo,
                    hi,
                }
            }
            Err(_) => CorrelogramEntry {
                order: q,
                value: None,
                expectation: e,
                lo: f64::NAN,
                hi: f64::NAN,
            },
        })
        .collect()
}

pub fn write_correlogram<W: Write>(entries: &[CorrelogramEntry], mut w: W) -> std::io::Result<()> {
    writeln!(w, "order,I,lo,hi")?;
    for e in entries {
        match e.value {
            Some(v) => writeln!(w, "{},{:e},{:e},{:e}", e.order, v, e.lo, e.hi)?,
            None => writeln!(w, "{},,,", e.order)?,
        }
    }
    Ok(())
}

/// One replication's estimates for the Monte Carlo table.
#[derive(Debug, Clone)]
pub struct McRecord {
    pub names: Vec<String>,
    pub estimates: DVector<f64>,
    pub std_errors: DVector<f64>,
    pub bootstrap_se: Option<DVector<f64>>,
    pub aicc: f64,
    pub mse: f64,
}

impl From<&SardFit> for McRecord {
    fn from(f: &SardFit) -> Self {
        Self {
            names: f.names.clone(),
            estimates: f.coefficients.clone(),
            std_errors: f.std_errors(),
            bootstrap_se: None,
            aicc: f.aicc(),
            mse: f.mse(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub se: f64,
    pub se_boot: Option<f64>,
    pub rmse: f64,
    /// Population variance of the estimates.
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub coefficients: Vec<CoefSummary>,
    pub aicc: f64,
    pub mse: f64,
    pub replications: usize,
}

/// Mean, bias, mean reported SE, mean bootstrap SE and RMSE per
/// coefficient listed in `truth`; coefficients absent from a record are
/// skipped for that record.
pub fn summarize_mc(records: &[McRecord], truth: &[(&str, f64)]) -> Result<McSummary> {
    if records.is_empty() {
        return Err(SardError::InvalidArgument("no Monte Carlo records".into()));
    }
    let m = records.len() as f64;
    let coefficients = truth
        .iter()
        .filter_map(|&(name, t)| {
            let vals: Vec<(f64, f64, Option<f64>)> = records
                .iter()
                .filter_map(|r| {
                    let k = r.names.iter().position(|n| n == name)?;
                    Some((r.estimates[k], r.std_errors[k], r.bootstrap_se.as_ref().map(|b| b[k])))
                })
                .collect();
            if vals.is_empty() {
                return None;
            }
            let c = vals.len() as f64;
            let mean = vals.iter().map(|v| v.0).sum::<f64>() / c;
            let variance = vals.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / c;
            let rmse = (vals.iter().map(|v| (v.0 - t).powi(2)).sum::<f64>() / c).sqrt();
            let se = vals.iter().map(|v| v.1).sum::<f64>() / c;
            let boots: Vec<f64> = vals.iter().filter_map(|v| v.2).collect();
            Some(CoefSummary {
                name: name.to_string(),
                truth: t,
                mean,
                bias: mean - t,
                se,
                se_boot: (!boots.is_empty()).then(|| boots.iter().sum::<f64>() / boots.len() as f64),
                rmse,
                variance,
            })
        })
        .collect();
    Ok(McSummary {
        coefficients,
        aicc: records.iter().map(|r| r.aicc).sum::<f64>() / m,
        mse: records.iter().map(|r| r.mse).sum::<f64>() / m,
        replications: records.len(),
    })
}

impl McSummary {
    pub fn write_table<W: Write>(&self, label: &str, mut w: W) -> std::io::Result<()> {
        writeln!(w, "model,coefficient,truth,mean,bias,se,se_boot,rmse,aicc,mse")?;
        for c in &self.coefficients {
            writeln!(
                w,
                "{label},{},{:e},{:e},{:e},{:e},{},{:e},{:.1},{:e}",
                c.name,
                c.truth,
                c.mean,
                c.bias,
                c.se,
                c.se_boot.map_or(String::new(), |v| format!("{v:e}")),
                c.rmse,
                self.aicc,
                self.mse
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{contiguity, ContiguityMethod, SpatialDomain};
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn constant_field_has_no_moran() {
        let d = SpatialDomain::unit_torus(10).unwrap();
        let c = contiguity(&d, ContiguityMethod::RookOnGrid, 2).unwrap();
        assert!(matches!(morans_i(&DVector::from_element(100, 2.0), &c.band(1)), Err(SardError::ZeroVariance)));
        assert!(matches!(morans_i(&DVector::from_element(100, 2.0), &CsrMatrix::zeros(100, 100)), Err(SardError::EmptyBand)));
    }

    #[test]
    fn null_coverage_and_smooth_field() {
        let d = SpatialDomain::unit_torus(50).unwrap();
        let c = contiguity(&d, ContiguityMethod::RookOnGrid, 1).unwrap();
        let band = c.band(1);
        let mut inside = 0;
        for seed in 0..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = DVector::from_fn(2500, |_, _| StandardNormal.sample(&mut rng));
            if morans_i(&f, &band).unwrap().inside_null_band() {
                inside += 1;
            }
        }
        assert!(inside >= 36, "{inside}/40");
        let smooth = DVector::from_fn(2500, |i, _| (2.0 * std::f64::consts::PI * d.point(i)[0]).sin());
        let m = morans_i(&smooth, &band).unwrap();
        // on a lattice with spacing h: I = (cos(2πh) + 1)/2 for this field
        let h: f64 = 0.02;
        let exact = ((2.0 * std::f64::consts::PI * h).cos() + 1.0) / 2.0;
        assert!((m.i - exact).abs() < 1e-10, "{} vs {exact}", m.i);
    }

    #[test]
    fn mc_summary_identities() {
        let rec = |v: f64| McRecord {
            names: vec!["phi".into()],
            estimates: DVector::from_element(1, v),
            std_errors: DVector::from_element(1, 0.1),
            bootstrap_se: None,
            aicc: -10.0,
            mse: 1.0,
        };
        let s = summarize_mc(&[rec(0.5)], &[("phi", 0.5)]).unwrap();
        assert_eq!(s.coefficients[0].bias, 0.0);
        assert_eq!(s.coefficients[0].rmse, 0.0);
        let s = summarize_mc(&[rec(0.4), rec(0.6)], &[("phi", 0.5)]).unwrap();
        assert!(s.coefficients[0].bias.abs() < 1e-15);
        assert!((s.coefficients[0].rmse - 0.1).abs() < 1e-15);
    }

    #[test]
    fn nagelkerke_bounds() {
        assert_eq!(nagelkerke_r2(-50.0, -50.0, 100), 0.0);
        let r = nagelkerke_r2(-40.0, -50.0, 100);
        let cs = 1.0 - (-0.2f64).exp();
        assert!((r - cs / (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((nagelkerke_r2(60.0, 50.0, 100) - cs).abs() < 1e-15);
    }
}
