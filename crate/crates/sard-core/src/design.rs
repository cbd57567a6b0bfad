//! Regressors and time-discretization corrections of the SARD regression
//!
//! `Δτ y = α̃ + φ̃ y + Σ_j γ̃_j x_j + Σ_j ρ̃_j M_j Δτ y + ε`,  j ∈ {S, A, R, D}
//!
//! plus the map from reduced-form (tilde) coefficients back to the
//! structural ones.

use std::io::Write;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Result, SardError};
use crate::geometry::SpatialDomain;
use crate::gfdm::OperatorSet;
use crate::kernels::InteractionMatrix;
use crate::sim::divergence_term;
use crate::sparse::{linop_sum, sparse_times, CsrMatrix, LinOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    S,
    A,
    R,
    D,
}

impl Term {
    pub const ALL: [Term; 4] = [Term::S, Term::A, Term::R, Term::D];

    pub fn label(self) -> &'static str {
        match self {
            Term::S => "S",
            Term::A => "A",
            Term::R => "R",
            Term::D => "D",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Reduced-form coefficients; entries of inactive terms are zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TildeCoefficients {
    pub alpha: f64,
    pub phi: f64,
    /// Indexed by [`Term::index`].
    pub gamma: [f64; 4],
    pub rho: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralParams {
    pub alpha: f64,
    pub phi: f64,
    pub gamma: [f64; 4],
    pub rho_phi: f64,
    pub rho: [f64; 4],
    /// `1 − τ ρ_φ / 2`.
    pub scale: f64,
}

impl StructuralParams {
    /// Structural = tilde × scale, `ρ_j = 2 ρ̃_j scale / τ`, and
    /// `ρ_φ = 2 (1 − scale) / τ`.
    pub fn from_scale(tilde: &TildeCoefficients, scale: f64, tau: f64) -> Self {
        Self {
            alpha: tilde.alpha * scale,
            phi: tilde.phi * scale,
            gamma: tilde.gamma.map(|g| g * scale),
            rho_phi: 2.0 * (1.0 - scale) / tau,
            rho: tilde.rho.map(|r| 2.0 * r * scale / tau),
            scale,
        }
    }
}

/// Recovers the scale factor from the aggregate growth between 0 and τ.
///
/// Summed over the domain the reallocation terms vanish, so the aggregate
/// obeys `Y' = α|Ω| + φY` whose solution pins `φ τ`; comparing it with
/// `φ̃ τ` gives the scale. `area` is `|Ω|`, needed because `α` is a
/// density.
pub fn back_solve(tilde: &TildeCoefficients, y0: f64, y_tau: f64, tau: f64, area: f64) -> Result<StructuralParams> {
    if tilde.phi == 0.0 {
        return Err(SardError::ZeroPhiTilde);
    }
    if !(tau > 0.0) {
        return Err(SardError::InvalidArgument("tau must be positive".into()));
    }
    let shift = tilde.alpha * area / tilde.phi;
    let ratio = (y_tau + shift) / (y0 + shift);
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(SardError::DegenerateAggregate(ratio));
    }
    let rho_phi = (2.0 / tau) * (1.0 - ratio.ln() / (tilde.phi * tau));
    let scale = 1.0 - tau * rho_phi / 2.0;
    Ok(StructuralParams::from_scale(tilde, scale, tau))
}

/// `x_S, x_A, x_R, x_D` for the supplied fields; a term is `None` when
/// its ingredient (S field or kernel) is absent.
pub fn build_regressors(
    y: &DVector<f64>,
    s: Option<&DVector<f64>>,
    ops: &OperatorSet,
    w_a: Option<&InteractionMatrix>,
    w_r: Option<&InteractionMatrix>,
) -> Result<[Option<DVector<f64>>; 4]> {
    let n = ops.len();
    check_len("y", y.len(), n)?;
    if let Some(s) = s {
        check_len("s", s.len(), n)?;
    }
    for w in [w_a, w_r].into_iter().flatten() {
        check_len("interaction matrix", w.len(), n)?;
    }
    Ok([
        s.map(|s| divergence_term(ops, y, s)),
        w_a.map(|w| divergence_term(ops, y, &w.apply(y))),
        w_r.map(|w| divergence_term(ops, y, &w.apply(y))),
        Some(ops.laplacian().mul_vec(y)),
    ])
}

/// The linearizations of the regressor maps around `y`, i.e. the linear
/// maps `v ↦ M_j v`, available both matrix-free and assembled.
/// A kernel with the gradient of its convolution with `y`.
type KernelGrad<'a> = (&'a InteractionMatrix, [DVector<f64>; 2]);

#[derive(Clone)]
pub struct CorrectionMaps<'a> {
    ops: &'a OperatorSet,
    y: DVector<f64>,
    s_grad: Option<[DVector<f64>; 2]>,
    kernels: [Option<KernelGrad<'a>>; 2],
}

impl<'a> CorrectionMaps<'a> {
    pub fn new(
        y: &DVector<f64>,
        s: Option<&DVector<f64>>,
        ops: &'a OperatorSet,
        w_a: Option<&'a InteractionMatrix>,
        w_r: Option<&'a InteractionMatrix>,
    ) -> Result<Self> {
        check_len("y", y.len(), ops.len())?;
        let grad = |g: &DVector<f64>| [ops.m_z1.mul_vec(g), ops.m_z2.mul_vec(g)];
        let s_grad = match s {
            Some(s) => {
                check_len("s", s.len(), ops.len())?;
                Some(grad(s))
            }
            None => None,
        };
        let kern = |w: Option<&'a InteractionMatrix>| -> Result<_> {
            match w {
                Some(w) => {
                    check_len("interaction matrix", w.len(), ops.len())?;
                    Ok(Some((w, grad(&w.apply(y)))))
                }
                None => Ok(None),
            }
        };
        Ok(Self {
            ops,
            y: y.clone(),
            s_grad,
            kernels: [kern(w_a)?, kern(w_r)?],
        })
    }

    pub fn has(&self, t: Term) -> bool {
        match t {
            Term::S => self.s_grad.is_some(),
            Term::A => self.kernels[0].is_some(),
            Term::R => self.kernels[1].is_some(),
            Term::D => true,
        }
    }

    /// `M_t v` without forming `M_t`.
    pub fn apply(&self, t: Term, v: &DVector<f64>) -> DVector<f64> {
        let o = self.ops;
        let weighted = |g: &[DVector<f64>; 2]| o.m_z1.mul_vec(&v.component_mul(&g[0])) + o.m_z2.mul_vec(&v.component_mul(&g[1]));
        match t {
            Term::S => self.s_grad.as_ref().map_or_else(|| DVector::zeros(v.len()), weighted),
            Term::A | Term::R => match &self.kernels[(t == Term::R) as usize] {
                Some((w, g)) => weighted(g) + divergence_term(o, &self.y, &w.apply(v)),
                None => DVector::zeros(v.len()),
            },
            Term::D => o.m_z1z1.mul_vec(v) + o.m_z2z2.mul_vec(v),
        }
    }

    /// Explicit matrix of `M_t`.
    pub fn assemble(&self, t: Term) -> LinOp {
        let o = self.ops;
        let n = o.len();
        let first_order = |g: &[DVector<f64>; 2]| {
            o.m_z1
                .scale_columns(g[0].as_slice())
                .add(&o.m_z2.scale_columns(g[1].as_slice()), 1.0, 1.0)
        };
        match t {
            Term::S => LinOp::Sparse(self.s_grad.as_ref().map_or_else(|| CsrMatrix::zeros(n, n), first_order)),
            Term::A | Term::R => match &self.kernels[(t == Term::R) as usize] {
                Some((w, g)) => {
                    // M1 diag(y) M1 + M2 diag(y) M2, then times W
                    let p = o.m_z1.scale_columns(self.y.as_slice()).matmul(&o.m_z1).add(
                        &o.m_z2.scale_columns(self.y.as_slice()).matmul(&o.m_z2),
                        1.0,
                        1.0,
                    );
                    let pw = sparse_times(&p, &w.to_linop());
                    linop_sum(&[LinOp::Sparse(first_order(g)), pw])
                }
                None => LinOp::Sparse(CsrMatrix::zeros(n, n)),
            },
            Term::D => LinOp::Sparse(o.m_z1z1.add(&o.m_z2z2, 1.0, 1.0)),
        }
    }
}

/// Everything the estimators need for one `(y(0), y(τ))` pair.
pub struct SardDesign<'a> {
    pub y: DVector<f64>,
    pub dy: DVector<f64>,
    pub tau: f64,
    pub areas: Vec<f64>,
    terms: Vec<Term>,
    regressors: Vec<DVector<f64>>,
    m_dy: Vec<DVector<f64>>,
    maps: CorrectionMaps<'a>,
    assembled: Arc<OnceLock<Vec<LinOp>>>,
}

impl std::fmt::Debug for SardDesign<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SardDesign")
            .field("n", &self.y.len())
            .field("tau", &self.tau)
            .field("terms", &self.terms)
            .finish()
    }
}

pub struct DesignInputs<'a> {
    pub domain: &'a SpatialDomain,
    pub ops: &'a OperatorSet,
    pub w_a: Option<&'a InteractionMatrix>,
    pub w_r: Option<&'a InteractionMatrix>,
    pub s: Option<&'a DVector<f64>>,
}

impl<'a> SardDesign<'a> {
    pub fn new(inputs: &DesignInputs<'a>, y0: &DVector<f64>, y_tau: &DVector<f64>, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(SardError::InvalidArgument("tau must be positive".into()));
        }
        let n = inputs.domain.len();
        check_len("y0", y0.len(), n)?;
        check_len("y_tau", y_tau.len(), n)?;
        let dy = (y_tau - y0) / tau;
        let regs = build_regressors(y0, inputs.s, inputs.ops, inputs.w_a, inputs.w_r)?;
        let maps = CorrectionMaps::new(y0, inputs.s, inputs.ops, inputs.w_a, inputs.w_r)?;
        let mut terms = Vec::new();
        let mut regressors = Vec::new();
        for (t, x) in Term::ALL.into_iter().zip(regs) {
            if let Some(x) = x {
                terms.push(t);
                regressors.push(x);
            }
        }
        let m_dy = terms.iter().map(|&t| maps.apply(t, &dy)).collect();
        Ok(Self {
            y: y0.clone(),
            dy,
            tau,
            areas: inputs.domain.areas().to_vec(),
            terms,
            regressors,
            m_dy,
            maps,
            assembled: Arc::new(OnceLock::new()),
        })
    }

    /// Same initial state and corrections with a different response;
    /// assembled matrices are shared with `self`.
    pub fn with_response(&self, dy: DVector<f64>) -> Result<Self> {
        check_len("dy", dy.len(), self.len())?;
        let m_dy = self.terms.iter().map(|&t| self.maps.apply(t, &dy)).collect();
        Ok(Self {
            y: self.y.clone(),
            dy,
            tau: self.tau,
            areas: self.areas.clone(),
            terms: self.terms.clone(),
            regressors: self.regressors.clone(),
            m_dy,
            maps: self.maps.clone(),
            assembled: Arc::clone(&self.assembled),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn regressor(&self, t: Term) -> Option<&DVector<f64>> {
        self.terms.iter().position(|&u| u == t).map(|k| &self.regressors[k])
    }

    pub fn correction_times_dy(&self, t: Term) -> Option<&DVector<f64>> {
        self.terms.iter().position(|&u| u == t).map(|k| &self.m_dy[k])
    }

    pub fn maps(&self) -> &CorrectionMaps<'a> {
        &self.maps
    }

    /// Assembled `M_j` for the active terms (built once, on demand).
    pub fn corrections(&self) -> &[LinOp] {
        self.assembled
            .get_or_init(|| self.terms.iter().map(|&t| self.maps.assemble(t)).collect())
    }

    /// `[1, y, x_j…]`.
    pub fn exogenous(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut x = DMatrix::zeros(n, 2 + self.terms.len());
        x.column_mut(0).fill(1.0);
        x.set_column(1, &self.y);
        for (k, r) in self.regressors.iter().enumerate() {
            x.set_column(2 + k, r);
        }
        x
    }

    /// `[M_j Δτy…]`.
    pub fn endogenous(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.m_dy)
    }

    pub fn exogenous_names(&self) -> Vec<String> {
        let mut v = vec!["alpha".to_string(), "phi".to_string()];
        v.extend(self.terms.iter().map(|t| format!("gamma_{}", t.label())));
        v
    }

    pub fn endogenous_names(&self) -> Vec<String> {
        self.terms.iter().map(|t| format!("rho_{}", t.label())).collect()
    }

    /// Aggregates `Y(0)` and `Y(τ)`.
    pub fn aggregates(&self) -> (f64, f64) {
        let y0: f64 = self.y.iter().zip(&self.areas).map(|(v, a)| v * a).sum();
        let d: f64 = self.dy.iter().zip(&self.areas).map(|(v, a)| v * a).sum();
        (y0, y0 + self.tau * d)
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Maps a coefficient vector ordered `[exogenous, endogenous]` (the
    /// latter possibly absent) to named tilde coefficients.
    pub fn tilde_from(&self, beta: &[f64], rho: &[f64]) -> TildeCoefficients {
        let mut out = TildeCoefficients {
            alpha: beta[0],
            phi: beta[1],
            ..Default::default()
        };
        for (k, t) in self.terms.iter().enumerate() {
            out.gamma[t.index()] = beta[2 + k];
            if let Some(r) = rho.get(k) {
                out.rho[t.index()] = *r;
            }
        }
        out
    }

    /// Delimited export `id,y0,dy,x_S,x_A,x_R,x_D` (absent terms left empty).
    pub fn write_csv<W: Write>(&self, ids: &[String], mut w: W) -> std::io::Result<()> {
        writeln!(w, "id,y0,dy,x_S,x_A,x_R,x_D")?;
        for i in 0..self.len() {
            write!(w, "{},{:e},{:e}", ids.get(i).map_or("", |s| s.as_str()), self.y[i], self.dy[i])?;
            for t in Term::ALL {
                match self.regressor(t) {
                    Some(x) => write!(w, ",{:e}", x[i])?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}
