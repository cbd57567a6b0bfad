//! Generalized finite differences: per-star weighted least-squares fit of
//! a second-order Taylor expansion, assembled into sparse derivative
//! operators.

use nalgebra::{DMatrix, DVector, Matrix5, SymmetricEigen, Vector5};
use rayon::prelude::*;

use crate::error::{Result, SardError};
use crate::geometry::{build_stars, SpatialDomain, Star};
use crate::sparse::CsrMatrix;

/// Condition number of the (scaled) normal matrix above which a star is
/// rejected.
pub const SINGULAR_STAR_COND: f64 = 1e12;

/// Default ratio between the weighting radius and the farthest star
/// member. With a ratio of exactly one the farthest members get zero
/// weight, which makes the regular eight-member lattice star singular.
pub const DEFAULT_RADIUS_FACTOR: f64 = 1.5;

/// Quartic spline weight `1 - 6r^2 + 8r^3 - 3r^4` with `r = d/dm`.
pub fn weight(d: f64, dm: f64) -> Result<f64> {
    if !(dm > 0.0) || d < 0.0 || d > dm * (1.0 + 1e-12) {
        return Err(SardError::OutOfRange(d / dm));
    }
    let r = (d / dm).min(1.0);
    let r2 = r * r;
    Ok(1.0 - 6.0 * r2 + 8.0 * r2 * r - 3.0 * r2 * r2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GfdmOptions {
    pub n_s: usize,
    pub radius_factor: f64,
}

impl Default for GfdmOptions {
    fn default() -> Self {
        Self {
            n_s: 8,
            radius_factor: DEFAULT_RADIUS_FACTOR,
        }
    }
}

/// Normal equations of one star. Rows of `d` are the partials
/// `[∂1, ∂2, ∂11, ∂22, ∂12]`; column 0 multiplies the centre value and
/// column `j` the `j`-th member.
#[derive(Debug, Clone)]
pub struct StarSystem {
    pub a: Matrix5<f64>,
    pub b: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub cond: f64,
}

pub const ROW_Z1: usize = 0;
pub const ROW_Z2: usize = 1;
pub const ROW_Z1Z1: usize = 2;
pub const ROW_Z2Z2: usize = 3;
pub const ROW_Z1Z2: usize = 4;

pub fn assemble_star(star: &Star, radius_factor: f64) -> Result<StarSystem> {
    let n = star.members.len();
    if n < 5 {
        return Err(SardError::SingularStar {
            location: star.center,
            cond: f64::INFINITY,
        });
    }
    if !(radius_factor >= 1.0) {
        return Err(SardError::InvalidArgument("radius factor must be >= 1".into()));
    }
    let dm = star.dm * radius_factor;
    if !(dm > 0.0) {
        return Err(SardError::SingularStar {
            location: star.center,
            cond: f64::INFINITY,
        });
    }
    // Work in offsets scaled by dm so that the normal matrix is O(1).
    let mut a = Matrix5::<f64>::zeros();
    let mut b = DMatrix::<f64>::zeros(5, n + 1);
    for (j, off) in star.offsets.iter().enumerate() {
        let (h, k) = (off[0] / dm, off[1] / dm);
        let w = weight(h.hypot(k), 1.0)?;
        let w2 = w * w;
        let p = Vector5::new(h, k, 0.5 * h * h, 0.5 * k * k, h * k);
        a += w2 * p * p.transpose();
        for r in 0..5 {
            b[(r, j + 1)] = w2 * p[r];
            b[(r, 0)] -= w2 * p[r];
        }
    }
    let eig = SymmetricEigen::new(a).eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v.abs()), hi.max(v.abs())));
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(cond <= SINGULAR_STAR_COND) {
        return Err(SardError::SingularStar {
            location: star.center,
            cond,
        });
    }
    let chol = a.cholesky().ok_or(SardError::SingularStar {
        location: star.center,
        cond,
    })?;
    let mut d = DMatrix::<f64>::zeros(5, n + 1);
    for c in 0..=n {
        let col = Vector5::from_iterator(b.column(c).iter().copied());
        let sol = chol.solve(&col);
        d.column_mut(c).copy_from(&sol);
    }
    // Undo the scaling: first partials carry 1/dm, second partials 1/dm^2.
    for c in 0..=n {
        d[(ROW_Z1, c)] /= dm;
        d[(ROW_Z2, c)] /= dm;
        for r in [ROW_Z1Z1, ROW_Z2Z2, ROW_Z1Z2] {
            d[(r, c)] /= dm * dm;
        }
    }
    // A and B are reported in physical units.
    let mut s = Vector5::new(dm, dm, dm * dm, dm * dm, dm * dm);
    s = s.map(|v| 1.0 / v);
    let a_phys = Matrix5::from_fn(|i, j| a[(i, j)] * s[i] * s[j]);
    let b_phys = DMatrix::from_fn(5, n + 1, |i, j| b[(i, j)] * s[i]);
    Ok(StarSystem {
        a: a_phys,
        b: b_phys,
        d,
        cond,
    })
}

/// Sparse derivative operators; row `i` touches only `i` and its star.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub m_z1: CsrMatrix,
    pub m_z2: CsrMatrix,
    pub m_z1z1: CsrMatrix,
    pub m_z2z2: CsrMatrix,
    /// Cross partial; exposed for completeness, not used by the model.
    pub m_z1z2: CsrMatrix,
}

impl OperatorSet {
    /// `M_z1z1 + M_z2z2`.
    pub fn laplacian(&self) -> CsrMatrix {
        self.m_z1z1.add(&self.m_z2z2, 1.0, 1.0)
    }

    pub fn len(&self) -> usize {
        self.m_z1.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn build_operators(stars: &[Star], radius_factor: f64) -> Result<OperatorSet> {
    let n = stars.len();
    let systems: Vec<Result<StarSystem>> = stars.par_iter().map(|s| assemble_star(s, radius_factor)).collect();
    let mut rows: [Vec<Vec<(usize, f64)>>; 5] = Default::default();
    for r in rows.iter_mut() {
        r.reserve(n);
    }
    for (star, sys) in stars.iter().zip(systems) {
        let sys = sys?;
        for (r, dst) in rows.iter_mut().enumerate() {
            let mut row = Vec::with_capacity(star.members.len() + 1);
            row.push((star.center, sys.d[(r, 0)]));
            for (j, &m) in star.members.iter().enumerate() {
                row.push((m, sys.d[(r, j + 1)]));
            }
            dst.push(row);
        }
    }
    let [r1, r2, r11, r22, r12] = rows;
    Ok(OperatorSet {
        m_z1: CsrMatrix::from_rows(n, r1),
        m_z2: CsrMatrix::from_rows(n, r2),
        m_z1z1: CsrMatrix::from_rows(n, r11),
        m_z2z2: CsrMatrix::from_rows(n, r22),
        m_z1z2: CsrMatrix::from_rows(n, r12),
    })
}

/// Stars plus operators in one call.
pub fn operators_for(domain: &SpatialDomain, opts: GfdmOptions) -> Result<OperatorSet> {
    let stars = build_stars(domain, opts.n_s)?;
    build_operators(&stars, opts.radius_factor)
}

/// Estimated partials at every location, `[∂1, ∂2, ∂11, ∂22, ∂12]`.
pub fn partials(ops: &OperatorSet, y: &DVector<f64>) -> [DVector<f64>; 5] {
    [
        ops.m_z1.mul_vec(y),
        ops.m_z2.mul_vec(y),
        ops.m_z1z1.mul_vec(y),
        ops.m_z2z2.mul_vec(y),
        ops.m_z1z2.mul_vec(y),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_domain, Topology};
    use nalgebra::SVD;

    #[test]
    fn weight_polynomial() {
        assert_eq!(weight(0.0, 2.0).unwrap(), 1.0);
        assert!(weight(2.0, 2.0).unwrap().abs() < 1e-15);
        assert!((weight(1.0, 2.0).unwrap() - 0.3125).abs() < 1e-15);
        assert!(weight(2.5, 2.0).is_err());
        assert!(weight(1.0, 0.0).is_err());
    }

    fn grid_star(h: f64) -> Star {
        let mut offsets = vec![];
        for dy in [-1.0, 0.0, 1.0] {
            for dx in [-1.0, 0.0, 1.0] {
                if (dx, dy) != (0.0, 0.0) {
                    offsets.push([dx * h, dy * h]);
                }
            }
        }
        Star {
            center: 0,
            members: (1..=8).collect(),
            offsets,
            dm: 2f64.sqrt() * h,
        }
    }

    /// Weighted least squares through the pseudo-inverse of the weighted
    /// Taylor matrix, independent of the normal-equation route.
    fn svd_oracle(star: &Star, factor: f64) -> DMatrix<f64> {
        let n = star.members.len();
        let dm = star.dm * factor;
        let mut p = DMatrix::zeros(n, 5);
        let mut w = DMatrix::zeros(n, n);
        for (j, o) in star.offsets.iter().enumerate() {
            let (h, k) = (o[0], o[1]);
            let r = h.hypot(k) / dm;
            w[(j, j)] = 1.0 - 6.0 * r * r + 8.0 * r.powi(3) - 3.0 * r.powi(4);
            for (c, v) in [h, k, h * h / 2.0, k * k / 2.0, h * k].into_iter().enumerate() {
                p[(j, c)] = v;
            }
        }
        let wp = &w * &p;
        let pinv = SVD::new(wp, true, true).pseudo_inverse(1e-14).unwrap();
        let g = pinv * &w;
        // members carry g, centre carries minus the row sum
        let mut d = DMatrix::zeros(5, n + 1);
        for r in 0..5 {
            let s: f64 = g.row(r).iter().sum();
            d[(r, 0)] = -s;
            for j in 0..n {
                d[(r, j + 1)] = g[(r, j)];
            }
        }
        d
    }

    #[test]
    fn symmetric_grid_star_matches_oracle() {
        let h = 0.1;
        let star = grid_star(h);
        let sys = assemble_star(&star, DEFAULT_RADIUS_FACTOR).unwrap();
        let oracle = svd_oracle(&star, DEFAULT_RADIUS_FACTOR);
        assert!((&sys.d - &oracle).abs().max() < 1e-9 * oracle.abs().max());
        // antisymmetric first-derivative stencil; axis and diagonal weights
        let e = sys.d[(ROW_Z1, 5)]; // member (+h, 0)
        let w = sys.d[(ROW_Z1, 4)]; // member (-h, 0)
        assert!((e + w).abs() < 1e-12);
        assert!(sys.d[(ROW_Z1, 0)].abs() < 1e-12);
        assert!((e * h - 0.4187).abs() < 5e-4);
    }

    #[test]
    fn first_derivative_tends_to_central_difference_as_radius_shrinks() {
        let h = 0.1;
        let star = grid_star(h);
        let sys = assemble_star(&star, 1.05).unwrap();
        assert!((sys.d[(ROW_Z1, 5)] * 2.0 * h - 1.0).abs() < 0.02);
    }

    #[test]
    fn collinear_star_is_singular() {
        let star = Star {
            center: 3,
            members: (0..6).collect(),
            offsets: (1..=6).map(|i| [i as f64 * 0.1, 0.0]).collect(),
            dm: 0.6,
        };
        assert!(matches!(assemble_star(&star, 1.5), Err(SardError::SingularStar { location: 3, .. })));
    }

    #[test]
    fn quadratic_second_partial_is_two() {
        let pts = vec![[0.0, 0.0], [0.3, 0.1], [-0.2, 0.25], [0.05, -0.3], [-0.27, -0.11], [0.18, 0.33], [0.31, -0.2], [-0.1, 0.4]];
        let d = build_domain(pts, vec![1.0; 8], Topology::Planar).unwrap();
        let stars = build_stars(&d, 7).unwrap();
        let sys = assemble_star(&stars[0], 1.5).unwrap();
        let mut vals = vec![d.point(0)[0].powi(2)];
        vals.extend(stars[0].members.iter().map(|&j| d.point(j)[0].powi(2)));
        let est = &sys.d * DVector::from_vec(vals);
        assert!((est[ROW_Z1Z1] - 2.0).abs() < 1e-9);
        assert!(est[ROW_Z2Z2].abs() < 1e-9);
    }

    #[test]
    fn operators_annihilate_constants_and_fit_affine() {
        let d = SpatialDomain::uniform_grid(9, 9, 1.0, 1.0, Topology::Planar).unwrap();
        let ops = operators_for(&d, GfdmOptions::default()).unwrap();
        for m in [&ops.m_z1, &ops.m_z2, &ops.m_z1z1, &ops.m_z2z2, &ops.m_z1z2] {
            assert!(m.row_sums().iter().all(|s| s.abs() < 1e-10));
            for i in 0..m.nrows() {
                assert!(m.row(i).0.len() <= 9);
            }
        }
        let y = DVector::from_iterator(d.len(), d.points().iter().map(|p| 3.0 * p[0] + 2.0 * p[1]));
        let [g1, g2, ..] = partials(&ops, &y);
        assert!(g1.iter().all(|v| (v - 3.0).abs() < 1e-9));
        assert!(g2.iter().all(|v| (v - 2.0).abs() < 1e-9));
    }
}
