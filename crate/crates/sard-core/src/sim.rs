//! Forward integration of the space-discretized growth model
//!
//! `∂t y = a + φ y + γS ∇·(y ∇S) + γA ∇·(y ∇ W_A y) + γR ∇·(y ∇ W_R y) + γD Δy`
//!
//! with classical RK4 on a fixed step bounded by a diffusion stability
//! heuristic, halving locally when a step misbehaves.

use nalgebra::DVector;

use crate::error::{check_len, Result, SardError};
use crate::geometry::{GridInfo, SpatialDomain};
use crate::gfdm::OperatorSet;
use crate::kernels::InteractionMatrix;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Constant source term `a(t, z) = α`.
    pub alpha: f64,
    pub phi: f64,
    pub gamma_s: f64,
    pub gamma_a: f64,
    pub gamma_r: f64,
    pub gamma_d: f64,
    pub h_a: f64,
    pub h_r: f64,
}

impl ModelParams {
    /// Baseline Monte Carlo parameters on the unit torus.
    pub fn monte_carlo_baseline() -> Self {
        Self {
            alpha: 0.01,
            phi: 0.01,
            gamma_s: 0.0,
            gamma_a: -0.00175,
            gamma_r: 0.0025,
            gamma_d: 0.00525,
            h_a: 0.15,
            h_r: 0.4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_d >= 0.0) {
            return Err(SardError::InvalidArgument("gamma_D must be nonnegative".into()));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("phi", self.phi),
            ("gamma_S", self.gamma_s),
            ("gamma_A", self.gamma_a),
            ("gamma_R", self.gamma_r),
        ] {
            if !v.is_finite() {
                return Err(SardError::InvalidArgument(format!("{name} is not finite")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeState {
    pub t: f64,
    pub y: DVector<f64>,
}

/// Separate contributions to `∂t y`.
#[derive(Debug, Clone)]
pub struct RhsTerms {
    pub source: DVector<f64>,
    pub growth: DVector<f64>,
    pub topography: DVector<f64>,
    pub aggregation: DVector<f64>,
    pub repulsion: DVector<f64>,
    pub diffusion: DVector<f64>,
}

impl RhsTerms {
    pub fn total(&self) -> DVector<f64> {
        &self.source + &self.growth + &self.topography + &self.aggregation + &self.repulsion + &self.diffusion
    }

    pub fn reallocation(&self) -> [&DVector<f64>; 4] {
        [&self.topography, &self.aggregation, &self.repulsion, &self.diffusion]
    }
}

/// `M1 (y ⊙ M1 g) + M2 (y ⊙ M2 g)`: the discrete `∇·(y ∇g)`.
pub fn divergence_term(ops: &OperatorSet, y: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
    let g1 = ops.m_z1.mul_vec(g);
    let g2 = ops.m_z2.mul_vec(g);
    ops.m_z1.mul_vec(&y.component_mul(&g1)) + ops.m_z2.mul_vec(&y.component_mul(&g2))
}

/// Right-hand side with cached pieces; reuse across steps.
pub struct Dynamics<'a> {
    pub params: ModelParams,
    ops: &'a OperatorSet,
    lap: CsrMatrix,
    w_a: Option<&'a InteractionMatrix>,
    w_r: Option<&'a InteractionMatrix>,
    s_grad: Option<(DVector<f64>, DVector<f64>)>,
}

impl<'a> Dynamics<'a> {
    pub fn new(
        params: ModelParams,
        ops: &'a OperatorSet,
        w_a: Option<&'a InteractionMatrix>,
        w_r: Option<&'a InteractionMatrix>,
        s: Option<&DVector<f64>>,
    ) -> Result<Self> {
        params.validate()?;
        let n = ops.len();
        if params.gamma_a != 0.0 && w_a.is_none() {
            return Err(SardError::InvalidArgument("gamma_A set but no aggregation kernel".into()));
        }
        if params.gamma_r != 0.0 && w_r.is_none() {
            return Err(SardError::InvalidArgument("gamma_R set but no repulsion kernel".into()));
        }
        for w in [w_a, w_r].into_iter().flatten() {
            check_len("interaction matrix", w.len(), n)?;
        }
        let s_grad = match s {
            Some(s) => {
                check_len("s", s.len(), n)?;
                Some((ops.m_z1.mul_vec(s), ops.m_z2.mul_vec(s)))
            }
            None => None,
        };
        Ok(Self {
            params,
            ops,
            lap: ops.laplacian(),
            w_a,
            w_r,
            s_grad,
        })
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn terms(&self, y: &DVector<f64>) -> Result<RhsTerms> {
        check_len("y", y.len(), self.len())?;
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(SardError::NonFiniteField(i));
        }
        let p = &self.params;
        let n = y.len();
        let zero = || DVector::zeros(n);
        let topography = match (&self.s_grad, p.gamma_s) {
            (Some((s1, s2)), g) if g != 0.0 => {
                (self.ops.m_z1.mul_vec(&y.component_mul(s1)) + self.ops.m_z2.mul_vec(&y.component_mul(s2))) * g
            }
            _ => zero(),
        };
        let interaction = |w: Option<&InteractionMatrix>, g: f64| match w {
            Some(w) if g != 0.0 => divergence_term(self.ops, y, &w.apply(y)) * g,
            _ => zero(),
        };
        let out = RhsTerms {
            source: DVector::from_element(n, p.alpha),
            growth: y * p.phi,
            topography,
            aggregation: interaction(self.w_a, p.gamma_a),
            repulsion: interaction(self.w_r, p.gamma_r),
            diffusion: if p.gamma_d != 0.0 { self.lap.mul_vec(y) * p.gamma_d } else { zero() },
        };
        Ok(out)
    }

    pub fn rhs(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let t = self.terms(y)?;
        let out = t.total();
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(SardError::NonFiniteField(i));
        }
        Ok(out)
    }

    /// Largest step allowed by the diffusion heuristic, `c·h²/γD` on a
    /// regular lattice. Uses the Gershgorin bound of the discrete
    /// Laplacian so that it also applies to scattered nodes.
    pub fn stable_dt(&self, cfl: f64) -> f64 {
        let g = self.lap.norm_inf();
        if self.params.gamma_d > 0.0 && g > 0.0 {
            cfl * 8.0 / (self.params.gamma_d * g)
        } else {
            f64::INFINITY
        }
    }

    fn rk4_step(&self, y: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
        let k1 = self.rhs(y)?;
        let k2 = self.rhs(&(y + &k1 * (0.5 * dt)))?;
        let k3 = self.rhs(&(y + &k2 * (0.5 * dt)))?;
        let k4 = self.rhs(&(y + &k3 * dt))?;
        Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    /// Requested step; clipped to the stability bound.
    pub dt: Option<f64>,
    /// Coefficient `c` of the `c·h²/γD` bound.
    pub cfl: f64,
    /// Fallback step when there is no diffusion.
    pub max_dt: f64,
    /// How many times a misbehaving step may be halved.
    pub max_halvings: u32,
    /// A step whose largest change exceeds this fraction of the field's
    /// sup-norm is retried with half the step.
    pub max_relative_change: f64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            dt: None,
            cfl: 0.2,
            max_dt: 0.01,
            max_halvings: 12,
            max_relative_change: 0.5,
        }
    }
}

/// Integrates from `state0` and returns the states at `sample_times`
/// (sorted, all `>= state0.t`).
pub fn integrate(dynamics: &Dynamics, state0: &PdeState, sample_times: &[f64], opts: IntegrateOptions) -> Result<Vec<PdeState>> {
    check_len("y0", state0.y.len(), dynamics.len())?;
    let dt_bound = dynamics.stable_dt(opts.cfl).min(opts.max_dt.max(f64::MIN_POSITIVE));
    let dt = opts.dt.map_or(dt_bound, |d| d.min(dt_bound));
    if !(dt > 0.0) {
        return Err(SardError::InvalidArgument("time step must be positive".into()));
    }
    let mut times = sample_times.to_vec();
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < state0.t) {
        return Err(SardError::InvalidArgument("sample times must be sorted and not precede t0".into()));
    }
    times.dedup();
    let mut out = Vec::with_capacity(times.len());
    let mut t = state0.t;
    let mut y = state0.y.clone();
    for &target in &times {
        while target - t > 1e-12 * target.abs().max(1.0) {
            let h = dt.min(target - t);
            y = guarded_step(dynamics, &y, t, h, &opts)?;
            t += h;
        }
        t = target;
        out.push(PdeState { t, y: y.clone() });
    }
    Ok(out)
}

fn guarded_step(dynamics: &Dynamics, y: &DVector<f64>, t: f64, h: f64, opts: &IntegrateOptions) -> Result<DVector<f64>> {
    let scale = y.amax().max(1e-300);
    for level in 0..=opts.max_halvings {
        let pieces = 1u64 << level;
        let sub = h / pieces as f64;
        let mut cur = y.clone();
        let mut ok = true;
        for _ in 0..pieces {
            match dynamics.rk4_step(&cur, sub) {
                Ok(next) => {
                    let change = (&next - &cur).amax();
                    if !next.iter().all(|v| v.is_finite()) || change > opts.max_relative_change * scale.max(cur.amax()) {
                        ok = false;
                        break;
                    }
                    cur = next;
                }
                Err(SardError::NonFiniteField(_)) => {
                    ok = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if ok {
            return Ok(cur);
        }
    }
    Err(SardError::StabilityViolation {
        t,
        reason: format!("step {h:.3e} still unstable after {} halvings", opts.max_halvings),
    })
}

/// Aggregate closed form for the uncoupled model,
/// `Y(t) = (Y0 + a/φ) e^{φt} − a/φ` with `a = α |Ω|`.
pub fn aggregate_closed_form(y0: f64, alpha_total: f64, phi: f64, t: f64) -> f64 {
    if phi == 0.0 {
        return y0 + alpha_total * t;
    }
    (y0 + alpha_total / phi) * (phi * t).exp() - alpha_total / phi
}

/// Gaussian bump used to build initial fields; distances honour the torus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub center: [f64; 2],
    pub amplitude: f64,
    pub sigma: f64,
}

/// Constant base level plus Gaussian bumps.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakField {
    pub base: f64,
    pub bumps: Vec<Bump>,
}

impl PeakField {
    /// Two close peaks on the right that merge under aggregation and a
    /// wider one on the left that flattens under repulsion and diffusion.
    pub fn three_peaks() -> Self {
        Self {
            base: 0.5,
            bumps: vec![
                Bump {
                    center: [0.7, 0.4],
                    amplitude: 8.0,
                    sigma: 0.05,
                },
                Bump {
                    center: [0.7, 0.6],
                    amplitude: 8.0,
                    sigma: 0.05,
                },
                Bump {
                    center: [0.28, 0.5],
                    amplitude: 6.0,
                    sigma: 0.07,
                },
            ],
        }
    }

    pub fn value(&self, domain: &SpatialDomain, z: [f64; 2]) -> f64 {
        self.base
            + self
                .bumps
                .iter()
                .map(|b| {
                    let d = domain.offset_between(b.center, z);
                    b.amplitude * (-(d[0] * d[0] + d[1] * d[1]) / (2.0 * b.sigma * b.sigma)).exp()
                })
                .sum::<f64>()
    }

    pub fn sample(&self, domain: &SpatialDomain) -> DVector<f64> {
        DVector::from_iterator(domain.len(), domain.points().iter().map(|&p| self.value(domain, p)))
    }
}

/// Flat plateau on the square `[c-half, c+half]²` with linear ramps of
/// width `ramp` down to zero.
pub fn plateau_field(domain: &SpatialDomain, level: f64, center: [f64; 2], half: f64, ramp: f64) -> DVector<f64> {
    let prof = |u: f64| ((half + ramp - u.abs()) / ramp).clamp(0.0, 1.0);
    DVector::from_iterator(
        domain.len(),
        domain.points().iter().map(|p| level * prof(p[0] - center[0]) * prof(p[1] - center[1])),
    )
}

/// Averages a fine lattice field onto a coarser lattice covering the same
/// rectangle, weighting by exact cell overlaps.
pub fn coarsen(fine: &GridInfo, y: &DVector<f64>, coarse: &GridInfo) -> Result<DVector<f64>> {
    check_len("fine field", y.len(), fine.nx * fine.ny)?;
    let wx = overlap_weights(fine.nx, fine.dx, coarse.nx, coarse.dx)?;
    let wy = overlap_weights(fine.ny, fine.dy, coarse.ny, coarse.dy)?;
    let mut out = DVector::zeros(coarse.nx * coarse.ny);
    for (cy, rowy) in wy.iter().enumerate() {
        for (cx, rowx) in wx.iter().enumerate() {
            let mut acc = 0.0;
            for &(fy, ay) in rowy {
                for &(fx, ax) in rowx {
                    acc += ay * ax * y[fy * fine.nx + fx];
                }
            }
            out[coarse.index(cx, cy)] = acc;
        }
    }
    Ok(out)
}

/// For each coarse interval, the fine intervals it overlaps and the
/// fraction of the coarse interval each covers.
fn overlap_weights(nf: usize, df: f64, nc: usize, dc: f64) -> Result<Vec<Vec<(usize, f64)>>> {
    if ((nf as f64 * df) - (nc as f64 * dc)).abs() > 1e-9 * (nf as f64 * df) {
        return Err(SardError::InvalidArgument("grids cover different extents".into()));
    }
    Ok((0..nc)
        .map(|c| {
            let (a, b) = (c as f64 * dc, (c + 1) as f64 * dc);
            let f0 = ((a / df).floor() as usize).min(nf - 1);
            let f1 = ((b / df).ceil() as usize).min(nf);
            (f0..f1)
                .filter_map(|f| {
                    let lo = (f as f64 * df).max(a);
                    let hi = ((f + 1) as f64 * df).min(b);
                    (hi > lo + 1e-15 * dc).then_some((f, (hi - lo) / dc))
                })
                .collect()
        })
        .collect())
}

/// Connected components (8-neighbourhood, periodic when requested) of
/// lattice cells whose value exceeds `threshold`.
pub fn count_clusters(grid: &GridInfo, y: &DVector<f64>, threshold: f64, periodic: bool) -> usize {
    let (nx, ny) = (grid.nx as isize, grid.ny as isize);
    let mut label = vec![false; y.len()];
    let mut count = 0;
    for start in 0..y.len() {
        if label[start] || y[start] <= threshold {
            continue;
        }
        count += 1;
        label[start] = true;
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            let (ux, uy) = ((u % grid.nx) as isize, (u / grid.nx) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (mut x, mut yy) = (ux + dx, uy + dy);
                    if periodic {
                        x = x.rem_euclid(nx);
                        yy = yy.rem_euclid(ny);
                    } else if x < 0 || yy < 0 || x >= nx || yy >= ny {
                        continue;
                    }
                    let v = (yy * nx + x) as usize;
                    if !label[v] && y[v] > threshold {
                        label[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
    }
    count
}
