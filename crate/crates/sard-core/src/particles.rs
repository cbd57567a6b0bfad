//! Interacting-agent approximation of the conservative dynamics on a torus:
//! `dX_i = −γS ∇S dt − γA (1/N) Σ_j ∇K_hA(X_i − X_j) dt
//!         − γR (1/N) Σ_j ∇K_hR(X_i − X_j) dt + sqrt(2 γD) dB_i`.

use std::sync::Arc;

use nalgebra::DVector;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Result, SardError};
use crate::geometry::{SpatialDomain, Topology};
use crate::kernels::KernelSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleParams {
    pub gamma_a: f64,
    pub gamma_r: f64,
    pub gamma_d: f64,
    pub h_a: f64,
    pub h_r: f64,
}

pub struct ParticleEnsemble {
    positions: Vec<[f64; 2]>,
    width: f64,
    height: f64,
    rng: ChaCha8Rng,
    seed: u64,
}

impl std::fmt::Debug for ParticleEnsemble {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParticleEnsemble")
            .field("agents", &self.positions.len())
            .field("width", &self.width)
            .field("height", &self.height)
            .field("seed", &self.seed)
            .finish()
    }
}

fn wrap_into(x: f64, w: f64) -> f64 {
    let r = x.rem_euclid(w);
    // rem_euclid can round up to w itself for tiny negative inputs
    if r >= w {
        0.0
    } else {
        r
    }
}

fn min_image(d: f64, w: f64) -> f64 {
    d - w * (d / w).round()
}

impl ParticleEnsemble {
    pub fn new(positions: Vec<[f64; 2]>, width: f64, height: f64, seed: u64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) {
            return Err(SardError::InvalidArgument("torus sides must be positive".into()));
        }
        let positions = positions.into_iter().map(|p| [wrap_into(p[0], width), wrap_into(p[1], height)]).collect();
        Ok(Self {
            positions,
            width,
            height,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
        })
    }

    /// Draws `n` agents from the density `y` on a lattice torus: a cell is
    /// picked with probability proportional to `y_i A_i`, then a uniform
    /// point inside it.
    pub fn sample_from_field(domain: &SpatialDomain, y: &DVector<f64>, n: usize, seed: u64) -> Result<Self> {
        let (Some(grid), Topology::Torus { width, height }) = (domain.grid(), domain.topology()) else {
            return Err(SardError::InvalidArgument("sampling needs a lattice on a torus".into()));
        };
        if y.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(SardError::InvalidArgument("density must be finite and nonnegative".into()));
        }
        let w: Vec<f64> = y.iter().zip(domain.areas()).map(|(v, a)| v * a).collect();
        let pick = WeightedIndex::new(&w).map_err(|e| SardError::InvalidArgument(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions = (0..n)
            .map(|_| {
                let (ix, iy) = grid.cell(pick.sample(&mut rng));
                [
                    grid.origin[0] + (ix as f64 + rng.random::<f64>()) * grid.dx,
                    grid.origin[1] + (iy as f64 + rng.random::<f64>()) * grid.dy,
                ]
            })
            .collect();
        // the stepping stream is decorrelated from the sampling stream
        Self::new(positions, width, height, seed.wrapping_add(0x9e37_79b9_7f4a_7c15))
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    /// Interaction drift of every agent. Each agent's sum runs over a
    /// fixed cell order, so results do not depend on the thread count.
    pub fn drift(&self, p: &ParticleParams) -> Vec<[f64; 2]> {
        let n = self.positions.len();
        if n == 0 {
            return Vec::new();
        }
        let ka = KernelSpec::new(p.h_a).ok();
        let kr = KernelSpec::new(p.h_r).ok();
        let cutoff = p.h_a.max(p.h_r);
        let cells = CellList::new(&self.positions, self.width, self.height, cutoff);
        let (ha2, hr2) = (p.h_a * p.h_a, p.h_r * p.h_r);
        let inv_n = 1.0 / n as f64;
        (0..n)
            .into_par_iter()
            .map(|i| {
                let xi = self.positions[i];
                let mut ga = [0.0; 2];
                let mut gr = [0.0; 2];
                cells.for_each_near(xi, |j, xj| {
                    if j == i {
                        return;
                    }
                    let z = [min_image(xi[0] - xj[0], self.width), min_image(xi[1] - xj[1], self.height)];
                    let r2 = z[0] * z[0] + z[1] * z[1];
                    if r2 < ha2 {
                        if let Some(k) = &ka {
                            let g = k.gradient(z);
                            ga[0] += g[0];
                            ga[1] += g[1];
                        }
                    }
                    if r2 < hr2 {
                        if let Some(k) = &kr {
                            let g = k.gradient(z);
                            gr[0] += g[0];
                            gr[1] += g[1];
                        }
                    }
                });
                [
                    -(p.gamma_a * ga[0] + p.gamma_r * gr[0]) * inv_n,
                    -(p.gamma_a * ga[1] + p.gamma_r * gr[1]) * inv_n,
                ]
            })
            .collect()
    }

    /// One Euler–Maruyama step with the exact pairwise drift.
    pub fn step(&mut self, p: &ParticleParams, dt: f64) -> Result<()> {
        check_step(p, dt)?;
        let drift = if p.gamma_a == 0.0 && p.gamma_r == 0.0 {
            vec![[0.0; 2]; self.len()]
        } else {
            self.drift(p)
        };
        self.advance(&drift, p.gamma_d, dt);
        Ok(())
    }

    pub fn run(&mut self, p: &ParticleParams, dt: f64, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step(p, dt)?;
        }
        Ok(())
    }

    /// As [`run`](Self::run) with the drift evaluated on a mesh.
    pub fn run_mesh(&mut self, mesh: &MeshDrift, dt: f64, steps: usize) -> Result<()> {
        check_step(&mesh.params, dt)?;
        if mesh.width != self.width || mesh.height != self.height {
            return Err(SardError::InvalidArgument("mesh and ensemble live on different tori".into()));
        }
        for _ in 0..steps {
            let drift = mesh.drift(&self.positions);
            self.advance(&drift, mesh.params.gamma_d, dt);
        }
        Ok(())
    }

    fn advance(&mut self, drift: &[[f64; 2]], gamma_d: f64, dt: f64) {
        let sd = (2.0 * gamma_d * dt).sqrt();
        for (x, d) in self.positions.iter_mut().zip(drift) {
            let e0: f64 = self.rng.sample(StandardNormal);
            let e1: f64 = self.rng.sample(StandardNormal);
            x[0] = wrap_into(x[0] + d[0] * dt + sd * e0, self.width);
            x[1] = wrap_into(x[1] + d[1] * dt + sd * e1, self.height);
        }
    }

    /// Empirical density on a lattice: count per cell over `N A_i`.
    pub fn histogram(&self, domain: &SpatialDomain) -> Result<DVector<f64>> {
        let Some(grid) = domain.grid() else {
            return Err(SardError::InvalidArgument("histogram needs a lattice domain".into()));
        };
        let mut counts = DVector::zeros(domain.len());
        for x in &self.positions {
            let ix = (((x[0] - grid.origin[0]) / grid.dx).floor() as isize).clamp(0, grid.nx as isize - 1) as usize;
            let iy = (((x[1] - grid.origin[1]) / grid.dy).floor() as isize).clamp(0, grid.ny as isize - 1) as usize;
            counts[grid.index(ix, iy)] += 1.0;
        }
        let n = self.positions.len().max(1) as f64;
        for (c, a) in counts.iter_mut().zip(domain.areas()) {
            *c /= n * a;
        }
        Ok(counts)
    }
}

fn check_step(p: &ParticleParams, dt: f64) -> Result<()> {
    if !(dt > 0.0) || p.gamma_d < 0.0 {
        return Err(SardError::InvalidArgument("need dt > 0 and gamma_D >= 0".into()));
    }
    Ok(())
}

/// Particle-mesh drift: agents are deposited on an `m × m` mesh with
/// cloud-in-cell weights, the mesh mass is convolved with
/// `γA ∇K_hA + γR ∇K_hR` by FFT, and the result is read back with the same
/// weights. Cost is `O(N + m² log m)` per step instead of `O(N²)`.
pub struct MeshDrift {
    params: ParticleParams,
    m: usize,
    width: f64,
    height: f64,
    grad_hat: [Vec<Complex<f64>>; 2],
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl MeshDrift {
    pub fn new(params: &ParticleParams, width: f64, height: f64, m: usize) -> Result<Self> {
        if m < 4 || !(width > 0.0 && height > 0.0) {
            return Err(SardError::InvalidArgument("mesh needs m >= 4 and positive sides".into()));
        }
        let ka = KernelSpec::new(params.h_a)?;
        let kr = KernelSpec::new(params.h_r)?;
        let (dx, dy) = (width / m as f64, height / m as f64);
        let mut planner = FftPlanner::new();
        let mut out = Self {
            params: params.clone(),
            m,
            width,
            height,
            grad_hat: [Vec::new(), Vec::new()],
            fwd: planner.plan_fft_forward(m),
            inv: planner.plan_fft_inverse(m),
        };
        let mut gx = vec![Complex::new(0.0, 0.0); m * m];
        let mut gy = gx.clone();
        for iy in 0..m {
            for ix in 0..m {
                let z = [min_image(ix as f64 * dx, width), min_image(iy as f64 * dy, height)];
                let (a, r) = (ka.gradient(z), kr.gradient(z));
                gx[iy * m + ix].re = params.gamma_a * a[0] + params.gamma_r * r[0];
                gy[iy * m + ix].re = params.gamma_a * a[1] + params.gamma_r * r[1];
            }
        }
        out.fft2(&mut gx, false);
        out.fft2(&mut gy, false);
        out.grad_hat = [gx, gy];
        Ok(out)
    }

    fn fft2(&self, buf: &mut [Complex<f64>], inverse: bool) {
        let f = if inverse { &self.inv } else { &self.fwd };
        let m = self.m;
        for row in buf.chunks_mut(m) {
            f.process(row);
        }
        let mut col = vec![Complex::new(0.0, 0.0); m];
        for x in 0..m {
            for y in 0..m {
                col[y] = buf[y * m + x];
            }
            f.process(&mut col);
            for y in 0..m {
                buf[y * m + x] = col[y];
            }
        }
    }

    /// Lower-left mesh node of `x` and the bilinear weights of the four
    /// surrounding nodes.
    fn stencil(&self, x: [f64; 2]) -> ([usize; 4], [f64; 4]) {
        let m = self.m;
        let u = x[0] / self.width * m as f64;
        let v = x[1] / self.height * m as f64;
        let (i0, j0) = (u.floor(), v.floor());
        let (fu, fv) = (u - i0, v - j0);
        let i0 = (i0 as isize).rem_euclid(m as isize) as usize;
        let j0 = (j0 as isize).rem_euclid(m as isize) as usize;
        let (i1, j1) = ((i0 + 1) % m, (j0 + 1) % m);
        (
            [j0 * m + i0, j0 * m + i1, j1 * m + i0, j1 * m + i1],
            [(1.0 - fu) * (1.0 - fv), fu * (1.0 - fv), (1.0 - fu) * fv, fu * fv],
        )
    }

    pub fn drift(&self, positions: &[[f64; 2]]) -> Vec<[f64; 2]> {
        if positions.is_empty() {
            return Vec::new();
        }
        let m = self.m;
        let inv_n = 1.0 / positions.len() as f64;
        let mut mass = vec![Complex::new(0.0, 0.0); m * m];
        for &x in positions {
            let (idx, w) = self.stencil(x);
            for k in 0..4 {
                mass[idx[k]].re += w[k] * inv_n;
            }
        }
        self.fft2(&mut mass, false);
        let scale = 1.0 / (m * m) as f64;
        let fields: Vec<Vec<f64>> = self
            .grad_hat
            .iter()
            .map(|g| {
                let mut buf: Vec<Complex<f64>> = mass.iter().zip(g).map(|(a, b)| a * b).collect();
                self.fft2(&mut buf, true);
                buf.iter().map(|c| c.re * scale).collect()
            })
            .collect();
        positions
            .iter()
            .map(|&x| {
                let (idx, w) = self.stencil(x);
                let mut d = [0.0; 2];
                for k in 0..4 {
                    d[0] -= w[k] * fields[0][idx[k]];
                    d[1] -= w[k] * fields[1][idx[k]];
                }
                d
            })
            .collect()
    }
}

/// `Σ_i |a_i − b_i| A_i`.
pub fn l1_distance(domain: &SpatialDomain, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).zip(domain.areas()).map(|((x, y), w)| (x - y).abs() * w).sum()
}

/// Buckets of side at least `cutoff`; neighbour cells are deduplicated so
/// coarse bucketings (fewer than three per axis) never double count.
struct CellList {
    n: [usize; 2],
    side: [f64; 2],
    start: Vec<usize>,
    members: Vec<(usize, [f64; 2])>,
}

impl CellList {
    fn new(pos: &[[f64; 2]], w: f64, h: f64, cutoff: f64) -> Self {
        let nx = ((w / cutoff).floor() as usize).max(1);
        let ny = ((h / cutoff).floor() as usize).max(1);
        let side = [w / nx as f64, h / ny as f64];
        let cell_of = |p: &[f64; 2]| {
            let ix = ((p[0] / side[0]) as usize).min(nx - 1);
            let iy = ((p[1] / side[1]) as usize).min(ny - 1);
            iy * nx + ix
        };
        let mut start = vec![0usize; nx * ny + 1];
        for p in pos {
            start[cell_of(p) + 1] += 1;
        }
        for c in 0..nx * ny {
            start[c + 1] += start[c];
        }
        let mut fill = start.clone();
        let mut members = vec![(0, [0.0; 2]); pos.len()];
        for (i, p) in pos.iter().enumerate() {
            let c = cell_of(p);
            members[fill[c]] = (i, *p);
            fill[c] += 1;
        }
        Self {
            n: [nx, ny],
            side,
            start,
            members,
        }
    }

    fn axis_neighbors(c: usize, n: usize) -> Vec<usize> {
        if n <= 3 {
            return (0..n).collect();
        }
        vec![(c + n - 1) % n, c, (c + 1) % n]
    }

    fn for_each_near(&self, x: [f64; 2], mut f: impl FnMut(usize, [f64; 2])) {
        let cx = ((x[0] / self.side[0]) as usize).min(self.n[0] - 1);
        let cy = ((x[1] / self.side[1]) as usize).min(self.n[1] - 1);
        for iy in Self::axis_neighbors(cy, self.n[1]) {
            for ix in Self::axis_neighbors(cx, self.n[0]) {
                let c = iy * self.n[0] + ix;
                for &(j, xj) in &self.members[self.start[c]..self.start[c + 1]] {
                    f(j, xj);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_drift(e: &ParticleEnsemble, p: &ParticleParams) -> Vec<[f64; 2]> {
        let ka = KernelSpec::new(p.h_a).unwrap();
        let kr = KernelSpec::new(p.h_r).unwrap();
        let n = e.len() as f64;
        e.positions()
            .iter()
            .map(|xi| {
                let mut d = [0.0; 2];
                for xj in e.positions() {
                    let z = [min_image(xi[0] - xj[0], e.width), min_image(xi[1] - xj[1], e.height)];
                    let (ga, gr) = (ka.gradient(z), kr.gradient(z));
                    for k in 0..2 {
                        d[k] -= (p.gamma_a * ga[k] + p.gamma_r * gr[k]) / n;
                    }
                }
                d
            })
            .collect()
    }

    #[test]
    fn mesh_drift_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pos: Vec<[f64; 2]> = (0..1500)
            .map(|_| [0.5 + 0.2 * rng.random::<f64>(), 0.3 + 0.3 * rng.random::<f64>()])
            .collect();
        let e = ParticleEnsemble::new(pos, 1.0, 1.0, 0).unwrap();
        let p = ParticleParams {
            gamma_a: -0.002,
            gamma_r: 0.003,
            gamma_d: 0.0,
            h_a: 0.15,
            h_r: 0.4,
        };
        let exact = brute_drift(&e, &p);
        let mesh = MeshDrift::new(&p, 1.0, 1.0, 256).unwrap().drift(e.positions());
        let scale = exact.iter().map(|d| d[0].hypot(d[1])).fold(0.0, f64::max);
        let err = exact
            .iter()
            .zip(&mesh)
            .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
            .fold(0.0, f64::max);
        assert!(err < 0.05 * scale, "err {err} vs scale {scale}");
    }

    #[test]
    fn cell_list_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pos: Vec<[f64; 2]> = (0..400).map(|_| [rng.random::<f64>() * 2.0, rng.random::<f64>()]).collect();
        let e = ParticleEnsemble::new(pos, 2.0, 1.0, 0).unwrap();
        for (ha, hr) in [(0.15, 0.4), (0.05, 0.12), (0.3, 0.6)] {
            let p = ParticleParams {
                gamma_a: -0.002,
                gamma_r: 0.003,
                gamma_d: 0.0,
                h_a: ha,
                h_r: hr,
            };
            for (a, b) in e.drift(&p).iter().zip(brute_drift(&e, &p)) {
                assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn aggregation_pulls_pair_together() {
        let e = ParticleEnsemble::new(vec![[0.5, 0.5], [0.55, 0.5]], 1.0, 1.0, 0).unwrap();
        let p = ParticleParams {
            gamma_a: -0.01,
            gamma_r: 0.0,
            gamma_d: 0.0,
            h_a: 0.15,
            h_r: 0.4,
        };
        let d = e.drift(&p);
        assert!(d[0][0] > 0.0 && d[1][0] < 0.0);
        assert!(d[0][1].abs() < 1e-15);
        // magnitude: γA K'(r) / N with r = 0.05
        let expect = 0.01 * KernelSpec::new(0.15).unwrap().radial_derivative(0.05).abs() / 2.0;
        assert!((d[0][0] - expect).abs() < 1e-12);
    }

    #[test]
    fn brownian_increments_have_expected_variance() {
        let n = 20000;
        let pos = vec![[0.5, 0.5]; n];
        let mut e = ParticleEnsemble::new(pos, 1.0, 1.0, 11).unwrap();
        let p = ParticleParams {
            gamma_a: 0.0,
            gamma_r: 0.0,
            gamma_d: 0.01,
            h_a: 0.1,
            h_r: 0.1,
        };
        e.step(&p, 0.1).unwrap();
        let var: f64 = e.positions().iter().map(|x| (x[0] - 0.5).powi(2)).sum::<f64>() / n as f64;
        // 2 γD dt = 0.002; relative sd of the sample variance ≈ sqrt(2/n)
        assert!((var - 0.002).abs() < 0.002 * 4.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        let d = SpatialDomain::unit_torus(10).unwrap();
        let y = DVector::from_fn(100, |i, _| 1.0 + (i % 7) as f64);
        let p = ParticleParams {
            gamma_a: -0.002,
            gamma_r: 0.003,
            gamma_d: 0.005,
            h_a: 0.15,
            h_r: 0.4,
        };
        let mut a = ParticleEnsemble::sample_from_field(&d, &y, 500, 5).unwrap();
        let mut b = ParticleEnsemble::sample_from_field(&d, &y, 500, 5).unwrap();
        a.run(&p, 0.01, 3).unwrap();
        b.run(&p, 0.01, 3).unwrap();
        assert_eq!(a.positions(), b.positions());
        let h = a.histogram(&d).unwrap();
        assert!((d.integrate(h.as_slice()) - 1.0).abs() < 1e-12);
    }
}
