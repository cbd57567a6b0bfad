//! Truncated distance-decay kernels and their discrete interaction
//! matrices `W_ij = K_h(z_i - z_j) A_j`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Result, SardError};
use crate::geometry::{NeighborIndex, SpatialDomain, Topology};
use crate::sparse::{CsrMatrix, LinOp};

/// `c_K^2 = 1 / (2π (log 2 − 1/2))`, so the kernel integrates to one over
/// its support disc.
pub fn c_k_squared() -> f64 {
    1.0 / (2.0 * PI * (std::f64::consts::LN_2 - 0.5))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    h: f64,
}

impl KernelSpec {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(SardError::InvalidArgument(format!("bandwidth must be positive, got {h}")));
        }
        Ok(Self { h })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Kernel as a function of distance.
    pub fn at_distance(&self, r: f64) -> f64 {
        if r > self.h {
            return 0.0;
        }
        let u = r / self.h + 1.0;
        c_k_squared() / (self.h * self.h * u * u)
    }

    pub fn value(&self, z: [f64; 2]) -> f64 {
        self.at_distance(z[0].hypot(z[1]))
    }

    /// Radial derivative `K'(r)` on the open support; zero outside and at
    /// the truncation radius itself.
    pub fn radial_derivative(&self, r: f64) -> f64 {
        if r >= self.h {
            return 0.0;
        }
        let u = r / self.h + 1.0;
        -2.0 * c_k_squared() / (self.h * self.h * self.h * u * u * u)
    }

    /// `∇K(z) = K'(|z|) z/|z|`, zero at the origin and outside the support.
    pub fn gradient(&self, z: [f64; 2]) -> [f64; 2] {
        let r = z[0].hypot(z[1]);
        if r == 0.0 || r >= self.h {
            return [0.0, 0.0];
        }
        let s = self.radial_derivative(r) / r;
        [s * z[0], s * z[1]]
    }
}

/// Discrete kernel operator. Explicit storage is dense or sparse depending
/// on how many pairs fall inside the support; lattices on a torus with
/// uniform cells can use an FFT-applied circulant instead, which is the
/// only practical option on fine simulation grids.
#[derive(Clone)]
pub struct InteractionMatrix {
    spec: KernelSpec,
    storage: Storage,
}

#[derive(Clone)]
enum Storage {
    Explicit(LinOp),
    Circulant(Arc<CirculantOp>),
}

impl std::fmt::Debug for InteractionMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.storage {
            Storage::Explicit(LinOp::Dense(_)) => "dense",
            Storage::Explicit(LinOp::Sparse(_)) => "sparse",
            Storage::Circulant(_) => "circulant",
        };
        f.debug_struct("InteractionMatrix").field("h", &self.spec.h).field("storage", &kind).finish()
    }
}

pub fn build_interaction(domain: &SpatialDomain, spec: KernelSpec) -> InteractionMatrix {
    InteractionMatrix {
        spec,
        storage: Storage::Explicit(LinOp::auto(explicit_rows(domain, spec))),
    }
}

/// FFT-backed operator for uniform lattices on a torus.
pub fn build_interaction_circulant(domain: &SpatialDomain, spec: KernelSpec) -> Result<InteractionMatrix> {
    let op = CirculantOp::new(domain, spec)?;
    Ok(InteractionMatrix {
        spec,
        storage: Storage::Circulant(Arc::new(op)),
    })
}

/// Circulant when the domain allows it, explicit otherwise.
pub fn build_interaction_fast(domain: &SpatialDomain, spec: KernelSpec) -> InteractionMatrix {
    build_interaction_circulant(domain, spec).unwrap_or_else(|_| build_interaction(domain, spec))
}

fn explicit_rows(domain: &SpatialDomain, spec: KernelSpec) -> CsrMatrix {
    let index = NeighborIndex::new(domain);
    let areas = domain.areas();
    let rows = (0..domain.len())
        .into_par_iter()
        .map(|i| {
            let mut row: Vec<(usize, f64)> = index
                .within(i, spec.h)
                .into_iter()
                .map(|(j, d)| (j, spec.at_distance(d) * areas[j]))
                .collect();
            row.push((i, spec.at_distance(0.0) * areas[i]));
            row
        })
        .collect();
    CsrMatrix::from_rows(domain.len(), rows)
}

impl InteractionMatrix {
    pub fn spec(&self) -> KernelSpec {
        self.spec
    }

    pub fn h(&self) -> f64 {
        self.spec.h
    }

    pub fn len(&self) -> usize {
        match &self.storage {
            Storage::Explicit(m) => m.nrows(),
            Storage::Circulant(c) => c.nx * c.ny,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_circulant(&self) -> bool {
        matches!(self.storage, Storage::Circulant(_))
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.storage {
            Storage::Explicit(m) => m.apply(v),
            Storage::Circulant(c) => c.apply(v),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            Storage::Explicit(m) => m.get(i, j),
            Storage::Circulant(c) => c.entry(i, j),
        }
    }

    /// Materialized operator (a clone for explicit storage).
    pub fn to_linop(&self) -> LinOp {
        match &self.storage {
            Storage::Explicit(m) => m.clone(),
            Storage::Circulant(c) => LinOp::auto(c.to_csr()),
        }
    }

    pub fn row_sums(&self) -> DVector<f64> {
        self.apply(&DVector::from_element(self.len(), 1.0))
    }
}

/// `W v` as a periodic 2-D convolution.
pub struct CirculantOp {
    nx: usize,
    ny: usize,
    /// First column of W laid out on the lattice, `c[iy*nx+ix] = W_{m,0}`.
    stencil: Vec<f64>,
    kernel_hat: Vec<Complex<f64>>,
    fx: Arc<dyn Fft<f64>>,
    fy: Arc<dyn Fft<f64>>,
    ix: Arc<dyn Fft<f64>>,
    iy: Arc<dyn Fft<f64>>,
}

impl CirculantOp {
    pub fn new(domain: &SpatialDomain, spec: KernelSpec) -> Result<Self> {
        let g = *domain
            .grid()
            .ok_or_else(|| SardError::InvalidArgument("circulant kernel needs a lattice domain".into()))?;
        if !matches!(domain.topology(), Topology::Torus { .. }) {
            return Err(SardError::InvalidArgument("circulant kernel needs a torus".into()));
        }
        let a0 = domain.areas()[0];
        if domain.areas().iter().any(|&a| (a - a0).abs() > 1e-12 * a0) {
            return Err(SardError::InvalidArgument("circulant kernel needs uniform areas".into()));
        }
        let (nx, ny) = (g.nx, g.ny);
        let mut stencil = vec![0.0; nx * ny];
        for y in 0..ny {
            for x in 0..nx {
                let z = domain.offset(0, g.index(x, y));
                stencil[y * nx + x] = spec.value(z) * a0;
            }
        }
        let mut planner = FftPlanner::new();
        let fx = planner.plan_fft_forward(nx);
        let fy = planner.plan_fft_forward(ny);
        let ix = planner.plan_fft_inverse(nx);
        let iy = planner.plan_fft_inverse(ny);
        let mut op = Self {
            nx,
            ny,
            stencil,
            kernel_hat: Vec::new(),
            fx,
            fy,
            ix,
            iy,
        };
        let mut buf: Vec<Complex<f64>> = op.stencil.iter().map(|&v| Complex::new(v, 0.0)).collect();
        op.fft2(&mut buf, false);
        op.kernel_hat = buf;
        Ok(op)
    }

    fn fft2(&self, buf: &mut [Complex<f64>], inverse: bool) {
        let (fx, fy) = if inverse { (&self.ix, &self.iy) } else { (&self.fx, &self.fy) };
        for row in buf.chunks_mut(self.nx) {
            fx.process(row);
        }
        let mut col = vec![Complex::new(0.0, 0.0); self.ny];
        for x in 0..self.nx {
            for y in 0..self.ny {
                col[y] = buf[y * self.nx + x];
            }
            fy.process(&mut col);
            for y in 0..self.ny {
                buf[y * self.nx + x] = col[y];
            }
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.nx * self.ny);
        let mut buf: Vec<Complex<f64>> = v.iter().map(|&x| Complex::new(x, 0.0)).collect();
        self.fft2(&mut buf, false);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        self.fft2(&mut buf, true);
        let scale = 1.0 / (self.nx * self.ny) as f64;
        DVector::from_iterator(buf.len(), buf.iter().map(|c| c.re * scale))
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        let (ix, iy) = (i % self.nx, i / self.nx);
        let (jx, jy) = (j % self.nx, j / self.nx);
        let dx = (ix + self.nx - jx) % self.nx;
        let dy = (iy + self.ny - jy) % self.ny;
        self.stencil[dy * self.nx + dx]
    }

    fn to_csr(&self) -> CsrMatrix {
        let support: Vec<(usize, usize, f64)> = (0..self.ny)
            .flat_map(|dy| (0..self.nx).map(move |dx| (dx, dy)))
            .filter_map(|(dx, dy)| {
                let v = self.stencil[dy * self.nx + dx];
                (v != 0.0).then_some((dx, dy, v))
            })
            .collect();
        let n = self.nx * self.ny;
        let rows = (0..n)
            .into_par_iter()
            .map(|i| {
                let (ix, iy) = (i % self.nx, i / self.nx);
                support
                    .iter()
                    .map(|&(dx, dy, v)| {
                        let jx = (ix + self.nx - dx) % self.nx;
                        let jy = (iy + self.ny - dy) % self.ny;
                        (jy * self.nx + jx, v)
                    })
                    .collect()
            })
            .collect();
        CsrMatrix::from_rows(n, rows)
    }
}
