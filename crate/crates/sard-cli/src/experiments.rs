//! Qualitative checks of the continuous model: cluster-formation regimes
//! and the agreement between the agent system and the PDE.

use nalgebra::DVector;

use sard_core::geometry::{SpatialDomain, Topology};
use sard_core::gfdm::{operators_for, GfdmOptions};
use sard_core::kernels::{build_interaction, build_interaction_fast, KernelSpec};
use sard_core::particles::{l1_distance, MeshDrift, ParticleEnsemble, ParticleParams};
use sard_core::sim::{count_clusters, integrate, plateau_field, Dynamics, IntegrateOptions, ModelParams, PdeState, PeakField};

/// Aggregation–diffusion run from a flat central plateau on `[0, side]²`.
/// The field vanishes well inside the boundary, so the square is treated
/// as periodic.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSetup {
    pub side: f64,
    pub cells: usize,
    pub level: f64,
    pub half_width: f64,
    pub ramp: f64,
    pub gamma_a: f64,
    pub gamma_d: f64,
    pub t_end: f64,
    /// Clusters are components above this fraction of the final maximum.
    pub threshold: f64,
}

impl Default for RegimeSetup {
    fn default() -> Self {
        Self {
            side: 4.0,
            cells: 80,
            level: 1.0,
            half_width: 1.0,
            ramp: 0.3,
            gamma_a: -0.01,
            gamma_d: 0.005,
            t_end: 20.0,
            threshold: 0.5,
        }
    }
}

pub struct RegimeOutcome {
    pub domain: SpatialDomain,
    pub y: DVector<f64>,
    pub clusters: usize,
}

pub fn regime_run(s: &RegimeSetup, h_a: f64) -> anyhow::Result<RegimeOutcome> {
    let domain = SpatialDomain::uniform_grid(
        s.cells,
        s.cells,
        s.side,
        s.side,
        Topology::Torus {
            width: s.side,
            height: s.side,
        },
    )?;
    let ops = operators_for(&domain, GfdmOptions::default())?;
    let w_a = build_interaction_fast(&domain, KernelSpec::new(h_a)?);
    let params = ModelParams {
        alpha: 0.0,
        phi: 0.0,
        gamma_s: 0.0,
        gamma_a: s.gamma_a,
        gamma_r: 0.0,
        gamma_d: s.gamma_d,
        h_a,
        h_r: h_a,
    };
    let dynamics = Dynamics::new(params, &ops, Some(&w_a), None, None)?;
    let c = s.side / 2.0;
    let y0 = plateau_field(&domain, s.level, [c, c], s.half_width, s.ramp);
    let out = integrate(&dynamics, &PdeState { t: 0.0, y: y0 }, &[s.t_end], IntegrateOptions::default())?;
    let y = out.into_iter().next().expect("one sample").y;
    let clusters = count_clusters(domain.grid().expect("lattice"), &y, s.threshold * y.max(), true);
    Ok(RegimeOutcome { domain, y, clusters })
}

/// Agent system versus PDE on the unit torus, both started from the
/// normalized three-peak density and compared after smoothing with the
/// same kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldSetup {
    pub cells: usize,
    pub t_end: f64,
    pub dt: f64,
    pub smoothing: f64,
    /// Mesh resolution of the particle drift.
    pub mesh: usize,
}

impl Default for MeanFieldSetup {
    fn default() -> Self {
        Self {
            cells: 40,
            t_end: 0.5,
            dt: 0.05,
            smoothing: 0.1,
            mesh: 256,
        }
    }
}

/// Smoothed L1 distance between agent histogram and PDE density for each
/// ensemble size.
pub fn mean_field_l1(p: &ModelParams, s: &MeanFieldSetup, sizes: &[usize], seed: u64) -> anyhow::Result<Vec<f64>> {
    let domain = SpatialDomain::unit_torus(s.cells)?;
    let ops = operators_for(&domain, GfdmOptions::default())?;
    let w_a = build_interaction(&domain, KernelSpec::new(p.h_a)?);
    let w_r = build_interaction(&domain, KernelSpec::new(p.h_r)?);
    let conservative = ModelParams {
        alpha: 0.0,
        phi: 0.0,
        gamma_s: 0.0,
        ..*p
    };
    let dynamics = Dynamics::new(conservative, &ops, Some(&w_a), Some(&w_r), None)?;
    let mut y0 = PeakField::three_peaks().sample(&domain);
    y0 /= domain.integrate(y0.as_slice());
    let pde = integrate(&dynamics, &PdeState { t: 0.0, y: y0.clone() }, &[s.t_end], IntegrateOptions::default())?;
    let smoother = build_interaction(&domain, KernelSpec::new(s.smoothing)?);
    let target = smoother.apply(&pde[0].y);
    let steps = (s.t_end / s.dt).round() as usize;
    let pp = ParticleParams {
        gamma_a: p.gamma_a,
        gamma_r: p.gamma_r,
        gamma_d: p.gamma_d,
        h_a: p.h_a,
        h_r: p.h_r,
    };
    let mesh = MeshDrift::new(&pp, 1.0, 1.0, s.mesh)?;
    sizes
        .iter()
        .map(|&n| {
            let mut e = ParticleEnsemble::sample_from_field(&domain, &y0, n, seed)?;
            e.run_mesh(&mesh, s.dt, steps)?;
            let h = smoother.apply(&e.histogram(&domain)?);
            Ok(l1_distance(&domain, &h, &target))
        })
        .collect()
}
