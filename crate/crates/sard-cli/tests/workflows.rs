use nalgebra::DVector;

use sard_cli::config::ExperimentConfig;
use sard_cli::data::Workspace;
use sard_cli::forecast::{decompose, exact_params};
use sard_cli::montecarlo::simulate_truth;
use sard_cli::profile::convergence_profile;
use sard_cli::search::bandwidth_search;
use sard_core::design::Term;
use sard_core::estimators::Method;
use sard_core::geometry::SpatialDomain;
use sard_core::sim::{ModelParams, PeakField};

#[test]
fn search_recovers_the_simulated_bandwidths() {
    let cfg = ExperimentConfig {
        fine_n: 120,
        grid_n: 30,
        tau: 0.1,
        max_order: 4,
        h_a_grid: vec![0.1, 0.15, 0.2],
        h_r_grid: vec![0.3, 0.4, 0.5],
        ..ExperimentConfig::default()
    };
    let truth = simulate_truth(&cfg, &[cfg.tau]).unwrap();
    let (domain, y0, y1) = truth.coarse(cfg.grid_n, cfg.tau).unwrap();
    let base = Workspace::new(domain, None, &cfg, Some(cfg.h_a), Some(cfg.h_r)).unwrap();
    let r = bandwidth_search(&cfg, &base, &y0, &y1, cfg.tau, Method::Ml, &mut |_| {}).unwrap();
    assert_eq!(r.table.len(), 9);
    assert!(r.table.iter().all(|row| row.error.is_none()));
    assert_eq!(r.best, (0.15, 0.4), "{:#?}", r.table);
}

#[test]
fn single_pair_grid_returns_that_pair() {
    let cfg = ExperimentConfig {
        fine_n: 40,
        grid_n: 10,
        tau: 0.5,
        h_a_grid: vec![0.2],
        h_r_grid: vec![0.35],
        ..ExperimentConfig::default()
    };
    let truth = simulate_truth(&cfg, &[cfg.tau]).unwrap();
    let (domain, y0, y1) = truth.coarse(cfg.grid_n, cfg.tau).unwrap();
    let base = Workspace::new(domain, None, &cfg, Some(cfg.h_a), Some(cfg.h_r)).unwrap();
    let r = bandwidth_search(&cfg, &base, &y0, &y1, cfg.tau, Method::Ols, &mut |_| {}).unwrap();
    assert_eq!(r.best, (0.2, 0.35));
}

#[test]
fn diffusion_contribution_is_convergent() {
    let cfg = ExperimentConfig::default();
    let ws = Workspace::new(SpatialDomain::unit_torus(24).unwrap(), None, &cfg, Some(0.15), Some(0.4)).unwrap();
    let p = ModelParams {
        gamma_a: 0.0,
        gamma_r: 0.0,
        ..ModelParams::monte_carlo_baseline()
    };
    let y0 = PeakField::three_peaks().sample(&ws.domain);
    let d = decompose(&ws, &exact_params(&p), &y0, 1.0, 0.1, &[Term::D]).unwrap();
    assert!(d.negative.is_empty());
    let g_d = d.contributions[Term::D.index()].clone().unwrap();
    let log_y0: Vec<f64> = y0.iter().map(|v| v.ln()).collect();
    let curve = convergence_profile(&log_y0, &g_d, 25, None, 50, 4);
    assert!(curve.slope() < 0.0, "slope {}", curve.slope());
    // diffusion raises low places and lowers peaks
    let (lo, hi) = extremes(&y0);
    assert!(g_d[lo].unwrap() > 0.0 && g_d[hi].unwrap() < 0.0);
}

fn extremes(y: &DVector<f64>) -> (usize, usize) {
    (y.imin(), y.imax())
}
