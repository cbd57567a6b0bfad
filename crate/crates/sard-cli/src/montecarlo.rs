//! Monte Carlo driver: simulate truth on a fine torus lattice, average it
//! onto each estimation grid, and fit every estimator on every
//! `(N, τ)` cell.
//!
//! Each cell writes its own files; a cell whose `fit_*.csv` exists is
//! skipped on re-runs, so an interrupted experiment resumes where it
//! stopped.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::Context;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use sard_core::design::{back_solve, SardDesign, StructuralParams, Term};
use sard_core::diagnostics::{correlogram, morans_i, CorrelogramEntry, MoranResult};
use sard_core::estimators::{
    bootstrap_se, fit_iv, fit_ml, fit_ml_with_error_weights, fit_ols, ErrorWeights, Method, MlOptions, SardFit,
};
use sard_core::geometry::SpatialDomain;
use sard_core::gfdm::operators_for;
use sard_core::kernels::{build_interaction_fast, KernelSpec};
use sard_core::sim::{coarsen, integrate, Dynamics, PdeState, PeakField};

use crate::config::ExperimentConfig;
use crate::data::{contiguity_for, Workspace};

/// Fine-grid trajectory sampled at `times` (first entry is `t = 0`).
pub struct Truth {
    pub fine: SpatialDomain,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

pub fn simulate_truth(cfg: &ExperimentConfig, taus: &[f64]) -> anyhow::Result<Truth> {
    let fine = SpatialDomain::unit_torus(cfg.fine_n)?;
    let ops = operators_for(&fine, cfg.gfdm())?;
    let p = cfg.params();
    let w_a = build_interaction_fast(&fine, KernelSpec::new(p.h_a)?);
    let w_r = build_interaction_fast(&fine, KernelSpec::new(p.h_r)?);
    let dynamics = Dynamics::new(p, &ops, Some(&w_a), Some(&w_r), None)?;
    let y0 = PeakField::three_peaks().sample(&fine);
    let mut times: Vec<f64> = taus.to_vec();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let out = integrate(&dynamics, &PdeState { t: 0.0, y: y0.clone() }, &times, cfg.integrate_options())?;
    let mut states = vec![y0];
    states.extend(out.into_iter().map(|s| s.y));
    let mut all = vec![0.0];
    all.extend(times);
    Ok(Truth { fine, times: all, states })
}

impl Truth {
    pub fn state_at(&self, t: f64) -> anyhow::Result<&DVector<f64>> {
        let k = self
            .times
            .iter()
            .position(|s| (s - t).abs() < 1e-12)
            .with_context(|| format!("truth was not sampled at t = {t}"))?;
        Ok(&self.states[k])
    }

    /// `(coarse domain, y(0), y(τ))` on an `n × n` torus.
    pub fn coarse(&self, n: usize, tau: f64) -> anyhow::Result<(SpatialDomain, DVector<f64>, DVector<f64>)> {
        let domain = SpatialDomain::unit_torus(n)?;
        let fine = self.fine.grid().expect("lattice");
        let coarse = domain.grid().expect("lattice");
        let y0 = coarsen(fine, &self.states[0], coarse)?;
        let yt = coarsen(fine, self.state_at(tau)?, coarse)?;
        Ok((domain, y0, yt))
    }
}

/// Fit bundle of one `(N, τ)` cell.
pub struct CellOutcome {
    pub n: usize,
    pub tau: f64,
    pub fits: Vec<SardFit>,
    pub structural: Vec<Option<StructuralParams>>,
    pub bootstrap: Vec<Option<DVector<f64>>>,
    /// Error weights estimated from the first-pass ML remainder.
    pub weights: Option<ErrorWeights>,
    /// First-order Moran's I of the ML remainder before and after the
    /// spatial-error filter.
    pub moran_before: Option<MoranResult>,
    pub moran_after: Option<MoranResult>,
    pub correlogram_before: Vec<CorrelogramEntry>,
    pub correlogram_after: Vec<CorrelogramEntry>,
    pub seconds: f64,
}

impl CellOutcome {
    pub fn fit(&self, m: Method) -> Option<&SardFit> {
        self.fits.iter().find(|f| f.method == m)
    }

    pub fn structural(&self, m: Method) -> Option<&StructuralParams> {
        self.fits.iter().position(|f| f.method == m).and_then(|k| self.structural[k].as_ref())
    }
}

fn structural_for(design: &SardDesign, fit: &SardFit) -> Option<StructuralParams> {
    let (y0, yt) = design.aggregates();
    back_solve(&fit.tilde, y0, yt, design.tau, design.total_area()).ok()
}

/// Fits the requested estimators on one design. ML includes the
/// error-weight step; the weights and correlograms come back alongside.
pub fn fit_all(
    cfg: &ExperimentConfig,
    ws: &Workspace,
    design: &SardDesign,
    methods: &[Method],
    seed: u64,
) -> anyhow::Result<CellOutcome> {
    let start = Instant::now();
    let mut fits = Vec::new();
    let mut weights = None;
    let (mut moran_before, mut moran_after) = (None, None);
    let (mut cg_before, mut cg_after) = (Vec::new(), Vec::new());
    let opts = MlOptions::default();
    for &m in methods {
        let fit = match m {
            Method::OlsNaive => fit_ols(design, true)?,
            Method::Ols => fit_ols(design, false)?,
            Method::Iv => fit_iv(design)?,
            Method::Ml => {
                let contiguity = contiguity_for(&ws.domain, cfg)?;
                let order = cfg.max_order.min(contiguity.max_order());
                let (second, w, first) = fit_ml_with_error_weights(design, &contiguity, order, &opts)?;
                let band = contiguity.band(1);
                moran_before = morans_i(&first.residuals, &band).ok();
                moran_after = morans_i(&second.innovations, &band).ok();
                cg_before = correlogram(&first.residuals, &contiguity, order);
                cg_after = correlogram(&second.innovations, &contiguity, order);
                weights = Some(w);
                second
            }
        };
        fits.push(fit);
    }
    let structural = fits.iter().map(|f| structural_for(design, f)).collect();
    let bootstrap = fits
        .iter()
        .map(|f| {
            if cfg.bootstrap < 2 {
                return None;
            }
            let w = weights.as_ref().filter(|_| f.method == Method::Ml);
            let refit = |d: &SardDesign| -> sard_core::Result<SardFit> {
                match f.method {
                    Method::OlsNaive => fit_ols(d, true),
                    Method::Ols => fit_ols(d, false),
                    Method::Iv => fit_iv(d),
                    Method::Ml => fit_ml(d, w, &opts),
                }
            };
            bootstrap_se(design, f, w, cfg.bootstrap, seed, refit).ok()
        })
        .collect();
    Ok(CellOutcome {
        n: ws.domain.len(),
        tau: design.tau,
        fits,
        structural,
        bootstrap,
        weights,
        moran_before,
        moran_after,
        correlogram_before: cg_before,
        correlogram_after: cg_after,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Builds the design of cell `(n × n, τ)` and runs [`fit_all`].
pub fn run_cell(cfg: &ExperimentConfig, truth: &Truth, n: usize, tau: f64, methods: &[Method]) -> anyhow::Result<CellOutcome> {
    let (domain, y0, yt) = truth.coarse(n, tau)?;
    let ws = Workspace::new(domain, None, cfg, Some(cfg.h_a), Some(cfg.h_r))?;
    let design = SardDesign::new(&ws.inputs(), &y0, &yt, tau)?;
    fit_all(cfg, &ws, &design, methods, cell_seed(cfg.seed, n, tau))
}

fn cell_seed(seed: u64, n: usize, tau: f64) -> u64 {
    seed ^ ((n as u64) << 32) ^ (tau * 1000.0).round() as u64
}

/// Value of the true parameter behind a coefficient name, if any.
pub fn truth_of(cfg: &ExperimentConfig, name: &str) -> Option<f64> {
    Some(match name {
        "alpha" => cfg.alpha,
        "phi" => cfg.phi,
        "gamma_S" => cfg.gamma_s,
        "gamma_A" => cfg.gamma_a,
        "gamma_R" => cfg.gamma_r,
        "gamma_D" => cfg.gamma_d,
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefRow {
    pub n: usize,
    pub tau: f64,
    pub method: String,
    pub name: String,
    pub tilde: f64,
    pub se: f64,
    pub se_boot: Option<f64>,
    pub structural: Option<f64>,
    pub structural_se: Option<f64>,
    pub truth: Option<f64>,
    pub bias: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub n: usize,
    pub tau: f64,
    pub method: String,
    pub loglik: f64,
    pub aicc: f64,
    pub mse: f64,
    pub lambda: Option<f64>,
    pub q_hat: Option<usize>,
    pub moran_before: Option<f64>,
    pub moran_after: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllRow {
    pub n: usize,
    pub tau: f64,
    pub order: usize,
    pub ell: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
    pub retained: bool,
}

fn structural_value(s: &StructuralParams, name: &str, tau: f64) -> Option<(f64, f64)> {
    // (value, factor applied to the tilde standard error)
    let term = |l: &str| Term::ALL.into_iter().find(|t| t.label() == l);
    match name {
        "alpha" => Some((s.alpha, s.scale)),
        "phi" => Some((s.phi, s.scale)),
        "lambda" => None,
        _ => {
            let (kind, label) = name.split_once('_')?;
            let t = term(label)?;
            match kind {
                "gamma" => Some((s.gamma[t.index()], s.scale)),
                "rho" => Some((s.rho[t.index()], 2.0 * s.scale / tau)),
                _ => None,
            }
        }
    }
}

impl CellOutcome {
    pub fn coef_rows(&self, cfg: &ExperimentConfig) -> Vec<CoefRow> {
        let mut rows = Vec::new();
        for (k, f) in self.fits.iter().enumerate() {
            let se = f.std_errors();
            let s = self.structural[k].as_ref();
            for (j, name) in f.names.iter().enumerate() {
                let sv = s.and_then(|s| structural_value(s, name, self.tau));
                let truth = truth_of(cfg, name);
                rows.push(CoefRow {
                    n: self.n,
                    tau: self.tau,
                    method: f.method.to_string(),
                    name: name.clone(),
                    tilde: f.coefficients[j],
                    se: se[j],
                    se_boot: self.bootstrap[k].as_ref().map(|b| b[j]),
                    structural: sv.map(|v| v.0),
                    structural_se: sv.map(|v| v.1 * se[j]),
                    truth,
                    bias: truth.zip(sv).map(|(t, v)| v.0 - t),
                });
            }
            if let Some(s) = s {
                rows.push(CoefRow {
                    n: self.n,
                    tau: self.tau,
                    method: f.method.to_string(),
                    name: "rho_phi".into(),
                    tilde: f64::NAN,
                    se: f64::NAN,
                    se_boot: None,
                    structural: Some(s.rho_phi),
                    structural_se: None,
                    truth: None,
                    bias: None,
                });
            }
        }
        rows
    }

    pub fn fit_rows(&self) -> Vec<FitRow> {
        self.fits
            .iter()
            .map(|f| {
                let ml = f.method == Method::Ml;
                FitRow {
                    n: self.n,
                    tau: self.tau,
                    method: f.method.to_string(),
                    loglik: f.log_likelihood,
                    aicc: f.aicc(),
                    mse: f.mse(),
                    lambda: f.lambda,
                    q_hat: self.weights.as_ref().filter(|_| ml).map(|w| w.q_hat),
                    moran_before: self.moran_before.filter(|_| ml).map(|m| m.i),
                    moran_after: self.moran_after.filter(|_| ml).map(|m| m.i),
                    converged: f.converged,
                }
            })
            .collect()
    }

    pub fn ell_rows(&self) -> Vec<EllRow> {
        let Some(w) = &self.weights else { return Vec::new() };
        (0..w.ell.len())
            .map(|q| EllRow {
                n: self.n,
                tau: self.tau,
                order: q + 1,
                ell: w.ell[q],
                se: w.std_errors[q],
                t: w.t_stats[q],
                p: w.p_values[q],
                retained: q < w.q_hat,
            })
            .collect()
    }
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

fn cell_tag(n: usize, tau: f64) -> String {
    format!("{}_{}", n * n, tau)
}

/// Files written by [`run_montecarlo`].
pub struct McReport {
    pub dir: PathBuf,
    pub cells_run: usize,
    pub cells_skipped: usize,
    pub failures: Vec<String>,
}

/// Runs every `(N, τ)` cell of the configured grids. Completed cells found
/// in the output directory are skipped; a failing cell is recorded and the
/// rest continue. Combined tables are rebuilt from the per-cell files.
pub fn run_montecarlo(cfg: &ExperimentConfig, log: &mut (dyn FnMut(&str) + Send)) -> anyhow::Result<McReport> {
    let dir = cfg.output_dir.join("mc");
    std::fs::create_dir_all(&dir)?;
    let methods = cfg.methods()?;
    let cells: Vec<(usize, f64)> = cfg
        .mc_grids
        .iter()
        .flat_map(|&n| cfg.mc_taus.iter().map(move |&t| (n, t)))
        .collect();
    let pending: Vec<(usize, f64)> = cells
        .iter()
        .cloned()
        .filter(|&(n, t)| !dir.join(format!("fit_{}.csv", cell_tag(n, t))).exists())
        .collect();
    let mut failures = Vec::new();
    if !pending.is_empty() {
        log(&format!("simulating truth on a {0}x{0} lattice", cfg.fine_n));
        let truth = simulate_truth(cfg, &cfg.mc_taus)?;
        let log = Mutex::new(log);
        let say = |msg: String| (log.lock().expect("log lock"))(&msg);
        // cells are independent; each writes its own files as soon as it is done
        let outcomes: Vec<anyhow::Result<()>> = pending
            .par_iter()
            .map(|&(n, tau)| {
                let tag = cell_tag(n, tau);
                say(format!("cell N={} tau={} started", n * n, tau));
                let out = run_cell(cfg, &truth, n, tau, &methods)?;
                write_rows(&dir.join(format!("coef_{tag}.csv")), &out.coef_rows(cfg))?;
                write_rows(&dir.join(format!("ell_{tag}.csv")), &out.ell_rows())?;
                let mut w = std::fs::File::create(dir.join(format!("correlogram_{tag}.csv")))?;
                write_correlograms(&out, &mut w)?;
                // written last: marks the cell complete
                write_rows(&dir.join(format!("fit_{tag}.csv")), &out.fit_rows())?;
                say(format!("cell N={} tau={} done in {:.1}s", n * n, tau, out.seconds));
                Ok(())
            })
            .collect();
        for (&(n, tau), r) in pending.iter().zip(outcomes) {
            if let Err(e) = r {
                say(format!("cell N={} tau={} failed: {e:#}", n * n, tau));
                failures.push(format!("{}: {e:#}", cell_tag(n, tau)));
            }
        }
    }
    let mut coefs: Vec<CoefRow> = Vec::new();
    let mut fits: Vec<FitRow> = Vec::new();
    let mut ells: Vec<EllRow> = Vec::new();
    for &(n, t) in &cells {
        let tag = cell_tag(n, t);
        if !dir.join(format!("fit_{tag}.csv")).exists() {
            continue;
        }
        coefs.extend(read_rows::<CoefRow>(&dir.join(format!("coef_{tag}.csv")))?);
        fits.extend(read_rows::<FitRow>(&dir.join(format!("fit_{tag}.csv")))?);
        ells.extend(read_rows::<EllRow>(&dir.join(format!("ell_{tag}.csv")))?);
    }
    write_rows(&cfg.output_dir.join("table1.csv"), &coefs)?;
    write_rows(&cfg.output_dir.join("fit_summary.csv"), &fits)?;
    write_rows(&cfg.output_dir.join("table2.csv"), &ells)?;
    Ok(McReport {
        dir,
        cells_run: pending.len() - failures.len(),
        cells_skipped: cells.len() - pending.len(),
        failures,
    })
}

pub fn write_correlograms<W: std::io::Write>(out: &CellOutcome, mut w: W) -> std::io::Result<()> {
    writeln!(w, "stage,order,I,lo,hi")?;
    for (stage, entries) in [("before", &out.correlogram_before), ("after", &out.correlogram_after)] {
        for e in entries.iter() {
            match e.value {
                Some(v) => writeln!(w, "{stage},{},{:e},{:e},{:e}", e.order, v, e.lo, e.hi)?,
                None => writeln!(w, "{stage},{},,,", e.order)?,
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            fine_n: 40,
            mc_grids: vec![8],
            mc_taus: vec![0.5],
            max_order: 3,
            bootstrap: 0,
            ..Default::default()
        }
    }

    #[test]
    fn coarse_truth_keeps_mass() {
        let cfg = tiny();
        let truth = simulate_truth(&cfg, &[0.5]).unwrap();
        let (d, y0, yt) = truth.coarse(8, 0.5).unwrap();
        let fine_mass = truth.fine.integrate(truth.states[1].as_slice());
        assert!((d.integrate(yt.as_slice()) - fine_mass).abs() < 1e-10 * fine_mass);
        assert!(d.integrate(y0.as_slice()) < fine_mass);
        assert!(truth.coarse(8, 0.3).is_err());
    }

    #[test]
    fn montecarlo_resumes_and_is_deterministic() {
        let tmp = std::env::temp_dir().join(format!("sard-mc-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&tmp);
        let cfg = ExperimentConfig {
            output_dir: tmp.clone(),
            estimators: vec!["OLS".into(), "OLS-NAIVE".into()],
            ..tiny()
        };
        let r1 = run_montecarlo(&cfg, &mut |_| {}).unwrap();
        assert_eq!((r1.cells_run, r1.cells_skipped), (1, 0));
        let first = std::fs::read(tmp.join("table1.csv")).unwrap();
        let summary = std::fs::read(tmp.join("fit_summary.csv")).unwrap();
        let r2 = run_montecarlo(&cfg, &mut |_| {}).unwrap();
        assert_eq!((r2.cells_run, r2.cells_skipped), (0, 1));
        assert_eq!(std::fs::read(tmp.join("table1.csv")).unwrap(), first);
        std::fs::remove_dir_all(tmp.join("mc")).unwrap();
        run_montecarlo(&cfg, &mut |_| {}).unwrap();
        assert_eq!(std::fs::read(tmp.join("table1.csv")).unwrap(), first);
        assert_eq!(std::fs::read(tmp.join("fit_summary.csv")).unwrap(), summary);
        let _ = std::fs::remove_dir_all(&tmp);
    }
}
