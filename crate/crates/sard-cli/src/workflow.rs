//! Glue shared by the subcommands: obtain a dataset, fit it, and turn the
//! preferred fit into structural parameters.

use anyhow::Context;

use sard_core::design::{SardDesign, StructuralParams, Term};
use sard_core::estimators::{Method, SardFit};
use sard_core::geometry::Topology;

use crate::config::ExperimentConfig;
use crate::data::{DomainData, Workspace};
use crate::montecarlo::{fit_all, simulate_truth, CellOutcome};

/// The configured CSV, or a simulated `grid_n × grid_n` torus pair
/// `(y(0), y(τ))` when no file is given.
pub fn load_data(cfg: &ExperimentConfig) -> anyhow::Result<DomainData> {
    match &cfg.data {
        Some(p) => DomainData::load(p),
        None => {
            let truth = simulate_truth(cfg, &[cfg.tau])?;
            let (domain, y0, y1) = truth.coarse(cfg.grid_n, cfg.tau)?;
            Ok(DomainData {
                domain,
                y0,
                y1,
                s: None,
                alt: None,
            })
        }
    }
}

/// Reads a domain CSV with torus topology (used for simulated exports).
pub fn load_torus(path: &std::path::Path, side: f64) -> anyhow::Result<DomainData> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    DomainData::read_csv(f, Topology::Torus { width: side, height: side })
}

pub fn workspace(cfg: &ExperimentConfig, data: &DomainData) -> anyhow::Result<Workspace> {
    Workspace::new(data.domain.clone(), data.s.clone(), cfg, Some(cfg.h_a), Some(cfg.h_r))
}

pub struct Fitted {
    pub outcome: CellOutcome,
    pub terms: Vec<Term>,
}

pub fn fit_data(cfg: &ExperimentConfig, ws: &Workspace, data: &DomainData) -> anyhow::Result<Fitted> {
    let design = SardDesign::new(&ws.inputs(), &data.y0, &data.y1, cfg.tau)?;
    let terms = design.terms().to_vec();
    let outcome = fit_all(cfg, ws, &design, &cfg.methods()?, cfg.seed)?;
    Ok(Fitted { outcome, terms })
}

impl Fitted {
    /// ML when it was run, otherwise the fit with the smallest AICc.
    pub fn preferred(&self) -> (&SardFit, Option<&StructuralParams>) {
        let k = self
            .outcome
            .fits
            .iter()
            .position(|f| f.method == Method::Ml)
            .unwrap_or_else(|| {
                (0..self.outcome.fits.len())
                    .min_by(|&a, &b| self.outcome.fits[a].aicc().total_cmp(&self.outcome.fits[b].aicc()))
                    .expect("at least one fit")
            });
        (&self.outcome.fits[k], self.outcome.structural[k].as_ref())
    }

    pub fn preferred_structural(&self) -> anyhow::Result<StructuralParams> {
        let (f, s) = self.preferred();
        s.copied()
            .with_context(|| format!("{} fit could not be mapped to structural parameters", f.method))
    }
}
