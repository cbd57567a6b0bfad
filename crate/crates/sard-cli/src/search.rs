//! Grid search of the kernel bandwidths by AICc.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use sard_core::design::SardDesign;
use sard_core::estimators::{fit_iv, fit_ml_with_error_weights, fit_ols, Method, MlOptions, SardFit};

use crate::config::ExperimentConfig;
use crate::data::{contiguity_for, Workspace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRow {
    pub h_a: f64,
    pub h_r: f64,
    pub aicc: Option<f64>,
    pub loglik: Option<f64>,
    pub error: Option<String>,
}

pub struct SearchResult {
    pub best: (f64, f64),
    pub best_fit: SardFit,
    pub table: Vec<SearchRow>,
}

pub fn fit_method(cfg: &ExperimentConfig, ws: &Workspace, design: &SardDesign, method: Method) -> anyhow::Result<SardFit> {
    Ok(match method {
        Method::OlsNaive => fit_ols(design, true)?,
        Method::Ols => fit_ols(design, false)?,
        Method::Iv => fit_iv(design)?,
        Method::Ml => {
            let contiguity = contiguity_for(&ws.domain, cfg)?;
            let order = cfg.max_order.min(contiguity.max_order());
            fit_ml_with_error_weights(design, &contiguity, order, &MlOptions::default())?.0
        }
    })
}

/// Fits `method` for every `(h_A, h_R)` pair and returns the pair with the
/// smallest AICc. Pairs whose fit fails are kept in the table with the
/// error message.
pub fn bandwidth_search(
    cfg: &ExperimentConfig,
    base: &Workspace,
    y0: &DVector<f64>,
    y1: &DVector<f64>,
    tau: f64,
    method: Method,
    log: &mut dyn FnMut(&str),
) -> anyhow::Result<SearchResult> {
    anyhow::ensure!(!cfg.h_a_grid.is_empty() && !cfg.h_r_grid.is_empty(), "bandwidth grids must be nonempty");
    let mut table = Vec::new();
    let mut best: Option<((f64, f64), SardFit)> = None;
    for &h_a in &cfg.h_a_grid {
        for &h_r in &cfg.h_r_grid {
            log(&format!("h_A={h_a} h_R={h_r}"));
            let attempt = base
                .with_bandwidths(h_a, h_r)
                .and_then(|ws| {
                    let d = SardDesign::new(&ws.inputs(), y0, y1, tau)?;
                    fit_method(cfg, &ws, &d, method)
                });
            match attempt {
                Ok(fit) => {
                    let a = fit.aicc();
                    table.push(SearchRow {
                        h_a,
                        h_r,
                        aicc: Some(a),
                        loglik: Some(fit.log_likelihood),
                        error: None,
                    });
                    if best.as_ref().is_none_or(|(_, b)| a < b.aicc()) {
                        best = Some(((h_a, h_r), fit));
                    }
                }
                Err(e) => table.push(SearchRow {
                    h_a,
                    h_r,
                    aicc: None,
                    loglik: None,
                    error: Some(format!("{e:#}")),
                }),
            }
        }
    }
    let (best, best_fit) = best.ok_or_else(|| anyhow::anyhow!("every bandwidth pair failed"))?;
    Ok(SearchResult { best, best_fit, table })
}
