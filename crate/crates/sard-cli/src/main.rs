use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use sard_cli::config::{parse_method, ExperimentConfig};
use sard_cli::data::contiguity_for;
use sard_cli::experiments::{mean_field_l1, MeanFieldSetup};
use sard_cli::forecast::{decompose, forecast};
use sard_cli::manifest::write_manifest;
use sard_cli::montecarlo::{run_montecarlo, simulate_truth, write_correlograms, write_rows};
use sard_cli::profile::convergence_profile;
use sard_cli::search::bandwidth_search;
use sard_cli::workflow::{fit_data, load_data, workspace};
use sard_core::design::{SardDesign, Term};
use sard_core::diagnostics::{correlogram, morans_i, write_correlogram};
use sard_core::estimators::Method;

#[derive(Parser)]
#[command(name = "sard", version, about = "Spatial aggregation-reallocation-diffusion models: simulate, estimate, decompose, forecast")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Domain CSV (overrides `data`).
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the continuous model and export `(y(0), y(τ))` on the estimation grid.
    Simulate(Common),
    /// Agent system versus PDE: smoothed L1 distance by ensemble size.
    Particles(Common),
    /// Write the regression design (regressors and correction columns).
    Design(Common),
    /// Fit the configured estimators.
    Fit(Common),
    /// Monte Carlo over the configured grids and sampling intervals.
    Mc(Common),
    /// AICc grid search over the kernel bandwidths.
    SearchBandwidth {
        #[command(flatten)]
        common: Common,
        /// Estimator used for the search.
        #[arg(long, default_value = "ML")]
        method: String,
    },
    /// Counterfactual growth decomposition (in-sample unless `decompose_horizon` is set).
    Decompose(Common),
    /// Forecast `horizon` years ahead with the fitted model.
    Forecast(Common),
    /// Moran's I and correlograms of the residuals before and after the error model.
    Moran(Common),
    /// Nonparametric convergence profiles of the decomposed growth components.
    Profile(Common),
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let start = Instant::now();
    let mut log = move |msg: &str| eprintln!("[{:.1}s] {msg}", start.elapsed().as_secs_f64());
    match cli.command {
        Command::Simulate(c) => simulate(&setup(&c)?, &mut log),
        Command::Particles(c) => particles(&setup(&c)?, &mut log),
        Command::Design(c) => design(&setup(&c)?, &mut log),
        Command::Fit(c) => fit(&setup(&c)?, &mut log),
        Command::Mc(c) => mc(&setup(&c)?, &mut log),
        Command::SearchBandwidth { common, method } => search(&setup(&common)?, parse_method(&method)?, &mut log),
        Command::Decompose(c) => run_decompose(&setup(&c)?, &mut log),
        Command::Forecast(c) => run_forecast(&setup(&c)?, &mut log),
        Command::Moran(c) => moran(&setup(&c)?, &mut log),
        Command::Profile(c) => profile(&setup(&c)?, &mut log),
    }
}

fn setup(c: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    if let Some(d) = &c.data {
        cfg.data = Some(d.clone());
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str, outputs: &mut Vec<String>) -> anyhow::Result<BufWriter<File>> {
    let p = dir.join(name);
    outputs.push(name.to_string());
    Ok(BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))
}

fn finish(cfg: &ExperimentConfig, command: &str, outputs: &[String], log: &mut dyn FnMut(&str)) -> anyhow::Result<()> {
    write_manifest(&cfg.output_dir, command, cfg, outputs)?;
    log(&format!("wrote {} to {}", outputs.join(", "), cfg.output_dir.display()));
    Ok(())
}

fn simulate(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> anyhow::Result<()> {
    log(&format!("simulating on a {0}x{0} lattice", cfg.fine_n));
    let truth = simulate_truth(cfg, &[cfg.tau])?;
    let (domain, y0, y1) = truth.coarse(cfg.grid_n, cfg.tau)?;
    let data = sard_cli::data::DomainData {
        domain,
        y0,
        y1,
        s: None,
        alt: None,
    };
    let mut outputs = Vec::new();
    data.write_csv(create(&cfg.output_dir, "simulated.csv", &mut outputs)?)?;
    finish(cfg, "simulate", &outputs, log)
}

fn particles(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> anyhow::Result<()> {
    let sizes = [cfg.particles / 2, cfg.particles, cfg.particles * 2];
    let setup = MeanFieldSetup {
        t_end: cfg.t_end,
        dt: cfg.particle_dt,
        ..MeanFieldSetup::default()
    };
    log(&format!("ensembles {sizes:?}"));
    let l1 = mean_field_l1(&cfg.params(), &setup, &sizes, cfg.seed)?;
    let mut outputs = Vec::new();
    let mut w = csv::Writer::from_writer(create(&cfg.output_dir, "particles.csv", &mut outputs)?);
    w.write_record(["particles", "l1"])?;
    for (n, d) in sizes.iter().zip(&l1) {
        w.write_record([n.to_string(), d.to_string()])?;
    }
    w.flush()?;
    finish(cfg, "particles", &outputs, log)
}

fn design(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> anyhow::Result<()> {
    let data = load_data(cfg)?;
    let ws = workspace(cfg, &data)?;
    let d = SardDesign::new(&ws.inputs(), &data.y0, &data.y1, cfg.tau)?;
    let (x, m) = (d.exogenous(), d.endogenous());
    let mut outputs = Vec::new();
    let mut w = csv::Writer::from_writer(create(&cfg.output_dir, "design.csv", &mut outputs)?);
    let mut header = vec!["id".to_string(), "dy".to_string()];
    header.extend(d.exogenous_names());
    header.extend(d.endogenous_names());
    w.write_record(&header)?;
    for i in 0..d.len() {
        let mut rec = vec![ws.domain.ids()[i].clone(), d.dy[i].to_string()];
        rec.extend(x.row(i).iter().map(|v| v.to_string()));
        rec.extend(m.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    finish(cfg, "design", &outputs, log)
}

fn fit(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> anyhow::Result<()> {
    let data = load_data(cfg)?;
    let ws = workspace(cfg, &data)?;
    log(&format!("fitting {} locations", data.domain.len()));
    let f = fit_data(cfg, &ws, &data)?;
    let mut outputs = vec!["coefficients.csv".to_string(), "fit.csv".to_string()];
    write_rows(&cfg.output_dir.join("coefficients.csv"), &f.outcome.coef_rows(cfg))?;
    write_rows(&cfg.output_dir.join("fit.csv"), &f.outcome.fit_rows())?;
    if f.outcome.weights.is_some() {
        write_rows(&cfg.output_dir.join("ell.csv"), &f.outcome.ell_rows())?;
        outputs.push("ell.csv".into());
    }
    for fit in &f.outcome.fits {
        log(&format!("{}: loglik {:.3} AICc {:.3}", fit.method, fit.log_likelihood, fit.aicc()));
        for w in &fit.warnings {
            log(&format!("{}: warning: {w}", fit.method));
        }
    }
    finish(cfg, "fit", &outputs, log)
}

fn mc(cfg: &ExperimentConfig, log: &mut (dyn FnMut(&str) + Send)) -> anyhow::Result<()> {
    let report = run_montecarlo(cfg, log)?;
    log(&format!("{} cells run, {} resumed", report.cells_run, report.cells_skipped));
    finish(cfg, "mc", &["table1.csv".into(), "fit_summary.csv".into(), "table2.csv".into()], log)
}

fn search(cfg: &ExperimentConfig, method: Method, log: &mut dyn FnMut(&str)) -> anyhow::Result<()> {
    let data = load_data(cfg)?;
    let ws = workspace(cfg, &data)?;
    let r = bandwidth_search(cfg, &ws, &data.y0, &data.y1, cfg.tau, method, log)?;
    log(&format!("best h_A={} h_R={} AICc {:.3}", r.best.0, r.best.1, r.best_fit.aicc()));
    write_rows(&cfg.output_dir.join("bandwidth_search.csv"), &r.table)?;
    finish(cfg, "search-bandwidth", &["bandwidth_search.csv".into()], log)
}

fn run_decompose(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> anyhow::Result<()> {
    let data = load_data(cfg)?;
    let ws = workspace(cfg, &data)?;
    let f = fit_data(cfg, &ws, &data)?;
    let p = f.preferred_structural()?;
    let horizon = cfg.decompose_horizon.unwrap_or(cfg.tau);
    log(&format!("decomposing with the {} fit over {horizon}", f.preferred().0.method));
    let d = decompose(&ws, &p, &data.y0, horizon, cfg.tau, &f.terms)?;
    if !d.negative.is_empty() {
        log(&format!("{} locations reach a non-positive value", d.negative.len()));
    }
    let mut outputs = Vec::new();
    d.write_csv(ws.domain.ids(), create(&cfg.output_dir, "decomposition.csv", &mut outputs)?)?;
    finish(cfg, "decompose", &outputs, log)
}

fn run_forecast(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> anyhow::Result<()> {
    let data = load_data(cfg)?;
    let ws = workspace(cfg, &data)?;
    let f = fit_data(cfg, &ws, &data)?;
    let p = f.preferred_structural()?;
    // Forecasts start from the latest observation.
    let fc = forecast(&ws, &p, &data.y1, cfg.horizon, cfg.forecast_step)?;
    let mut outputs = Vec::new();
    fc.write_csv(ws.domain.ids(), &data.y1, create(&cfg.output_dir, "forecast.csv", &mut outputs)?)?;
    fc.write_trajectory(ws.domain.ids(), create(&cfg.output_dir, "forecast_path.csv", &mut outputs)?)?;
    finish(cfg, "forecast", &outputs, log)
}

fn moran(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> anyhow::Result<()> {
    let data = load_data(cfg)?;
    let ws = workspace(cfg, &data)?;
    let f = fit_data(cfg, &ws, &data)?;
    let mut outputs = Vec::new();
    if f.outcome.weights.is_some() {
        write_correlograms(&f.outcome, create(&cfg.output_dir, "correlogram.csv", &mut outputs)?)?;
        for (label, m) in [("before", &f.outcome.moran_before), ("after", &f.outcome.moran_after)] {
            if let Some(m) = m {
                log(&format!("Moran's I {label}: {:.4} (z {:.2})", m.i, m.z_score()));
            }
        }
    } else {
        // No error model: correlogram of the first estimator's residuals.
        let contiguity = contiguity_for(&ws.domain, cfg)?;
        let e = &f.outcome.fits[0].residuals;
        let m = morans_i(e, &contiguity.band(1))?;
        log(&format!("Moran's I: {:.4} (z {:.2})", m.i, m.z_score()));
        let cg = correlogram(e, &contiguity, cfg.max_order.min(contiguity.max_order()));
        write_correlogram(&cg, create(&cfg.output_dir, "correlogram.csv", &mut outputs)?)?;
    }
    finish(cfg, "moran", &outputs, log)
}

fn profile(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> anyhow::Result<()> {
    let data = load_data(cfg)?;
    let ws = workspace(cfg, &data)?;
    let f = fit_data(cfg, &ws, &data)?;
    let p = f.preferred_structural()?;
    let d = decompose(&ws, &p, &data.y0, cfg.decompose_horizon.unwrap_or(cfg.tau), cfg.tau, &f.terms)?;
    let log_y0: Vec<f64> = data.y0.iter().map(|v| v.ln()).collect();
    let mut components: Vec<(String, Vec<Option<f64>>)> = vec![("fitted".into(), d.fitted.clone())];
    for t in Term::ALL {
        if let Some(c) = &d.contributions[t.index()] {
            components.push((t.label().to_string(), c.clone()));
        }
    }
    components.push(("interaction".into(), d.interaction.clone()));
    let mut outputs = Vec::new();
    let mut w = create(&cfg.output_dir, "profile.csv", &mut outputs)?;
    for (k, (name, g)) in components.iter().enumerate() {
        let curve = convergence_profile(&log_y0, g, cfg.profile_points, cfg.profile_bandwidth, cfg.profile_bootstrap, cfg.seed ^ k as u64);
        log(&format!("{name}: bandwidth {:.4}, slope {:.5}", curve.bandwidth, curve.slope()));
        curve.write_csv(name, &mut w, k == 0)?;
    }
    drop(w);
    finish(cfg, "profile", &outputs, log)
}
