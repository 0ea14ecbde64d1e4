//! The `simulate`, `smooth`, `diagnose` and `regress` subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::builder::BoolishValueParser;
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use crate::babf::babf_run;
use crate::bhm::bhm_run;
use crate::config::{GridSpec, RunConfig, SmoothMethod};
use crate::css::{css_eval, css_fit, interpolation_weight};
use crate::datagen::{sim_gfd, sim_gfd_rgrid, FunctionalDataset, SimConfig};
use crate::diagnostics::{accuracy, chain_summary, coverage, FitEvidence, PSRF_MIN_DRAWS};
use crate::empirical::{build_hyperparams, empirical_estimates};
use crate::error::{Error, Result};
use crate::fregress::{run_protocol, ProtocolConfig, ProtocolReport};
use crate::io::{load_dataset, load_draws, load_results, save_dataset, save_results, write_atomic, ResultsFile};
use crate::summary::{from_rows, Method, RunDraws, SmoothResult};

#[derive(Debug, Parser)]
#[command(name = "bfsmooth", version, about = "Bayesian smoothing of functional data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate Gaussian-process curves with noise.
    Simulate(SimulateArgs),
    /// Smooth a dataset with one of the Gibbs samplers.
    Smooth(SmoothArgs),
    /// Convergence, goodness-of-fit and accuracy report for results files.
    Diagnose(DiagnoseArgs),
    /// Functional regression comparison of smoothed and spline inputs.
    Regress(RegressArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON simulation settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub au: Option<f64>,
    #[arg(long)]
    pub bu: Option<f64>,
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub dense: Option<f64>,
    #[arg(long, value_parser = BoolishValueParser::new())]
    pub cgrid: Option<bool>,
    #[arg(long, value_parser = BoolishValueParser::new())]
    pub stat: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Each curve on its own uniform random grid.
    #[arg(long)]
    pub rgrid: bool,
}

#[allow(non_snake_case)]
#[derive(Debug, Args)]
pub struct SmoothArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Skip the trace and residual sidecars.
    #[arg(long)]
    pub no_draws: bool,
    #[arg(long)]
    pub smethod: Option<SmoothMethod>,
    #[arg(long, value_parser = BoolishValueParser::new())]
    pub cgrid: Option<bool>,
    #[arg(long, value_parser = BoolishValueParser::new())]
    pub mat: Option<bool>,
    #[arg(long = "M")]
    pub M: Option<usize>,
    #[arg(long = "Burnin")]
    pub Burnin: Option<usize>,
    #[arg(long)]
    pub w: Option<f64>,
    #[arg(long)]
    pub ws: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Working-grid length.
    #[arg(long = "m")]
    pub m: Option<usize>,
    /// Working grid, `a:b:n` or a comma list.
    #[arg(long)]
    pub tau: Option<GridSpec>,
    /// Evaluation grid for the basis sampler, `a:b:n` or a comma list.
    #[arg(long = "eval_grid")]
    pub eval_grid: Option<GridSpec>,
    #[arg(long = "resid_thin")]
    pub resid_thin: Option<usize>,
    #[arg(long = "lamb_min")]
    pub lamb_min: Option<f64>,
    #[arg(long = "lamb_max")]
    pub lamb_max: Option<f64>,
    #[arg(long = "lamb_step")]
    pub lamb_step: Option<f64>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = BoolishValueParser::new())]
    pub pace: Option<bool>,
    #[arg(long = "draw_thin")]
    pub draw_thin: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// One or more results files.
    #[arg(required = true)]
    pub results: Vec<PathBuf>,
    /// Dataset with true signals, for accuracy and coverage.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Potential scale reduction over every chain of every file.
    #[arg(long)]
    pub psrf: bool,
    /// Directory for CSV exports of the first results file.
    #[arg(long)]
    pub csv_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegressArgs {
    /// Results of a smoothing run on `data`.
    #[arg(long)]
    pub results: PathBuf,
    /// The dataset that was smoothed; it must carry the true signals.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    #[arg(long, default_value_t = 20)]
    pub n_train: usize,
    #[arg(long, default_value_t = 10)]
    pub n_test: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Smooth(a) => cmd_smooth(&a),
        Command::Diagnose(a) => cmd_diagnose(&a),
        Command::Regress(a) => cmd_regress(&a),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

pub fn sim_config_from(a: &SimulateArgs) -> Result<SimConfig> {
    let mut c: SimConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SimConfig::default(),
    };
    set(&mut c.n, a.n);
    set(&mut c.p, a.p);
    set(&mut c.au, a.au);
    set(&mut c.bu, a.bu);
    set(&mut c.s, a.s);
    set(&mut c.r, a.r);
    set(&mut c.nu, a.nu);
    set(&mut c.rho, a.rho);
    set(&mut c.dense, a.dense);
    set(&mut c.cgrid, a.cgrid);
    set(&mut c.stat, a.stat);
    set(&mut c.seed, a.seed);
    c.validate()?;
    Ok(c)
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<String> {
    let cfg = sim_config_from(a)?;
    let data = if a.rgrid { sim_gfd_rgrid(&cfg)? } else { sim_gfd(&cfg)? };
    save_dataset(&a.out, &data)?;
    Ok(format!(
        "wrote {} curves, pooled grid of {} points, to {}\n",
        data.n(),
        data.pooled.len(),
        a.out.display()
    ))
}

pub fn run_config_from(a: &SmoothArgs) -> Result<RunConfig> {
    let mut c = match &a.config {
        Some(p) => RunConfig::from_json(&std::fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    set(&mut c.smethod, a.smethod);
    set(&mut c.cgrid, a.cgrid);
    set(&mut c.mat, a.mat);
    set(&mut c.M, a.M);
    set(&mut c.Burnin, a.Burnin);
    set(&mut c.w, a.w);
    set(&mut c.ws, a.ws);
    set(&mut c.c, a.c);
    set(&mut c.delta, a.delta);
    if a.nu.is_some() {
        c.nu = a.nu;
    }
    if a.rho.is_some() {
        c.rho = a.rho;
    }
    set(&mut c.l, a.m);
    if a.tau.is_some() {
        c.tau = a.tau.clone();
    }
    if a.eval_grid.is_some() {
        c.eval_grid = a.eval_grid.clone();
    }
    set(&mut c.resid_thin, a.resid_thin);
    set(&mut c.lamb_min, a.lamb_min);
    set(&mut c.lamb_max, a.lamb_max);
    set(&mut c.lamb_step, a.lamb_step);
    set(&mut c.chains, a.chains);
    set(&mut c.seed, a.seed);
    set(&mut c.pace, a.pace);
    set(&mut c.draw_thin, a.draw_thin);
    c.validate()?;
    Ok(c)
}

/// Runs the configured sampler on `data`.
pub fn smooth(data: &FunctionalDataset, cfg: &RunConfig) -> Result<(SmoothResult, RunDraws)> {
    cfg.validate()?;
    cfg.check_dataset(data)?;
    let candidates = cfg.candidates()?;
    let settings = cfg.mcmc();
    let total = settings.iterations;
    let step = (total / 10).max(1);
    let progress = move |chain: usize, it: usize| {
        if it % step == 0 {
            log::info!("chain {chain}: iteration {it}/{total}");
        }
    };
    match cfg.smethod {
        SmoothMethod::Bhm => {
            let est = empirical_estimates(data, &candidates)?;
            let hyper = build_hyperparams(&est, &cfg.prior(), &candidates)?;
            bhm_run(data, &est, &hyper, &settings, Some(&progress))
        }
        SmoothMethod::Babf => babf_run(data, &cfg.prior(), &cfg.babf(), &settings, &candidates, Some(&progress)),
        SmoothMethod::Bgp | SmoothMethod::Bfpca => Err(Error::Unsupported(format!("smethod '{}'", cfg.smethod))),
    }
}

pub fn cmd_smooth(a: &SmoothArgs) -> Result<String> {
    let cfg = run_config_from(a)?;
    let data = load_dataset(&a.data)?;
    let start = Instant::now();
    let (result, draws) = smooth(&data, &cfg)?;
    let secs = start.elapsed().as_secs_f64();
    let mut file = ResultsFile::new(cfg, Some(a.data.display().to_string()), secs, result);
    save_results(&a.out, &mut file, (!a.no_draws).then_some(&draws))?;
    let r = &file.result;
    let mut out = format!(
        "{} finished in {secs:.1}s: {} chain(s), {} retained draws each\n",
        r.method.name(),
        r.chains,
        r.retained / r.chains.max(1)
    );
    let _ = writeln!(out, "noise precision {:.4} [{:.4}, {:.4}]", r.rn, r.rn_ci[0], r.rn_ci[1]);
    let _ = writeln!(out, "results written to {}", a.out.display());
    Ok(out)
}

/// PSRF of each monitored scalar over every chain of every draw set.
pub fn combined_psrf(draws: &[RunDraws]) -> Result<Vec<(String, crate::diagnostics::ChainSummary)>> {
    let first = draws.first().ok_or_else(|| Error::param("no draws"))?;
    if draws.iter().any(|d| d.monitor_names != first.monitor_names) {
        return Err(Error::param("results files monitor different quantities"));
    }
    let chains: Vec<&Vec<Vec<f64>>> = draws.iter().flat_map(|d| d.traces.iter()).collect();
    if chains.len() < 2 {
        return Err(Error::param(
            "PSRF needs at least two chains: pass two or more results files or smooth with --chains 2",
        ));
    }
    let len = chains.iter().map(|c| c.first().map_or(0, |s| s.len())).min().unwrap_or(0);
    if len < PSRF_MIN_DRAWS {
        return Err(Error::param(format!("PSRF needs at least {PSRF_MIN_DRAWS} draws per chain, found {len}")));
    }
    first
        .monitor_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let series: Vec<Vec<f64>> = chains.iter().map(|c| c[j][..len].to_vec()).collect();
            Ok((name.clone(), chain_summary(&series)?))
        })
        .collect()
}

/// Accuracy of one run against the simulated truth.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthReport {
    pub signal_rmse: f64,
    pub raw_rmse: f64,
    pub signal_coverage: f64,
    pub mean_rmse: Option<f64>,
    pub mean_coverage: Option<f64>,
}

/// True mean on the results grid, from the simulation settings or from a
/// stored truth on the same grid.
pub fn true_mean_on(data: &FunctionalDataset, grid: &[f64]) -> Option<Vec<f64>> {
    if let Some(cfg) = &data.sim_config {
        return Some(grid.iter().map(|t| cfg.true_mean(*t)).collect());
    }
    match (&data.truth_grid, &data.true_mean) {
        (Some(g), Some(m)) if g.as_slice() == grid => Some(m.clone()),
        _ => None,
    }
}

pub fn truth_report(result: &SmoothResult, data: &FunctionalDataset) -> Result<TruthReport> {
    if !data.has_truth() {
        return Err(Error::param("the dataset carries no true signals"));
    }
    let bands = result.observed_signals(data)?;
    let (mut est, mut lo, mut hi, mut truth, mut raw) = (vec![], vec![], vec![], vec![], vec![]);
    for (b, c) in bands.iter().zip(&data.curves) {
        est.extend_from_slice(&b.estimate);
        lo.extend_from_slice(&b.lower);
        hi.extend_from_slice(&b.upper);
        truth.extend_from_slice(c.truth.as_ref().expect("checked"));
        raw.extend_from_slice(&c.x);
    }
    let (mean_rmse, mean_coverage) = match true_mean_on(data, &result.grid) {
        Some(m) => (
            Some(accuracy(&result.mu, &m)?.rmse),
            Some(coverage(&result.mu_ci[0], &result.mu_ci[1], &m)?),
        ),
        None => (None, None),
    };
    Ok(TruthReport {
        signal_rmse: accuracy(&est, &truth)?.rmse,
        raw_rmse: accuracy(&raw, &truth)?.rmse,
        signal_coverage: coverage(&lo, &hi, &truth)?,
        mean_rmse,
        mean_coverage,
    })
}

pub fn cmd_diagnose(a: &DiagnoseArgs) -> Result<String> {
    let files: Vec<ResultsFile> = a.results.iter().map(|p| load_results(p)).collect::<Result<_>>()?;
    let mut out = String::new();
    if a.psrf {
        let draws: Vec<RunDraws> = a
            .results
            .iter()
            .zip(&files)
            .map(|(p, f)| load_draws(p, f))
            .collect::<Result<_>>()?;
        let table = combined_psrf(&draws)?;
        let _ = writeln!(out, "PSRF over {} chain(s)", draws.iter().map(|d| d.traces.len()).sum::<usize>());
        for (name, s) in &table {
            let _ = writeln!(out, "  {name:<16} {:.4}", s.psrf);
        }
    }
    let data = a.data.as_deref().map(load_dataset).transpose()?;
    for (path, f) in a.results.iter().zip(&files) {
        let r = &f.result;
        let _ = writeln!(out, "{}: {} ({} chain(s))", path.display(), r.method.name(), r.chains);
        if r.pmin_vec.is_empty() {
            let _ = writeln!(out, "  no residual draws; goodness of fit not assessed");
        } else {
            for ev in [FitEvidence::NoEvidence, FitEvidence::SomeEvidence, FitEvidence::StrongEvidence] {
                let k = r.interpretation.iter().filter(|e| **e == ev).count();
                let _ = writeln!(out, "  {k:>4} curve(s): {}", ev.describe());
            }
        }
        if let Some(d) = data.as_ref().filter(|d| d.has_truth()) {
            let t = truth_report(r, d)?;
            let _ = writeln!(
                out,
                "  signal RMSE {:.4} (raw {:.4}), 95% band coverage {:.3}",
                t.signal_rmse, t.raw_rmse, t.signal_coverage
            );
            if let (Some(e), Some(c)) = (t.mean_rmse, t.mean_coverage) {
                let _ = writeln!(out, "  mean RMSE {e:.4}, 95% band coverage {c:.3}");
            }
        }
    }
    if let Some(dir) = &a.csv_dir {
        std::fs::create_dir_all(dir)?;
        write_csv(dir, &files[0].result)?;
        let _ = writeln!(out, "CSV written to {}", dir.display());
    }
    Ok(out)
}

/// `curves.csv`, `mean.csv` and the long-format `cov.csv`.
pub fn write_csv(dir: &Path, r: &SmoothResult) -> Result<()> {
    let mut s = String::from("curve,t,estimate,lower,upper\n");
    for (i, ((z, lo), hi)) in r.z.iter().zip(&r.z_cl).zip(&r.z_ul).enumerate() {
        for (j, t) in r.grid.iter().enumerate() {
            let _ = writeln!(s, "{i},{t},{},{},{}", z[j], lo[j], hi[j]);
        }
    }
    write_atomic(&dir.join("curves.csv"), s.as_bytes())?;

    let mut s = String::from("t,mu,lower,upper\n");
    for (j, t) in r.grid.iter().enumerate() {
        let _ = writeln!(s, "{t},{},{},{}", r.mu[j], r.mu_ci[0][j], r.mu_ci[1][j]);
    }
    write_atomic(&dir.join("mean.csv"), s.as_bytes())?;

    let bands = r.sigma_cl.as_ref().zip(r.sigma_ul.as_ref());
    let mut s = String::from(if bands.is_some() { "s,t,sigma,lower,upper\n" } else { "s,t,sigma\n" });
    for (a, ta) in r.grid.iter().enumerate() {
        for (b, tb) in r.grid.iter().enumerate() {
            let _ = write!(s, "{ta},{tb},{}", r.sigma[a][b]);
            if let Some((lo, hi)) = bands {
                let _ = write!(s, ",{},{}", lo[a][b], hi[a][b]);
            }
            s.push('\n');
        }
    }
    write_atomic(&dir.join("cov.csv"), s.as_bytes())
}

/// Maps each curve onto `grid` with a near-interpolating spline (weight
/// `1 / (1 + h^3 / 6)` for the curve's mean spacing `h`).
pub fn spline_map(curves: &[(&[f64], &[f64])], grid: &[f64]) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(curves.len(), grid.len());
    for (i, (t, x)) in curves.iter().enumerate() {
        let fit = css_fit(t, x, interpolation_weight(t))?;
        for (j, v) in css_eval(&fit, grid).into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

/// Regression inputs on a common grid: true curves, spline-smoothed raw
/// curves and the sampler's signal estimates.
pub fn regression_inputs(
    result: &SmoothResult,
    data: &FunctionalDataset,
) -> Result<(Vec<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    if !data.has_truth() {
        return Err(Error::param("regress needs a dataset with the true signals"));
    }
    if data.n() < 3 {
        return Err(Error::param("regress needs at least three curves"));
    }
    let grid = match (&data.truth_grid, &data.sim_config) {
        (Some(g), _) => g.clone(),
        (None, Some(c)) => c.pgrid(),
        (None, None) => result.grid.clone(),
    };
    let truth: Vec<(&[f64], &[f64])> = data
        .curves
        .iter()
        .map(|c| (c.t.as_slice(), c.truth.as_deref().expect("checked")))
        .collect();
    let raw: Vec<(&[f64], &[f64])> = data.curves.iter().map(|c| (c.t.as_slice(), c.x.as_slice())).collect();
    let x_true = spline_map(&truth, &grid)?;
    let x_css = spline_map(&raw, &grid)?;
    let x_smooth = match (&result.babf, result.method) {
        (Some(b), Method::Babf) => {
            let zt: Vec<(&[f64], &[f64])> =
                data.curves.iter().zip(&b.zt).map(|(c, z)| (c.t.as_slice(), z.as_slice())).collect();
            spline_map(&zt, &grid)?
        }
        _ if result.grid == grid => from_rows(&result.z)?,
        _ => {
            let z: Vec<(&[f64], &[f64])> = result.z.iter().map(|z| (result.grid.as_slice(), z.as_slice())).collect();
            spline_map(&z, &grid)?
        }
    };
    Ok((grid, x_true, x_css, x_smooth))
}

pub fn regress(result: &SmoothResult, data: &FunctionalDataset, cfg: &ProtocolConfig) -> Result<ProtocolReport> {
    let (grid, x_true, x_css, x_smooth) = regression_inputs(result, data)?;
    let label = result.method.name().to_ascii_uppercase();
    run_protocol(&grid, &x_true, [(label.as_str(), &x_smooth), ("CSS", &x_css)], cfg)
}

pub fn cmd_regress(a: &RegressArgs) -> Result<String> {
    let file = load_results(&a.results)?;
    let data = load_dataset(&a.data)?;
    let cfg = ProtocolConfig {
        n_train: a.n_train,
        n_test: a.n_test,
        replicates: a.replicates,
        lambda: a.lambda,
        seed: a.seed,
    };
    let report = regress(&file.result, &data, &cfg)?;
    if let Some(p) = &a.out {
        write_atomic(p, serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    Ok(report.to_table())
}
