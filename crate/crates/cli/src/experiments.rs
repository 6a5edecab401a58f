//! Experiment runners behind `run <config>`.
//!
//! Each runner turns a parsed configuration into CSV/SVG artifacts in the
//! output directory, then a manifest ties those files to the exact inputs
//! (config hash, seed, library version). Nothing here reads the clock, so a
//! rerun with the same manifest reproduces every byte.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use intraday_core::kernels::{MarketParams, WEIGHT_PRESETS};
use intraday_core::nplayer::{EnsembleSpec, EpsNashHarness, EpsNashReport, MajorDeviation};
use intraday_core::oracle::{self, FocConfig};
use intraday_core::scenarios::{self, ScenarioPath};
use intraday_core::stackelberg::StackelbergSolver;
use intraday_core::{estimators, homogeneous, TimeGrid};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Kind};
use crate::svg::{LinePlot, Series};

pub fn run(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let (violations, _) = cfg.diagnostics();
    if let Some(v) = violations.first() {
        bail!("invalid config: {v}");
    }
    let out = PathBuf::from(&cfg.experiment.output);
    fs::create_dir_all(&out)
        .with_context(|| format!("cannot create output directory {}", out.display()))?;

    let mut files = match cfg.experiment.kind {
        Kind::Figure1 => figure1(cfg, &out)?,
        Kind::Figure2Left => figure2_left(cfg, &out)?,
        Kind::Figure3 => figure3(cfg, &out)?,
        Kind::EpsnashScaling => epsnash_scaling(cfg, &out)?,
        Kind::OracleSuite => oracle_suite(cfg, &out)?,
        Kind::Custom => custom(cfg, &out)?,
    };
    files.sort();
    files.push(write_manifest(cfg, &out, &files)?);
    Ok(files)
}

/// Plain-text key/value manifest; the hash covers the effective (post-
/// override) configuration, so the run is a pure function of this file.
fn write_manifest(cfg: &ExperimentConfig, out: &Path, files: &[PathBuf]) -> Result<PathBuf> {
    let effective = cfg.to_toml();
    let digest = Sha256::digest(effective.as_bytes());
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    let path = out.join("manifest.txt");
    let mut w = BufWriter::new(File::create(&path)?);
    writeln!(w, "version = {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(w, "kind = {}", cfg.experiment.kind.name())?;
    writeln!(w, "seed = {}", cfg.scenarios.seed)?;
    writeln!(w, "config_sha256 = {hex}")?;
    for f in files {
        if let Some(name) = f.file_name() {
            writeln!(w, "file = {}", name.to_string_lossy())?;
        }
    }
    writeln!(w)?;
    writeln!(w, "# effective configuration (input of the hash above)")?;
    for line in effective.lines() {
        writeln!(w, "# {line}")?;
    }
    Ok(path)
}

fn csv_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("cannot create {}", path.display())
    })?))
}

fn write_svg(path: &Path, plot: &LinePlot) -> Result<()> {
    fs::write(path, plot.render())?;
    Ok(())
}

/// Simulate `n_sim` scenarios and solve the leader-follower equilibrium on
/// each; seeds follow the ensemble convention (base ^ index) so different
/// parameter sets reuse the same noise. Parallel, order-stable.
fn solved_paths(
    params: &MarketParams,
    grid: &TimeGrid,
    n_minor: usize,
    n_sim: usize,
    base_seed: u64,
) -> Result<Vec<(ScenarioPath, Vec<f64>)>> {
    let solver = StackelbergSolver::new(params, grid)?;
    (0..n_sim)
        .into_par_iter()
        .map(|k| {
            let scen = scenarios::simulate(params, grid, n_minor, base_seed ^ k as u64);
            let eq = solver.solve(&scen)?;
            Ok((scen, eq.price))
        })
        .collect::<intraday_core::Result<Vec<_>>>()
        .map_err(Into::into)
}

/// Leader and crowd positions for the split-impact game against the
/// homogeneous single-class benchmark carrying the whole impact weight, on
/// one shared scenario.
fn figure1(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let params = cfg.market_params()?;
    let grid = cfg.time_grid()?;
    let n_minor = cfg.scenarios.n_minor.max(1);
    let scen = scenarios::simulate(&params, &grid, n_minor, cfg.scenarios.seed);

    let eq = StackelbergSolver::new(&params, &grid)?.solve(&scen)?;
    let phi0 = eq.phi0();
    let phibar = eq.phibar();

    let total = params.a + params.a0;
    let params_h = params.with_impact_weights(0.0, total);
    let hom = homogeneous::HomogeneousSolver::new(&params_h, &grid)?.equilibrium(&scen, 0)?;

    let csv = out.join("positions.csv");
    let mut w = csv_writer(&csv)?;
    writeln!(w, "t,phi0_leader,phibar_crowd,phibar_homogeneous")?;
    for (j, t) in grid.times().iter().enumerate() {
        writeln!(w, "{t},{},{},{}", phi0[j], phibar[j], hom.phi_bar[j])?;
    }
    drop(w);

    let mut plot = LinePlot::new(
        "Equilibrium positions on one scenario",
        "time (h)",
        "position (MWh)",
    );
    let pts = |ys: &[f64]| -> Vec<(f64, f64)> {
        grid.times().iter().cloned().zip(ys.iter().cloned()).collect()
    };
    plot.push(Series::new(
        &format!("leader, a0={}, a={}", params.a0, params.a),
        pts(&phi0),
    ));
    plot.push(Series::new("crowd mean field", pts(&phibar)));
    plot.push(Series::new(
        &format!("homogeneous crowd, a={total}"),
        pts(&hom.phi_bar),
    ));
    let svg = out.join("positions.svg");
    write_svg(&svg, &plot)?;
    Ok(vec![csv, svg])
}

fn preset_tag(a0: f64, a: f64) -> String {
    format!(
        "a0_{}_a_{}",
        (a0 * 100.0).round() as i64,
        (a * 100.0).round() as i64
    )
}

/// Averaged kernel volatility of the equilibrium price for each impact-weight
/// preset, common random numbers across presets.
fn figure2_left(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let base = cfg.market_params()?;
    let grid = cfg.time_grid()?;
    let n_sim = cfg.estimators.volatility_n_sim;
    let h = cfg.estimators.bandwidth;

    let mut files = Vec::new();
    let mut plot = LinePlot::new(
        &format!("Kernel volatility of the equilibrium price ({n_sim}-path average)"),
        "time (h)",
        "volatility (EUR/MWh per sqrt(h))",
    );
    for &(a0, a) in WEIGHT_PRESETS.iter() {
        let params = base.with_impact_weights(a0, a);
        // minor idiosyncratic paths never enter the price; skip simulating them
        let runs = solved_paths(&params, &grid, 0, n_sim, cfg.scenarios.seed)?;
        let prices: Vec<Vec<f64>> = runs.into_iter().map(|(_, p)| p).collect();
        let curve = estimators::average_kernel_volatility(&prices, &grid, h)?;

        let csv = out.join(format!("volatility_{}.csv", preset_tag(a0, a)));
        let mut w = csv_writer(&csv)?;
        estimators::write_volatility_csv(&mut w, &grid, &curve)?;
        drop(w);
        files.push(csv);

        let pts: Vec<(f64, f64)> = grid
            .times()
            .iter()
            .zip(curve.iter())
            .filter_map(|(&t, v)| v.map(|x| (t, x)))
            .collect();
        plot.push(Series::new(&format!("a0={a0}, a={a}"), pts));
    }
    let svg = out.join("volatility.svg");
    write_svg(&svg, &plot)?;
    files.push(svg);
    Ok(files)
}

/// Cross-scenario correlation between price increments and forecast
/// increments, for the major forecast alone and for the total forecast.
fn figure3(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let params = cfg.market_params()?;
    let grid = cfg.time_grid()?;
    let n_sim = cfg.estimators.correlation_n_sim;
    let window = cfg.estimators.correlation_window;

    let runs = solved_paths(&params, &grid, 0, n_sim, cfg.scenarios.seed)?;
    let (scens, prices): (Vec<ScenarioPath>, Vec<Vec<f64>>) = runs.into_iter().unzip();

    let mut files = Vec::new();
    let mut plot = LinePlot::new(
        &format!("Price-forecast correlation across {n_sim} scenarios"),
        "window start (h)",
        "correlation",
    );
    for (which, name, label) in [
        (
            estimators::ForecastAggregate::Major,
            "correlation_major.csv",
            "major forecast",
        ),
        (
            estimators::ForecastAggregate::Total,
            "correlation_total.csv",
            "total forecast",
        ),
    ] {
        let points = estimators::price_forecast_correlation(&scens, &prices, which, window)?;
        let csv = out.join(name);
        let mut w = csv_writer(&csv)?;
        estimators::write_correlation_csv(&mut w, &points)?;
        drop(w);
        files.push(csv);

        let band: Vec<(f64, f64, f64)> = points
            .iter()
            .filter_map(|p| p.estimate.map(|e| (p.t, e.ci_lo, e.ci_hi)))
            .collect();
        let mut series = Series::with_band(label, band);
        series.points = points
            .iter()
            .filter_map(|p| p.estimate.map(|e| (p.t, e.rho)))
            .collect();
        plot.push(series);
    }
    let svg = out.join("correlation.svg");
    write_svg(&svg, &plot)?;
    files.push(svg);
    Ok(files)
}

fn epsnash_deviations(cfg: &ExperimentConfig) -> Vec<MajorDeviation> {
    vec![
        MajorDeviation::Bump {
            height: cfg.epsnash.bump_height,
            center: cfg.epsnash.bump_center,
            width: cfg.epsnash.bump_width,
        },
        MajorDeviation::ForecastTilt {
            factor: cfg.epsnash.tilt_factor,
        },
    ]
}

pub fn epsnash_report(cfg: &ExperimentConfig) -> Result<EpsNashReport> {
    let params = cfg.market_params()?;
    let grid = cfg.time_grid()?;
    let harness = EpsNashHarness::new(&params, &grid)?;
    let spec = EnsembleSpec {
        n_sim: cfg.epsnash.n_sim,
        base_seed: cfg.scenarios.seed,
    };
    Ok(harness.scaling_study(&cfg.epsnash.crowd_sizes, &epsnash_deviations(cfg), &spec)?)
}

pub fn epsnash_summary(report: &EpsNashReport, cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    s.push_str("finite-crowd deviation study\n");
    s.push_str(&format!(
        "crowd sizes: {}\n",
        cfg.epsnash
            .crowd_sizes
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    ));
    s.push_str(&format!("simulations per size: {}\n\n", cfg.epsnash.n_sim));
    for e in &report.experiments {
        s.push_str(&format!(
            "N = {:>4}  {:<24}  gain = {:>12.4}  se = {:>10.4}  envelope = {:.4}\n",
            e.n, e.deviation_id, e.gain, e.se, e.bound
        ));
    }
    s.push('\n');
    for (family, slope) in &report.slopes {
        s.push_str(&format!(
            "log-log slope of mean-field distance, {family}: {slope:.3}\n"
        ));
    }
    s.push_str(&format!("fitted envelope constant C = {:.4}\n", report.fitted_c));
    s.push_str(&format!(
        "all gains within C/sqrt(N) + 3 SE: {}\n",
        if report.gains_within_envelope() { "yes" } else { "no" }
    ));
    s
}

fn epsnash_scaling(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let report = epsnash_report(cfg)?;
    let csv = out.join("epsnash.csv");
    report.write_csv(csv_writer(&csv)?)?;
    let summary = out.join("epsnash_summary.txt");
    fs::write(&summary, epsnash_summary(&report, cfg))?;
    Ok(vec![csv, summary])
}

pub struct OracleOutcome {
    pub report_text: String,
    pub foc: oracle::TestReport,
    pub foc_shifted: oracle::TestReport,
    pub martingale: oracle::TestReport,
}

/// Full verification suite: deterministic boundary-value cross-check,
/// martingale residual panel, first-order-condition statistics, and the
/// shifted-equilibrium sensitivity control that must fail.
pub fn oracle_outcome(cfg: &ExperimentConfig) -> Result<OracleOutcome> {
    let params = cfg.market_params()?;
    let grid = cfg.time_grid()?;
    let mut text = String::new();
    text.push_str("verification suite\n");
    text.push_str(&format!(
        "n_sim = {}, base seed = {}\n\n",
        cfg.scenarios.n_sim, cfg.scenarios.seed
    ));

    // deterministic cross-check: zero noise, constant fundamental price
    let mut quiet = params.clone();
    quiet.sigma_s = 0.0;
    quiet.sigma_bar = 0.0;
    quiet.sigma_0 = 0.0;
    quiet.sigma_x = 0.0;
    let scen = scenarios::simulate(&quiet, &grid, 0, cfg.scenarios.seed);
    let eq = StackelbergSolver::new(&quiet, &grid)?.solve(&scen)?;
    let s0 = quiet.s0;
    let bvp = oracle::deterministic_bvp(&quiet, &grid, &|_| s0, quiet.x0_0, quiet.xbar0)?;
    let sup = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    let gap0 = sup(&eq.phi0(), &bvp.phi0());
    let gapbar = sup(&eq.phibar(), &bvp.phibar());
    text.push_str("deterministic boundary-value cross-check (zero volatility)\n");
    text.push_str(&format!("  sup |phi0 - reference|   = {gap0:.3e}\n"));
    text.push_str(&format!("  sup |phibar - reference| = {gapbar:.3e}\n\n"));

    let panels =
        oracle::equilibrium_martingale_panels(&params, &grid, cfg.scenarios.n_sim, cfg.scenarios.seed)?;
    let martingale = oracle::martingale_residual_test(&panels)?;
    text.push_str("martingale residual statistics\n");
    text.push_str(&format!("{martingale}\n"));

    let foc_cfg = FocConfig {
        n_sim: cfg.scenarios.n_sim,
        base_seed: cfg.scenarios.seed,
        ..FocConfig::default()
    };
    let foc = oracle::foc_test(&params, &grid, &foc_cfg)?;
    text.push_str("first-order-condition statistics\n");
    text.push_str(&format!("{foc}\n"));

    let shifted_cfg = FocConfig {
        phibar_shift: 1.0,
        ..foc_cfg
    };
    let foc_shifted = oracle::foc_test(&params, &grid, &shifted_cfg)?;
    text.push_str("sensitivity control (crowd position shifted by 1)\n");
    text.push_str(&format!(
        "  statistics tripped: {} of {}\n",
        foc_shifted.failures().len(),
        foc_shifted.statistics.len()
    ));
    text.push_str(&format!(
        "  control behaves as designed: {}\n",
        if foc_shifted.passed() { "no" } else { "yes" }
    ));

    Ok(OracleOutcome {
        report_text: text,
        foc,
        foc_shifted,
        martingale,
    })
}

fn oracle_suite(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let outcome = oracle_outcome(cfg)?;
    let report = out.join("oracle_report.txt");
    fs::write(&report, &outcome.report_text)?;
    let foc = out.join("foc_statistics.csv");
    outcome.foc.write_csv(csv_writer(&foc)?)?;
    let shifted = out.join("foc_statistics_shifted.csv");
    outcome.foc_shifted.write_csv(csv_writer(&shifted)?)?;
    let mart = out.join("martingale_statistics.csv");
    outcome.martingale.write_csv(csv_writer(&mart)?)?;
    Ok(vec![report, foc, shifted, mart])
}

/// Named steps for `kind = "custom"`; an empty list writes only the manifest.
fn custom(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for step in &cfg.experiment.steps {
        match step.as_str() {
            "simulate" => {
                let params = cfg.market_params()?;
                let grid = cfg.time_grid()?;
                let scen =
                    scenarios::simulate(&params, &grid, cfg.scenarios.n_minor, cfg.scenarios.seed);
                let csv = out.join("scenario.csv");
                scen.write_csv(csv_writer(&csv)?)?;
                files.push(csv);
            }
            "equilibrium" => {
                let params = cfg.market_params()?;
                let grid = cfg.time_grid()?;
                let scen =
                    scenarios::simulate(&params, &grid, cfg.scenarios.n_minor, cfg.scenarios.seed);
                let eq = StackelbergSolver::new(&params, &grid)?.solve(&scen)?;
                let csv = out.join("equilibrium.csv");
                eq.write_csv(csv_writer(&csv)?)?;
                files.push(csv);
            }
            "homogeneous" => {
                let params = cfg.market_params()?;
                let grid = cfg.time_grid()?;
                let scen = scenarios::simulate(
                    &params,
                    &grid,
                    cfg.scenarios.n_minor.max(1),
                    cfg.scenarios.seed,
                );
                let hom = homogeneous::HomogeneousSolver::new(&params, &grid)?
                    .equilibrium(&scen, 0)?;
                let csv = out.join("homogeneous.csv");
                hom.write_csv(csv_writer(&csv)?)?;
                files.push(csv);
            }
            "volatility" => {
                let params = cfg.market_params()?;
                let grid = cfg.time_grid()?;
                let runs = solved_paths(
                    &params,
                    &grid,
                    0,
                    cfg.estimators.volatility_n_sim,
                    cfg.scenarios.seed,
                )?;
                let prices: Vec<Vec<f64>> = runs.into_iter().map(|(_, p)| p).collect();
                let curve = estimators::average_kernel_volatility(
                    &prices,
                    &grid,
                    cfg.estimators.bandwidth,
                )?;
                let csv = out.join("volatility.csv");
                let mut w = csv_writer(&csv)?;
                estimators::write_volatility_csv(&mut w, &grid, &curve)?;
                drop(w);
                files.push(csv);
            }
            "correlation" => {
                files.extend(figure3(cfg, out)?);
            }
            "epsnash" => {
                files.extend(epsnash_scaling(cfg, out)?);
            }
            "oracle" => {
                files.extend(oracle_suite(cfg, out)?);
            }
            other => bail!(
                "unknown custom step \"{other}\" (expected simulate, equilibrium, homogeneous, \
                 volatility, correlation, epsnash, or oracle)"
            ),
        }
    }
    Ok(files)
}
