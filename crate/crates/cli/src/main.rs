//! Command-line front end for the intraday equilibrium library.
//!
//! Every subcommand starts from the built-in defaults (the calibrated
//! parameter set of the numerical experiments), optionally layered with a
//! TOML config file, then with one-for-one flag overrides.

mod config;
mod experiments;
mod svg;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, Kind};
use intraday_core::scenarios;
use intraday_core::stackelberg::StackelbergSolver;
use intraday_core::{estimators, homogeneous, TimeGrid};

#[derive(Parser)]
#[command(
    name = "intraday",
    version,
    about = "Equilibrium trading in an intraday electricity market: solvers, simulators, estimators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flag overrides applied on top of the config file; each maps to one key.
#[derive(Args, Debug, Clone, Default)]
struct Overrides {
    /// TOML configuration file (defaults are used when omitted)
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Base seed [scenarios.seed]
    #[arg(long)]
    seed: Option<u64>,
    /// Trading steps on the horizon [grid.n_steps]
    #[arg(long)]
    n_steps: Option<usize>,
    /// Simulated minor producers [scenarios.n_minor]
    #[arg(long)]
    n_minor: Option<usize>,
    /// Monte Carlo scenario count [scenarios.n_sim]
    #[arg(long)]
    n_sim: Option<usize>,
    /// Major price impact weight [market.a0]
    #[arg(long)]
    a0: Option<f64>,
    /// Mean-field price impact weight [market.a]
    #[arg(long)]
    a: Option<f64>,
    /// Minor terminal penalty [market.lambda]
    #[arg(long)]
    lambda: Option<f64>,
    /// Major terminal penalty [market.lambda0]
    #[arg(long)]
    lambda0: Option<f64>,
    /// Trading horizon in hours [market.liquidity.horizon]
    #[arg(long)]
    horizon: Option<f64>,
    /// Kernel bandwidth in hours [estimators.bandwidth]
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Worker threads, 0 = auto [experiment.threads]
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory [experiment.output]
    #[arg(long)]
    output: Option<String>,
    /// Experiment kind [experiment.kind]
    #[arg(long, value_enum)]
    kind: Option<Kind>,
}

impl Overrides {
    fn build(&self, positional: Option<&PathBuf>) -> Result<ExperimentConfig> {
        let path = positional.or(self.config.as_ref());
        let mut cfg = match path {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.scenarios.seed = v;
        }
        if let Some(v) = self.n_steps {
            cfg.grid.n_steps = v;
        }
        if let Some(v) = self.n_minor {
            cfg.scenarios.n_minor = v;
        }
        if let Some(v) = self.n_sim {
            cfg.scenarios.n_sim = v;
            cfg.estimators.volatility_n_sim = v;
            cfg.estimators.correlation_n_sim = v;
            cfg.epsnash.n_sim = v;
        }
        if let Some(v) = self.a0 {
            cfg.market.a0 = v;
        }
        if let Some(v) = self.a {
            cfg.market.a = v;
        }
        if let Some(v) = self.lambda {
            cfg.market.lambda = v;
        }
        if let Some(v) = self.lambda0 {
            cfg.market.lambda0 = v;
        }
        if let Some(v) = self.horizon {
            cfg.market.liquidity.horizon = v;
        }
        if let Some(v) = self.bandwidth {
            cfg.estimators.bandwidth = v;
        }
        if let Some(v) = self.threads {
            cfg.experiment.threads = v;
        }
        if let Some(v) = &self.output {
            cfg.experiment.output = v.clone();
        }
        if let Some(v) = self.kind {
            cfg.experiment.kind = v;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario (forecasts and fundamental price) to CSV
    Simulate {
        #[command(flatten)]
        overrides: Overrides,
        /// Output CSV file (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the leader-follower equilibrium on one scenario
    Equilibrium {
        #[command(flatten)]
        overrides: Overrides,
        /// Use the martingale-difference form of the solver
        #[arg(long)]
        martingale: bool,
        /// Also report the first k individual minor positions
        #[arg(long, default_value_t = 0)]
        minors: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the single-class (homogeneous crowd) equilibrium on one scenario
    Homogeneous {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-crowd deviation study: gains, scaling slopes, envelope
    Epsnash {
        #[command(flatten)]
        overrides: Overrides,
        /// Crowd sizes to test [epsnash.crowd_sizes]
        #[arg(long, value_delimiter = ',')]
        crowd_sizes: Option<Vec<usize>>,
        /// Output CSV file for per-experiment rows (stdout summary regardless)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Volatility and correlation estimators
    Estimate {
        #[command(subcommand)]
        what: EstimateCommand,
    },
    /// Verification suite: deterministic cross-check, martingale and
    /// first-order-condition statistics, sensitivity control
    Oracle {
        #[command(flatten)]
        overrides: Overrides,
        /// Directory for the CSV reports (report prints to stdout regardless)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a configured experiment and write its artifacts
    Run {
        /// TOML configuration file
        #[arg(value_name = "CONFIG")]
        config_path: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Check a configuration without running anything
    Validate {
        /// TOML configuration file
        #[arg(value_name = "CONFIG")]
        config_path: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Subcommand)]
enum EstimateCommand {
    /// Fixed-form forecast volatility and standard realized volatility of a
    /// t,value series
    ForecastVol {
        /// Input CSV with t,value rows (header optional)
        #[arg(long)]
        input: PathBuf,
    },
    /// Kernel volatility curve of a t,value series
    KernelVol {
        #[arg(long)]
        input: PathBuf,
        /// Kernel bandwidth in hours
        #[arg(long, default_value_t = estimators::DEFAULT_BANDWIDTH)]
        bandwidth: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-scenario price-forecast correlations on simulated equilibria
    Correlation {
        #[command(flatten)]
        overrides: Overrides,
        /// Directory for the two correlation CSVs and the plot
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn init_threads(cfg: &ExperimentConfig) {
    if cfg.experiment.threads > 0 {
        // ignore the error if a pool already exists (tests, repeated calls)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.experiment.threads)
            .build_global();
    }
}

fn sink(out: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { overrides, out } => {
            let cfg = overrides.build(None)?;
            init_threads(&cfg);
            let params = cfg.market_params()?;
            let grid = cfg.time_grid()?;
            let scen =
                scenarios::simulate(&params, &grid, cfg.scenarios.n_minor, cfg.scenarios.seed);
            scen.write_csv(sink(out.as_ref())?)?;
        }
        Command::Equilibrium {
            overrides,
            martingale,
            minors,
            out,
        } => {
            let cfg = overrides.build(None)?;
            init_threads(&cfg);
            let params = cfg.market_params()?;
            let grid = cfg.time_grid()?;
            let n_minor = cfg.scenarios.n_minor.max(minors);
            let scen = scenarios::simulate(&params, &grid, n_minor, cfg.scenarios.seed);
            let solver = StackelbergSolver::new(&params, &grid)?;
            let mut eq = if martingale {
                solver.solve_martingale_form(&scen)?
            } else {
                solver.solve(&scen)?
            };
            if minors > 0 {
                let mut phi_i = Vec::with_capacity(minors);
                for i in 0..minors {
                    phi_i.push(solver.minor_strategy(&scen, &eq, i)?);
                }
                eq.phi_i = Some(phi_i);
            }
            eq.write_csv(sink(out.as_ref())?)?;
        }
        Command::Homogeneous { overrides, out } => {
            let cfg = overrides.build(None)?;
            init_threads(&cfg);
            let params = cfg.market_params()?;
            let grid = cfg.time_grid()?;
            let scen = scenarios::simulate(
                &params,
                &grid,
                cfg.scenarios.n_minor.max(1),
                cfg.scenarios.seed,
            );
            let hom = homogeneous::HomogeneousSolver::new(&params, &grid)?.equilibrium(&scen, 0)?;
            hom.write_csv(sink(out.as_ref())?)?;
        }
        Command::Epsnash {
            overrides,
            crowd_sizes,
            out,
        } => {
            let mut cfg = overrides.build(None)?;
            if let Some(sizes) = crowd_sizes {
                cfg.epsnash.crowd_sizes = sizes;
            }
            init_threads(&cfg);
            let report = experiments::epsnash_report(&cfg)?;
            if let Some(p) = &out {
                report.write_csv(BufWriter::new(
                    File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
                ))?;
            }
            print!("{}", experiments::epsnash_summary(&report, &cfg));
        }
        Command::Estimate { what } => run_estimate(what)?,
        Command::Oracle { overrides, out } => {
            let cfg = overrides.build(None)?;
            init_threads(&cfg);
            let outcome = experiments::oracle_outcome(&cfg)?;
            if let Some(dir) = &out {
                std::fs::create_dir_all(dir)?;
                outcome
                    .foc
                    .write_csv(File::create(dir.join("foc_statistics.csv"))?)?;
                outcome
                    .foc_shifted
                    .write_csv(File::create(dir.join("foc_statistics_shifted.csv"))?)?;
                outcome
                    .martingale
                    .write_csv(File::create(dir.join("martingale_statistics.csv"))?)?;
            }
            print!("{}", outcome.report_text);
        }
        Command::Run {
            config_path,
            overrides,
        } => {
            let cfg = overrides.build(Some(&config_path))?;
            init_threads(&cfg);
            let files = experiments::run(&cfg)?;
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Validate {
            config_path,
            overrides,
        } => {
            let cfg = overrides.build(Some(&config_path))?;
            let (violations, warnings) = cfg.diagnostics();
            for v in &violations {
                println!("violation: {v}");
            }
            for w in &warnings {
                println!("warning: {w}");
            }
            if violations.is_empty() && warnings.is_empty() {
                println!("ok: configuration is clean");
            } else {
                println!(
                    "{} violation(s), {} warning(s)",
                    violations.len(),
                    warnings.len()
                );
            }
        }
    }
    Ok(())
}

fn run_estimate(cmd: EstimateCommand) -> Result<()> {
    match cmd {
        EstimateCommand::ForecastVol { input } => {
            let rows = estimators::read_series_csv(BufReader::new(
                File::open(&input).with_context(|| format!("cannot open {}", input.display()))?,
            ))?;
            let series = estimators::increments_from_series(&rows)?;
            println!("n_increments = {}", series.len());
            println!("dt = {}", series.dt());
            println!(
                "forecast_volatility = {}",
                estimators::forecast_volatility(&series)?
            );
            println!(
                "realized_volatility = {}",
                estimators::realized_volatility(&series)?
            );
        }
        EstimateCommand::KernelVol {
            input,
            bandwidth,
            out,
        } => {
            let rows = estimators::read_series_csv(BufReader::new(
                File::open(&input).with_context(|| format!("cannot open {}", input.display()))?,
            ))?;
            if rows.len() < 2 {
                bail!("need at least two rows, got {}", rows.len());
            }
            let series = estimators::increments_from_series(&rows)?;
            let horizon = rows.last().unwrap().0 - rows[0].0;
            let grid = TimeGrid::uniform(horizon, series.len())?;
            let levels: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let curve = estimators::kernel_volatility(&levels, &grid, bandwidth)?;
            let mut w = sink(out.as_ref())?;
            estimators::write_volatility_csv(&mut w, &grid, &curve)?;
        }
        EstimateCommand::Correlation { overrides, out } => {
            let mut cfg = overrides.build(None)?;
            init_threads(&cfg);
            cfg.experiment.kind = Kind::Figure3;
            cfg.experiment.output = out.to_string_lossy().into_owned();
            let files = experiments::run(&cfg)?;
            for f in files {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}
