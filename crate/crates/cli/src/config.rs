//! TOML experiment configuration with sections mirroring the library modules.
//!
//! Every key has a default reproducing the calibrated parameter set of the
//! numerical experiments, so an empty file is a valid configuration. Flags on
//! the command line override keys one-for-one after parsing.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use intraday_core::kernels::{LiquiditySchedule, MarketParams};
use intraday_core::TimeGrid;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub market: MarketSection,
    pub grid: GridSection,
    pub scenarios: ScenarioSection,
    pub estimators: EstimatorSection,
    pub epsnash: EpsNashSection,
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketSection {
    /// Mean-field price impact weight a.
    pub a: f64,
    /// Major-producer price impact weight a⁰.
    pub a0: f64,
    /// Minor terminal tracking penalty λ.
    pub lambda: f64,
    /// Major terminal tracking penalty λ₀.
    pub lambda0: f64,
    /// Initial price S₀ (€/MWh).
    pub s0: f64,
    pub sigma_s: f64,
    pub xbar0: f64,
    pub sigma_bar: f64,
    pub x0_0: f64,
    pub sigma_0: f64,
    pub xcheck0: f64,
    pub sigma_x: f64,
    pub liquidity: LiquiditySection,
}

impl Default for MarketSection {
    fn default() -> Self {
        // the leader-follower experiments split the unit impact evenly
        let p = MarketParams::default().with_impact_weights(0.5, 0.5);
        MarketSection {
            a: p.a,
            a0: p.a0,
            lambda: p.lambda,
            lambda0: p.lambda0,
            s0: p.s0,
            sigma_s: p.sigma_s,
            xbar0: p.xbar0,
            sigma_bar: p.sigma_bar,
            x0_0: p.x0_0,
            sigma_0: p.sigma_0,
            xcheck0: p.xcheck0,
            sigma_x: p.sigma_x,
            liquidity: LiquiditySection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiquiditySection {
    pub alpha_slope: f64,
    pub alpha_intercept: f64,
    pub alpha0_slope: f64,
    pub alpha0_intercept: f64,
    /// Trading horizon T in hours.
    pub horizon: f64,
}

impl Default for LiquiditySection {
    fn default() -> Self {
        let l = MarketParams::default().liquidity;
        LiquiditySection {
            alpha_slope: l.alpha_slope,
            alpha_intercept: l.alpha_intercept,
            alpha0_slope: l.alpha0_slope,
            alpha0_intercept: l.alpha0_intercept,
            horizon: l.horizon,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n_steps: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { n_steps: 96 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub n_minor: usize,
    pub n_sim: usize,
    pub seed: u64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            n_minor: 1,
            n_sim: 1000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    /// Kernel bandwidth in hours.
    pub bandwidth: f64,
    /// Correlation reporting window in hours.
    pub correlation_window: f64,
    /// Scenario count for volatility curve averaging.
    pub volatility_n_sim: usize,
    /// Scenario count for cross-scenario correlations.
    pub correlation_n_sim: usize,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        EstimatorSection {
            bandwidth: intraday_core::estimators::DEFAULT_BANDWIDTH,
            correlation_window: intraday_core::estimators::CORRELATION_WINDOW,
            volatility_n_sim: 1000,
            correlation_n_sim: 50_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsNashSection {
    pub crowd_sizes: Vec<usize>,
    pub n_sim: usize,
    pub bump_height: f64,
    pub bump_center: f64,
    pub bump_width: f64,
    pub tilt_factor: f64,
}

impl Default for EpsNashSection {
    fn default() -> Self {
        EpsNashSection {
            crowd_sizes: vec![4, 16, 64, 256],
            n_sim: 10_000,
            bump_height: 20.0,
            bump_center: 12.0,
            bump_width: 12.0,
            tilt_factor: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum Kind {
    Figure1,
    Figure2Left,
    Figure3,
    EpsnashScaling,
    OracleSuite,
    Custom,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Figure1 => "figure1",
            Kind::Figure2Left => "figure2_left",
            Kind::Figure3 => "figure3",
            Kind::EpsnashScaling => "epsnash_scaling",
            Kind::OracleSuite => "oracle_suite",
            Kind::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: Kind,
    pub output: String,
    /// Worker threads for scenario parallelism; 0 picks the machine default.
    pub threads: usize,
    /// Sub-experiments for `kind = "custom"`; an empty list writes only the
    /// manifest.
    pub steps: Vec<String>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            kind: Kind::Custom,
            output: "out".into(),
            threads: 0,
            steps: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Serialized effective configuration (after overrides); hashed into the
    /// manifest so each run is a pure function of its manifest.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn market_params(&self) -> Result<MarketParams> {
        let m = &self.market;
        let liquidity = LiquiditySchedule::new(
            m.liquidity.alpha_slope,
            m.liquidity.alpha_intercept,
            m.liquidity.alpha0_slope,
            m.liquidity.alpha0_intercept,
            m.liquidity.horizon,
        )?;
        let params = MarketParams {
            a: m.a,
            a0: m.a0,
            lambda: m.lambda,
            lambda0: m.lambda0,
            liquidity,
            s0: m.s0,
            sigma_s: m.sigma_s,
            xbar0: m.xbar0,
            sigma_bar: m.sigma_bar,
            x0_0: m.x0_0,
            sigma_0: m.sigma_0,
            xcheck0: m.xcheck0,
            sigma_x: m.sigma_x,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        Ok(TimeGrid::uniform(
            self.market.liquidity.horizon,
            self.grid.n_steps,
        )?)
    }

    /// Static diagnostics: named violations plus warnings, never an error.
    pub fn diagnostics(&self) -> (Vec<String>, Vec<String>) {
        let mut violations = Vec::new();
        let mut warnings = Vec::new();
        let l = &self.market.liquidity;

        if !(l.horizon > 0.0) {
            violations.push(format!(
                "market.liquidity.horizon must be positive, got {}",
                l.horizon
            ));
        }
        for (key, v) in [
            ("market.liquidity.alpha_slope", l.alpha_slope),
            ("market.liquidity.alpha0_slope", l.alpha0_slope),
        ] {
            if v < 0.0 {
                violations.push(format!(
                    "{key} must be non-negative (liquidity decreases toward delivery), got {v}"
                ));
            }
        }
        for (key, v) in [
            ("market.liquidity.alpha_intercept", l.alpha_intercept),
            ("market.liquidity.alpha0_intercept", l.alpha0_intercept),
        ] {
            if v < 0.0 {
                violations.push(format!("{key} must be non-negative, got {v}"));
            } else if v <= 1e-9 {
                warnings.push(format!(
                    "{key} = {v}: zero terminal trading cost is the degenerate limit in \
                     which the equilibrium is not unique; the solvers refuse to run it"
                ));
            }
        }
        for (key, v) in [
            ("market.a", self.market.a),
            ("market.a0", self.market.a0),
            ("market.lambda", self.market.lambda),
            ("market.lambda0", self.market.lambda0),
            ("market.sigma_s", self.market.sigma_s),
            ("market.sigma_bar", self.market.sigma_bar),
            ("market.sigma_0", self.market.sigma_0),
            ("market.sigma_x", self.market.sigma_x),
        ] {
            if v < 0.0 {
                violations.push(format!("{key} must be non-negative, got {v}"));
            }
        }
        if self.grid.n_steps == 0 {
            violations.push("grid.n_steps must be at least 1".into());
        }
        if self.scenarios.n_sim == 0 {
            violations.push("scenarios.n_sim must be at least 1".into());
        }
        if !(self.estimators.bandwidth > 0.0) {
            violations.push(format!(
                "estimators.bandwidth must be positive, got {}",
                self.estimators.bandwidth
            ));
        }
        if !(self.estimators.correlation_window > 0.0) {
            violations.push(format!(
                "estimators.correlation_window must be positive, got {}",
                self.estimators.correlation_window
            ));
        }
        if self.epsnash.crowd_sizes.is_empty() {
            warnings.push("epsnash.crowd_sizes is empty; the scaling study would be skipped".into());
        }
        if self.epsnash.crowd_sizes.iter().any(|&n| n == 0) {
            violations.push("epsnash.crowd_sizes entries must be at least 1".into());
        }
        if self.experiment.kind != Kind::Custom && !self.experiment.steps.is_empty() {
            warnings.push(format!(
                "experiment.steps is only read when kind = \"custom\" (kind is \"{}\")",
                self.experiment.kind.name()
            ));
        }
        (violations, warnings)
    }
}
