//! Closed-form equilibria for an intraday electricity market with one major
//! producer and a mean field of minor producers, plus the simulation and
//! statistical machinery needed to verify them.
//!
//! The library is organised around a shared uniform time grid. Deterministic
//! kernels (module [`kernels`]) feed two equilibrium solvers: the homogeneous
//! mean-field baseline ([`homogeneous`]) and the leader-follower equilibrium
//! with a major player ([`stackelberg`]). Module [`scenarios`] generates the
//! driving Gaussian forecast/price paths, [`nplayer`] evaluates finite-player
//! objectives and deviation gains, [`estimators`] implements the volatility
//! and correlation statistics, and [`oracle`] provides independent
//! brute-force checks (a deterministic boundary-value solver and Monte Carlo
//! first-order-condition tests).

pub mod error;
mod linalg;

pub mod estimators;
pub mod homogeneous;
pub mod kernels;
pub mod nplayer;
pub mod oracle;
pub mod scenarios;
pub mod stackelberg;

pub use error::{Error, Result};
pub use kernels::{KernelTable, LiquiditySchedule, MarketParams};
pub use scenarios::{ScenarioPath, TimeGrid};
