//! Joint sample paths of the fundamental price and the demand/production
//! forecast martingales, on a shared uniform grid, reproducibly seeded.
//!
//! All drivers are arithmetic Brownian motions, so the Gaussian increment
//! scheme is exact on any grid. Each (scenario, driver) pair gets its own
//! counter-derived ChaCha12 stream: scenario k uses seed `base_seed ^ k` and
//! driver streams 0 = S, 1 = X̄, 2 = X⁰, 3+i = X̌ⁱ. This makes ensembles
//! reproducible across platforms and thread counts.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels::MarketParams;

/// Uniform discretization of [0, T].
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if n_steps < 2 {
            return Err(Error::InvalidParameter(format!(
                "n_steps must be at least 2, got {n_steps}"
            )));
        }
        let times = (0..=n_steps)
            .map(|k| horizon * k as f64 / n_steps as f64)
            .collect();
        Ok(TimeGrid {
            horizon,
            n_steps,
            times,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Grid spacing Δt.
    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Grid points t₀ = 0 < … < t_n = T (n_steps + 1 values).
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, k: usize) -> f64 {
        self.times[k]
    }

    pub fn check_same(&self, other: &TimeGrid, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "{what}: grids differ (T = {} / {}, n_steps = {} / {})",
                self.horizon, other.horizon, self.n_steps, other.n_steps
            )));
        }
        Ok(())
    }
}

/// One joint realization of (S, X̄, X⁰, X̌¹..X̌ᴺ) on a grid.
#[derive(Debug, Clone)]
pub struct ScenarioPath {
    pub grid: TimeGrid,
    /// Fundamental price path.
    pub s: Vec<f64>,
    /// Common (mean-field average) forecast path.
    pub xbar: Vec<f64>,
    /// Major producer forecast path.
    pub x0: Vec<f64>,
    /// Idiosyncratic minor forecast paths.
    pub xcheck: Vec<Vec<f64>>,
}

fn driver_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn abm_path(rng: &mut ChaCha12Rng, init: f64, sigma: f64, dt: f64, n_steps: usize) -> Vec<f64> {
    let scale = sigma * dt.sqrt();
    let mut path = Vec::with_capacity(n_steps + 1);
    let mut x = init;
    path.push(x);
    for _ in 0..n_steps {
        let z: f64 = rng.sample(StandardNormal);
        x += scale * z;
        path.push(x);
    }
    path
}

/// Generate one scenario. Same (params, grid, n_minor prefix, seed) → same
/// bits; adding minor agents never changes the common drivers.
pub fn simulate(params: &MarketParams, grid: &TimeGrid, n_minor: usize, seed: u64) -> ScenarioPath {
    let n = grid.n_steps();
    let dt = grid.dt();
    let s = abm_path(&mut driver_rng(seed, 0), params.s0, params.sigma_s, dt, n);
    let xbar = abm_path(&mut driver_rng(seed, 1), params.xbar0, params.sigma_bar, dt, n);
    let x0 = abm_path(&mut driver_rng(seed, 2), params.x0_0, params.sigma_0, dt, n);
    let xcheck = (0..n_minor)
        .map(|i| {
            abm_path(
                &mut driver_rng(seed, 3 + i as u64),
                params.xcheck0,
                params.sigma_x,
                dt,
                n,
            )
        })
        .collect();
    ScenarioPath {
        grid: grid.clone(),
        s,
        xbar,
        x0,
        xcheck,
    }
}

/// Lazily yield `n_sim` independent scenarios with seeds `base_seed ^ k`.
pub fn ensemble<'a>(
    params: &'a MarketParams,
    grid: &'a TimeGrid,
    n_minor: usize,
    n_sim: usize,
    base_seed: u64,
) -> impl Iterator<Item = ScenarioPath> + 'a {
    (0..n_sim).map(move |k| simulate(params, grid, n_minor, base_seed ^ k as u64))
}

impl ScenarioPath {
    pub fn n_minor(&self) -> usize {
        self.xcheck.len()
    }

    /// Keep every `factor`-th node, giving the same Brownian paths observed
    /// on a coarser grid (for discretization-refinement comparisons).
    pub fn coarsen(&self, factor: usize) -> Result<ScenarioPath> {
        let n = self.grid.n_steps();
        if factor == 0 || n % factor != 0 || n / factor < 2 {
            return Err(Error::InvalidParameter(format!(
                "coarsening factor {factor} does not divide {n} steps into ≥ 2"
            )));
        }
        let pick = |v: &[f64]| v.iter().copied().step_by(factor).collect::<Vec<_>>();
        Ok(ScenarioPath {
            grid: TimeGrid::uniform(self.grid.horizon(), n / factor)?,
            s: pick(&self.s),
            xbar: pick(&self.xbar),
            x0: pick(&self.x0),
            xcheck: self.xcheck.iter().map(|p| pick(p)).collect(),
        })
    }

    /// Full forecast of minor agent i: Xⁱ = X̄ + X̌ⁱ.
    pub fn x_minor(&self, i: usize) -> Vec<f64> {
        self.xbar
            .iter()
            .zip(&self.xcheck[i])
            .map(|(c, d)| c + d)
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "t,S,Xbar,X0")?;
        for i in 0..self.xcheck.len() {
            write!(w, ",Xcheck_{}", i + 1)?;
        }
        writeln!(w)?;
        for (k, t) in self.grid.times().iter().enumerate() {
            write!(w, "{},{},{},{}", t, self.s[k], self.xbar[k], self.x0[k])?;
            for path in &self.xcheck {
                write!(w, ",{}", path[k])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table1() -> MarketParams {
        MarketParams::default()
    }

    #[test]
    fn grid_is_uniform_and_hits_endpoints() {
        let grid = TimeGrid::uniform(24.0, 96).unwrap();
        assert_eq!(grid.times().len(), 97);
        assert_eq!(grid.time(0), 0.0);
        assert_eq!(grid.time(96), 24.0);
        assert!((grid.dt() - 0.25).abs() < 1e-15);
        assert!(TimeGrid::uniform(24.0, 1).is_err());
        assert!(TimeGrid::uniform(0.0, 8).is_err());
    }

    #[test]
    fn zero_volatility_paths_are_constant() {
        let mut params = table1();
        params.sigma_s = 0.0;
        params.sigma_bar = 0.0;
        params.sigma_0 = 0.0;
        params.sigma_x = 0.0;
        let grid = TimeGrid::uniform(24.0, 16).unwrap();
        let path = simulate(&params, &grid, 2, 7);
        assert!(path.s.iter().all(|&v| v == params.s0));
        assert!(path.xbar.iter().all(|&v| v == 0.0));
        assert!(path.x0.iter().all(|&v| v == 0.0));
        assert!(path.xcheck[1].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_reproduces_bits() {
        let params = table1();
        let grid = TimeGrid::uniform(24.0, 96).unwrap();
        let a = simulate(&params, &grid, 3, 42);
        let b = simulate(&params, &grid, 3, 42);
        assert_eq!(a.s, b.s);
        assert_eq!(a.xbar, b.xbar);
        assert_eq!(a.x0, b.x0);
        assert_eq!(a.xcheck, b.xcheck);
        // extra minors leave the common drivers untouched
        let c = simulate(&params, &grid, 5, 42);
        assert_eq!(a.s, c.s);
        assert_eq!(a.xcheck[2], c.xcheck[2]);
        let d = simulate(&params, &grid, 3, 43);
        assert_ne!(a.s, d.s);
    }

    #[test]
    fn terminal_variance_matches_gaussian_law() {
        // σ̄ = 73, T = 1: Var X̄_T = σ̄²·T = 5329 regardless of n_steps.
        let mut params = table1();
        params.sigma_bar = 73.0;
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let n_sim = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for path in ensemble(&params, &grid, 0, n_sim, 1234) {
            let x = *path.xbar.last().unwrap();
            sum += x;
            sum_sq += x * x;
        }
        let mean = sum / n_sim as f64;
        let var = sum_sq / n_sim as f64 - mean * mean;
        // SE of the sample variance of a Gaussian: σ²√(2/n)
        let se = 73.0_f64.powi(2) * (2.0 / n_sim as f64).sqrt();
        println!("terminal variance {var:.1} vs 5329, se {se:.1}");
        assert!((var - 5329.0).abs() < 3.0 * se);
    }

    #[test]
    fn ensemble_mean_is_martingale_start() {
        let params = table1();
        let grid = TimeGrid::uniform(24.0, 8).unwrap();
        let n_sim = 10_000;
        let mean: f64 = ensemble(&params, &grid, 0, n_sim, 99)
            .map(|p| *p.s.last().unwrap())
            .sum::<f64>()
            / n_sim as f64;
        let se = params.sigma_s * grid.horizon().sqrt() / (n_sim as f64).sqrt();
        println!("mean S_T = {mean:.3}, S0 = 40, se = {se:.3}");
        assert!((mean - 40.0).abs() < 3.0 * se);
    }

    #[test]
    fn increments_do_not_depend_on_level() {
        // regression of ΔS on S_t over the ensemble: slope and intercept ≈ 0
        let params = table1();
        let grid = TimeGrid::uniform(24.0, 8).unwrap();
        let n_sim = 10_000;
        let (mut sx, mut sy, mut sxx, mut sxy, mut cnt) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut incs = Vec::new();
        let mut levels = Vec::new();
        for path in ensemble(&params, &grid, 0, n_sim, 2024) {
            for k in 0..grid.n_steps() {
                let x = path.s[k];
                let y = path.s[k + 1] - path.s[k];
                levels.push(x);
                incs.push(y);
                sx += x;
                sy += y;
                sxx += x * x;
                sxy += x * y;
                cnt += 1.0;
            }
        }
        let slope = (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
        let intercept = (sy - slope * sx) / cnt;
        // residual variance for standard errors
        let mut rss = 0.0;
        for (x, y) in levels.iter().zip(&incs) {
            let r = y - intercept - slope * x;
            rss += r * r;
        }
        let sigma2 = rss / (cnt - 2.0);
        let mean_x = sx / cnt;
        let sxx_c = sxx - cnt * mean_x * mean_x;
        let se_slope = (sigma2 / sxx_c).sqrt();
        let se_intercept = (sigma2 * (1.0 / cnt + mean_x * mean_x / sxx_c)).sqrt();
        println!("slope {slope:.5} ± {se_slope:.5}, intercept {intercept:.5} ± {se_intercept:.5}");
        assert!(slope.abs() < 3.0 * se_slope);
        assert!(intercept.abs() < 3.0 * se_intercept);
    }

    #[test]
    fn terminal_law_invariant_under_grid_refinement() {
        // Kolmogorov-Smirnov on S_T between n_steps = 8 and 64.
        let params = table1();
        let coarse = TimeGrid::uniform(24.0, 8).unwrap();
        let fine = TimeGrid::uniform(24.0, 64).unwrap();
        let n_sim = 10_000;
        let mut a: Vec<f64> = ensemble(&params, &coarse, 0, n_sim, 555)
            .map(|p| *p.s.last().unwrap())
            .collect();
        let mut b: Vec<f64> = ensemble(&params, &fine, 0, n_sim, 556)
            .map(|p| *p.s.last().unwrap())
            .collect();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let mut d: f64 = 0.0;
        let (mut i, mut j) = (0usize, 0usize);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            let f1 = i as f64 / a.len() as f64;
            let f2 = j as f64 / b.len() as f64;
            d = d.max((f1 - f2).abs());
        }
        let ne = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
        let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
        // asymptotic Kolmogorov tail
        let mut p = 0.0;
        for k in 1..=100 {
            let k = k as f64;
            p += 2.0 * (-1.0_f64).powi(k as i32 + 1) * (-2.0 * k * k * lambda * lambda).exp();
        }
        println!("KS statistic {d:.4}, p ≈ {p:.4}");
        assert!(p > 0.01, "terminal laws differ: p = {p}");
    }

    #[test]
    fn csv_round_trip_shape() {
        let params = table1();
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let path = simulate(&params, &grid, 2, 1);
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,S,Xbar,X0,Xcheck_1,Xcheck_2");
        assert_eq!(lines.count(), 5);
    }
}
