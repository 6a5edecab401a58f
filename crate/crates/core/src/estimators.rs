//! Volatility and correlation statistics for simulated or external series.
//!
//! Three estimators: a forecast-volatility figure computed from raw
//! increments, a kernel-smoothed instantaneous price volatility under an
//! Epanechnikov window, and the cross-scenario correlation between price and
//! forecast increments over fixed reporting windows. CSV adapters at the
//! bottom let the same code run on external `t,value` series.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::scenarios::{ScenarioPath, TimeGrid};

/// Default kernel bandwidth, in hours.
pub const DEFAULT_BANDWIDTH: f64 = 0.08;

/// Default reporting window for increment correlations, in hours.
pub const CORRELATION_WINDOW: f64 = 0.25;

/// Evenly sampled increments Yᵢ of one observed series.
#[derive(Debug, Clone)]
pub struct IncrementSeries {
    dt: f64,
    values: Vec<f64>,
}

impl IncrementSeries {
    pub fn new(dt: f64, values: Vec<f64>) -> Result<IncrementSeries> {
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "increment spacing must be a positive number of hours, got {dt}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "increment values must be finite".into(),
            ));
        }
        Ok(IncrementSeries { dt, values })
    }

    /// Differences of an evenly spaced level series.
    pub fn from_levels(dt: f64, levels: &[f64]) -> Result<IncrementSeries> {
        if levels.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "need at least two levels to form increments, got {}",
                levels.len()
            )));
        }
        IncrementSeries::new(dt, levels.windows(2).map(|w| w[1] - w[0]).collect())
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn sum_of_squares(series: &IncrementSeries) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "volatility estimation needs at least two increments, got {}",
            series.len()
        )));
    }
    Ok(series.values.iter().map(|y| y * y).sum())
}

/// Forecast volatility in the fixed product form (√Δt/(n′−1))·ΣYᵢ².
///
/// Deliberately not the classical realized-volatility estimator: for a
/// diffusion with coefficient σ its mean is σ²·Δt^{3/2}·n′/(n′−1), a squared
/// quantity carrying an extra Δt^{3/2}, and no dimensional correction is
/// applied here. Reach for [`realized_volatility`] whenever an estimate of σ
/// itself (units per √hour) is wanted.
pub fn forecast_volatility(series: &IncrementSeries) -> Result<f64> {
    let ss = sum_of_squares(series)?;
    Ok(series.dt.sqrt() / (series.len() as f64 - 1.0) * ss)
}

/// Classical realized volatility √(ΣYᵢ²/((n′−1)Δt)), units per √hour.
pub fn realized_volatility(series: &IncrementSeries) -> Result<f64> {
    let ss = sum_of_squares(series)?;
    Ok((ss / ((series.len() as f64 - 1.0) * series.dt)).sqrt())
}

/// Parabolic window K(x) = (3/4)(1 − x²) on [−1, 1] (Epanechnikov).
pub fn epanechnikov(x: f64) -> f64 {
    if x.abs() <= 1.0 {
        0.75 * (1.0 - x * x)
    } else {
        0.0
    }
}

/// Kernel estimate of instantaneous volatility along one price path.
///
/// At each grid node t the squared cell increments are weighted by an
/// Epanechnikov window of bandwidth `h` hours anchored at each cell's left
/// endpoint:
///
///   σ̂²(t) = Σᵢ K((t_{i−1} − t)/h) ΔP²ᵢ / Σᵢ K((t_{i−1} − t)/h) Δt
///
/// and the square root is reported. Nodes whose window catches no cell give
/// `None` rather than a fake zero; with the default 0.08 h bandwidth on a
/// 15-minute grid that is exactly the delivery node t = T, whose own cell
/// lies entirely to its left. Windows are one-sided near the edges — no
/// reflection.
pub fn kernel_volatility(price: &[f64], grid: &TimeGrid, h: f64) -> Result<Vec<Option<f64>>> {
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "bandwidth must be a positive number of hours, got {h}"
        )));
    }
    let n = grid.n_steps();
    if price.len() != n + 1 {
        return Err(Error::GridMismatch(format!(
            "price path has {} nodes, grid wants {}",
            price.len(),
            n + 1
        )));
    }
    let dt = grid.dt();
    let mut out = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let t = grid.time(j);
        // left endpoints within [t − h, t + h]; the edge weight is 0 anyway
        let lo = ((t - h) / dt).ceil().max(0.0) as usize;
        let hi = (((t + h) / dt).floor() as isize).min(n as isize - 1);
        let (mut num, mut den) = (0.0, 0.0);
        let mut i = lo as isize;
        while i <= hi {
            let w = epanechnikov((grid.time(i as usize) - t) / h);
            let dp = price[i as usize + 1] - price[i as usize];
            num += w * dp * dp;
            den += w * dt;
            i += 1;
        }
        out.push(if den > 0.0 { Some((num / den).sqrt()) } else { None });
    }
    Ok(out)
}

/// Point-wise ensemble volatility: averages σ̂² across paths, then roots.
///
/// Averaging on the variance scale keeps the curve centred on σ no matter
/// how few cells a window holds; averaging the roots themselves would bias
/// sparse windows low by E|Z|/√(E Z²). A node is `None` if it is missing on
/// any path (same grid, same bandwidth — in practice all or none).
pub fn average_kernel_volatility(
    prices: &[Vec<f64>],
    grid: &TimeGrid,
    h: f64,
) -> Result<Vec<Option<f64>>> {
    if prices.is_empty() {
        return Err(Error::InsufficientData("no paths to average".into()));
    }
    let mut acc: Vec<Option<f64>> = vec![Some(0.0); grid.n_steps() + 1];
    for p in prices {
        for (a, v) in acc.iter_mut().zip(kernel_volatility(p, grid, h)?) {
            *a = match (*a, v) {
                (Some(s), Some(x)) => Some(s + x * x),
                _ => None,
            };
        }
    }
    let m = prices.len() as f64;
    Ok(acc
        .into_iter()
        .map(|a| a.map(|s| (s / m).sqrt()))
        .collect())
}

/// Which forecast family to correlate against the price.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForecastAggregate {
    /// The major producer's forecast X⁰.
    Major,
    /// The total forecast X⁰ + X̄ of the major producer and the minor crowd.
    Total,
}

impl ForecastAggregate {
    fn level(self, scen: &ScenarioPath, m: usize) -> f64 {
        match self {
            ForecastAggregate::Major => scen.x0[m],
            ForecastAggregate::Total => scen.x0[m] + scen.xbar[m],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CorrelationEstimate {
    pub rho: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// One reporting window: start time plus the cross-scenario estimate, or
/// `None` when an increment family is degenerate there.
#[derive(Debug, Clone, Copy)]
pub struct CorrelationPoint {
    pub t: f64,
    pub estimate: Option<CorrelationEstimate>,
}

/// Cross-scenario correlation between price and forecast increments.
///
/// Increments are taken over consecutive windows of `window_hours` (which
/// must align with the grid); at each window the sample correlation runs
/// across scenarios, with a Fisher-z 95% confidence band attached. Fewer
/// than four scenarios leave the band at the full interval [−1, 1].
pub fn price_forecast_correlation(
    scenarios: &[ScenarioPath],
    prices: &[Vec<f64>],
    which: ForecastAggregate,
    window_hours: f64,
) -> Result<Vec<CorrelationPoint>> {
    if scenarios.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "correlation across scenarios needs at least two, got {}",
            scenarios.len()
        )));
    }
    if scenarios.len() != prices.len() {
        return Err(Error::GridMismatch(format!(
            "{} scenarios but {} price paths",
            scenarios.len(),
            prices.len()
        )));
    }
    let grid = &scenarios[0].grid;
    let n = grid.n_steps();
    let dt = grid.dt();
    if !window_hours.is_finite() || window_hours <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "window must be a positive number of hours, got {window_hours}"
        )));
    }
    let k = (window_hours / dt).round() as usize;
    if k == 0 || ((k as f64) * dt - window_hours).abs() > 1e-9 * window_hours.max(1.0) {
        return Err(Error::GridMismatch(format!(
            "window of {window_hours} h does not align with the {dt} h grid step"
        )));
    }
    for (scen, p) in scenarios.iter().zip(prices) {
        if scen.grid.n_steps() != n || (scen.grid.dt() - dt).abs() > 1e-12 * dt {
            return Err(Error::GridMismatch(
                "scenarios must share one grid".into(),
            ));
        }
        if p.len() != n + 1 {
            return Err(Error::GridMismatch(format!(
                "price path has {} nodes, grid wants {}",
                p.len(),
                n + 1
            )));
        }
    }

    let n_sim = scenarios.len() as f64;
    let mut out = Vec::new();
    for w in 0..n / k {
        let (m0, m1) = (w * k, (w + 1) * k);
        let mut dy = Vec::with_capacity(scenarios.len());
        let mut dp = Vec::with_capacity(scenarios.len());
        for (scen, p) in scenarios.iter().zip(prices) {
            dy.push(which.level(scen, m1) - which.level(scen, m0));
            dp.push(p[m1] - p[m0]);
        }
        let my = dy.iter().sum::<f64>() / n_sim;
        let mp = dp.iter().sum::<f64>() / n_sim;
        let mut sy = 0.0;
        let mut sp = 0.0;
        let mut sc = 0.0;
        for (y, p) in dy.iter().zip(&dp) {
            sy += (y - my) * (y - my);
            sp += (p - mp) * (p - mp);
            sc += (y - my) * (p - mp);
        }
        let estimate = if sy > 0.0 && sp > 0.0 {
            let rho = (sc / (sy * sp).sqrt()).clamp(-1.0, 1.0);
            let (ci_lo, ci_hi) = if scenarios.len() <= 3 || 1.0 - rho.abs() < 1e-15 {
                if scenarios.len() <= 3 {
                    (-1.0, 1.0)
                } else {
                    (rho, rho)
                }
            } else {
                let z = rho.atanh();
                let half = 1.96 / (n_sim - 3.0).sqrt();
                ((z - half).tanh(), (z + half).tanh())
            };
            Some(CorrelationEstimate { rho, ci_lo, ci_hi })
        } else {
            None
        };
        out.push(CorrelationPoint {
            t: grid.time(m0),
            estimate,
        });
    }
    Ok(out)
}

/// Writes `t,sigma_hat` rows; missing estimates print as `NaN`.
pub fn write_volatility_csv<W: Write>(
    w: &mut W,
    grid: &TimeGrid,
    curve: &[Option<f64>],
) -> Result<()> {
    writeln!(w, "t,sigma_hat")?;
    for (j, v) in curve.iter().enumerate() {
        match v {
            Some(x) => writeln!(w, "{},{}", grid.time(j), x)?,
            None => writeln!(w, "{},NaN", grid.time(j))?,
        }
    }
    Ok(())
}

/// Writes `t,rho,ci_lo,ci_hi` rows; missing estimates print as `NaN`.
pub fn write_correlation_csv<W: Write>(w: &mut W, points: &[CorrelationPoint]) -> Result<()> {
    writeln!(w, "t,rho,ci_lo,ci_hi")?;
    for p in points {
        match p.estimate {
            Some(e) => writeln!(w, "{},{},{},{}", p.t, e.rho, e.ci_lo, e.ci_hi)?,
            None => writeln!(w, "{},NaN,NaN,NaN", p.t)?,
        }
    }
    Ok(())
}

/// Reads a two-column `t,value` series; a non-numeric first line is treated
/// as a header.
pub fn read_series_csv<R: BufRead>(r: R) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let s = line.trim();
        if s.is_empty() {
            continue;
        }
        let mut parts = s.split(',');
        let a = parts.next().unwrap_or("").trim();
        let b = parts.next().unwrap_or("").trim();
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(t), Ok(v)) => out.push((t, v)),
            _ if lineno == 0 => continue,
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "series line {}: expected `t,value`, got `{s}`",
                    lineno + 1
                )))
            }
        }
    }
    if out.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "series has {} usable rows, need at least 2",
            out.len()
        )));
    }
    Ok(out)
}

/// Turns a level series (as read from CSV) into evenly spaced increments.
pub fn increments_from_series(rows: &[(f64, f64)]) -> Result<IncrementSeries> {
    if rows.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least two rows to form increments, got {}",
            rows.len()
        )));
    }
    let dt = rows[1].0 - rows[0].0;
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(
            "time column must be strictly increasing".into(),
        ));
    }
    for w in rows.windows(2) {
        if ((w[1].0 - w[0].0) - dt).abs() > 1e-9 * dt.max(1.0) {
            return Err(Error::GridMismatch(format!(
                "series is unevenly spaced near t = {}",
                w[1].0
            )));
        }
    }
    IncrementSeries::new(dt, rows.windows(2).map(|w| w[1].1 - w[0].1).collect())
}
