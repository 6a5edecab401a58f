//! Liquidity schedules, market parameters, and the deterministic kernels
//! (η, Δ, Δ̃, Φ, Π) that enter every closed-form equilibrium expression.
//!
//! The liquidity schedules are affine by construction, so the scalar kernels
//! always have closed forms. The matrix kernels Φ and Π use the commuting
//! closed form (one matrix exponential per grid pair) when the two schedules
//! are proportional, and a Runge-Kutta integration of the defining flow ODE
//! otherwise.
//!
//! Numerical note: the fundamental matrix grows like exp(√(a(a+2a⁰))·Δ̃_{0,t}),
//! which at the default parameters reaches ~1e6–1e9 by delivery time. Every
//! consumer in this crate therefore works with per-pair propagators
//! U(s→t) = Φ(t)Φ(s)⁻¹ and per-pair Π_{s,t}, each computed directly (never as
//! products or differences of whole-horizon tables), so that all stored
//! quantities are as accurate as their own magnitude allows.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::linalg::{expm3, expm_with_integral};
use crate::scenarios::TimeGrid;

/// Affine instantaneous trading-cost (liquidity) schedules for the minor and
/// major producer classes: α(t) = alpha_slope·(T − t) + alpha_intercept and
/// α₀(t) likewise. Both decrease toward the delivery time T, where they equal
/// their intercept exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiquiditySchedule {
    pub alpha_slope: f64,
    pub alpha_intercept: f64,
    pub alpha0_slope: f64,
    pub alpha0_intercept: f64,
    pub horizon: f64,
}

impl LiquiditySchedule {
    pub fn new(
        alpha_slope: f64,
        alpha_intercept: f64,
        alpha0_slope: f64,
        alpha0_intercept: f64,
        horizon: f64,
    ) -> Result<Self> {
        let s = LiquiditySchedule {
            alpha_slope,
            alpha_intercept,
            alpha0_slope,
            alpha0_intercept,
            horizon,
        };
        s.validate()?;
        Ok(s)
    }

    /// Same affine coefficients for both producer classes.
    pub fn symmetric(slope: f64, intercept: f64, horizon: f64) -> Result<Self> {
        Self::new(slope, intercept, slope, intercept, horizon)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        for (name, slope, intercept) in [
            ("alpha", self.alpha_slope, self.alpha_intercept),
            ("alpha0", self.alpha0_slope, self.alpha0_intercept),
        ] {
            if !slope.is_finite() || slope < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name}_slope must be finite and non-negative (schedules decrease toward delivery), got {slope}"
                )));
            }
            // Positive intercept keeps the schedule strictly positive on all
            // of [0, T]. Intercepts near zero approach the degenerate
            // zero-trading-cost limit where the equilibrium is not unique, so
            // they are rejected rather than solved.
            if !intercept.is_finite() || intercept <= 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "{name}_intercept must exceed 1e-9 (zero trading cost has no unique equilibrium), got {intercept}"
                )));
            }
        }
        Ok(())
    }

    /// Minor-class liquidity α(t).
    pub fn alpha(&self, t: f64) -> f64 {
        self.alpha_slope * (self.horizon - t) + self.alpha_intercept
    }

    /// Major-class liquidity α₀(t).
    pub fn alpha0(&self, t: f64) -> f64 {
        self.alpha0_slope * (self.horizon - t) + self.alpha0_intercept
    }

    /// Detect α₀ = c·α: returns the constant c when slope and intercept
    /// ratios agree within 1e-12 relative, `None` otherwise. Ties break
    /// toward `None` (the generic integration path, which is always correct).
    pub fn proportionality(&self) -> Option<f64> {
        let c = self.alpha0_intercept / self.alpha_intercept;
        let diff = (self.alpha0_slope - c * self.alpha_slope).abs();
        let scale = self.alpha0_slope.abs() + (c * self.alpha_slope).abs();
        if diff <= 1e-12 * (1.0 + scale) {
            Some(c)
        } else {
            None
        }
    }
}

/// All scalar model constants. The default reproduces the calibrated
/// parameter set used throughout the numerical experiments:
/// S₀ = 40 €/MWh, σ^S = 10, X̄₀ = X⁰₀ = X̌₀ = 0, σ̄ = σ⁰ = σ^X = 73 MWh/√h,
/// a = 1, λ = λ₀ = 100, α(t) = α₀(t) = 0.3·(T−t) + 0.1, T = 24 h.
///
/// The major impact weight a⁰ is not part of that table (it only appears in
/// the leader-follower experiments); the default 0 reproduces the
/// homogeneous reading, and `with_impact_weights` installs the experiment
/// presets (a⁰, a) ∈ {(0.5, 0.5), (0.9, 0.1), (0, 1)}.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketParams {
    /// Mean-field (aggregate minor) price impact weight.
    pub a: f64,
    /// Major producer price impact weight.
    pub a0: f64,
    /// Minor terminal imbalance penalty.
    pub lambda: f64,
    /// Major terminal imbalance penalty.
    pub lambda0: f64,
    pub liquidity: LiquiditySchedule,
    pub s0: f64,
    pub sigma_s: f64,
    pub xbar0: f64,
    pub sigma_bar: f64,
    /// Major forecast initial value and volatility.
    pub x0_0: f64,
    pub sigma_0: f64,
    /// Idiosyncratic minor forecast initial value and volatility.
    pub xcheck0: f64,
    pub sigma_x: f64,
}

impl Default for MarketParams {
    fn default() -> Self {
        MarketParams {
            a: 1.0,
            a0: 0.0,
            lambda: 100.0,
            lambda0: 100.0,
            liquidity: LiquiditySchedule {
                alpha_slope: 0.3,
                alpha_intercept: 0.1,
                alpha0_slope: 0.3,
                alpha0_intercept: 0.1,
                horizon: 24.0,
            },
            s0: 40.0,
            sigma_s: 10.0,
            xbar0: 0.0,
            sigma_bar: 73.0,
            x0_0: 0.0,
            sigma_0: 73.0,
            xcheck0: 0.0,
            sigma_x: 73.0,
        }
    }
}

/// The three impact-weight combinations (a⁰, a) used in the experiments.
pub const WEIGHT_PRESETS: [(f64, f64); 3] = [(0.5, 0.5), (0.9, 0.1), (0.0, 1.0)];

impl MarketParams {
    pub fn validate(&self) -> Result<()> {
        self.liquidity.validate()?;
        if !(self.a > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mean-field impact weight a must be positive, got {}",
                self.a
            )));
        }
        for (name, v) in [
            ("a0", self.a0),
            ("lambda", self.lambda),
            ("lambda0", self.lambda0),
            ("sigma_s", self.sigma_s),
            ("sigma_bar", self.sigma_bar),
            ("sigma_0", self.sigma_0),
            ("sigma_x", self.sigma_x),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if !self.s0.is_finite() || !self.xbar0.is_finite() || !self.x0_0.is_finite() {
            return Err(Error::InvalidParameter(
                "initial values must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.liquidity.horizon
    }

    pub fn with_impact_weights(&self, a0: f64, a: f64) -> Self {
        let mut p = self.clone();
        p.a0 = a0;
        p.a = a;
        p
    }

    pub fn with_penalties(&self, lambda: f64, lambda0: f64) -> Self {
        let mut p = self.clone();
        p.lambda = lambda;
        p.lambda0 = lambda0;
        p
    }

    /// Coupling matrix A of the coupled position/adjoint system
    /// B(t)⁻¹AΞ + Ξ̇ = −B(t)⁻¹(𝓜 + S·e), Ξ = (φ⁰, N, φ̄)′.
    pub fn a_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            0.0, -self.a0, self.a, -self.a, -self.a, 0.0, self.a0, 0.0, self.a,
        )
    }

    /// Diagonal of B(t)⁻¹ = diag(α₀(t), α(t), α(t))⁻¹.
    pub fn b_inv_diag(&self, t: f64) -> Vector3<f64> {
        let alpha = self.liquidity.alpha(t);
        let alpha0 = self.liquidity.alpha0(t);
        Vector3::new(1.0 / alpha0, 1.0 / alpha, 1.0 / alpha)
    }

    /// Generator M = diag(1/c, 1, 1)·A of the proportional-schedule closed
    /// form Φ(t) = exp(−Δ̃_{0,t}·M).
    pub fn m_matrix(&self, c: f64) -> Matrix3<f64> {
        let a = self.a_matrix();
        Matrix3::new(
            a[(0, 0)] / c,
            a[(0, 1)] / c,
            a[(0, 2)] / c,
            a[(1, 0)],
            a[(1, 1)],
            a[(1, 2)],
            a[(2, 0)],
            a[(2, 1)],
            a[(2, 2)],
        )
    }
}

fn check_domain(s: f64, t: f64, horizon: f64) -> Result<()> {
    if !(0.0 <= s && s <= t && t <= horizon + 1e-12) {
        return Err(Error::Domain(format!(
            "kernel arguments must satisfy 0 ≤ s ≤ t ≤ T, got s = {s}, t = {t}, T = {horizon}"
        )));
    }
    Ok(())
}

/// Δ̃_{s,t} = ∫ₛᵗ du/α(u), closed form for the affine schedule.
fn delta_tilde_raw(sched: &LiquiditySchedule, s: f64, t: f64) -> f64 {
    let k = sched.alpha_slope;
    if k > 0.0 {
        ((sched.alpha(s)) / (sched.alpha(t))).ln() / k
    } else {
        (t - s) / sched.alpha_intercept
    }
}

fn eta_raw(a: f64, sched: &LiquiditySchedule, s: f64, t: f64) -> f64 {
    if a == 0.0 {
        1.0
    } else {
        // equal to the power form (α(t)/α(s))^{a/slope} for positive slope
        (-a * delta_tilde_raw(sched, s, t)).exp()
    }
}

fn delta_raw(a: f64, sched: &LiquiditySchedule, s: f64, t: f64) -> f64 {
    if a > 0.0 {
        (1.0 - eta_raw(a, sched, s, t)) / a
    } else {
        delta_tilde_raw(sched, s, t)
    }
}

/// η(s,t) = exp(−∫ₛᵗ a/α(u) du).
pub fn eta(s: f64, t: f64, params: &MarketParams) -> Result<f64> {
    check_domain(s, t, params.horizon())?;
    Ok(eta_raw(params.a, &params.liquidity, s, t))
}

/// Δ_{s,t} = ∫ₛᵗ η(u,t)/α(u) du = (1 − η(s,t))/a for a > 0, Δ̃ for a = 0.
pub fn delta(s: f64, t: f64, params: &MarketParams) -> Result<f64> {
    check_domain(s, t, params.horizon())?;
    Ok(delta_raw(params.a, &params.liquidity, s, t))
}

/// Δ̃_{s,t} = ∫ₛᵗ du/α(u).
pub fn delta_tilde(s: f64, t: f64, params: &MarketParams) -> Result<f64> {
    check_domain(s, t, params.horizon())?;
    Ok(delta_tilde_raw(&params.liquidity, s, t))
}

// Default internal integration density for the generic (non-proportional)
// schedule path: panels the width of the default 96-step grid cell, 8
// Runge-Kutta substeps each.
fn generic_substep(horizon: f64) -> f64 {
    horizon / (96.0 * 8.0)
}

/// One RK4 step of the flow pair Φ̂' = −G(u)Φ̂, K' = K·G(u) (K = Φ̂⁻¹) and the
/// response integral Ĝ' = K·B(u)⁻¹, with G(u) = B(u)⁻¹A.
struct FlowState {
    phi: Matrix3<f64>,
    phi_inv: Matrix3<f64>,
    resp: Matrix3<f64>,
}

fn flow_derivative(params: &MarketParams, u: f64, st: &FlowState) -> FlowState {
    let b_inv = params.b_inv_diag(u);
    let a = params.a_matrix();
    let mut g = a;
    for i in 0..3 {
        for j in 0..3 {
            g[(i, j)] *= b_inv[i];
        }
    }
    let mut b_inv_m = Matrix3::zeros();
    for i in 0..3 {
        b_inv_m[(i, i)] = b_inv[i];
    }
    FlowState {
        phi: -g * st.phi,
        phi_inv: st.phi_inv * g,
        resp: st.phi_inv * b_inv_m,
    }
}

fn flow_rk4_step(params: &MarketParams, u: f64, h: f64, st: &mut FlowState) {
    let add = |s: &FlowState, d: &FlowState, w: f64| FlowState {
        phi: s.phi + w * d.phi,
        phi_inv: s.phi_inv + w * d.phi_inv,
        resp: s.resp + w * d.resp,
    };
    let k1 = flow_derivative(params, u, st);
    let k2 = flow_derivative(params, u + 0.5 * h, &add(st, &k1, 0.5 * h));
    let k3 = flow_derivative(params, u + 0.5 * h, &add(st, &k2, 0.5 * h));
    let k4 = flow_derivative(params, u + h, &add(st, &k3, h));
    st.phi += h / 6.0 * (k1.phi + 2.0 * k2.phi + 2.0 * k3.phi + k4.phi);
    st.phi_inv += h / 6.0 * (k1.phi_inv + 2.0 * k2.phi_inv + 2.0 * k3.phi_inv + k4.phi_inv);
    st.resp += h / 6.0 * (k1.resp + 2.0 * k2.resp + 2.0 * k3.resp + k4.resp);
}

fn flow_integrate(params: &MarketParams, from: f64, to: f64, st: &mut FlowState, substep: f64) {
    if to <= from {
        return;
    }
    let n = ((to - from) / substep).ceil().max(1.0) as usize;
    let h = (to - from) / n as f64;
    for k in 0..n {
        flow_rk4_step(params, from + k as f64 * h, h, st);
    }
}

fn fresh_flow() -> FlowState {
    FlowState {
        phi: Matrix3::identity(),
        phi_inv: Matrix3::identity(),
        resp: Matrix3::zeros(),
    }
}

/// Fundamental matrix Φ(t) of B(t)⁻¹AΞ + Ξ̇ = 0 with Φ(0) = I.
pub fn fundamental_matrix(t: f64, params: &MarketParams) -> Result<Matrix3<f64>> {
    params.validate()?;
    check_domain(0.0, t, params.horizon())?;
    match params.liquidity.proportionality() {
        Some(c) => {
            let m = params.m_matrix(c);
            let l = delta_tilde_raw(&params.liquidity, 0.0, t);
            Ok(expm3(&(-l * m)))
        }
        None => {
            let mut st = fresh_flow();
            flow_integrate(params, 0.0, t, &mut st, generic_substep(params.horizon()));
            Ok(st.phi)
        }
    }
}

fn diag_c(c: f64) -> Matrix3<f64> {
    let mut d = Matrix3::identity();
    d[(0, 0)] = 1.0 / c;
    d
}

/// Response kernel Π_{s,t} = Φ(t)∫ₛᵗ Φ(u)⁻¹B(u)⁻¹ du.
///
/// Proportional schedules: Π_{s,t} = [∫₀^{Δ̃_{s,t}} e^{−vM} dv]·diag(1/c,1,1).
/// The generator M is singular for every parameter choice (the coupling rows
/// are linearly dependent), so the printed resolvent form M⁻¹(I − e^{−LM})
/// never applies and the integral is evaluated with the block matrix
/// exponential instead. Non-proportional schedules: composite 32-node
/// Gauss-Legendre panels (one per default-width grid cell) over
/// Φ(t)Φ(u)⁻¹B(u)⁻¹, with Φ values carried along by the flow ODE.
pub fn pi_matrix(s: f64, t: f64, params: &MarketParams) -> Result<Matrix3<f64>> {
    params.validate()?;
    check_domain(s, t, params.horizon())?;
    match params.liquidity.proportionality() {
        Some(c) => {
            let m = params.m_matrix(c);
            let l = delta_tilde_raw(&params.liquidity, s, t);
            let (_, integral) = expm_with_integral(&m, l);
            Ok(integral * diag_c(c))
        }
        None => pi_generic(s, t, params, 1.0),
    }
}

// 32-point Gauss-Legendre nodes (positive half) and weights on [-1, 1].
const GL32_NODES: [f64; 16] = [
    0.048307665687738316,
    0.144471961582796493,
    0.239287362252137075,
    0.331868602282127650,
    0.421351276130635345,
    0.506899908932229390,
    0.587715757240762329,
    0.663044266930215201,
    0.732182118740289680,
    0.794483795967942407,
    0.849367613732569970,
    0.896321155766052124,
    0.934906075937739689,
    0.964762255587506430,
    0.985611511545268335,
    0.997263861849481564,
];
const GL32_WEIGHTS: [f64; 16] = [
    0.096540088514727801,
    0.095638720079274859,
    0.093844399080804566,
    0.091173878695763885,
    0.087652093004403811,
    0.083311924226946755,
    0.078193895787070306,
    0.072345794108848506,
    0.065822222776361847,
    0.058684093478535547,
    0.050998059262376176,
    0.042835898022226681,
    0.034273862913021433,
    0.025392065309262059,
    0.016274394730905671,
    0.007018610009470097,
];

/// Full 32-node Gauss-Legendre rule on [-1, 1] as (node, weight) pairs in
/// ascending node order (the flow integration below advances monotonically).
pub(crate) fn gl32() -> [(f64, f64); 32] {
    let mut rule = [(0.0, 0.0); 32];
    for i in 0..16 {
        rule[i] = (-GL32_NODES[15 - i], GL32_WEIGHTS[15 - i]);
        rule[16 + i] = (GL32_NODES[i], GL32_WEIGHTS[i]);
    }
    rule
}

fn pi_generic(s: f64, t: f64, params: &MarketParams, refine: f64) -> Result<Matrix3<f64>> {
    if t <= s {
        return Ok(Matrix3::zeros());
    }
    let horizon = params.horizon();
    let panel_width = horizon / 96.0 / refine;
    let n_panels = ((t - s) / panel_width).ceil().max(1.0) as usize;
    let w_panel = (t - s) / n_panels as f64;
    let substep = generic_substep(horizon) / refine;
    let rule = gl32();
    let mut st = fresh_flow();
    let mut integral = Matrix3::<f64>::zeros();
    let mut pos = s;
    for p in 0..n_panels {
        let a = s + p as f64 * w_panel;
        for (x, w) in rule {
            let u = a + 0.5 * w_panel * (x + 1.0);
            flow_integrate(params, pos, u, &mut st, substep);
            pos = u;
            let b_inv = params.b_inv_diag(u);
            let mut contrib = st.phi_inv;
            for i in 0..3 {
                for j in 0..3 {
                    contrib[(i, j)] *= b_inv[j];
                }
            }
            integral += 0.5 * w_panel * w * contrib;
        }
    }
    flow_integrate(params, pos, t, &mut st, substep);
    Ok(st.phi * integral)
}

#[cfg(test)]
pub(crate) fn pi_matrix_refined(
    s: f64,
    t: f64,
    params: &MarketParams,
    refine: f64,
) -> Result<Matrix3<f64>> {
    match params.liquidity.proportionality() {
        Some(_) => pi_matrix(s, t, params),
        None => pi_generic(s, t, params, refine),
    }
}

pub(crate) fn tri_len(npts: usize) -> usize {
    npts * (npts + 1) / 2
}

pub(crate) fn tri_idx(i: usize, j: usize, npts: usize) -> usize {
    debug_assert!(i <= j && j < npts);
    i * (2 * npts - i + 1) / 2 + (j - i)
}

/// Precomputed kernels for every ordered grid pair (tᵢ, tⱼ), i ≤ j.
///
/// Off-grid values are recomputed by the free functions, never interpolated.
/// Immutable after construction and freely shareable across workers.
pub struct KernelTable {
    grid: TimeGrid,
    npts: usize,
    eta: Vec<f64>,
    delta: Vec<f64>,
    delta_tilde: Vec<f64>,
    /// Per-pair propagator U(tᵢ→tⱼ) = Φ(tⱼ)Φ(tᵢ)⁻¹.
    u: Vec<Matrix3<f64>>,
    pi: Vec<Matrix3<f64>>,
    phi: Vec<Matrix3<f64>>,
    phi_inv: Vec<Matrix3<f64>>,
}

impl KernelTable {
    pub fn build(params: &MarketParams, grid: &TimeGrid) -> Result<Self> {
        params.validate()?;
        if (params.horizon() - grid.horizon()).abs() > 1e-12 * params.horizon() {
            return Err(Error::GridMismatch(format!(
                "grid horizon {} does not match liquidity horizon {}",
                grid.horizon(),
                params.horizon()
            )));
        }
        let npts = grid.n_steps() + 1;
        let times = grid.times();
        let len = tri_len(npts);
        let mut eta = vec![0.0; len];
        let mut delta = vec![0.0; len];
        let mut delta_tilde = vec![0.0; len];
        for i in 0..npts {
            for j in i..npts {
                let k = tri_idx(i, j, npts);
                let (s, t) = (times[i], times[j]);
                delta_tilde[k] = delta_tilde_raw(&params.liquidity, s, t);
                eta[k] = eta_raw(params.a, &params.liquidity, s, t);
                delta[k] = delta_raw(params.a, &params.liquidity, s, t);
            }
        }
        let mut u = vec![Matrix3::zeros(); len];
        let mut pi = vec![Matrix3::zeros(); len];
        let mut phi = vec![Matrix3::identity(); npts];
        let mut phi_inv = vec![Matrix3::identity(); npts];
        match params.liquidity.proportionality() {
            Some(c) => {
                let m = params.m_matrix(c);
                let dc = diag_c(c);
                for i in 0..npts {
                    for j in i..npts {
                        let k = tri_idx(i, j, npts);
                        let (prop, integral) = expm_with_integral(&m, delta_tilde[k]);
                        u[k] = prop;
                        pi[k] = integral * dc;
                    }
                }
                for j in 0..npts {
                    phi[j] = u[tri_idx(0, j, npts)];
                    phi_inv[j] = expm3(&(delta_tilde[tri_idx(0, j, npts)] * m));
                }
            }
            None => {
                let substep = generic_substep(params.horizon());
                for i in 0..npts {
                    let mut st = fresh_flow();
                    u[tri_idx(i, i, npts)] = Matrix3::identity();
                    for j in i + 1..npts {
                        flow_integrate(params, times[j - 1], times[j], &mut st, substep);
                        let k = tri_idx(i, j, npts);
                        u[k] = st.phi;
                        pi[k] = st.phi * st.resp;
                        if i == 0 {
                            phi[j] = st.phi;
                            phi_inv[j] = st.phi_inv;
                        }
                    }
                }
            }
        }
        Ok(KernelTable {
            grid: grid.clone(),
            npts,
            eta,
            delta,
            delta_tilde,
            u,
            pi,
            phi,
            phi_inv,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    #[inline]
    fn k(&self, i: usize, j: usize) -> usize {
        tri_idx(i, j, self.npts)
    }

    pub fn eta(&self, i: usize, j: usize) -> f64 {
        self.eta[self.k(i, j)]
    }

    pub fn delta(&self, i: usize, j: usize) -> f64 {
        self.delta[self.k(i, j)]
    }

    pub fn delta_tilde(&self, i: usize, j: usize) -> f64 {
        self.delta_tilde[self.k(i, j)]
    }

    /// Propagator U(tᵢ→tⱼ) = Φ(tⱼ)Φ(tᵢ)⁻¹, computed per pair.
    pub fn propagator(&self, i: usize, j: usize) -> &Matrix3<f64> {
        &self.u[self.k(i, j)]
    }

    pub fn pi(&self, i: usize, j: usize) -> &Matrix3<f64> {
        &self.pi[self.k(i, j)]
    }

    pub fn phi(&self, j: usize) -> &Matrix3<f64> {
        &self.phi[j]
    }

    pub fn phi_inv(&self, j: usize) -> &Matrix3<f64> {
        &self.phi_inv[j]
    }
}
