//! Closed-form per-step divergences for a lagged Poisson counting pair.
//!
//! The destination `X` is the counting process of a homogeneous Poisson
//! process with intensity `λ`; the source is the deterministically lagged
//! copy `Y_t = X_{t+ε}` with `0 < r < ε`. On a grid with step `dt` and
//! `L = ⌊r/dt⌋ ≥ 1`, conditioning a step on the source history collapses
//! to the single future count `c` at time `node(i+L) + ε`, and the
//! conditional law of the step increment `b − a` given `d = c − a` is
//! `Binomial(d, dt / (ε + (1−L)·dt))`. Conditioning on the destination
//! history alone leaves the increment `Poisson(λ·dt)`.
//!
//! The per-step KL divergence between these two laws has closed forms:
//! `λ·dt` when `d = 0` and [`s_value`] when `d = 1`; the general-`d`
//! value is a finite falling-factorial sum. Summing over the grid gives
//! the pathwise divergence and its single-jump bound `τ·S`.

use crate::comb::{guarded_floor_div, CombGrid};
use crate::dte::{CondPmfTable, ExactStepTables, HistoryKey, Pmf, TEEstimate};
use crate::error::{Error, Result};
use crate::paths::{lag_path, simulate_thppp, PoissonSpec, ProcessPair};
use crate::rng::stream_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Tail mass discarded when truncating an infinite-support pmf.
const TRUNCATION_TAIL: f64 = 1e-12;

/// Lagged-Poisson model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaggedPoissonParams {
    pub lambda: f64,
    pub epsilon: f64,
    /// source history length, `0 < r < epsilon`
    pub r: f64,
    /// destination history length, `> 0`
    pub s: f64,
    pub t0: f64,
    pub t_end: f64,
}

impl LaggedPoissonParams {
    pub fn new(lambda: f64, epsilon: f64, r: f64, s: f64, t0: f64, t_end: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::Parameter(format!("intensity {lambda} must be > 0")));
        }
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(Error::Parameter(format!("lag {epsilon} must be > 0")));
        }
        if !r.is_finite() || r <= 0.0 || r >= epsilon {
            return Err(Error::Parameter(format!(
                "source history length must satisfy 0 < r < epsilon, got r = {r}, epsilon = {epsilon}"
            )));
        }
        if !s.is_finite() || s <= 0.0 {
            return Err(Error::Parameter(format!("destination history length {s} must be > 0")));
        }
        if !(t0 < t_end) || !t0.is_finite() || !t_end.is_finite() {
            return Err(Error::Parameter(format!("bad window [{t0}, {t_end})")));
        }
        Ok(Self { lambda, epsilon, r, s, t0, t_end })
    }

    /// Grid over the model window at step `dt`; requires `L = ⌊r/dt⌋ ≥ 1`.
    pub fn grid(&self, dt: f64) -> Result<CombGrid> {
        let grid = CombGrid::new(self.t0, self.t_end, self.s, self.r, dt)?;
        self.level(dt)?;
        Ok(grid)
    }

    /// `L = ⌊r/dt⌋`, validated as at least 1 with `L·dt < ε`.
    pub fn level(&self, dt: f64) -> Result<i64> {
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::Parameter(format!("step {dt} must be > 0")));
        }
        let level = guarded_floor_div(self.r, dt);
        if level < 1 {
            return Err(Error::Parameter(format!(
                "step {dt} exceeds the source history length r = {}",
                self.r
            )));
        }
        if level as f64 * dt >= self.epsilon {
            return Err(Error::Parameter(format!(
                "step {dt} too large: L*dt = {} reaches the lag {}",
                level as f64 * dt,
                self.epsilon
            )));
        }
        Ok(level)
    }

    /// Window of the conditioning interval, `ε + (1 − L)·dt`.
    fn cond_window(&self, dt: f64) -> Result<f64> {
        let level = self.level(dt)?;
        Ok(self.epsilon + (1.0 - level as f64) * dt)
    }
}

/// Counts at the two conditioning nodes of a step: `a` at `node(i+1)`,
/// `c` at `node(i+L) + ε`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepContext {
    pub a: i64,
    pub c: i64,
}

impl StepContext {
    pub fn new(a: i64, c: i64) -> Result<Self> {
        if c < a {
            return Err(Error::Parameter(format!(
                "counting process cannot decrease: a = {a}, c = {c}"
            )));
        }
        Ok(Self { a, c })
    }

    /// Events available to the step, `d = c − a`.
    pub fn d(&self) -> i64 {
        self.c - self.a
    }
}

/// `pois(x, n) = e^{−x}·x^n / n!`, evaluated in log space for `n > 20`.
pub fn pois(x: f64, n: u64) -> Result<f64> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::Contract(format!("pois mean {x} must be >= 0")));
    }
    if x == 0.0 {
        return Ok(if n == 0 { 1.0 } else { 0.0 });
    }
    if n <= 20 {
        let mut v = (-x).exp();
        for i in 1..=n {
            v *= x / i as f64;
        }
        Ok(v)
    } else {
        Ok((-x + n as f64 * x.ln() - ln_factorial(n)).exp())
    }
}

fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// Truncated, renormalized `Poisson(λ·dt)` law of the next count given
/// the current count `a`: support `b ≥ a`, tail mass below `1e-12`.
pub fn cond_pmf_given_x(lambda: f64, dt: f64, a: i64) -> Result<Pmf> {
    cond_pmf_given_x_with_support(lambda, dt, a, 0)
}

/// [`cond_pmf_given_x`] whose support is extended to at least
/// `min_increments` increments, so it can serve as the reference side of
/// a divergence against a law supported that far out.
pub fn cond_pmf_given_x_with_support(
    lambda: f64,
    dt: f64,
    a: i64,
    min_increments: u64,
) -> Result<Pmf> {
    if !lambda.is_finite() || lambda <= 0.0 || !dt.is_finite() || dt <= 0.0 {
        return Err(Error::Parameter(format!("need lambda, dt > 0, got {lambda}, {dt}")));
    }
    let mean = lambda * dt;
    let mut entries = Vec::new();
    let mut cum = 0.0;
    let mut n: u64 = 0;
    loop {
        let p = pois(mean, n)?;
        entries.push((a + n as i64, p));
        cum += p;
        if n >= min_increments && 1.0 - cum <= TRUNCATION_TAIL && n as f64 >= mean {
            break;
        }
        n += 1;
        if n > 10_000 {
            return Err(Error::Numerical(format!(
                "Poisson truncation did not converge at mean {mean}"
            )));
        }
    }
    Pmf::from_weights(entries)
}

/// Law of the next count given the current count `a` and the lagged
/// future count `c`: `b − a ~ Binomial(d, dt/(ε + (1−L)·dt))` on `[a, c]`.
///
/// Algebraically equal to the ratio
/// `pois(λ(ε − L·dt); c − b)·pois(λ·dt; b − a) / pois(λ(ε + (1−L)·dt); c − a)`.
pub fn cond_pmf_given_xy(params: &LaggedPoissonParams, dt: f64, ctx: &StepContext) -> Result<Pmf> {
    let window = params.cond_window(dt)?;
    let d = ctx.d() as u64;
    let p = dt / window;
    let q = 1.0 - p;
    let mut entries = Vec::with_capacity(d as usize + 1);
    // iterative binomial coefficients: C(d, j)·p^j·q^(d−j)
    let mut mass = q.powi(d as i32);
    for j in 0..=d {
        entries.push((ctx.a + j as i64, mass));
        if j < d {
            mass *= (d - j) as f64 / (j + 1) as f64 * p / q;
        }
    }
    Pmf::from_weights(entries)
}

/// Which window appears inside the general-`d` logarithm. The grid
/// window `ε − L·dt` is the variant consistent with the direct KL; the
/// literal variant `ε − λ·dt` is kept only for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogWindowVariant {
    GridWindow,
    LiteralLambda,
}

/// Per-step KL divergence of the two conditional laws for a context with
/// `d = c − a` available events.
///
/// `d = 0` gives exactly `λ·dt`; `d = 1` gives exactly [`s_value`];
/// `d ≥ 2` evaluates the finite falling-factorial sum.
pub fn per_step_kl(params: &LaggedPoissonParams, dt: f64, ctx: &StepContext) -> Result<f64> {
    per_step_kl_with_variant(params, dt, ctx, LogWindowVariant::GridWindow)
}

/// [`per_step_kl`] with an explicit choice of the log-window variant.
pub fn per_step_kl_with_variant(
    params: &LaggedPoissonParams,
    dt: f64,
    ctx: &StepContext,
    variant: LogWindowVariant,
) -> Result<f64> {
    let level = params.level(dt)?;
    let d = ctx.d();
    if d == 0 {
        return Ok(params.lambda * dt);
    }
    if d == 1 && variant == LogWindowVariant::GridWindow {
        return s_value(params.lambda, dt, params.epsilon, params.r);
    }
    let window = params.cond_window(dt)?;
    let grid_window = params.epsilon - level as f64 * dt;
    let log_window = match variant {
        LogWindowVariant::GridWindow => grid_window,
        LogWindowVariant::LiteralLambda => params.epsilon - params.lambda * dt,
    };
    if log_window <= 0.0 {
        return Err(Error::Parameter(format!("log window {log_window} must be > 0")));
    }
    let p = dt / window;
    let q = 1.0 - p;
    let d_u = d as u64;
    // Σ_j Binom(d,p)(j) · [λ·dt + ln(d^(j)) − j·ln(λ·W) − d·ln(1 + dt/(ε−L·dt))]
    // where d^(j) is the j-th falling factorial of d.
    let mut total = params.lambda * dt - d as f64 * (dt / grid_window).ln_1p();
    let mut mass = q.powi(d as i32);
    let mut ln_falling = 0.0;
    for j in 0..=d_u {
        if j > 0 {
            ln_falling += ((d_u - j + 1) as f64).ln();
        }
        total += mass * (ln_falling - j as f64 * (params.lambda * log_window).ln());
        if j < d_u {
            mass *= (d_u - j) as f64 / (j + 1) as f64 * p / q;
        }
    }
    Ok(total)
}

/// The `d = 1` per-step divergence
/// `S(λ, dt) = λ·dt·ρ + η(ρ) + (λ·dt² − ln(λ)·dt)/W + dt·η(1/W)`
/// with `W = ε + (1−L)·dt`, `ρ = (ε − L·dt)/W`, `η(x) = x·ln x`.
pub fn s_value(lambda: f64, dt: f64, epsilon: f64, r: f64) -> Result<f64> {
    // parameter checks shared with the full model
    let params = LaggedPoissonParams::new(lambda, epsilon, r, r.max(dt), 0.0, 1.0)?;
    let level = params.level(dt)?;
    let big_w = epsilon + (1.0 - level as f64) * dt;
    let rho = (epsilon - level as f64 * dt) / big_w;
    let eta = |x: f64| x * x.ln();
    Ok(lambda * dt * rho + eta(rho) + (lambda * dt * dt - lambda.ln() * dt) / big_w
        + dt * eta(1.0 / big_w))
}

/// Limit of `τ·S(λ, dt)` as `dt ↓ 0`:
/// `(T − t0)·(λ − (1 + ln(λ(ε − r)))/(ε − r))`.
///
/// Derived by expanding [`s_value`] to first order in `dt`; the direct-KL
/// oracle confirms this (and not the same expression without the `1 +`)
/// as the actual limit of the schedule.
pub fn analytic_limit(params: &LaggedPoissonParams) -> f64 {
    let w = params.epsilon - params.r;
    (params.t_end - params.t0) * (params.lambda - (1.0 + (params.lambda * w).ln()) / w)
}

/// One row of the `τ·S` convergence schedule.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TauSRow {
    pub dt: f64,
    pub tau: usize,
    pub s: f64,
    pub tau_s: f64,
    pub analytic_limit: f64,
}

/// `τ·S(λ, dt)` for each step of the schedule, next to the analytic limit.
pub fn tau_s_schedule(params: &LaggedPoissonParams, dts: &[f64]) -> Result<Vec<TauSRow>> {
    let limit = analytic_limit(params);
    dts.iter()
        .map(|&dt| {
            let grid = params.grid(dt)?;
            let s = s_value(params.lambda, dt, params.epsilon, params.r)?;
            Ok(TauSRow { dt, tau: grid.tau, s, tau_s: grid.tau as f64 * s, analytic_limit: limit })
        })
        .collect()
}

/// True iff every gap between consecutive jump times exceeds `dt`.
pub fn single_jump_ok(path: &crate::paths::SamplePath, dt: f64) -> bool {
    path.jump_times().windows(2).all(|w| w[1] - w[0] > dt)
}

/// Pathwise divergence over the grid for one realized pair.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PathKl {
    /// `Σ_i KL_i` in nats.
    pub value: f64,
    /// Whether the closed form `λ·τ·dt + Q·(S − λ·dt)` applied
    /// (every step had `d ≤ 1`).
    pub closed_form: bool,
    /// `Q = Σ_i d_i`.
    pub q: i64,
    /// Largest per-step `d`.
    pub max_d: i64,
}

/// Pathwise KL over the grid: reads `a` from the destination at
/// `node(i+1)` and `c` from the source at `node(i+L)` (the lagged future
/// count), then sums the per-step divergences. When every step has
/// `d ≤ 1` this equals `λ·τ·dt + Q·(S − λ·dt)` with `Q = Σ d_i`, which is
/// bounded by `τ·S` whenever `S ≥ λ·dt`.
pub fn path_kl(
    params: &LaggedPoissonParams,
    dt: f64,
    pair: &ProcessPair,
    grid: &CombGrid,
) -> Result<PathKl> {
    let level = params.level(dt)?;
    let mut ds = Vec::with_capacity(grid.tau);
    for i in 0..grid.tau as i64 {
        let a_time = grid.index_time(grid.n_hi - (i + 1));
        let c_time = grid.index_time(grid.n_hi - (i + level));
        let a = pair.x().eval(a_time)?;
        let c = pair.y().eval(c_time)?;
        ds.push(StepContext::new(a, c)?.d());
    }
    let q: i64 = ds.iter().sum();
    let max_d = ds.iter().copied().max().unwrap_or(0);
    if max_d <= 1 {
        let s = s_value(params.lambda, dt, params.epsilon, params.r)?;
        let tau = grid.tau as f64;
        let value = params.lambda * tau * dt + q as f64 * (s - params.lambda * dt);
        Ok(PathKl { value, closed_form: true, q, max_d })
    } else {
        let mut value = 0.0;
        for &d in &ds {
            value += per_step_kl(params, dt, &StepContext::new(0, d)?)?;
        }
        Ok(PathKl { value, closed_form: false, q, max_d })
    }
}

/// Simulate an ensemble of lagged pairs covering everything a grid at
/// step `dt_max` (or finer) touches.
///
/// The base counting path runs on
/// `[t0 − max(s, r) − 2·dt_max, T + ε + 2·dt_max)`; the pair is the base
/// and its lagged copy restricted to their common window.
pub fn simulate_lagged_ensemble(
    params: &LaggedPoissonParams,
    dt_max: f64,
    n_paths: usize,
    master_seed: u64,
) -> Result<Vec<ProcessPair>> {
    let spec = PoissonSpec::new(params.lambda, params.epsilon)?;
    let margin = 2.0 * dt_max;
    let lo = params.t0 - params.s.max(params.r) - margin;
    let hi = params.t_end + params.epsilon + margin;
    (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let seed = stream_seed(master_seed, i as u64);
            let x_base = simulate_thppp(&spec, lo, hi, seed)?;
            let y = lag_path(&x_base, params.epsilon)?;
            let common_hi = y.t_end();
            let x = x_base.restrict(lo, common_hi)?;
            let y = y.restrict(lo, common_hi)?;
            ProcessPair::new(x, y)
        })
        .collect()
}

/// Exact grid-TE source for the lagged-Poisson model.
///
/// The step context law is `d ~ Poisson(λ·(ε + (1−L)·dt))`; the exact
/// per-step TE is `Σ_d P(d)·KL_d`, identical for every step.
#[derive(Debug, Clone, Copy)]
pub struct ExactLaggedTe {
    pub params: LaggedPoissonParams,
}

impl ExactLaggedTe {
    pub fn new(params: LaggedPoissonParams) -> Self {
        Self { params }
    }

    /// Truncated law of `d` for one step.
    pub fn context_law(&self, dt: f64) -> Result<Vec<(i64, f64)>> {
        let window = self.params.cond_window(dt)?;
        let mean = self.params.lambda * window;
        let mut entries = Vec::new();
        let mut cum = 0.0;
        let mut d: u64 = 0;
        loop {
            let p = pois(mean, d)?;
            entries.push((d as i64, p));
            cum += p;
            if 1.0 - cum <= TRUNCATION_TAIL && d as f64 >= mean {
                break;
            }
            d += 1;
            if d > 10_000 {
                return Err(Error::Numerical("context law truncation stalled".into()));
            }
        }
        let total: f64 = entries.iter().map(|&(_, p)| p).sum();
        Ok(entries.into_iter().map(|(d, p)| (d, p / total)).collect())
    }

    /// Exact per-step TE `Σ_d P(d)·KL_d` (independent of the step index).
    pub fn exact_step_te(&self, dt: f64) -> Result<f64> {
        let mut total = 0.0;
        for (d, w) in self.context_law(dt)? {
            total += w * per_step_kl(&self.params, dt, &StepContext::new(0, d)?)?;
        }
        Ok(total)
    }

    /// Exact TE sum over the grid: `τ` identical per-step values.
    pub fn te_comb_sum(&self, grid: &CombGrid) -> Result<TEEstimate> {
        let step = self.exact_step_te(grid.dt)?;
        TEEstimate::from_steps(0.0, 0, (0..grid.tau).map(|i| (i, step)).collect())
    }
}

impl ExactStepTables for ExactLaggedTe {
    /// Exact tables in canonical (increment) coordinates: every joint
    /// context is `(a = 0, d)`, the x-only law is the truncated Poisson.
    fn step_tables(&self, grid: &CombGrid, _i: usize) -> Result<(CondPmfTable, CondPmfTable)> {
        let dt = grid.dt;
        let law = self.context_law(dt)?;
        let max_d = law.iter().map(|&(d, _)| d).max().unwrap_or(0);
        let x_pmf = cond_pmf_given_x_with_support(self.params.lambda, dt, 0, max_d as u64)?;
        let mut joint = HashMap::new();
        for (d, w) in law {
            let ctx = StepContext::new(0, d)?;
            let pmf = cond_pmf_given_xy(&self.params, dt, &ctx)?;
            joint.insert(
                HistoryKey { x_hist: vec![0], y_hist: Some(vec![d]) },
                (pmf, w),
            );
        }
        let mut x_only = HashMap::new();
        x_only.insert(HistoryKey { x_hist: vec![0], y_hist: None }, (x_pmf, 1.0));
        Ok((CondPmfTable::new(joint)?, CondPmfTable::new(x_only)?))
    }
}
