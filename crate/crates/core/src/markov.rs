//! Pathwise transfer entropy for jump processes via the Girsanov
//! log-likelihood ratio.
//!
//! For a destination jump process with conditional transition rates
//! `ψ[x′ | ←X, ←Y]` and `ψ[x′ | ←X]`, the pathwise transfer entropy over
//! `[t0, T)` is
//!
//! ```text
//! Σ_{jumps τ_i}  ln( ψ_xy(τ_i, x_{τ_i}) / ψ_x(τ_i, x_{τ_i}) )
//!   + ∫_{t0}^{T} ( λ_x(t) − λ_xy(t) ) dt
//! ```
//!
//! with `λ` the escape rates (sums of transition rates away from the
//! current state). Rate functions are required to be piecewise constant
//! between the union of the pair's jump times, which makes the integral
//! term an exact segment sum.

use crate::dte::TEEstimate;
use crate::error::{Error, Result};
use crate::paths::{simulate_ctmc_from, CtmcSpec, ProcessPair, SamplePath};
use crate::rng::{stream_rng, stream_seed};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::Deserialize;

/// Conditional transition rates of the destination process.
///
/// Implementations must be pure, and piecewise constant in `t` between
/// the union of the pair's jump times. Histories enter through the path
/// prefixes; the current state is the left limit `x_{t−}`.
pub trait JumpRateModel: Sync {
    /// Rate of jumping to `target` at `t`, given both histories.
    fn psi_xy(&self, t: f64, pair: &ProcessPair, target: i64) -> f64;

    /// Rate of jumping to `target` at `t`, given the destination history.
    fn psi_x(&self, t: f64, x: &SamplePath, target: i64) -> f64;

    /// States reachable from the current (left-limit) state at `t`.
    fn targets(&self, t: f64, pair: &ProcessPair) -> Vec<i64>;
}

/// Which conditioning a rate query uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    XY,
    X,
}

fn check_rate(rate: f64, what: &str, t: f64) -> Result<f64> {
    if !rate.is_finite() || rate < 0.0 {
        return Err(Error::Model(format!("{what} returned {rate} at t = {t}")));
    }
    Ok(rate)
}

/// Escape rate at `t`: the sum of transition rates to every state other
/// than the current one.
pub fn escape_rate(model: &dyn JumpRateModel, which: Which, t: f64, pair: &ProcessPair) -> Result<f64> {
    let mut total = 0.0;
    for target in model.targets(t, pair) {
        let rate = match which {
            Which::XY => check_rate(model.psi_xy(t, pair, target), "psi_xy", t)?,
            Which::X => check_rate(model.psi_x(t, pair.x(), target), "psi_x", t)?,
        };
        total += rate;
    }
    Ok(total)
}

/// Both escape rates evaluated at one time.
#[derive(Debug, Clone, Copy)]
pub struct EscapeRates {
    pub xy: f64,
    pub x: f64,
}

impl EscapeRates {
    pub fn at(model: &dyn JumpRateModel, t: f64, pair: &ProcessPair) -> Result<Self> {
        Ok(Self {
            xy: escape_rate(model, Which::XY, t, pair)?,
            x: escape_rate(model, Which::X, t, pair)?,
        })
    }

    /// `Δλ = λ_x − λ_xy`.
    pub fn delta(&self) -> f64 {
        self.x - self.xy
    }
}

/// Pathwise transfer entropy of one realized pair.
#[derive(Debug, Clone, Copy)]
pub struct JumpTEResult {
    /// `jump_sum + integral_term`, in nats.
    pub pathwise_te: f64,
    /// Sum of log rate ratios at the destination's jump times.
    pub jump_sum: f64,
    /// `∫ (λ_x − λ_xy) dt` over the window.
    pub integral_term: f64,
    /// Number of destination jumps in `(t0, T)`.
    pub n_jumps: usize,
}

/// Girsanov pathwise transfer entropy of `pair` over `[t0, T)`.
///
/// The jump sum runs over destination jumps strictly inside the window;
/// the initial point contributes nothing because both conditional path
/// measures share it. A realized jump with `ψ_x = 0` and `ψ_xy > 0` is
/// an absolute-continuity violation.
pub fn girsanov_pathwise_te(
    model: &dyn JumpRateModel,
    pair: &ProcessPair,
    t0: f64,
    t_end: f64,
) -> Result<JumpTEResult> {
    if !(t0 < t_end) || t0 < pair.t_start() || t_end > pair.t_end() {
        return Err(Error::Parameter(format!(
            "window [{t0}, {t_end}) must be non-empty and inside the pair window [{}, {})",
            pair.t_start(),
            pair.t_end()
        )));
    }

    let mut jump_sum = 0.0;
    let mut n_jumps = 0;
    for &tj in pair.x().jump_times() {
        if tj <= t0 || tj >= t_end {
            continue;
        }
        let target = pair.x().eval(tj)?;
        let num = check_rate(model.psi_xy(tj, pair, target), "psi_xy", tj)?;
        let den = check_rate(model.psi_x(tj, pair.x(), target), "psi_x", tj)?;
        if den == 0.0 && num > 0.0 {
            return Err(Error::AbsoluteContinuity(format!(
                "psi_x = 0 but psi_xy = {num} at realized jump t = {tj}"
            )));
        }
        if num == 0.0 {
            return Err(Error::Model(format!(
                "psi_xy = 0 at realized jump t = {tj}: the pair is impossible under the model"
            )));
        }
        jump_sum += (num / den).ln();
        n_jumps += 1;
    }

    // exact integral over the piecewise-constant segments; a model that
    // varies inside a segment breaks its declaration and falls back to
    // trapezoid quadrature
    let mut cuts: Vec<f64> = pair
        .x()
        .jump_times()
        .iter()
        .chain(pair.y().jump_times().iter())
        .copied()
        .filter(|&t| t > t0 && t < t_end)
        .collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut integral = 0.0;
    let mut warned = false;
    let mut lo = t0;
    for hi in cuts.into_iter().chain(std::iter::once(t_end)) {
        if hi <= lo {
            continue;
        }
        let probes = [
            lo + 0.25 * (hi - lo),
            lo + 0.50 * (hi - lo),
            lo + 0.75 * (hi - lo),
        ];
        let deltas = [
            EscapeRates::at(model, probes[0], pair)?.delta(),
            EscapeRates::at(model, probes[1], pair)?.delta(),
            EscapeRates::at(model, probes[2], pair)?.delta(),
        ];
        if deltas[0] == deltas[1] && deltas[1] == deltas[2] {
            integral += deltas[1] * (hi - lo);
        } else {
            if !warned {
                eprintln!(
                    "warning: escape rates vary inside a jump-free segment; \
                     integrating by trapezoid (step {TRAPEZOID_STEP})"
                );
                warned = true;
            }
            integral += trapezoid_delta(model, pair, lo, hi)?;
        }
        lo = hi;
    }

    Ok(JumpTEResult {
        pathwise_te: jump_sum + integral,
        jump_sum,
        integral_term: integral,
        n_jumps,
    })
}

/// Quadrature step for rate models that are not piecewise constant.
const TRAPEZOID_STEP: f64 = 1e-4;

fn trapezoid_delta(
    model: &dyn JumpRateModel,
    pair: &ProcessPair,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    let n = ((hi - lo) / TRAPEZOID_STEP).ceil().max(1.0) as usize;
    let h = (hi - lo) / n as f64;
    let mut total = 0.0;
    let mut prev = EscapeRates::at(model, lo + 1e-12 * (hi - lo), pair)?.delta();
    for i in 1..=n {
        let t = if i == n { hi - 1e-12 * (hi - lo) } else { lo + i as f64 * h };
        let next = EscapeRates::at(model, t, pair)?.delta();
        total += 0.5 * (prev + next) * h;
        prev = next;
    }
    Ok(total)
}

/// A generative model: simulates source/destination pairs and exposes the
/// true conditional rates that drive the destination.
pub trait GenerativeJumpModel: JumpRateModel {
    /// Simulate one pair on `[lo, hi)`, deterministic given the seed.
    fn simulate_pair(&self, lo: f64, hi: f64, seed: u64) -> Result<ProcessPair>;

    /// Whether the destination is a counting process (single transition
    /// channel), as required by the counting-destination TE-rate formula.
    fn counting_destination(&self) -> bool;
}

/// Expected pathwise transfer entropy with per-path quantiles.
#[derive(Debug, Clone)]
pub struct EptResult {
    pub estimate: TEEstimate,
    /// 5/25/50/75/95-percent quantiles of the per-path values.
    pub quantiles: [f64; 5],
}

/// Monte Carlo EPT over `[t0, T)`: mean ± stderr of the Girsanov
/// pathwise TE over independent pairs.
pub fn ept_monte_carlo(
    model: &dyn GenerativeJumpModel,
    t0: f64,
    t_end: f64,
    n_paths: usize,
    seed: u64,
) -> Result<EptResult> {
    if n_paths == 0 {
        return Err(Error::Contract("need at least one path".into()));
    }
    let mut values: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let pair = model.simulate_pair(t0, t_end, stream_seed(seed, i as u64))?;
            Ok(girsanov_pathwise_te(model, &pair, t0, t_end)?.pathwise_te)
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if n_paths > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |p: f64| values[((p * (n_paths - 1) as f64).round() as usize).min(n_paths - 1)];
    Ok(EptResult {
        estimate: TEEstimate::from_mean(mean, (var / n).sqrt(), n_paths)?,
        quantiles: [quantile(0.05), quantile(0.25), quantile(0.50), quantile(0.75), quantile(0.95)],
    })
}

/// Monte Carlo TE rate at time `t` for a counting destination:
/// mean of `λ_xy(t)·(ln(λ_xy(t)/λ_x(t)) − 1) + λ_x(t)` over pairs.
pub fn poisson_dest_te_rate(
    model: &dyn GenerativeJumpModel,
    t: f64,
    t0: f64,
    t_end: f64,
    n_paths: usize,
    seed: u64,
) -> Result<TEEstimate> {
    if !model.counting_destination() {
        return Err(Error::Model(
            "TE rate formula requires a counting destination".into(),
        ));
    }
    if !(t0 <= t && t < t_end) {
        return Err(Error::Parameter(format!("t = {t} outside [{t0}, {t_end})")));
    }
    if n_paths == 0 {
        return Err(Error::Contract("need at least one path".into()));
    }
    let values: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let pair = model.simulate_pair(t0, t_end, stream_seed(seed, i as u64))?;
            let rates = EscapeRates::at(model, t, &pair)?;
            if rates.x <= 0.0 || rates.xy <= 0.0 {
                return Err(Error::Model(format!(
                    "escape rates must be positive, got xy = {}, x = {}",
                    rates.xy, rates.x
                )));
            }
            Ok(rates.xy * ((rates.xy / rates.x).ln() - 1.0) + rates.x)
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if n_paths > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    TEEstimate::from_mean(mean, (var / n).sqrt(), n_paths)
}

/// Counting path driven by a piecewise-constant intensity read off a
/// modulating path: on each modulator segment with state `y`, events
/// arrive at rate `rate_of(y)`.
fn simulate_modulated_counting(
    modulator: &SamplePath,
    rate_of: impl Fn(i64) -> f64,
    rng: &mut impl Rng,
) -> Result<SamplePath> {
    let lo = modulator.t_start();
    let hi = modulator.t_end();
    let mut seg_starts = vec![lo];
    seg_starts.extend_from_slice(modulator.jump_times());
    let mut times = Vec::new();
    for (idx, &u) in seg_starts.iter().enumerate() {
        let v = seg_starts.get(idx + 1).copied().unwrap_or(hi);
        let rate = rate_of(modulator.states()[idx]);
        if !rate.is_finite() || rate < 0.0 {
            return Err(Error::Model(format!("intensity {rate} for state {}", modulator.states()[idx])));
        }
        if rate == 0.0 {
            continue;
        }
        let exp = Exp::new(rate).map_err(|e| Error::Parameter(format!("exponential: {e}")))?;
        let mut t = u;
        loop {
            t += exp.sample(rng);
            if t >= v {
                break;
            }
            times.push(t);
        }
    }
    let states = (0..=times.len() as i64).collect();
    SamplePath::new(lo, hi, times, states)
}

fn symmetric_two_state(switch_rate: f64, init: usize) -> Result<CtmcSpec> {
    CtmcSpec::new(
        vec![vec![0.0, switch_rate], vec![switch_rate, 0.0]],
        init,
    )
}

/// Independent pair: destination and source are unrelated counting
/// processes, and the model declares identical rates under both
/// conditionings. Pathwise TE is exactly zero.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndependentPoisson {
    pub lambda_x: f64,
    pub lambda_y: f64,
}

impl JumpRateModel for IndependentPoisson {
    fn psi_xy(&self, t: f64, pair: &ProcessPair, target: i64) -> f64 {
        self.psi_x(t, pair.x(), target)
    }

    fn psi_x(&self, t: f64, x: &SamplePath, target: i64) -> f64 {
        if target == x.eval_left_unchecked(t) + 1 {
            self.lambda_x
        } else {
            0.0
        }
    }

    fn targets(&self, t: f64, pair: &ProcessPair) -> Vec<i64> {
        vec![pair.x().eval_left_unchecked(t) + 1]
    }
}

impl GenerativeJumpModel for IndependentPoisson {
    fn simulate_pair(&self, lo: f64, hi: f64, seed: u64) -> Result<ProcessPair> {
        let spec_x = crate::paths::PoissonSpec::new(self.lambda_x, 1.0)?;
        let spec_y = crate::paths::PoissonSpec::new(self.lambda_y, 1.0)?;
        let x = crate::paths::simulate_thppp(&spec_x, lo, hi, stream_seed(seed, 1))?;
        let y = crate::paths::simulate_thppp(&spec_y, lo, hi, stream_seed(seed, 2))?;
        ProcessPair::new(x, y)
    }

    fn counting_destination(&self) -> bool {
        true
    }
}

/// Source-modulated counting destination: the source is a symmetric
/// two-state chain, and the destination's intensity is `lambda0` or
/// `lambda1` according to the source's current state. The
/// destination-only rate is the stationary mean intensity.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulatedPoisson {
    pub lambda0: f64,
    pub lambda1: f64,
    pub switch_rate: f64,
}

impl ModulatedPoisson {
    pub fn mean_rate(&self) -> f64 {
        0.5 * (self.lambda0 + self.lambda1)
    }

    fn rate_for(&self, y_state: i64) -> f64 {
        if y_state == 0 {
            self.lambda0
        } else {
            self.lambda1
        }
    }
}

impl JumpRateModel for ModulatedPoisson {
    fn psi_xy(&self, t: f64, pair: &ProcessPair, target: i64) -> f64 {
        if target == pair.x().eval_left_unchecked(t) + 1 {
            self.rate_for(pair.y().eval_left_unchecked(t))
        } else {
            0.0
        }
    }

    fn psi_x(&self, t: f64, x: &SamplePath, target: i64) -> f64 {
        if target == x.eval_left_unchecked(t) + 1 {
            self.mean_rate()
        } else {
            0.0
        }
    }

    fn targets(&self, t: f64, pair: &ProcessPair) -> Vec<i64> {
        vec![pair.x().eval_left_unchecked(t) + 1]
    }
}

impl GenerativeJumpModel for ModulatedPoisson {
    fn simulate_pair(&self, lo: f64, hi: f64, seed: u64) -> Result<ProcessPair> {
        let mut rng = stream_rng(seed, 3);
        let init = usize::from(rng.random::<bool>()); // stationary: uniform
        let y = simulate_ctmc_from(&symmetric_two_state(self.switch_rate, 0)?, init, lo, hi, stream_seed(seed, 4))?;
        let x = simulate_modulated_counting(&y, |s| self.rate_for(s), &mut stream_rng(seed, 5))?;
        ProcessPair::new(x, y)
    }

    fn counting_destination(&self) -> bool {
        true
    }
}

/// Two-state destination whose flip rate follows the source's state.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoStateFeedback {
    pub flip0: f64,
    pub flip1: f64,
    pub switch_rate: f64,
}

impl TwoStateFeedback {
    fn flip_for(&self, y_state: i64) -> f64 {
        if y_state == 0 {
            self.flip0
        } else {
            self.flip1
        }
    }
}

impl JumpRateModel for TwoStateFeedback {
    fn psi_xy(&self, t: f64, pair: &ProcessPair, target: i64) -> f64 {
        if target == 1 - pair.x().eval_left_unchecked(t) {
            self.flip_for(pair.y().eval_left_unchecked(t))
        } else {
            0.0
        }
    }

    fn psi_x(&self, t: f64, x: &SamplePath, target: i64) -> f64 {
        if target == 1 - x.eval_left_unchecked(t) {
            0.5 * (self.flip0 + self.flip1)
        } else {
            0.0
        }
    }

    fn targets(&self, t: f64, pair: &ProcessPair) -> Vec<i64> {
        vec![1 - pair.x().eval_left_unchecked(t)]
    }
}

impl GenerativeJumpModel for TwoStateFeedback {
    fn simulate_pair(&self, lo: f64, hi: f64, seed: u64) -> Result<ProcessPair> {
        let mut rng = stream_rng(seed, 6);
        let y_init = usize::from(rng.random::<bool>());
        let y = simulate_ctmc_from(&symmetric_two_state(self.switch_rate, 0)?, y_init, lo, hi, stream_seed(seed, 7))?;
        // destination: two-state flip process with y-dependent rate
        let mut flips = Vec::new();
        let mut state = i64::from(rng.random::<bool>());
        let init_state = state;
        let mut t = lo;
        let mut segs = vec![lo];
        segs.extend_from_slice(y.jump_times());
        let mut seg_idx = 0usize;
        loop {
            // current segment of y containing t
            while seg_idx + 1 < segs.len() && segs[seg_idx + 1] <= t {
                seg_idx += 1;
            }
            let seg_end = segs.get(seg_idx + 1).copied().unwrap_or(hi);
            let rate = self.flip_for(y.states()[seg_idx]);
            if rate <= 0.0 {
                return Err(Error::Model(format!("flip rate {rate} must be > 0")));
            }
            let exp = Exp::new(rate).map_err(|e| Error::Parameter(format!("exponential: {e}")))?;
            let next = t + exp.sample(&mut rng);
            if next < seg_end {
                if next >= hi {
                    break;
                }
                flips.push(next);
                state = 1 - state;
                t = next;
            } else {
                if seg_end >= hi {
                    break;
                }
                t = seg_end; // memoryless: redraw in the next segment
            }
        }
        let mut states = vec![init_state];
        let mut s = init_state;
        for _ in &flips {
            s = 1 - s;
            states.push(s);
        }
        let x = SamplePath::new(lo, hi, flips, states)?;
        ProcessPair::new(x, y)
    }

    fn counting_destination(&self) -> bool {
        false
    }
}

/// Construct a registry model from its name and JSON parameter block.
///
/// Names: `independent-poisson`, `modulated-poisson`, `two-state-feedback`.
pub fn build_model(
    name: &str,
    params: &serde_json::Value,
) -> Result<Box<dyn GenerativeJumpModel + Send + Sync>> {
    fn de<T: for<'a> Deserialize<'a>>(params: &serde_json::Value) -> Result<T> {
        serde_json::from_value(params.clone())
            .map_err(|e| Error::Parameter(format!("model params: {e}")))
    }
    match name {
        "independent-poisson" => {
            let m: IndependentPoisson = de(params)?;
            if m.lambda_x <= 0.0 || m.lambda_y <= 0.0 {
                return Err(Error::Parameter("intensities must be > 0".into()));
            }
            Ok(Box::new(m))
        }
        "modulated-poisson" => {
            let m: ModulatedPoisson = de(params)?;
            if m.lambda0 <= 0.0 || m.lambda1 <= 0.0 || m.switch_rate <= 0.0 {
                return Err(Error::Parameter("rates must be > 0".into()));
            }
            Ok(Box::new(m))
        }
        "two-state-feedback" => {
            let m: TwoStateFeedback = de(params)?;
            if m.flip0 <= 0.0 || m.flip1 <= 0.0 || m.switch_rate <= 0.0 {
                return Err(Error::Parameter("rates must be > 0".into()));
            }
            Ok(Box::new(m))
        }
        other => Err(Error::Parameter(format!("unknown model {other:?}"))),
    }
}
