//! Piecewise-constant sample paths and jump-process simulators.
//!
//! A [`SamplePath`] is a right-continuous step function on a half-open
//! window `[t_start, t_end)`: sorted jump times plus the integer state
//! on each inter-jump segment. Counting paths of a time-homogeneous
//! Poisson point process, deterministically lagged copies, and Gillespie
//! trajectories of continuous-time Markov chains are all built on it.

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

/// Right-continuous piecewise-constant trajectory on `[t_start, t_end)`.
///
/// `states[0]` is the value on `[t_start, jump_times[0])`; the value at a
/// jump time is the post-jump state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    t_start: f64,
    t_end: f64,
    jump_times: Vec<f64>,
    states: Vec<i64>,
}

impl SamplePath {
    /// Build a path, validating every structural invariant.
    pub fn new(t_start: f64, t_end: f64, jump_times: Vec<f64>, states: Vec<i64>) -> Result<Self> {
        if !t_start.is_finite() || !t_end.is_finite() || t_start >= t_end {
            return Err(Error::Parameter(format!(
                "path window [{t_start}, {t_end}) must be finite and non-empty"
            )));
        }
        if states.len() != jump_times.len() + 1 {
            return Err(Error::Parameter(format!(
                "need {} states for {} jumps, got {}",
                jump_times.len() + 1,
                jump_times.len(),
                states.len()
            )));
        }
        for (i, &t) in jump_times.iter().enumerate() {
            if !t.is_finite() || t <= t_start || t >= t_end {
                return Err(Error::Parameter(format!(
                    "jump time {t} outside open window ({t_start}, {t_end})"
                )));
            }
            if i > 0 && t <= jump_times[i - 1] {
                return Err(Error::Parameter(
                    "jump times must be strictly increasing".into(),
                ));
            }
            if states[i + 1] == states[i] {
                return Err(Error::Parameter(format!(
                    "state does not change at jump time {t}"
                )));
            }
        }
        Ok(Self { t_start, t_end, jump_times, states })
    }

    /// Constant path (no jumps).
    pub fn constant(t_start: f64, t_end: f64, state: i64) -> Result<Self> {
        Self::new(t_start, t_end, Vec::new(), vec![state])
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn states(&self) -> &[i64] {
        &self.states
    }

    pub fn jump_count(&self) -> usize {
        self.jump_times.len()
    }

    fn check_window(&self, t: f64) -> Result<()> {
        if t < self.t_start || t >= self.t_end || !t.is_finite() {
            return Err(Error::OutOfWindow { t, lo: self.t_start, hi: self.t_end });
        }
        Ok(())
    }

    /// Value at `t` (right-continuous: at a jump time, the post-jump state).
    pub fn eval(&self, t: f64) -> Result<i64> {
        self.check_window(t)?;
        Ok(self.eval_unchecked(t))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, t: f64) -> i64 {
        let idx = self.jump_times.partition_point(|&jt| jt <= t);
        self.states[idx]
    }

    /// Left limit at `t` (at a jump time, the pre-jump state).
    pub fn eval_left(&self, t: f64) -> Result<i64> {
        self.check_window(t)?;
        Ok(self.eval_left_unchecked(t))
    }

    #[inline]
    pub(crate) fn eval_left_unchecked(&self, t: f64) -> i64 {
        let idx = self.jump_times.partition_point(|&jt| jt < t);
        self.states[idx]
    }

    /// Element-wise [`eval`](Self::eval) at a sorted list of times.
    pub fn sample_on_grid(&self, times: &[f64]) -> Result<Vec<i64>> {
        times.iter().map(|&t| self.eval(t)).collect()
    }

    /// Restriction to `[lo, hi)`, which must lie inside the current window.
    pub fn restrict(&self, lo: f64, hi: f64) -> Result<Self> {
        if lo < self.t_start || hi > self.t_end || lo >= hi {
            return Err(Error::Parameter(format!(
                "restriction [{lo}, {hi}) not inside [{}, {})",
                self.t_start, self.t_end
            )));
        }
        let first = self.jump_times.partition_point(|&jt| jt <= lo);
        let last = self.jump_times.partition_point(|&jt| jt < hi);
        let jump_times = self.jump_times[first..last].to_vec();
        let states = self.states[first..=last].to_vec();
        Self::new(lo, hi, jump_times, states)
    }

    /// Time-shifted copy `y(t) = x(t + epsilon)` on `[t_start - ε, t_end - ε)`.
    pub fn lagged(&self, epsilon: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(Error::Parameter(format!("lag must be > 0, got {epsilon}")));
        }
        let jump_times = self.jump_times.iter().map(|&t| t - epsilon).collect();
        Self::new(self.t_start - epsilon, self.t_end - epsilon, jump_times, self.states.clone())
    }

    /// Event-list CSV: header row, one row for the initial state at
    /// `t_start`, then one row per jump.
    pub fn to_event_csv(&self) -> String {
        let mut out = String::from("time,state\n");
        out.push_str(&format!("{:.16e},{}\n", self.t_start, self.states[0]));
        for (t, s) in self.jump_times.iter().zip(self.states.iter().skip(1)) {
            out.push_str(&format!("{t:.16e},{s}\n"));
        }
        out
    }

    /// Parse the event-list CSV produced by [`to_event_csv`](Self::to_event_csv).
    /// The window end is not part of the row format and must be supplied.
    pub fn from_event_csv(csv: &str, t_end: f64) -> Result<Self> {
        let mut lines = csv.lines();
        match lines.next() {
            Some(h) if h.trim() == "time,state" => {}
            other => {
                return Err(Error::Parameter(format!(
                    "expected 'time,state' header, got {other:?}"
                )))
            }
        }
        let mut times = Vec::new();
        let mut states = Vec::new();
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (t, s) = line.split_once(',').ok_or_else(|| {
                Error::Parameter(format!("malformed event row: {line:?}"))
            })?;
            times.push(t.trim().parse::<f64>().map_err(|e| {
                Error::Parameter(format!("bad time {t:?}: {e}"))
            })?);
            states.push(s.trim().parse::<i64>().map_err(|e| {
                Error::Parameter(format!("bad state {s:?}: {e}"))
            })?);
        }
        if times.is_empty() {
            return Err(Error::Parameter("event CSV has no rows".into()));
        }
        let t_start = times[0];
        Self::new(t_start, t_end, times[1..].to_vec(), states)
    }
}

/// Parameters of a time-homogeneous Poisson point process and the lag of
/// its deterministically shifted copy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonSpec {
    pub lambda: f64,
    pub epsilon: f64,
}

impl PoissonSpec {
    pub fn new(lambda: f64, epsilon: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::Parameter(format!("intensity must be finite and > 0, got {lambda}")));
        }
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(Error::Parameter(format!("lag must be finite and > 0, got {epsilon}")));
        }
        Ok(Self { lambda, epsilon })
    }
}

/// Counting path of a homogeneous Poisson process on `[t_start, t_end)`:
/// state 0 at `t_start`, iid exponential(λ) inter-jump gaps, each jump
/// increments the count. Deterministic given the seed.
pub fn simulate_thppp(spec: &PoissonSpec, t_start: f64, t_end: f64, seed: u64) -> Result<SamplePath> {
    if !(t_start < t_end) || !t_start.is_finite() || !t_end.is_finite() {
        return Err(Error::Parameter(format!("bad window [{t_start}, {t_end})")));
    }
    let mut rng = stream_rng(seed, 0);
    let exp = Exp::new(spec.lambda)
        .map_err(|e| Error::Parameter(format!("exponential({}): {e}", spec.lambda)))?;
    let mut times = Vec::new();
    let mut t = t_start;
    loop {
        t += exp.sample(&mut rng);
        if t >= t_end {
            break;
        }
        times.push(t);
    }
    let states = (0..=times.len() as i64).collect();
    SamplePath::new(t_start, t_end, times, states)
}

/// Lagged copy `y(t) = x(t + epsilon)`; the returned window is
/// `[t_start − ε, t_end − ε)`.
pub fn lag_path(x: &SamplePath, epsilon: f64) -> Result<SamplePath> {
    x.lagged(epsilon)
}

/// A continuous-time Markov chain on states `0..n_states`.
///
/// Off-diagonal entries of `rate_matrix` are transition rates; diagonal
/// entries are ignored (recomputed as negative row sums).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtmcSpec {
    pub n_states: usize,
    pub rate_matrix: Vec<Vec<f64>>,
    pub init_state: usize,
}

impl CtmcSpec {
    pub fn new(rate_matrix: Vec<Vec<f64>>, init_state: usize) -> Result<Self> {
        let n = rate_matrix.len();
        if n == 0 {
            return Err(Error::Parameter("rate matrix must be non-empty".into()));
        }
        for row in &rate_matrix {
            if row.len() != n {
                return Err(Error::Parameter("rate matrix must be square".into()));
            }
        }
        for (i, row) in rate_matrix.iter().enumerate() {
            for (j, &q) in row.iter().enumerate() {
                if i != j && (!q.is_finite() || q < 0.0) {
                    return Err(Error::Parameter(format!(
                        "off-diagonal rate q[{i}][{j}] = {q} must be finite and >= 0"
                    )));
                }
            }
        }
        if init_state >= n {
            return Err(Error::Parameter(format!(
                "initial state {init_state} outside [0, {n})"
            )));
        }
        Ok(Self { n_states: n, rate_matrix, init_state })
    }
}

/// Gillespie trajectory of a CTMC: holding time in state `i` exponential
/// with rate `Σ_{j≠i} q_ij`, next state drawn proportional to `q_ij`.
/// States with zero total exit rate are absorbing.
pub fn simulate_ctmc(spec: &CtmcSpec, t_start: f64, t_end: f64, seed: u64) -> Result<SamplePath> {
    simulate_ctmc_from(spec, spec.init_state, t_start, t_end, seed)
}

/// Gillespie trajectory starting from an explicit state.
pub fn simulate_ctmc_from(
    spec: &CtmcSpec,
    init_state: usize,
    t_start: f64,
    t_end: f64,
    seed: u64,
) -> Result<SamplePath> {
    if !(t_start < t_end) || !t_start.is_finite() || !t_end.is_finite() {
        return Err(Error::Parameter(format!("bad window [{t_start}, {t_end})")));
    }
    if init_state >= spec.n_states {
        return Err(Error::Parameter(format!(
            "initial state {init_state} outside [0, {})",
            spec.n_states
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let mut t = t_start;
    let mut state = init_state;
    let mut times = Vec::new();
    let mut states = vec![state as i64];
    loop {
        let total: f64 = (0..spec.n_states)
            .filter(|&j| j != state)
            .map(|j| spec.rate_matrix[state][j])
            .sum();
        if total == 0.0 {
            break; // absorbing
        }
        let exp = Exp::new(total).map_err(|e| Error::Parameter(format!("exponential: {e}")))?;
        t += exp.sample(&mut rng);
        if t >= t_end {
            break;
        }
        let mut u: f64 = rng.random::<f64>() * total;
        let mut next = state;
        for j in 0..spec.n_states {
            if j == state {
                continue;
            }
            u -= spec.rate_matrix[state][j];
            if u <= 0.0 {
                next = j;
                break;
            }
            next = j; // numerical slack: fall through to the last candidate
        }
        times.push(t);
        states.push(next as i64);
        state = next;
    }
    SamplePath::new(t_start, t_end, times, states)
}

/// A source/destination pair sharing one observation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessPair {
    x: SamplePath,
    y: SamplePath,
}

impl ProcessPair {
    /// Both components must live on the identical window.
    pub fn new(x: SamplePath, y: SamplePath) -> Result<Self> {
        if x.t_start() != y.t_start() || x.t_end() != y.t_end() {
            return Err(Error::Parameter(format!(
                "pair windows differ: [{}, {}) vs [{}, {})",
                x.t_start(),
                x.t_end(),
                y.t_start(),
                y.t_end()
            )));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &SamplePath {
        &self.x
    }

    pub fn y(&self) -> &SamplePath {
        &self.y
    }

    pub fn t_start(&self) -> f64 {
        self.x.t_start()
    }

    pub fn t_end(&self) -> f64 {
        self.x.t_end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state_spec(a: f64, b: f64) -> CtmcSpec {
        CtmcSpec::new(vec![vec![0.0, a], vec![b, 0.0]], 0).unwrap()
    }

    #[test]
    fn rejects_unsorted_jumps_and_non_jumps() {
        assert!(SamplePath::new(0.0, 1.0, vec![0.5, 0.4], vec![0, 1, 2]).is_err());
        assert!(SamplePath::new(0.0, 1.0, vec![0.5], vec![0, 0]).is_err());
        assert!(SamplePath::new(0.0, 1.0, vec![0.0], vec![0, 1]).is_err());
        assert!(SamplePath::new(0.0, 1.0, vec![1.0], vec![0, 1]).is_err());
    }

    #[test]
    fn eval_is_right_continuous() {
        let p = SamplePath::new(0.0, 4.0, vec![2.0], vec![0, 1]).unwrap();
        assert_eq!(p.eval(2.0).unwrap(), 1);
        assert_eq!(p.eval_left(2.0).unwrap(), 0);
        assert_eq!(p.eval(1.999).unwrap(), 0);
        assert_eq!(p.eval(3.9).unwrap(), 1);
        assert!(p.eval(4.0).is_err());
        assert!(p.eval(-0.1).is_err());
    }

    #[test]
    fn constant_path_eval_equals_eval_left() {
        let p = SamplePath::constant(0.0, 1.0, 7).unwrap();
        for t in [0.0, 0.25, 0.5, 0.99] {
            assert_eq!(p.eval(t).unwrap(), p.eval_left(t).unwrap());
        }
    }

    #[test]
    fn vanishing_intensity_yields_no_jumps() {
        let spec = PoissonSpec::new(1e-9, 1.0).unwrap();
        let p = simulate_thppp(&spec, 0.0, 1.0, 7).unwrap();
        assert_eq!(p.jump_count(), 0);
        assert_eq!(p.eval(0.5).unwrap(), 0);
    }

    #[test]
    fn thppp_is_deterministic_per_seed() {
        let spec = PoissonSpec::new(2.0, 1.0).unwrap();
        let a = simulate_thppp(&spec, 0.0, 10.0, 42).unwrap();
        let b = simulate_thppp(&spec, 0.0, 10.0, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_thppp(&spec, 0.0, 10.0, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn thppp_mean_count_matches_poisson_law() {
        // mean jump count over [0, 10) at λ = 2 is 20, variance 20.
        let spec = PoissonSpec::new(2.0, 1.0).unwrap();
        let n = 10_000;
        let total: usize = (0..n)
            .map(|i| simulate_thppp(&spec, 0.0, 10.0, crate::rng::stream_seed(5, i)).unwrap().jump_count())
            .sum();
        let mean = total as f64 / n as f64;
        let tol = 3.0 * (20.0f64 / n as f64).sqrt();
        assert!((mean - 20.0).abs() < tol, "mean {mean} vs 20 ± {tol}");
    }

    #[test]
    fn lag_rejects_nonpositive_epsilon() {
        let p = SamplePath::new(0.0, 2.0, vec![1.0], vec![0, 1]).unwrap();
        assert!(lag_path(&p, 0.0).is_err());
        assert!(lag_path(&p, -1.0).is_err());
    }

    #[test]
    fn lag_shifts_jumps() {
        let p = SamplePath::new(0.0, 2.0, vec![1.0], vec![0, 1]).unwrap();
        let y = lag_path(&p, 0.25).unwrap();
        assert_eq!(y.jump_times(), &[0.75]);
        assert_eq!(y.t_start(), -0.25);
        assert_eq!(y.t_end(), 1.75);
        // y(t) = x(t + ε) pointwise
        for t in [-0.2, 0.0, 0.5, 0.74, 0.75, 1.7] {
            assert_eq!(y.eval(t).unwrap(), p.eval(t + 0.25).unwrap());
        }
    }

    #[test]
    fn lag_composes_exactly_for_dyadic_lags() {
        let spec = PoissonSpec::new(3.0, 1.0).unwrap();
        let x = simulate_thppp(&spec, 0.0, 8.0, 11).unwrap();
        let (e1, e2) = (0.25, 0.5);
        let once = lag_path(&lag_path(&x, e1).unwrap(), e2).unwrap();
        let twice = lag_path(&x, e1 + e2).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn one_state_chain_is_constant() {
        let spec = CtmcSpec::new(vec![vec![0.0]], 0).unwrap();
        let p = simulate_ctmc(&spec, 0.0, 5.0, 1).unwrap();
        assert_eq!(p.jump_count(), 0);
    }

    #[test]
    fn ctmc_rejects_negative_rates() {
        assert!(CtmcSpec::new(vec![vec![0.0, -1.0], vec![1.0, 0.0]], 0).is_err());
    }

    fn occupancy_of_zero(p: &SamplePath) -> f64 {
        let mut t_prev = p.t_start();
        let mut s_prev = p.states()[0];
        let mut occ = 0.0;
        for (&t, &s) in p.jump_times().iter().zip(p.states().iter().skip(1)) {
            if s_prev == 0 {
                occ += t - t_prev;
            }
            t_prev = t;
            s_prev = s;
        }
        if s_prev == 0 {
            occ += p.t_end() - t_prev;
        }
        occ / (p.t_end() - p.t_start())
    }

    #[test]
    fn symmetric_two_state_occupancy_is_half() {
        let p = simulate_ctmc(&two_state_spec(1.0, 1.0), 0.0, 1000.0, 3).unwrap();
        let occ = occupancy_of_zero(&p);
        // 3σ with an effective sample of roughly (rate·T)/2 regenerations
        assert!((occ - 0.5).abs() < 0.06, "occupancy {occ}");
    }

    #[test]
    fn asymmetric_two_state_occupancy_matches_stationary_law() {
        // rates a = 2 (out of 0), b = 1 (out of 1): π0 = b/(a+b) = 1/3
        let p = simulate_ctmc(&two_state_spec(2.0, 1.0), 0.0, 1000.0, 9).unwrap();
        let occ = occupancy_of_zero(&p);
        assert!((occ - 1.0 / 3.0).abs() < 0.06, "occupancy {occ}");
    }

    #[test]
    fn sample_on_grid_matches_eval_loop() {
        let spec = PoissonSpec::new(2.0, 1.0).unwrap();
        let p = simulate_thppp(&spec, 0.0, 5.0, 17).unwrap();
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let sampled = p.sample_on_grid(&times).unwrap();
        for (i, &t) in times.iter().enumerate() {
            assert_eq!(sampled[i], p.eval(t).unwrap());
        }
        assert!(p.sample_on_grid(&[]).unwrap().is_empty());
        assert!(p.sample_on_grid(&[9.0]).is_err());
    }

    #[test]
    fn event_csv_round_trips() {
        let spec = PoissonSpec::new(2.0, 1.0).unwrap();
        let p = simulate_thppp(&spec, 0.5, 5.0, 23).unwrap();
        let csv = p.to_event_csv();
        let q = SamplePath::from_event_csv(&csv, p.t_end()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn json_shape_is_stable() {
        let p = SamplePath::new(0.0, 2.0, vec![1.0], vec![0, 1]).unwrap();
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        assert_eq!(v["t_start"], 0.0);
        assert_eq!(v["t_end"], 2.0);
        assert_eq!(v["jump_times"], serde_json::json!([1.0]));
        assert_eq!(v["states"], serde_json::json!([0, 1]));
        let q: SamplePath = serde_json::from_value(v).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn restrict_keeps_values() {
        let spec = PoissonSpec::new(3.0, 1.0).unwrap();
        let p = simulate_thppp(&spec, 0.0, 10.0, 31).unwrap();
        let q = p.restrict(2.0, 7.0).unwrap();
        for i in 0..100 {
            let t = 2.0 + 4.99 * (i as f64) / 100.0;
            assert_eq!(p.eval(t).unwrap(), q.eval(t).unwrap());
        }
    }

    #[test]
    fn pair_requires_identical_windows() {
        let a = SamplePath::constant(0.0, 1.0, 0).unwrap();
        let b = SamplePath::constant(0.0, 2.0, 0).unwrap();
        assert!(ProcessPair::new(a.clone(), b).is_err());
        assert!(ProcessPair::new(a.clone(), a).is_ok());
    }
}
