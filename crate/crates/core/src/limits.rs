//! Convergence, boundedness, rate, and stationarity harness.
//!
//! Runs grid-TE sums down a `dt` schedule and extrapolates the limit,
//! tracks the fraction of paths whose pathwise divergence stays under a
//! fixed budget, differentiates the expected pathwise TE in the window
//! length, checks the stationarity identities, and evaluates the
//! sub-partitioned conditional-mutual-information variant of the EPT.

use crate::comb::{refines, CombGrid};
use crate::dte::{te_comb_sum_plugin, KlValue, Pmf, TEEstimate};
use crate::error::{Error, Result};
use crate::paths::ProcessPair;
use crate::poisson::{path_kl, s_value, ExactLaggedTe, LaggedPoissonParams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// A strictly decreasing list of grid steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schedule {
    dt_values: Vec<f64>,
    require_refinement: bool,
}

impl Schedule {
    pub fn new(dt_values: Vec<f64>, require_refinement: bool) -> Result<Self> {
        if dt_values.is_empty() {
            return Err(Error::Parameter("empty schedule".into()));
        }
        for w in dt_values.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::Parameter(format!(
                    "schedule must strictly decrease, got {} then {}",
                    w[0], w[1]
                )));
            }
            if require_refinement && !refines(w[1], w[0]) {
                return Err(Error::Parameter(format!(
                    "schedule entry {} does not refine {}",
                    w[1], w[0]
                )));
            }
        }
        if dt_values.iter().any(|&dt| !(dt > 0.0) || !dt.is_finite()) {
            return Err(Error::Parameter("schedule steps must be finite and > 0".into()));
        }
        Ok(Self { dt_values, require_refinement })
    }

    pub fn dt_values(&self) -> &[f64] {
        &self.dt_values
    }

    pub fn requires_refinement(&self) -> bool {
        self.require_refinement
    }
}

/// Grid-TE provider for one `dt` row of a schedule.
pub trait GridTeSource: Sync {
    fn te_estimate(&self, grid: &CombGrid) -> Result<TEEstimate>;

    /// Per-row upper bound, when the model has one.
    fn bound_value(&self, _grid: &CombGrid) -> Result<Option<f64>> {
        Ok(None)
    }

    /// Per-path divergences for the bound-fraction column, when available.
    fn per_path_kls(&self, _grid: &CombGrid) -> Result<Option<Vec<f64>>> {
        Ok(None)
    }
}

/// Exact lagged-Poisson rows, optionally with an ensemble for the
/// bound-fraction column.
pub struct LaggedPoissonSource<'a> {
    pub model: ExactLaggedTe,
    pub ensemble: Option<&'a [ProcessPair]>,
}

impl GridTeSource for LaggedPoissonSource<'_> {
    fn te_estimate(&self, grid: &CombGrid) -> Result<TEEstimate> {
        self.model.params.level(grid.dt)?;
        self.model.te_comb_sum(grid)
    }

    fn bound_value(&self, grid: &CombGrid) -> Result<Option<f64>> {
        let p = self.model.params;
        Ok(Some(
            grid.tau as f64 * s_value(p.lambda, grid.dt, p.epsilon, p.r)?,
        ))
    }

    fn per_path_kls(&self, grid: &CombGrid) -> Result<Option<Vec<f64>>> {
        match self.ensemble {
            None => Ok(None),
            Some(paths) => {
                let kls = paths
                    .par_iter()
                    .map(|pair| Ok(path_kl(&self.model.params, grid.dt, pair, grid)?.value))
                    .collect::<Result<Vec<f64>>>()?;
                Ok(Some(kls))
            }
        }
    }
}

/// Plug-in rows over a fixed ensemble.
pub struct PluginSource<'a> {
    pub ensemble: &'a [ProcessPair],
}

impl GridTeSource for PluginSource<'_> {
    fn te_estimate(&self, grid: &CombGrid) -> Result<TEEstimate> {
        te_comb_sum_plugin(self.ensemble, grid)
    }
}

/// One schedule row of a convergence report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub dt: f64,
    /// TE sum; `None` when the row diverged (an infinite step).
    pub te_sum: Option<f64>,
    pub stderr: f64,
    pub bound_value: Option<f64>,
    pub bound_fraction: Option<f64>,
    pub divergent: bool,
}

/// Schedule rows (coarsest first) plus the extrapolated limit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Linear-in-dt extrapolation from the last two finite rows,
    /// reported alongside the raw rows.
    pub limit_estimate: Option<f64>,
    /// Largest |row difference| over the final three finite rows.
    pub cauchy_gap: Option<f64>,
    /// `cauchy_gap < max(1e-3, 3·stderr of the last row)`.
    pub converged: Option<bool>,
}

/// TE sums down the schedule with limit extrapolation.
pub fn converge_te(
    source: &dyn GridTeSource,
    t0: f64,
    t_end: f64,
    s: f64,
    r: f64,
    schedule: &Schedule,
) -> Result<ConvergenceReport> {
    let mut rows = Vec::with_capacity(schedule.dt_values().len());
    for &dt in schedule.dt_values() {
        let grid = CombGrid::new(t0, t_end, s, r, dt)?;
        let bound_value = source.bound_value(&grid)?;
        let (te_sum, stderr, divergent) = match source.te_estimate(&grid) {
            Ok(est) => (Some(est.value), est.stderr, false),
            Err(Error::AbsoluteContinuity(_)) => (None, 0.0, true),
            Err(e) => return Err(e),
        };
        let bound_fraction = match (source.per_path_kls(&grid)?, bound_value) {
            (Some(kls), Some(bound)) if !kls.is_empty() => {
                Some(kls.iter().filter(|&&v| v <= bound).count() as f64 / kls.len() as f64)
            }
            _ => None,
        };
        rows.push(ConvergenceRow { dt, te_sum, stderr, bound_value, bound_fraction, divergent });
    }

    let finite: Vec<(f64, f64, f64)> = rows
        .iter()
        .filter_map(|r| r.te_sum.map(|v| (r.dt, v, r.stderr)))
        .collect();
    let limit_estimate = match finite.len() {
        0 => None,
        1 => Some(finite[0].1),
        n => {
            let (dt1, v1, _) = finite[n - 2];
            let (dt2, v2, _) = finite[n - 1];
            Some((v2 * dt1 - v1 * dt2) / (dt1 - dt2))
        }
    };
    let tail = &finite[finite.len().saturating_sub(3)..];
    let cauchy_gap = if tail.len() >= 2 {
        Some(
            tail.windows(2)
                .map(|w| (w[0].1 - w[1].1).abs())
                .fold(0.0f64, f64::max),
        )
    } else {
        None
    };
    let converged = cauchy_gap.map(|gap| {
        let last_stderr = finite.last().map(|&(_, _, e)| e).unwrap_or(0.0);
        gap < (1e-3f64).max(3.0 * last_stderr)
    });
    Ok(ConvergenceReport { rows, limit_estimate, cauchy_gap, converged })
}

/// Fraction of paths whose pathwise divergence stays at or below `gamma`
/// for every schedule step at or below the row's step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundFractionRow {
    pub dt: f64,
    pub fraction: f64,
}

/// Boundedness statistic on a fixed ensemble: row `j` reports the
/// fraction of paths with `max over schedule steps dt ≤ dt_j` of the
/// pathwise divergence at or below `gamma`. Fractions are non-decreasing
/// as `dt` shrinks because each finer row drops constraints.
pub fn check_bound(
    params: &LaggedPoissonParams,
    ensemble: &[ProcessPair],
    schedule: &Schedule,
    gamma: f64,
) -> Result<Vec<BoundFractionRow>> {
    if ensemble.is_empty() {
        return Err(Error::Contract("empty ensemble".into()));
    }
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::Parameter(format!("gamma {gamma} must be >= 0")));
    }
    let dts = schedule.dt_values();
    // kls[row][path]
    let kls: Vec<Vec<f64>> = dts
        .iter()
        .map(|&dt| {
            let grid = params.grid(dt)?;
            ensemble
                .par_iter()
                .map(|pair| Ok(path_kl(params, dt, pair, &grid)?.value))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let n = ensemble.len();
    let mut rows = Vec::with_capacity(dts.len());
    // suffix maxima: row j constrains every step at or below dt_j
    let mut running_max = vec![f64::NEG_INFINITY; n];
    let mut fractions_rev = Vec::with_capacity(dts.len());
    for row_kls in kls.iter().rev() {
        for (m, &v) in running_max.iter_mut().zip(row_kls.iter()) {
            if v > *m {
                *m = v;
            }
        }
        let frac = running_max.iter().filter(|&&m| m <= gamma).count() as f64 / n as f64;
        fractions_rev.push(frac);
    }
    for (i, &dt) in dts.iter().enumerate() {
        rows.push(BoundFractionRow { dt, fraction: fractions_rev[dts.len() - 1 - i] });
    }
    Ok(rows)
}

/// Expected pathwise TE over a sub-window, with a standard error.
pub trait EptSource: Sync {
    fn ept(&self, t0: f64, t_end: f64) -> Result<(f64, f64)>;
}

/// `τ·S` surrogate for the lagged-Poisson EPT on sub-windows.
pub struct TauSSurrogate {
    pub lambda: f64,
    pub epsilon: f64,
    pub r: f64,
    pub s: f64,
    /// inner grid step used for every sub-window
    pub dt: f64,
}

impl EptSource for TauSSurrogate {
    fn ept(&self, t0: f64, t_end: f64) -> Result<(f64, f64)> {
        let params = LaggedPoissonParams::new(self.lambda, self.epsilon, self.r, self.s, t0, t_end)?;
        let grid = params.grid(self.dt)?;
        let s = s_value(self.lambda, self.dt, self.epsilon, self.r)?;
        Ok((grid.tau as f64 * s, 0.0))
    }
}

/// Girsanov Monte Carlo EPT on sub-windows.
pub struct GirsanovEpt<'a> {
    pub model: &'a (dyn crate::markov::GenerativeJumpModel + Sync),
    pub n_paths: usize,
    pub seed: u64,
}

impl EptSource for GirsanovEpt<'_> {
    fn ept(&self, t0: f64, t_end: f64) -> Result<(f64, f64)> {
        let r = crate::markov::ept_monte_carlo(self.model, t0, t_end, self.n_paths, self.seed)?;
        Ok((r.estimate.value, r.estimate.stderr))
    }
}

/// One finite-difference row of a TE-rate report.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RateRow {
    /// window length
    pub h: f64,
    pub ept: f64,
    pub ept_stderr: f64,
    /// `ept / h`
    pub rate: f64,
}

/// Finite-difference TE rate at `t`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateReport {
    pub t: f64,
    pub rows: Vec<RateRow>,
    /// Linear-in-h extrapolation of the rate from the last two rows.
    pub extrapolated: Option<f64>,
}

/// `EPT(t, t+h)/h` down a decreasing window schedule.
pub fn te_rate_fd(source: &dyn EptSource, t: f64, windows: &[f64]) -> Result<RateReport> {
    if windows.is_empty() {
        return Err(Error::Parameter("empty window schedule".into()));
    }
    for w in windows.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::Parameter("window schedule must strictly decrease".into()));
        }
    }
    let mut rows = Vec::with_capacity(windows.len());
    for &h in windows {
        if !(h > 0.0) {
            return Err(Error::Parameter(format!("window {h} must be > 0")));
        }
        let (ept, ept_stderr) = source.ept(t, t + h)?;
        rows.push(RateRow { h, ept, ept_stderr, rate: ept / h });
    }
    let extrapolated = if rows.len() >= 2 {
        let a = rows[rows.len() - 2];
        let b = rows[rows.len() - 1];
        Some((b.rate * a.h - a.rate * b.h) / (a.h - b.h))
    } else {
        Some(rows[0].rate)
    };
    Ok(RateReport { t, rows, extrapolated })
}

/// Stationarity check report: per-step equality of the grid TE, and
/// agreement of the rate with the windowed average `EPT/(T − t0)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationarityReport {
    /// Largest spread `max_i TE_i − min_i TE_i` over the grid steps.
    pub step_spread: f64,
    pub step_tolerance: f64,
    pub steps_equal: bool,
    pub rate: f64,
    pub ept_over_window: f64,
    pub rate_tolerance: f64,
    pub rate_matches_average: bool,
}

/// Assemble the stationarity report from a grid estimate, an
/// independently computed rate, and a windowed EPT.
///
/// `extra_rate_slack` absorbs deterministic discretization slop (floor
/// effects of `tau·dt` versus the window length) on top of the `3σ`
/// statistical tolerance.
pub fn stationary_rate_check(
    estimate: &TEEstimate,
    step_tolerance: f64,
    rate: (f64, f64),
    ept: (f64, f64),
    window_len: f64,
    extra_rate_slack: f64,
) -> Result<StationarityReport> {
    if estimate.per_step.is_empty() {
        return Err(Error::Contract("estimate has no per-step breakdown".into()));
    }
    if !(window_len > 0.0) {
        return Err(Error::Parameter(format!("window length {window_len}")));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(_, v) in &estimate.per_step {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let step_spread = hi - lo;
    let (rate_value, rate_sigma) = rate;
    let (ept_value, ept_sigma) = ept;
    let ept_over_window = ept_value / window_len;
    let combined_sigma = (rate_sigma.powi(2) + (ept_sigma / window_len).powi(2)).sqrt();
    let rate_tolerance = 3.0 * combined_sigma + extra_rate_slack;
    Ok(StationarityReport {
        step_spread,
        step_tolerance,
        steps_equal: step_spread <= step_tolerance,
        rate: rate_value,
        ept_over_window,
        rate_tolerance,
        rate_matches_average: (rate_value - ept_over_window).abs() <= rate_tolerance,
    })
}

/// Joint distribution over a finite product space, for the coarsening
/// (marginalization) check.
#[derive(Debug, Clone)]
pub struct JointDist {
    n_coords: usize,
    entries: HashMap<Vec<i64>, f64>,
}

impl JointDist {
    pub fn new(n_coords: usize, entries: HashMap<Vec<i64>, f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Distribution("empty joint".into()));
        }
        let mut total = 0.0;
        for (k, &p) in &entries {
            if k.len() != n_coords {
                return Err(Error::Distribution(format!(
                    "outcome {k:?} has {} coordinates, expected {n_coords}",
                    k.len()
                )));
            }
            if !p.is_finite() || p < 0.0 {
                return Err(Error::Distribution(format!("mass {p}")));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Distribution(format!("joint mass sums to {total}")));
        }
        Ok(Self { n_coords, entries })
    }

    /// Product of independent factors.
    pub fn from_factors(factors: &[Pmf]) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Distribution("no factors".into()));
        }
        let mut entries: HashMap<Vec<i64>, f64> = HashMap::new();
        entries.insert(Vec::new(), 1.0);
        for f in factors {
            let mut next = HashMap::with_capacity(entries.len() * f.symbols().len());
            for (prefix, p) in entries {
                for (sym, q) in f.iter() {
                    let mut key = prefix.clone();
                    key.push(sym);
                    next.insert(key, p * q);
                }
            }
            entries = next;
        }
        Self::new(factors.len(), entries)
    }

    /// Marginal onto the selected coordinates (kept in the given order).
    pub fn marginal(&self, keep: &[usize]) -> Result<JointDist> {
        for &c in keep {
            if c >= self.n_coords {
                return Err(Error::Contract(format!(
                    "coordinate {c} out of range ({})",
                    self.n_coords
                )));
            }
        }
        if keep.is_empty() {
            // everything collapses onto the empty tuple, with mass exactly 1
            let mut e = HashMap::new();
            e.insert(Vec::new(), 1.0);
            return Ok(JointDist { n_coords: 0, entries: e });
        }
        let mut items: Vec<_> = self.entries.iter().collect();
        items.sort_by(|a, b| a.0.cmp(b.0));
        let mut entries: HashMap<Vec<i64>, f64> = HashMap::new();
        for (k, &p) in items {
            let key: Vec<i64> = keep.iter().map(|&c| k[c]).collect();
            *entries.entry(key).or_insert(0.0) += p;
        }
        JointDist::new(keep.len(), entries)
    }

    pub fn kl(&self, other: &JointDist) -> Result<KlValue> {
        if self.n_coords != other.n_coords {
            return Err(Error::Contract("coordinate counts differ".into()));
        }
        let mut items: Vec<_> = self.entries.iter().collect();
        items.sort_by(|a, b| a.0.cmp(b.0));
        let mut total = 0.0;
        for (k, &p) in items {
            if p == 0.0 {
                continue;
            }
            let q = other.entries.get(k).copied().unwrap_or(0.0);
            if q == 0.0 {
                return Ok(KlValue::Infinite);
            }
            total += p * (p / q).ln();
        }
        Ok(KlValue::Finite(total))
    }
}

/// Marginalization can only lose divergence: returns
/// `(KL(p ‖ q), KL(p|keep ‖ q|keep))`, the second never exceeding the
/// first.
pub fn kl_coarsening_check(p: &JointDist, q: &JointDist, keep: &[usize]) -> Result<(f64, f64)> {
    let fine = p.kl(q)?.finite()?;
    let coarse = p.marginal(keep)?.kl(&q.marginal(keep)?)?.finite()?;
    Ok((fine, coarse))
}

/// Default number of micro-grid nodes representing each segment in
/// [`subpartition_ept`].
pub const DEFAULT_MICRO_NODES: usize = 4;

/// Sub-partitioned EPT: per-cell plug-in conditional mutual information.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubpartitionEpt {
    pub value: f64,
    pub per_cell: Vec<f64>,
    /// micro-grid nodes used to represent each segment
    pub micro_nodes: usize,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Plug-in conditional mutual information `I(A; B | C)` from count
/// triples.
fn plugin_cmi(triples: &[(Vec<i64>, Vec<i64>, Vec<i64>)]) -> Result<f64> {
    let n = triples.len();
    if n == 0 {
        return Err(Error::Contract("no samples".into()));
    }
    let mut abc: HashMap<&(Vec<i64>, Vec<i64>, Vec<i64>), f64> = HashMap::new();
    let mut ac: HashMap<(&[i64], &[i64]), f64> = HashMap::new();
    let mut bc: HashMap<(&[i64], &[i64]), f64> = HashMap::new();
    let mut c_marg: HashMap<&[i64], f64> = HashMap::new();
    let w = 1.0 / n as f64;
    for t in triples {
        *abc.entry(t).or_insert(0.0) += w;
        *ac.entry((&t.0, &t.2)).or_insert(0.0) += w;
        *bc.entry((&t.1, &t.2)).or_insert(0.0) += w;
        *c_marg.entry(&t.2).or_insert(0.0) += w;
    }
    if abc.len() == n && n >= 16 {
        return Err(Error::Estimation(
            "every sampled context is distinct; increase the ensemble, coarsen the micro grid, or shorten the histories".into(),
        ));
    }
    let mut items: Vec<_> = abc.iter().collect();
    items.sort_by(|a, b| a.0.cmp(b.0));
    let mut total = 0.0;
    for (t, &p) in items {
        let pac = ac[&(t.0.as_slice(), t.2.as_slice())];
        let pbc = bc[&(t.1.as_slice(), t.2.as_slice())];
        let pc = c_marg[t.2.as_slice()];
        total += p * (p * pc / (pac * pbc)).ln();
    }
    Ok(total)
}

/// Sub-partitioned EPT over cells `[t_{i−1}, t_i]` of the partition:
/// `Σ_i I(X segment; Y history ending at t_i | X history before t_{i−1})`,
/// each segment represented by `micro_nodes` equally spaced samples.
pub fn subpartition_ept(
    ensemble: &[ProcessPair],
    partition: &[f64],
    s: f64,
    r: f64,
    micro_nodes: usize,
) -> Result<SubpartitionEpt> {
    if ensemble.is_empty() {
        return Err(Error::Contract("empty ensemble".into()));
    }
    if partition.len() < 2 {
        return Err(Error::Parameter("partition needs at least two times".into()));
    }
    for w in partition.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::Parameter("partition must strictly increase".into()));
        }
    }
    if micro_nodes < 2 {
        return Err(Error::Parameter("need at least two micro nodes per segment".into()));
    }
    if !(s > 0.0) || !(r > 0.0) {
        return Err(Error::Parameter("history lengths must be > 0".into()));
    }
    let mut per_cell = Vec::with_capacity(partition.len() - 1);
    for cell in partition.windows(2) {
        let (lo, hi) = (cell[0], cell[1]);
        let a_times = linspace(lo, hi, micro_nodes);
        let b_times = linspace(hi - r, hi, micro_nodes);
        let c_times = linspace(lo - s, lo, micro_nodes);
        let triples: Vec<(Vec<i64>, Vec<i64>, Vec<i64>)> = ensemble
            .iter()
            .map(|pair| {
                Ok((
                    pair.x().sample_on_grid(&a_times)?,
                    pair.y().sample_on_grid(&b_times)?,
                    pair.x().sample_on_grid(&c_times)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        per_cell.push(plugin_cmi(&triples)?);
    }
    Ok(SubpartitionEpt {
        value: per_cell.iter().sum(),
        per_cell,
        micro_nodes,
    })
}
