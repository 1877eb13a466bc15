//! Discrete-time transfer entropy on countable alphabets.
//!
//! KL divergence of finite pmfs with the conventions `0·ln(0/q) = 0` and
//! an explicit infinity marker when `p(x) > 0, q(x) = 0`; product-measure
//! additivity; Schreiber transfer entropy by brute-force summation over a
//! finite joint; plug-in conditional tables counted from a Monte Carlo
//! ensemble; and the per-grid-step TE sum over a [`CombGrid`].

use crate::comb::CombGrid;
use crate::error::{Error, Result};
use crate::paths::ProcessPair;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// A KL divergence: finite nats, or the infinity marker produced by an
/// absolute-continuity failure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KlValue {
    Finite(f64),
    Infinite,
}

impl KlValue {
    pub fn is_infinite(&self) -> bool {
        matches!(self, KlValue::Infinite)
    }

    /// Finite value, or an error if the divergence is infinite.
    pub fn finite(&self) -> Result<f64> {
        match self {
            KlValue::Finite(v) => Ok(*v),
            KlValue::Infinite => Err(Error::AbsoluteContinuity(
                "KL divergence is infinite".into(),
            )),
        }
    }

    fn add(self, other: KlValue) -> KlValue {
        match (self, other) {
            (KlValue::Finite(a), KlValue::Finite(b)) => KlValue::Finite(a + b),
            _ => KlValue::Infinite,
        }
    }
}

/// Finite-support probability mass function over integer symbols.
///
/// Symbols are kept sorted; probabilities are nonnegative and sum to one
/// within `1e-12`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pmf {
    symbols: Vec<i64>,
    probs: Vec<f64>,
}

impl Pmf {
    pub fn new(mut entries: Vec<(i64, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Distribution("empty support".into()));
        }
        entries.sort_by_key(|&(s, _)| s);
        let mut total = 0.0;
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Distribution(format!("duplicate symbol {}", w[0].0)));
            }
        }
        for &(s, p) in &entries {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::Distribution(format!("p({s}) = {p}")));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Distribution(format!("mass sums to {total}")));
        }
        let (symbols, probs) = entries.into_iter().unzip();
        Ok(Self { symbols, probs })
    }

    /// Normalized pmf from nonnegative counts or weights.
    pub fn from_weights(entries: Vec<(i64, f64)>) -> Result<Self> {
        let total: f64 = entries.iter().map(|&(_, w)| w).sum();
        if !(total > 0.0) {
            return Err(Error::Distribution(format!("total weight {total}")));
        }
        Self::new(entries.into_iter().map(|(s, w)| (s, w / total)).collect())
    }

    pub fn symbols(&self) -> &[i64] {
        &self.symbols
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability of `symbol` (zero when outside the support).
    pub fn prob(&self, symbol: i64) -> f64 {
        match self.symbols.binary_search(&symbol) {
            Ok(idx) => self.probs[idx],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.symbols.iter().copied().zip(self.probs.iter().copied())
    }
}

/// `Σ_x p(x)·ln(p(x)/q(x))` with `0·ln(0/q) = 0`; [`KlValue::Infinite`]
/// when some `x` has `p(x) > 0` but `q(x) = 0`.
pub fn kl_divergence(p: &Pmf, q: &Pmf) -> KlValue {
    let mut total = 0.0;
    for (sym, pp) in p.iter() {
        if pp == 0.0 {
            continue;
        }
        let qq = q.prob(sym);
        if qq == 0.0 {
            return KlValue::Infinite;
        }
        total += pp * (pp / qq).ln();
    }
    KlValue::Finite(total)
}

/// KL divergence of product measures: `Σ_i KL(ps[i] ‖ qs[i])`.
pub fn product_kl(ps: &[Pmf], qs: &[Pmf]) -> Result<KlValue> {
    if ps.len() != qs.len() {
        return Err(Error::Contract(format!(
            "product factors differ: {} vs {}",
            ps.len(),
            qs.len()
        )));
    }
    Ok(ps
        .iter()
        .zip(qs.iter())
        .map(|(p, q)| kl_divergence(p, q))
        .fold(KlValue::Finite(0.0), KlValue::add))
}

/// Conditioning context: destination history of `k + 1` symbols, plus an
/// optional source history of `l + 1` symbols.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HistoryKey {
    pub x_hist: Vec<i64>,
    pub y_hist: Option<Vec<i64>>,
}

impl HistoryKey {
    fn x_only(&self) -> HistoryKey {
        HistoryKey { x_hist: self.x_hist.clone(), y_hist: None }
    }
}

/// Conditional pmfs keyed by context, each with the probability of its
/// context. Weights sum to one within `1e-9`.
#[derive(Debug, Clone)]
pub struct CondPmfTable {
    entries: HashMap<HistoryKey, (Pmf, f64)>,
}

impl CondPmfTable {
    pub fn new(entries: HashMap<HistoryKey, (Pmf, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Distribution("empty conditional table".into()));
        }
        let total: f64 = entries.values().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Distribution(format!(
                "context weights sum to {total}"
            )));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &HashMap<HistoryKey, (Pmf, f64)> {
        &self.entries
    }

    pub fn get(&self, key: &HistoryKey) -> Option<&(Pmf, f64)> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Which histories condition the target symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    XOnly,
    XAndY,
}

/// Transfer entropy value with Monte Carlo error and per-step breakdown.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TEEstimate {
    /// Total TE over the grid, in nats.
    pub value: f64,
    /// Standard error (0 for exact computations).
    pub stderr: f64,
    /// Ensemble size (0 for exact computations).
    pub n_paths: usize,
    /// `(step index, TE_i)` for each grid step.
    pub per_step: Vec<(usize, f64)>,
}

impl TEEstimate {
    /// Estimate whose value is the sum of its per-step entries.
    pub fn from_steps(stderr: f64, n_paths: usize, per_step: Vec<(usize, f64)>) -> Result<Self> {
        let value: f64 = per_step.iter().map(|&(_, v)| v).sum();
        if !value.is_finite() || !stderr.is_finite() {
            return Err(Error::Numerical(format!(
                "TE estimate not finite: value {value}, stderr {stderr}"
            )));
        }
        Ok(Self { value, stderr, n_paths, per_step })
    }

    /// Estimate from a Monte Carlo mean, with no per-step breakdown.
    pub fn from_mean(value: f64, stderr: f64, n_paths: usize) -> Result<Self> {
        if !value.is_finite() || !stderr.is_finite() {
            return Err(Error::Numerical(format!(
                "TE estimate not finite: value {value}, stderr {stderr}"
            )));
        }
        Ok(Self { value, stderr, n_paths, per_step: Vec::new() })
    }
}

/// Exact joint pmf over `(x_next, x-history, y-history)` tuples.
#[derive(Debug, Clone)]
pub struct JointPmf {
    k: usize,
    l: usize,
    entries: HashMap<(i64, Vec<i64>, Vec<i64>), f64>,
}

impl JointPmf {
    pub fn new(k: usize, l: usize, entries: HashMap<(i64, Vec<i64>, Vec<i64>), f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Distribution("empty joint pmf".into()));
        }
        let mut total = 0.0;
        for ((x, xh, yh), &p) in &entries {
            if xh.len() != k + 1 || yh.len() != l + 1 {
                return Err(Error::Distribution(format!(
                    "history lengths for ({x}, {xh:?}, {yh:?}) must be {} and {}",
                    k + 1,
                    l + 1
                )));
            }
            if !p.is_finite() || p < 0.0 {
                return Err(Error::Distribution(format!("joint mass {p}")));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Distribution(format!("joint mass sums to {total}")));
        }
        Ok(Self { k, l, entries })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> usize {
        self.l
    }

    /// Schreiber transfer entropy by direct triple summation:
    /// `Σ p(x, xh, yh) · ln[ p(x|xh,yh) / p(x|xh) ]`.
    ///
    /// Conditionals are formed only on contexts with positive probability.
    pub fn schreiber_te(&self) -> Result<f64> {
        let mut ctx_xy: HashMap<(&[i64], &[i64]), f64> = HashMap::new();
        let mut ctx_x: HashMap<&[i64], f64> = HashMap::new();
        let mut joint_x: HashMap<(i64, &[i64]), f64> = HashMap::new();
        for ((x, xh, yh), &p) in &self.entries {
            *ctx_xy.entry((xh.as_slice(), yh.as_slice())).or_insert(0.0) += p;
            *ctx_x.entry(xh.as_slice()).or_insert(0.0) += p;
            *joint_x.entry((*x, xh.as_slice())).or_insert(0.0) += p;
        }
        let mut items: Vec<_> = self.entries.iter().collect();
        items.sort_by(|a, b| a.0.cmp(b.0));
        let mut te = 0.0;
        for ((x, xh, yh), &p) in items {
            if p == 0.0 {
                continue;
            }
            let w_xy = ctx_xy[&(xh.as_slice(), yh.as_slice())];
            let w_x = ctx_x[xh.as_slice()];
            let cond_xy = p / w_xy;
            let cond_x = joint_x[&(*x, xh.as_slice())] / w_x;
            // conditionals of a common joint cannot fail absolute continuity
            if cond_x <= 0.0 {
                return Err(Error::Numerical(format!(
                    "conditional p({x}|{xh:?}) vanished under a positive joint"
                )));
            }
            te += p * (cond_xy / cond_x).ln();
        }
        Ok(te)
    }

    /// Convert the joint into the pair of conditional tables used by
    /// [`te_step`]: one conditioned on both histories, one on the
    /// destination history alone.
    pub fn to_tables(&self) -> Result<(CondPmfTable, CondPmfTable)> {
        let mut joint_cells: HashMap<HistoryKey, HashMap<i64, f64>> = HashMap::new();
        let mut x_cells: HashMap<HistoryKey, HashMap<i64, f64>> = HashMap::new();
        for ((x, xh, yh), &p) in &self.entries {
            if p == 0.0 {
                continue;
            }
            let key_xy = HistoryKey { x_hist: xh.clone(), y_hist: Some(yh.clone()) };
            *joint_cells.entry(key_xy).or_default().entry(*x).or_insert(0.0) += p;
            let key_x = HistoryKey { x_hist: xh.clone(), y_hist: None };
            *x_cells.entry(key_x).or_default().entry(*x).or_insert(0.0) += p;
        }
        let build = |cells: HashMap<HistoryKey, HashMap<i64, f64>>| -> Result<CondPmfTable> {
            let mut entries = HashMap::new();
            for (key, targets) in cells {
                let weight: f64 = targets.values().sum();
                let pmf = Pmf::from_weights(targets.into_iter().collect())?;
                entries.insert(key, (pmf, weight));
            }
            CondPmfTable::new(entries)
        };
        Ok((build(joint_cells)?, build(x_cells)?))
    }
}

/// Per-step transfer entropy from a matched pair of conditional tables:
/// `Σ_ctx weight(ctx) · KL(pmf(x|xh,yh) ‖ pmf(x|xh))`.
///
/// The tables must come from the same law; a joint context whose
/// destination history is missing from the x-only table is an internal
/// error rather than a recoverable infinity.
pub fn te_step(joint: &CondPmfTable, x_only: &CondPmfTable) -> Result<KlValue> {
    // sorted contexts keep the float accumulation order-independent of
    // the hash map's per-process iteration order
    let mut items: Vec<_> = joint.entries().iter().collect();
    items.sort_by(|a, b| a.0.cmp(b.0));
    let mut total = 0.0;
    for (key, (pmf_xy, weight)) in items {
        let x_key = key.x_only();
        let (pmf_x, _) = x_only.get(&x_key).ok_or_else(|| {
            Error::Numerical(format!(
                "destination history {:?} missing from the x-only table",
                x_key.x_hist
            ))
        })?;
        match kl_divergence(pmf_xy, pmf_x) {
            KlValue::Finite(v) => total += weight * v,
            KlValue::Infinite => return Ok(KlValue::Infinite),
        }
    }
    Ok(KlValue::Finite(total))
}

/// Node-sample cache: every grid index a step's contexts can touch,
/// evaluated once per path.
struct GridSamples {
    /// lowest raw index sampled
    base: i64,
    x: Vec<i64>,
    y: Vec<i64>,
}

fn presample(pair: &ProcessPair, grid: &CombGrid) -> Result<GridSamples> {
    let base = grid.history_floor_index();
    let times: Vec<f64> = (base..=grid.n_hi).map(|j| grid.index_time(j)).collect();
    Ok(GridSamples {
        base,
        x: pair.x().sample_on_grid(&times)?,
        y: pair.y().sample_on_grid(&times)?,
    })
}

impl GridSamples {
    #[inline]
    fn x_at(&self, idx: i64) -> i64 {
        self.x[(idx - self.base) as usize]
    }

    #[inline]
    fn y_at(&self, idx: i64) -> i64 {
        self.y[(idx - self.base) as usize]
    }
}

fn step_key(samples: &GridSamples, grid: &CombGrid, i: usize, conditioning: Conditioning) -> (HistoryKey, i64) {
    let hi = grid.node_index(i);
    let x_hist: Vec<i64> = (hi - (grid.k as i64 + 1)..=hi - 1)
        .map(|j| samples.x_at(j))
        .collect();
    let y_hist = match conditioning {
        Conditioning::XOnly => None,
        Conditioning::XAndY => Some(
            (hi - (grid.l as i64 + 1)..=hi - 1)
                .map(|j| samples.y_at(j))
                .collect(),
        ),
    };
    (HistoryKey { x_hist, y_hist }, samples.x_at(hi))
}

fn check_step_history(grid: &CombGrid, i: usize) -> Result<()> {
    grid.history_nodes(i, grid.k.max(1))?;
    grid.history_nodes(i, grid.l.max(1))?;
    if grid.k == 0 || grid.l == 0 {
        return Err(Error::Grid(format!(
            "history node counts k = {}, l = {} must be >= 1 (shorten dt or lengthen s, r)",
            grid.k, grid.l
        )));
    }
    Ok(())
}

/// Empirical conditional table at grid step `i`, counted over the
/// ensemble. Contexts with zero count are simply absent; no smoothing.
pub fn estimate_cond_table(
    ensemble: &[ProcessPair],
    grid: &CombGrid,
    i: usize,
    conditioning: Conditioning,
) -> Result<CondPmfTable> {
    estimate_cond_table_smoothed(ensemble, grid, i, conditioning, 0.0)
}

/// [`estimate_cond_table`] with optional Laplace smoothing: `alpha` is
/// added to every (context, target) cell over the step's observed
/// target alphabet. `alpha = 0` reproduces the raw-count estimator.
pub fn estimate_cond_table_smoothed(
    ensemble: &[ProcessPair],
    grid: &CombGrid,
    i: usize,
    conditioning: Conditioning,
    alpha: f64,
) -> Result<CondPmfTable> {
    if ensemble.is_empty() {
        return Err(Error::Contract("empty ensemble".into()));
    }
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::Parameter(format!("smoothing weight {alpha} must be >= 0")));
    }
    check_step_history(grid, i)?;
    let mut counts: HashMap<HistoryKey, HashMap<i64, u64>> = HashMap::new();
    for pair in ensemble {
        let samples = presample(pair, grid)?;
        let (key, target) = step_key(&samples, grid, i, conditioning);
        *counts.entry(key).or_default().entry(target).or_insert(0) += 1;
    }
    if alpha == 0.0 {
        return table_from_counts(counts, ensemble.len());
    }
    let mut alphabet: Vec<i64> = counts
        .values()
        .flat_map(|targets| targets.keys().copied())
        .collect();
    alphabet.sort_unstable();
    alphabet.dedup();
    let mut entries = HashMap::with_capacity(counts.len());
    for (key, targets) in counts {
        let ctx_count: u64 = targets.values().sum();
        let weight = ctx_count as f64 / ensemble.len() as f64;
        let pmf = Pmf::from_weights(
            alphabet
                .iter()
                .map(|&sym| (sym, targets.get(&sym).copied().unwrap_or(0) as f64 + alpha))
                .collect(),
        )?;
        entries.insert(key, (pmf, weight));
    }
    CondPmfTable::new(entries)
}

fn table_from_counts(
    counts: HashMap<HistoryKey, HashMap<i64, u64>>,
    n: usize,
) -> Result<CondPmfTable> {
    let mut entries = HashMap::with_capacity(counts.len());
    for (key, targets) in counts {
        let ctx_count: u64 = targets.values().sum();
        let weight = ctx_count as f64 / n as f64;
        let pmf = Pmf::from_weights(
            targets.into_iter().map(|(s, c)| (s, c as f64)).collect(),
        )?;
        entries.insert(key, (pmf, weight));
    }
    CondPmfTable::new(entries)
}

/// Exact per-step conditional laws for a model whose grid restrictions
/// are known in closed form.
pub trait ExactStepTables: Sync {
    /// `(joint-context table, x-only table)` for grid step `i`.
    fn step_tables(&self, grid: &CombGrid, i: usize) -> Result<(CondPmfTable, CondPmfTable)>;
}

/// Exact-mode TE sum: `Σ_{i=0}^{tau-1}` of [`te_step`] on the model's
/// exact tables.
pub fn te_comb_sum_exact(model: &dyn ExactStepTables, grid: &CombGrid) -> Result<TEEstimate> {
    let mut per_step = Vec::with_capacity(grid.tau);
    for i in 0..grid.tau {
        let (joint, x_only) = model.step_tables(grid, i)?;
        let v = te_step(&joint, &x_only)?.finite()?;
        per_step.push((i, v));
    }
    TEEstimate::from_steps(0.0, 0, per_step)
}

/// Plug-in TE sum over the comb grid.
///
/// Counts per-step conditional tables over the ensemble, sums the
/// per-step divergences, and reports the Monte Carlo standard error of
/// the equivalent per-path log-ratio average.
pub fn te_comb_sum_plugin(ensemble: &[ProcessPair], grid: &CombGrid) -> Result<TEEstimate> {
    if ensemble.is_empty() {
        return Err(Error::Contract("empty ensemble".into()));
    }
    check_step_history(grid, 0)?;
    check_step_history(grid, grid.tau - 1)?;

    // Pass 1: per-step context/target counts, reduced associatively.
    type StepCounts = Vec<HashMap<HistoryKey, HashMap<i64, u64>>>;
    let n = ensemble.len();
    let tau = grid.tau;
    let merge = |mut a: StepCounts, b: StepCounts| {
        for (ia, ib) in a.iter_mut().zip(b) {
            for (key, targets) in ib {
                let cell = ia.entry(key).or_default();
                for (sym, c) in targets {
                    *cell.entry(sym).or_insert(0) += c;
                }
            }
        }
        a
    };
    let counts_pair: (StepCounts, StepCounts) = ensemble
        .par_iter()
        .map(|pair| {
            let samples = presample(pair, grid)?;
            let mut joint: StepCounts = vec![HashMap::new(); tau];
            let mut x_only: StepCounts = vec![HashMap::new(); tau];
            for i in 0..tau {
                let (key, target) = step_key(&samples, grid, i, Conditioning::XAndY);
                *joint[i].entry(key).or_default().entry(target).or_insert(0) += 1;
                let (key_x, target) = step_key(&samples, grid, i, Conditioning::XOnly);
                *x_only[i].entry(key_x).or_default().entry(target).or_insert(0) += 1;
            }
            Ok((joint, x_only))
        })
        .try_reduce(
            || (vec![HashMap::new(); tau], vec![HashMap::new(); tau]),
            |a, b| Ok((merge(a.0, b.0), merge(a.1, b.1))),
        )?;

    let mut joint_tables = Vec::with_capacity(tau);
    let mut x_tables = Vec::with_capacity(tau);
    for (jc, xc) in counts_pair.0.into_iter().zip(counts_pair.1) {
        joint_tables.push(table_from_counts(jc, n)?);
        x_tables.push(table_from_counts(xc, n)?);
    }

    let mut per_step = Vec::with_capacity(tau);
    for i in 0..tau {
        let v = te_step(&joint_tables[i], &x_tables[i])?.finite().map_err(|_| {
            Error::Numerical(
                "plug-in tables from common counts produced an infinite step".into(),
            )
        })?;
        per_step.push((i, v));
    }

    // Pass 2: per-path pathwise log-ratio, for the standard error.
    let log_ratios: Vec<f64> = ensemble
        .par_iter()
        .map(|pair| {
            let samples = presample(pair, grid)?;
            let mut lr = 0.0;
            for i in 0..tau {
                let (key, target) = step_key(&samples, grid, i, Conditioning::XAndY);
                let (pmf_xy, _) = joint_tables[i].get(&key).ok_or_else(|| {
                    Error::Numerical("context missing in pass 2".into())
                })?;
                let (pmf_x, _) = x_tables[i].get(&key.x_only()).ok_or_else(|| {
                    Error::Numerical("x-context missing in pass 2".into())
                })?;
                lr += (pmf_xy.prob(target) / pmf_x.prob(target)).ln();
            }
            Ok(lr)
        })
        .collect::<Result<Vec<f64>>>()?;

    let mean = log_ratios.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        log_ratios.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let stderr = (var / n as f64).sqrt();
    TEEstimate::from_steps(stderr, n, per_step)
}
