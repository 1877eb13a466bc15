//! Uniform time grids for restricting path measures.
//!
//! A [`CombGrid`] over `[t0, T)` with history lengths `s` (destination)
//! and `r` (source) and step `dt` carries the node times
//! `node(i) = ⌊T/dt⌋·dt − i·dt`, the step count `tau`, and the history
//! node counts `k = ⌊s/dt⌋`, `l = ⌊r/dt⌋`. Node times are always
//! reconstructed as `integer_index × dt` so nested grids align exactly.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Guard added before flooring `x/dt` so that ratios like `0.3/0.1`
/// (`2.999…` in binary) land on the intended integer.
const FLOOR_GUARD: f64 = 1e-9;

/// `⌊x/dt⌋` with the guard applied.
pub fn guarded_floor_div(x: f64, dt: f64) -> i64 {
    (x / dt + FLOOR_GUARD).floor() as i64
}

/// Uniform grid with history tails below `t0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombGrid {
    pub t0: f64,
    pub t_end: f64,
    pub s: f64,
    pub r: f64,
    pub dt: f64,
    /// `⌊t0/dt⌋`
    pub n_lo: i64,
    /// `⌊T/dt⌋`
    pub n_hi: i64,
    /// `⌊max(s,r)/dt⌋`
    pub w: i64,
    /// `n_hi − n_lo`
    pub tau: usize,
    /// destination history node count `⌊s/dt⌋`
    pub k: usize,
    /// source history node count `⌊r/dt⌋`
    pub l: usize,
}

impl CombGrid {
    pub fn new(t0: f64, t_end: f64, s: f64, r: f64, dt: f64) -> Result<Self> {
        for (name, v) in [("t0", t0), ("T", t_end), ("s", s), ("r", r), ("dt", dt)] {
            if !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be finite, got {v}")));
            }
        }
        if t0 >= t_end {
            return Err(Error::Parameter(format!("need t0 < T, got [{t0}, {t_end})")));
        }
        if s <= 0.0 || r <= 0.0 || dt <= 0.0 {
            return Err(Error::Parameter(format!(
                "history lengths and step must be > 0 (s={s}, r={r}, dt={dt})"
            )));
        }
        let n_lo = guarded_floor_div(t0, dt);
        let n_hi = guarded_floor_div(t_end, dt);
        let w = guarded_floor_div(s.max(r), dt);
        let tau = n_hi - n_lo;
        if tau < 1 {
            return Err(Error::Grid(format!(
                "step {dt} too coarse for [{t0}, {t_end}): tau = {tau}"
            )));
        }
        let k = guarded_floor_div(s, dt) as usize;
        let l = guarded_floor_div(r, dt) as usize;
        Ok(Self { t0, t_end, s, r, dt, n_lo, n_hi, w, tau: tau as usize, k, l })
    }

    /// Time of the raw grid index `j` (`j × dt`), with no range check.
    #[inline]
    pub(crate) fn index_time(&self, j: i64) -> f64 {
        j as f64 * self.dt
    }

    /// `node(i) = (n_hi − i)·dt` for `i` in `[0, tau)`.
    pub fn node(&self, i: usize) -> Result<f64> {
        if i >= self.tau {
            return Err(Error::NodeIndex { index: i, tau: self.tau });
        }
        Ok(self.index_time(self.n_hi - i as i64))
    }

    /// Raw index of `node(i)`.
    #[inline]
    pub(crate) fn node_index(&self, i: usize) -> i64 {
        self.n_hi - i as i64
    }

    /// Lowest index any conditioning history may reach: `n_lo − w`.
    ///
    /// The comb set proper stops one node higher (at `n_lo − w + 1`), but
    /// the step at `i = tau − 1` conditions on nodes down to `n_lo − w`
    /// when the history spans the full `w` steps, so that node must be
    /// admissible too.
    #[inline]
    pub fn history_floor_index(&self) -> i64 {
        self.n_lo - self.w
    }

    /// The comb set as a sorted list: indices `n_lo − w + 1 ..= n_hi`
    /// scaled by `dt`.
    pub fn comb_times(&self) -> Vec<f64> {
        (self.n_lo - self.w + 1..=self.n_hi)
            .map(|j| self.index_time(j))
            .collect()
    }

    /// The `len + 1` history node times for step `i`, in increasing order:
    /// indices `n_hi − (i + len + 1) ..= n_hi − (i + 1)`.
    pub fn history_nodes(&self, i: usize, len: usize) -> Result<Vec<f64>> {
        if i >= self.tau {
            return Err(Error::NodeIndex { index: i, tau: self.tau });
        }
        if len < 1 {
            return Err(Error::Contract("history length must be >= 1".into()));
        }
        let lowest = self.n_hi - (i
            .checked_add(len + 1)
            .ok_or_else(|| Error::Contract("history length overflow".into()))?
            as i64);
        if lowest < self.history_floor_index() {
            return Err(Error::Grid(format!(
                "history for step {i} (length {len}) reaches index {lowest}, below grid floor {}",
                self.history_floor_index()
            )));
        }
        Ok((lowest..=self.n_hi - (i as i64 + 1))
            .map(|j| self.index_time(j))
            .collect())
    }
}

/// True iff `dt_coarse = m · dt_fine` for a positive integer `m`
/// (relative tolerance `1e-12`).
pub fn refines(dt_fine: f64, dt_coarse: f64) -> bool {
    if !(dt_fine > 0.0) || !(dt_coarse > 0.0) || dt_fine > dt_coarse * (1.0 + 1e-12) {
        return false;
    }
    let ratio = dt_coarse / dt_fine;
    let m = ratio.round();
    m >= 1.0 && (ratio - m).abs() <= 1e-12 * ratio.max(1.0)
}
