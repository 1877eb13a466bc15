//! Distributional laws of the simulators: Poisson increments over
//! disjoint intervals (goodness of fit and independence), the lag
//! identity, and structural path invariants under random generation.

use cttx_core::paths::{lag_path, simulate_thppp, PoissonSpec};
use cttx_core::poisson::pois;
use cttx_core::rng::stream_seed;
use proptest::prelude::*;

/// Chi-square critical values at significance 0.001 by degrees of
/// freedom (computed once with an independent statistics package).
fn chi2_crit_001(df: usize) -> f64 {
    match df {
        5 => 20.515005652432873,
        6 => 22.457744484825323,
        7 => 24.321886347856854,
        8 => 26.12448155837614,
        9 => 27.877164871256568,
        16 => 39.252354790768464,
        _ => panic!("no tabulated value for df = {df}"),
    }
}

/// Observed counts binned as {0, 1, ..., cap-1, >=cap}.
fn bin_counts(values: &[u64], cap: usize) -> Vec<u64> {
    let mut bins = vec![0u64; cap + 1];
    for &v in values {
        bins[(v as usize).min(cap)] += 1;
    }
    bins
}

fn poisson_bin_probs(mean: f64, cap: usize) -> Vec<f64> {
    let mut probs: Vec<f64> = (0..cap).map(|n| pois(mean, n as u64).unwrap()).collect();
    let tail = 1.0 - probs.iter().sum::<f64>();
    probs.push(tail.max(0.0));
    probs
}

fn chi2_statistic(observed: &[u64], expected: &[f64]) -> f64 {
    observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| {
            let d = o as f64 - e;
            d * d / e
        })
        .sum()
}

#[test]
fn thppp_increments_pass_chi_square_gof() {
    // increments over two disjoint intervals of a λ = 1.5 process
    let spec = PoissonSpec::new(1.5, 1.0).unwrap();
    let n = 10_000usize;
    let (a, b) = ((0.0, 1.0), (2.0, 3.5));
    let mut inc_a = Vec::with_capacity(n);
    let mut inc_b = Vec::with_capacity(n);
    for i in 0..n {
        let p = simulate_thppp(&spec, 0.0, 4.0, stream_seed(13013, i as u64)).unwrap();
        let count =
            |lo: f64, hi: f64| (p.eval(hi).unwrap() - p.eval(lo).unwrap()) as u64;
        inc_a.push(count(a.0, a.1));
        inc_b.push(count(b.0, b.1));
    }

    // marginal goodness of fit: bins {0..6, >=7}, df = 7
    let cap = 7;
    for (values, length) in [(&inc_a, a.1 - a.0), (&inc_b, b.1 - b.0)] {
        let mean = spec.lambda * length;
        let observed = bin_counts(values, cap);
        let expected: Vec<f64> =
            poisson_bin_probs(mean, cap).iter().map(|p| p * n as f64).collect();
        let stat = chi2_statistic(&observed, &expected);
        let crit = chi2_crit_001(cap);
        assert!(stat < crit, "GOF statistic {stat} >= {crit} (mean {mean})");
    }

    // independence: contingency of coarse bins {0, 1, 2, >=3}
    let coarse = 3;
    let mut table = vec![vec![0u64; coarse + 1]; coarse + 1];
    for (&x, &y) in inc_a.iter().zip(&inc_b) {
        table[(x as usize).min(coarse)][(y as usize).min(coarse)] += 1;
    }
    let row_sums: Vec<f64> = table.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let col_sums: Vec<f64> = (0..=coarse)
        .map(|j| table.iter().map(|r| r[j]).sum::<u64>() as f64)
        .collect();
    let mut stat = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            let e = row_sums[i] * col_sums[j] / n as f64;
            if e > 0.0 {
                let d = o as f64 - e;
                stat += d * d / e;
            }
        }
    }
    // df = (4-1)(4-1) = 9
    let crit = chi2_crit_001(9);
    assert!(stat < crit, "independence statistic {stat} >= {crit}");
}

#[test]
fn lag_preserves_jump_counts_on_shifted_window() {
    let spec = PoissonSpec::new(2.0, 0.75).unwrap();
    for i in 0..200 {
        let x = simulate_thppp(&spec, 0.0, 5.0, stream_seed(606, i)).unwrap();
        let y = lag_path(&x, spec.epsilon).unwrap();
        assert_eq!(y.jump_count(), x.jump_count());
        // y(t) = x(t + ε) on the whole shifted window
        for k in 0..50 {
            let t = y.t_start() + (y.t_end() - y.t_start()) * (k as f64 + 0.01) / 51.0;
            assert_eq!(y.eval(t).unwrap(), x.eval(t + spec.epsilon).unwrap());
        }
    }
}

proptest! {
    #[test]
    fn simulated_paths_satisfy_structural_invariants(
        seed in 0u64..1_000_000,
        lambda in 0.2f64..5.0,
    ) {
        let spec = PoissonSpec::new(lambda, 1.0).unwrap();
        let p = simulate_thppp(&spec, 0.0, 3.0, seed).unwrap();
        let jumps = p.jump_times();
        for w in jumps.windows(2) {
            prop_assert!(w[0] < w[1]);
        }
        for (i, w) in p.states().windows(2).enumerate() {
            prop_assert!(w[1] != w[0], "state unchanged at jump {i}");
        }
        // right-continuity at every jump, agreement elsewhere
        for (i, &t) in jumps.iter().enumerate() {
            prop_assert_eq!(p.eval(t).unwrap(), p.states()[i + 1]);
            prop_assert_eq!(p.eval_left(t).unwrap(), p.states()[i]);
        }
        for k in 0..60 {
            let t = 3.0 * (k as f64 + 0.5) / 61.0;
            if !jumps.contains(&t) {
                prop_assert_eq!(p.eval(t).unwrap(), p.eval_left(t).unwrap());
            }
        }
    }
}
