//! Sequence-level bootstrap confidence intervals for the blind RB fit.
//!
//! Each resample draws, independently for every length, `K` sequences with
//! replacement from the `K` recorded blind pairs, re-aggregates `D` and `S`,
//! and refits. Intervals are the 16th/84th percentiles of the refitted values.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blind_rb::{shot_variance, RbDataset, SignalPoint, Variant};
use crate::fitting::{fit_signals, BlindFitOptions, BlindRbFit, FitError};
use crate::rng::{stream, Purpose};

pub const DEFAULT_RESAMPLES: usize = 1000;
/// Resample failures tolerated before the whole bootstrap is rejected.
pub const MAX_FAILURE_FRACTION: f64 = 0.10;
pub const LOWER_QUANTILE: f64 = 0.16;
pub const UPPER_QUANTILE: f64 = 0.84;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub n_resamples: usize,
    pub failures: usize,
    pub error_per_clifford: Interval,
    pub leakage_per_clifford: Interval,
    pub leakage_raw: Interval,
    pub lambda_d: Interval,
    pub b_d: Interval,
    pub lambda_s: Interval,
    pub a_s: Interval,
    pub b_s: Interval,
}

/// One blind pair reduced to the numbers needed for re-aggregation.
#[derive(Clone, Copy, Debug)]
struct PairOutcome {
    p0: f64,
    p1: f64,
    var0: f64,
    var1: f64,
}

fn group_pairs(dataset: &RbDataset) -> Vec<(usize, Vec<PairOutcome>)> {
    let mut by_length: BTreeMap<usize, BTreeMap<u64, PairOutcome>> = BTreeMap::new();
    for r in &dataset.records {
        let entry = by_length
            .entry(r.m)
            .or_default()
            .entry(r.sequence_id)
            .or_insert(PairOutcome {
                p0: 0.0,
                p1: 0.0,
                var0: 0.0,
                var1: 0.0,
            });
        let var = shot_variance(r.p_singlet, r.shots);
        match r.variant {
            Variant::Expect0 => {
                entry.p0 = r.p_singlet;
                entry.var0 = var;
            }
            Variant::Expect1 => {
                entry.p1 = r.p_singlet;
                entry.var1 = var;
            }
        }
    }
    by_length
        .into_iter()
        .map(|(m, pairs)| (m, pairs.into_values().collect()))
        .collect()
}

fn aggregate(m: usize, pairs: &[PairOutcome], picks: &[usize]) -> SignalPoint {
    let k = picks.len() as f64;
    let (mut p0, mut p1, mut var) = (0.0, 0.0, 0.0);
    for &i in picks {
        p0 += pairs[i].p0;
        p1 += pairs[i].p1;
        var += pairs[i].var0 + pairs[i].var1;
    }
    p0 /= k;
    p1 /= k;
    SignalPoint {
        m,
        p0,
        p1,
        d: p0 - p1,
        s: p0 + p1,
        n_sequences: picks.len(),
        shot_variance: var / (k * k),
    }
}

fn resample(groups: &[(usize, Vec<PairOutcome>)], seed: u64, index: u64) -> Vec<SignalPoint> {
    let mut rng = stream(seed, Purpose::Bootstrap, index, 0);
    groups
        .iter()
        .map(|(m, pairs)| {
            let picks: Vec<usize> = (0..pairs.len()).map(|_| rng.random_range(0..pairs.len())).collect();
            aggregate(*m, pairs, &picks)
        })
        .collect()
}

/// Linearly interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn interval(fits: &[BlindRbFit], f: impl Fn(&BlindRbFit) -> f64) -> Interval {
    let mut v: Vec<f64> = fits.iter().map(f).collect();
    v.sort_by(f64::total_cmp);
    Interval {
        lo: quantile(&v, LOWER_QUANTILE),
        hi: quantile(&v, UPPER_QUANTILE),
    }
}

/// Percentile bootstrap over sequences. Deterministic in `seed` regardless of
/// the rayon pool size.
pub fn bootstrap_ci(
    dataset: &RbDataset,
    n_resamples: usize,
    seed: u64,
    options: &BlindFitOptions,
) -> Result<BootstrapCi, FitError> {
    dataset.validate()?;
    if n_resamples == 0 {
        return Err(FitError::BootstrapDiverged { failed: 0, total: 0 });
    }
    let groups = group_pairs(dataset);
    let outcomes: Vec<Result<BlindRbFit, FitError>> = (0..n_resamples as u64)
        .into_par_iter()
        .map(|i| fit_signals(&resample(&groups, seed, i), options))
        .collect();
    let fits: Vec<BlindRbFit> = outcomes.into_iter().filter_map(Result::ok).collect();
    let failures = n_resamples - fits.len();
    if fits.is_empty() || failures as f64 > MAX_FAILURE_FRACTION * n_resamples as f64 {
        return Err(FitError::BootstrapDiverged {
            failed: failures,
            total: n_resamples,
        });
    }
    Ok(BootstrapCi {
        n_resamples,
        failures,
        error_per_clifford: interval(&fits, |f| f.error_per_clifford.value),
        leakage_per_clifford: interval(&fits, |f| f.leakage_per_clifford.value),
        leakage_raw: interval(&fits, |f| f.leakage_raw.value),
        lambda_d: interval(&fits, |f| f.d_fit.params.lambda),
        b_d: interval(&fits, |f| f.d_fit.params.b),
        lambda_s: interval(&fits, |f| f.s_fit.params.lambda),
        a_s: interval(&fits, |f| f.s_fit.params.a),
        b_s: interval(&fits, |f| f.s_fit.params.b),
    })
}
