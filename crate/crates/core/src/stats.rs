//! Wilcoxon signed-rank test and percentile bootstrap intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest effective sample size tested by exact enumeration.
pub const EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult<T> {
    /// W+, the rank sum of positive differences.
    pub statistic: T,
    /// Two-sided.
    pub p_value: T,
    pub n_effective: usize,
    pub method: TestMethod,
}

/// Average ranks of `values` (1-based), doubled so they stay integral.
fn doubled_ranks(values: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let doubled = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        tie_sizes.push(j - i + 1);
        i = j + 1;
    }
    (ranks, tie_sizes)
}

/// Two-sided Wilcoxon signed-rank test of `diffs` against a zero median.
///
/// Zero differences are dropped and tied magnitudes share average ranks. Up to
/// [`EXACT_MAX_N`] non-zero differences the null distribution of W+ is enumerated exactly
/// (under the observed tie structure); beyond that a normal approximation with tie and
/// continuity corrections is used.
pub fn wilcoxon_signed_rank<T: Scalar>(diffs: &[T]) -> Result<TestResult<T>> {
    if diffs.is_empty() {
        return Err(Error::invalid("wilcoxon: no differences"));
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("wilcoxon: non-finite difference"));
    }
    let nonzero: Vec<f64> = diffs.iter().map(|d| d.as_f64()).filter(|d| *d != 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::DegenerateSample("all differences are zero".into()));
    }
    let n = nonzero.len();
    let magnitudes: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = doubled_ranks(&magnitudes);
    let w2: u64 = ranks
        .iter()
        .zip(&nonzero)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let statistic = w2 as f64 / 2.0;

    let (p, method) = if n <= EXACT_MAX_N {
        (exact_p(&ranks, w2), TestMethod::Exact)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        let d = statistic - mean;
        let z = if var > 0.0 { (d - 0.5 * d.signum()) / var.sqrt() } else { 0.0 };
        let z = if d.abs() <= 0.5 { 0.0 } else { z };
        (erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0), TestMethod::NormalApprox)
    };
    Ok(TestResult {
        statistic: T::of(statistic),
        p_value: T::of(p),
        n_effective: n,
        method,
    })
}

/// `min(1, 2 min(P(W <= w), P(W >= w)))` by counting sign assignments over doubled ranks.
fn exact_p(ranks: &[u64], w2: u64) -> f64 {
    let total: u64 = ranks.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let all = (1u64 << ranks.len()) as f64;
    let w2 = w2 as usize;
    let lower: u64 = counts[..=w2].iter().sum();
    let upper: u64 = counts[w2..].iter().sum();
    (2.0 * lower.min(upper) as f64 / all).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval<T> {
    pub lower: T,
    pub upper: T,
    /// Sample mean the interval surrounds.
    pub estimate: T,
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            level: 0.95,
            resamples: 10_000,
            seed: 0,
        }
    }
}

/// Interval recorded in manifests next to bootstrap results.
pub const BOOTSTRAP_METHOD: &str = "percentile";

const BLOCK: usize = 256;

/// Percentile bootstrap interval for the mean of `values`.
///
/// Resamples are generated in fixed blocks, each from its own stream of a ChaCha8 generator
/// seeded with `seed`, so the result does not depend on the number of worker threads.
pub fn bootstrap_ci<T: Scalar>(values: &[T], level: f64, resamples: usize, seed: u64) -> Result<ConfidenceInterval<T>> {
    if values.is_empty() {
        return Err(Error::invalid("bootstrap: no values"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("bootstrap level {level} outside (0, 1)")));
    }
    if resamples == 0 {
        return Err(Error::invalid("bootstrap needs at least one resample"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("bootstrap: non-finite value"));
    }
    let data: Vec<f64> = values.iter().map(|v| v.as_f64()).collect();
    let n = data.len();
    let blocks = resamples.div_ceil(BLOCK);
    let mut means: Vec<f64> = (0..blocks)
        .into_par_iter()
        .flat_map_iter(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = BLOCK.min(resamples - b * BLOCK);
            let data = &data;
            (0..count)
                .map(move |_| (0..n).map(|_| data[rng.random_range(0..n)]).sum::<f64>() / n as f64)
                .collect::<Vec<_>>()
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let estimate = data.iter().sum::<f64>() / n as f64;
    Ok(ConfidenceInterval {
        lower: T::of(quantile(&means, alpha)),
        upper: T::of(quantile(&means, 1.0 - alpha)),
        estimate: T::of(estimate),
        level,
        resamples,
        seed,
    })
}

/// Linear interpolation between order statistics of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}
