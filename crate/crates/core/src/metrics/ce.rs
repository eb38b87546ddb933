use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const SUM_TOLERANCE: f64 = 1e-9;

/// Weights of the composite score. They sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]", bound = "T: Scalar")]
pub struct CeWeights<T> {
    a1: T,
    a2: T,
    a3: T,
}

impl<T: Scalar> CeWeights<T> {
    pub fn new(a1: T, a2: T, a3: T) -> Result<Self> {
        if ![a1, a2, a3].iter().all(|a| a.is_finite()) {
            return Err(Error::invalid("weights must be finite"));
        }
        let sum = (a1 + a2 + a3).as_f64();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::invalid(format!("weights sum to {sum}, not 1")));
        }
        Ok(CeWeights { a1, a2, a3 })
    }

    pub fn keyword(&self) -> T {
        self.a1
    }

    pub fn sentiment(&self) -> T {
        self.a2
    }

    pub fn similarity(&self) -> T {
        self.a3
    }

    pub fn as_array(&self) -> [T; 3] {
        [self.a1, self.a2, self.a3]
    }
}

impl<T: Scalar> Default for CeWeights<T> {
    fn default() -> Self {
        CeWeights {
            a1: T::of(0.3),
            a2: T::of(0.3),
            a3: T::of(0.4),
        }
    }
}

impl<T: Scalar> TryFrom<[f64; 3]> for CeWeights<T> {
    type Error = Error;

    fn try_from(w: [f64; 3]) -> Result<Self> {
        CeWeights::new(T::of(w[0]), T::of(w[1]), T::of(w[2]))
    }
}

impl<T: Scalar> From<CeWeights<T>> for [f64; 3] {
    fn from(w: CeWeights<T>) -> Self {
        w.as_array().map(Scalar::as_f64)
    }
}

/// The three components: keyword frequency, sentiment difference, mean similarity to V1/V2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CeInputs<T> {
    pub keyword_freq: T,
    pub delta_s: T,
    pub sem_sim: T,
}

impl<T: Scalar> CeInputs<T> {
    pub fn new(keyword_freq: T, delta_s: T, sem_sim: T) -> Self {
        CeInputs {
            keyword_freq,
            delta_s,
            sem_sim,
        }
    }
}

/// `a1 * kf + a2 * (1 - delta_s) + a3 * sim`, unclamped.
pub fn ce_score<T: Scalar>(inputs: &CeInputs<T>, weights: &CeWeights<T>) -> T {
    weights.a1 * inputs.keyword_freq
        + weights.a2 * (T::one() - inputs.delta_s)
        + weights.a3 * inputs.sem_sim
}

/// All weight triples on the 0.1 grid with components in `[0.1, 0.5]` summing to one,
/// in lexicographic order.
pub fn weight_grid<T: Scalar>() -> Vec<CeWeights<T>> {
    let mut out = Vec::new();
    for i in 1..=5u32 {
        for j in 1..=5u32 {
            let Some(k) = 10u32.checked_sub(i + j) else {
                continue;
            };
            if (1..=5).contains(&k) {
                let t = |n: u32| T::of(f64::from(n) / 10.0);
                out.push(CeWeights::new(t(i), t(j), t(k)).expect("grid point sums to one"));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correlation {
    #[default]
    Pearson,
    Spearman,
}

/// Correlation coefficient; `None` when either side has zero variance.
pub fn correlation<T: Scalar>(x: &[T], y: &[T], method: Correlation) -> Option<T> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    match method {
        Correlation::Pearson => pearson(x, y),
        Correlation::Spearman => pearson(&average_ranks(x), &average_ranks(y)),
    }
}

fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Option<T> {
    let n = T::of_usize(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (*a - mx, *b - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx <= T::zero() || syy <= T::zero() {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).max(-T::one()).min(T::one()))
}

fn average_ranks<T: Scalar>(x: &[T]) -> Vec<T> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![T::zero(); x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = T::of((i + j) as f64 / 2.0 + 1.0);
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Scalar + Serialize"))]
pub struct Calibration<T> {
    pub weights: CeWeights<T>,
    pub correlation: T,
    pub method: Correlation,
    /// Every grid point with its correlation (`None` when undefined).
    pub table: Vec<(CeWeights<T>, Option<T>)>,
}

/// Grid search for the weights whose CE scores correlate best with the annotations.
///
/// Ties (within 1e-12) go to the lexicographically smallest triple.
pub fn calibrate_weights<T: Scalar>(
    items: &[CeInputs<T>],
    annotations: &[T],
    method: Correlation,
) -> Result<Calibration<T>> {
    if items.len() != annotations.len() {
        return Err(Error::invalid(format!(
            "{} items but {} annotations",
            items.len(),
            annotations.len()
        )));
    }
    if items.len() < 3 {
        return Err(Error::invalid("calibration needs at least 3 annotated items"));
    }
    if annotations.iter().all(|a| *a == annotations[0]) {
        return Err(Error::UndefinedCorrelation("annotations are constant".into()));
    }
    let tie = T::of(1e-12);
    let mut best: Option<(CeWeights<T>, T)> = None;
    let mut table = Vec::new();
    for w in weight_grid::<T>() {
        let scores: Vec<T> = items.iter().map(|i| ce_score(i, &w)).collect();
        let r = correlation(&scores, annotations, method);
        table.push((w, r));
        if let Some(r) = r {
            if best.is_none_or(|(_, b)| r > b + tie) {
                best = Some((w, r));
            }
        }
    }
    let (weights, correlation) = best.ok_or_else(|| {
        Error::UndefinedCorrelation("CE scores are constant for every weight triple".into())
    })?;
    Ok(Calibration {
        weights,
        correlation,
        method,
        table,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Scalar + Serialize"))]
pub struct Perturbation<T> {
    pub weight_index: usize,
    pub delta: T,
    pub weights: CeWeights<T>,
    /// Largest `|CE' - CE| / |CE|` over the inputs.
    pub max_relative_change: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Scalar + Serialize"))]
pub struct SensitivityReport<T> {
    pub base: CeWeights<T>,
    pub perturbations: Vec<Perturbation<T>>,
    pub max_relative_change: T,
}

/// Moves each weight by ±0.1, clips it to `[0.1, 0.5]`, renormalizes the triple to sum to one,
/// and records the relative CE change of every input.
pub fn sensitivity_analysis<T: Scalar>(
    inputs: &[CeInputs<T>],
    weights: &CeWeights<T>,
) -> Result<SensitivityReport<T>> {
    if inputs.is_empty() {
        return Err(Error::invalid("sensitivity analysis needs inputs"));
    }
    let base: Vec<T> = inputs.iter().map(|i| ce_score(i, weights)).collect();
    if base.iter().any(|c| c.is_zero()) {
        return Err(Error::UndefinedMetric(
            "relative change undefined for a zero base CE".into(),
        ));
    }
    let (lo, hi) = (T::of(0.1), T::of(0.5));
    let mut perturbations = Vec::new();
    for index in 0..3 {
        for delta in [T::of(-0.1), T::of(0.1)] {
            let mut w = weights.as_array();
            w[index] = (w[index] + delta).max(lo).min(hi);
            let sum = w[0] + w[1] + w[2];
            let w = CeWeights::new(w[0] / sum, w[1] / sum, w[2] / sum)?;
            let max_relative_change = inputs
                .iter()
                .zip(&base)
                .map(|(i, b)| ((ce_score(i, &w) - *b) / *b).abs())
                .fold(T::zero(), T::max);
            perturbations.push(Perturbation {
                weight_index: index,
                delta,
                weights: w,
                max_relative_change,
            });
        }
    }
    let max_relative_change = perturbations
        .iter()
        .map(|p| p.max_relative_change)
        .fold(T::zero(), T::max);
    Ok(SensitivityReport {
        base: *weights,
        perturbations,
        max_relative_change,
    })
}
