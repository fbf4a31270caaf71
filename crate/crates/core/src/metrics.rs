//! Test accuracy, sparsity, oracle curves, relative oracle performance (ROP) and the Wilcoxon
//! signed-rank test.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data_io::Example;
use crate::error::{Result, WatError};
use crate::sparse::WeightVector;

/// Fraction of `test` with `sign(w . x) == y`. A zero score is wrong for either label.
pub fn accuracy(w: &WeightVector, test: &[Example]) -> Result<f64> {
    if test.is_empty() {
        return Err(WatError::EmptyTestSet);
    }
    let correct = test
        .iter()
        .filter(|e| e.y.sign() * w.dot(&e.x) > 0.0)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Fraction of the `dim` coordinates of `w` that are exactly zero.
pub fn sparsity(w: &WeightVector, dim: usize) -> Result<f64> {
    if dim < w.len() || dim == 0 {
        return Err(WatError::DimensionTooSmall {
            dim,
            extent: w.len(),
        });
    }
    Ok((dim - w.nnz()) as f64 / dim as f64)
}

/// `(timestep, accuracy)` pairs in increasing timestep order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    pub points: Vec<(u64, f64)>,
}

impl AccuracyCurve {
    pub fn new(points: Vec<(u64, f64)>) -> Self {
        Self { points }
    }

    pub fn timesteps(&self) -> impl Iterator<Item = u64> + '_ {
        self.points.iter().map(|p| p.0)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.1)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl FromIterator<(u64, f64)> for AccuracyCurve {
    fn from_iter<T: IntoIterator<Item = (u64, f64)>>(iter: T) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// Running maximum of the base accuracies.
pub fn oracle_curve(base: &AccuracyCurve) -> AccuracyCurve {
    let mut best = f64::NEG_INFINITY;
    base.points
        .iter()
        .map(|&(t, a)| {
            best = best.max(a);
            (t, best)
        })
        .collect()
}

/// Mean of `oracle - model` over shared checkpoints. Negative when the model beats the oracle.
pub fn rop(oracle: &AccuracyCurve, model: &AccuracyCurve) -> Result<f64> {
    if oracle.len() != model.len()
        || oracle.is_empty()
        || oracle.timesteps().zip(model.timesteps()).any(|(a, b)| a != b)
    {
        return Err(WatError::MisalignedCurves);
    }
    let gap: f64 = oracle.values().zip(model.values()).map(|(o, m)| o - m).sum();
    Ok(gap / oracle.len() as f64)
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Largest sample size handled by exact enumeration.
pub const WILCOXON_EXACT_MAX_N: usize = 15;
/// Smallest accepted number of nonzero differences.
pub const WILCOXON_MIN_N: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)` over midranks of `|a - b|`.
    pub statistic: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    /// Number of nonzero differences used.
    pub n: usize,
    pub exact: bool,
}

/// Midranks of `values` (1-based), returned doubled so ties stay integral.
fn doubled_midranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share rank ((i+1) + (j+1)) / 2
        let doubled = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Sizes of tie groups among `values`.
fn tie_groups(values: &[f64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        groups.push(j - i + 1);
        i = j + 1;
    }
    groups
}

/// Exact two-sided signed-rank test over the nonzero differences `diffs`.
///
/// Counts the sign assignments whose `W+` lies at least as far from its center as observed.
pub fn wilcoxon_exact(diffs: &[f64]) -> Result<WilcoxonResult> {
    let n = diffs.len();
    if n == 0 || n > 62 {
        return Err(WatError::InvalidParameter(format!(
            "exact signed-rank test needs 1..=62 differences, got {n}"
        )));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = doubled_midranks(&abs);
    let total: u64 = ranks.iter().sum();
    let w_plus: u64 = ranks
        .iter()
        .zip(diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| *r)
        .sum();

    // counts[s] = number of sign patterns whose doubled W+ equals s
    let mut counts = vec![0u128; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in &ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let dev = |s: u64| (2 * s).abs_diff(total);
    let observed = dev(w_plus);
    let extreme: u128 = counts
        .iter()
        .enumerate()
        .filter(|(s, _)| dev(*s as u64) >= observed)
        .map(|(_, c)| *c)
        .sum();
    let p_value = (extreme as f64 / 2f64.powi(n as i32)).min(1.0);
    let w_minus = total - w_plus;
    Ok(WilcoxonResult {
        statistic: w_plus.min(w_minus) as f64 / 2.0,
        p_value,
        n,
        exact: true,
    })
}

/// Normal approximation with tie correction, no continuity correction.
pub fn wilcoxon_normal(diffs: &[f64]) -> Result<WilcoxonResult> {
    let n = diffs.len();
    if n == 0 {
        return Err(WatError::TooFewDifferences { min: 1, got: 0 });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = doubled_midranks(&abs);
    let total: u64 = ranks.iter().sum();
    let w_plus = ranks
        .iter()
        .zip(diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| *r)
        .sum::<u64>() as f64
        / 2.0;
    let nf = n as f64;
    let mu = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = tie_groups(&abs)
        .into_iter()
        .map(|t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum();
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = (w_plus - mu) / var.sqrt();
    let p_value = erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0);
    let w_minus = total as f64 / 2.0 - w_plus;
    Ok(WilcoxonResult {
        statistic: w_plus.min(w_minus),
        p_value,
        n,
        exact: false,
    })
}

/// Paired two-sided signed-rank test on `a_i - b_i`.
///
/// Zero differences are dropped; at least [`WILCOXON_MIN_N`] must remain. Exact for up to
/// [`WILCOXON_EXACT_MAX_N`] differences, normal approximation above.
pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)]) -> Result<WilcoxonResult> {
    let diffs: Vec<f64> = pairs
        .iter()
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(WatError::InvalidParameter("non-finite difference".into()));
    }
    if diffs.len() < WILCOXON_MIN_N {
        return Err(WatError::TooFewDifferences {
            min: WILCOXON_MIN_N,
            got: diffs.len(),
        });
    }
    if diffs.len() <= WILCOXON_EXACT_MAX_N {
        wilcoxon_exact(&diffs)
    } else {
        wilcoxon_normal(&diffs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{synth_noisy_stream, SynthConfig};
    use crate::sparse::{Label, SparseVector};
    use proptest::prelude::*;

    fn ex(pairs: &[(usize, f64)], y: Label) -> Example {
        Example {
            x: SparseVector::from_pairs(pairs.iter().copied()).unwrap(),
            y,
        }
    }

    #[test]
    fn accuracy_examples() {
        let data = synth_noisy_stream(&SynthConfig::new(30, 400, 0.0, 4)).unwrap();
        let oracle = WeightVector::from_vec(data.hidden.clone());
        assert_eq!(accuracy(&oracle, &data.dataset.examples).unwrap(), 1.0);
        assert_eq!(accuracy(&WeightVector::new(), &data.dataset.examples).unwrap(), 0.0);
        assert!(accuracy(&oracle, &[]).is_err());
    }

    #[test]
    fn negated_model_accuracies_sum_to_one() {
        let data = synth_noisy_stream(&SynthConfig::new(20, 300, 0.2, 8)).unwrap();
        let w: Vec<f64> = (0..20).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3 + 0.01).collect();
        let neg: Vec<f64> = w.iter().map(|v| -v).collect();
        let test = &data.dataset.examples;
        let w = WeightVector::from_vec(w);
        assert!(test.iter().all(|e| w.dot(&e.x) != 0.0));
        let a = accuracy(&w, test).unwrap();
        let b = accuracy(&WeightVector::from_vec(neg), test).unwrap();
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_margin_is_wrong_for_both_labels() {
        let w = WeightVector::from_vec(vec![1.0, -1.0]);
        let test = [ex(&[(0, 1.0), (1, 1.0)], Label::Pos), ex(&[(0, 1.0), (1, 1.0)], Label::Neg)];
        assert_eq!(accuracy(&w, &test).unwrap(), 0.0);
    }

    #[test]
    fn sparsity_examples() {
        assert_eq!(sparsity(&WeightVector::new(), 5).unwrap(), 1.0);
        assert_eq!(sparsity(&WeightVector::from_vec(vec![1.0, 2.0]), 2).unwrap(), 0.0);
        assert_eq!(sparsity(&WeightVector::from_vec(vec![1.0, 0.0, 2.0]), 4).unwrap(), 0.5);
        assert!(sparsity(&WeightVector::from_vec(vec![1.0, 0.0, 2.0]), 2).is_err());
    }

    #[test]
    fn oracle_and_rop_examples() {
        let c = AccuracyCurve::new(vec![(0, 0.5), (1, 0.9), (2, 0.6)]);
        assert_eq!(oracle_curve(&c).values().collect::<Vec<_>>(), vec![0.5, 0.9, 0.9]);
        let mono = AccuracyCurve::new(vec![(0, 0.1), (5, 0.2), (9, 0.7)]);
        assert_eq!(oracle_curve(&mono), mono);
        let flat = AccuracyCurve::new(vec![(0, 0.4), (5, 0.4)]);
        assert_eq!(oracle_curve(&flat), flat);
        assert_eq!(rop(&oracle_curve(&flat), &flat).unwrap(), 0.0);

        let o = AccuracyCurve::new(vec![(0, 0.9), (1, 0.9)]);
        let m = AccuracyCurve::new(vec![(0, 0.8), (1, 1.0)]);
        assert!(rop(&o, &m).unwrap().abs() < 1e-15);
        let above = AccuracyCurve::new(vec![(0, 0.95), (1, 0.99)]);
        assert!(rop(&o, &above).unwrap() < 0.0);

        let shifted = AccuracyCurve::new(vec![(0, 0.9), (2, 0.9)]);
        assert!(rop(&o, &shifted).is_err());
        assert!(rop(&o, &AccuracyCurve::new(vec![(0, 0.9)])).is_err());
    }

    /// Brute-force two-sided p over all 2^n sign assignments.
    fn brute_p(diffs: &[f64]) -> f64 {
        let n = diffs.len();
        let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
        let ranks: Vec<f64> = abs
            .iter()
            .map(|a| {
                let less = abs.iter().filter(|b| *b < a).count() as f64;
                let eq = abs.iter().filter(|b| *b == a).count() as f64;
                less + (eq + 1.0) / 2.0
            })
            .collect();
        let total: f64 = ranks.iter().sum();
        let obs: f64 = ranks.iter().zip(diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
        let dev_obs = (obs - total / 2.0).abs();
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if (w - total / 2.0).abs() >= dev_obs - 1e-9 {
                hits += 1;
            }
        }
        hits as f64 / (1u64 << n) as f64
    }

    #[test]
    fn six_sample_worked_example() {
        let pairs = [(1.83, 0.878), (0.50, 0.647), (1.62, 0.598), (2.48, 2.05), (1.68, 1.06), (1.88, 1.29)];
        let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
        let r = wilcoxon_signed_rank(&pairs).unwrap();
        assert!(r.exact);
        assert!((r.p_value - brute_p(&diffs)).abs() < 1e-10);
        // W- = 1 (only the smallest |d| is negative): 4 of 64 patterns are as extreme
        assert_eq!(r.statistic, 1.0);
        assert!((r.p_value - 4.0 / 64.0).abs() < 1e-12);
    }

    #[test]
    fn all_positive_equal_margins_n16() {
        let pairs: Vec<(f64, f64)> = (0..16).map(|_| (1.0, 0.5)).collect();
        let r = wilcoxon_signed_rank(&pairs).unwrap();
        assert!(!r.exact);
        assert_eq!(r.statistic, 0.0);
        assert!(r.p_value < 0.001);
    }

    #[test]
    fn alternating_symmetric_differences_are_central() {
        let pairs: Vec<(f64, f64)> = (0..10)
            .map(|i| if i % 2 == 0 { (0.1, 0.0) } else { (0.0, 0.1) })
            .collect();
        let r = wilcoxon_signed_rank(&pairs).unwrap();
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wilcoxon_errors() {
        assert!(wilcoxon_signed_rank(&[(1.0, 1.0); 8]).is_err());
        assert!(wilcoxon_signed_rank(&[(1.0, 0.0); 4]).is_err());
    }

    #[test]
    fn normal_branch_tracks_exact_for_moderate_n() {
        let diffs: Vec<f64> = (1..=15).map(|i| if i % 3 == 0 { -(i as f64) } else { i as f64 }).collect();
        let e = wilcoxon_exact(&diffs).unwrap();
        let a = wilcoxon_normal(&diffs).unwrap();
        // no continuity correction, so the gap at n = 15 is about 0.027
        assert!((e.p_value - a.p_value).abs() < 0.035);
        assert_eq!(e.statistic, a.statistic);
    }

    proptest! {
        #[test]
        fn exact_matches_enumeration(diffs in proptest::collection::vec(prop_oneof![(-4i32..=4).prop_map(|v| v as f64 * 0.5), -3.0f64..3.0], 1..=12)) {
            let diffs: Vec<f64> = diffs.into_iter().filter(|d| *d != 0.0).collect();
            prop_assume!(!diffs.is_empty());
            let r = wilcoxon_exact(&diffs).unwrap();
            prop_assert!((r.p_value - brute_p(&diffs)).abs() < 1e-10);
        }

        #[test]
        fn oracle_dominates_base(vals in proptest::collection::vec(0.0f64..=1.0, 1..40)) {
            let c: AccuracyCurve = vals.iter().enumerate().map(|(i, v)| (i as u64, *v)).collect();
            let o = oracle_curve(&c);
            let ov: Vec<f64> = o.values().collect();
            prop_assert!(ov.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(ov.iter().zip(&vals).all(|(a, b)| a >= b));
            prop_assert!(rop(&o, &c).unwrap() >= 0.0);
        }

        #[test]
        fn sparsity_in_unit_interval(w in proptest::collection::vec(prop_oneof![Just(0.0), -1.0f64..1.0], 0..20), extra in 1usize..5) {
            let w = WeightVector::from_vec(w);
            let s = sparsity(&w, w.len() + extra).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }
}
