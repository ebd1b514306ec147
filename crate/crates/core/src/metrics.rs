//! Classification and summary metrics plus the Wilcoxon signed-rank test.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
}

/// `a / b`, with `0 / 0` taken as 0.
fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    ratio(2.0 * p * r, p + r)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: [u64; 3],
    pub fp: [u64; 3],
    pub fn_: [u64; 3],
    pub total: u64,
    pub correct: u64,
}

impl ConfusionCounts {
    pub fn from_pairs(preds: &[Label], golds: &[Label]) -> Result<Self, MetricsError> {
        check_lengths(preds.len(), golds.len())?;
        let mut c = ConfusionCounts::default();
        for (&p, &g) in preds.iter().zip(golds) {
            c.total += 1;
            if p == g {
                c.correct += 1;
                c.tp[p.index()] += 1;
            } else {
                c.fp[p.index()] += 1;
                c.fn_[g.index()] += 1;
            }
        }
        Ok(c)
    }

    pub fn precision(&self, class: Label) -> f64 {
        let i = class.index();
        ratio(self.tp[i] as f64, (self.tp[i] + self.fp[i]) as f64)
    }

    pub fn recall(&self, class: Label) -> f64 {
        let i = class.index();
        ratio(self.tp[i] as f64, (self.tp[i] + self.fn_[i]) as f64)
    }

    pub fn f1(&self, class: Label) -> f64 {
        harmonic(self.precision(class), self.recall(class))
    }

    pub fn per_class_f1(&self) -> [f64; 3] {
        Label::ALL.map(|c| self.f1(c))
    }

    pub fn macro_f1(&self) -> f64 {
        self.per_class_f1().iter().sum::<f64>() / 3.0
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.correct as f64, self.total as f64)
    }
}

fn check_lengths(a: usize, b: usize) -> Result<(), MetricsError> {
    if a != b {
        Err(MetricsError::LengthMismatch(a, b))
    } else if a == 0 {
        Err(MetricsError::Empty)
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Averaging {
    Macro,
    PerClass,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum F1 {
    Macro(f64),
    /// Indexed by [`Label::index`].
    PerClass([f64; 3]),
}

pub fn f1_score(preds: &[Label], golds: &[Label], averaging: Averaging) -> Result<F1, MetricsError> {
    let c = ConfusionCounts::from_pairs(preds, golds)?;
    Ok(match averaging {
        Averaging::Macro => F1::Macro(c.macro_f1()),
        Averaging::PerClass => F1::PerClass(c.per_class_f1()),
    })
}

pub fn f1_from_pr(precision: f64, recall: f64) -> f64 {
    harmonic(precision, recall)
}

pub fn accuracy(preds: &[Label], golds: &[Label]) -> Result<f64, MetricsError> {
    Ok(ConfusionCounts::from_pairs(preds, golds)?.accuracy())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Rouge {
    pub recall: f64,
    pub precision: f64,
    pub f: f64,
}

fn counts<T: Hash + Eq>(items: impl IntoIterator<Item = T>) -> HashMap<T, usize> {
    let mut m = HashMap::new();
    for it in items {
        *m.entry(it).or_insert(0) += 1;
    }
    m
}

/// ROUGE-1 with clipped unigram counts.
pub fn rouge1<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Rouge {
    if reference.is_empty() {
        return Rouge::default();
    }
    let cand = counts(candidate.iter().map(AsRef::as_ref));
    let refs = counts(reference.iter().map(AsRef::as_ref));
    let matched: usize = cand.iter().map(|(t, &c)| c.min(refs.get(t).copied().unwrap_or(0))).sum();
    let recall = matched as f64 / reference.len() as f64;
    let precision = ratio(matched as f64, candidate.len() as f64);
    Rouge { recall, precision, f: harmonic(precision, recall) }
}

/// Single-reference sentence BLEU with uniform weights.
///
/// Orders above the candidate length are dropped. A zero match count for
/// `n >= 2` is smoothed to `1 / (total + 1)`.
pub fn bleu<S: AsRef<str>>(candidate: &[S], reference: &[S], max_n: usize) -> f64 {
    let c = candidate.len();
    let orders = max_n.min(c);
    if orders == 0 {
        return 0.0;
    }
    let cand: Vec<&str> = candidate.iter().map(AsRef::as_ref).collect();
    let refs: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let cand_grams = counts(cand.windows(n));
        let ref_grams = if refs.len() >= n { counts(refs.windows(n)) } else { HashMap::new() };
        let matched: usize =
            cand_grams.iter().map(|(g, &k)| k.min(ref_grams.get(g).copied().unwrap_or(0))).sum();
        let total = c - n + 1;
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if n >= 2 {
            1.0 / (total as f64 + 1.0)
        } else {
            return 0.0;
        };
        log_sum += p.ln();
    }
    let bp = if c < refs.len() { (1.0 - refs.len() as f64 / c as f64).exp() } else { 1.0 };
    bp * (log_sum / orders as f64).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Exact,
    NormalApproximation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub method: TestMethod,
}

/// Largest sample size for which the null distribution is counted exactly.
pub const EXACT_WILCOXON_MAX_N: usize = 20;

/// Two-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped and tied magnitudes share their average
/// rank. For `n <= 20` the p-value is exact,
/// `min(1, 2 · #{sign assignments with W+ <= W} / 2^n)`, counted over the
/// (doubled, hence integral) ranks. Larger samples use the normal
/// approximation with tie and continuity corrections.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<SignificanceResult, MetricsError> {
    check_lengths(a.len(), b.len())?;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(SignificanceResult { statistic: 0.0, p_value: 1.0, n_effective: 0, method: TestMethod::Exact });
    }

    let (ranks2, tie_sizes) = doubled_ranks(&diffs);
    let w_plus2: u64 = diffs.iter().zip(&ranks2).filter(|(d, _)| **d > 0.0).map(|(_, &r)| r).sum();
    let total2 = (n * (n + 1)) as u64;
    let w2 = w_plus2.min(total2 - w_plus2);
    let statistic = w2 as f64 / 2.0;

    if n <= EXACT_WILCOXON_MAX_N {
        let dist = null_counts(&ranks2);
        let at_most: u64 = dist[..=w2 as usize].iter().sum();
        let p = (2.0 * at_most as f64 / (1u64 << n) as f64).min(1.0);
        return Ok(SignificanceResult { statistic, p_value: p, n_effective: n, method: TestMethod::Exact });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = tie_sizes.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((statistic - mean).abs() - 0.5).max(0.0) / var.sqrt();
        libm::erfc(z / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
    };
    Ok(SignificanceResult { statistic, p_value: p, n_effective: n, method: TestMethod::NormalApproximation })
}

/// Twice the average rank of each `|d|`, plus the sizes of tie groups.
fn doubled_ranks(diffs: &[f64]) -> (Vec<u64>, Vec<u64>) {
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    order.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
    let mut ranks2 = vec![0u64; diffs.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        // positions i..=j hold 1-based ranks i+1..=j+1; their mean doubled is i+j+2
        for &k in &order[i..=j] {
            ranks2[k] = (i + j + 2) as u64;
        }
        ties.push((j - i + 1) as u64);
        i = j + 1;
    }
    (ranks2, ties)
}

/// `counts[s]` = number of sign assignments whose doubled positive-rank sum is `s`.
fn null_counts(ranks2: &[u64]) -> Vec<u64> {
    let total: u64 = ranks2.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in ranks2 {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::*;

    #[test]
    fn f1_perfect_and_absent_class() {
        let g = [Negative, Positive, Positive];
        match f1_score(&g, &g, Averaging::PerClass).unwrap() {
            F1::PerClass(v) => assert_eq!(v, [1.0, 0.0, 1.0]),
            _ => unreachable!(),
        }
        let all = [Negative, Neutral, Positive];
        assert_eq!(f1_score(&all, &all, Averaging::Macro).unwrap(), F1::Macro(1.0));
    }

    #[test]
    fn f1_arithmetic() {
        assert!((f1_from_pr(0.8, 0.6) - 0.6857142857142857).abs() < 1e-15);
        assert_eq!(f1_from_pr(0.0, 0.0), 0.0);
        // positive: tp 4, fp 1, fn 2 → P 0.8, R 4/6
        let preds = [Positive, Positive, Positive, Positive, Positive, Negative, Negative];
        let golds = [Positive, Positive, Positive, Positive, Negative, Positive, Positive];
        let c = ConfusionCounts::from_pairs(&preds, &golds).unwrap();
        assert!((c.precision(Positive) - 0.8).abs() < 1e-15);
        assert!((c.f1(Positive) - f1_from_pr(0.8, 4.0 / 6.0)).abs() < 1e-15);
    }

    #[test]
    fn accuracy_counts() {
        let g = [Positive; 10];
        let mut p = [Positive; 10];
        assert_eq!(accuracy(&p, &g).unwrap(), 1.0);
        p[3] = Negative;
        assert_eq!(accuracy(&p, &g).unwrap(), 0.9);
        assert_eq!(accuracy(&[Negative; 10], &g).unwrap(), 0.0);
        assert_eq!(accuracy(&[], &[]).unwrap_err(), MetricsError::Empty);
        assert_eq!(accuracy(&[Negative], &[]).unwrap_err(), MetricsError::LengthMismatch(1, 0));
    }

    #[test]
    fn rouge_examples() {
        let r = rouge1(&["a", "b"], &["a", "b"]);
        assert_eq!((r.recall, r.precision, r.f), (1.0, 1.0, 1.0));
        assert_eq!(rouge1(&["a"], &["b"]), Rouge::default());
        let r = rouge1(&["the", "cat", "sat"], &["the", "cat", "slept"]);
        assert_eq!((r.recall, r.precision), (2.0 / 3.0, 2.0 / 3.0));
        assert_eq!(rouge1::<&str>(&["x"], &[]), Rouge::default());
        let r = rouge1::<&str>(&[], &["x"]);
        assert_eq!((r.recall, r.precision, r.f), (0.0, 0.0, 0.0));
        // clipping: candidate repeats "the" three times, reference has it twice
        let r = rouge1(&["the", "the", "the"], &["the", "the", "cat"]);
        assert_eq!(r.recall, 2.0 / 3.0);
    }

    #[test]
    fn bleu_examples() {
        let s: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        assert!((bleu(&s, &s, 4) - 1.0).abs() < 1e-15);
        assert_eq!(bleu::<&str>(&[], &["a"], 4), 0.0);
        assert_eq!(bleu(&["z"], &["a"], 4), 0.0);
        // half-length prefix: all precisions 1, brevity penalty exp(1 - 2)
        let half = &s[..5];
        assert!((bleu(half, &s, 4) - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn bleu_smoothing_against_counter() {
        let cand = ["a", "b", "c", "d", "e"];
        let refs = ["a", "b", "x", "d", "e", "f"];
        // p1 = 4/5, p2 = 2/4 ("a b", "d e"), p3 = 0 → 1/4, p4 = 0 → 1/3
        let expected = (1.0 - 6.0 / 5.0f64).exp() * ((0.8f64 * 0.5 * 0.25 * (1.0 / 3.0)).ln() / 4.0).exp();
        assert!((bleu(&cand, &refs, 4) - expected).abs() < 1e-15);
    }

    #[test]
    fn wilcoxon_identical_samples() {
        let a = [1.0, 2.0, 3.0];
        let r = wilcoxon_signed_rank(&a, &a).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.n_effective, 0);
        assert_eq!(r.method, TestMethod::Exact);
    }

    #[test]
    fn wilcoxon_all_positive_five() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 0.0625);
        assert_eq!(r.method, TestMethod::Exact);
    }

    #[test]
    fn wilcoxon_ties_use_average_ranks() {
        // |d| = 1, 1, 2 → ranks 1.5, 1.5, 3; W+ = 1.5 + 3 = 4.5, W- = 1.5
        let r = wilcoxon_signed_rank(&[1.0, -1.0, 2.0], &[0.0; 3]).unwrap();
        assert_eq!(r.statistic, 1.5);
        // doubled ranks 3, 3, 6: W+ ≤ 3 for sums {0, 3, 3} → 3/8 → p 0.75
        assert_eq!(r.p_value, 0.75);
    }

    #[test]
    fn wilcoxon_normal_approximation_large_n() {
        let a: Vec<f64> = (1..=30).map(f64::from).collect();
        let r = wilcoxon_signed_rank(&a, &vec![0.0; 30]).unwrap();
        assert_eq!(r.method, TestMethod::NormalApproximation);
        assert!(r.p_value < 1e-5);
        let mixed: Vec<f64> = (1..=30).map(|i| if i % 2 == 0 { i as f64 } else { -(i as f64) }).collect();
        let r = wilcoxon_signed_rank(&mixed, &vec![0.0; 30]).unwrap();
        assert!(r.p_value > 0.5);
    }

    #[test]
    fn wilcoxon_length_mismatch() {
        assert_eq!(wilcoxon_signed_rank(&[1.0], &[]).unwrap_err(), MetricsError::LengthMismatch(1, 0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rouge_swap_symmetry(a in prop::collection::vec("[a-e]", 1..12), b in prop::collection::vec("[a-e]", 1..12)) {
                let ab = rouge1(&a, &b);
                let ba = rouge1(&b, &a);
                prop_assert_eq!(ab.recall, ba.precision);
                prop_assert_eq!(ab.precision, ba.recall);
            }

            #[test]
            fn bleu_bounded(a in prop::collection::vec("[a-d]", 0..12), b in prop::collection::vec("[a-d]", 1..12)) {
                let v = bleu(&a, &b, 4);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }

            #[test]
            fn bleu_one_only_for_exact_match(a in prop::collection::vec("[a-z]{3}", 4..12), b in prop::collection::vec("[a-z]{3}", 4..12)) {
                let v = bleu(&a, &b, 4);
                if a == b {
                    prop_assert!((v - 1.0).abs() < 1e-12);
                } else {
                    prop_assert!(v < 1.0);
                }
            }

            #[test]
            fn macro_is_mean_of_per_class(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..40)) {
                let p: Vec<Label> = pairs.iter().map(|x| Label::from_index(x.0).unwrap()).collect();
                let g: Vec<Label> = pairs.iter().map(|x| Label::from_index(x.1).unwrap()).collect();
                let F1::PerClass(pc) = f1_score(&p, &g, Averaging::PerClass).unwrap() else { unreachable!() };
                let F1::Macro(m) = f1_score(&p, &g, Averaging::Macro).unwrap() else { unreachable!() };
                prop_assert_eq!(m, pc.iter().sum::<f64>() / 3.0);
            }

            #[test]
            fn exact_p_in_unit_interval(d in prop::collection::vec(-5i32..=5, 1..15)) {
                let a: Vec<f64> = d.iter().map(|&x| x as f64).collect();
                let r = wilcoxon_signed_rank(&a, &vec![0.0; a.len()]).unwrap();
                prop_assert!((0.0..=1.0).contains(&r.p_value));
                prop_assert!(r.statistic >= 0.0);
            }
        }
    }
}
