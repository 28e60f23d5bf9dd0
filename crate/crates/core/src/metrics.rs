//! Grounding metrics and text-overlap metrics.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::tokenize;
use crate::{Error, Result};

/// Pooled per-entry persona classification counts and rates.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PgReport {
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[cfg_attr(feature = "serde", serde(rename = "fn"))]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl PgReport {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Result<Self> {
        let total = tp + fp + tn + fn_;
        if total == 0 {
            return Err(Error::EmptyEval);
        }
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Ok(Self {
            accuracy: ratio(tp + tn, total),
            f1: harmonic(precision, recall),
            precision,
            recall,
            tp,
            fp,
            tn,
            fn_,
        })
    }
}

/// Persona metrics pooled over every entry of every round.
pub fn pg_metrics<P: AsRef<[bool]>, L: AsRef<[bool]>>(pred_masks: &[P], label_masks: &[L]) -> Result<PgReport> {
    if pred_masks.len() != label_masks.len() {
        return Err(Error::Shape {
            what: "persona mask rounds",
            expected: label_masks.len(),
            found: pred_masks.len(),
        });
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (pred, gold) in pred_masks.iter().zip(label_masks) {
        let (pred, gold) = (pred.as_ref(), gold.as_ref());
        if pred.len() != gold.len() {
            return Err(Error::Shape {
                what: "persona mask",
                expected: gold.len(),
                found: pred.len(),
            });
        }
        for (&p, &g) in pred.iter().zip(gold) {
            match (p, g) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
    }
    PgReport::from_counts(tp, fp, tn, fn_)
}

/// Fraction of rounds whose picked knowledge matches the label.
pub fn kg_accuracy(pred: &[usize], labels: &[usize]) -> Result<f64> {
    if pred.len() != labels.len() {
        return Err(Error::Shape {
            what: "knowledge predictions",
            expected: labels.len(),
            found: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyEval);
    }
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(ratio(hits, pred.len()))
}

fn words(text: &str) -> Vec<String> {
    tokenize(text)
        .map(|t| t.into_iter().map(|t| t.surface).collect())
        .unwrap_or_default()
}

/// Longest common subsequence length.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure over corpus tokens.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let (c, r) = (words(candidate), words(reference));
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&c, &r);
    harmonic(ratio(lcs, c.len()), ratio(lcs, r.len()))
}

/// Multiset unigram-overlap F1 over corpus tokens.
pub fn unigram_f1(candidate: &str, reference: &str) -> f64 {
    let (c, r) = (words(candidate), words(reference));
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for w in &r {
        *counts.entry(w).or_insert(0) += 1;
    }
    let mut overlap = 0;
    for w in &c {
        if let Some(n) = counts.get_mut(w.as_str()) {
            if *n > 0 {
                *n -= 1;
                overlap += 1;
            }
        }
    }
    harmonic(ratio(overlap, c.len()), ratio(overlap, r.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pg_counts_hand_case() {
        let r = pg_metrics(&[[true, true, false, false]], &[[true, false, true, false]]).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_, r.tn), (1, 1, 1, 1));
        assert_eq!((r.precision, r.recall, r.f1, r.accuracy), (0.5, 0.5, 0.5, 0.5));
    }

    #[test]
    fn pg_perfect() {
        let m = [vec![true, false], vec![false, true]];
        let r = pg_metrics(&m, &m).unwrap();
        assert_eq!((r.precision, r.recall, r.f1, r.accuracy), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn pg_all_negative_predictor() {
        let labels = [vec![true, false, false], vec![false, false, false]];
        let preds = [vec![false; 3], vec![false; 3]];
        let r = pg_metrics(&preds, &labels).unwrap();
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.f1, 0.0);
        assert!((r.accuracy - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn pg_errors() {
        let none: [Vec<bool>; 0] = [];
        assert_eq!(pg_metrics(&none, &none), Err(Error::EmptyEval));
        assert!(pg_metrics(&[vec![true]], &[vec![true, false]]).is_err());
    }

    #[test]
    fn kg_accuracy_cases() {
        assert!((kg_accuracy(&[0, 1, 2], &[0, 1, 0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(kg_accuracy(&[4, 2], &[4, 2]).unwrap(), 1.0);
        assert_eq!(kg_accuracy(&[], &[]), Err(Error::EmptyEval));
    }

    #[test]
    fn rouge_l_cases() {
        assert_eq!(rouge_l("the cat sat", "the cat sat"), 1.0);
        assert!((rouge_l("a b c", "a c") - 0.8).abs() < 1e-12);
        assert_eq!(rouge_l("x y", "a b"), 0.0);
        assert_eq!(rouge_l("", "a b"), 0.0);
    }

    #[test]
    fn unigram_f1_cases() {
        assert_eq!(unigram_f1("Hello there !", "hello there !"), 1.0);
        assert!((unigram_f1("a b", "b c") - 0.5).abs() < 1e-12);
        assert_eq!(unigram_f1("", "b c"), 0.0);
        assert!((unigram_f1("a a a", "a") - 0.5).abs() < 1e-12);
    }

    #[test]
    fn lcs_brute_small() {
        assert_eq!(lcs_len(&[1, 2, 3, 2, 1], &[2, 1, 2, 3]), 3);
        assert_eq!(lcs_len::<u8>(&[], &[1]), 0);
    }
}
