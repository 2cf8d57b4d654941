//! Ranking, set and classification metrics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One query's ranked predictions together with its gold set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub query_id: String,
    /// Descending by score, no duplicates.
    pub ranked: Vec<String>,
    pub gold: BTreeSet<String>,
}

impl RankedResult {
    pub fn new(query_id: impl Into<String>, ranked: Vec<String>, gold: impl IntoIterator<Item = String>) -> Self {
        Self {
            query_id: query_id.into(),
            ranked,
            gold: gold.into_iter().collect(),
        }
    }

    /// 1-based rank of the first gold item.
    pub fn first_hit(&self) -> Option<usize> {
        self.ranked.iter().position(|id| self.gold.contains(id)).map(|p| p + 1)
    }

    fn hits_at(&self, k: usize) -> usize {
        self.ranked.iter().take(k).filter(|id| self.gold.contains(*id)).count()
    }
}

fn check(results: &[RankedResult]) -> Result<()> {
    if results.is_empty() {
        return Err(Error::Metric("no results to score".into()));
    }
    if let Some(r) = results.iter().find(|r| r.gold.is_empty()) {
        return Err(Error::Metric(format!("query {} has an empty gold set", r.query_id)));
    }
    Ok(())
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Metric("k must be at least 1".into()));
    }
    Ok(())
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

pub fn mrr(results: &[RankedResult]) -> Result<f64> {
    check(results)?;
    Ok(mean(
        results.iter().map(|r| r.first_hit().map_or(0.0, |rank| 1.0 / rank as f64)),
    ))
}

pub fn recall_at_k(results: &[RankedResult], k: usize) -> Result<f64> {
    check(results)?;
    check_k(k)?;
    Ok(mean(
        results.iter().map(|r| r.hits_at(k) as f64 / r.gold.len() as f64),
    ))
}

fn precision_one(r: &RankedResult, k: usize) -> f64 {
    let denom = k.min(r.ranked.len());
    if denom == 0 {
        0.0
    } else {
        r.hits_at(k) as f64 / denom as f64
    }
}

/// Precision over the top `k`, dividing by `min(k, |returned|)`; an empty
/// list scores zero.
pub fn precision_at_k(results: &[RankedResult], k: usize) -> Result<f64> {
    check(results)?;
    check_k(k)?;
    Ok(mean(results.iter().map(|r| precision_one(r, k))))
}

/// Harmonic mean, zero when both inputs are zero.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Mean over queries of the per-query F1 at `k`.
pub fn f1_at_k(results: &[RankedResult], k: usize) -> Result<f64> {
    check(results)?;
    check_k(k)?;
    Ok(mean(results.iter().map(|r| {
        f1(precision_one(r, k), r.hits_at(k) as f64 / r.gold.len() as f64)
    })))
}

pub fn mean_average_precision(results: &[RankedResult]) -> Result<f64> {
    check(results)?;
    Ok(mean(results.iter().map(|r| {
        let mut hits = 0;
        let mut total = 0.0;
        for (i, id) in r.ranked.iter().enumerate() {
            if r.gold.contains(id) {
                hits += 1;
                total += hits as f64 / (i + 1) as f64;
            }
        }
        total / r.gold.len() as f64
    })))
}

/// Step-wise average precision of binary `labels` ranked by `scores`.
/// Tied scores form a single threshold.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Metric("scores and labels differ in length".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::Metric("auprc needs both positive and negative labels".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("scores contain NaN".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            tp += labels[order[i]] as usize;
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        ap += (recall - prev_recall) * tp as f64 / seen as f64;
        prev_recall = recall;
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn from_predictions(predicted: &[bool], actual: &[bool]) -> Self {
        let mut cm = Self::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => cm.tp += 1,
                (true, false) => cm.fp += 1,
                (false, true) => cm.fn_ += 1,
                (false, false) => cm.tn += 1,
            }
        }
        cm
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn confusion_metrics(cm: &ConfusionMatrix) -> Result<ClassificationMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Metric("confusion matrix is empty".into()));
    }
    let ratio = |num: u64, den: u64, name: &str| {
        if den == 0 {
            log::warn!("{name} is undefined (zero denominator); reporting 0");
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(cm.tp, cm.tp + cm.fp, "precision");
    let recall = ratio(cm.tp, cm.tp + cm.fn_, "recall");
    Ok(ClassificationMetrics {
        accuracy: (cm.tp + cm.tn) as f64 / total as f64,
        precision,
        recall,
        f1: f1(precision, recall),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rr(ranked: &[&str], gold: &[&str]) -> RankedResult {
        RankedResult::new(
            "q",
            ranked.iter().map(|s| s.to_string()).collect(),
            gold.iter().map(|s| s.to_string()),
        )
    }

    #[test]
    fn mrr_hand_values() {
        assert_eq!(mrr(&[rr(&["a", "b"], &["a"])]).unwrap(), 1.0);
        assert_eq!(mrr(&[rr(&["b", "a"], &["a"])]).unwrap(), 0.5);
        let three = [
            rr(&["a"], &["a"]),
            rr(&["x", "a"], &["a"]),
            rr(&["x", "y", "z", "a"], &["a"]),
        ];
        assert!((mrr(&three).unwrap() - 1.75 / 3.0).abs() < 1e-12);
        assert_eq!(mrr(&[rr(&["x"], &["a"])]).unwrap(), 0.0);
        assert!(mrr(&[]).is_err());
        assert!(mrr(&[rr(&["a"], &[])]).is_err());
    }

    #[test]
    fn recall_precision_f1() {
        let r = [rr(&["a", "x", "y", "z", "w"], &["a", "b"])];
        assert_eq!(recall_at_k(&r, 5).unwrap(), 0.5);
        assert!((f1(0.6, 0.9) - 0.72).abs() < 1e-12);
        let empty = [rr(&[], &["a"])];
        assert_eq!(precision_at_k(&empty, 5).unwrap(), 0.0);
        assert_eq!(recall_at_k(&empty, 5).unwrap(), 0.0);
        assert_eq!(f1_at_k(&empty, 5).unwrap(), 0.0);
        // Short lists divide by what was returned.
        assert_eq!(precision_at_k(&[rr(&["a"], &["a", "b"])], 5).unwrap(), 1.0);
        assert!(recall_at_k(&r, 0).is_err());
    }

    #[test]
    fn map_hand_values() {
        assert_eq!(mean_average_precision(&[rr(&["a"], &["a"])]).unwrap(), 1.0);
        let v = mean_average_precision(&[rr(&["a", "x", "b"], &["a", "b"])]).unwrap();
        assert!((v - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(mean_average_precision(&[rr(&["x"], &["a"])]).unwrap(), 0.0);
    }

    #[test]
    fn auprc_hand_values() {
        assert_eq!(auprc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert!((auprc(&[0.5; 4], &[true, false, false, false]).unwrap() - 0.25).abs() < 1e-12);
        let v = auprc(&[0.9, 0.7, 0.4], &[true, false, true]).unwrap();
        assert!((v - 5.0 / 6.0).abs() < 1e-12);
        assert!(auprc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn confusion_reproduces_reported_values() {
        let m = confusion_metrics(&ConfusionMatrix::new(433, 58, 67, 442)).unwrap();
        assert_eq!(m.accuracy, 0.875);
        assert!((m.precision - 0.882).abs() < 5e-4);
        assert!((m.recall - 0.866).abs() < 5e-4);
        assert!((m.f1 - 0.874).abs() < 5e-4);
        let perfect = confusion_metrics(&ConfusionMatrix::new(1, 0, 0, 1)).unwrap();
        assert_eq!((perfect.accuracy, perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0, 1.0));
        let none = confusion_metrics(&ConfusionMatrix::new(0, 0, 5, 5)).unwrap();
        assert_eq!((none.precision, none.recall), (0.0, 0.0));
        assert!(confusion_metrics(&ConfusionMatrix::default()).is_err());
    }

    proptest! {
        #[test]
        fn metric_ranges_and_recall_monotone(
            ranked in proptest::sample::subsequence(vec!["a", "b", "c", "d", "e", "f"], 0..6).prop_shuffle(),
            gold in proptest::sample::subsequence(vec!["a", "b", "c", "d", "e", "f"], 1..6),
        ) {
            let r = [rr(&ranked, &gold)];
            for v in [mrr(&r).unwrap(), mean_average_precision(&r).unwrap()] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let mut prev = 0.0;
            for k in 1..8 {
                let rec = recall_at_k(&r, k).unwrap();
                prop_assert!(rec >= prev);
                prop_assert!((0.0..=1.0).contains(&precision_at_k(&r, k).unwrap()));
                prev = rec;
            }
        }

        #[test]
        fn confusion_identities(tp in 0u64..500, fp in 0u64..500, fn_ in 0u64..500, tn in 1u64..500) {
            let cm = ConfusionMatrix::new(tp, fp, fn_, tn);
            let m = confusion_metrics(&cm).unwrap();
            prop_assert!((m.accuracy - (tp + tn) as f64 / cm.total() as f64).abs() < 1e-15);
            if m.precision + m.recall > 0.0 {
                prop_assert!((m.f1 - 2.0 * m.precision * m.recall / (m.precision + m.recall)).abs() < 1e-12);
            }
        }
    }
}
