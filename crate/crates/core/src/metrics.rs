//! Rank-based ROC-AUC, confusion counts, nearest-rank percentiles and
//! lesion-size labelling.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Scores with binary labels (`true` = anomalous).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledScores {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::shape("LabeledScores", scores.len(), labels.len()));
        }
        Ok(LabeledScores { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

/// 1-based midranks of `values`; tied values share the mean of their ranks.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let r = (i + 1 + j) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = r;
        }
        i = j;
    }
    ranks
}

/// Mann-Whitney ROC-AUC with midrank tie handling.
pub fn roc_auc(data: &LabeledScores) -> Result<f64> {
    let pos = data.positives();
    let neg = data.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass("roc_auc input".into()));
    }
    let ranks = midranks(&data.scores);
    let rank_sum: f64 = ranks.iter().zip(&data.labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Counts with the prediction "anomalous" iff `score >= threshold`.
pub fn confusion(data: &LabeledScores, threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&s, &l) in data.scores.iter().zip(&data.labels) {
        match (s >= threshold, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

/// `(TP + TN) / total`; 0 for an empty count.
pub fn accuracy(c: &ConfusionCounts) -> f64 {
    match c.total() {
        0 => 0.0,
        n => (c.tp + c.tn) as f64 / n as f64,
    }
}

/// `2 TP / (2 TP + FP + FN)`, defined as 0 when the denominator is 0.
pub fn f1(c: &ConfusionCounts) -> f64 {
    match 2 * c.tp + c.fp + c.fn_ {
        0 => 0.0,
        d => (2 * c.tp) as f64 / d as f64,
    }
}

/// Nearest-rank index (0-based) of percentile `p` in a sample of `n`.
pub fn nearest_rank(n: usize, p: f64) -> usize {
    let rank = (p / 100.0 * n as f64).ceil() as usize;
    rank.clamp(1, n) - 1
}

/// Nearest-rank percentile: the `ceil(p/100 * N)`-th smallest value.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("percentile"));
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::config("percentile", format!("{p} outside (0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[nearest_rank(sorted.len(), p)])
}

/// Treatment of slices whose lesion is nonzero but not above the size
/// threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmallLesionPolicy {
    /// Leave them out of the evaluation.
    #[default]
    Exclude,
    /// Count them as healthy.
    RelabelHealthy,
}

/// Evaluation label of one slice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceLabel {
    Healthy,
    Anomalous,
    Excluded,
}

impl SliceLabel {
    pub fn is_anomalous(self) -> bool {
        self == SliceLabel::Anomalous
    }
}

/// Anomalous iff `lesion_px > size_threshold`; smaller nonzero lesions are
/// handled by `policy`.
pub fn label_slices(lesion_px: &[u32], size_threshold: f64, policy: SmallLesionPolicy) -> Vec<SliceLabel> {
    lesion_px
        .iter()
        .map(|&px| {
            if px == 0 {
                SliceLabel::Healthy
            } else if px as f64 > size_threshold {
                SliceLabel::Anomalous
            } else {
                match policy {
                    SmallLesionPolicy::Exclude => SliceLabel::Excluded,
                    SmallLesionPolicy::RelabelHealthy => SliceLabel::Healthy,
                }
            }
        })
        .collect()
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ls(s: &[f64], l: &[u8]) -> LabeledScores {
        LabeledScores::new(s.to_vec(), l.iter().map(|&v| v == 1).collect()).unwrap()
    }

    #[test]
    fn auc_fixed_examples() {
        assert_eq!(roc_auc(&ls(&[0.1, 0.9], &[0, 1])).unwrap(), 1.0);
        assert_eq!(roc_auc(&ls(&[3.0; 6], &[0, 1, 0, 1, 1, 0])).unwrap(), 0.5);
        assert_eq!(roc_auc(&ls(&[1.0, 2.0, 3.0, 4.0], &[0, 1, 0, 1])).unwrap(), 0.75);
        assert!(matches!(roc_auc(&ls(&[1.0, 2.0], &[1, 1])), Err(Error::SingleClass(_))));
    }

    #[test]
    fn midranks_share_ties() {
        assert_eq!(midranks(&[5.0, 1.0, 5.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn confusion_arithmetic() {
        let c = ConfusionCounts { tp: 2, fp: 1, tn: 6, fn_: 1 };
        assert!((f1(&c) - 2.0 / 3.0).abs() < 1e-15);
        assert!((accuracy(&c) - 0.8).abs() < 1e-15);
        assert_eq!(f1(&ConfusionCounts { tn: 4, ..Default::default() }), 0.0);
    }

    #[test]
    fn threshold_below_all_predicts_everything_anomalous() {
        let d = ls(&[0.3, 0.5, 0.9, 0.7], &[0, 1, 0, 0]);
        let c = confusion(&d, 0.0);
        assert_eq!((c.tn, c.fn_), (0, 0));
        assert_eq!(accuracy(&c), 0.25);
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 99.0).unwrap(), 99.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 100.0);
        assert_eq!(percentile(&[4.5], 37.0).unwrap(), 4.5);
        assert!(matches!(percentile(&[], 50.0), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn size_labels() {
        let l = label_slices(&[150, 0, 10], 20.0, SmallLesionPolicy::Exclude);
        assert_eq!(l, vec![SliceLabel::Anomalous, SliceLabel::Healthy, SliceLabel::Excluded]);
        let r = label_slices(&[10], 20.0, SmallLesionPolicy::RelabelHealthy);
        assert_eq!(r, vec![SliceLabel::Healthy]);
        assert!(label_slices(&[1, 3, 0], 0.0, SmallLesionPolicy::Exclude).iter().all(|&l| l != SliceLabel::Excluded));
    }
}
