//! Latent-dissimilarity and residual scoring, percentile thresholds and
//! k-fold cross-validated evaluation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{BrainMask, SliceImage};
use crate::metrics::{self, accuracy, confusion, f1, mean_std, nearest_rank, roc_auc, LabeledScores};
use crate::rng::{self, tag};
use crate::vae::{encode_means, reconstruct_batch, INFERENCE_CHUNK};
use crate::{Error, Result, VaeModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    /// Distance between unlabelled-model posterior means of a slice and of
    /// its healthy-model reconstruction.
    Latent,
    /// L2 distance between a slice and its healthy-model reconstruction.
    Residual,
}

impl ScorerKind {
    pub const ALL: [ScorerKind; 2] = [ScorerKind::Latent, ScorerKind::Residual];

    pub fn as_str(self) -> &'static str {
        match self {
            ScorerKind::Latent => "latent",
            ScorerKind::Residual => "residual",
        }
    }
}

/// One slice's score, also the JSON Lines record of score files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScore {
    pub slice_id: usize,
    pub subject: u32,
    pub lesion_px: u32,
    pub score: f64,
    pub scorer: ScorerKind,
}

/// Euclidean distance between two equally long vectors, accumulated in f64.
pub fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt()
}

/// L2 norm of `x - y` over the interior of `mask`.
pub fn masked_l2(x: &SliceImage, y: &SliceImage, mask: &BrainMask) -> f64 {
    x.pixels
        .iter()
        .zip(&y.pixels)
        .zip(&mask.bits)
        .filter(|(_, &m)| m)
        .map(|((&a, &b), _)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Latent and residual scores of many slices. `vae` may be `None` when only
/// residual scores are wanted.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchScores {
    pub latent: Option<Vec<f64>>,
    pub residual: Vec<f64>,
}

impl BatchScores {
    pub fn get(&self, kind: ScorerKind) -> Option<&[f64]> {
        match kind {
            ScorerKind::Latent => self.latent.as_deref(),
            ScorerKind::Residual => Some(&self.residual),
        }
    }
}

/// Scores slices in fixed-size chunks; results are in input order.
pub fn score_batch(images: &[&SliceImage], masks: &[&BrainMask], vae_h: &VaeModel, vae: Option<&VaeModel>) -> Result<BatchScores> {
    if images.len() != masks.len() {
        return Err(Error::shape("score_batch", images.len(), masks.len()));
    }
    if let Some(v) = vae {
        if (v.arch.height, v.arch.width) != (vae_h.arch.height, vae_h.arch.width) {
            return Err(Error::shape(
                "score_batch",
                format!("{}x{} model pair", vae_h.arch.height, vae_h.arch.width),
                format!("{}x{}", v.arch.height, v.arch.width),
            ));
        }
    }
    let mut latent = vae.map(|_| Vec::with_capacity(images.len()));
    let mut residual = Vec::with_capacity(images.len());
    for (imgs, msks) in images.chunks(INFERENCE_CHUNK).zip(masks.chunks(INFERENCE_CHUNK)) {
        let recon = reconstruct_batch(vae_h, imgs, msks)?;
        residual.extend(imgs.iter().zip(&recon).zip(msks).map(|((x, r), m)| masked_l2(x, r, m)));
        if let (Some(v), Some(out)) = (vae, latent.as_mut()) {
            let a = encode_means(v, imgs)?;
            let b = encode_means(v, &recon.iter().collect::<Vec<_>>())?;
            out.extend(a.iter().zip(&b).map(|(p, q)| euclidean(p, q)));
        }
    }
    Ok(BatchScores { latent, residual })
}

/// `||mu(x) - mu(x_h)||` with `x_h` the healthy-model reconstruction of `x`
/// and `mu` the posterior mean under `vae`.
pub fn latent_score(x: &SliceImage, mask: &BrainMask, vae_h: &VaeModel, vae: &VaeModel) -> Result<f64> {
    let s = score_batch(&[x], &[mask], vae_h, Some(vae))?;
    Ok(s.latent.expect("latent requested")[0])
}

/// `||x - x_h||` over the mask interior.
pub fn residual_score(x: &SliceImage, mask: &BrainMask, vae_h: &VaeModel) -> Result<f64> {
    Ok(score_batch(&[x], &[mask], vae_h, None)?.residual[0])
}

/// Percentile candidates `50.0, 50.5, ..., 99.5`.
pub fn default_grid() -> Vec<f64> {
    (0..100).map(|i| 50.0 + 0.5 * i as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSelection {
    pub percentile: f64,
    /// Nearest-rank percentile of the healthy sample at `percentile`.
    pub threshold: f64,
    /// F1 reached on the selection subset.
    pub f1: f64,
    pub grid: Vec<f64>,
}

/// Picks the grid percentile of the healthy scores whose threshold
/// maximizes F1 on the labelled selection subset; ties go to the larger
/// percentile.
pub fn select_threshold(healthy: &[f64], selection: &LabeledScores, grid: &[f64]) -> Result<ThresholdSelection> {
    if healthy.is_empty() {
        return Err(Error::EmptyInput("healthy validation scores"));
    }
    if grid.is_empty() {
        return Err(Error::EmptyInput("percentile grid"));
    }
    let pos = selection.positives();
    if pos == 0 || pos == selection.len() {
        return Err(Error::SingleClass("threshold selection subset".into()));
    }
    let mut sorted = healthy.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best: Option<(f64, f64, f64)> = None;
    for &p in grid {
        if !(p > 0.0 && p <= 100.0) {
            return Err(Error::config("grid", format!("percentile {p} outside (0, 100]")));
        }
        let d = sorted[nearest_rank(sorted.len(), p)];
        let score = f1(&confusion(selection, d));
        let better = match best {
            None => true,
            Some((bf, bp, _)) => score > bf || (score == bf && p > bp),
        };
        if better {
            best = Some((score, p, d));
        }
    }
    let (f1, percentile, threshold) = best.expect("nonempty grid");
    Ok(ThresholdSelection { percentile, threshold, f1, grid: grid.to_vec() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Healthy,
    Anomalous,
}

/// Healthy iff `score < threshold`.
pub fn classify(score: f64, threshold: f64) -> Classification {
    if score < threshold {
        Classification::Healthy
    } else {
        Classification::Anomalous
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub roc_auc: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub percentile: f64,
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub roc_auc: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub percentile: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub folds: Vec<FoldMetrics>,
    pub mean: MetricSummary,
    /// Population standard deviation over folds.
    pub std: MetricSummary,
    /// Lesion-size threshold (native pixels) used to label the slices.
    pub size_threshold: Option<f64>,
}

impl EvalReport {
    pub fn from_folds(folds: Vec<FoldMetrics>, size_threshold: Option<f64>) -> Self {
        let col = |f: fn(&FoldMetrics) -> f64| mean_std(&folds.iter().map(f).collect::<Vec<_>>());
        let (auc, acc, f, p) = (col(|m| m.roc_auc), col(|m| m.accuracy), col(|m| m.f1), col(|m| m.percentile));
        EvalReport {
            mean: MetricSummary { roc_auc: auc.0, accuracy: acc.0, f1: f.0, percentile: p.0 },
            std: MetricSummary { roc_auc: auc.1, accuracy: acc.1, f1: f.1, percentile: p.1 },
            folds,
            size_threshold,
        }
    }
}

/// Seeded partition of `0..n` into `k` disjoint folds of near-equal size.
pub fn fold_partition(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[tag::FOLDS]));
    (0..k).map(|i| idx[i * n / k..(i + 1) * n / k].to_vec()).collect()
}

/// Metrics of one fold: thresholds chosen on `selection`, evaluated on
/// `evaluation`.
pub fn evaluate_fold(healthy: &[f64], selection: &LabeledScores, evaluation: &LabeledScores, grid: &[f64]) -> Result<FoldMetrics> {
    let sel = select_threshold(healthy, selection, grid)?;
    let counts = confusion(evaluation, sel.threshold);
    Ok(FoldMetrics {
        roc_auc: roc_auc(evaluation)?,
        accuracy: accuracy(&counts),
        f1: f1(&counts),
        percentile: sel.percentile,
        threshold: sel.threshold,
    })
}

/// k-fold protocol: each fold in turn selects the threshold together with
/// the fixed healthy-validation scores, and metrics are computed on the
/// remaining folds.
pub fn cross_validate(healthy: &[f64], pool: &LabeledScores, k: usize, grid: &[f64], seed: u64) -> Result<EvalReport> {
    if k < 2 {
        return Err(Error::config("folds", "need at least 2"));
    }
    if pool.len() < k {
        return Err(Error::config("folds", format!("{} slices cannot fill {k} folds", pool.len())));
    }
    let folds = fold_partition(pool.len(), k, seed);
    let subset = |idx: &mut dyn Iterator<Item = usize>| {
        let (s, l): (Vec<f64>, Vec<bool>) = idx.map(|i| (pool.scores[i], pool.labels[i])).unzip();
        LabeledScores { scores: s, labels: l }
    };
    let mut out = Vec::with_capacity(k);
    for (i, fold) in folds.iter().enumerate() {
        let selection = subset(&mut fold.iter().copied());
        let evaluation = subset(&mut folds.iter().enumerate().filter(|(j, _)| *j != i).flat_map(|(_, f)| f.iter().copied()));
        let fm = evaluate_fold(healthy, &selection, &evaluation, grid).map_err(|e| match e {
            Error::SingleClass(what) => Error::SingleClass(format!("fold {i}: {what}")),
            other => other,
        })?;
        out.push(fm);
    }
    Ok(EvalReport::from_folds(out, None))
}

pub use metrics::SmallLesionPolicy;

#[cfg(test)]
mod tests {
    use super::*;

    fn ls(s: &[f64], l: &[bool]) -> LabeledScores {
        LabeledScores::new(s.to_vec(), l.to_vec()).unwrap()
    }

    #[test]
    fn three_four_five() {
        assert_eq!(euclidean(&[1.0, 2.0], &[4.0, 6.0]), 5.0);
    }

    #[test]
    fn residual_single_pixel() {
        let x = SliceImage::new(1, 3, vec![0.5, -1.0, 0.2]).unwrap();
        let y = SliceImage::new(1, 3, vec![0.2, 0.7, 0.2]).unwrap();
        let m = BrainMask::new(1, 3, vec![true, false, true]).unwrap();
        assert!((masked_l2(&x, &y, &m) - 0.3).abs() < 1e-7);
    }

    #[test]
    fn grid_is_fifty_to_ninety_nine_and_a_half() {
        let g = default_grid();
        assert_eq!((g.len(), g[0], g[99]), (100, 50.0, 99.5));
    }

    #[test]
    fn nearest_rank_threshold() {
        let healthy: Vec<f64> = (1..=100).map(f64::from).collect();
        let sel = ls(&[10.0, 150.0], &[false, true]);
        let t = select_threshold(&healthy, &sel, &[99.0]).unwrap();
        assert_eq!(t.threshold, 99.0);
    }

    #[test]
    fn separable_reaches_f1_one_and_prefers_larger_percentile() {
        let healthy: Vec<f64> = (1..=100).map(f64::from).collect();
        let sel = ls(&[5.0, 20.0, 500.0, 600.0], &[false, false, true, true]);
        let t = select_threshold(&healthy, &sel, &default_grid()).unwrap();
        assert_eq!(t.f1, 1.0);
        assert_eq!(t.percentile, 99.5);
    }

    #[test]
    fn single_class_selection_is_rejected() {
        let r = select_threshold(&[1.0], &ls(&[1.0, 2.0], &[true, true]), &[50.0]);
        assert!(matches!(r, Err(Error::SingleClass(_))));
    }

    #[test]
    fn boundary_is_anomalous() {
        assert_eq!(classify(2.0, 2.0), Classification::Anomalous);
        assert_eq!(classify(0.0, 0.1), Classification::Healthy);
        assert_eq!(classify(0.0, 0.0), Classification::Anomalous);
    }

    #[test]
    fn folds_partition_hundred_into_twenties() {
        let f = fold_partition(100, 5, 3);
        assert!(f.iter().all(|x| x.len() == 20));
        let mut all: Vec<usize> = f.concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(f, fold_partition(100, 5, 3));
    }

    #[test]
    fn identical_folds_have_zero_std() {
        let m = FoldMetrics { roc_auc: 0.8, accuracy: 0.7, f1: 0.6, percentile: 95.0, threshold: 1.0 };
        let r = EvalReport::from_folds(vec![m; 5], None);
        assert_eq!(r.std.roc_auc, 0.0);
        assert_eq!(r.mean.f1, 0.6);
    }
}
