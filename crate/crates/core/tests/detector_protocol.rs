use ldvae_core::detector::{cross_validate, fold_partition, latent_score, residual_score, score_batch};
use ldvae_core::metrics::LabeledScores;
use ldvae_core::vae::reconstruct;
use ldvae_core::{Architecture, BrainMask, Error, SliceImage, VaeModel};

const HEALTHY: [f64; 10] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
/// Nearest-rank thresholds of `HEALTHY` at 50, 75 and 90: ranks 5, 8, 9.
const GRID: [(f64, f64); 3] = [(50.0, 5.0), (75.0, 8.0), (90.0, 9.0)];

const SCORES: [f64; 12] = [2.0, 4.5, 6.0, 9.5, 3.0, 8.0, 11.0, 5.0, 7.0, 12.0, 1.5, 9.0];
const LABELS: [bool; 12] = [false, false, true, true, false, true, true, false, false, true, false, true];

/// (tp, fp, tn, fn) with "anomalous iff score >= d".
fn counts(idx: &[usize], d: f64) -> (f64, f64, f64, f64) {
    let mut c = (0.0, 0.0, 0.0, 0.0);
    for &i in idx {
        match (SCORES[i] >= d, LABELS[i]) {
            (true, true) => c.0 += 1.0,
            (true, false) => c.1 += 1.0,
            (false, false) => c.2 += 1.0,
            (false, true) => c.3 += 1.0,
        }
    }
    c
}

fn hand_f1(idx: &[usize], d: f64) -> f64 {
    let (tp, fp, _, fn_) = counts(idx, d);
    if tp + fp + fn_ == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

fn pairs_auc(idx: &[usize]) -> f64 {
    let (mut wins, mut n) = (0.0, 0.0);
    for &i in idx.iter().filter(|&&i| LABELS[i]) {
        for &j in idx.iter().filter(|&&j| !LABELS[j]) {
            n += 1.0;
            wins += if SCORES[i] > SCORES[j] { 1.0 } else if SCORES[i] == SCORES[j] { 0.5 } else { 0.0 };
        }
    }
    wins / n
}

#[test]
fn twelve_slice_cross_validation_by_hand() {
    let k = 3;
    let has_both = |f: &Vec<usize>| f.iter().any(|&i| LABELS[i]) && f.iter().any(|&i| !LABELS[i]);
    let seed = (0..).find(|&s| fold_partition(12, k, s).iter().all(has_both)).unwrap();
    let folds = fold_partition(12, k, seed);
    assert!(folds.iter().all(|f| f.len() == 4));

    let pool = LabeledScores::new(SCORES.to_vec(), LABELS.to_vec()).unwrap();
    let grid: Vec<f64> = GRID.iter().map(|g| g.0).collect();
    let report = cross_validate(&HEALTHY, &pool, k, &grid, seed).unwrap();
    assert_eq!(report.folds.len(), k);

    for (i, fold) in folds.iter().enumerate() {
        let (mut best_p, mut best_d, mut best_f) = (0.0, 0.0, -1.0);
        for &(p, d) in &GRID {
            let f = hand_f1(fold, d);
            if f >= best_f {
                (best_p, best_d, best_f) = (p, d, f);
            }
        }
        let rest: Vec<usize> = (0..12).filter(|j| !fold.contains(j)).collect();
        let (tp, fp, tn, fn_) = counts(&rest, best_d);
        let got = &report.folds[i];
        assert_eq!(got.percentile, best_p, "fold {i}");
        assert_eq!(got.threshold, best_d, "fold {i}");
        assert!((got.accuracy - (tp + tn) / (tp + fp + tn + fn_)).abs() < 1e-12);
        assert!((got.f1 - hand_f1(&rest, best_d)).abs() < 1e-12);
        assert!((got.roc_auc - pairs_auc(&rest)).abs() < 1e-12);
    }

    let aucs: Vec<f64> = report.folds.iter().map(|f| f.roc_auc).collect();
    let mean = aucs.iter().sum::<f64>() / k as f64;
    let std = (aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / k as f64).sqrt();
    assert!((report.mean.roc_auc - mean).abs() < 1e-12);
    assert!((report.std.roc_auc - std).abs() < 1e-12);
    assert_eq!(report, cross_validate(&HEALTHY, &pool, k, &grid, seed).unwrap());
}

#[test]
fn single_class_fold_is_named() {
    let mut labels = vec![false; 12];
    labels[0] = true;
    let pool = LabeledScores::new(SCORES.to_vec(), labels).unwrap();
    match cross_validate(&HEALTHY, &pool, 3, &[50.0], 0) {
        Err(Error::SingleClass(msg)) => assert!(msg.starts_with("fold "), "{msg}"),
        other => panic!("expected a single-class error, got {other:?}"),
    }
    assert!(cross_validate(&HEALTHY, &pool, 1, &[50.0], 0).is_err());
}

fn slice(extent: usize) -> (SliceImage, BrainMask) {
    let bits: Vec<bool> = (0..extent * extent)
        .map(|i| {
            let (y, x) = (i / extent, i % extent);
            (2..extent - 2).contains(&y) && (3..extent - 3).contains(&x)
        })
        .collect();
    let pixels = bits
        .iter()
        .enumerate()
        .map(|(i, &b)| if b { ((i * 37) % 19) as f32 / 10.0 - 0.9 } else { -1.0 })
        .collect();
    (SliceImage::new(extent, extent, pixels).unwrap(), BrainMask::new(extent, extent, bits).unwrap())
}

#[test]
fn scorers_are_deterministic_and_consistent() {
    let arch = Architecture::healthy(16).with_channels(&[4, 8]).with_latent_dim(6);
    let vae_h = VaeModel::new(arch.clone(), 1).unwrap();
    let vae = VaeModel::new(arch, 2).unwrap();
    let (x, mask) = slice(16);

    let latent = latent_score(&x, &mask, &vae_h, &vae).unwrap();
    let residual = residual_score(&x, &mask, &vae_h).unwrap();
    assert!(latent >= 0.0 && latent.is_finite());
    assert!(residual >= 0.0 && residual.is_finite());
    assert_eq!(latent.to_bits(), latent_score(&x, &mask, &vae_h, &vae).unwrap().to_bits());

    // residual equals the interior L2 norm against the overlaid reconstruction
    let rec = reconstruct(&vae_h, &x, &mask).unwrap();
    let oracle: f64 = x
        .pixels
        .iter()
        .zip(&rec.pixels)
        .zip(&mask.bits)
        .filter(|(_, &m)| m)
        .map(|((&a, &b), _)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!((residual - oracle).abs() <= 1e-9 * oracle.max(1.0));

    // batch path agrees with the single-slice path
    let batch = score_batch(&[&x, &rec], &[&mask, &mask], &vae_h, Some(&vae)).unwrap();
    assert_eq!(batch.residual[0].to_bits(), residual.to_bits());
    assert_eq!(batch.latent.as_ref().unwrap()[0].to_bits(), latent.to_bits());

    let (wrong, wrong_mask) = slice(32);
    assert!(latent_score(&wrong, &wrong_mask, &vae_h, &vae).is_err());
}
