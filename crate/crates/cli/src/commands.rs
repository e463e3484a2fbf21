//! The four pipeline stages. Each validates its inputs before touching
//! the filesystem and writes every output through a temporary file that is
//! renamed into place.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use ldvae_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainingMeta};
use ldvae_core::data::{load_dataset, make_dataset, save_dataset, SplitName};
use ldvae_core::detector::{cross_validate, score_batch, AnomalyScore, EvalReport, ScorerKind};
use ldvae_core::metrics::{label_slices, LabeledScores, SliceLabel, SmallLesionPolicy};
use ldvae_core::vae::{reconstruct_batch, train_with, EpochRecord};
use ldvae_core::{BrainMask, DatasetSplit, PhantomConfig, SliceImage, SliceRecord, VaeModel};
use serde::{Deserialize, Serialize};

use crate::config::{Cohort, RunConfig, ScorerChoice, VariantChoice};
use crate::error::CliError;

/// Writes `bytes` next to `path` and renames the result into place,
/// creating the parent directory if needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    create_dir(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable report");
    bytes.push(b'\n');
    bytes
}

fn to_jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item).expect("serializable record");
        out.push(b'\n');
    }
    out
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub cohort: Cohort,
    pub file: String,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub lesion_slices: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub phantom: PhantomConfig,
    pub cohorts: Vec<CohortManifest>,
}

/// Generates both cohorts and writes them with a manifest.
pub fn generate(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let phantom = cfg.phantom();
    let (healthy, unlabelled) = make_dataset(&phantom)?;
    create_dir(&cfg.output_dir)?;
    let mut cohorts = Vec::new();
    for (cohort, split) in [(Cohort::Healthy, &healthy), (Cohort::Unlabelled, &unlabelled)] {
        let path = cfg.dataset_path(cohort);
        save_dataset(split, &path)?;
        cohorts.push(CohortManifest {
            cohort,
            file: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            train: split.train.len(),
            validation: split.validation.len(),
            test: split.test.len(),
            lesion_slices: split.iter().filter(|(_, r)| r.image.lesion_px > 0).count(),
        });
    }
    let manifest = Manifest { seed: cfg.seed, phantom, cohorts };
    write_atomic(&cfg.output_dir.join("manifest.json"), &to_json(&manifest))?;
    Ok(manifest)
}

/// Loss-curve file written next to a checkpoint.
pub fn loss_curve_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().unwrap_or_default().to_os_string();
    name.push(".loss.jsonl");
    checkpoint.with_file_name(name)
}

fn load_split(path: &Path) -> Result<DatasetSplit, CliError> {
    if !path.exists() {
        return Err(CliError::Data(format!("{}: dataset not found", path.display())));
    }
    Ok(load_dataset(path)?)
}

/// Trains the model of `cohort` and writes its checkpoint and loss curve.
pub fn train(
    cfg: &RunConfig,
    cohort: Cohort,
    variant: VariantChoice,
    out: &Path,
    data: Option<&Path>,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>, CliError> {
    let data = data.map_or_else(|| cfg.dataset_path(cohort), Path::to_path_buf);
    let split = load_split(&data)?;
    let (h, w) = split.extent().ok_or_else(|| CliError::Data(format!("{}: no slices", data.display())))?;
    if h != w {
        return Err(CliError::Data(format!("{}: slices are {h}x{w}, square slices required", data.display())));
    }
    let tcfg = cfg.train_config(cohort, variant);
    let model = VaeModel::new(cfg.model(cohort).architecture(cohort, h), tcfg.seed)?;
    let outcome = train_with(model, &split.train, &split.validation, &tcfg, &mut progress)?;
    let meta = TrainingMeta { epochs: outcome.history.len() as u32, final_loss: outcome.final_loss(), seed: tcfg.seed };
    write_atomic(&loss_curve_path(out), &to_jsonl(&outcome.history))?;
    save_checkpoint(&Checkpoint { model: outcome.model, meta }, out)?;
    Ok(outcome.history)
}

/// Which dataset splits to score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitChoice {
    Train,
    Validation,
    Test,
    /// Validation and test.
    Heldout,
    All,
}

impl SplitChoice {
    pub fn includes(self, s: SplitName) -> bool {
        match self {
            SplitChoice::Train => s == SplitName::Train,
            SplitChoice::Validation => s == SplitName::Validation,
            SplitChoice::Test => s == SplitName::Test,
            SplitChoice::Heldout => s != SplitName::Train,
            SplitChoice::All => true,
        }
    }
}

/// One line of a score file: a slice and its score under each requested
/// scorer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    /// Position of the slice in its dataset file.
    pub slice_id: usize,
    pub subject: u32,
    pub slice_index: u16,
    pub lesion_px: u32,
    pub split: SplitName,
    pub score: BTreeMap<ScorerKind, f64>,
}

impl ScoreRecord {
    pub fn anomaly_scores(&self) -> impl Iterator<Item = AnomalyScore> + '_ {
        self.score.iter().map(|(&scorer, &score)| AnomalyScore {
            slice_id: self.slice_id,
            subject: self.subject,
            lesion_px: self.lesion_px,
            score,
            scorer,
        })
    }
}

fn load_model(path: &Path) -> Result<VaeModel, CliError> {
    if !path.exists() {
        return Err(CliError::Data(format!("{}: checkpoint not found", path.display())));
    }
    Ok(load_checkpoint(path)?.model)
}

fn check_geometry(model: &VaeModel, split: &DatasetSplit, what: &str) -> Result<(), CliError> {
    match split.extent() {
        Some(e) if e != (model.arch.height, model.arch.width) => Err(CliError::Data(format!(
            "{what} expects {}x{} slices, dataset has {}x{}",
            model.arch.height, model.arch.width, e.0, e.1
        ))),
        _ => Ok(()),
    }
}

/// Scores the selected slices of a dataset and writes one JSON line per
/// slice.
pub fn score(
    vae_h: &Path,
    vae: &Path,
    data: &Path,
    out: &Path,
    scorer: ScorerChoice,
    splits: SplitChoice,
) -> Result<Vec<ScoreRecord>, CliError> {
    let model_h = load_model(vae_h)?;
    let model_u = match scorer {
        ScorerChoice::Residual => None,
        _ => Some(load_model(vae)?),
    };
    let split = load_split(data)?;
    check_geometry(&model_h, &split, "healthy model")?;
    if let Some(m) = &model_u {
        check_geometry(m, &split, "unlabelled model")?;
    }
    let chosen: Vec<(usize, SplitName, &SliceRecord)> =
        split.iter().enumerate().filter(|(_, (s, _))| splits.includes(*s)).map(|(i, (s, r))| (i, s, r)).collect();
    let images: Vec<&SliceImage> = chosen.iter().map(|(_, _, r)| &r.image).collect();
    let masks: Vec<&BrainMask> = chosen.iter().map(|(_, _, r)| &r.mask).collect();
    let scores = if images.is_empty() {
        None
    } else {
        Some(score_batch(&images, &masks, &model_h, model_u.as_ref())?)
    };
    let kinds: &[ScorerKind] = match scorer {
        ScorerChoice::Latent => &[ScorerKind::Latent],
        ScorerChoice::Residual => &[ScorerKind::Residual],
        ScorerChoice::All => &ScorerKind::ALL,
    };
    let records: Vec<ScoreRecord> = chosen
        .iter()
        .enumerate()
        .map(|(j, &(slice_id, split, r))| ScoreRecord {
            slice_id,
            subject: r.image.subject,
            slice_index: r.image.slice_index,
            lesion_px: r.image.lesion_px,
            split,
            score: kinds
                .iter()
                .map(|&k| (k, scores.as_ref().and_then(|s| s.get(k)).expect("requested scorer computed")[j]))
                .collect(),
        })
        .collect();
    if let Some(bad) = records.iter().flat_map(|r| r.score.values()).find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(ldvae_core::Error::NonFinite(format!("score {bad}")).into());
    }
    write_atomic(out, &to_jsonl(&records))?;
    Ok(records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Native-pixel lesion-size thresholds.
    pub size_thresholds: Vec<f64>,
    pub folds: usize,
    pub grid: Vec<f64>,
    pub small_lesions: SmallLesionPolicy,
    pub seed: u64,
}

impl EvalOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        EvalOptions {
            size_thresholds: cfg.size_thresholds(),
            folds: cfg.detector.folds,
            grid: cfg.detector.grid.clone(),
            small_lesions: cfg.detector.small_lesions,
            seed: cfg.seed,
        }
    }
}

/// One `(size threshold, scorer)` evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBlock {
    pub size_threshold: f64,
    pub scorer: ScorerKind,
    pub evaluated: usize,
    pub anomalous: usize,
    pub excluded: usize,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub options: EvalOptions,
    pub healthy_validation: usize,
    pub blocks: Vec<ReportBlock>,
}

impl Report {
    pub fn block(&self, size_threshold: f64, scorer: ScorerKind) -> Option<&ReportBlock> {
        self.blocks.iter().find(|b| b.size_threshold == size_threshold && b.scorer == scorer)
    }
}

/// Cross-validated metrics for every size threshold and every scorer
/// present in both score sets.
pub fn evaluate_records(pool: &[ScoreRecord], healthy: &[ScoreRecord], opts: &EvalOptions) -> Result<Report, CliError> {
    if pool.is_empty() || healthy.is_empty() {
        return Err(CliError::Data("empty score file".into()));
    }
    let scorers: Vec<ScorerKind> = ScorerKind::ALL
        .into_iter()
        .filter(|k| pool.iter().chain(healthy).all(|r| r.score.contains_key(k)))
        .collect();
    if scorers.is_empty() {
        return Err(CliError::Data("no scorer is present in every record of both files".into()));
    }
    let lesion_px: Vec<u32> = pool.iter().map(|r| r.lesion_px).collect();
    let mut blocks = Vec::new();
    for &thr in &opts.size_thresholds {
        let labels = label_slices(&lesion_px, thr, opts.small_lesions);
        for &kind in &scorers {
            let (scores, flags): (Vec<f64>, Vec<bool>) = pool
                .iter()
                .zip(&labels)
                .filter(|(_, l)| **l != SliceLabel::Excluded)
                .map(|(r, l)| (r.score[&kind], l.is_anomalous()))
                .unzip();
            let data = LabeledScores::new(scores, flags)?;
            let h: Vec<f64> = healthy.iter().map(|r| r.score[&kind]).collect();
            let mut report = cross_validate(&h, &data, opts.folds, &opts.grid, opts.seed)?;
            report.size_threshold = Some(thr);
            blocks.push(ReportBlock {
                size_threshold: thr,
                scorer: kind,
                evaluated: data.len(),
                anomalous: data.positives(),
                excluded: labels.iter().filter(|l| **l == SliceLabel::Excluded).count(),
                report,
            });
        }
    }
    Ok(Report { options: opts.clone(), healthy_validation: healthy.len(), blocks })
}

/// Evaluates score files and writes the report JSON.
pub fn evaluate(scores: &Path, healthy_val: &Path, out: &Path, opts: &EvalOptions) -> Result<Report, CliError> {
    let pool: Vec<ScoreRecord> = read_jsonl(scores)?;
    let healthy: Vec<ScoreRecord> = read_jsonl(healthy_val)?;
    let report = evaluate_records(&pool, &healthy, opts)?;
    write_atomic(out, &to_json(&report))?;
    Ok(report)
}

/// Writes `|x - x_h| - 1` for every slice of `data` (so values stay in
/// `[-1, 1]`; background maps to -1) as `residuals.ldsd` in `dir`.
pub fn dump_residuals(vae_h: &Path, data: &Path, dir: &Path) -> Result<PathBuf, CliError> {
    let model = load_model(vae_h)?;
    let split = load_split(data)?;
    check_geometry(&model, &split, "healthy model")?;
    let mut out = DatasetSplit::default();
    for name in SplitName::ALL {
        let recs = split.get(name);
        if recs.is_empty() {
            continue;
        }
        let images: Vec<&SliceImage> = recs.iter().map(|r| &r.image).collect();
        let masks: Vec<&BrainMask> = recs.iter().map(|r| &r.mask).collect();
        let recon = reconstruct_batch(&model, &images, &masks)?;
        let residual: Vec<SliceRecord> = recs
            .iter()
            .zip(recon)
            .map(|(r, x_h)| {
                let pixels = r.image.pixels.iter().zip(&x_h.pixels).map(|(a, b)| (a - b).abs().min(2.0) - 1.0).collect();
                SliceRecord { image: r.image.with_pixels(pixels), mask: r.mask.clone() }
            })
            .collect();
        match name {
            SplitName::Train => out.train = residual,
            SplitName::Validation => out.validation = residual,
            SplitName::Test => out.test = residual,
        }
    }
    create_dir(dir)?;
    let path = dir.join("residuals.ldsd");
    save_dataset(&out, &path)?;
    Ok(path)
}
