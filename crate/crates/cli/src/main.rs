use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ldvae_cli::commands::{self, EvalOptions, SplitChoice};
use ldvae_cli::config::{Cohort, ScorerChoice, VariantChoice};
use ldvae_cli::{exit, CliError, RunConfig};

/// Dual-VAE latent-dissimilarity anomaly detection on phantom slices.
#[derive(Parser)]
#[command(name = "ldvae", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the healthy and unlabelled phantom datasets.
    Generate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the model of one cohort.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        cohort: Cohort,
        #[arg(long, value_enum, default_value = "plain")]
        variant: VariantChoice,
        #[arg(long)]
        out: PathBuf,
        /// Dataset file; defaults to the cohort's file in the output directory.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score dataset slices with a trained model pair.
    Score {
        #[arg(long = "vae-h")]
        vae_h: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        scorer: ScorerChoice,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitChoice,
    },
    /// Cross-validated evaluation of score files.
    Evaluate {
        /// Scores of the unlabelled evaluation pool.
        #[arg(long)]
        scores: PathBuf,
        /// Scores of the healthy validation slices.
        #[arg(long = "healthy-val")]
        healthy_val: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run config supplying thresholds, folds, grid and seed.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        folds: Option<usize>,
        /// Comma-separated lesion-size thresholds in native pixels.
        #[arg(long, value_delimiter = ',')]
        size_thresholds: Option<Vec<f64>>,
        /// Write per-slice residual images of `--data` here.
        #[arg(long, requires_all = ["vae_h", "data"])]
        dump_residuals: Option<PathBuf>,
        #[arg(long = "vae-h")]
        vae_h: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { config } => {
            let cfg = RunConfig::load(&config)?;
            let m = commands::generate(&cfg)?;
            for c in &m.cohorts {
                eprintln!(
                    "{}: {} train / {} validation / {} test slices, {} with lesions",
                    c.cohort.as_str(),
                    c.train,
                    c.validation,
                    c.test,
                    c.lesion_slices
                );
            }
        }
        Command::Train { config, cohort, variant, out, data } => {
            let cfg = RunConfig::load(&config)?;
            commands::train(&cfg, cohort, variant, &out, data.as_deref(), |r| match r.val_loss {
                Some(v) => eprintln!("epoch {:>3}  train {:.4}  validation {:.4}", r.epoch, r.train_loss, v),
                None => eprintln!("epoch {:>3}  train {:.4}", r.epoch, r.train_loss),
            })?;
        }
        Command::Score { vae_h, vae, data, out, scorer, split } => {
            let n = commands::score(&vae_h, &vae, &data, &out, scorer, split)?.len();
            eprintln!("scored {n} slices");
        }
        Command::Evaluate { scores, healthy_val, out, config, folds, size_thresholds, dump_residuals, vae_h, data } => {
            let cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            let mut opts = EvalOptions::from_config(&cfg);
            if let Some(k) = folds {
                if k < 2 {
                    return Err(CliError::Config("invalid value for `folds`: need at least 2".into()));
                }
                opts.folds = k;
            }
            if let Some(t) = size_thresholds {
                if t.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(CliError::Config("invalid value for `size-thresholds`: must be nonnegative".into()));
                }
                opts.size_thresholds = t;
            }
            let report = commands::evaluate(&scores, &healthy_val, &out, &opts)?;
            for b in &report.blocks {
                let (m, s) = (&b.report.mean, &b.report.std);
                eprintln!(
                    "size > {:>6.2}  {:<8}  AUC {:.3} ± {:.3}  acc {:.3} ± {:.3}  F1 {:.3} ± {:.3}",
                    b.size_threshold,
                    b.scorer.as_str(),
                    m.roc_auc,
                    s.roc_auc,
                    m.accuracy,
                    s.accuracy,
                    m.f1,
                    s.f1
                );
            }
            if let (Some(dir), Some(vae_h), Some(data)) = (dump_residuals, vae_h, data) {
                let path = commands::dump_residuals(&vae_h, &data, &dir)?;
                eprintln!("residuals written to {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
