//! Command-line front end for the VBM pipeline. Every subcommand takes a
//! JSON config plus a handful of flag overrides; all randomness flows from
//! the single config seed. Exit codes: 0 success, 2 config error, 3 data
//! error, 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vbm::pipeline::{self, PipelineConfig};

#[derive(Parser)]
#[command(name = "vbm", about = "Voxel-based morphometry statistical pipeline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON pipeline configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Full analysis: GLM, cluster inference, eigenvariates, group stats.
    Run {
        #[command(flatten)]
        common: Common,
        /// Contrasts to test (cn-gt-ad, mci-gt-ad, cn-gt-mci); repeatable.
        #[arg(long = "contrast")]
        contrasts: Vec<String>,
        /// Cluster-forming voxelwise p.
        #[arg(long)]
        voxel_p: Option<f64>,
        /// Cluster-level FWE alpha.
        #[arg(long)]
        alpha: Option<f64>,
        /// Cluster connectivity: 6, 18, or 26.
        #[arg(long)]
        connectivity: Option<u8>,
    },
    /// MCI-to-AD conversion prediction with cross-validated logistic models.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Feature sets (clinical, eigenvariate, combined); repeatable.
        #[arg(long = "feature-set")]
        feature_sets: Vec<String>,
        #[arg(long)]
        folds: Option<usize>,
        /// Decision threshold on predicted probability.
        #[arg(long)]
        threshold: Option<f64>,
        /// Ridge penalty.
        #[arg(long)]
        l2: Option<f64>,
    },
    /// APOE4 carrier stratification table, ANOVA, and box plot.
    Stratify {
        #[command(flatten)]
        common: Common,
    },
    /// Generate a phantom cohort (volumes, cohort CSV, manifest).
    Phantom {
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo calibration of the GRF cluster FWE test on null phantoms.
    ValidateFwe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_sims: Option<usize>,
    },
    /// Covariate-adjusted eigenvariate of an explicit ROI mask.
    Eigenvariate {
        #[command(flatten)]
        common: Common,
        /// NIfTI ROI mask (voxels > 0.5 define the region).
        #[arg(long)]
        roi_mask: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> vbm::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::from_json_file(&common.config)?;
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> vbm::Result<Vec<PathBuf>> {
    match cli.command {
        Command::Run { common, contrasts, voxel_p, alpha, connectivity } => {
            let mut cfg = load_config(&common)?;
            if !contrasts.is_empty() {
                cfg.contrasts = contrasts;
            }
            if let Some(p) = voxel_p {
                cfg.voxel_p = p;
            }
            if let Some(a) = alpha {
                cfg.fwe_alpha = a;
            }
            if let Some(c) = connectivity {
                cfg.connectivity = c;
            }
            pipeline::cmd_run(&cfg)
        }
        Command::Predict { common, feature_sets, folds, threshold, l2 } => {
            let mut cfg = load_config(&common)?;
            if !feature_sets.is_empty() {
                cfg.feature_sets = feature_sets;
            }
            if let Some(k) = folds {
                cfg.folds = k;
            }
            if let Some(t) = threshold {
                cfg.decision_threshold = t;
            }
            if let Some(l) = l2 {
                cfg.l2 = l;
            }
            pipeline::cmd_predict(&cfg)
        }
        Command::Stratify { common } => pipeline::cmd_stratify(&load_config(&common)?),
        Command::Phantom { common } => pipeline::cmd_phantom(&load_config(&common)?),
        Command::ValidateFwe { common, n_sims } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = n_sims {
                cfg.n_sims = n;
            }
            pipeline::cmd_validate_fwe(&cfg)
        }
        Command::Eigenvariate { common, roi_mask } => {
            let mut cfg = load_config(&common)?;
            if roi_mask.is_some() {
                cfg.roi_mask = roi_mask;
            }
            pipeline::cmd_eigenvariate(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
