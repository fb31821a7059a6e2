//! `pdeeg` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use pdeeg::error::{Error, Result};
use pdeeg::harmonize::{self, BatchKey};
use pdeeg::io::{self, FeatureMatrix};
use pdeeg::learn::{self, ModelKind};
use pdeeg::pipeline::{self, MaskReport, ModelArtifact, PipelineConfig};
use pdeeg::select;
use pdeeg::synth;

#[derive(Parser, Debug)]
#[command(name = "pdeeg", version, about = "EEG spectral features, multi-center harmonization and PD classification")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config file with dotted sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set select.m=40`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Global seed; per-module seeds derive from it unless set explicitly.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Preprocess every subject of a manifest and write the feature CSV.
    Extract {
        /// Manifest CSV (defaults to `input.manifest`).
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit ComBat on a feature CSV (or apply a saved model) and write the harmonized CSV.
    Harmonize {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where to save the fitted model.
        #[arg(long)]
        model_out: Option<PathBuf>,
        /// Apply this saved model instead of fitting.
        #[arg(long, conflicts_with = "model_out")]
        apply: Option<PathBuf>,
    },
    /// Fit feature selection on a labelled feature CSV and write the mask.
    Select {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid-search and fit one classifier on a feature CSV.
    Train {
        #[arg(long)]
        features: PathBuf,
        /// Model kind: logreg, svm, knn or dtree.
        #[arg(long, default_value = "logreg")]
        model: ModelKind,
        /// Mask file from `select` or a pipeline run.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bootstrap-evaluate a trained model on a feature CSV.
    Evaluate {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Report CSV; a text table is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage and write all artifacts under `<output.dir>/<run-id>/`.
    Pipeline,
    /// Write a synthetic multi-center dataset (manifest plus epoch files).
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = PipelineConfig::load(cli.common.config.as_deref(), &cli.common.overrides, cli.common.seed)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    info!("config hash {}", cfg.hash());
    pool.install(|| dispatch(cli.command, &cfg))
}

fn dispatch(command: Command, cfg: &PipelineConfig) -> Result<()> {
    match command {
        Command::Extract { manifest, out } => {
            let manifest = manifest
                .or_else(|| cfg.manifest.clone())
                .ok_or_else(|| Error::Config("no manifest given (--manifest or input.manifest)".into()))?;
            if !manifest.is_file() {
                return Err(Error::Config(format!("manifest {} does not exist", manifest.display())));
            }
            let records = io::load_manifest(&manifest)?;
            let fm = pipeline::extract_features(&records, cfg)?;
            io::write_features_csv(&fm, &out)?;
            info!("wrote {} subjects x {} features to {}", fm.n_subjects(), fm.n_features(), out.display());
        }
        Command::Harmonize {
            features,
            out,
            model_out,
            apply,
        } => {
            let fm = read_input(&features)?;
            let model = match apply {
                Some(path) => pipeline::read_combat(&path)?,
                None => {
                    let h = &cfg.harmonize;
                    harmonize::bootstrap_combat_fit(
                        &fm,
                        BatchKey::Center,
                        &h.covariates,
                        h.reference.as_deref(),
                        h.eb,
                        h.bootstrap_b,
                        h.seed,
                    )?
                }
            };
            let harmonized = harmonize::combat_transform(&model, &fm)?;
            io::write_features_csv(&harmonized, &out)?;
            if let Some(path) = model_out {
                pipeline::write_combat(&path, &model)?;
            }
            info!("harmonized {} subjects against reference {}", fm.n_subjects(), model.reference);
        }
        Command::Select { features, out } => {
            let fm = read_input(&features)?;
            let mask = select::fit_selection(&cfg.selection, fm.values().view(), &fm.labels(), 0)?;
            info!("kept {} of {} features", mask.count(), fm.n_features());
            let report = MaskReport {
                feature_names: fm.feature_names().to_vec(),
                folds: Vec::new(),
                merged: mask,
            };
            pipeline::write_json(&out, &report)?;
        }
        Command::Train {
            features,
            model,
            mask,
            out,
        } => {
            let mut fm = read_input(&features)?;
            if let Some(path) = mask {
                let report: MaskReport = pipeline::read_json(&path)?;
                if report.feature_names != fm.feature_names() {
                    return Err(Error::invalid(format!(
                        "mask {} was fitted on different feature columns",
                        path.display()
                    )));
                }
                fm = fm.select_features(&report.merged.keep);
            }
            let spec = cfg
                .models
                .iter()
                .find(|s| s.kind == model)
                .cloned()
                .map_or_else(|| learn::ModelSpec::from_values(model, &cfg.grid), Ok)?;
            let y = fm.labels();
            let strata: Vec<String> = fm.subjects().iter().map(learn::stratum_key).collect();
            let grid = learn::grid_search(&spec, fm.values().view(), &y, &strata, cfg.cv.inner_folds, cfg.cv.seed)?;
            let trained = learn::train_model(&grid.best, fm.values().view(), &y)?;
            info!("selected {}", grid.best);
            pipeline::write_model(
                &out,
                &ModelArtifact {
                    feature_names: fm.feature_names().to_vec(),
                    model: trained,
                },
            )?;
        }
        Command::Evaluate { features, model, out } => {
            let fm = read_input(&features)?;
            let artifact = pipeline::read_model(&model)?;
            let cols = artifact.columns(&fm)?;
            let x = fm.values().select(ndarray::Axis(1), &cols);
            let report = pdeeg::eval::bootstrap_evaluate(
                &artifact.model,
                x.view(),
                &fm.labels(),
                &fm.centers(),
                cfg.eval_n_boot,
                cfg.eval_seed,
            )?;
            report.write_csv(&out)?;
            let text_path = out.with_extension("txt");
            std::fs::write(&text_path, report.to_text()).map_err(|e| Error::io(&text_path, e))?;
            print!("{}", report.to_text());
        }
        Command::Pipeline => {
            let outcome = pipeline::run_pipeline(cfg)?;
            print!("{}", outcome.analysis.report.to_text());
            info!("artifacts written to {}", outcome.run_dir.display());
        }
        Command::Synth { out } => {
            let manifest = synth::synth_multicenter_dataset(&cfg.synth, &out)?;
            info!("wrote {}", manifest.display());
        }
    }
    Ok(())
}

fn read_input(path: &Path) -> Result<FeatureMatrix> {
    if !path.is_file() {
        return Err(Error::Config(format!("input {} does not exist", path.display())));
    }
    io::read_features_csv(path)
}
