//! `gap`: synthesize data, build a RepSet, predict, evaluate, and visualize.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use gap_core::active::RepSet;
use gap_core::pipeline::{
    create_repset, evaluate_split, featurize_manifest, predict_image, render_colormap,
    trace_json, write_synthetic_dataset, PipelineConfig,
};
use gap_core::raster_io::{load_labels, load_patch, save_labels, DatasetManifest};

#[derive(Debug, Parser)]
#[command(name = "gap", version, about = "Graph active-learning pipeline for water and sediment segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic train/test dataset and its manifest.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Cache per-image feature matrices.
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the representative set from the training split.
    Repset {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-image active-learning traces as JSON.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Segment one patch with a RepSet.
    Predict {
        #[arg(long)]
        repset: PathBuf,
        #[arg(long)]
        patch: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also render the prediction as a PPM image.
        #[arg(long)]
        ppm: Option<PathBuf>,
    },
    /// Predict and score every test image of a manifest.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        repset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Relabel sediment as land before scoring.
        #[arg(long)]
        collapse_sediment: bool,
    },
    /// Render a label mask as a PPM image.
    Viz {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p)
            .with_context(|| format!("reading config {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let out = cfg.output_path(out);
            let manifest = write_synthetic_dataset(&cfg.synth, &out)?;
            log::info!(
                "wrote {} images and manifest.json to {}",
                manifest.entries.len(),
                out.display()
            );
        }
        Command::Featurize {
            manifest,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let manifest = DatasetManifest::load(&manifest)?;
            let written = featurize_manifest(&manifest, &cfg.feature, &cfg.output_path(out))?;
            log::info!("wrote {} feature files", written.len());
        }
        Command::Repset {
            manifest,
            config,
            out,
            trace,
        } => {
            let cfg = load_config(config.as_deref())?;
            let manifest = DatasetManifest::load(&manifest)?;
            let (repset, selections) = create_repset(&manifest, &cfg)?;
            write(&cfg.output_path(out), repset.encode())?;
            if let Some(trace) = trace {
                write(&cfg.output_path(trace), trace_json(&selections)?)?;
            }
            log::info!(
                "RepSet of {} records from {} images",
                repset.len(),
                selections.len()
            );
        }
        Command::Predict {
            repset,
            patch,
            config,
            out,
            ppm,
        } => {
            let cfg = load_config(config.as_deref())?;
            let repset = RepSet::load(&repset)?;
            let patch = load_patch(&patch)?;
            let pred = predict_image(&repset, &patch, &cfg)?;
            let out = cfg.output_path(out);
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            save_labels(&pred.classes, &out)?;
            if let Some(ppm) = ppm {
                write(&cfg.output_path(ppm), render_colormap(&pred.classes))?;
            }
        }
        Command::Eval {
            manifest,
            repset,
            config,
            out,
            collapse_sediment,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.collapse_sediment |= collapse_sediment;
            let manifest = DatasetManifest::load(&manifest)?;
            let repset = RepSet::load(&repset)?;
            let report = evaluate_split(&manifest, &repset, &cfg)?;
            write(&cfg.output_path(out), report.to_json()?)?;
            log::info!("aggregate OA {:?}", report.aggregate.oa);
        }
        Command::Viz { labels, out } => {
            let mask = load_labels(&labels)?;
            write(&out, render_colormap(&mask))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
