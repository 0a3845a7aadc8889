//! `skelact`: preprocessing, synthetic data, training, evaluation,
//! gradient checks, robustness experiments and saliency export.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 empty result,
//! 3 verification failure.

mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use skelact::dif::apply_dif;
use skelact::heads::BranchMode;
use skelact::model::{Model, ModelConfig};
use skelact::saliency::{compute_saliency, write_saliency};
use skelact::skeleton::io::{
    read_manifest, write_dataset_dir, write_manifest, ManifestEntry, MANIFEST_FILE,
};
use skelact::skeleton::{
    generate_synthetic_dataset, read_clip, resample_uniform, write_clip_file, ClipFormat, Split,
    SyntheticSpec,
};
use skelact::training::{
    evaluate, mean_by_value, run_noise_experiment, run_reduced_data_experiment, train,
    write_confusion_csv, write_experiment_csv, write_metrics_csv,
};
use skelact::verify::{gradient_suite, SUITE_TOLERANCE};

use config::RunConfig;

pub const CHECKPOINT_FILE: &str = "model.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";

#[derive(Parser)]
#[command(
    name = "skelact",
    version,
    about = "Skeleton action recognition with graph convolutions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Ntu,
}

impl From<FormatArg> for ClipFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ClipFormat::Json,
            FormatArg::Ntu => ClipFormat::Ntu,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Fusion {
    Global,
    Dfl,
    Both,
}

impl From<Fusion> for BranchMode {
    fn from(f: Fusion) -> Self {
        match f {
            Fusion::Global => BranchMode::Global,
            Fusion::Dfl => BranchMode::Dfl,
            Fusion::Both => BranchMode::Both,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentKind {
    /// Train on class-stratified fractions of the training set.
    Reduced,
    /// Train on clean data, evaluate on noisy validation copies.
    Noise,
}

#[derive(Subcommand)]
enum Command {
    /// Parse clips, optionally map them to body-local coordinates, resample, and write JSON clips.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Express every joint in the body-local frame.
        #[arg(long)]
        dif: bool,
        /// Resample every clip to this many frames; 0 keeps the original length.
        #[arg(long, default_value_t = 100)]
        resample: usize,
        /// Format of input files when the directory has no manifest.
        #[arg(long, value_enum, default_value = "json")]
        format: FormatArg,
    },
    /// Write a synthetic dataset directory with a train/val manifest.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = SyntheticSpec::default().class_count)]
        classes: usize,
        #[arg(long, default_value_t = SyntheticSpec::default().clips_per_class)]
        clips_per_class: usize,
        #[arg(long, default_value_t = SyntheticSpec::default().frames)]
        frames: usize,
        #[arg(long, default_value_t = SyntheticSpec::default().seed)]
        seed: u64,
        #[arg(long, default_value_t = 0.25)]
        val_fraction: f64,
    },
    /// Train a model; writes the checkpoint, metrics CSV and effective config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on the validation split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the checkpoint in the configured output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to the configured training branch mode.
        #[arg(long, value_enum)]
        fusion: Option<Fusion>,
    },
    /// Finite-difference check of every layer type and the full model.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scales the full-model gradients to exercise the failure path.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Run a reduced-data or noise-robustness sweep.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        kind: ExperimentKind,
    },
    /// Export input-gradient heat maps for the selected segments of one clip.
    Visualize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        clip: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Clip format; inferred from the extension when omitted.
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
    },
}

/// A command finished but produced nothing.
#[derive(Debug)]
struct EmptyResult(String);

impl fmt::Display for EmptyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for EmptyResult {}

/// A verification check did not pass.
#[derive(Debug)]
struct VerificationFailed(String);

impl fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for VerificationFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.is::<VerificationFailed>() {
        3
    } else if err.is::<EmptyResult>()
        || matches!(
            err.downcast_ref::<skelact::Error>(),
            Some(skelact::Error::EmptyDataset(_))
        )
    {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Preprocess {
            input,
            out,
            dif,
            resample,
            format,
        } => cmd_preprocess(&input, &out, dif, resample, format.into()),
        Command::Generate {
            out,
            classes,
            clips_per_class,
            frames,
            seed,
            val_fraction,
        } => {
            let spec = SyntheticSpec {
                class_count: classes,
                clips_per_class,
                frames,
                seed,
                ..SyntheticSpec::default()
            };
            let (train_set, val_set) =
                generate_synthetic_dataset(&spec)?.split_holdout(val_fraction)?;
            let written = write_dataset_dir(&out, &[&train_set, &val_set])?;
            println!("wrote {} clips to {}", written.len(), out.display());
            Ok(())
        }
        Command::Train { config } => cmd_train(&RunConfig::load(&config)?),
        Command::Eval {
            config,
            checkpoint,
            fusion,
        } => cmd_eval(
            &RunConfig::load(&config)?,
            checkpoint,
            fusion.map(Into::into),
        ),
        Command::Gradcheck { config, corrupt } => {
            let base = match config {
                Some(path) => RunConfig::load(&path)?.model,
                None => ModelConfig::new(4),
            };
            cmd_gradcheck(&base, corrupt)
        }
        Command::Experiment { config, kind } => cmd_experiment(&RunConfig::load(&config)?, kind),
        Command::Visualize {
            checkpoint,
            clip,
            out,
            format,
        } => cmd_visualize(&checkpoint, &clip, &out, format.map(Into::into)),
    }
}

fn format_of(path: &Path) -> ClipFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext == ClipFormat::Ntu.extension() => ClipFormat::Ntu,
        _ => ClipFormat::Json,
    }
}

fn cmd_preprocess(
    input: &Path,
    out: &Path,
    dif: bool,
    resample: usize,
    format: ClipFormat,
) -> Result<()> {
    ensure!(
        input.is_dir(),
        "input directory {} does not exist",
        input.display()
    );
    let same = out.exists() && std::fs::canonicalize(out)? == std::fs::canonicalize(input)?;
    ensure!(
        !same,
        "output directory must differ from the input directory"
    );

    let sources: Vec<ManifestEntry> = if input.join(MANIFEST_FILE).is_file() {
        read_manifest(input)?
    } else {
        let mut names: Vec<String> = std::fs::read_dir(input)?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| {
                Path::new(n).extension().and_then(|e| e.to_str()) == Some(format.extension())
            })
            .collect();
        names.sort();
        names
            .into_iter()
            .map(|path| ManifestEntry {
                path,
                label: None,
                split: Split::Train,
            })
            .collect()
    };

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut entries = Vec::new();
    let mut failures = 0;
    for source in &sources {
        let path = input.join(&source.path);
        let result = (|| -> skelact::Result<SkeletonOut> {
            let mut clip = read_clip(&path, format_of(&path))?;
            if source.label.is_some() {
                clip.label = source.label;
            }
            if dif {
                clip = apply_dif(&clip)?;
            }
            if resample > 0 && clip.frames() != resample {
                clip = resample_uniform(&clip, resample)?;
            }
            let name = Path::new(&source.path).with_extension("json");
            let name = name.file_name().map(PathBuf::from).unwrap_or(name);
            write_clip_file(&out.join(&name), &clip)?;
            Ok(SkeletonOut {
                name: name.to_string_lossy().into_owned(),
                label: clip.label,
            })
        })();
        match result {
            Ok(done) => entries.push(ManifestEntry {
                path: done.name,
                label: done.label,
                split: source.split,
            }),
            Err(e) => {
                log::error!("{}: {e}", path.display());
                failures += 1;
            }
        }
    }
    if entries.is_empty() {
        return Err(EmptyResult(format!("no clips were written from {}", input.display())).into());
    }
    write_manifest(out, &entries)?;
    println!("wrote {} clips to {}", entries.len(), out.display());
    if failures > 0 {
        bail!("{failures} of {} files failed", sources.len());
    }
    Ok(())
}

struct SkeletonOut {
    name: String,
    label: Option<usize>,
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let (train_set, val_set) = cfg.datasets()?;
    cfg.prepare_output()?;
    let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    log::info!(
        "training {} parameters on {} clips, validating on {}",
        model.num_params(),
        train_set.len(),
        val_set.len()
    );
    let val = (!val_set.is_empty()).then_some(&val_set);
    let records = train(&mut model, &train_set, val, &cfg.train)?;
    model.save(&cfg.output_dir.join(CHECKPOINT_FILE))?;
    write_metrics_csv(&cfg.output_dir.join(METRICS_FILE), &records)?;
    if let Some(last) = records.last() {
        println!(
            "epoch {}: train top-1 {:.4}, val top-1 {:.4}, val top-5 {:.4}",
            last.epoch, last.train_top1, last.val_top1, last.val_top5
        );
    }
    Ok(())
}

fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: Option<PathBuf>,
    fusion: Option<BranchMode>,
) -> Result<()> {
    let checkpoint = checkpoint.unwrap_or_else(|| cfg.output_dir.join(CHECKPOINT_FILE));
    ensure!(
        checkpoint.is_file(),
        "checkpoint {} does not exist",
        checkpoint.display()
    );
    let mut model = Model::load(&checkpoint)?;
    let (_, val_set) = cfg.datasets()?;
    ensure!(
        val_set.class_count == model.config().classes,
        "dataset has {} classes but the checkpoint expects {}",
        val_set.class_count,
        model.config().classes
    );
    if val_set.is_empty() {
        return Err(EmptyResult("the validation split is empty".into()).into());
    }
    let fusion = fusion.unwrap_or(cfg.train.branch_mode);
    let report = evaluate(&mut model, &val_set, fusion)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_confusion_csv(&cfg.output_dir.join(CONFUSION_FILE), &report.confusion)?;
    println!(
        "fusion {fusion}: top-1 {} top-5 {}",
        report.top1, report.top5
    );
    Ok(())
}

fn cmd_gradcheck(base: &ModelConfig, corrupt: bool) -> Result<()> {
    let results = gradient_suite(base, corrupt)?;
    println!(
        "{:<18} {:<48} {:>7} {:>11} {:>11}  status",
        "check", "tensor", "count", "max_abs", "max_rel"
    );
    let mut failed = Vec::new();
    for r in &results {
        for e in r.report.entries() {
            let ok = e.max_rel_error < SUITE_TOLERANCE;
            println!(
                "{:<18} {:<48} {:>7} {:>11.3e} {:>11.3e}  {}",
                r.check,
                e.name,
                e.count,
                e.max_abs_error,
                e.max_rel_error,
                if ok { "ok" } else { "FAIL" }
            );
        }
        if !r.passed() {
            failed.push(r.check.clone());
        }
    }
    if !failed.is_empty() {
        return Err(VerificationFailed(format!(
            "relative error at or above {SUITE_TOLERANCE:e} in: {}",
            failed.join(", ")
        ))
        .into());
    }
    println!("all {} checks passed", results.len());
    Ok(())
}

fn cmd_experiment(cfg: &RunConfig, kind: ExperimentKind) -> Result<()> {
    let (train_set, val_set) = cfg.datasets()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(EmptyResult("both dataset splits must be non-empty".into()).into());
    }
    cfg.prepare_output()?;
    let seeds = &cfg.experiment.seeds;
    let (rows, column, file) = match kind {
        ExperimentKind::Reduced => (
            run_reduced_data_experiment(
                &cfg.model,
                &cfg.train,
                &train_set,
                &val_set,
                &cfg.experiment.fractions,
                seeds,
            )?,
            "fraction",
            "reduced_data.csv",
        ),
        ExperimentKind::Noise => (
            run_noise_experiment(
                &cfg.model,
                &cfg.train,
                &train_set,
                &val_set,
                &cfg.experiment.sigmas,
                seeds,
            )?,
            "sigma",
            "noise.csv",
        ),
    };
    if rows.is_empty() {
        return Err(EmptyResult("the sweep has no values or no seeds".into()).into());
    }
    write_experiment_csv(&cfg.output_dir.join(file), column, &rows)?;
    for (x, mean) in mean_by_value(&rows) {
        println!("{column} {x}: mean top-1 {mean:.4}");
    }
    Ok(())
}

fn cmd_visualize(
    checkpoint: &Path,
    clip_path: &Path,
    out: &Path,
    format: Option<ClipFormat>,
) -> Result<()> {
    ensure!(
        checkpoint.is_file(),
        "checkpoint {} does not exist",
        checkpoint.display()
    );
    ensure!(
        clip_path.is_file(),
        "clip {} does not exist",
        clip_path.display()
    );
    let mut model = Model::load(checkpoint)?;
    let clip = read_clip(clip_path, format.unwrap_or_else(|| format_of(clip_path)))?;
    let maps = compute_saliency(&mut model, &clip)?;
    write_saliency(out, &maps)?;
    for ((seg, frames), rf) in maps
        .selected
        .iter()
        .zip(&maps.segment_frames)
        .zip(&maps.receptive_fields)
    {
        println!(
            "segment {seg}: feature frames {}..{}, input frames {}..={}",
            frames.start,
            frames.end,
            rf.start(),
            rf.end()
        );
    }
    Ok(())
}
