//! `ecgwave`: digitize, preprocess, transform, train, evaluate, predict.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 internal error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;

use ecgwave_core::ingest::{load_numeric_record, save_csv_record, Label};
use ecgwave_core::models::ModelKind;
use ecgwave_core::pipeline::{
    digitize_dir, evaluate, predict, preprocess_record, scalogram_image, train, BranchCount,
    DigitizeOptions, ErrorClass, PipelineError, RunConfig,
};
use ecgwave_core::synth::{toy_dataset, write_dataset, SynthConfig, ToyCounts};

#[derive(Debug, Parser)]
#[command(name = "ecgwave", version, about = "Atrial-fibrillation detection from single-lead ECG")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for data loading and transforms.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Turn rendered chart strips (PGM) into numeric records.
    Digitize {
        image_dir: PathBuf,
        /// Sampling rate assigned to the image columns.
        #[arg(long, default_value_t = 300.0)]
        fs: f64,
        #[arg(long, default_value_t = ecgwave_core::ingest::DEFAULT_TRACE_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value = "unlabeled")]
        label: Label,
    },
    /// Denoise and standardize one record.
    Preprocess {
        record: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Scalogram image of one record, as PGM and binary float grid.
    Cwt {
        record: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train a model and evaluate it on the test split.
    Train(TrainArgs),
    /// Score a labelled manifest with a checkpoint.
    Evaluate {
        checkpoint: PathBuf,
        /// Defaults to the split manifest written next to the checkpoint.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// AF probability of one record.
    Predict { checkpoint: PathBuf, record: PathBuf },
    /// Write a synthetic labelled dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Sampling rate of the record file.
    #[arg(long)]
    fs: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    model: Option<ModelKind>,
    /// "auto" or a branch count.
    #[arg(long)]
    branches: Option<BranchCount>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Side of the square scalogram image.
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    repartition_each_epoch: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 340)]
    normal_train: usize,
    #[arg(long, default_value_t = 48)]
    af_train: usize,
    #[arg(long, default_value_t = 60)]
    normal_test: usize,
    #[arg(long, default_value_t = 12)]
    af_test: usize,
    /// Seconds per record.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    #[arg(long, default_value_t = 300.0)]
    fs: f64,
}

/// Error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let code = match error.downcast_ref::<PipelineError>().map(PipelineError::class) {
            Some(ErrorClass::Config) => 1,
            Some(ErrorClass::Data) => 2,
            Some(ErrorClass::Internal) => 3,
            None if error.downcast_ref::<std::io::Error>().is_some() => 2,
            None if error.downcast_ref::<ecgwave_core::ingest::IngestError>().is_some() => 2,
            None => 3,
        };
        Self { code, error }
    }
}

fn usage(msg: String) -> Failure {
    Failure {
        code: 1,
        error: anyhow::anyhow!(msg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn base_config(cli: &Cli) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, fallback: &Path) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| fallback.to_path_buf())
}

fn run(cli: Cli) -> std::result::Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let mut cfg = base_config(&cli)?;
    match &cli.command {
        Command::Digitize {
            image_dir,
            fs,
            threshold,
            label,
        } => {
            if !(*threshold > 0.0 && *threshold <= 1.0) {
                return Err(usage(format!("--threshold {threshold} outside (0, 1]")));
            }
            let opts = DigitizeOptions {
                fs: *fs,
                threshold: *threshold,
                label: *label,
            };
            let out = out_dir(&cli, Path::new("digitized"));
            let s = digitize_dir(image_dir, &out, &opts)?;
            println!(
                "digitized {} of {} images; manifest {}; report {}",
                s.succeeded(),
                s.rows.len(),
                s.manifest.display(),
                s.report.display()
            );
        }
        Command::Preprocess { record, data } => {
            if let Some(fs) = data.fs {
                cfg.data.fs = fs;
            }
            cfg.validate()?;
            let rec = load_numeric_record(record, cfg.data.fs, Label::Unlabeled).map_err(PipelineError::from)?;
            let sig = preprocess_record(&rec, &cfg)?;
            let out = out_dir(&cli, Path::new("."));
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let path = out.join(format!("{}.std.csv", rec.id));
            save_csv_record(&path, &sig.samples).map_err(PipelineError::from)?;
            println!("{} samples at {} Hz -> {}", sig.len(), sig.fs, path.display());
        }
        Command::Cwt { record, data } => {
            if let Some(fs) = data.fs {
                cfg.data.fs = fs;
            }
            cfg.validate()?;
            let rec = load_numeric_record(record, cfg.data.fs, Label::Unlabeled).map_err(PipelineError::from)?;
            let img = scalogram_image(&preprocess_record(&rec, &cfg)?, &cfg)?;
            let out = out_dir(&cli, Path::new("."));
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let pgm = out.join(format!("{}.pgm", rec.id));
            let bin = out.join(format!("{}.scalogram", rec.id));
            img.write_pgm(&pgm).map_err(PipelineError::from)?;
            fs::write(&bin, img.to_binary()).with_context(|| format!("writing {}", bin.display()))?;
            println!("{}x{} scalogram -> {}, {}", img.height, img.width, pgm.display(), bin.display());
        }
        Command::Train(args) => {
            apply_train_args(&mut cfg, args);
            let outcome = train(&cfg)?;
            let a = &outcome.artifacts;
            println!("checkpoint {}", a.checkpoint.display());
            println!("loss log   {}", a.loss_log.display());
            println!("config     {}", a.config_snapshot.display());
            println!("partition  {}", a.partition.display());
            if let Some(r) = &outcome.test_report {
                println!("test AUROC {:.4}  AUPRC {:.4}  F1 {:.4}", r.auroc, r.auprc, r.f1);
            }
        }
        Command::Evaluate {
            checkpoint,
            manifest,
        } => {
            let ckpt_dir = checkpoint.parent().unwrap_or(Path::new("."));
            let manifest = manifest
                .clone()
                .unwrap_or_else(|| ckpt_dir.join("split_manifest.csv"));
            let out = out_dir(&cli, &ckpt_dir.join("eval"));
            let r = evaluate(checkpoint, &manifest, &out)?;
            println!(
                "AUROC {:.4}  AUPRC {:.4}  F1 {:.4}  (tp {} fp {} tn {} fn {})",
                r.auroc, r.auprc, r.f1, r.confusion.tp, r.confusion.fp, r.confusion.tn, r.confusion.r#fn
            );
            println!("report {}", out.join("report.json").display());
        }
        Command::Predict { checkpoint, record } => {
            let p = predict(checkpoint, record)?;
            println!("{}\t{:.6}\t{}", p.id, p.probability, p.label);
        }
        Command::Synth(a) => {
            let counts = ToyCounts {
                normal_train: a.normal_train,
                af_train: a.af_train,
                normal_test: a.normal_test,
                af_test: a.af_test,
            };
            if counts.total() == 0 || !(a.duration > 0.0) || !(a.fs > 0.0) {
                return Err(usage("synth needs records, a positive duration and a positive fs".into()));
            }
            let scfg = SynthConfig {
                fs: a.fs,
                duration: a.duration,
                ..Default::default()
            };
            let out = out_dir(&cli, Path::new("synthetic"));
            let m = write_dataset(&out, &toy_dataset(&counts, &scfg, cfg.seed)).map_err(PipelineError::from)?;
            info!("wrote {} records", m.entries.len());
            println!("{}", out.join("manifest.csv").display());
        }
    }
    Ok(())
}

fn apply_train_args(cfg: &mut RunConfig, a: &TrainArgs) {
    if let Some(m) = &a.manifest {
        cfg.data.manifest = Some(m.clone());
    }
    if let Some(m) = a.model {
        cfg.model = m;
    }
    if let Some(b) = a.branches {
        cfg.branches = b;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    if let Some(s) = a.image_size {
        cfg.cwt.height = s;
        cfg.cwt.width = s;
    }
    if a.repartition_each_epoch {
        cfg.train.repartition_each_epoch = true;
    }
}
