//! Command-line front end. Every subcommand is a thin wrapper over library calls.

use std::ffi::OsString;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::Device;
use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_model, Checkpoint};
use crate::dataset::{dataset_stats, tile_dataset, write_dataset, Manifest};
use crate::error::{Error, Result};
use crate::io::{read_mask, read_quality_map, read_rgb, write_edge_map, write_quality_map};
use crate::metrics::{format_report_table, Aggregation, ReportAccumulator};
use crate::quality::derive_quality_map;
use crate::train::{assess, split_train_val, train_loop, CsvLogger, Trainer, TrainerConfig};

#[derive(Debug, Parser)]
#[command(
    name = "pqm",
    version,
    about = "Per-pixel quality maps for segmentation masks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train from a manifest; writes the best checkpoint and CSV logs into --out.
    Train(TrainArgs),
    /// Predict a quality map and an edge map for one image and mask.
    Assess(AssessArgs),
    /// Score predicted quality maps against reference ones.
    Eval(EvalArgs),
    /// Class distribution, EIB@k and mask mIoU of a dataset.
    Stats(StatsArgs),
    /// Derive a reference quality map from a ground-truth and a predicted mask.
    #[command(name = "pqm-gt")]
    PqmGt(PqmGtArgs),
    /// Cut every sample of a manifest into square tiles.
    Tile(TileArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Resume from this checkpoint instead of starting fresh.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AssessArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Mask to assess.
    #[arg(long)]
    pred: PathBuf,
    /// Quality map output; the edge map goes next to it as `<stem>_edge.png`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Predicted quality map, or a directory of them.
    #[arg(long)]
    pred: PathBuf,
    /// Reference quality map, or a directory with the same file names.
    #[arg(long)]
    gt: PathBuf,
    /// Average per-image scores instead of pooling counts.
    #[arg(long)]
    per_image: bool,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(i64).range(0..))]
    k: i64,
}

#[derive(Debug, Args)]
struct PqmGtArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TileArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    tile: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    drop_empty: bool,
}

/// Parses `argv` (including the program name) and runs it. Returns the exit status.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match dispatch(cli.cmd, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Train(a) => train(a, out),
        Command::Assess(a) => {
            let model = load_model(&a.checkpoint, &Device::Cpu)?;
            let (q, e) = assess(&model, &read_rgb(&a.image)?, &read_mask(&a.pred)?)?;
            write_quality_map(&a.out, &q)?;
            let edge = edge_path(&a.out);
            write_edge_map(&edge, &e)?;
            writeln!(out, "wrote {} and {}", a.out.display(), edge.display())?;
            Ok(())
        }
        Command::Eval(a) => eval(a, out),
        Command::Stats(a) => {
            let samples = Manifest::load(&a.manifest)?.load_samples()?;
            write!(out, "{}", dataset_stats(&samples, a.k)?.table())?;
            Ok(())
        }
        Command::PqmGt(a) => {
            let q = derive_quality_map(&read_mask(&a.gt)?, &read_mask(&a.pred)?)?;
            write_quality_map(&a.out, &q)?;
            let c = q.counts();
            writeln!(out, "TP={} FP={} TN={} FN={}", c[0], c[1], c[2], c[3])?;
            Ok(())
        }
        Command::Tile(a) => {
            let samples = Manifest::load(&a.manifest)?.load_samples()?;
            let mut tiles = Vec::new();
            for s in &samples {
                tiles.extend(tile_dataset(s, a.tile as usize, a.drop_empty)?);
            }
            let path = write_dataset(&a.out, &tiles)?;
            writeln!(
                out,
                "{} tiles from {} samples -> {}",
                tiles.len(),
                samples.len(),
                path.display()
            )?;
            Ok(())
        }
    }
}

pub fn edge_path(quality_out: &Path) -> PathBuf {
    let stem = quality_out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    quality_out.with_file_name(format!("{stem}_edge.png"))
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let dev = Device::Cpu;
    let mut trainer = match (&a.checkpoint, &a.config) {
        (Some(ck), _) => Checkpoint::load(ck, &dev)?.trainer(&dev)?,
        (None, cfg) => {
            let mut cfg = match cfg {
                Some(p) => TrainerConfig::load(p)?,
                None => TrainerConfig::default(),
            };
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            Trainer::new(cfg, &dev)?
        }
    };
    let samples = Manifest::load(&a.manifest)?.load_samples()?;
    let (train, val) = split_train_val(samples, trainer.cfg.val_fraction)?;
    std::fs::create_dir_all(&a.out)?;
    let file = |name: &str| -> Result<BufWriter<std::fs::File>> {
        Ok(BufWriter::new(std::fs::File::create(a.out.join(name))?))
    };
    let mut logger = CsvLogger::new(file("loss.csv")?, file("epochs.csv")?);
    let outcome = train_loop(&mut trainer, &train, &val, &mut logger)?;
    drop(logger);
    let ck_path = a.out.join("best.safetensors");
    Checkpoint::from_trainer(&trainer)?.save(&ck_path)?;
    writeln!(
        out,
        "best epoch {} ({:?} {:.2}) after {} epochs; checkpoint {}",
        outcome.best_epoch,
        trainer.cfg.monitor,
        outcome.best_metric,
        outcome.epochs_run,
        ck_path.display()
    )?;
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let pairs: Vec<(PathBuf, PathBuf)> = if a.pred.is_dir() {
        let mut names: Vec<_> = std::fs::read_dir(&a.pred)?
            .filter_map(|e| e.ok().map(|e| e.file_name()))
            .filter(|n| Path::new(n).extension().is_some_and(|x| x == "png"))
            .collect();
        names.sort();
        names
            .into_iter()
            .map(|n| (a.pred.join(&n), a.gt.join(&n)))
            .collect()
    } else {
        vec![(a.pred.clone(), a.gt.clone())]
    };
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no quality maps in {}",
            a.pred.display()
        )));
    }
    let mut acc = ReportAccumulator::new();
    for (p, g) in &pairs {
        acc.add(&read_quality_map(p)?, &read_quality_map(g)?)?;
    }
    let mode = if a.per_image {
        Aggregation::PerImage
    } else {
        Aggregation::Pooled
    };
    let report = acc.finish(mode)?;
    write!(out, "{}", format_report_table([("all", &report)]))?;
    writeln!(out, "mF1={:.2} mIoU={:.2}", report.mf1, report.miou)?;
    Ok(())
}
