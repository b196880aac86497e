//! Command-line interface of the `dragpart` binary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dragpart_core::motion::{SearchGrid, SearchOptions};
use dragpart_core::DragSet;
use dragpart_diffusion::{sample, Checkpoint, SampleOptions};
use serde::Serialize;

use crate::config::{ExperimentConfig, Split};
use crate::error::{Error, Result};
use crate::experiment::{checkpoint_hash, log_progress, split_records, train_experiment};
use crate::motion::{estimate, table_csv, EstimateRequest, MotionObject, TargetMode, WorldDrag};
use crate::segmentation::{segment_image, sweep, sweep_examples, Features, SweepOutput};
use crate::{dataset, eval, imageio, service};

#[derive(Debug, Parser)]
#[command(name = "dragpart", version, about = "Drag-conditioned part-level generation at desk scale")]
pub struct Cli {
    /// Experiment seed; overrides the config's model, training and sampling seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Experiment config (TOML); built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output path of the verb's artifact.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Newline-delimited JSON logs on stderr.
    #[arg(long, global = true)]
    pub log_json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate or validate datasets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a checkpoint; writes the checkpoint to --out and its report beside it.
    Train,
    /// Sample one edited image.
    Sample(SampleArgs),
    /// Motion analysis.
    #[command(subcommand)]
    Motion(MotionCommand),
    /// Moving-part segmentation of one image, or a sweep.
    Segment(SegmentArgs),
    /// PSNR/SSIM evaluation on a split.
    Eval(EvalArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Write a split to --out.
    Gen {
        #[arg(long, default_value = "train")]
        split: Split,
    },
    /// Run every consistency oracle over a dataset directory.
    Validate { dir: PathBuf },
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// DragSet JSON file.
    #[arg(long)]
    pub drags: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub cfg: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum MotionCommand {
    /// Estimate the motion of one object.
    Estimate(MotionArgs),
}

#[derive(Debug, Args)]
pub struct MotionArgs {
    /// MotionObject JSON file.
    #[arg(long)]
    pub object: PathBuf,
    /// World drag JSON file `{from: [x, y], to: [x, y]}`; defaults to the truth's drag in oracle mode.
    #[arg(long)]
    pub drag: Option<PathBuf>,
    #[arg(long, default_value = "oracle")]
    pub mode: TargetMode,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub views: Option<usize>,
    /// SearchGrid JSON file; default grid over the object's bounds when absent.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub refine: Option<usize>,
    /// Dump the full objective table as CSV.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_conflicts_with_subcommands = true)]
pub struct SegmentArgs {
    #[command(subcommand)]
    pub sweep: Option<SegmentCommand>,
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub drags: Option<PathBuf>,
    /// Foreground mask PNG.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum SegmentCommand {
    /// mIoU over every (t, N_c) cell, with the shuffled-feature baseline.
    Sweep {
        #[arg(long, default_value = "test")]
        split: Split,
        /// Trained checkpoint; one-hot oracle features when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "id")]
    pub split: Split,
    /// Evaluate only the first examples.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Dataset directory listed by /v1/samples.
    #[arg(long)]
    pub samples: Option<PathBuf>,
}

pub fn init_logging(json: bool) {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into());
    let builder = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr);
    let _ = if json { builder.json().try_init() } else { builder.try_init() };
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

/// Prints `value` as JSON and writes it to `out` when given.
fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    if let Some(path) = out {
        write_bytes(path, text.as_bytes())?;
    }
    println!("{text}");
    Ok(())
}

fn require<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    v.as_deref().ok_or_else(|| Error::Config(format!("missing --{flag}")))
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
        cfg.sample.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_drags(path: &Path, capacity: usize) -> Result<DragSet> {
    let field: service::DragsField = read_json(path)?;
    let set = match field {
        service::DragsField::Set { drags, .. } | service::DragsField::List(drags) => DragSet::new(capacity, drags)?,
    };
    Ok(set)
}

/// Runs a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    let cfg = load_config(&cli)?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Dataset(DatasetCommand::Gen { split }) => {
            let (world, seed) = cfg.split(*split);
            let root = out.ok_or_else(|| Error::Config("dataset gen needs --out <dir>".into()))?;
            let manifest = dataset::generate(&world, seed, root)?;
            println!("{}", serde_json::to_string_pretty(&serde_json::json!({
                "root": root.display().to_string(),
                "split": split,
                "animations": manifest.animations.len(),
                "config_hash": manifest.config_hash,
            }))?);
        }
        Command::Dataset(DatasetCommand::Validate { dir }) => {
            let report = dataset::validate(dir)?;
            emit(&report, out)?;
            if let Some(failed) = report.first_failure() {
                return Err(Error::Validation { oracle: failed.oracle.clone(), detail: failed.detail.clone() });
            }
        }
        Command::Train => {
            let path = out.ok_or_else(|| Error::Config("train needs --out <checkpoint>".into()))?;
            let (ckpt, report) = train_experiment(&cfg, &mut log_progress(100))?;
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
            }
            ckpt.save(path)?;
            write_bytes(&path.with_extension("report.json"), &serde_json::to_vec(&report)?)?;
            let n = report.steps.len();
            let window = (n / 20).max(1);
            emit(
                &serde_json::json!({
                    "checkpoint": path.display().to_string(),
                    "checkpoint_hash": checkpoint_hash(&ckpt)?,
                    "config_hash": cfg.hash()?,
                    "steps": n,
                    "initial_loss": report.mean_loss(0, window),
                    "final_loss": report.mean_loss(n.saturating_sub(window), n),
                    "drop_rate": report.drop_rate(0, n),
                    "texture_rate": report.texture_rate(report.texture_start, n),
                }),
                None,
            )?;
        }
        Command::Sample(a) => {
            let ckpt = Checkpoint::load(&a.checkpoint)?;
            let y = imageio::read_image(&a.image)?;
            let drags = read_drags(&a.drags, ckpt.config().drag_capacity)?;
            let opts = SampleOptions { steps: a.steps.unwrap_or(cfg.sample.steps), guidance: a.cfg.unwrap_or(cfg.sample.guidance), seed: cfg.sample.seed };
            let png = imageio::encode_image(&sample(&ckpt, &y, &drags, &opts)?)?;
            if let Some(path) = out {
                write_bytes(path, &png)?;
            }
            emit(&serde_json::json!({ "sha256": crate::hash::sha256_hex(&png), "seed": opts.seed, "steps": opts.steps, "cfg": opts.guidance }), None)?;
        }
        Command::Motion(MotionCommand::Estimate(a)) => {
            let object: MotionObject = read_json(&a.object)?;
            let drag = match (&a.drag, object.truth) {
                (Some(p), _) => read_json::<WorldDrag>(p)?,
                (None, Some(truth)) => object.drag_for(&truth)?,
                (None, None) => return Err(Error::Config("missing --drag".into())),
            };
            let ckpt = a.checkpoint.as_ref().map(Checkpoint::load).transpose()?;
            let grid = a.grid.as_deref().map(read_json::<SearchGrid>).transpose()?;
            let est = estimate(&EstimateRequest {
                object: &object,
                drag,
                mode: a.mode,
                views: a.views.unwrap_or(cfg.motion.views),
                grid,
                search: SearchOptions { refine_rounds: a.refine.unwrap_or(cfg.motion.refine_rounds), keep_table: a.table.is_some() },
                seed: cfg.seed,
                checkpoint: ckpt.as_ref(),
                sample: cfg.sample,
            })?;
            if let Some(path) = &a.table {
                write_bytes(path, table_csv(&est).as_bytes())?;
            }
            let summary = dragpart_core::motion::MotionEstimate { table: None, ..est };
            emit(&summary, out)?;
        }
        Command::Segment(a) => match &a.sweep {
            Some(SegmentCommand::Sweep { split, checkpoint }) => {
                let records = split_records(&cfg, *split)?;
                let examples = sweep_examples(&cfg, &records)?;
                let ckpt = checkpoint.as_ref().map(Checkpoint::load).transpose()?;
                let (features, mode) = match &ckpt {
                    Some(c) => (Features::Trained(c), "trained"),
                    None => (Features::Oracle, "oracle"),
                };
                let report = sweep(features, &examples, &cfg.segment, cfg.seed)?;
                let output = SweepOutput {
                    config_hash: cfg.hash()?,
                    checkpoint_hash: ckpt.as_ref().map(checkpoint_hash).transpose()?,
                    mode: mode.into(),
                    table: report.to_table(),
                    report,
                };
                eprintln!("{}", output.table);
                emit(&output, out)?;
            }
            None => {
                let ckpt = Checkpoint::load(require(&a.checkpoint, "checkpoint")?)?;
                let y = imageio::read_image(require(&a.image, "image")?)?;
                let drags = read_drags(require(&a.drags, "drags")?, ckpt.config().drag_capacity)?;
                let mask = imageio::read_mask(require(&a.mask, "mask")?)?;
                let t = a.t.unwrap_or(cfg.segment.t);
                let k = a.clusters.unwrap_or(cfg.segment.clusters);
                let result = segment_image(&ckpt, &y, &drags, &mask, t, k, cfg.seed, &cfg.segment)?;
                if let Some(path) = out {
                    write_bytes(path, &imageio::encode_mask(&result.mask)?)?;
                    write_bytes(&path.with_extension("json"), &serde_json::to_vec_pretty(&result)?)?;
                }
                emit(&serde_json::json!({ "t": result.t, "n_clusters": result.n_clusters, "selected": result.selected, "pixels": result.mask.count() }), None)?;
            }
        },
        Command::Eval(a) => {
            let ckpt = Checkpoint::load(&a.checkpoint)?;
            let report = eval::evaluate(&cfg, &ckpt, a.split, a.limit)?;
            emit(&report, out)?;
        }
        Command::Serve(a) => {
            let ckpt = Checkpoint::load(&a.checkpoint)?;
            let addr: std::net::SocketAddr =
                format!("{}:{}", a.host, a.port).parse().map_err(|e| Error::Config(format!("bad address: {e}")))?;
            let state = service::AppState::new(ckpt, cfg, a.samples.clone())?;
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(service::serve(state, addr))?;
        }
    }
    Ok(0)
}

/// Structured error line written to stderr on failure.
pub fn error_json(e: &Error) -> serde_json::Value {
    let kind = match e {
        Error::Validation { .. } => "validation",
        Error::Config(_) => "config",
        Error::File { .. } | Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Image(_) => "image",
        Error::Core(_) => "input",
        Error::Diffusion(_) => "model",
    };
    let mut v = serde_json::json!({ "error": e.to_string(), "kind": kind });
    if let Error::Validation { oracle, .. } = e {
        v["oracle"] = serde_json::Value::String(oracle.clone());
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_verb() {
        let ok = [
            "dragpart dataset gen --split ood --out d",
            "dragpart dataset validate d",
            "dragpart --seed 3 train --out c.ckpt",
            "dragpart sample --checkpoint c --image i.png --drags d.json --steps 10 --cfg 2",
            "dragpart motion estimate --object o.json --drag d.json --mode generator --checkpoint c --views 2 --grid g.json",
            "dragpart segment --image i --drags d --mask m --checkpoint c --t 200 --clusters 4 --seed 1",
            "dragpart segment sweep --split test --out report.json",
            "dragpart eval --checkpoint c --split id --log-json",
            "dragpart serve --checkpoint c --port 9000",
        ];
        for line in ok {
            Cli::try_parse_from(line.split_whitespace()).unwrap_or_else(|e| panic!("{line}: {e}"));
        }
        assert!(Cli::try_parse_from(["dragpart", "frobnicate"]).is_err());
        assert!(Cli::try_parse_from("dragpart eval --checkpoint c --split dev".split_whitespace()).is_err());
    }

    #[test]
    fn seed_flag_overrides_every_stream() {
        let cli = Cli::try_parse_from("dragpart --seed 9 train".split_whitespace()).unwrap();
        let cfg = load_config(&cli).unwrap();
        assert_eq!((cfg.seed, cfg.train.seed, cfg.sample.seed), (9, 9, 9));
    }

    #[test]
    fn validation_errors_name_the_oracle() {
        let e = Error::Validation { oracle: "manifest".into(), detail: "x".into() };
        assert_eq!(error_json(&e)["oracle"], "manifest");
    }
}
