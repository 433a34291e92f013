use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use egohoi_cli::commands::{self, SimulateArgs};
use egohoi_cli::config::PipelineConfig;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "egohoi",
    about = "Multi-camera hand annotation and hand-object interaction detection pipeline",
    version
)]
struct Cli {
    /// Pipeline configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for frame-parallel stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic rig capture: cameras.json, detections.json, gt.json.
    Simulate(SimulateCli),
    /// Recover camera poses from cube corner observations.
    Calibrate {
        /// Output cameras file.
        #[arg(long, default_value = "cameras_calibrated.json")]
        out: PathBuf,
        /// Random-orientation restarts per camera.
        #[arg(long, default_value_t = 8)]
        restarts: usize,
    },
    /// Triangulate object-removed frames and transfer labels to their
    /// with-object partners.
    AnnotatePair {
        #[arg(long, default_value = "annotations.json")]
        out: PathBuf,
    },
    /// Chroma-key, composite, occlude and jitter a frame set.
    Augment {
        /// Override the configured backgrounds directory.
        #[arg(long)]
        backgrounds: Option<PathBuf>,
        #[arg(long, default_value = "augmented")]
        out: PathBuf,
    },
    /// Classify every frame of a quadruple directory and emit the smoothed
    /// timeline and interaction segments.
    Detect {
        #[arg(long, default_value = "detect_out")]
        out: PathBuf,
    },
    /// Re-segment an existing timeline.csv.
    Segment {
        #[arg(long)]
        timeline: PathBuf,
        /// Frames per second; falls back to the config value.
        #[arg(long)]
        fps: Option<f64>,
        #[arg(long, default_value = "segments.json")]
        out: PathBuf,
    },
    /// PCK curve and AUC between two keypoint files.
    EvalPck {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        max_threshold: f64,
        /// Curve resolution (number of threshold intervals).
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value = "pck_curve.csv")]
        out_curve: PathBuf,
    },
    /// Segmental F1 at an IoU threshold plus frame accuracy.
    EvalSeg {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    /// Train the interaction head on a labeled quadruple directory.
    TrainFusion {
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SimulateCli {
    #[arg(long, default_value_t = 3)]
    cams: usize,
    #[arg(long, default_value_t = 10)]
    frames: usize,
    #[arg(long, default_value_t = 21)]
    joints: usize,
    /// Detection pixel noise sigma.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Per-joint dropout on object-removed frames.
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    /// Per-joint dropout on with-object frames (defaults to --dropout).
    #[arg(long)]
    dropout_with: Option<f64>,
    #[arg(long, default_value_t = 0.08)]
    cube_edge: f64,
    /// Fix the camera distance in meters instead of sampling 0.5-0.8.
    #[arg(long)]
    radius: Option<f64>,
    /// Also emit a labeled fusion cue suite with this many samples.
    #[arg(long, default_value_t = 0)]
    fusion: usize,
    #[arg(long, default_value_t = 64)]
    fusion_size: u32,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.augment.seed = seed;
        config.train.seed = seed;
    }
    Ok(config)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let jobs = cli.jobs;
    match &cli.command {
        Command::Simulate(args) => {
            let config = load_config(&cli)?;
            let seed = cli.seed.unwrap_or(config.seed);
            commands::run_simulate(&SimulateArgs {
                seed,
                cams: args.cams,
                frames: args.frames,
                joints: args.joints,
                sigma: args.sigma,
                dropout: args.dropout,
                dropout_with: args.dropout_with,
                cube_edge: args.cube_edge,
                radius: args.radius,
                fusion: args.fusion,
                fusion_size: args.fusion_size,
                out: args.out.clone(),
            })
        }
        Command::Calibrate { out, restarts } => {
            let config = load_config(&cli)?;
            commands::run_calibrate(&config, *restarts, out)
        }
        Command::AnnotatePair { out } => {
            let config = load_config(&cli)?;
            commands::with_jobs(jobs, || commands::run_annotate_pair(&config, out))
        }
        Command::Augment { backgrounds, out } => {
            let mut config = load_config(&cli)?;
            if let Some(dir) = backgrounds {
                anyhow::ensure!(dir.exists(), "backgrounds directory {} does not exist", dir.display());
                config.paths.backgrounds = Some(dir.clone());
            }
            let seed = cli.seed.unwrap_or(config.augment.seed);
            commands::with_jobs(jobs, || commands::run_augment(&config, seed, out))
        }
        Command::Detect { out } => {
            let config = load_config(&cli)?;
            commands::with_jobs(jobs, || commands::run_detect(&config, out))
        }
        Command::Segment { timeline, fps, out } => {
            let config = load_config(&cli)?;
            commands::run_segment(fps.unwrap_or(config.fps), timeline, out)
        }
        Command::EvalPck {
            pred,
            gt,
            max_threshold,
            steps,
            out_curve,
        } => commands::run_eval_pck(pred, gt, *max_threshold, *steps, out_curve).map(|_| ()),
        Command::EvalSeg { pred, gt, iou, out } => {
            commands::run_eval_seg(pred, gt, *iou, out).map(|_| ())
        }
        Command::TrainFusion { out } => {
            let config = load_config(&cli)?;
            let seed = cli.seed.unwrap_or(config.train.seed);
            commands::run_train_fusion(&config, seed, out)
        }
    }
}
