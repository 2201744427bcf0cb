//! `recnet`: projection, training, descriptor transmission and evaluation
//! from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::LevelFilter;
use recnet::model::ProfileKind;
use recnet::training::Trajectory;
use recnet::transmission::QuantizationMode;

use crate::config::CliConfig;

#[derive(Parser, Debug)]
#[command(name = "recnet", version, about = "LiDAR range-image compression and place recognition")]
struct Cli {
    /// TOML settings file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads. 1 makes every output reproducible bit for bit.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    /// Debug log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Errors only.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Profile {
    Kitti,
    Mini,
}

impl From<Profile> for ProfileKind {
    fn from(p: Profile) -> Self {
        match p {
            Profile::Kitti => ProfileKind::Kitti,
            Profile::Mini => ProfileKind::Mini,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    F32,
    F16,
    U8,
}

impl From<Mode> for QuantizationMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::F32 => QuantizationMode::Float32,
            Mode::F16 => QuantizationMode::Float16,
            Mode::U8 => QuantizationMode::Uint8,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TrajectoryArg {
    Line,
    Loop,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic posed sequence (velodyne/*.bin, poses.txt, times.txt).
    Synthetic(SyntheticArgs),
    /// Project scans to range images (.rimg).
    Project(ProjectArgs),
    /// Train a model on a sequence directory.
    Train(TrainArgs),
    /// Encode a sequence into a descriptor stream (.recb).
    Encode(EncodeArgs),
    /// Decode a descriptor stream into range images.
    Decode(DecodeArgs),
    /// Turn range images back into XYZ point files.
    Unproject(UnprojectArgs),
    /// Precision/recall sweep of place recognition, as CSV.
    EvalPr(EvalPrArgs),
    /// Reconstruction similarity table, as CSV.
    EvalSsim(EvalSsimArgs),
    /// Bandwidth report for a mission manifest.
    Bandwidth(BandwidthArgs),
    /// Decode descriptors and place them in a common frame.
    ReconstructMap(ReconstructArgs),
}

#[derive(Args, Debug)]
struct SyntheticArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    scans: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    trajectory: Option<TrajectoryArg>,
    #[arg(long)]
    laps: Option<f64>,
    /// Meters between poses.
    #[arg(long)]
    spacing: Option<f64>,
    /// Seconds between scans.
    #[arg(long)]
    scan_period: Option<f64>,
}

#[derive(Args, Debug)]
struct ProjectArgs {
    /// A scan file (.bin or .xyz) or a directory of them.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Sequence directory.
    #[arg(long)]
    data: PathBuf,
    /// Receives checkpoints, loss.csv and weights.rwts.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    checkpoint_interval: Option<u64>,
    /// Checkpoint sidecar (.toml) to continue from.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Sequence directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Directory for `<scan_id>.rimg` files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct UnprojectArgs {
    /// A .rimg file or a directory of them.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalPrArgs {
    /// Map descriptors. Split by time when --queries is absent.
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Learned tail weights.
    #[arg(long, required_unless_present = "oracle_tail")]
    weights: Option<PathBuf>,
    /// Score pairs by ground-truth pose distance instead of the tail.
    #[arg(long)]
    oracle_tail: bool,
    #[arg(long)]
    thresholds: Option<usize>,
    #[arg(long)]
    gt_radius: Option<f64>,
    #[arg(long)]
    map_seconds: Option<f64>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalSsimArgs {
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    reconstructed: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    /// Row label.
    #[arg(long, default_value = "recnet")]
    method: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BandwidthArgs {
    #[arg(long, required_unless_present = "reference")]
    manifest: Option<PathBuf>,
    /// Column heading.
    #[arg(long, default_value = "Mission")]
    column: String,
    /// Print the published two-mission table instead.
    #[arg(long)]
    reference: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[arg(long)]
    descriptors: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// KITTI pose file indexed by scan id; poses inside the stream otherwise.
    #[arg(long)]
    poses: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn resolve(cli: &Cli) -> anyhow::Result<CliConfig> {
    let mut cfg = match &cli.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(p) = cli.profile {
        cfg.profile = Some(p.into());
    }
    cfg.train.profile = cfg.profile();

    match &cli.command {
        Command::Synthetic(a) => {
            let s = &mut cfg.scene;
            if let Some(v) = a.scans {
                s.scans = v;
            }
            if let Some(v) = a.trajectory {
                s.trajectory = match v {
                    TrajectoryArg::Line => Trajectory::Line,
                    TrajectoryArg::Loop => Trajectory::Loop,
                };
            }
            if let Some(v) = a.laps {
                s.laps = v;
            }
            if let Some(v) = a.spacing {
                s.spacing = v;
            }
            if let Some(v) = a.scan_period {
                s.scan_period = v;
            }
            if let Some(v) = a.seed {
                cfg.synthetic.seed = v;
            }
        }
        Command::Train(a) => {
            let t = &mut cfg.train;
            if let Some(v) = a.steps {
                t.steps = v;
            }
            if let Some(v) = a.seed {
                t.seed = v;
            }
            if let Some(v) = a.lr {
                t.learning_rate = v;
            }
            if let Some(v) = a.batch_size {
                t.batch_size = v;
            }
            if let Some(v) = a.checkpoint_interval {
                t.checkpoint_interval = v;
            }
            t.checkpoint_dir = Some(a.out.clone());
            t.log_path = Some(a.out.join("loss.csv"));
        }
        Command::Encode(a) => {
            if let Some(m) = a.mode {
                cfg.encode.mode = m.into();
            }
        }
        Command::EvalPr(a) => {
            if let Some(v) = a.thresholds {
                cfg.eval.thresholds = v;
            }
            if let Some(v) = a.gt_radius {
                cfg.eval.gt_radius = v;
            }
            if let Some(v) = a.map_seconds {
                cfg.eval.map_seconds = v;
            }
        }
        Command::EvalSsim(a) => {
            if let Some(v) = a.k {
                cfg.eval.k = v;
            }
            if let Some(v) = a.radius {
                cfg.eval.radius = v;
            }
        }
        _ => {}
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = resolve(&cli)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global()?;
    }
    log::info!("resolved configuration:\n{}", cfg.to_toml());

    match cli.command {
        Command::Synthetic(a) => commands::synthetic(&cfg, &a.out),
        Command::Project(a) => commands::project(&cfg, &a.input, &a.out),
        Command::Train(a) => commands::train(&cfg, &a.data, &a.out, a.resume.as_deref()),
        Command::Encode(a) => commands::encode(&cfg, &a.weights, &a.data, &a.out),
        Command::Decode(a) => commands::decode(&cfg, &a.weights, &a.input, &a.out),
        Command::Unproject(a) => commands::unproject(&a.input, &a.out),
        Command::EvalPr(a) => commands::eval_pr(
            &cfg,
            &a.db,
            a.queries.as_deref(),
            if a.oracle_tail { None } else { a.weights.as_deref() },
            a.out.as_deref(),
        ),
        Command::EvalSsim(a) => commands::eval_ssim(&cfg, &a.original, &a.reconstructed, &a.method, a.out.as_deref()),
        Command::Bandwidth(a) => commands::bandwidth(a.manifest.as_deref(), &a.column, a.reference, a.out.as_deref()),
        Command::ReconstructMap(a) => commands::reconstruct_map(&cfg, &a.descriptors, &a.weights, a.poses.as_deref(), &a.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => LevelFilter::Error,
        (false, 0) => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
