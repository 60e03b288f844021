//! `bevkit` — batch front end wiring the library into reproducible
//! pipelines: normalization-map caching, BEV encoding, box recovery,
//! evaluation, augmentation, simulation and a self-test harness.

mod commands;
mod config;
mod util;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{CliOverrides, Settings};

/// Exit codes: 0 success, 1 usage error, 2 data error.
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Data(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Usage-level failure (missing setting, nonexistent input path).
pub fn usage_err<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

#[derive(Parser)]
#[command(
    name = "bevkit",
    about = "LiDAR bird's-eye-view encoding, box recovery, evaluation and simulation",
    version
)]
struct Cli {
    /// TOML run configuration; flags override file values.
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,
    /// Bound on worker threads for frame-level parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for randomized components (oracle noise, dropout).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[arg(long, global = true)]
    cloud_dir: Option<std::path::PathBuf>,
    #[arg(long, global = true)]
    label_dir: Option<std::path::PathBuf>,
    #[arg(long, global = true)]
    calib_dir: Option<std::path::PathBuf>,
    #[arg(long, global = true)]
    sensor_spec: Option<std::path::PathBuf>,
    #[arg(long, global = true)]
    normmap_cache: Option<std::path::PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<std::path::PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build (or reuse) the normalization-map cache and print its stats.
    Normmap,
    /// Encode every .bin in the cloud dir into a 3-channel BEV PNG.
    Encode,
    /// Turn a detections JSON-lines file into oriented 3D boxes.
    Recover {
        /// Input detections (JSON lines).
        #[arg(long)]
        detections: std::path::PathBuf,
        /// Output boxes file; defaults to <output_dir>/boxes.jsonl.
        #[arg(long)]
        out: Option<std::path::PathBuf>,
    },
    /// Score recovered boxes against KITTI-style labels.
    Eval {
        /// Recovered boxes (JSON lines with box3d fields).
        #[arg(long)]
        boxes: std::path::PathBuf,
        /// JSON report path; defaults to <output_dir>/eval_report.json.
        #[arg(long)]
        report: Option<std::path::PathBuf>,
        /// Relax the car threshold to IoU 0.5.
        #[arg(long)]
        car_iou_05: bool,
    },
    /// Encode a single cloud file to a PNG.
    Render {
        #[arg(long)]
        input: std::path::PathBuf,
        #[arg(long)]
        out: std::path::PathBuf,
    },
    /// Ray-cast a scene file into a KITTI-format cloud, labels and calib.
    Simulate {
        /// Scene description (TOML).
        #[arg(long)]
        scene: std::path::PathBuf,
        /// Also write zero/low-noise oracle detections next to the cloud.
        #[arg(long)]
        detections: bool,
    },
    /// Write flipped/rotated BEVs (and annotations when labels exist).
    Augment,
    /// Run the built-in oracle-agreement and round-trip suites.
    Selftest,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own message; help/version are not errors
            let benign = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if benign {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_USAGE)
            };
        }
    };

    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
        {
            eprintln!("error: could not configure {jobs} worker threads: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(msg) => eprintln!("error: {msg}"),
                CliError::Data(err) => eprintln!("error: {err:#}"),
            }
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let overrides = CliOverrides {
        cloud_dir: cli.cloud_dir,
        label_dir: cli.label_dir,
        calib_dir: cli.calib_dir,
        sensor_spec: cli.sensor_spec,
        normmap_cache: cli.normmap_cache,
        output_dir: cli.output_dir,
    };
    let settings = Settings::load(cli.config.as_deref(), overrides, cli.seed)?;

    match cli.command {
        Command::Normmap => commands::normmap::run(&settings),
        Command::Encode => commands::encode::run(&settings),
        Command::Recover { detections, out } => {
            commands::recover::run(&settings, &detections, out.as_deref())
        }
        Command::Eval {
            boxes,
            report,
            car_iou_05,
        } => commands::eval::run(&settings, &boxes, report.as_deref(), car_iou_05),
        Command::Render { input, out } => commands::render::run(&settings, &input, &out),
        Command::Simulate { scene, detections } => {
            commands::simulate::run(&settings, &scene, detections)
        }
        Command::Augment => commands::augment::run(&settings),
        Command::Selftest => commands::selftest::run(),
    }
}
