mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use vswarm_core::attribution::AttributionTarget;
use vswarm_core::{Error, Result};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "vswarm",
    version,
    about = "Vision-based drone swarm: flocking simulation, imitation learning, and analysis"
)]
struct Cli {
    /// Experiment config file (flat `key = value` lines; missing keys
    /// default with a notice)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the seed from the config
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Bound on worker threads (default: number of cores)
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Allow replacing an existing results directory
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test datasets by recording the position-based expert
    Gen {
        /// Directory for train.vsfd, val.vsfd, test.vsfd and the manifest
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train the velocity-regression network by behavioral cloning
    Train {
        /// Directory holding train.vsfd and val.vsfd
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Directory for model.vsnn, epochs.csv and the manifest
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Fly one closed-loop episode and record trajectory and metrics
    Run {
        /// Directory for trajectory.csv, metrics.csv and the manifest
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Network checkpoint (required when controller = vision)
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Report a checkpoint's mean squared error on a held-out dataset
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// A .vsfd file, typically the test split
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
    },
    /// Render a saliency overlay for one dataset sample
    Saliency {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Dataset supplying the input image
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Sample index within the dataset
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Output scalar to attribute
        #[arg(long, value_enum, default_value_t = Target::Norm)]
        target: Target,
        /// Overlay opacity in [0, 1]
        #[arg(long, default_value_t = 0.5)]
        alpha: f32,
        /// Output overlay (binary PPM)
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Also write the raw feature-resolution map as CSV
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
        /// Also write the source image as PGM
        #[arg(long, value_name = "PATH")]
        input_pgm: Option<PathBuf>,
    },
    /// Run the full experiment grid into a results directory
    Suite {
        /// Results directory (refused if it exists, unless --force)
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Adds the vision-controller cells when given
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Inspect a dataset header, optionally dumping one sample image
    Stats {
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Sample index to dump as PGM
        #[arg(long, requires = "dump_out")]
        dump: Option<usize>,
        /// Where to write the dumped image
        #[arg(long, requires = "dump", value_name = "PATH")]
        dump_out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Target {
    Norm,
    X,
    Y,
    Z,
}

impl From<Target> for AttributionTarget {
    fn from(t: Target) -> Self {
        match t {
            Target::Norm => AttributionTarget::Norm,
            Target::X => AttributionTarget::X,
            Target::Y => AttributionTarget::Y,
            Target::Z => AttributionTarget::Z,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 configuration, 2 I/O, 3 data format, 4 numeric failure, 5 infeasible
/// spawn.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::InvalidIndex { .. }
        | Error::DuplicateAgentId { .. }
        | Error::UndefinedMetric { .. } => 1,
        Error::Io { .. } => 2,
        Error::BadMagic { .. }
        | Error::VersionMismatch { .. }
        | Error::Truncated { .. }
        | Error::ShapeMismatch { .. } => 3,
        Error::NonFinite { .. } | Error::Divergence { .. } | Error::DegenerateGeometry => 4,
        Error::InfeasibleSpawn { .. } => 5,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }

    let mut cfg = match &cli.config {
        Some(path) => {
            let mut notices = Vec::new();
            let cfg = ExperimentConfig::load(path, &mut notices)?;
            for n in &notices {
                eprintln!("note: {n}");
            }
            cfg
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }

    match cli.command {
        Command::Gen { out } => commands::cmd_gen(&cfg, &out),
        Command::Train { data, out } => commands::cmd_train(&cfg, &data, &out),
        Command::Run { out, checkpoint } => {
            commands::cmd_run(&cfg, checkpoint.as_deref(), &out)
        }
        Command::Eval { checkpoint, data } => commands::cmd_eval(&checkpoint, &data),
        Command::Saliency {
            checkpoint,
            data,
            index,
            target,
            alpha,
            out,
            csv,
            input_pgm,
        } => commands::cmd_saliency(&commands::SaliencyArgs {
            checkpoint,
            data,
            index,
            target: target.into(),
            alpha,
            out,
            csv,
            input_pgm,
        }),
        Command::Suite { out, checkpoint } => {
            commands::cmd_suite(&cfg, checkpoint.as_deref(), &out, cli.force)
        }
        Command::Stats { data, dump, dump_out } => {
            let dump = dump.zip(dump_out.as_deref());
            commands::cmd_stats(&data, dump)
        }
    }
}
