//! Pipeline entry points for the strider quadruped controller.
//!
//! The documented order is `gen-data`, `train-imitate`,
//! `collect-adapter-data`, `train-adapter`, `finetune`, `evaluate`; `navigate`,
//! `serve` and `verify` run on their own.

pub mod commands;
pub mod config;
pub mod serve;
pub mod verify;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::ffi::OsString;
use std::path::PathBuf;
use strider_core::trainer::Objective;

#[derive(Debug, Parser)]
#[command(name = "strider", version, about = "Train, evaluate and steer a physics-simulated quadruped.")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON config file; keys not given keep their preset defaults.
    #[arg(long, global = true, env = "STRIDER_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Sets one config key, e.g. `--set imitation.iterations=50`. Repeatable;
    /// applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, global = true, env = "STRIDER_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true, env = "STRIDER_CHECKPOINT_DIR")]
    pub checkpoint_dir: Option<PathBuf>,
    #[arg(long, global = true, env = "STRIDER_REPORT_DIR")]
    pub report_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClipChoice {
    /// One minute across every speed band.
    Speed,
    /// One minute of left and right turns at the heading speed.
    Heading,
    /// One minute of pace only.
    Pace,
}

impl ClipChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            ClipChoice::Speed => "speed",
            ClipChoice::Heading => "heading",
            ClipChoice::Pace => "pace",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Speed,
    Heading,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Speed => Objective::Speed,
            ObjectiveArg::Heading => Objective::Heading,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a reference clip into `<data>/<kind>.jsonl`.
    GenData {
        #[arg(long, value_enum)]
        kind: ClipChoice,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Imitation stage: trains the low-level gating and the primitives.
    TrainImitate {
        #[arg(long, value_enum)]
        objective: ObjectiveArg,
        /// Reference clip; defaults to `<data>/<objective>.jsonl`.
        #[arg(long)]
        clip: Option<PathBuf>,
        /// Stops once an evaluation reaches this mean per-step reward.
        #[arg(long)]
        stop_at: Option<f64>,
    },
    /// Rolls out the imitation policy and records gating weights.
    CollectAdapterData {
        #[arg(long, value_enum)]
        objective: ObjectiveArg,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        clip: Option<PathBuf>,
        /// Defaults to `adapter.records` from the config.
        #[arg(long)]
        records: Option<usize>,
        /// Also stores the low-level control input of every record.
        #[arg(long)]
        with_c_low: bool,
    },
    /// Trains the high-level gating on collected data.
    TrainAdapter {
        #[arg(long, value_enum)]
        objective: ObjectiveArg,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Overrides `adapter.gan.lambda_adv`; 0 gives plain L1 regression.
        #[arg(long)]
        lambda_adv: Option<f64>,
        /// Output directory name under the checkpoint directory.
        #[arg(long)]
        name: Option<String>,
    },
    /// Command-conditioned stage: trains the high-level gating only.
    Finetune {
        #[arg(long, value_enum)]
        objective: ObjectiveArg,
        /// Imitation checkpoint providing primitives and low-level gating.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Adapter checkpoint that initialises and anchors the high-level gating.
        #[arg(long, conflicts_with = "no_adapter")]
        adapter: Option<PathBuf>,
        /// Start the high-level gating from scratch without an anchor.
        #[arg(long)]
        no_adapter: bool,
        #[arg(long)]
        clip: Option<PathBuf>,
    },
    /// Scripted recordings and the metric report for a checkpoint.
    Evaluate {
        #[arg(long, value_enum)]
        objective: ObjectiveArg,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Clip used for start states and end-effector comparisons.
        #[arg(long)]
        clip: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        recordings: usize,
    },
    /// Plans a grid path and turns it into a command script.
    ///
    /// Map files hold one row per line using `#` wall, `.` free, `S` start,
    /// `G` goal and `I` item (walkable).
    Navigate {
        #[arg(long)]
        map: PathBuf,
        /// Overrides `nav.cruise`.
        #[arg(long)]
        cruise: Option<f64>,
        /// Runs the script through this fine-tuned heading checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Runs the simulation in real time and streams state frames.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, env = "STRIDER_PORT")]
        port: Option<u16>,
        /// WebSocket port; 0 disables the WebSocket listener.
        #[arg(long, env = "STRIDER_WS_PORT")]
        ws_port: Option<u16>,
        #[arg(long)]
        host: Option<String>,
        /// Exit after this many control ticks.
        #[arg(long)]
        max_ticks: Option<u64>,
    },
    /// Runs the composition, gradient, reward and physics self-checks.
    Verify,
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit status: 0 on success, 1 when a run fails and 2
/// for usage or configuration errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(commands::Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
