use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use memlab::commands::{
    cmd_backtrack, cmd_extrapolate, cmd_finetune, cmd_report, cmd_slowpoints, cmd_train, Workspace,
};
use memlab::CliResult;

/// Train small recurrent networks on delayed classification and take their
/// memory apart: locate the slow points holding each class, follow them
/// back through training, and re-train against their drift speed.
#[derive(Parser)]
#[command(name = "memlab", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment description file (TOML).
    #[arg(long, short = 'c')]
    config: PathBuf,
    /// Work on a single seed from the config's list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config's `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn workspace(self) -> CliResult<Workspace> {
        Workspace::open(&self.config, self.seed, self.out)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one network per seed and archive its checkpoints.
    Train(Common),
    /// Measure accuracy at delays beyond the trained range.
    Extrapolate {
        #[command(flatten)]
        common: Common,
        /// Delays to probe, comma separated; defaults to multiples of t_max.
        #[arg(long, value_delimiter = ',')]
        delays: Option<Vec<usize>>,
    },
    /// Locate each class's slow point and correlate speed with accuracy.
    Slowpoints(Common),
    /// Track slow points backwards through the checkpoint archive.
    Backtrack(Common),
    /// Fine-tune trained networks with the slow-point speed penalty.
    Finetune(Common),
    /// Summarize every artifact the other subcommands produced.
    Report(Common),
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(c) => cmd_train(&c.workspace()?),
        Command::Extrapolate { common, delays } => cmd_extrapolate(&common.workspace()?, delays),
        Command::Slowpoints(c) => cmd_slowpoints(&c.workspace()?),
        Command::Backtrack(c) => cmd_backtrack(&c.workspace()?),
        Command::Finetune(c) => cmd_finetune(&c.workspace()?),
        Command::Report(c) => cmd_report(&c.workspace()?),
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
