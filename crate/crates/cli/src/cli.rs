//! Argument parsing and dispatch.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{self, apply_seed, load_scenario};
use crate::error::CliError;
use crate::trace::Format;

#[derive(Debug, Parser)]
#[command(name = "darktrap", version, about = "Feedback stabilization of a particle at an optical double-well apex")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long, short = 's')]
    pub scenario: Option<String>,
    /// Output directory, created if missing.
    #[arg(long, short = 'o', default_value = "out")]
    pub out_dir: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trace file format.
    #[arg(long, value_enum, default_value_t = Format::Bin)]
    pub format: Format,
    /// Also write SVG plots.
    #[arg(long)]
    pub plots: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize the scenario's LQG controllers and export them.
    Design(Common),
    /// Run the scenario and write one trace per controller.
    Simulate(Common),
    /// Evaluate the stabilization criteria on trace files.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Trace files (binary or CSV).
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
    /// Run the controller comparison behind a figure: fig4 or fig5.
    Reproduce {
        #[command(flatten)]
        common: Common,
        figure: String,
    },
}

fn scenario(common: &Common, default: &str) -> Result<crate::scenario::Scenario, CliError> {
    let mut s = load_scenario(common.scenario.as_deref().unwrap_or(default))?;
    apply_seed(&mut s, common.seed);
    Ok(s)
}

pub fn dispatch(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Design(c) => commands::design(&scenario(&c, "default")?, &c.out_dir),
        Command::Simulate(c) => commands::simulate_cmd(&scenario(&c, "default")?, &c.out_dir, c.format, c.plots),
        Command::Analyze { common, traces } => {
            commands::analyze(&traces, &scenario(&common, "default")?, &common.out_dir, common.plots)
        }
        Command::Reproduce { common, figure } => {
            commands::reproduce(&figure, &scenario(&common, "drift")?, &common.out_dir, common.plots).map(|(s, _)| s)
        }
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.into()
        }
    }
}
