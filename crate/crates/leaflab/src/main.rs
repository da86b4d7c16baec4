use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use leaflab::pipeline::{self, Command as PipelineCommand};
use leaflab::report;
use leaflab::scenario::Scenario;

/// Numerical laboratory for kernel foliations of exact presymplectic forms
/// under torus actions.
#[derive(Parser)]
#[command(name = "leaflab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Catalog id (`example1`, `example2`) or path to a scenario TOML file.
    #[arg(long)]
    scenario: String,
    /// Write the report (JSON; CSV for `trace`) here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the scenario's random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-path overrides, e.g. `--set manifold.levels.0=9.0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the torus-action hypotheses and the structural identities.
    Verify(RunArgs),
    /// Locate the extremal critical points of S_1 and certify their leaves.
    FindLeaves(RunArgs),
    /// Trace one leaf and emit the point cloud as CSV.
    Trace(RunArgs),
    /// Run the full classification pipeline.
    Classify(RunArgs),
}

impl Command {
    fn split(&self) -> (PipelineCommand, &RunArgs) {
        match self {
            Command::Verify(a) => (PipelineCommand::Verify, a),
            Command::FindLeaves(a) => (PipelineCommand::FindLeaves, a),
            Command::Trace(a) => (PipelineCommand::Trace, a),
            Command::Classify(a) => (PipelineCommand::Classify, a),
        }
    }
}

fn load_scenario(args: &RunArgs) -> leaflab::Result<Scenario> {
    let mut overrides = args.set.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("sampling.seed={seed}"));
    }
    Scenario::load(&args.scenario, &overrides)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = cli.command.split();

    let scenario = match load_scenario(args) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    let output = pipeline::run(command, &scenario);
    let rendered = report::to_pretty_string(&output.report);

    if command == PipelineCommand::Trace {
        if let Some(csv) = &output.csv {
            match &args.out {
                Some(path) => {
                    if let Err(e) = std::fs::write(path, csv) {
                        eprintln!("error: failed to write {}: {e}", path.display());
                        return ExitCode::from(2);
                    }
                }
                None => print!("{csv}"),
            }
        }
        eprint!("{rendered}");
    } else {
        print!("{rendered}");
        if let Some(path) = &args.out {
            if let Err(e) = std::fs::write(path, &rendered) {
                eprintln!("error: failed to write {}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
    }

    ExitCode::from(output.exit_code.clamp(0, 255) as u8)
}
