use std::path::PathBuf;
use std::process::ExitCode;

use candor_core::gateway::StubScript;
use candor_harness::fuzz::fuzz_events_with;
use candor_harness::goldens::{check_golden, export_goldens, golden_flows};
use candor_harness::routing::verify_live_routing;
use candor_harness::sweep::option_sweep_with;
use candor_harness::{run_session, Exec, HarnessError, InvariantReport, PickPolicy, SessionScript};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "candor-harness", about = "Scripted and fuzzed checks for the chat simulator")]
struct Cli {
    /// Run batch work on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Drive one full session against the stub provider.
    Run {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// appropriate, wrong, random:<seed> or indexed:<i,i,...>
        #[arg(long, default_value = "random:1")]
        policy: String,
        #[arg(long)]
        stub_script: Option<PathBuf>,
        /// Write the session transcript here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip sending drafts at continue gates.
        #[arg(long)]
        no_probe: bool,
    },
    /// Random event walks against the engine.
    Fuzz {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        iterations: u64,
    },
    /// Export the reference flow files.
    Goldens {
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate option sets and measure display balance.
    Sweep {
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Replay a session with live routing over an in-process transport.
    Routing {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(report) => {
            match cli.format {
                Format::Text => print!("{report}"),
                Format::Json => print!("{}", report.to_json()),
            }
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: &Cli) -> Result<InvariantReport, HarnessError> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    match &cli.command {
        Command::Run {
            seed,
            policy,
            stub_script,
            out,
            no_probe,
        } => {
            let mut script = SessionScript::standard(*seed, PickPolicy::parse(policy)?);
            script.probe_gates = !no_probe;
            if let Some(path) = stub_script {
                let overlay = StubScript::load(path).map_err(|e| HarnessError::InvalidScript(e.to_string()))?;
                script.stub = script.stub.overlay(overlay.entries);
            }
            let run = run_session(&script)?;
            if let (Some(path), Some(t)) = (out, &run.transcript) {
                std::fs::write(path, t.to_json()).map_err(|e| HarnessError::io(path, e))?;
            }
            Ok(run.report)
        }
        Command::Fuzz { seed, iterations } => Ok(fuzz_events_with(*seed, *iterations, exec)?.report),
        Command::Goldens { out } => {
            let paths = export_goldens(out)?;
            let mut report = InvariantReport::new();
            for (flow, path) in golden_flows()?.iter().zip(&paths) {
                report.expect_none(&flow.flow, check_golden(flow), path.display().to_string());
            }
            Ok(report)
        }
        Command::Sweep { count, seed } => Ok(option_sweep_with(*count, *seed, exec)?.report),
        Command::Routing { seed } => Ok(verify_live_routing(*seed)?.report),
    }
}
