//! `cca`: run editing sessions, benchmarks, registry checks and replays.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod bench;
mod config;
mod edit;
mod exit;
mod replay;
mod tools;
mod wiring;

use config::{SessionFlags, WiringFlags};
use exit::CliResult;

#[derive(Debug, Parser)]
#[command(name = "cca", version, about = "Multi-agent, tool-based image editing")]
struct Cli {
    /// TOML configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Edit one image following an instruction
    Edit(edit::EditArgs),
    /// Run the synthetic benchmarks
    Bench(bench::BenchArgs),
    /// List or validate the tool registry
    Tools(tools::ToolsArgs),
    /// Re-run a recorded session offline and compare the results
    Replay(replay::ReplayArgs),
    /// Serve the built-in stand-in adapter on stdin/stdout
    #[command(hide = true)]
    StubAdapter,
}

fn env(key: &str) -> Option<String> {
    std::env::var(key).ok()
}

fn resolve(path: Option<&PathBuf>, session: &SessionFlags, wiring: &WiringFlags) -> CliResult<config::CliConfig> {
    let file = config::load_file(path.map(PathBuf::as_path))?;
    config::resolve(file, &env, session, wiring)
}

fn run(cli: Cli) -> CliResult {
    let path = cli.config.as_ref();
    match cli.command {
        Command::Edit(args) => {
            let session = SessionFlags { early_stop: args.early_stop, ..args.session_flags.clone() };
            let cfg = resolve(path, &session, &args.wiring)?;
            edit::run(args, cfg)
        }
        Command::Bench(args) => {
            let cfg = resolve(path, &args.session_flags, &args.wiring)?;
            bench::run(args, cfg)
        }
        Command::Tools(args) => {
            let cfg = resolve(path, &SessionFlags::default(), args.action.wiring())?;
            tools::run(args, cfg)
        }
        Command::Replay(args) => {
            let cfg = resolve(path, &SessionFlags::default(), &args.wiring)?;
            replay::run(args, cfg)
        }
        Command::StubAdapter => {
            let stdin = std::io::stdin();
            cca_core::adapter::stub::stub_worker()
                .serve(stdin.lock(), std::io::stdout().lock())
                .map_err(|e| exit::Failure::new(exit::Exit::Io, e))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("cca: {f}");
            ExitCode::from(f.exit.code())
        }
    }
}
