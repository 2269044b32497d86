//! `cca edit`: one editing session on one image.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cca_core::generator::UserRequest;
use cca_core::orchestrator::{Session, SessionError, Transcript};
use cca_core::raster::Raster;
use clap::Args;
use sha2::{Digest, Sha256};

use crate::config::{CliConfig, SessionFlags, WiringFlags};
use crate::exit::{CliResult, Exit, Failure};
use crate::wiring;

#[derive(Debug, Args)]
pub struct EditArgs {
    /// Input picture (PNG)
    #[arg(long)]
    pub image: PathBuf,
    /// What to do to it, in plain words
    #[arg(long)]
    pub instruction: String,
    /// Short description of the input; asked of the captioner when absent
    #[arg(long)]
    pub caption: Option<String>,
    /// Parent directory of the session directory
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Session directory name; derived from the input and request when absent
    #[arg(long)]
    pub session: Option<String>,
    /// on|off
    #[arg(long, value_parser = clap::builder::BoolishValueParser::new(), hide_possible_values = true)]
    pub early_stop: Option<bool>,
    #[command(flatten)]
    pub session_flags: SessionFlags,
    #[command(flatten)]
    pub wiring: WiringFlags,
    /// Print the resolved configuration and exit
    #[arg(long)]
    pub dry_run: bool,
}

pub fn session_name(input_digest: &str, instruction: &str, seed: u64) -> String {
    let h = Sha256::digest(format!("{input_digest}\n{instruction}\n{seed}"));
    format!("session-{}", &hex::encode(h)[..12])
}

/// One line per round: winner, checks met, tool calls.
pub fn summary(t: &Transcript) -> String {
    let mut out = String::new();
    for r in &t.rounds {
        let calls: usize = r.agents.iter().map(|a| a.trace.steps.len()).sum();
        let w = &r.winner;
        let _ = writeln!(
            out,
            "round {}: winner agent {}{} ({}/{} checks), {} tool calls{}",
            r.round,
            w.agent_id,
            if r.from_memory { format!(" from round {}", w.round) } else { String::new() },
            w.feedback.satisfied_count,
            w.feedback.total_checks,
            calls,
            if r.stop { ", stop" } else { "" },
        );
    }
    out
}

pub fn session_exit(e: &SessionError) -> Exit {
    match e {
        SessionError::Config(_) | SessionError::EmptyGoal => Exit::Config,
        SessionError::Llm(cca_core::llm::LlmError::ReplayMiss { .. }) => Exit::ReplayMiss,
        SessionError::Llm(_) | SessionError::Questions(_) => Exit::Backend,
        SessionError::Aborted(_) => Exit::Aborted,
        SessionError::Io(_) => Exit::Io,
    }
}

fn caption_fallback(image: &Path) -> String {
    let stem = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if stem.is_empty() {
        "an image".into()
    } else {
        format!("an image of {}", stem.replace(['_', '-'], " "))
    }
}

pub fn run(args: EditArgs, cfg: CliConfig) -> CliResult {
    if args.dry_run {
        print!("{}", cfg.render());
        return Ok(());
    }
    if args.instruction.trim().is_empty() {
        return Err(Failure::msg(Exit::Config, "the instruction is empty"));
    }
    // everything that can fail on configuration happens before the
    // session directory exists
    let backend = wiring::backend(&cfg)?;
    let input = Raster::load(&args.image).map_err(|e| Failure::msg(Exit::Io, format!("{}: {e}", args.image.display())))?;
    let pool = wiring::adapters(&cfg)?;
    let registry = wiring::reachable_registry(&cfg, &pool)?;
    let evaluator = wiring::evaluator(&cfg, &pool, &input)?;
    let caption = args
        .caption
        .clone()
        .or_else(|| evaluator.captioner.is_none().then(|| caption_fallback(&args.image)));

    let mut config = cfg.file.session.clone();
    let name = args
        .session
        .clone()
        .unwrap_or_else(|| session_name(&input.digest(), &args.instruction, config.seed));
    let dir = args.out.join(&name);
    config.output_dir = Some(dir.clone());
    let session = Session {
        config,
        registry: &registry,
        backend,
        adapters: pool,
        evaluator,
        routing: wiring::routing(&cfg),
    };
    let request = UserRequest { goal: args.instruction.clone(), caption };
    match session.run(input, request) {
        Ok(res) => {
            print!("{}", summary(&res.transcript));
            println!("final image: {}", dir.join("final.png").display());
            println!("transcript: {}", dir.join("transcript.json").display());
            Ok(())
        }
        Err(f) => {
            if let Some(t) = &f.transcript {
                eprint!("{}", summary(t));
                eprintln!("partial transcript: {}", dir.join("transcript.json").display());
            }
            Err(Failure::msg(session_exit(&f.error), f.error))
        }
    }
}
