//! `cca bench`: synthetic session studies and the plan-format study.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use cca_core::bench::{
    ablation_configs, default_workers, early_stop_configs, gen_tasks, measure_format_success, run_benchmark,
    BenchReport, FormatMode, FormatReport, RuleConfig,
};
use cca_core::llm::Gateway;
use cca_core::registry::Registry;
use clap::{Args, ValueEnum};
use serde::Serialize;

use crate::config::{CliConfig, SessionFlags, WiringFlags};
use crate::exit::{CliResult, Exit, Failure};
use crate::wiring;

const BUNDLED_CORPUS: &str = include_str!("../../../bench/corpus/editing_prompts.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StopMatrix {
    On,
    Off,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    #[value(name = "2x2")]
    TwoByTwo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeChoice {
    Hierarchical,
    OneStage,
    Both,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Number of synthetic tasks
    #[arg(long, default_value_t = 20)]
    pub tasks: usize,
    /// Longest tool sequence a task may need (1 to 4)
    #[arg(long, default_value_t = 3)]
    pub max_len: usize,
    /// Compare sessions with and without early stopping
    #[arg(long, value_enum)]
    pub early_stop: Option<StopMatrix>,
    /// Collaboration x competition matrix
    #[arg(long, value_enum)]
    pub ablation: Option<Ablation>,
    /// Measure plan-format success over a prompt corpus (bundled when no path)
    #[arg(long, num_args = 0..=1, value_name = "PATH")]
    pub format_corpus: Option<Option<PathBuf>>,
    /// Prompting style measured by --format-corpus
    #[arg(long, value_enum, default_value = "both")]
    pub format_mode: ModeChoice,
    /// Chance that the rule planner's first plan is flawed
    #[arg(long)]
    pub flaw_rate: Option<f64>,
    /// Chance that a reflection repairs the plan outright
    #[arg(long)]
    pub fix_rate: Option<f64>,
    /// Worker threads [default: available cores]
    #[arg(long)]
    pub workers: Option<usize>,
    /// Directory for bench.json and bench.txt
    #[arg(long, default_value = "runs/bench")]
    pub out: PathBuf,
    #[command(flatten)]
    pub session_flags: SessionFlags,
    #[command(flatten)]
    pub wiring: WiringFlags,
    /// Print the resolved configuration and exit
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Serialize)]
struct BenchOutput<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    sessions: Option<&'a BenchReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    format: Vec<FormatReport>,
}

fn format_table(reports: &[FormatReport]) -> String {
    let mut out = format!("{:<14} {:>8} {:>10} {:>8}\n", "mode", "prompts", "successes", "rate");
    for r in reports {
        let mode = match r.mode {
            FormatMode::Hierarchical => "hierarchical",
            FormatMode::OneStage => "one-stage",
        };
        out.push_str(&format!("{:<14} {:>8} {:>10} {:>7.1}%\n", mode, r.prompts, r.successes, r.rate * 100.0));
    }
    out
}

fn corpus(path: Option<&Path>) -> CliResult<Vec<String>> {
    let prompts = match path {
        Some(p) => cca_core::bench::load_corpus(p).map_err(|e| Failure::msg(Exit::Io, format!("{}: {e}", p.display())))?,
        None => BUNDLED_CORPUS
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect(),
    };
    if prompts.is_empty() {
        return Err(Failure::msg(Exit::Config, "the prompt corpus is empty"));
    }
    Ok(prompts)
}

pub fn run(args: BenchArgs, cfg: CliConfig) -> CliResult {
    if args.dry_run {
        print!("{}", cfg.render());
        return Ok(());
    }
    let base = cfg.file.session.clone();
    let seed = base.seed;
    let mut configs = Vec::new();
    match args.early_stop {
        Some(StopMatrix::Both) => configs.extend(early_stop_configs(&base)),
        Some(StopMatrix::On) => configs.extend(early_stop_configs(&base).into_iter().take(1)),
        Some(StopMatrix::Off) => configs.extend(early_stop_configs(&base).into_iter().skip(1)),
        None => {}
    }
    if args.ablation.is_some() {
        configs.extend(ablation_configs(&base));
    }
    if configs.is_empty() && args.format_corpus.is_none() {
        configs.push(("configured".to_string(), base.clone()));
    }
    let mut rule = RuleConfig { seed, ..Default::default() };
    for (v, field, name) in [(args.flaw_rate, &mut rule.flaw_rate, "flaw"), (args.fix_rate, &mut rule.fix_rate, "fix")] {
        if let Some(v) = v {
            if !(0.0..=1.0).contains(&v) {
                return Err(Failure::msg(Exit::Config, format!("--{name}-rate must lie in [0, 1]")));
            }
            *field = v;
        }
    }
    if args.tasks == 0 && !configs.is_empty() {
        return Err(Failure::msg(Exit::Config, "--tasks must be at least 1"));
    }

    // the format study needs its backend before anything is written
    let format_backend = match &args.format_corpus {
        Some(path) => Some((wiring::backend(&cfg)?, corpus(path.as_deref())?)),
        None => None,
    };

    let sessions = (!configs.is_empty()).then(|| {
        let tasks = gen_tasks(seed, args.tasks, args.max_len);
        run_benchmark(&tasks, &configs, &rule, args.workers.unwrap_or_else(default_workers), false)
    });
    let mut format = Vec::new();
    if let Some((backend, prompts)) = format_backend {
        let mut gateway = Gateway::new(Arc::clone(&backend));
        gateway.seed = Some(seed);
        gateway.routing = wiring::routing(&cfg);
        let registry = Registry::shipped();
        let modes = match args.format_mode {
            ModeChoice::Hierarchical => vec![FormatMode::Hierarchical],
            ModeChoice::OneStage => vec![FormatMode::OneStage],
            ModeChoice::Both => vec![FormatMode::Hierarchical, FormatMode::OneStage],
        };
        for mode in modes {
            format.push(measure_format_success(&gateway, &registry, &prompts, mode));
        }
    }

    let mut table = String::new();
    if let Some(r) = &sessions {
        table.push_str(&r.table());
    }
    if !format.is_empty() {
        if !table.is_empty() {
            table.push('\n');
        }
        table.push_str(&format_table(&format));
    }
    print!("{table}");

    let output = BenchOutput { sessions: sessions.as_ref(), format };
    std::fs::create_dir_all(&args.out).map_err(|e| Failure::msg(Exit::Io, format!("{}: {e}", args.out.display())))?;
    let json = serde_json::to_string_pretty(&output).expect("bench output serializes");
    for (name, body) in [("bench.json", json.as_str()), ("bench.txt", table.as_str())] {
        let p = args.out.join(name);
        std::fs::write(&p, body).map_err(|e| Failure::msg(Exit::Io, format!("{}: {e}", p.display())))?;
    }
    Ok(())
}
