//! `cca tools`: inspect and validate the tool registry.

use std::collections::BTreeMap;
use std::io::Write as _;

use cca_core::adapter::{conformance_check, ConformanceProbe};
use cca_core::raster::Raster;
use cca_core::registry::{ArgKind, Registry, ToolKind, ToolSpec};
use clap::{Args, Subcommand};

use crate::config::{CliConfig, WiringFlags};
use crate::exit::{CliResult, Exit, Failure};
use crate::wiring;

#[derive(Debug, Args)]
pub struct ToolsArgs {
    #[command(subcommand)]
    pub action: ToolsAction,
}

#[derive(Debug, Subcommand)]
pub enum ToolsAction {
    /// Print the tools the planner sees
    List {
        /// Print the planner view as JSON
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        wiring: WiringFlags,
    },
    /// Check registry invariants and the conformance of configured adapters
    Validate {
        #[command(flatten)]
        wiring: WiringFlags,
    },
}

impl ToolsAction {
    pub fn wiring(&self) -> &WiringFlags {
        match self {
            ToolsAction::List { wiring, .. } | ToolsAction::Validate { wiring } => wiring,
        }
    }
}

fn load(cfg: &CliConfig) -> CliResult<Registry> {
    wiring::full_registry(cfg).map_err(|e| Failure::msg(Exit::Validation, e))
}

fn kind_label(t: &ToolSpec) -> String {
    match &t.kind {
        ToolKind::Builtin => "builtin".into(),
        ToolKind::External { endpoint } => format!("external:{endpoint}"),
    }
}

pub fn run(args: ToolsArgs, cfg: CliConfig) -> CliResult {
    match args.action {
        ToolsAction::List { json, .. } => list(&cfg, json),
        ToolsAction::Validate { .. } => validate(&cfg),
    }
}

fn list(cfg: &CliConfig, json: bool) -> CliResult {
    let reg = load(cfg)?;
    let view = reg.planner_view().map_err(|e| Failure::msg(Exit::Validation, e))?;
    if json {
        println!("{}", serde_json::to_string_pretty(&view).expect("view serializes"));
        return Ok(());
    }
    let mut text = String::new();
    for (entry, spec) in view.entries.iter().zip(reg.tools()) {
        text.push_str(&format!("{:<24} {:<20} {}\n", entry.name, kind_label(spec), entry.description));
    }
    // a closed pipe (`cca tools list | head`) is not an error
    let _ = std::io::stdout().write_all(text.as_bytes());
    Ok(())
}

/// A request every adapter for `tool` should be able to answer.
fn probe_for(tool: &ToolSpec, image: &str) -> Result<ConformanceProbe, String> {
    let mut args = BTreeMap::new();
    let mut input_paths = Vec::new();
    for a in &tool.args {
        if a.kind == ArgKind::Path {
            input_paths.push(image.to_string());
            continue;
        }
        let raw = match a.kind {
            ArgKind::Integer => "1".to_string(),
            ArgKind::Real => "1.0".to_string(),
            ArgKind::Box => "0,0,4,4".to_string(),
            ArgKind::Enum => a.choices.first().cloned().unwrap_or_default(),
            _ if a.name == "question" => "Describe the image in detail.".to_string(),
            _ => "a small red hat".to_string(),
        };
        if !a.required && a.default.is_some() {
            continue;
        }
        let value = a.parse_value(&raw).map_err(|e| format!("{}: {e}", a.name))?;
        args.insert(a.name.clone(), value.to_json());
    }
    Ok(ConformanceProbe { tool: tool.name.clone(), args, input_paths })
}

fn validate(cfg: &CliConfig) -> CliResult {
    let reg = load(cfg)?;
    let view = reg.planner_view().map_err(|e| Failure::msg(Exit::Validation, e))?;
    println!("registry: {} tools, planner view {} bytes", reg.len(), view.serialized_len());

    let pool = wiring::adapters(cfg)?;
    let mut failed = Vec::new();
    for t in reg.tools() {
        if let ToolKind::External { endpoint } = &t.kind {
            if pool.get(endpoint).is_none() {
                println!("  {:<24} endpoint `{endpoint}` not configured", t.name);
            }
        }
    }
    let scratch = tempfile::tempdir().map_err(|e| Failure::new(Exit::Io, e))?;
    let image = scratch.path().join("probe.png");
    let probe_img = Raster::filled(16, 12, &[200, 40, 40]).expect("valid probe image");
    probe_img.save_png(&image).map_err(|e| Failure::msg(Exit::Io, e))?;
    let image = image.to_string_lossy().into_owned();

    for (endpoint, transport) in pool.endpoints() {
        let tool = reg
            .tools()
            .iter()
            .find(|t| matches!(&t.kind, ToolKind::External { endpoint: e } if e == endpoint));
        let Some(tool) = tool else {
            println!("adapter `{endpoint}`: no registered tool uses this endpoint");
            continue;
        };
        let probe = probe_for(tool, &image).map_err(|e| Failure::msg(Exit::Validation, e))?;
        let report = conformance_check(transport.as_ref(), &probe, pool.timeout());
        println!("adapter `{endpoint}` ({}) probed with {}:", report.adapter, tool.name);
        for c in &report.checks {
            let mark = if c.passed { "pass" } else { "FAIL" };
            println!("  {mark} {:<20} {}", c.name, c.detail);
            if let Some(w) = &c.warning {
                println!("       warning: {w}");
            }
        }
        if !report.passed() {
            failed.push(endpoint.clone());
        }
    }
    if !failed.is_empty() {
        return Err(Failure::msg(Exit::Validation, format!("conformance failed for {}", failed.join(", "))));
    }
    println!("ok");
    Ok(())
}
