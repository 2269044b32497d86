//! Turns a resolved configuration into live backends, adapters and judges.

use std::sync::Arc;
use std::time::Duration;

use cca_core::adapter::{AdapterPool, HttpTransport, StdioTransport, Transport};
use cca_core::bench::{NoisyFormat, RuleBackend, RuleConfig, WellFormedBackend};
use cca_core::discriminator::{AdapterAesthetic, AdapterVqa, PropertyOracle, Vqa};
use cca_core::llm::{ChatBackend, ModelRouting, RemoteBackend, RemoteConfig, ScriptedBackend};
use cca_core::orchestrator::Evaluator;
use cca_core::raster::Raster;
use cca_core::registry::{Registry, ToolKind};

use crate::config::{CliConfig, ENV_API_KEY};
use crate::exit::{CliResult, Exit, Failure};

pub fn backend(cfg: &CliConfig) -> CliResult<Arc<dyn ChatBackend>> {
    let llm = &cfg.file.llm;
    let seed = cfg.file.session.seed;
    let spec = llm.backend.as_str();
    Ok(match spec {
        "remote" => {
            let key = cfg.api_key.clone().ok_or_else(|| {
                Failure::msg(Exit::Config, format!("the remote backend needs an API key in {ENV_API_KEY}"))
            })?;
            let mut rc = RemoteConfig::new(llm.base_url.clone(), key);
            rc.timeout = Duration::from_secs(llm.timeout_secs.max(1));
            rc.max_attempts = llm.max_attempts.max(1);
            Arc::new(RemoteBackend::new(rc))
        }
        "rule" => Arc::new(RuleBackend::new(RuleConfig { seed, ..Default::default() })),
        "well-formed" => Arc::new(WellFormedBackend),
        "noisy" => Arc::new(NoisyFormat::new(Arc::new(WellFormedBackend), seed)),
        _ => {
            let Some(path) = spec.strip_prefix("scripted:") else {
                return Err(Failure::msg(Exit::Config, format!("unknown backend `{spec}`")));
            };
            let text = std::fs::read_to_string(path).map_err(|e| Failure::msg(Exit::Io, format!("{path}: {e}")))?;
            let script = ScriptedBackend::from_jsonl(&text).map_err(|e| Failure::msg(Exit::Config, format!("{path}: {e}")))?;
            Arc::new(script)
        }
    })
}

pub fn routing(cfg: &CliConfig) -> ModelRouting {
    ModelRouting {
        strong: cfg.file.llm.strong_model.clone(),
        fast: cfg.file.llm.fast_model.clone(),
    }
}

/// Starts every configured adapter.
pub fn adapters(cfg: &CliConfig) -> CliResult<AdapterPool> {
    let mut pool = AdapterPool::new();
    pool.timeout = Some(Duration::from_millis(cfg.file.session.adapter_timeout_ms));
    for (name, a) in &cfg.file.adapters {
        let t: Arc<dyn Transport> = match (&a.command, &a.url) {
            (Some(cmd), _) => Arc::new(
                StdioTransport::spawn(cmd)
                    .map_err(|e| Failure::msg(Exit::Backend, format!("adapter `{name}`: {e}")))?,
            ),
            (None, Some(url)) => Arc::new(HttpTransport::new(url.clone())),
            (None, None) => return Err(Failure::msg(Exit::Config, format!("adapter `{name}` has no command or url"))),
        };
        pool.insert(name.clone(), t);
    }
    Ok(pool)
}

/// The configured registry, unfiltered.
pub fn full_registry(cfg: &CliConfig) -> Result<Registry, String> {
    match &cfg.file.tools.dir {
        Some(dir) => Registry::load_dir(dir).map_err(|e| e.to_string()),
        None => Ok(Registry::shipped()),
    }
}

/// Builtins plus the external tools whose endpoint has an adapter, so the
/// planner is never offered a tool nothing can run.
pub fn reachable_registry(cfg: &CliConfig, pool: &AdapterPool) -> CliResult<Registry> {
    let full = full_registry(cfg).map_err(|e| Failure::msg(Exit::Config, e))?;
    let mut reg = Registry::new();
    for t in full.tools() {
        let keep = match &t.kind {
            ToolKind::Builtin => true,
            ToolKind::External { endpoint } => pool.get(endpoint).is_some(),
        };
        if keep {
            reg.register(t.clone()).map_err(|e| Failure::msg(Exit::Config, e))?;
        }
    }
    Ok(reg)
}

fn endpoint<'a>(pool: &'a AdapterPool, name: &str) -> CliResult<&'a Arc<dyn Transport>> {
    pool.get(name)
        .ok_or_else(|| Failure::msg(Exit::Config, format!("adapter `{name}` is not configured")))
}

pub fn evaluator(cfg: &CliConfig, pool: &AdapterPool, input: &Raster) -> CliResult<Evaluator> {
    let ev = &cfg.file.evaluator;
    let timeout = pool.timeout();
    let vqa: Arc<dyn Vqa> = match ev.vqa.strip_prefix("adapter:") {
        Some(ep) => Arc::new(AdapterVqa { transport: endpoint(pool, ep)?.clone(), timeout }),
        None if ev.vqa == "property-oracle" => Arc::new(PropertyOracle::new(Arc::new(input.clone()))),
        None => return Err(Failure::msg(Exit::Config, format!("unknown evaluator `{}`", ev.vqa))),
    };
    let aesthetic = match &ev.aesthetic {
        Some(ep) => Some(Arc::new(AdapterAesthetic { transport: endpoint(pool, ep)?.clone(), timeout }) as _),
        None => None,
    };
    let captioner = match &ev.captioner {
        Some(ep) => Some(Arc::new(AdapterVqa { transport: endpoint(pool, ep)?.clone(), timeout }) as _),
        None => None,
    };
    Ok(Evaluator { vqa, aesthetic, captioner })
}
