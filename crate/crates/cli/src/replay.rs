//! `cca replay`: re-run a recorded session offline and compare.

use std::path::PathBuf;
use std::sync::Arc;

use cca_core::discriminator::{ImageRef, Vqa};
use cca_core::llm::{ReplayBackend, ReplayStore};
use cca_core::orchestrator::{first_divergence, Session, Transcript};
use cca_core::raster::Raster;
use clap::Args;

use crate::config::{CliConfig, WiringFlags};
use crate::edit::{session_exit, summary};
use crate::exit::{CliResult, Exit, Failure};
use crate::wiring;

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// transcript.json of a finished or aborted session
    pub transcript: PathBuf,
    /// Where the replayed session is written; `<session>/replay` when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub wiring: WiringFlags,
}

/// Answers the caption question with what the recording saw.
struct RecordedCaption(String);

impl Vqa for RecordedCaption {
    fn name(&self) -> String {
        "recorded-caption".into()
    }

    fn answer(&self, _image: ImageRef<'_>, _question: &str) -> Result<String, String> {
        Ok(self.0.clone())
    }
}

pub fn run(args: ReplayArgs, cfg: CliConfig) -> CliResult {
    let path = &args.transcript;
    let text = std::fs::read_to_string(path).map_err(|e| Failure::msg(Exit::Io, format!("{}: {e}", path.display())))?;
    let expected = Transcript::from_json(&text).map_err(|e| Failure::msg(Exit::Schema, format!("{}: {e}", path.display())))?;
    let dir = path.parent().map(PathBuf::from).unwrap_or_default();
    let store_path = dir.join("llm.jsonl");
    if !store_path.exists() {
        return Err(Failure::msg(Exit::Io, format!("{}: replay store not found", store_path.display())));
    }
    let records = ReplayStore::load(&store_path).map_err(|e| Failure::msg(Exit::Schema, e))?;
    let input_path = dir.join("artifacts").join("input.png");
    let input = Raster::load(&input_path).map_err(|e| Failure::msg(Exit::Io, format!("{}: {e}", input_path.display())))?;
    if input.digest() != expected.input_digest {
        return Err(Failure::msg(Exit::Divergence, "input image does not match the transcript digest"));
    }

    let pool = wiring::adapters(&cfg)?;
    let registry = wiring::reachable_registry(&cfg, &pool)?;
    let mut evaluator = wiring::evaluator(&cfg, &pool, &input)?;
    if evaluator.vqa.name() != expected.evaluator {
        return Err(Failure::msg(
            Exit::Config,
            format!(
                "the recording was judged by `{}` but `{}` is configured",
                expected.evaluator,
                evaluator.vqa.name()
            ),
        ));
    }
    evaluator.captioner = Some(Arc::new(RecordedCaption(expected.caption.clone())));

    let out = args.out.clone().unwrap_or_else(|| dir.join("replay"));
    let mut config = expected.config.clone();
    config.output_dir = Some(out.clone());
    let session = Session {
        config,
        registry: &registry,
        backend: Arc::new(ReplayBackend::new(records).named(expected.backend.clone())),
        adapters: pool,
        evaluator,
        routing: recorded_routing(&expected),
    };

    cca_core::net::set_forbidden(true);
    let outcome = session.run(input, expected.request.clone());
    cca_core::net::set_forbidden(false);

    let actual = match outcome {
        Ok(res) => res.transcript,
        Err(f) => {
            if let Some(t) = &f.transcript {
                if let Some(d) = first_divergence(&expected, t) {
                    eprintln!("diverged at {d}");
                }
            }
            return Err(Failure::msg(session_exit(&f.error), f.error));
        }
    };
    print!("{}", summary(&actual));
    if let Some(d) = first_divergence(&expected, &actual) {
        return Err(Failure::msg(Exit::Divergence, format!("diverged at {d}")));
    }
    if actual.final_digest != expected.final_digest {
        return Err(Failure::msg(
            Exit::Divergence,
            format!(
                "final image hash mismatch: recorded {:?}, replayed {:?}",
                expected.final_digest, actual.final_digest
            ),
        ));
    }
    println!(
        "replay matches: final digest {}",
        actual.final_digest.as_deref().unwrap_or("none")
    );
    Ok(())
}

/// Model names as they were recorded, so replayed requests hash the same.
fn recorded_routing(t: &Transcript) -> cca_core::llm::ModelRouting {
    use cca_core::llm::ModelTier;
    let mut routing = cca_core::llm::ModelRouting::default();
    for c in &t.llm_calls {
        match c.call.template.tier() {
            ModelTier::Strong => routing.strong = c.call.model_id.clone(),
            ModelTier::Fast => routing.fast = c.call.model_id.clone(),
        }
    }
    routing
}
