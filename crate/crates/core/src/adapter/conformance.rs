//! Black-box checks that an adapter speaks the protocol correctly.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::Serialize;

use super::{parse_response_line, AdapterRequest, AdapterResponse, Status, Transport, PROTOCOL_VERSION};

/// A request the adapter is expected to answer successfully.
#[derive(Debug, Clone)]
pub struct ConformanceProbe {
    pub tool: String,
    pub args: BTreeMap<String, serde_json::Value>,
    pub input_paths: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformanceReport {
    pub adapter: String,
    pub checks: Vec<CheckResult>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn pass(name: &'static str, detail: impl Into<String>) -> CheckResult {
    CheckResult {
        name,
        passed: true,
        warning: None,
        detail: detail.into(),
    }
}

fn fail(name: &'static str, detail: impl Into<String>) -> CheckResult {
    CheckResult {
        passed: false,
        ..pass(name, detail)
    }
}

const GRACE: Duration = Duration::from_millis(150);

fn exchange(t: &dyn Transport, req: &AdapterRequest, timeout: Duration) -> Result<(AdapterResponse, usize), String> {
    let lines = t.send(&req.to_line(), timeout).map_err(|e| e.to_string())?;
    let first = lines.first().ok_or("empty reply")?;
    let resp = parse_response_line(first, &req.request_id).map_err(|e| e.to_string())?;
    let extra = lines.len() - 1 + t.drain_extra(GRACE).len();
    Ok((resp, extra))
}

/// Runs every check against `transport`; checks never abort one another.
pub fn conformance_check(transport: &dyn Transport, probe: &ConformanceProbe, timeout: Duration) -> ConformanceReport {
    let mk = |id: &str| AdapterRequest {
        protocol_version: PROTOCOL_VERSION,
        request_id: id.to_string(),
        tool: probe.tool.clone(),
        args: probe.args.clone(),
        input_paths: probe.input_paths.clone(),
    };
    let mut checks = Vec::new();

    let first = exchange(transport, &mk("conformance-1"), timeout);
    match &first {
        Ok((resp, extra)) => {
            checks.push(if resp.status == Status::Ok {
                pass("request_id_echo", "id echoed and probe succeeded")
            } else {
                fail("request_id_echo", format!("probe returned error: {:?}", resp.message))
            });
            checks.push(if *extra == 0 {
                pass("one_line_framing", "exactly one line per request")
            } else {
                fail("one_line_framing", format!("{extra} extra line(s) after the response"))
            });
        }
        Err(e) => {
            checks.push(fail("request_id_echo", e.clone()));
            checks.push(fail("one_line_framing", "no valid first response"));
        }
    }

    let mut unknown = mk("conformance-2");
    unknown.tool = "__NoSuchTool__".into();
    let mut bad_version = mk("conformance-3");
    bad_version.protocol_version = PROTOCOL_VERSION + 99;
    let mut problems = Vec::new();
    for req in [&unknown, &bad_version] {
        match exchange(transport, req, timeout) {
            Ok((r, _)) if r.status == Status::Error => {}
            Ok(_) => problems.push(format!("`{}` was not rejected", req.request_id)),
            Err(e) => problems.push(format!("`{}`: {e}", req.request_id)),
        }
    }
    checks.push(if problems.is_empty() {
        pass("error_shape", "unknown tool and version rejected with error_kind")
    } else {
        fail("error_shape", problems.join("; "))
    });

    let mut extra_arg = mk("conformance-4");
    extra_arg.args.insert("__unexpected_arg__".into(), serde_json::json!(1));
    checks.push(match exchange(transport, &extra_arg, timeout) {
        Ok((r, _)) if r.status == Status::Error => pass("unknown_args", "unexpected argument rejected"),
        Ok(_) => CheckResult {
            warning: Some("unexpected argument silently accepted".into()),
            ..pass("unknown_args", "accepted")
        },
        Err(e) => fail("unknown_args", e),
    });

    let second = exchange(transport, &mk("conformance-1"), timeout);
    checks.push(match (&first, &second) {
        (Ok((a, _)), Ok((b, _))) => {
            let same_file = match (&a.output_path, &b.output_path) {
                (Some(p), Some(q)) => std::fs::read(p).ok() == std::fs::read(q).ok(),
                _ => false,
            };
            if a == b && same_file {
                pass("idempotent", "identical request, identical response")
            } else {
                fail("idempotent", "repeated request changed the response or output")
            }
        }
        _ => fail("idempotent", "probe did not succeed twice"),
    });

    ConformanceReport {
        adapter: transport.describe(),
        checks,
    }
}
