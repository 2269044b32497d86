//! Line-delimited JSON protocol for tools that live in another process.
//!
//! Every message is one `\n`-terminated UTF-8 JSON object. Images travel as
//! file paths on a filesystem shared by host and adapter, never inline.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod conformance;
#[cfg(feature = "http")]
mod http;
mod stdio;
pub mod stub;
pub mod worker;

pub use conformance::{conformance_check, CheckResult, ConformanceProbe, ConformanceReport};
#[cfg(feature = "http")]
pub use http::HttpTransport;
pub use stdio::StdioTransport;
pub use worker::{HandlerError, HandlerOutput, InProcessTransport, Worker};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterRequest {
    pub protocol_version: u32,
    pub request_id: String,
    pub tool: String,
    #[serde(default)]
    pub args: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub input_paths: Vec<String>,
}

impl AdapterRequest {
    pub fn new(request_id: impl Into<String>, tool: impl Into<String>) -> Self {
        Self {
            protocol_version: PROTOCOL_VERSION,
            request_id: request_id.into(),
            tool: tool.into(),
            args: BTreeMap::new(),
            input_paths: Vec::new(),
        }
    }

    pub fn arg(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.args.insert(key.to_string(), value.into());
        self
    }

    pub fn input(mut self, path: impl Into<String>) -> Self {
        self.input_paths.push(path.into());
        self
    }

    /// Serialized form without the trailing newline. JSON string escaping
    /// guarantees the result holds no raw newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterResponse {
    pub request_id: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<BTreeMap<String, f64>>,
}

impl AdapterResponse {
    pub fn ok(request_id: impl Into<String>, output_path: impl Into<String>) -> Self {
        Self {
            request_id: request_id.into(),
            status: Status::Ok,
            output_path: Some(output_path.into()),
            error_kind: None,
            message: None,
            metrics: None,
        }
    }

    pub fn error(request_id: impl Into<String>, kind: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            request_id: request_id.into(),
            status: Status::Error,
            output_path: None,
            error_kind: Some(kind.into()),
            message: Some(message.into()),
            metrics: None,
        }
    }

    pub fn with_metric(mut self, key: &str, value: f64) -> Self {
        self.metrics.get_or_insert_with(BTreeMap::new).insert(key.to_string(), value);
        self
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("response serializes")
    }

    /// Exactly one of output path / error is present, matching the status.
    pub fn check_shape(&self) -> Result<(), String> {
        match self.status {
            Status::Ok if self.output_path.is_none() => Err("ok response without output_path".into()),
            Status::Ok if self.error_kind.is_some() || self.message.is_some() => {
                Err("ok response carries error fields".into())
            }
            Status::Error if self.output_path.is_some() => Err("error response carries output_path".into()),
            Status::Error if self.error_kind.is_none() || self.message.is_none() => {
                Err("error response without error_kind and message".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdapterError {
    #[error("adapter timed out after {after:?}: {detail}")]
    Timeout { after: Duration, detail: String },
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("adapter error `{kind}`: {message}")]
    Adapter { kind: String, message: String },
    #[error("transport: {0}")]
    Transport(String),
}

/// Parses and validates one response line against the request it answers.
/// Never panics, whatever the input.
pub fn parse_response_line(line: &str, expected_id: &str) -> Result<AdapterResponse, AdapterError> {
    let trimmed = line.strip_suffix('\n').unwrap_or(line);
    let trimmed = trimmed.strip_suffix('\r').unwrap_or(trimmed);
    if trimmed.contains('\n') {
        return Err(AdapterError::ProtocolViolation("response spans several lines".into()));
    }
    let value: serde_json::Value = serde_json::from_str(trimmed)
        .map_err(|e| AdapterError::ProtocolViolation(format!("not JSON: {e}")))?;
    if !value.is_object() {
        return Err(AdapterError::ProtocolViolation("response is not a JSON object".into()));
    }
    let resp: AdapterResponse = serde_json::from_value(value)
        .map_err(|e| AdapterError::ProtocolViolation(format!("not a response object: {e}")))?;
    if resp.request_id != expected_id {
        return Err(AdapterError::ProtocolViolation(format!(
            "request_id mismatch: sent `{expected_id}`, got `{}`",
            resp.request_id
        )));
    }
    resp.check_shape().map_err(AdapterError::ProtocolViolation)?;
    Ok(resp)
}

/// A way of moving one request line to an adapter and bringing back its reply.
pub trait Transport: Send + Sync {
    fn describe(&self) -> String;

    /// Sends one line and returns every line of the reply (normally one).
    fn send(&self, line: &str, timeout: Duration) -> Result<Vec<String>, AdapterError>;

    /// Lines that arrive within `wait` without a request (framing probes).
    fn drain_extra(&self, _wait: Duration) -> Vec<String> {
        Vec::new()
    }
}

/// Sends `request` and returns the successful response. `status = error`
/// replies surface as [`AdapterError::Adapter`].
pub fn invoke_external(
    transport: &dyn Transport,
    request: &AdapterRequest,
    timeout: Duration,
) -> Result<AdapterResponse, AdapterError> {
    let lines = transport.send(&request.to_line(), timeout)?;
    let [line] = lines.as_slice() else {
        return Err(AdapterError::ProtocolViolation(format!(
            "expected one response line, got {}",
            lines.len()
        )));
    };
    let resp = parse_response_line(line, &request.request_id)?;
    match resp.status {
        Status::Ok => Ok(resp),
        Status::Error => Err(AdapterError::Adapter {
            kind: resp.error_kind.unwrap_or_default(),
            message: resp.message.unwrap_or_default(),
        }),
    }
}

/// Named adapter endpoints (`endpoint` field of external tool specs).
#[derive(Clone, Default)]
pub struct AdapterPool {
    endpoints: BTreeMap<String, Arc<dyn Transport>>,
    pub timeout: Option<Duration>,
}

impl std::fmt::Debug for AdapterPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdapterPool")
            .field("endpoints", &self.endpoints.keys().collect::<Vec<_>>())
            .finish()
    }
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

impl AdapterPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, endpoint: impl Into<String>, transport: Arc<dyn Transport>) {
        self.endpoints.insert(endpoint.into(), transport);
    }

    pub fn get(&self, endpoint: &str) -> Option<&Arc<dyn Transport>> {
        self.endpoints.get(endpoint)
    }

    pub fn endpoints(&self) -> impl Iterator<Item = (&String, &Arc<dyn Transport>)> {
        self.endpoints.iter()
    }

    pub fn timeout(&self) -> Duration {
        self.timeout.unwrap_or(DEFAULT_TIMEOUT)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn request_is_one_line_even_with_newlines_in_args() {
        let r = AdapterRequest::new("r1", "LLaVA").arg("question", "a\nb").input("/tmp/x.png");
        let line = r.to_line();
        assert!(!line.contains('\n'));
        assert_eq!(serde_json::from_str::<AdapterRequest>(&line).unwrap(), r);
    }

    #[test]
    fn mismatched_id_is_a_violation() {
        let line = AdapterResponse::ok("other", "/tmp/o.png").to_line();
        assert!(matches!(
            parse_response_line(&line, "r1"),
            Err(AdapterError::ProtocolViolation(_))
        ));
    }

    #[test]
    fn shape_rules() {
        let mut r = AdapterResponse::ok("r", "/o");
        r.error_kind = Some("x".into());
        assert!(r.check_shape().is_err());
        let mut e = AdapterResponse::error("r", "bad_args", "nope");
        assert!(e.check_shape().is_ok());
        e.output_path = Some("/o".into());
        assert!(e.check_shape().is_err());
        let bare = r#"{"request_id":"r","status":"ok"}"#;
        assert!(parse_response_line(bare, "r").is_err());
    }

    #[test]
    fn fuzzed_lines_never_panic() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1000);
        let seeds = [
            r#"{"request_id":"r","status":"ok","output_path":"/o"}"#,
            r#"{"request_id":"r","status":"error","error_kind":"k","message":"m"}"#,
        ];
        for i in 0..1000 {
            let line: String = if i % 2 == 0 {
                let len = rng.random_range(0..80);
                (0..len).map(|_| rng.random_range(0u8..128) as char).collect()
            } else {
                // mutate a valid line
                let mut b = seeds[rng.random_range(0..2)].as_bytes().to_vec();
                let n = rng.random_range(1..4);
                for _ in 0..n {
                    let at = rng.random_range(0..b.len());
                    b[at] = rng.random_range(0u8..128);
                }
                String::from_utf8_lossy(&b).into_owned()
            };
            match parse_response_line(&line, "zz") {
                Err(AdapterError::ProtocolViolation(_)) => {}
                other => panic!("line {line:?} gave {other:?}"),
            }
        }
    }

    proptest! {
        #[test]
        fn response_round_trips(id in "[a-z0-9-]{1,12}", path in "[ -~]{1,30}", kind in "[a-z_]{1,10}", msg in "\\PC{0,40}", ok in any::<bool>()) {
            let resp = if ok { AdapterResponse::ok(&id, &path).with_metric("aesthetic", 5.25) } else { AdapterResponse::error(&id, &kind, &msg) };
            let line = resp.to_line();
            prop_assert!(!line.contains('\n'));
            prop_assert_eq!(parse_response_line(&line, &id).unwrap(), resp);
        }
    }
}
