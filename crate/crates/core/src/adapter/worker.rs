//! The adapter side of the protocol: decode requests, dispatch to handlers,
//! encode exactly one response line per request.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::Arc;
use std::time::Duration;

use super::{AdapterError, AdapterRequest, AdapterResponse, Transport, PROTOCOL_VERSION};

#[derive(Debug, Clone, PartialEq)]
pub struct HandlerOutput {
    pub output_path: String,
    pub metrics: BTreeMap<String, f64>,
}

impl HandlerOutput {
    pub fn path(p: impl Into<String>) -> Self {
        Self {
            output_path: p.into(),
            metrics: BTreeMap::new(),
        }
    }

    pub fn metric(mut self, k: &str, v: f64) -> Self {
        self.metrics.insert(k.to_string(), v);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandlerError {
    pub kind: String,
    pub message: String,
}

impl HandlerError {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.to_string(),
            message: message.into(),
        }
    }
}

pub type Handler = dyn Fn(&AdapterRequest) -> Result<HandlerOutput, HandlerError> + Send + Sync;

#[derive(Clone, Default)]
pub struct Worker {
    handlers: BTreeMap<String, Arc<Handler>>,
}

impl Worker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn handle(
        mut self,
        tool: &str,
        f: impl Fn(&AdapterRequest) -> Result<HandlerOutput, HandlerError> + Send + Sync + 'static,
    ) -> Self {
        self.handlers.insert(tool.to_string(), Arc::new(f));
        self
    }

    pub fn tools(&self) -> impl Iterator<Item = &String> {
        self.handlers.keys()
    }

    /// Answers one request line. Unparseable input still gets a reply,
    /// echoing whatever `request_id` could be salvaged.
    pub fn handle_line(&self, line: &str) -> String {
        let req: AdapterRequest = match serde_json::from_str(line.trim_end()) {
            Ok(r) => r,
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("request_id")?.as_str().map(str::to_string))
                    .unwrap_or_default();
                let version = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("protocol_version")?.as_u64());
                let (kind, msg) = match version {
                    Some(v) if v != PROTOCOL_VERSION as u64 => {
                        ("unsupported_version", format!("protocol_version {v} not supported"))
                    }
                    _ => ("bad_request", format!("malformed request: {e}")),
                };
                return AdapterResponse::error(id, kind, msg).to_line();
            }
        };
        if req.protocol_version != PROTOCOL_VERSION {
            return AdapterResponse::error(
                &req.request_id,
                "unsupported_version",
                format!("protocol_version {} not supported", req.protocol_version),
            )
            .to_line();
        }
        let Some(handler) = self.handlers.get(&req.tool) else {
            return AdapterResponse::error(&req.request_id, "unknown_tool", format!("no tool `{}`", req.tool)).to_line();
        };
        match handler(&req) {
            Ok(out) => {
                let mut resp = AdapterResponse::ok(&req.request_id, out.output_path);
                if !out.metrics.is_empty() {
                    resp.metrics = Some(out.metrics);
                }
                resp.to_line()
            }
            Err(e) => AdapterResponse::error(&req.request_id, e.kind, e.message).to_line(),
        }
    }

    /// Reads requests until EOF, answering each with one flushed line.
    pub fn serve(&self, input: impl BufRead, mut output: impl Write) -> std::io::Result<()> {
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            writeln!(output, "{}", self.handle_line(&line))?;
            output.flush()?;
        }
        Ok(())
    }
}

/// A worker called directly, still going through the serialized line format.
pub struct InProcessTransport {
    name: String,
    worker: Worker,
}

impl InProcessTransport {
    pub fn new(name: impl Into<String>, worker: Worker) -> Self {
        Self {
            name: name.into(),
            worker,
        }
    }
}

impl Transport for InProcessTransport {
    fn describe(&self) -> String {
        format!("in-process:{}", self.name)
    }

    fn send(&self, line: &str, _timeout: Duration) -> Result<Vec<String>, AdapterError> {
        Ok(vec![self.worker.handle_line(line)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::{invoke_external, parse_response_line, Status};

    fn echo() -> Worker {
        Worker::new().handle("Echo", |r| {
            let p = r.input_paths.first().cloned().unwrap_or_default();
            Ok(HandlerOutput::path(p).metric("n", r.args.len() as f64))
        })
    }

    #[test]
    fn dispatches_and_echoes_id() {
        let t = InProcessTransport::new("echo", echo());
        let req = AdapterRequest::new("abc", "Echo").input("/x.png").arg("k", 1);
        let resp = invoke_external(&t, &req, Duration::from_secs(1)).unwrap();
        assert_eq!(resp.output_path.as_deref(), Some("/x.png"));
        assert_eq!(resp.metrics.unwrap()["n"], 1.0);
    }

    #[test]
    fn unknown_tool_and_version() {
        let w = echo();
        let r = parse_response_line(&w.handle_line(&AdapterRequest::new("1", "Nope").to_line()), "1").unwrap();
        assert_eq!(r.error_kind.as_deref(), Some("unknown_tool"));
        let mut req = AdapterRequest::new("2", "Echo");
        req.protocol_version = 2;
        let r = parse_response_line(&w.handle_line(&req.to_line()), "2").unwrap();
        assert_eq!(r.status, Status::Error);
        assert_eq!(r.error_kind.as_deref(), Some("unsupported_version"));
    }

    #[test]
    fn garbage_gets_an_error_line() {
        let w = echo();
        let out = w.handle_line("{not json");
        let r = parse_response_line(&out, "").unwrap();
        assert_eq!(r.error_kind.as_deref(), Some("bad_request"));
    }

    #[test]
    fn serve_writes_one_line_per_request() {
        let w = echo();
        let input = format!(
            "{}\n\n{}\n",
            AdapterRequest::new("a", "Echo").input("/p").to_line(),
            AdapterRequest::new("b", "Echo").input("/q").to_line()
        );
        let mut out = Vec::new();
        w.serve(input.as_bytes(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(parse_response_line(lines[1], "b").is_ok());
    }
}
