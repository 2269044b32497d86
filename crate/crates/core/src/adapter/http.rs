//! Adapters behind an HTTP endpoint: the request line is POSTed as the body
//! and the body of the reply is the response line.

use std::time::Duration;

use super::{AdapterError, Transport};
use crate::net;

pub struct HttpTransport {
    url: String,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into() }
    }
}

impl Transport for HttpTransport {
    fn describe(&self) -> String {
        format!("http:{}", self.url)
    }

    fn send(&self, line: &str, timeout: Duration) -> Result<Vec<String>, AdapterError> {
        net::begin_call().map_err(|e| AdapterError::Transport(e.to_string()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut resp = agent
            .post(&self.url)
            .header("Content-Type", "application/json")
            .send(format!("{line}\n"))
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => AdapterError::Timeout {
                    after: timeout,
                    detail: "no HTTP response".into(),
                },
                other => AdapterError::Transport(other.to_string()),
            })?;
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| AdapterError::Transport(e.to_string()))?;
        let body = body.strip_suffix('\n').unwrap_or(&body);
        Ok(body.split('\n').map(str::to_string).collect())
    }
}
