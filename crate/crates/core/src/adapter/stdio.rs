//! Adapters running as child processes, one request line on stdin and one
//! response line on stdout.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use super::{AdapterError, Transport};

struct Inner {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<String>,
}

/// Requests on one process are strictly sequential; a mutex serializes
/// concurrent callers.
pub struct StdioTransport {
    command: Vec<String>,
    inner: Mutex<Inner>,
}

impl StdioTransport {
    pub fn spawn(command: &[String]) -> Result<Self, AdapterError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| AdapterError::Transport("empty adapter command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| AdapterError::Transport(format!("cannot start `{program}`: {e}")))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) | Err(_) => break,
                    Ok(_) => {
                        if tx.send(line).is_err() {
                            break;
                        }
                    }
                }
            }
        });
        Ok(Self {
            command: command.to_vec(),
            inner: Mutex::new(Inner { child, stdin, lines: rx }),
        })
    }
}

impl Transport for StdioTransport {
    fn describe(&self) -> String {
        format!("stdio:{}", self.command.join(" "))
    }

    fn send(&self, line: &str, timeout: Duration) -> Result<Vec<String>, AdapterError> {
        let mut inner = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        let stale: Vec<String> = inner.lines.try_iter().collect();
        if !stale.is_empty() {
            return Err(AdapterError::ProtocolViolation(format!(
                "{} unsolicited line(s) on stdout before request",
                stale.len()
            )));
        }
        let dead = |detail: String| AdapterError::Timeout { after: timeout, detail };
        let stdin = inner.stdin.as_mut().ok_or_else(|| dead("stdin closed".into()))?;
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.write_all(b"\n"))
            .and_then(|_| stdin.flush())
            .map_err(|e| dead(format!("adapter not accepting input: {e}")))?;
        match inner.lines.recv_timeout(timeout) {
            Ok(reply) => Ok(vec![reply]),
            Err(RecvTimeoutError::Timeout) => Err(dead("no response".into())),
            Err(RecvTimeoutError::Disconnected) => Err(dead("adapter exited".into())),
        }
    }

    fn drain_extra(&self, wait: Duration) -> Vec<String> {
        let inner = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        let mut out = Vec::new();
        while let Ok(l) = inner.lines.recv_timeout(wait) {
            out.push(l);
        }
        out
    }
}

impl Drop for StdioTransport {
    fn drop(&mut self) {
        let inner = self.inner.get_mut().unwrap_or_else(|p| p.into_inner());
        inner.stdin.take();
        let _ = inner.child.kill();
        let _ = inner.child.wait();
    }
}
