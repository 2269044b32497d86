//! Stand-in adapter process speaking the line protocol on stdin/stdout.
//!
//! `--mode` selects deliberate misbehaviour for exercising the host:
//! `two-lines`, `bad-id`, `silent`, `garbage`.

use std::io::{BufRead, Write};

use cca_core::adapter::stub::stub_worker;

fn main() {
    let mode = std::env::args()
        .skip_while(|a| a != "--mode")
        .nth(1)
        .unwrap_or_else(|| "normal".into());
    let worker = stub_worker();
    let stdin = std::io::stdin();
    let mut out = std::io::stdout().lock();
    if mode == "normal" {
        if let Err(e) = worker.serve(stdin.lock(), &mut out) {
            eprintln!("cca-stub-adapter: {e}");
            std::process::exit(1);
        }
        return;
    }
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let reply = worker.handle_line(&line);
        let written = match mode.as_str() {
            "two-lines" => writeln!(out, "{reply}\n{reply}"),
            "bad-id" => writeln!(out, "{}", reply.replacen("\"request_id\":\"", "\"request_id\":\"x", 1)),
            "garbage" => writeln!(out, "this is not json"),
            "silent" => Ok(()),
            other => {
                eprintln!("cca-stub-adapter: unknown mode `{other}`");
                std::process::exit(2);
            }
        };
        if written.and_then(|_| out.flush()).is_err() {
            break;
        }
    }
}
