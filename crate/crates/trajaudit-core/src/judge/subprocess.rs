//! Subprocess judge over newline-delimited JSON.
//!
//! Protocol, bit-exact: the judge signals readiness by writing
//! `{"ready": true}` followed by `\n` on stdout. Each request is one UTF-8
//! JSON object per line on its stdin; each response one JSON object per
//! line with the matching `"id"`. Responses may arrive out of order; up to
//! `max_in_flight` requests are outstanding at once and results are
//! reassembled into request order. A request that produces no response
//! within the timeout fails alone; the batch continues.

use super::{Judge, JudgeError, JudgeMode, JudgeReply, JudgeRequest, WireResponse};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::time::Duration;

pub struct SubprocessJudge {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
    mode: JudgeMode,
    max_in_flight: usize,
    timeout: Duration,
}

impl SubprocessJudge {
    /// Spawn `command` (split on whitespace) and wait for the ready line.
    pub fn spawn(
        command: &str,
        mode: JudgeMode,
        max_in_flight: usize,
        timeout: Duration,
    ) -> Result<Self, JudgeError> {
        let mut parts = command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| JudgeError::Protocol("empty judge command".into()))?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child
            .stdin
            .take()
            .ok_or_else(|| JudgeError::Protocol("judge stdin unavailable".into()))?;
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| JudgeError::Protocol("judge stdout unavailable".into()))?;

        let (tx, lines) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            let mut line = String::new();
            loop {
                line.clear();
                match reader.read_line(&mut line) {
                    Ok(0) | Err(_) => break,
                    Ok(_) => {
                        if tx.send(line.trim_end().to_string()).is_err() {
                            break;
                        }
                    }
                }
            }
        });

        let mut judge = Self { child, stdin, lines, mode, max_in_flight, timeout };
        let ready = judge.next_line()?;
        let value: serde_json::Value = serde_json::from_str(&ready)
            .map_err(|e| JudgeError::Protocol(format!("bad ready line: {e}")))?;
        if value.get("ready").and_then(|v| v.as_bool()) != Some(true) {
            return Err(JudgeError::Protocol(format!(
                "expected {{\"ready\": true}}, got {ready}"
            )));
        }
        Ok(judge)
    }

    fn next_line(&mut self) -> Result<String, JudgeError> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(line) => Ok(line),
            Err(RecvTimeoutError::Timeout) => Err(JudgeError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                Err(JudgeError::Protocol("judge closed stdout".into()))
            }
        }
    }

    fn send(&mut self, request: &JudgeRequest) -> Result<(), JudgeError> {
        let line = serde_json::to_string(request)
            .map_err(|e| JudgeError::Protocol(e.to_string()))?;
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.write_all(b"\n")?;
        self.stdin.flush()?;
        Ok(())
    }
}

impl Judge for SubprocessJudge {
    fn mode(&self) -> JudgeMode {
        self.mode
    }

    fn judge_one(&mut self, request: &JudgeRequest) -> Result<JudgeReply, JudgeError> {
        let mut results = self.judge_batch(std::slice::from_ref(request));
        results.pop().expect("one result per request")
    }

    fn judge_batch(&mut self, requests: &[JudgeRequest]) -> Vec<Result<JudgeReply, JudgeError>> {
        let mut results: Vec<Option<Result<JudgeReply, JudgeError>>> =
            (0..requests.len()).map(|_| None).collect();
        // Window of outstanding request slots, oldest first, keyed by id.
        let mut in_flight: HashMap<String, usize> = HashMap::new();
        let mut order: Vec<usize> = Vec::new();
        let mut next = 0usize;

        while results.iter().any(|r| r.is_none()) {
            while in_flight.len() < self.max_in_flight && next < requests.len() {
                match self.send(&requests[next]) {
                    Ok(()) => {
                        in_flight.insert(requests[next].id().to_string(), next);
                        order.push(next);
                    }
                    Err(e) => {
                        results[next] = Some(Err(e));
                    }
                }
                next += 1;
            }
            if in_flight.is_empty() {
                continue;
            }
            match self.next_line() {
                Ok(line) => {
                    let response: Result<WireResponse, _> = serde_json::from_str(&line);
                    match response {
                        Ok(response) => {
                            if let Some(slot) = in_flight.remove(&response.id) {
                                order.retain(|&s| s != slot);
                                results[slot] = Some(response.into_reply());
                            }
                            // Unmatched ids (e.g. late answers to an item
                            // that already timed out) are dropped.
                        }
                        Err(e) => {
                            // An unparseable line cannot be attributed to a
                            // request; fail the oldest outstanding one.
                            if let Some(slot) = order.first().copied() {
                                order.remove(0);
                                in_flight.retain(|_, s| *s != slot);
                                results[slot] =
                                    Some(Err(JudgeError::Protocol(format!("bad response line: {e}"))));
                            }
                        }
                    }
                }
                Err(e) => {
                    // Timeout or closed pipe: fail the oldest outstanding
                    // item and keep going; on a closed pipe every later
                    // receive fails the same way, draining the window.
                    if let Some(slot) = order.first().copied() {
                        order.remove(0);
                        in_flight.retain(|_, s| *s != slot);
                        results[slot] = Some(Err(e));
                    }
                }
            }
        }
        results.into_iter().map(|r| r.expect("all slots filled")).collect()
    }
}

impl Drop for SubprocessJudge {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
