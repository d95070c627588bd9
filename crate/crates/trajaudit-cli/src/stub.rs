//! Reference judge process speaking the subprocess protocol.
//!
//! Emits `{"ready": true}`, then answers one JSON request per stdin line
//! with one JSON response per stdout line. Backed by the built-in oracles,
//! it doubles as a template for writing a real judge.

use anyhow::Result;
use std::io::{BufRead, Write};
use trajaudit_core::judge::{build_judge, parse_judge_spec, JudgeReply, JudgeRequest, WireResponse};

pub fn run_stub(oracle: &str, sigma: f64, seed: u64) -> Result<i32> {
    let spec = match oracle {
        "noisy" => format!("builtin:noisy_oracle:sigma={sigma},seed={seed}"),
        "random" => format!("builtin:random_judge:seed={seed}"),
        "index" => "builtin:index_oracle".to_string(),
        "inverted" => "builtin:inverted_oracle".to_string(),
        other => anyhow::bail!("unknown oracle {other:?}: use index, inverted, noisy, or random"),
    };
    let mut judge = build_judge(&parse_judge_spec(&spec)?)?;

    let stdin = std::io::stdin().lock();
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{}", serde_json::json!({ "ready": true }))?;
    stdout.flush()?;

    for line in stdin.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<JudgeRequest>(&line) {
            Ok(request) => match judge.judge_one(&request) {
                Ok(JudgeReply::Potential(p)) => WireResponse {
                    id: request.id().to_string(),
                    potential: Some(p),
                    direction: None,
                    error: None,
                },
                Ok(JudgeReply::Direction(d)) => WireResponse {
                    id: request.id().to_string(),
                    potential: None,
                    direction: Some(d),
                    error: None,
                },
                Err(e) => WireResponse {
                    id: request.id().to_string(),
                    potential: None,
                    direction: None,
                    error: Some(e.to_string()),
                },
            },
            Err(e) => WireResponse {
                id: String::new(),
                potential: None,
                direction: None,
                error: Some(format!("unparseable request: {e}")),
            },
        };
        writeln!(stdout, "{}", serde_json::to_string(&response)?)?;
        stdout.flush()?;
    }
    Ok(0)
}
