//! Progress-potential traces and the shared sequence primitives every
//! metric is built on: increments, net progress, total variation, and the
//! running maximum.
//!
//! A trace is one episode's scalar potential sequence `(phi_0, ..., phi_T)`
//! with every value in `[0, 1]`. All derived quantities are pure functions
//! of the value sequence, so everything here is safe to share across
//! threads.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("value {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("trace has no increments (length 1)")]
    DegenerateTrace,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// How out-of-range potentials are treated during validation.
///
/// `Strict` rejects any value outside `[0, 1]`; `Clamp` clips into range and
/// counts how many values needed clipping so judge defects stay visible.
/// Non-finite values are rejected under both modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationPolicy {
    Strict,
    #[default]
    Clamp,
}

/// One episode's potential sequence plus identity and outcome metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialTrace {
    pub episode_id: String,
    pub task_id: String,
    #[serde(default)]
    pub policy_id: Option<String>,
    #[serde(default)]
    pub success: Option<bool>,
    pub values: Vec<f64>,
}

impl PotentialTrace {
    /// Number of increments, i.e. `T` for a sequence `(phi_0, ..., phi_T)`.
    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("trace is non-empty")
    }
}

/// Result of validating a raw value sequence: the accepted trace and the
/// number of values that were clamped (zero under strict mode).
#[derive(Debug, Clone)]
pub struct ValidatedTrace {
    pub trace: PotentialTrace,
    pub clamp_warnings: usize,
}

/// Validate a raw potential sequence into a [`PotentialTrace`].
///
/// Strict mode never mutates the input; clamp mode clips into `[0, 1]` and
/// records the out-of-range count.
pub fn validate_trace(
    episode_id: impl Into<String>,
    task_id: impl Into<String>,
    policy_id: Option<String>,
    success: Option<bool>,
    raw: &[f64],
    policy: ValidationPolicy,
) -> Result<ValidatedTrace, TraceError> {
    if raw.is_empty() {
        return Err(TraceError::EmptyTrace);
    }
    let mut values = Vec::with_capacity(raw.len());
    let mut clamp_warnings = 0usize;
    for (index, &value) in raw.iter().enumerate() {
        if !value.is_finite() {
            return Err(TraceError::NonFinite { index });
        }
        if (0.0..=1.0).contains(&value) {
            values.push(value);
        } else {
            match policy {
                ValidationPolicy::Strict => return Err(TraceError::OutOfRange { index, value }),
                ValidationPolicy::Clamp => {
                    values.push(value.clamp(0.0, 1.0));
                    clamp_warnings += 1;
                }
            }
        }
    }
    Ok(ValidatedTrace {
        trace: PotentialTrace {
            episode_id: episode_id.into(),
            task_id: task_id.into(),
            policy_id,
            success,
            values,
        },
        clamp_warnings,
    })
}

/// Sequence primitives derived from one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceDerived {
    /// One-step increments `d_t = phi_t - phi_{t-1}`, length `T`.
    pub increments: Vec<f64>,
    /// `phi_T - phi_0`.
    pub net_progress: f64,
    /// Sum of `|d_t|`.
    pub total_variation: f64,
    /// Running maximum `M_t = max_{k <= t} phi_k`, length `T + 1`.
    pub running_max: Vec<f64>,
}

/// Compute increments, net progress, total variation, and running maximum.
///
/// For a length-1 trace the increment list is empty and both net progress
/// and total variation are zero.
pub fn derive(trace: &PotentialTrace) -> TraceDerived {
    let values = &trace.values;
    let increments: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let net_progress = trace.last() - trace.first();
    let total_variation = increments.iter().map(|d| d.abs()).sum();
    let mut running_max = Vec::with_capacity(values.len());
    let mut best = f64::NEG_INFINITY;
    for &v in values {
        best = best.max(v);
        running_max.push(best);
    }
    TraceDerived {
        increments,
        net_progress,
        total_variation,
        running_max,
    }
}

/// One line of the trace ingestion format.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TraceLine {
    episode_id: String,
    task_id: String,
    #[serde(default)]
    policy_id: Option<String>,
    #[serde(default)]
    success: Option<bool>,
    potentials: Vec<f64>,
}

const TRACE_FIELDS: &[&str] = &["episode_id", "task_id", "policy_id", "success", "potentials"];

/// Outcome of reading a trace file: accepted traces, per-line failures, and
/// warnings (unknown fields, clamped values).
#[derive(Debug, Default)]
pub struct TraceIngest {
    pub traces: Vec<PotentialTrace>,
    pub failures: Vec<(usize, String)>,
    pub warnings: Vec<String>,
}

/// Read JSON Lines traces: one object per episode with fields
/// `episode_id`, `task_id`, `policy_id`, `success`, `potentials`.
/// Unknown fields are ignored with a warning; malformed lines are isolated
/// into `failures` rather than aborting the run.
pub fn read_traces_jsonl<R: BufRead>(
    reader: R,
    policy: ValidationPolicy,
) -> Result<TraceIngest, TraceError> {
    let mut out = TraceIngest::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                out.failures.push((lineno, format!("invalid json: {e}")));
                continue;
            }
        };
        if let Some(map) = value.as_object() {
            for key in map.keys() {
                if !TRACE_FIELDS.contains(&key.as_str()) {
                    out.warnings
                        .push(format!("line {lineno}: ignoring unknown field {key:?}"));
                }
            }
        }
        let parsed: TraceLine = match serde_json::from_value(value) {
            Ok(p) => p,
            Err(e) => {
                out.failures.push((lineno, e.to_string()));
                continue;
            }
        };
        match validate_trace(
            parsed.episode_id,
            parsed.task_id,
            parsed.policy_id,
            parsed.success,
            &parsed.potentials,
            policy,
        ) {
            Ok(validated) => {
                if validated.clamp_warnings > 0 {
                    out.warnings.push(format!(
                        "line {lineno}: clamped {} out-of-range value(s)",
                        validated.clamp_warnings
                    ));
                }
                out.traces.push(validated.trace);
            }
            Err(e) => out.failures.push((lineno, e.to_string())),
        }
    }
    Ok(out)
}

/// Write traces in the same JSON Lines layout `read_traces_jsonl` accepts.
pub fn write_traces_jsonl<W: Write>(writer: &mut W, traces: &[PotentialTrace]) -> Result<(), TraceError> {
    for trace in traces {
        let line = TraceLine {
            episode_id: trace.episode_id.clone(),
            task_id: trace.task_id.clone(),
            policy_id: trace.policy_id.clone(),
            success: trace.success,
            potentials: trace.values.clone(),
        };
        serde_json::to_writer(&mut *writer, &line).map_err(std::io::Error::other)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
pub(crate) fn test_trace(values: &[f64]) -> PotentialTrace {
    PotentialTrace {
        episode_id: "ep".into(),
        task_id: "task".into(),
        policy_id: None,
        success: None,
        values: values.to_vec(),
    }
}
