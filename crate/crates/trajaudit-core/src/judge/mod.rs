//! Pluggable judge interface.
//!
//! A judge either assigns a scalar potential to one observation or a signed
//! direction to an observation pair. Built-in oracles cover testing and
//! calibration; external judges plug in over a newline-delimited JSON
//! subprocess protocol, an HTTP endpoint speaking the same schema, or a
//! precomputed score file. The harness validates potentials, derives
//! pairwise verdicts from potential-mode judges, and batches queries with
//! per-item failure isolation and order-preserving assembly.

mod builtin;
mod file_oracle;
mod http;
mod subprocess;

pub use builtin::{builtin_judges, clipped_pairwise, BuiltinJudge, BuiltinSpec};
pub use file_oracle::FileOracleJudge;
pub use http::HttpJudge;
pub use subprocess::SubprocessJudge;

use crate::sampler::ProgressPair;
use crate::trace::ValidationPolicy;
use serde::{Deserialize, Serialize};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge timed out after {0:?}")]
    Timeout(Duration),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("judge potential {value} outside [0, 1] under strict policy")]
    OutOfRange { value: f64 },
    #[error("judge answered in the wrong mode: expected {expected}")]
    WrongMode { expected: &'static str },
    #[error("every item in the batch failed: first error: {0}")]
    AllFailed(String),
    #[error("invalid judge spec {spec:?}: {message}")]
    InvalidSpec { spec: String, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeMode {
    Potential,
    Pairwise,
}

/// What a request points the judge at: the episode-relative position plus
/// any observation references the frame carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRef {
    pub episode_id: String,
    pub state_index: usize,
    pub last_state_index: usize,
    pub frame: u32,
    pub refs: Vec<String>,
}

impl ObservationRef {
    pub fn from_pair_endpoint(pair: &ProgressPair, endpoint: &crate::sampler::PairEndpoint) -> Self {
        Self {
            episode_id: pair.episode_id.clone(),
            state_index: endpoint.state_index,
            last_state_index: pair.last_state_index,
            frame: endpoint.frame,
            refs: endpoint.refs.clone(),
        }
    }
}

/// One judge query. Serialized verbatim onto the wire protocols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JudgeRequest {
    Potential {
        id: String,
        context: String,
        observation: ObservationRef,
        ref_start: Option<ObservationRef>,
        ref_end: Option<ObservationRef>,
    },
    Pairwise {
        id: String,
        context: String,
        before: ObservationRef,
        after: ObservationRef,
        ref_start: Option<ObservationRef>,
        ref_end: Option<ObservationRef>,
    },
}

impl JudgeRequest {
    pub fn id(&self) -> &str {
        match self {
            JudgeRequest::Potential { id, .. } | JudgeRequest::Pairwise { id, .. } => id,
        }
    }
}

/// A judge's raw answer before validation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JudgeReply {
    Potential(f64),
    Direction(i8),
}

/// Wire layout of one response line / HTTP body.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub potential: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<i8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl WireResponse {
    pub fn into_reply(self) -> Result<JudgeReply, JudgeError> {
        if let Some(message) = self.error {
            return Err(JudgeError::Protocol(format!("judge error: {message}")));
        }
        match (self.potential, self.direction) {
            (Some(p), None) => Ok(JudgeReply::Potential(p)),
            (None, Some(d)) if d == 1 || d == -1 => Ok(JudgeReply::Direction(d)),
            (None, Some(d)) => Err(JudgeError::Protocol(format!(
                "direction must be +1 or -1, got {d}"
            ))),
            _ => Err(JudgeError::Protocol(
                "response needs exactly one of potential/direction".into(),
            )),
        }
    }
}

/// Something that can answer judge queries.
///
/// `judge_batch` must return results in request order; the default services
/// requests sequentially, transports may pipeline internally.
pub trait Judge {
    fn mode(&self) -> JudgeMode;
    fn judge_one(&mut self, request: &JudgeRequest) -> Result<JudgeReply, JudgeError>;
    fn judge_batch(&mut self, requests: &[JudgeRequest]) -> Vec<Result<JudgeReply, JudgeError>> {
        requests.iter().map(|r| self.judge_one(r)).collect()
    }
}

/// How an external judge is reached and driven.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeDescriptor {
    pub kind: JudgeKind,
    pub mode: JudgeMode,
    pub max_in_flight: usize,
    pub timeout_secs: f64,
    pub single_threaded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "transport", rename_all = "snake_case")]
pub enum JudgeKind {
    Builtin { name: String },
    Subprocess { command: String },
    Http { url: String },
    FileOracle { path: String },
}

pub const DEFAULT_TIMEOUT_SECS: f64 = 30.0;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

/// Parse a judge spec string:
/// `builtin:<name>[:k=v,...]`, `subprocess:<mode>:<command line>`,
/// `http:<mode>:<url>`, or `file:<path>`.
pub fn parse_judge_spec(spec: &str) -> Result<JudgeDescriptor, JudgeError> {
    let invalid = |message: &str| JudgeError::InvalidSpec {
        spec: spec.to_string(),
        message: message.to_string(),
    };
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| invalid("expected <transport>:<...>"))?;
    let descriptor = |kind, mode| JudgeDescriptor {
        kind,
        mode,
        max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        timeout_secs: DEFAULT_TIMEOUT_SECS,
        single_threaded: true,
    };
    match kind {
        "builtin" => {
            let mode = builtin::builtin_mode(rest)
                .ok_or_else(|| invalid("unknown builtin judge"))?;
            Ok(descriptor(JudgeKind::Builtin { name: rest.to_string() }, mode))
        }
        "subprocess" | "http" => {
            let (mode, payload) = rest
                .split_once(':')
                .ok_or_else(|| invalid("expected <mode>:<target>"))?;
            let mode = match mode {
                "potential" => JudgeMode::Potential,
                "pairwise" => JudgeMode::Pairwise,
                _ => return Err(invalid("mode must be potential or pairwise")),
            };
            let kind = if kind == "subprocess" {
                JudgeKind::Subprocess { command: payload.to_string() }
            } else {
                JudgeKind::Http { url: payload.to_string() }
            };
            Ok(descriptor(kind, mode))
        }
        "file" => Ok(descriptor(
            JudgeKind::FileOracle { path: rest.to_string() },
            JudgeMode::Potential,
        )),
        _ => Err(invalid("transport must be builtin, subprocess, http, or file")),
    }
}

/// Instantiate the judge a descriptor names.
pub fn build_judge(descriptor: &JudgeDescriptor) -> Result<Box<dyn Judge>, JudgeError> {
    let timeout = Duration::from_secs_f64(descriptor.timeout_secs);
    match &descriptor.kind {
        JudgeKind::Builtin { name } => builtin::build_builtin(name),
        JudgeKind::Subprocess { command } => Ok(Box::new(SubprocessJudge::spawn(
            command,
            descriptor.mode,
            descriptor.max_in_flight.max(1),
            timeout,
        )?)),
        JudgeKind::Http { url } => Ok(Box::new(HttpJudge::new(
            url.clone(),
            descriptor.mode,
            timeout,
        ))),
        JudgeKind::FileOracle { path } => {
            let file = std::fs::File::open(path)?;
            Ok(Box::new(FileOracleJudge::from_reader(std::io::BufReader::new(file))?))
        }
    }
}

/// Verdict for one pair: a signed direction or an isolated failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub pair_id: String,
    #[serde(flatten)]
    pub outcome: VerdictOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VerdictOutcome {
    Direction { direction: i8, tie: bool },
    Failure { failure: String },
}

/// Drives a judge over traces and pairs, applying the potential validation
/// policy and the deterministic tie rule.
pub struct JudgeHarness {
    judge: Box<dyn Judge>,
    policy: ValidationPolicy,
    /// Exact potential ties resolved to -1 so far.
    pub ties: usize,
    /// Potentials clamped into [0, 1] so far (clamp policy only).
    pub clamp_warnings: usize,
}

impl JudgeHarness {
    pub fn new(judge: Box<dyn Judge>, policy: ValidationPolicy) -> Self {
        Self { judge, policy, ties: 0, clamp_warnings: 0 }
    }

    pub fn mode(&self) -> JudgeMode {
        self.judge.mode()
    }

    fn validate_potential(&mut self, value: f64) -> Result<f64, JudgeError> {
        if !value.is_finite() {
            return Err(JudgeError::Protocol(format!("non-finite potential {value}")));
        }
        if (0.0..=1.0).contains(&value) {
            return Ok(value);
        }
        match self.policy {
            ValidationPolicy::Strict => Err(JudgeError::OutOfRange { value }),
            ValidationPolicy::Clamp => {
                self.clamp_warnings += 1;
                Ok(value.clamp(0.0, 1.0))
            }
        }
    }

    /// Query one scalar potential, validated into [0, 1].
    pub fn potential_of(
        &mut self,
        context: &str,
        observation: ObservationRef,
        anchors: (Option<ObservationRef>, Option<ObservationRef>),
    ) -> Result<f64, JudgeError> {
        if self.judge.mode() != JudgeMode::Potential {
            return Err(JudgeError::WrongMode { expected: "potential" });
        }
        let request = JudgeRequest::Potential {
            id: format!("{}#{}", observation.episode_id, observation.state_index),
            context: context.to_string(),
            observation,
            ref_start: anchors.0,
            ref_end: anchors.1,
        };
        match self.judge.judge_one(&request)? {
            JudgeReply::Potential(p) => self.validate_potential(p),
            JudgeReply::Direction(_) => Err(JudgeError::WrongMode { expected: "potential" }),
        }
    }

    /// Direction verdict for one pair. Potential-mode judges are queried on
    /// both endpoints; an exact tie maps to -1 and bumps the tie counter.
    pub fn pairwise_of(&mut self, pair: &ProgressPair) -> Result<i8, JudgeError> {
        let verdicts = self.batch_judge(std::slice::from_ref(pair))?;
        match &verdicts[0].outcome {
            VerdictOutcome::Direction { direction, .. } => Ok(*direction),
            VerdictOutcome::Failure { failure } => Err(JudgeError::Protocol(failure.clone())),
        }
    }

    /// Judge many pairs. Verdicts come back in input order; per-item
    /// failures are captured as failed verdicts and the run continues. An
    /// error is returned only when every item failed.
    pub fn batch_judge(&mut self, pairs: &[ProgressPair]) -> Result<Vec<JudgeVerdict>, JudgeError> {
        if pairs.is_empty() {
            return Err(JudgeError::Protocol("empty batch".into()));
        }
        let requests = self.build_requests(pairs);
        let replies = self.judge.judge_batch(&requests);
        debug_assert_eq!(replies.len(), requests.len());
        let verdicts: Vec<JudgeVerdict> = match self.judge.mode() {
            JudgeMode::Pairwise => pairs
                .iter()
                .zip(replies)
                .map(|(pair, reply)| JudgeVerdict {
                    pair_id: pair.pair_id.clone(),
                    outcome: match reply {
                        Ok(JudgeReply::Direction(d)) => {
                            VerdictOutcome::Direction { direction: d, tie: false }
                        }
                        Ok(JudgeReply::Potential(_)) => VerdictOutcome::Failure {
                            failure: "expected a direction, got a potential".into(),
                        },
                        Err(e) => VerdictOutcome::Failure { failure: e.to_string() },
                    },
                })
                .collect(),
            JudgeMode::Potential => {
                let mut out = Vec::with_capacity(pairs.len());
                let mut replies = replies.into_iter();
                for pair in pairs {
                    let before = replies.next().expect("two replies per pair");
                    let after = replies.next().expect("two replies per pair");
                    out.push(JudgeVerdict {
                        pair_id: pair.pair_id.clone(),
                        outcome: self.direction_from_potentials(before, after),
                    });
                }
                out
            }
        };
        if verdicts.iter().all(|v| matches!(v.outcome, VerdictOutcome::Failure { .. })) {
            let first = verdicts
                .iter()
                .find_map(|v| match &v.outcome {
                    VerdictOutcome::Failure { failure } => Some(failure.clone()),
                    _ => None,
                })
                .unwrap_or_default();
            return Err(JudgeError::AllFailed(first));
        }
        Ok(verdicts)
    }

    fn build_requests(&self, pairs: &[ProgressPair]) -> Vec<JudgeRequest> {
        let mut requests = Vec::new();
        for pair in pairs {
            let ref_start = pair
                .ref_start
                .as_ref()
                .map(|e| ObservationRef::from_pair_endpoint(pair, e));
            let ref_end = pair
                .ref_end
                .as_ref()
                .map(|e| ObservationRef::from_pair_endpoint(pair, e));
            match self.judge.mode() {
                JudgeMode::Pairwise => requests.push(JudgeRequest::Pairwise {
                    id: pair.pair_id.clone(),
                    context: pair.context.clone(),
                    before: ObservationRef::from_pair_endpoint(pair, &pair.before),
                    after: ObservationRef::from_pair_endpoint(pair, &pair.after),
                    ref_start,
                    ref_end,
                }),
                JudgeMode::Potential => {
                    requests.push(JudgeRequest::Potential {
                        id: format!("{}:before", pair.pair_id),
                        context: pair.context.clone(),
                        observation: ObservationRef::from_pair_endpoint(pair, &pair.before),
                        ref_start: ref_start.clone(),
                        ref_end: ref_end.clone(),
                    });
                    requests.push(JudgeRequest::Potential {
                        id: format!("{}:after", pair.pair_id),
                        context: pair.context.clone(),
                        observation: ObservationRef::from_pair_endpoint(pair, &pair.after),
                        ref_start,
                        ref_end,
                    });
                }
            }
        }
        requests
    }

    fn direction_from_potentials(
        &mut self,
        before: Result<JudgeReply, JudgeError>,
        after: Result<JudgeReply, JudgeError>,
    ) -> VerdictOutcome {
        let unwrap = |harness: &mut Self, reply: Result<JudgeReply, JudgeError>| match reply {
            Ok(JudgeReply::Potential(p)) => harness.validate_potential(p).map_err(|e| e.to_string()),
            Ok(JudgeReply::Direction(_)) => Err("expected a potential, got a direction".into()),
            Err(e) => Err(e.to_string()),
        };
        let before = unwrap(self, before);
        let after = unwrap(self, after);
        match (before, after) {
            (Ok(b), Ok(a)) => {
                if a > b {
                    VerdictOutcome::Direction { direction: 1, tie: false }
                } else if a < b {
                    VerdictOutcome::Direction { direction: -1, tie: false }
                } else {
                    self.ties += 1;
                    VerdictOutcome::Direction { direction: -1, tie: true }
                }
            }
            (Err(e), _) | (_, Err(e)) => VerdictOutcome::Failure { failure: e },
        }
    }
}
