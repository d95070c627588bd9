//! Built-in judges for testing, calibration, and worked examples.

use super::{Judge, JudgeError, JudgeMode, JudgeReply, JudgeRequest, ObservationRef};
use crate::consistency::ClippedDifferenceEvaluator;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;

/// Catalog entry describing one built-in judge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuiltinSpec {
    pub name: &'static str,
    pub mode: JudgeMode,
    pub description: &'static str,
}

/// The built-in judge catalog.
pub fn builtin_judges() -> Vec<BuiltinSpec> {
    vec![
        BuiltinSpec {
            name: "index_oracle",
            mode: JudgeMode::Potential,
            description: "linear potential i/M from the state index",
        },
        BuiltinSpec {
            name: "inverted_oracle",
            mode: JudgeMode::Potential,
            description: "1 - i/M; disagrees with every forward pair",
        },
        BuiltinSpec {
            name: "noisy_oracle",
            mode: JudgeMode::Potential,
            description: "i/M plus fresh N(0, sigma^2) noise per call (params sigma, seed)",
        },
        BuiltinSpec {
            name: "random_judge",
            mode: JudgeMode::Pairwise,
            description: "uniform coin-flip direction (param seed)",
        },
    ]
}

pub(super) fn builtin_mode(spec: &str) -> Option<JudgeMode> {
    let name = spec.split(':').next().unwrap_or(spec);
    builtin_judges().iter().find(|b| b.name == name).map(|b| b.mode)
}

/// One of the built-in judges, parameterized and ready to answer queries.
pub enum BuiltinJudge {
    IndexOracle,
    InvertedOracle,
    NoisyOracle { sigma: f64, rng: ChaCha8Rng },
    RandomJudge { rng: ChaCha8Rng },
}

impl BuiltinJudge {
    fn linear_potential(observation: &ObservationRef) -> f64 {
        if observation.last_state_index == 0 {
            return 0.0;
        }
        observation.state_index as f64 / observation.last_state_index as f64
    }
}

impl Judge for BuiltinJudge {
    fn mode(&self) -> JudgeMode {
        match self {
            BuiltinJudge::IndexOracle
            | BuiltinJudge::InvertedOracle
            | BuiltinJudge::NoisyOracle { .. } => JudgeMode::Potential,
            BuiltinJudge::RandomJudge { .. } => JudgeMode::Pairwise,
        }
    }

    fn judge_one(&mut self, request: &JudgeRequest) -> Result<JudgeReply, JudgeError> {
        match (self, request) {
            (BuiltinJudge::IndexOracle, JudgeRequest::Potential { observation, .. }) => {
                Ok(JudgeReply::Potential(Self::linear_potential(observation)))
            }
            (BuiltinJudge::InvertedOracle, JudgeRequest::Potential { observation, .. }) => {
                Ok(JudgeReply::Potential(1.0 - Self::linear_potential(observation)))
            }
            (BuiltinJudge::NoisyOracle { sigma, rng }, JudgeRequest::Potential { observation, .. }) => {
                let noise = Normal::new(0.0, *sigma)
                    .map_err(|e| JudgeError::Protocol(e.to_string()))?
                    .sample(rng);
                Ok(JudgeReply::Potential(Self::linear_potential(observation) + noise))
            }
            (BuiltinJudge::RandomJudge { rng }, JudgeRequest::Pairwise { .. }) => {
                Ok(JudgeReply::Direction(if rng.random_bool(0.5) { 1 } else { -1 }))
            }
            _ => Err(JudgeError::Protocol(
                "builtin judge received a request in the wrong mode".into(),
            )),
        }
    }
}

/// Build a builtin from its spec fragment, e.g.
/// `noisy_oracle:sigma=0.01,seed=7`.
pub(super) fn build_builtin(spec: &str) -> Result<Box<dyn Judge>, JudgeError> {
    let (name, params) = match spec.split_once(':') {
        Some((name, params)) => (name, params),
        None => (spec, ""),
    };
    let mut sigma = 0.01f64;
    let mut seed = 0u64;
    for kv in params.split(',').filter(|s| !s.is_empty()) {
        let (key, value) = kv.split_once('=').ok_or_else(|| JudgeError::InvalidSpec {
            spec: spec.to_string(),
            message: format!("expected key=value, got {kv:?}"),
        })?;
        let bad = |message: String| JudgeError::InvalidSpec { spec: spec.to_string(), message };
        match key {
            "sigma" => sigma = value.parse().map_err(|e| bad(format!("sigma: {e}")))?,
            "seed" => seed = value.parse().map_err(|e| bad(format!("seed: {e}")))?,
            other => return Err(bad(format!("unknown parameter {other:?}"))),
        }
    }
    match name {
        "index_oracle" => Ok(Box::new(BuiltinJudge::IndexOracle)),
        "inverted_oracle" => Ok(Box::new(BuiltinJudge::InvertedOracle)),
        "noisy_oracle" => Ok(Box::new(BuiltinJudge::NoisyOracle {
            sigma,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })),
        "random_judge" => Ok(Box::new(BuiltinJudge::RandomJudge {
            rng: ChaCha8Rng::seed_from_u64(seed),
        })),
        other => Err(JudgeError::InvalidSpec {
            spec: spec.to_string(),
            message: format!("unknown builtin {other:?}"),
        }),
    }
}

/// Pairwise evaluator that clips potential differences from above: the
/// stock example of a scorer that fails triple additivity.
pub fn clipped_pairwise(potentials: BTreeMap<String, f64>, cap: f64) -> ClippedDifferenceEvaluator {
    ClippedDifferenceEvaluator { potentials, cap }
}
