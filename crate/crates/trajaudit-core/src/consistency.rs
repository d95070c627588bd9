//! Additive-consistency checking for pairwise progress evaluators.
//!
//! An evaluator is consistent when every ordered triple satisfies
//! `E(i,k) = E(i,j) + E(j,k)`; that holds exactly when the scores are
//! differences of a single potential over the states. This module measures
//! triple residuals, reconstructs the potential from an anchor when the
//! check passes, quantifies segmentation drift when it fails, and reports
//! score gaps across task-equivalent states. Detection and certificates
//! only; no attempt is made to repair an inconsistent evaluator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConsistencyError {
    #[error("need at least 3 states, got {0}")]
    TooFewStates(usize),
    #[error("anchor state {0:?} not in state set")]
    AnchorNotInSet(String),
    #[error("trajectory needs at least 2 states, got {0}")]
    TooShort(usize),
    #[error("not a refinement: {0}")]
    NotARefinement(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("evaluator failure: {0}")]
    Evaluator(String),
}

/// A finite set of opaque state identifiers, optionally partitioned into
/// task-equivalence classes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateSet {
    pub states: Vec<String>,
    #[serde(default)]
    pub equivalence_classes: Option<Vec<Vec<String>>>,
}

impl StateSet {
    pub fn new(states: Vec<String>) -> Result<Self, ConsistencyError> {
        let unique: BTreeSet<&String> = states.iter().collect();
        if unique.len() != states.len() {
            return Err(ConsistencyError::InvalidPartition(
                "duplicate state identifiers".into(),
            ));
        }
        Ok(Self {
            states,
            equivalence_classes: None,
        })
    }
}

/// Deterministic pairwise scoring capability over opaque states.
///
/// Implementations must either tolerate concurrent `score` calls or return
/// `true` from `single_threaded`, which callers honor.
pub trait PairwiseEvaluator {
    fn score(&self, from: &str, to: &str, context: &str) -> Result<f64, ConsistencyError>;
    fn single_threaded(&self) -> bool {
        false
    }
}

/// Scores as differences of a stored potential table. Passes every cocycle
/// check by construction.
#[derive(Debug, Clone)]
pub struct PotentialDifferenceEvaluator {
    pub potentials: BTreeMap<String, f64>,
}

impl PairwiseEvaluator for PotentialDifferenceEvaluator {
    fn score(&self, from: &str, to: &str, _context: &str) -> Result<f64, ConsistencyError> {
        let a = self.lookup(from)?;
        let b = self.lookup(to)?;
        Ok(b - a)
    }
}

impl PotentialDifferenceEvaluator {
    fn lookup(&self, state: &str) -> Result<f64, ConsistencyError> {
        self.potentials
            .get(state)
            .copied()
            .ok_or_else(|| ConsistencyError::Evaluator(format!("unknown state {state:?}")))
    }
}

/// Potential differences clipped from above. A single large gap saturates
/// while its sub-segments do not, which breaks triple additivity and makes
/// the accumulated score depend on segmentation.
#[derive(Debug, Clone)]
pub struct ClippedDifferenceEvaluator {
    pub potentials: BTreeMap<String, f64>,
    pub cap: f64,
}

impl PairwiseEvaluator for ClippedDifferenceEvaluator {
    fn score(&self, from: &str, to: &str, _context: &str) -> Result<f64, ConsistencyError> {
        let a = self
            .potentials
            .get(from)
            .copied()
            .ok_or_else(|| ConsistencyError::Evaluator(format!("unknown state {from:?}")))?;
        let b = self
            .potentials
            .get(to)
            .copied()
            .ok_or_else(|| ConsistencyError::Evaluator(format!("unknown state {to:?}")))?;
        Ok((b - a).min(self.cap))
    }
}

/// How triples are drawn for a cocycle check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum TripleSampling {
    /// Every ordered triple. Above [`MAX_EXHAUSTIVE_STATES`] states this
    /// degrades to seeded random sampling so runtime stays bounded; the
    /// report records what actually ran.
    Exhaustive,
    Random { samples: usize, seed: u64 },
}

/// Largest state count for which exhaustive checking is attempted
/// (64^3 is about 260k ordered triples).
pub const MAX_EXHAUSTIVE_STATES: usize = 64;

const FALLBACK_SAMPLES: usize = 262_144;
const FALLBACK_SEED: u64 = 0;
const MAX_RECORDED_VIOLATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleViolation {
    pub from: String,
    pub via: String,
    pub to: String,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ConsistentWithinTol,
    Violated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub triples_checked: usize,
    pub total_triples: usize,
    pub max_abs_residual: f64,
    /// Certificate triples with |residual| > tolerance, capped at 100
    /// entries; `violation_count` carries the full tally.
    pub violations: Vec<TripleViolation>,
    pub violation_count: usize,
    pub verdict: Verdict,
    pub tolerance: f64,
    pub sampling_used: TripleSampling,
}

/// Residual of a single ordered triple: `E(i,k) - E(i,j) - E(j,k)`.
pub fn additivity_residual<E: PairwiseEvaluator + ?Sized>(
    evaluator: &E,
    from: &str,
    via: &str,
    to: &str,
    context: &str,
) -> Result<f64, ConsistencyError> {
    let whole = evaluator.score(from, to, context)?;
    let first = evaluator.score(from, via, context)?;
    let second = evaluator.score(via, to, context)?;
    Ok(whole - first - second)
}

/// Check triple additivity over a state set.
///
/// Residuals are aggregated in a fixed triple order, so the report is
/// deterministic given the states and (for random sampling) the seed.
pub fn check_cocycle<E: PairwiseEvaluator + ?Sized>(
    evaluator: &E,
    states: &StateSet,
    context: &str,
    tolerance: f64,
    sampling: TripleSampling,
) -> Result<ConsistencyReport, ConsistencyError> {
    let n = states.states.len();
    if n < 3 {
        return Err(ConsistencyError::TooFewStates(n));
    }
    let total_triples = n * n * n;
    let sampling_used = match sampling {
        TripleSampling::Exhaustive if n > MAX_EXHAUSTIVE_STATES => TripleSampling::Random {
            samples: FALLBACK_SAMPLES,
            seed: FALLBACK_SEED,
        },
        other => other,
    };

    let mut report = ConsistencyReport {
        triples_checked: 0,
        total_triples,
        max_abs_residual: 0.0,
        violations: Vec::new(),
        violation_count: 0,
        verdict: Verdict::ConsistentWithinTol,
        tolerance,
        sampling_used,
    };

    let mut visit = |i: usize, j: usize, k: usize| -> Result<(), ConsistencyError> {
        let residual = additivity_residual(
            evaluator,
            &states.states[i],
            &states.states[j],
            &states.states[k],
            context,
        )?;
        report.triples_checked += 1;
        if residual.abs() > report.max_abs_residual {
            report.max_abs_residual = residual.abs();
        }
        if residual.abs() > tolerance {
            report.violation_count += 1;
            if report.violations.len() < MAX_RECORDED_VIOLATIONS {
                report.violations.push(TripleViolation {
                    from: states.states[i].clone(),
                    via: states.states[j].clone(),
                    to: states.states[k].clone(),
                    residual,
                });
            }
        }
        Ok(())
    };

    match sampling_used {
        TripleSampling::Exhaustive => {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        visit(i, j, k)?;
                    }
                }
            }
        }
        TripleSampling::Random { samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..samples {
                let i = rng.random_range(0..n);
                let j = rng.random_range(0..n);
                let k = rng.random_range(0..n);
                visit(i, j, k)?;
            }
        }
    }

    if report.max_abs_residual > tolerance {
        report.verdict = Verdict::Violated;
    }
    Ok(report)
}

/// Reconstruct a potential by anchoring: `phi(s) = E(anchor, s)`.
///
/// For a cocycle-consistent evaluator, differences of the returned
/// assignment reproduce the evaluator exactly; different anchors shift the
/// assignment by a constant.
pub fn induce_potential<E: PairwiseEvaluator + ?Sized>(
    evaluator: &E,
    anchor: &str,
    states: &StateSet,
    context: &str,
) -> Result<BTreeMap<String, f64>, ConsistencyError> {
    if !states.states.iter().any(|s| s == anchor) {
        return Err(ConsistencyError::AnchorNotInSet(anchor.to_string()));
    }
    let mut assignment = BTreeMap::new();
    for state in &states.states {
        assignment.insert(state.clone(), evaluator.score(anchor, state, context)?);
    }
    Ok(assignment)
}

/// Sum of consecutive-pair scores along a trajectory.
pub fn accumulated_progress<E: PairwiseEvaluator + ?Sized>(
    evaluator: &E,
    trajectory: &[String],
    context: &str,
) -> Result<f64, ConsistencyError> {
    if trajectory.len() < 2 {
        return Err(ConsistencyError::TooShort(trajectory.len()));
    }
    let mut total = 0.0;
    for pair in trajectory.windows(2) {
        total += evaluator.score(&pair[0], &pair[1], context)?;
    }
    Ok(total)
}

/// Absolute change of accumulated progress when the trajectory is refined
/// by inserting intermediate states.
///
/// The refined trajectory must contain the original as a subsequence with
/// identical endpoints; zero for any consistent evaluator.
pub fn refinement_drift<E: PairwiseEvaluator + ?Sized>(
    evaluator: &E,
    trajectory: &[String],
    refined: &[String],
    context: &str,
) -> Result<f64, ConsistencyError> {
    if trajectory.len() < 2 {
        return Err(ConsistencyError::TooShort(trajectory.len()));
    }
    if refined.first() != trajectory.first() || refined.last() != trajectory.last() {
        return Err(ConsistencyError::NotARefinement(
            "endpoints differ".into(),
        ));
    }
    let mut remaining = trajectory.iter();
    let mut next = remaining.next();
    for state in refined {
        if Some(state) == next {
            next = remaining.next();
        }
    }
    if next.is_some() {
        return Err(ConsistencyError::NotARefinement(
            "original states are not a subsequence of the refined trajectory".into(),
        ));
    }
    let base = accumulated_progress(evaluator, trajectory, context)?;
    let refined_total = accumulated_progress(evaluator, refined, context)?;
    Ok((base - refined_total).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceViolation {
    pub class_index: usize,
    pub state_a: String,
    pub state_b: String,
    pub gap: f64,
}

/// Report every within-class pair whose score gap exceeds the tolerance.
///
/// `classes` must partition the scored states: blocks disjoint, every
/// member scored, every scored state covered.
pub fn equivalence_invariance_check(
    scores: &BTreeMap<String, f64>,
    classes: &[Vec<String>],
    tolerance: f64,
) -> Result<Vec<EquivalenceViolation>, ConsistencyError> {
    let mut seen = BTreeSet::new();
    for class in classes {
        for state in class {
            if !scores.contains_key(state) {
                return Err(ConsistencyError::InvalidPartition(format!(
                    "state {state:?} has no score"
                )));
            }
            if !seen.insert(state.clone()) {
                return Err(ConsistencyError::InvalidPartition(format!(
                    "state {state:?} appears in more than one block"
                )));
            }
        }
    }
    if seen.len() != scores.len() {
        let missing: Vec<&String> = scores.keys().filter(|k| !seen.contains(*k)).collect();
        return Err(ConsistencyError::InvalidPartition(format!(
            "states not covered by any block: {missing:?}"
        )));
    }

    let mut violations = Vec::new();
    for (class_index, class) in classes.iter().enumerate() {
        for (a_pos, state_a) in class.iter().enumerate() {
            for state_b in &class[a_pos + 1..] {
                let gap = (scores[state_a] - scores[state_b]).abs();
                if gap > tolerance {
                    violations.push(EquivalenceViolation {
                        class_index,
                        state_a: state_a.clone(),
                        state_b: state_b.clone(),
                        gap,
                    });
                }
            }
        }
    }
    Ok(violations)
}
