//! Rejected metric candidates, kept as a documented counterexample suite.
//!
//! Each function reproduces a concrete failure mode: PPE blows up on stalls,
//! PTI prefers incomplete early progress, EAD flips with step count, PJ
//! penalizes discrete progress events, CS shifts under episode extension,
//! RR cannot separate persistent drops from quick recovery, and GRDTW cannot
//! distinguish trajectories with identical progress profiles. None of these
//! feed auditing decisions.

use crate::trace::PotentialTrace;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiscardedError {
    #[error("trace has no increments")]
    DegenerateTrace,
    #[error("trace needs T >= 3 increments, got {0}")]
    TooShort(usize),
    #[error("window {window} exceeds step count {steps}")]
    WindowTooLarge { window: usize, steps: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("reference set is empty")]
    NoReferences,
}

/// Thresholds and normalizers for the discarded metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscardedConfig {
    pub ppe_epsilon: f64,
    pub ead_epsilon: f64,
    pub cs_window: usize,
    pub grdtw_normalizer: f64,
}

impl Default for DiscardedConfig {
    fn default() -> Self {
        Self {
            ppe_epsilon: 1e-8,
            ead_epsilon: 0.05,
            cs_window: 5,
            grdtw_normalizer: 1.0,
        }
    }
}

fn increments(trace: &PotentialTrace) -> Vec<f64> {
    trace.values.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Progress path efficiency: `1 / (total variation + epsilon)`.
///
/// Ill conditioned by construction: a constant trace scores `1/epsilon`.
pub fn ppe(trace: &PotentialTrace, epsilon: f64) -> f64 {
    debug_assert!(epsilon > 0.0);
    let tv: f64 = increments(trace).iter().map(|d| d.abs()).sum();
    1.0 / (tv + epsilon)
}

/// Progress time integral: mean potential over the episode.
pub fn pti(trace: &PotentialTrace) -> f64 {
    trace.values.iter().sum::<f64>() / trace.values.len() as f64
}

/// Effective action density: fraction of steps with increment strictly
/// above `epsilon`. One-sided, unlike the stagnation ratio.
pub fn ead(trace: &PotentialTrace, epsilon: f64) -> Result<f64, DiscardedError> {
    debug_assert!(epsilon > 0.0);
    let steps = trace.steps();
    if steps == 0 {
        return Err(DiscardedError::DegenerateTrace);
    }
    let active = increments(trace).iter().filter(|d| **d > epsilon).count();
    Ok(active as f64 / steps as f64)
}

/// Progress jerkiness: mean absolute difference of consecutive increments,
/// summed over `t = 1..T-2` per the defining equation (the first increment
/// pair is not included).
pub fn pj(trace: &PotentialTrace) -> Result<f64, DiscardedError> {
    let steps = trace.steps();
    if steps < 3 {
        return Err(DiscardedError::TooShort(steps));
    }
    let d = increments(trace);
    let sum: f64 = (1..=steps - 2).map(|t| (d[t + 1] - d[t]).abs()).sum();
    Ok(sum / (steps - 2) as f64)
}

/// Convergence stability: population variance of the final `K + 1` values
/// `{phi_{T-K}, ..., phi_T}`.
pub fn cs(trace: &PotentialTrace, window: usize) -> Result<f64, DiscardedError> {
    debug_assert!(window >= 1);
    let steps = trace.steps();
    if window > steps {
        return Err(DiscardedError::WindowTooLarge { window, steps });
    }
    let tail = &trace.values[trace.values.len() - window - 1..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    Ok(tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / tail.len() as f64)
}

/// Regression rate: accumulated local decreases.
pub fn rr(trace: &PotentialTrace) -> f64 {
    increments(trace).iter().map(|d| (-d).max(0.0)).sum()
}

/// Dynamic time warping distance between two scalar sequences with
/// absolute-difference local cost and {match, insert, delete} steps.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<f64, DiscardedError> {
    if a.is_empty() || b.is_empty() {
        return Err(DiscardedError::EmptySequence);
    }
    // One-row DP over the (len a + 1) x (len b + 1) cost matrix.
    let mut prev = vec![f64::INFINITY; b.len() + 1];
    let mut curr = vec![f64::INFINITY; b.len() + 1];
    prev[0] = 0.0;
    for &ai in a {
        curr[0] = f64::INFINITY;
        for (j, &bj) in b.iter().enumerate() {
            let cost = (ai - bj).abs();
            curr[j + 1] = cost + prev[j + 1].min(curr[j]).min(prev[j]);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    Ok(prev[b.len()])
}

/// Golden-reference alignment: best `1 - DTW/Z` over a reference set.
pub fn grdtw(
    trace: &PotentialTrace,
    references: &[PotentialTrace],
    normalizer: f64,
) -> Result<f64, DiscardedError> {
    debug_assert!(normalizer > 0.0);
    if references.is_empty() {
        return Err(DiscardedError::NoReferences);
    }
    let mut best = f64::NEG_INFINITY;
    for reference in references {
        let d = dtw_distance(&trace.values, &reference.values)?;
        best = best.max(1.0 - d / normalizer);
    }
    Ok(best)
}

/// Default normalizer when the caller supplies none: the longer of the
/// trace and the longest reference.
pub fn grdtw_default_normalizer(trace: &PotentialTrace, references: &[PotentialTrace]) -> f64 {
    let longest_ref = references.iter().map(|r| r.values.len()).max().unwrap_or(0);
    trace.values.len().max(longest_ref).max(1) as f64
}
