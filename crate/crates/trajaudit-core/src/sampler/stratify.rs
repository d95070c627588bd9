//! Dual-variable stratified pair selection.
//!
//! Candidates are every ordered presentation of an index pair from each
//! dense sequence: forward (before earlier, label +1, hop normalized by
//! remaining potential) and reversed (before later, label -1, hop
//! normalized by accumulated potential). Cells are (magnitude bin x frame
//! distance stratum); each cell fills its quota with an exact positive /
//! negative split, and a per-bin repair pass keeps bin-level imbalance
//! within one pair. Selection order, RNG seeding, and output ordering are
//! all canonical, so equal inputs and seed reproduce identical output
//! bytes.

use super::{
    assign_bin_with, hop_score, DenseStateSequence, MagnitudeBin, PairEndpoint, ProgressPair,
    SamplerConfig, SamplerError, ALL_BINS, PAIR_SCHEMA_VERSION,
};
use crate::seeding::derive_seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Reported when a cell cannot reach its quota with the candidates it has.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaShortfall {
    pub bin: MagnitudeBin,
    pub stratum: usize,
    pub requested: usize,
    pub available_positive: usize,
    pub available_negative: usize,
    pub emitted: usize,
}

/// Result of one sampling run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub pairs: Vec<ProgressPair>,
    pub shortfalls: Vec<QuotaShortfall>,
    /// Candidates dropped for a degenerate hop denominator or a zero hop.
    pub skipped_degenerate: usize,
    /// Frame-distance stratum bounds actually used (inclusive upper).
    pub dt_boundaries_used: Vec<u32>,
}

#[derive(Debug, Clone)]
struct Candidate {
    sequence: usize,
    before_state: usize,
    after_state: usize,
    hop: f64,
    bin: MagnitudeBin,
    frame_distance: u32,
    label: i8,
    stratum: usize,
}

/// Draw a stratified, label-balanced benchmark from dense sequences.
pub fn sample_pairs(
    sequences: &[DenseStateSequence],
    config: &SamplerConfig,
) -> Result<SampleOutcome, SamplerError> {
    let (small_max, medium_max) = config.bin_boundaries;
    let mut skipped = 0usize;
    let mut candidates: Vec<Candidate> = Vec::new();

    // Canonical enumeration: sequence order, then (i, j), forward before
    // reversed.
    for (seq_idx, seq) in sequences.iter().enumerate() {
        let last = seq.last_index();
        let phi = |i: usize| seq.states[i].potential;
        for i in 0..last {
            for j in (i + 1)..=last {
                let dt = seq.states[j].frame.abs_diff(seq.states[i].frame);
                for (before, after, label) in [(i, j, 1i8), (j, i, -1i8)] {
                    let hop = match hop_score(phi(before), phi(after), phi(0), phi(last)) {
                        Ok(h) => h,
                        Err(SamplerError::DegenerateDenominator) => {
                            skipped += 1;
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                    let bin = match assign_bin_with(hop, small_max, medium_max) {
                        Ok(b) => b,
                        Err(SamplerError::ZeroHop) => {
                            skipped += 1;
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                    debug_assert_eq!(hop.signum() as i8, label);
                    candidates.push(Candidate {
                        sequence: seq_idx,
                        before_state: before,
                        after_state: after,
                        hop,
                        bin,
                        frame_distance: dt,
                        label,
                        stratum: 0,
                    });
                }
            }
        }
    }

    let boundaries = match &config.dt_boundaries {
        Some(bounds) => bounds.clone(),
        None => tercile_boundaries(&candidates),
    };
    let stratum_count = boundaries.len() + 1;
    for c in &mut candidates {
        c.stratum = boundaries.partition_point(|&b| b < c.frame_distance);
    }

    let mut selected: Vec<Candidate> = Vec::new();
    let mut shortfalls = Vec::new();

    for bin in ALL_BINS {
        // Alternates which side receives the extra pair when a cell quota
        // is odd, keeping the whole bin balanced.
        let mut odd_extra_positive = true;
        let mut bin_selected: Vec<Candidate> = Vec::new();
        for stratum in 0..stratum_count {
            let quota = config.quota_per_cell;
            if quota == 0 {
                continue;
            }
            let mut positives: Vec<&Candidate> = candidates
                .iter()
                .filter(|c| c.bin == bin && c.stratum == stratum && c.label > 0)
                .collect();
            let mut negatives: Vec<&Candidate> = candidates
                .iter()
                .filter(|c| c.bin == bin && c.stratum == stratum && c.label < 0)
                .collect();
            let (mut pos_target, mut neg_target) = (quota / 2, quota / 2);
            if quota % 2 == 1 {
                if odd_extra_positive {
                    pos_target += 1;
                } else {
                    neg_target += 1;
                }
                odd_extra_positive = !odd_extra_positive;
            }

            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                config.seed,
                &format!("cell:{bin}:{stratum}"),
            ));
            positives.shuffle(&mut rng);
            negatives.shuffle(&mut rng);
            let pos_take = pos_target.min(positives.len());
            let neg_take = neg_target.min(negatives.len());
            let emitted = pos_take + neg_take;
            if emitted < quota {
                shortfalls.push(QuotaShortfall {
                    bin,
                    stratum,
                    requested: quota,
                    available_positive: positives.len(),
                    available_negative: negatives.len(),
                    emitted,
                });
            }
            bin_selected.extend(positives[..pos_take].iter().map(|c| (*c).clone()));
            bin_selected.extend(negatives[..neg_take].iter().map(|c| (*c).clone()));
        }
        rebalance_bin(&mut bin_selected);
        selected.extend(bin_selected);
    }

    // Canonical output order, independent of selection order.
    selected.sort_by(|a, b| {
        (a.bin, a.stratum, a.sequence, a.before_state.min(a.after_state), a.before_state.max(a.after_state), a.label)
            .cmp(&(b.bin, b.stratum, b.sequence, b.before_state.min(b.after_state), b.before_state.max(b.after_state), b.label))
    });

    let pairs = selected
        .iter()
        .enumerate()
        .map(|(n, c)| {
            let seq = &sequences[c.sequence];
            let last = seq.last_index();
            ProgressPair {
                schema_version: PAIR_SCHEMA_VERSION,
                pair_id: format!("pair-{n:06}"),
                episode_id: seq.episode_id.clone(),
                context: seq.task_context.clone(),
                setting: seq.setting,
                last_state_index: last,
                before: PairEndpoint::from_state(&seq.states[c.before_state]),
                after: PairEndpoint::from_state(&seq.states[c.after_state]),
                ref_start: Some(PairEndpoint::from_state(&seq.states[0])),
                ref_end: Some(PairEndpoint::from_state(&seq.states[last])),
                hop: c.hop,
                bin: c.bin,
                frame_distance: c.frame_distance,
                label: c.label,
            }
        })
        .collect();

    Ok(SampleOutcome {
        pairs,
        shortfalls,
        skipped_degenerate: skipped,
        dt_boundaries_used: boundaries,
    })
}

/// Inclusive tercile bounds over the candidate frame distances.
fn tercile_boundaries(candidates: &[Candidate]) -> Vec<u32> {
    if candidates.is_empty() {
        return Vec::new();
    }
    let mut dts: Vec<u32> = candidates.iter().map(|c| c.frame_distance).collect();
    dts.sort_unstable();
    let first = dts[dts.len() / 3];
    let second = dts[dts.len() * 2 / 3];
    if first == second {
        vec![first]
    } else {
        vec![first, second]
    }
}

/// Trim the majority label side until the bin is balanced within one pair.
/// Removes the candidates selected last in canonical order so the result
/// stays deterministic.
fn rebalance_bin(selected: &mut Vec<Candidate>) {
    loop {
        let pos = selected.iter().filter(|c| c.label > 0).count();
        let neg = selected.len() - pos;
        let (excess, majority) = if pos > neg + 1 {
            (pos - neg - 1, 1i8)
        } else if neg > pos + 1 {
            (neg - pos - 1, -1i8)
        } else {
            return;
        };
        let mut indexed: Vec<usize> = selected
            .iter()
            .enumerate()
            .filter(|(_, c)| c.label == majority)
            .map(|(i, _)| i)
            .collect();
        indexed.sort_by_key(|&i| {
            let c = &selected[i];
            (c.sequence, c.before_state, c.after_state, c.stratum)
        });
        let drop: Vec<usize> = indexed.into_iter().rev().take(excess).collect();
        let mut keep = Vec::with_capacity(selected.len() - drop.len());
        for (i, c) in selected.drain(..).enumerate() {
            if !drop.contains(&i) {
                keep.push(c);
            }
        }
        *selected = keep;
    }
}
