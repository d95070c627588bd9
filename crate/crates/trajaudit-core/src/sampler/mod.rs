//! Benchmark-pair construction from annotated episodes.
//!
//! An annotated episode carries human keyframes that split it into semantic
//! phases. Retained (monotonic) phases are densely discretized into states
//! with a linear potential, ordered state pairs are scored with a
//! stage-aware hop normalization, and a dual-variable stratified sampler
//! draws a label-balanced benchmark from (magnitude bin x frame distance)
//! cells. Observation noise injection for robustness experiments lives in
//! [`noise`].

mod stratify;
pub mod noise;

pub use stratify::{sample_pairs, QuotaShortfall, SampleOutcome};

use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid annotation {episode}: {message}")]
    InvalidAnnotation { episode: String, message: String },
    #[error("episode {episode} too short: {frames} frames over {segments} segments at chunk size {chunk} gives zero states per segment")]
    TooShortEpisode {
        episode: String,
        frames: u32,
        segments: usize,
        chunk: u32,
    },
    #[error("episode {0} has no monotonic phases")]
    NoMonotonicPhases(String),
    #[error("hop inputs out of order: need phi_0 <= phi_p, phi_q <= phi_M")]
    HopOutOfRange,
    #[error("degenerate hop denominator")]
    DegenerateDenominator,
    #[error("zero hop has no direction")]
    ZeroHop,
    #[error("noise level {0} outside [0, 1]")]
    InvalidAlpha(f64),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Data collection setting of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setting {
    Real,
    Sim,
    #[serde(rename = "UMI")]
    Umi,
    Human,
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Setting::Real => write!(f, "Real"),
            Setting::Sim => write!(f, "Sim"),
            Setting::Umi => write!(f, "UMI"),
            Setting::Human => write!(f, "Human"),
        }
    }
}

/// One raw episode: keyframe segmentation, per-phase monotonicity flags,
/// and optional per-frame observation references.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeAnnotation {
    pub episode_id: String,
    pub task_context: String,
    /// Frame count L.
    pub length: u32,
    /// Strictly increasing keyframe indices, first 0 and last L-1.
    pub keyframes: Vec<u32>,
    /// Monotonicity flag per segment; only monotonic phases are eligible.
    pub phases: Vec<bool>,
    /// Observation references per frame (one or more views), length L.
    #[serde(default)]
    pub frame_refs: Option<Vec<Vec<String>>>,
    pub setting: Setting,
}

impl EpisodeAnnotation {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let fail = |message: String| SamplerError::InvalidAnnotation {
            episode: self.episode_id.clone(),
            message,
        };
        if self.length < 2 {
            return Err(fail("length must be at least 2 frames".into()));
        }
        if self.keyframes.len() < 2 {
            return Err(fail("need at least two keyframes".into()));
        }
        if self.keyframes[0] != 0 {
            return Err(fail("first keyframe must be frame 0".into()));
        }
        if *self.keyframes.last().unwrap() != self.length - 1 {
            return Err(fail("last keyframe must be the final frame".into()));
        }
        if !self.keyframes.windows(2).all(|w| w[0] < w[1]) {
            return Err(fail("keyframes must be strictly increasing".into()));
        }
        if self.phases.len() != self.keyframes.len() - 1 {
            return Err(fail(format!(
                "expected {} phase flags, got {}",
                self.keyframes.len() - 1,
                self.phases.len()
            )));
        }
        if let Some(refs) = &self.frame_refs {
            if refs.len() != self.length as usize {
                return Err(fail(format!(
                    "frame_refs has {} entries for {} frames",
                    refs.len(),
                    self.length
                )));
            }
        }
        Ok(())
    }

    pub fn segment_count(&self) -> usize {
        self.keyframes.len() - 1
    }
}

/// Whether discretization uses only monotonic phases or every segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseFilter {
    #[default]
    RetainedOnly,
    All,
}

/// One dense state: source frame, linear potential, segment provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseState {
    pub index: usize,
    pub frame: u32,
    pub potential: f64,
    /// Segment that produced this state; `None` for the global start frame.
    pub segment: Option<usize>,
    pub refs: Vec<String>,
}

/// Densely discretized episode with potentials `i / M` from 0 to 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseStateSequence {
    pub episode_id: String,
    pub task_context: String,
    pub setting: Setting,
    pub states: Vec<DenseState>,
}

impl DenseStateSequence {
    /// Index M of the terminal state.
    pub fn last_index(&self) -> usize {
        self.states.len() - 1
    }
}

/// Discretize an episode: each retained segment contributes
/// `m = floor(floor(L / C) / N)` states, equally spaced by frame index,
/// right keyframe included and left excluded; the global start frame is
/// state 0. Potentials are exactly `i / M`.
///
/// When a segment spans fewer than `m` frames, rounding can repeat a source
/// frame; potentials stay strictly increasing regardless.
pub fn discretize(
    annotation: &EpisodeAnnotation,
    chunk_size: u32,
    filter: PhaseFilter,
) -> Result<DenseStateSequence, SamplerError> {
    annotation.validate()?;
    let segments = annotation.segment_count();
    let states_per_segment = ((annotation.length / chunk_size) as usize) / segments;
    if states_per_segment == 0 {
        return Err(SamplerError::TooShortEpisode {
            episode: annotation.episode_id.clone(),
            frames: annotation.length,
            segments,
            chunk: chunk_size,
        });
    }
    let retained: Vec<usize> = (0..segments)
        .filter(|&j| filter == PhaseFilter::All || annotation.phases[j])
        .collect();
    if retained.is_empty() {
        return Err(SamplerError::NoMonotonicPhases(annotation.episode_id.clone()));
    }

    let refs_for = |frame: u32| -> Vec<String> {
        annotation
            .frame_refs
            .as_ref()
            .map(|refs| refs[frame as usize].clone())
            .unwrap_or_default()
    };

    let last_index = retained.len() * states_per_segment;
    let mut states = Vec::with_capacity(last_index + 1);
    states.push(DenseState {
        index: 0,
        frame: annotation.keyframes[0],
        potential: 0.0,
        segment: None,
        refs: refs_for(annotation.keyframes[0]),
    });
    for &j in &retained {
        let left = annotation.keyframes[j];
        let right = annotation.keyframes[j + 1];
        let span = (right - left) as f64;
        for k in 1..=states_per_segment {
            let frame =
                left + (k as f64 * span / states_per_segment as f64).round() as u32;
            let index = states.len();
            states.push(DenseState {
                index,
                frame,
                potential: index as f64 / last_index as f64,
                segment: Some(j),
                refs: refs_for(frame),
            });
        }
    }
    debug_assert_eq!(states.len(), last_index + 1);
    Ok(DenseStateSequence {
        episode_id: annotation.episode_id.clone(),
        task_context: annotation.task_context.clone(),
        setting: annotation.setting,
        states,
    })
}

/// Stage-aware normalized hop between two potentials.
///
/// Forward changes are normalized by the remaining potential, backward
/// changes by the accumulated potential, giving values in `[0, 1]` and
/// `[-1, 0)` respectively.
pub fn hop_score(phi_p: f64, phi_q: f64, phi_0: f64, phi_m: f64) -> Result<f64, SamplerError> {
    if !(phi_0 <= phi_p && phi_p <= phi_m && phi_0 <= phi_q && phi_q <= phi_m) {
        return Err(SamplerError::HopOutOfRange);
    }
    if phi_q >= phi_p {
        let denom = phi_m - phi_p;
        if denom <= 0.0 {
            return Err(SamplerError::DegenerateDenominator);
        }
        Ok((phi_q - phi_p) / denom)
    } else {
        let denom = phi_p - phi_0;
        if denom <= 0.0 {
            return Err(SamplerError::DegenerateDenominator);
        }
        Ok((phi_q - phi_p) / denom)
    }
}

/// Relative comparison scale of a pair, binned on |H|.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MagnitudeBin {
    Small,
    Medium,
    Large,
}

impl std::fmt::Display for MagnitudeBin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MagnitudeBin::Small => write!(f, "Small"),
            MagnitudeBin::Medium => write!(f, "Medium"),
            MagnitudeBin::Large => write!(f, "Large"),
        }
    }
}

pub const ALL_BINS: [MagnitudeBin; 3] =
    [MagnitudeBin::Small, MagnitudeBin::Medium, MagnitudeBin::Large];

/// Bin |H| at exact thirds; boundary values fall in the lower bin.
pub fn assign_bin(hop: f64) -> Result<MagnitudeBin, SamplerError> {
    assign_bin_with(hop, 1.0 / 3.0, 2.0 / 3.0)
}

pub fn assign_bin_with(hop: f64, small_max: f64, medium_max: f64) -> Result<MagnitudeBin, SamplerError> {
    if hop == 0.0 {
        return Err(SamplerError::ZeroHop);
    }
    let magnitude = hop.abs();
    if magnitude <= small_max {
        Ok(MagnitudeBin::Small)
    } else if magnitude <= medium_max {
        Ok(MagnitudeBin::Medium)
    } else {
        Ok(MagnitudeBin::Large)
    }
}

/// One side of a benchmark pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEndpoint {
    pub state_index: usize,
    pub frame: u32,
    pub refs: Vec<String>,
}

impl PairEndpoint {
    fn from_state(state: &DenseState) -> Self {
        Self {
            state_index: state.index,
            frame: state.frame,
            refs: state.refs.clone(),
        }
    }
}

pub const PAIR_SCHEMA_VERSION: u32 = 1;

/// One benchmark case: task context, before/after observations, optional
/// start/end anchors, hop score, magnitude bin, frame distance, and the
/// signed label. `sign(hop) == label` always; there is no neutral class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressPair {
    pub schema_version: u32,
    pub pair_id: String,
    pub episode_id: String,
    pub context: String,
    pub setting: Setting,
    /// Terminal state index M of the source sequence; with `state_index`
    /// this locates each endpoint on the episode's progress scale.
    pub last_state_index: usize,
    pub before: PairEndpoint,
    pub after: PairEndpoint,
    pub ref_start: Option<PairEndpoint>,
    pub ref_end: Option<PairEndpoint>,
    pub hop: f64,
    pub bin: MagnitudeBin,
    pub frame_distance: u32,
    pub label: i8,
}

/// Sampler configuration: chunk size C, per-cell quotas, stratum and bin
/// boundaries, and the seed all randomness derives from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub chunk_size: u32,
    /// Target number of pairs per (bin x frame-distance stratum) cell.
    pub quota_per_cell: usize,
    /// Inclusive upper bounds separating frame-distance strata. `None`
    /// derives terciles from the candidate pool; an empty list means a
    /// single stratum.
    pub dt_boundaries: Option<Vec<u32>>,
    /// Upper bounds of the Small and Medium bins on |H|.
    pub bin_boundaries: (f64, f64),
    pub seed: u64,
    pub phase_filter: PhaseFilter,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chunk_size: 30,
            quota_per_cell: 50,
            dt_boundaries: None,
            bin_boundaries: (1.0 / 3.0, 2.0 / 3.0),
            seed: 0,
            phase_filter: PhaseFilter::RetainedOnly,
        }
    }
}

/// Line number paired with the reason a line was rejected.
pub type LineFailure = (usize, String);

/// Read JSON Lines episode annotations; malformed lines are isolated.
pub fn read_annotations_jsonl<R: BufRead>(
    reader: R,
) -> Result<(Vec<EpisodeAnnotation>, Vec<LineFailure>), SamplerError> {
    let mut annotations = Vec::new();
    let mut failures = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<EpisodeAnnotation>(&line) {
            Ok(annotation) => match annotation.validate() {
                Ok(()) => annotations.push(annotation),
                Err(e) => failures.push((lineno, e.to_string())),
            },
            Err(e) => failures.push((lineno, e.to_string())),
        }
    }
    Ok((annotations, failures))
}

/// Write pairs as JSON Lines, one object per pair, schema version embedded.
pub fn write_pairs_jsonl<W: Write>(writer: &mut W, pairs: &[ProgressPair]) -> Result<(), SamplerError> {
    for pair in pairs {
        serde_json::to_writer(&mut *writer, pair).map_err(std::io::Error::other)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Read pairs back from JSON Lines.
pub fn read_pairs_jsonl<R: BufRead>(reader: R) -> Result<Vec<ProgressPair>, SamplerError> {
    let mut pairs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: ProgressPair =
            serde_json::from_str(&line).map_err(|e| SamplerError::Malformed {
                line: lineno + 1,
                message: e.to_string(),
            })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

#[cfg(test)]
pub(crate) fn synthetic_annotation(
    episode_id: &str,
    length: u32,
    keyframes: &[u32],
    setting: Setting,
) -> EpisodeAnnotation {
    EpisodeAnnotation {
        episode_id: episode_id.into(),
        task_context: "pick up the block".into(),
        length,
        keyframes: keyframes.to_vec(),
        phases: vec![true; keyframes.len() - 1],
        frame_refs: None,
        setting,
    }
}
