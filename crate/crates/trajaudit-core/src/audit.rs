//! Episode-to-policy auditing.
//!
//! Batch metric computation over traces, milestone reachability
//! aggregation, success-conditioned quality statistics, and failure-only
//! fingerprints. Aggregates use the population standard deviation so
//! single-element groups stay defined, and every percentage is exactly 100
//! times its underlying fraction - rounding happens only at serialization
//! (two decimals in CSV; JSON keeps full precision).

use crate::metrics::{opd_record, MetricError, OpdConfig, OpdRecord};
use crate::trace::PotentialTrace;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("no records to aggregate")]
    EmptyInput,
    #[error("metric error: {0}")]
    Metric(#[from] MetricError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed report: {0}")]
    Malformed(String),
}

/// Milestone thresholds reported by default: 25/50/75/100 percent.
pub const DEFAULT_THRESHOLDS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

const METRIC_NAMES: [&str; 4] = ["MP", "PPL", "CRA", "STR"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditFailure {
    pub episode_id: String,
    pub error: String,
}

/// Batch audit result: one record per trace that audited cleanly, failures
/// isolated per episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditOutcome {
    pub records: Vec<OpdRecord>,
    pub failures: Vec<AuditFailure>,
}

/// Compute metric records for every trace, isolating per-trace errors.
pub fn audit_episodes(traces: &[PotentialTrace], config: &OpdConfig) -> AuditOutcome {
    let mut outcome = AuditOutcome { records: Vec::new(), failures: Vec::new() };
    for trace in traces {
        match opd_record(trace, config) {
            Ok(record) => outcome.records.push(record),
            Err(e) => outcome.failures.push(AuditFailure {
                episode_id: trace.episode_id.clone(),
                error: e.to_string(),
            }),
        }
    }
    outcome
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachabilityPoint {
    pub threshold: f64,
    /// Percentage of episodes with MC >= threshold.
    pub percent: f64,
}

/// Fraction of episodes reaching each milestone threshold, as percentages.
pub fn reachability(records: &[OpdRecord], thresholds: &[f64]) -> Result<Vec<ReachabilityPoint>, AuditError> {
    if records.is_empty() {
        return Err(AuditError::EmptyInput);
    }
    Ok(thresholds
        .iter()
        .map(|&threshold| {
            let reached = records.iter().filter(|r| r.mc >= threshold).count();
            ReachabilityPoint {
                threshold,
                percent: 100.0 * reached as f64 / records.len() as f64,
            }
        })
        .collect())
}

/// One (task, policy) row of the audit table, percentage scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub task_id: String,
    pub policy_id: String,
    pub episodes: usize,
    /// MC@25/50/75/100 percentages, non-increasing.
    pub mc_at: [f64; 4],
    pub mp_mean: f64,
    pub ppl_mean: f64,
    pub cra_mean: f64,
    /// Mean over the episodes that define STR (multi-state traces); absent
    /// when none do.
    pub str_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditTable {
    pub rows: Vec<AuditRow>,
}

fn policy_of(record: &OpdRecord) -> String {
    record.policy_id.clone().unwrap_or_else(|| "unspecified".into())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Aggregate records into per-(task, policy) rows in canonical order.
pub fn audit_table(records: &[OpdRecord]) -> Result<AuditTable, AuditError> {
    if records.is_empty() {
        return Err(AuditError::EmptyInput);
    }
    let mut groups: BTreeMap<(String, String), Vec<&OpdRecord>> = BTreeMap::new();
    for record in records {
        groups
            .entry((record.task_id.clone(), policy_of(record)))
            .or_default()
            .push(record);
    }
    let rows = groups
        .into_iter()
        .map(|((task_id, policy_id), group)| {
            let mc_at = DEFAULT_THRESHOLDS.map(|q| {
                100.0 * group.iter().filter(|r| r.mc >= q).count() as f64 / group.len() as f64
            });
            let collect = |f: fn(&OpdRecord) -> f64| -> Vec<f64> {
                group.iter().map(|r| f(r) * 100.0).collect()
            };
            let strs: Vec<f64> = group
                .iter()
                .filter_map(|r| r.str_ratio.map(|s| s * 100.0))
                .collect();
            AuditRow {
                task_id,
                policy_id,
                episodes: group.len(),
                mc_at,
                mp_mean: mean(&collect(|r| r.mp)),
                ppl_mean: mean(&collect(|r| r.ppl)),
                cra_mean: mean(&collect(|r| r.cra)),
                str_mean: (!strs.is_empty()).then(|| mean(&strs)),
            }
        })
        .collect();
    Ok(AuditTable { rows })
}

/// Mean and population standard deviation, percentage scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> MeanStd {
    MeanStd { mean: mean(values), std: population_std(values) }
}

/// Success-conditioned process/diagnosis statistics for one (task, policy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessConditionedRow {
    pub task_id: String,
    pub policy_id: String,
    pub successes: usize,
    pub ppl: MeanStd,
    pub cra: MeanStd,
    pub str_stats: Option<MeanStd>,
}

/// Statistics over successful episodes only. Policies with zero successes
/// are absent rows, not zeros.
pub fn success_conditioned(records: &[OpdRecord]) -> Vec<SuccessConditionedRow> {
    let mut groups: BTreeMap<(String, String), Vec<&OpdRecord>> = BTreeMap::new();
    for record in records.iter().filter(|r| r.success == Some(true)) {
        groups
            .entry((record.task_id.clone(), policy_of(record)))
            .or_default()
            .push(record);
    }
    groups
        .into_iter()
        .map(|((task_id, policy_id), group)| {
            let ppl: Vec<f64> = group.iter().map(|r| r.ppl * 100.0).collect();
            let cra: Vec<f64> = group.iter().map(|r| r.cra * 100.0).collect();
            let strs: Vec<f64> = group
                .iter()
                .filter_map(|r| r.str_ratio.map(|s| s * 100.0))
                .collect();
            SuccessConditionedRow {
                task_id,
                policy_id,
                successes: group.len(),
                ppl: mean_std(&ppl),
                cra: mean_std(&cra),
                str_stats: (!strs.is_empty()).then(|| mean_std(&strs)),
            }
        })
        .collect()
}

/// One fingerprint entry: the z-score of a policy's failed-episode metric
/// mean within its task, or N/A when the policy has too few failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintRow {
    pub task_id: String,
    pub policy_id: String,
    pub metric: String,
    pub z: Option<f64>,
    pub failed_episodes: usize,
}

/// Policies need at least this many failed episodes for a fingerprint.
pub const DEFAULT_MIN_FAILURES: usize = 3;

/// Failure-only fingerprints: per task and metric, z-normalize the
/// eligible policies' failed-episode means. CRA and STR are sign-flipped
/// before normalization so higher is better on every axis; zero-variance
/// metrics map to all-zero scores.
pub fn fingerprint(records: &[OpdRecord], min_failures: usize) -> Vec<FingerprintRow> {
    let mut tasks: BTreeMap<String, BTreeMap<String, Vec<&OpdRecord>>> = BTreeMap::new();
    for record in records.iter().filter(|r| r.success == Some(false)) {
        tasks
            .entry(record.task_id.clone())
            .or_default()
            .entry(policy_of(record))
            .or_default()
            .push(record);
    }
    let mut rows = Vec::new();
    for (task_id, policies) in &tasks {
        for metric in METRIC_NAMES {
            // Per-policy mean of the (possibly flipped) metric over failed
            // episodes; STR can be undefined for a policy whose failures
            // are all single-state.
            let mut means: BTreeMap<&String, Option<f64>> = BTreeMap::new();
            for (policy, group) in policies {
                let eligible = group.len() >= min_failures;
                let values: Vec<f64> = group
                    .iter()
                    .filter_map(|r| match metric {
                        "MP" => Some(r.mp),
                        "PPL" => Some(r.ppl),
                        "CRA" => Some(-r.cra),
                        _ => r.str_ratio.map(|s| -s),
                    })
                    .collect();
                means.insert(policy, (eligible && !values.is_empty()).then(|| mean(&values)));
            }
            let defined: Vec<f64> = means.values().filter_map(|m| *m).collect();
            let (center, spread) = if defined.is_empty() {
                (0.0, 0.0)
            } else {
                (mean(&defined), population_std(&defined))
            };
            // Spread at float-roundoff scale is zero variance, not signal.
            let zero_variance = spread <= 1e-12 * center.abs().max(1.0);
            for (policy, group) in policies {
                let z = means[policy].map(|m| {
                    if zero_variance {
                        0.0
                    } else {
                        (m - center) / spread
                    }
                });
                rows.push(FingerprintRow {
                    task_id: task_id.clone(),
                    policy_id: (*policy).clone(),
                    metric: metric.to_string(),
                    z,
                    failed_episodes: group.len(),
                });
            }
        }
    }
    rows
}

/// Write the audit table as CSV in the reporting column order
/// (MC@25..MC@100, MP, PPL, CRA, STR), two-decimal presentation.
pub fn write_audit_csv<W: Write>(writer: W, table: &AuditTable) -> Result<(), AuditError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record([
        "task", "policy", "episodes", "mc_at_25", "mc_at_50", "mc_at_75", "mc_at_100", "mp",
        "ppl", "cra", "str",
    ])
    .map_err(io_err)?;
    for row in &table.rows {
        csv.write_record([
            row.task_id.clone(),
            row.policy_id.clone(),
            row.episodes.to_string(),
            format!("{:.2}", row.mc_at[0]),
            format!("{:.2}", row.mc_at[1]),
            format!("{:.2}", row.mc_at[2]),
            format!("{:.2}", row.mc_at[3]),
            format!("{:.2}", row.mp_mean),
            format!("{:.2}", row.ppl_mean),
            format!("{:.2}", row.cra_mean),
            row.str_mean.map(|s| format!("{s:.2}")).unwrap_or_default(),
        ])
        .map_err(io_err)?;
    }
    csv.flush()?;
    Ok(())
}

/// Long-format reachability curves: one line per (task, policy, threshold).
pub fn write_reachability_csv<W: Write>(
    writer: W,
    records: &[OpdRecord],
    thresholds: &[f64],
) -> Result<(), AuditError> {
    let mut groups: BTreeMap<(String, String), Vec<OpdRecord>> = BTreeMap::new();
    for record in records {
        groups
            .entry((record.task_id.clone(), policy_of(record)))
            .or_default()
            .push(record.clone());
    }
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["task", "policy", "threshold", "percent"]).map_err(io_err)?;
    for ((task, policy), group) in &groups {
        for point in reachability(group, thresholds)? {
            csv.write_record([
                task.clone(),
                policy.clone(),
                format!("{}", point.threshold),
                format!("{:.2}", point.percent),
            ])
            .map_err(io_err)?;
        }
    }
    csv.flush()?;
    Ok(())
}

/// Long-format fingerprints: one line per (task, policy, metric); the z
/// field is empty for N/A entries.
pub fn write_fingerprint_csv<W: Write>(writer: W, rows: &[FingerprintRow]) -> Result<(), AuditError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["task", "policy", "metric", "z", "failed_episodes"]).map_err(io_err)?;
    for row in rows {
        csv.write_record([
            row.task_id.clone(),
            row.policy_id.clone(),
            row.metric.clone(),
            row.z.map(|z| format!("{z:.4}")).unwrap_or_default(),
            row.failed_episodes.to_string(),
        ])
        .map_err(io_err)?;
    }
    csv.flush()?;
    Ok(())
}

/// Full-precision JSON emission; re-parsing gives back equal structures.
pub fn write_audit_json<W: Write>(writer: W, table: &AuditTable) -> Result<(), AuditError> {
    serde_json::to_writer_pretty(writer, table).map_err(|e| AuditError::Malformed(e.to_string()))
}

pub fn read_audit_json<R: std::io::Read>(reader: R) -> Result<AuditTable, AuditError> {
    serde_json::from_reader(reader).map_err(|e| AuditError::Malformed(e.to_string()))
}

fn io_err(e: csv::Error) -> AuditError {
    AuditError::Io(std::io::Error::other(e))
}
