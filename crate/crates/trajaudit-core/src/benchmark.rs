//! Scoring judges on benchmark pairs.
//!
//! Accuracy is stratified by (magnitude bin x collection setting). Failed
//! verdicts are excluded from accuracy denominators and surfaced as their
//! own counts. Averages are unweighted means over present cells - not
//! pair-weighted - so sparse cells count the same as full ones; the two
//! conventions differ whenever cell sizes differ, and the one used here is
//! recorded in the serialized metadata.

use crate::judge::{JudgeVerdict, VerdictOutcome};
use crate::sampler::{MagnitudeBin, ProgressPair, Setting, ALL_BINS};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("verdict {verdict_id:?} at position {position} does not match pair {pair_id:?}")]
    IdMismatch {
        position: usize,
        verdict_id: String,
        pair_id: String,
    },
    #[error("verdict count {verdicts} does not match pair count {pairs}")]
    LengthMismatch { verdicts: usize, pairs: usize },
    #[error("no tables to compare")]
    NoTables,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub const ALL_SETTINGS: [Setting; 4] = [Setting::Real, Setting::Sim, Setting::Umi, Setting::Human];

/// Per-cell tallies. Accuracy is defined only when `judged > 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellStats {
    pub judged: usize,
    pub correct: usize,
    pub failed: usize,
}

impl CellStats {
    pub fn accuracy(&self) -> Option<f64> {
        (self.judged > 0).then(|| self.correct as f64 / self.judged as f64)
    }
}

/// Accuracy per (bin, setting) cell plus failure tallies and tie count.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    #[serde(with = "cell_list")]
    pub cells: BTreeMap<(MagnitudeBin, Setting), CellStats>,
    pub ties: usize,
}

/// JSON representation of the cell map as a list of keyed entries.
mod cell_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Entry {
        bin: MagnitudeBin,
        setting: Setting,
        judged: usize,
        correct: usize,
        failed: usize,
        accuracy: Option<f64>,
    }

    pub fn serialize<S: Serializer>(
        cells: &BTreeMap<(MagnitudeBin, Setting), CellStats>,
        serializer: S,
    ) -> Result<S::Ok, S::Error> {
        let entries: Vec<Entry> = cells
            .iter()
            .map(|(&(bin, setting), stats)| Entry {
                bin,
                setting,
                judged: stats.judged,
                correct: stats.correct,
                failed: stats.failed,
                accuracy: stats.accuracy(),
            })
            .collect();
        serde::Serialize::serialize(&entries, serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> Result<BTreeMap<(MagnitudeBin, Setting), CellStats>, D::Error> {
        let entries: Vec<Entry> = serde::Deserialize::deserialize(deserializer)?;
        Ok(entries
            .into_iter()
            .map(|e| {
                (
                    (e.bin, e.setting),
                    CellStats { judged: e.judged, correct: e.correct, failed: e.failed },
                )
            })
            .collect())
    }
}

impl AccuracyTable {
    pub fn cell(&self, bin: MagnitudeBin, setting: Setting) -> Option<&CellStats> {
        self.cells.get(&(bin, setting))
    }

    /// Unweighted mean accuracy over the bin's present setting cells.
    pub fn bin_average(&self, bin: MagnitudeBin) -> Option<f64> {
        let values: Vec<f64> = ALL_SETTINGS
            .iter()
            .filter_map(|s| self.cell(bin, *s).and_then(CellStats::accuracy))
            .collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }

    /// Unweighted mean accuracy over every present cell.
    pub fn overall_average(&self) -> Option<f64> {
        let values: Vec<f64> = self.cells.values().filter_map(CellStats::accuracy).collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }

    /// Pooled tallies across all cells: (judged, correct, failed).
    pub fn totals(&self) -> (usize, usize, usize) {
        self.cells.values().fold((0, 0, 0), |(j, c, f), cell| {
            (j + cell.judged, c + cell.correct, f + cell.failed)
        })
    }

    /// Pair-pooled accuracy over every judged pair, ignoring cells.
    pub fn pooled_accuracy(&self) -> Option<f64> {
        let (judged, correct, _) = self.totals();
        (judged > 0).then(|| correct as f64 / judged as f64)
    }
}

/// Score verdicts against their pairs. Verdicts must align 1:1 with pairs
/// by id (the order `batch_judge` preserves).
pub fn score(pairs: &[ProgressPair], verdicts: &[JudgeVerdict]) -> Result<AccuracyTable, BenchmarkError> {
    if pairs.len() != verdicts.len() {
        return Err(BenchmarkError::LengthMismatch {
            verdicts: verdicts.len(),
            pairs: pairs.len(),
        });
    }
    let mut table = AccuracyTable::default();
    for (position, (pair, verdict)) in pairs.iter().zip(verdicts).enumerate() {
        if pair.pair_id != verdict.pair_id {
            return Err(BenchmarkError::IdMismatch {
                position,
                verdict_id: verdict.pair_id.clone(),
                pair_id: pair.pair_id.clone(),
            });
        }
        let cell = table.cells.entry((pair.bin, pair.setting)).or_default();
        match &verdict.outcome {
            VerdictOutcome::Direction { direction, tie } => {
                cell.judged += 1;
                if *direction == pair.label {
                    cell.correct += 1;
                }
                if *tie {
                    table.ties += 1;
                }
            }
            VerdictOutcome::Failure { .. } => cell.failed += 1,
        }
    }
    // Cells that saw only failures stay (failure counts are data); cells
    // never touched stay absent.
    Ok(table)
}

/// One judge's row in a comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub judge: String,
    /// Accuracy per (bin, setting); absent cells are `None`.
    pub cells: Vec<Option<f64>>,
    pub bin_averages: Vec<Option<f64>>,
    pub overall: Option<f64>,
    pub failed: usize,
    /// Set when this judge is missing cells that other judges have, so its
    /// averages cover a smaller cell set.
    pub footnote_partial_cells: bool,
}

/// Ranked multi-judge comparison plus the averaging convention used.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub averaging: String,
}

/// Rank tables by overall average (descending), ties broken by name.
pub fn compare(tables: &BTreeMap<String, AccuracyTable>) -> Result<ComparisonReport, BenchmarkError> {
    if tables.is_empty() {
        return Err(BenchmarkError::NoTables);
    }
    let union: std::collections::BTreeSet<(MagnitudeBin, Setting)> = tables
        .values()
        .flat_map(|t| t.cells.iter().filter(|(_, c)| c.judged > 0).map(|(k, _)| *k))
        .collect();
    let mut rows: Vec<ComparisonRow> = tables
        .iter()
        .map(|(judge, table)| {
            let present: std::collections::BTreeSet<(MagnitudeBin, Setting)> = table
                .cells
                .iter()
                .filter(|(_, c)| c.judged > 0)
                .map(|(k, _)| *k)
                .collect();
            ComparisonRow {
                judge: judge.clone(),
                cells: ALL_BINS
                    .iter()
                    .flat_map(|bin| ALL_SETTINGS.iter().map(move |s| (*bin, *s)))
                    .map(|key| table.cells.get(&key).and_then(CellStats::accuracy))
                    .collect(),
                bin_averages: ALL_BINS.iter().map(|b| table.bin_average(*b)).collect(),
                overall: table.overall_average(),
                failed: table.totals().2,
                footnote_partial_cells: present != union,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        b.overall
            .unwrap_or(f64::NEG_INFINITY)
            .partial_cmp(&a.overall.unwrap_or(f64::NEG_INFINITY))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.judge.cmp(&b.judge))
    });
    Ok(ComparisonReport {
        rows,
        averaging: "unweighted mean over present (bin, setting) cells".into(),
    })
}

impl ComparisonReport {
    /// CSV layout mirroring the benchmark table: bins as column groups,
    /// settings as columns, per-bin Avg after each group, AVG last.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), BenchmarkError> {
        let mut csv = csv::Writer::from_writer(writer);
        let mut header = vec!["judge".to_string()];
        for bin in ALL_BINS {
            for setting in ALL_SETTINGS {
                header.push(format!("{bin}:{setting}"));
            }
            header.push(format!("{bin}:Avg"));
        }
        header.push("AVG".into());
        header.push("failed".into());
        header.push("footnote_partial_cells".into());
        csv.write_record(&header)?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        for row in &self.rows {
            let mut record = vec![row.judge.clone()];
            for (bin_idx, _) in ALL_BINS.iter().enumerate() {
                for (s_idx, _) in ALL_SETTINGS.iter().enumerate() {
                    record.push(fmt(row.cells[bin_idx * ALL_SETTINGS.len() + s_idx]));
                }
                record.push(fmt(row.bin_averages[bin_idx]));
            }
            record.push(fmt(row.overall));
            record.push(row.failed.to_string());
            record.push(row.footnote_partial_cells.to_string());
            csv.write_record(&record)?;
        }
        csv.flush()?;
        Ok(())
    }
}

impl From<csv::Error> for BenchmarkError {
    fn from(e: csv::Error) -> Self {
        BenchmarkError::Io(std::io::Error::other(e))
    }
}
