//! Subcommand implementations. Each returns the process exit code:
//! 0 success, 2 partial (some items failed, reports still written),
//! fatal errors bubble up as `Err` and exit 1.

use crate::config::RunConfig;
use anyhow::{bail, Context, Result};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use trajaudit_core::audit::{
    audit_episodes, audit_table, fingerprint, success_conditioned, write_audit_csv,
    write_audit_json, write_fingerprint_csv, write_reachability_csv, AuditOutcome,
    DEFAULT_MIN_FAILURES, DEFAULT_THRESHOLDS,
};
use trajaudit_core::benchmark::{compare, score, AccuracyTable};
use trajaudit_core::consistency::{
    check_cocycle, equivalence_invariance_check, induce_potential, ClippedDifferenceEvaluator,
    PairwiseEvaluator, PotentialDifferenceEvaluator, StateSet, TripleSampling,
};
use trajaudit_core::discarded::{cs, ead, pj, ppe, pti, rr, DiscardedConfig};
use trajaudit_core::judge::{build_judge, JudgeHarness, JudgeVerdict};
use trajaudit_core::metrics::{calibrate_epsilon, opd_record, OpdRecord};
use trajaudit_core::npy;
use trajaudit_core::sampler::{
    discretize, read_annotations_jsonl, read_pairs_jsonl, sample_pairs, write_pairs_jsonl,
    noise::perturb_observation, DenseStateSequence, ProgressPair,
};
use trajaudit_core::seeding::derive_seed;
use trajaudit_core::trace::{read_traces_jsonl, PotentialTrace};

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut writer = create(path)?;
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// Ordered parallel map over traces, bounded by `jobs` worker threads.
/// Output order matches input order regardless of scheduling.
fn audit_parallel(traces: &[PotentialTrace], config: &RunConfig) -> AuditOutcome {
    if config.jobs <= 1 || traces.len() < 2 {
        return audit_episodes(traces, &config.opd);
    }
    let chunk = traces.len().div_ceil(config.jobs);
    let outcomes: Vec<AuditOutcome> = std::thread::scope(|scope| {
        let handles: Vec<_> = traces
            .chunks(chunk)
            .map(|slice| scope.spawn(|| audit_episodes(slice, &config.opd)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("audit worker panicked")).collect()
    });
    let mut merged = AuditOutcome { records: Vec::new(), failures: Vec::new() };
    for outcome in outcomes {
        merged.records.extend(outcome.records);
        merged.failures.extend(outcome.failures);
    }
    merged
}

pub fn cmd_audit(config: &RunConfig, traces_path: &Path) -> Result<i32> {
    let file = File::open(traces_path)
        .with_context(|| format!("opening traces file {}", traces_path.display()))?;
    let ingest = read_traces_jsonl(BufReader::new(file), config.validation)?;
    for warning in &ingest.warnings {
        eprintln!("warning: {warning}");
    }
    if ingest.traces.is_empty() {
        bail!("no valid traces in {}", traces_path.display());
    }
    config.echo()?;
    let outcome = audit_parallel(&ingest.traces, config);

    let table = audit_table(&outcome.records)?;
    write_audit_csv(create(&config.out.join("audit_table.csv"))?, &table)?;
    write_audit_json(create(&config.out.join("audit_table.json"))?, &table)?;
    write_reachability_csv(
        create(&config.out.join("reachability.csv"))?,
        &outcome.records,
        &DEFAULT_THRESHOLDS,
    )?;
    write_success_csv(&config.out.join("success_conditioned.csv"), &outcome.records)?;
    let prints = fingerprint(&outcome.records, DEFAULT_MIN_FAILURES);
    write_fingerprint_csv(create(&config.out.join("fingerprints.csv"))?, &prints)?;

    let mut failures: Vec<(String, String)> = ingest
        .failures
        .iter()
        .map(|(line, message)| (format!("line {line}"), message.clone()))
        .collect();
    failures.extend(
        outcome
            .failures
            .iter()
            .map(|f| (f.episode_id.clone(), f.error.clone())),
    );
    if failures.is_empty() {
        Ok(0)
    } else {
        write_json(&config.out.join("failures.json"), &failures)?;
        eprintln!("{} episode(s) failed; see failures.json", failures.len());
        Ok(2)
    }
}

fn write_success_csv(path: &Path, records: &[OpdRecord]) -> Result<()> {
    let rows = success_conditioned(records);
    let mut csv = csv::Writer::from_writer(create(path)?);
    csv.write_record([
        "task", "policy", "successes", "ppl_mean", "ppl_std", "cra_mean", "cra_std",
        "str_mean", "str_std",
    ])?;
    for row in rows {
        let str_stats = row.str_stats;
        csv.write_record([
            row.task_id,
            row.policy_id,
            row.successes.to_string(),
            format!("{:.2}", row.ppl.mean),
            format!("{:.2}", row.ppl.std),
            format!("{:.2}", row.cra.mean),
            format!("{:.2}", row.cra.std),
            str_stats.map(|s| format!("{:.2}", s.mean)).unwrap_or_default(),
            str_stats.map(|s| format!("{:.2}", s.std)).unwrap_or_default(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn cmd_pairs_build(
    config: &RunConfig,
    annotations_path: &Path,
    noise_level: Option<f64>,
) -> Result<i32> {
    let file = File::open(annotations_path)
        .with_context(|| format!("opening annotations file {}", annotations_path.display()))?;
    let (annotations, line_failures) = read_annotations_jsonl(BufReader::new(file))?;
    if annotations.is_empty() {
        bail!("no valid annotations in {}", annotations_path.display());
    }
    config.echo()?;

    let mut sequences: Vec<DenseStateSequence> = Vec::new();
    let mut episode_failures: Vec<(String, String)> = line_failures
        .iter()
        .map(|(line, message)| (format!("line {line}"), message.clone()))
        .collect();
    for annotation in &annotations {
        match discretize(annotation, config.sampler.chunk_size, config.sampler.phase_filter) {
            Ok(sequence) => sequences.push(sequence),
            Err(e) => episode_failures.push((annotation.episode_id.clone(), e.to_string())),
        }
    }
    if sequences.is_empty() {
        bail!("every episode failed discretization");
    }

    let outcome = sample_pairs(&sequences, &config.sampler)?;
    write_pairs_jsonl(&mut create(&config.out.join("pairs.jsonl"))?, &outcome.pairs)?;
    write_json(
        &config.out.join("sampling_report.json"),
        &serde_json::json!({
            "pairs": outcome.pairs.len(),
            "shortfalls": outcome.shortfalls,
            "skipped_degenerate": outcome.skipped_degenerate,
            "dt_boundaries_used": outcome.dt_boundaries_used,
        }),
    )?;

    if let Some(alpha) = noise_level {
        write_noise_manifest(config, &outcome.pairs, alpha)?;
    }
    if !episode_failures.is_empty() {
        write_json(&config.out.join("failures.json"), &episode_failures)?;
    }

    if !outcome.shortfalls.is_empty() || !episode_failures.is_empty() {
        eprintln!(
            "{} cell(s) under quota, {} episode(s) skipped; see sampling_report.json",
            outcome.shortfalls.len(),
            episode_failures.len()
        );
        return Ok(2);
    }
    Ok(0)
}

/// Per-frame perturbation manifest: each referenced frame gets its own
/// seed derived from the run seed, so downstream noise application is
/// reproducible frame by frame.
fn write_noise_manifest(config: &RunConfig, pairs: &[ProgressPair], alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        bail!("--noise-level must lie in [0, 1], got {alpha}");
    }
    let noise_seed = derive_seed(config.seed, "noise");
    let mut frames: BTreeMap<(String, u32), u64> = BTreeMap::new();
    for pair in pairs {
        for endpoint in [&pair.before, &pair.after] {
            frames
                .entry((pair.episode_id.clone(), endpoint.frame))
                .or_insert_with(|| {
                    derive_seed(noise_seed, &format!("frame:{}:{}", pair.episode_id, endpoint.frame))
                });
        }
    }
    let mut writer = create(&config.out.join("noise_manifest.jsonl"))?;
    for ((episode_id, frame), seed) in frames {
        serde_json::to_writer(
            &mut writer,
            &serde_json::json!({
                "episode_id": episode_id,
                "frame": frame,
                "seed": seed,
                "noise_level": alpha,
            }),
        )?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn cmd_judge_eval(config: &RunConfig, pairs_path: &Path) -> Result<i32> {
    let descriptor = config
        .judge_descriptor()?
        .context("a judge is required: pass --judge or set [judge].spec in the config")?;
    let file = File::open(pairs_path)
        .with_context(|| format!("opening pairs file {}", pairs_path.display()))?;
    let pairs = read_pairs_jsonl(BufReader::new(file))?;
    if pairs.is_empty() {
        bail!("no pairs in {}", pairs_path.display());
    }
    config.echo()?;

    let judge = build_judge(&descriptor)?;
    let mut harness = JudgeHarness::new(judge, config.validation);
    let (verdicts, all_failed): (Vec<JudgeVerdict>, bool) = match harness.batch_judge(&pairs) {
        Ok(verdicts) => (verdicts, false),
        Err(trajaudit_core::judge::JudgeError::AllFailed(message)) => {
            eprintln!("every pair failed: {message}");
            (
                pairs
                    .iter()
                    .map(|p| JudgeVerdict {
                        pair_id: p.pair_id.clone(),
                        outcome: trajaudit_core::judge::VerdictOutcome::Failure {
                            failure: message.clone(),
                        },
                    })
                    .collect(),
                true,
            )
        }
        Err(e) => return Err(e.into()),
    };

    let table = score(&pairs, &verdicts)?;
    write_json(&config.out.join("accuracy.json"), &table)?;
    let name = config.judge_spec.clone().unwrap_or_else(|| "judge".into());
    let tables: BTreeMap<String, AccuracyTable> = [(name, table.clone())].into_iter().collect();
    let report = compare(&tables)?;
    report.write_csv(create(&config.out.join("accuracy.csv"))?)?;
    write_json(
        &config.out.join("verdicts.json"),
        &serde_json::json!({ "verdicts": verdicts, "ties": harness.ties, "clamp_warnings": harness.clamp_warnings }),
    )?;

    let (_, _, failed) = table.totals();
    if all_failed || failed > 0 {
        eprintln!("{failed} pair(s) failed judging");
        return Ok(2);
    }
    Ok(0)
}

pub fn cmd_judge_compare(config: &RunConfig, pairs_path: &Path, specs: &[String]) -> Result<i32> {
    let file = File::open(pairs_path)
        .with_context(|| format!("opening pairs file {}", pairs_path.display()))?;
    let pairs = read_pairs_jsonl(BufReader::new(file))?;
    if pairs.is_empty() {
        bail!("no pairs in {}", pairs_path.display());
    }
    config.echo()?;
    let mut tables: BTreeMap<String, AccuracyTable> = BTreeMap::new();
    let mut any_failed = false;
    for spec in specs {
        let mut descriptor = trajaudit_core::judge::parse_judge_spec(spec)?;
        descriptor.max_in_flight = config.judge_max_in_flight;
        descriptor.timeout_secs = config.judge_timeout_secs;
        let mut harness = JudgeHarness::new(build_judge(&descriptor)?, config.validation);
        let verdicts = harness.batch_judge(&pairs)?;
        let table = score(&pairs, &verdicts)?;
        any_failed |= table.totals().2 > 0;
        tables.insert(spec.clone(), table);
    }
    let report = compare(&tables)?;
    report.write_csv(create(&config.out.join("comparison.csv"))?)?;
    write_json(&config.out.join("comparison.json"), &report)?;
    Ok(if any_failed { 2 } else { 0 })
}

/// Parsed states file: the state set, per-state potentials, and any
/// equivalence classes declared via the optional `class` field.
struct StatesFile {
    states: StateSet,
    potentials: BTreeMap<String, f64>,
    classes: Vec<Vec<String>>,
}

/// States file: JSON Lines of
/// `{"state_id": str, "potential": float, "class": str|absent}`.
fn read_states_file(path: &Path) -> Result<StatesFile> {
    #[derive(serde::Deserialize)]
    struct StateLine {
        state_id: String,
        potential: f64,
        #[serde(default)]
        class: Option<String>,
    }
    let file =
        File::open(path).with_context(|| format!("opening states file {}", path.display()))?;
    let mut names = Vec::new();
    let mut potentials = BTreeMap::new();
    let mut classes: BTreeMap<String, Vec<String>> = BTreeMap::new();
    use std::io::BufRead;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: StateLine = serde_json::from_str(&line)
            .with_context(|| format!("states file line {}", lineno + 1))?;
        names.push(parsed.state_id.clone());
        potentials.insert(parsed.state_id.clone(), parsed.potential);
        if let Some(class) = parsed.class {
            classes.entry(class).or_default().push(parsed.state_id);
        }
    }
    Ok(StatesFile {
        states: StateSet::new(names)?,
        potentials,
        classes: classes.into_values().collect(),
    })
}

pub fn cmd_consistency(
    config: &RunConfig,
    evaluator_spec: &str,
    states_path: &Path,
    tolerance: f64,
    samples: Option<usize>,
) -> Result<i32> {
    let StatesFile { states, potentials, classes } = read_states_file(states_path)?;
    let evaluator: Box<dyn PairwiseEvaluator> = match evaluator_spec.split_once(':') {
        None if evaluator_spec == "potential_diff" => {
            Box::new(PotentialDifferenceEvaluator { potentials: potentials.clone() })
        }
        Some(("clipped", cap)) => Box::new(ClippedDifferenceEvaluator {
            potentials: potentials.clone(),
            cap: cap.parse().context("clipped evaluator cap")?,
        }),
        _ => bail!(
            "unknown evaluator spec {evaluator_spec:?}: expected potential_diff or clipped:<cap>"
        ),
    };
    config.echo()?;

    let sampling = match samples {
        Some(samples) => TripleSampling::Random { samples, seed: derive_seed(config.seed, "cocycle") },
        None => TripleSampling::Exhaustive,
    };
    let report = check_cocycle(evaluator.as_ref(), &states, "cli", tolerance, sampling)?;
    let anchored = induce_potential(evaluator.as_ref(), &states.states[0], &states, "cli")?;
    let equivalence = if classes.iter().map(|c| c.len()).sum::<usize>() == states.states.len()
        && !classes.is_empty()
    {
        Some(equivalence_invariance_check(&potentials, &classes, tolerance)?)
    } else {
        None
    };
    write_json(
        &config.out.join("consistency_report.json"),
        &serde_json::json!({
            "cocycle": report,
            "anchored_potential": anchored,
            "equivalence_violations": equivalence,
            "tolerance": tolerance,
        }),
    )?;
    println!(
        "verdict: {:?} (max |residual| {:.3e} over {} triples)",
        report.verdict, report.max_abs_residual, report.triples_checked
    );
    Ok(0)
}

pub fn cmd_calibrate(config: &RunConfig, sigma: f64, tail: f64) -> Result<i32> {
    let epsilon = calibrate_epsilon(sigma, tail)?;
    println!("{epsilon:.6}");
    config.echo()?;
    write_json(
        &config.out.join("calibration.json"),
        &serde_json::json!({ "sigma": sigma, "tail_prob": tail, "epsilon": epsilon }),
    )?;
    Ok(0)
}

pub fn cmd_metrics(config: &RunConfig, traces_path: &Path, include_discarded: bool) -> Result<i32> {
    let file = File::open(traces_path)
        .with_context(|| format!("opening traces file {}", traces_path.display()))?;
    let ingest = read_traces_jsonl(BufReader::new(file), config.validation)?;
    for warning in &ingest.warnings {
        eprintln!("warning: {warning}");
    }
    if ingest.traces.is_empty() {
        bail!("no valid traces in {}", traces_path.display());
    }
    config.echo()?;

    let discarded_config = DiscardedConfig::default();
    let mut csv = csv::Writer::from_writer(create(&config.out.join("metrics.csv"))?);
    let mut header = vec!["episode", "task", "policy", "mc", "mp", "ppl", "cra", "str"];
    if include_discarded {
        header.extend(["ppe", "pti", "ead", "pj", "cs", "rr"]);
    }
    csv.write_record(&header)?;

    let mut failures: Vec<(String, String)> = ingest
        .failures
        .iter()
        .map(|(line, message)| (format!("line {line}"), message.clone()))
        .collect();
    let mut records: Vec<OpdRecord> = Vec::new();
    for trace in &ingest.traces {
        let record = match opd_record(trace, &config.opd) {
            Ok(r) => r,
            Err(e) => {
                failures.push((trace.episode_id.clone(), e.to_string()));
                continue;
            }
        };
        let mut row = vec![
            record.episode_id.clone(),
            record.task_id.clone(),
            record.policy_id.clone().unwrap_or_default(),
            format!("{}", record.mc),
            format!("{}", record.mp),
            format!("{}", record.ppl),
            format!("{}", record.cra),
            record.str_ratio.map(|s| format!("{s}")).unwrap_or_default(),
        ];
        if include_discarded {
            let optional = |value: Option<f64>| value.map(|v| format!("{v}")).unwrap_or_default();
            row.push(format!("{}", ppe(trace, discarded_config.ppe_epsilon)));
            row.push(format!("{}", pti(trace)));
            row.push(optional(ead(trace, discarded_config.ead_epsilon).ok()));
            row.push(optional(pj(trace).ok()));
            row.push(optional(cs(trace, discarded_config.cs_window).ok()));
            row.push(format!("{}", rr(trace)));
        }
        csv.write_record(&row)?;
        records.push(record);
    }
    csv.flush()?;
    write_json(&config.out.join("metrics.json"), &records)?;

    if failures.is_empty() {
        Ok(0)
    } else {
        write_json(&config.out.join("failures.json"), &failures)?;
        eprintln!("{} episode(s) failed; see failures.json", failures.len());
        Ok(2)
    }
}

pub fn cmd_noise(
    config: &RunConfig,
    input: &Path,
    output: &Path,
    noise_level: f64,
) -> Result<i32> {
    let mut reader = BufReader::new(
        File::open(input).with_context(|| format!("opening image {}", input.display()))?,
    );
    let image = npy::read_image(&mut reader)?;
    let seed = derive_seed(config.seed, "noise");
    let perturbed = perturb_observation(&image, noise_level, seed)?;
    let mut writer = create(output)?;
    npy::write_image(&mut writer, &perturbed)?;
    writer.flush()?;
    Ok(0)
}
