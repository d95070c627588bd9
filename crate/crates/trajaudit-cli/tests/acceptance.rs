//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its runtime (visible under `--nocapture`). Every
//! tolerance is pinned here, not configurable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::io::Write as _;
use std::time::{Duration, Instant};
use trajaudit_core::consistency::{
    accumulated_progress, check_cocycle, induce_potential, refinement_drift,
    ClippedDifferenceEvaluator, PairwiseEvaluator, PotentialDifferenceEvaluator, StateSet,
    TripleSampling, Verdict,
};
use trajaudit_core::discarded::{dtw_distance, ead, ppe, pti, rr};
use trajaudit_core::judge::{build_judge, parse_judge_spec, JudgeHarness, JudgeMode, SubprocessJudge};
use trajaudit_core::metrics::{
    calibrate_epsilon, cra, max_progress, milestone_coverage, ppl, str_ratio, OpdConfig,
};
use trajaudit_core::sampler::noise::{perturb_observation, ImageArray};
use trajaudit_core::sampler::{
    assign_bin, discretize, sample_pairs, DenseStateSequence, EpisodeAnnotation, MagnitudeBin,
    PhaseFilter, ProgressPair, SamplerConfig, Setting, ALL_BINS,
};
use trajaudit_core::trace::{PotentialTrace, ValidationPolicy};

const BIN_PATH: &str = env!("CARGO_BIN_EXE_trajaudit");

fn trace(values: Vec<f64>) -> PotentialTrace {
    PotentialTrace {
        episode_id: "acc".into(),
        task_id: "task".into(),
        policy_id: None,
        success: None,
        values,
    }
}

fn finish(criterion: u32, what: &str, started: Instant, budget: Duration) {
    let elapsed = started.elapsed();
    assert!(
        elapsed <= budget,
        "criterion {criterion} exceeded its runtime budget: {elapsed:?} > {budget:?}"
    );
    println!("PASS criterion {criterion}: {what} ({elapsed:?})");
}

#[test]
fn criterion_1_worked_example_exactness() {
    let started = Instant::now();
    let persistent = trace(vec![0.0, 1.0, 0.0, 0.0, 0.0]);
    let recovered = trace(vec![0.0, 1.0, 0.0, 1.0, 1.0]);
    assert!((cra(&persistent) - 0.6).abs() <= 1e-12);
    assert!((cra(&recovered) - 0.2).abs() <= 1e-12);
    assert!((rr(&persistent) - 1.0).abs() <= 1e-12);
    assert!((rr(&recovered) - 1.0).abs() <= 1e-12);

    // PTI prefers a constant half-progress trace over late completion
    // (T = 4): late scores 1/(T+1), early scores 1/2.
    let late = trace(vec![0.0, 0.0, 0.0, 0.0, 1.0]);
    let early = trace(vec![0.5; 5]);
    assert!((pti(&late) - 0.2).abs() <= 1e-12);
    assert!((pti(&early) - 0.5).abs() <= 1e-12);
    assert!(pti(&early) > pti(&late));
    assert!(max_progress(&late) > max_progress(&early));

    let epsilon = 1e-8;
    assert!((ppe(&trace(vec![0.3; 6]), epsilon) - 1.0 / epsilon).abs() <= 1e-12 / epsilon);

    // EAD flips from 1 to 0 purely with the step count of the same ramp.
    let ramp = |steps: usize| trace((0..=steps).map(|i| i as f64 / steps as f64).collect());
    let threshold = 0.05;
    assert_eq!(ead(&ramp(10), threshold).unwrap(), 1.0);
    assert_eq!(ead(&ramp(100), threshold).unwrap(), 0.0);

    finish(1, "worked examples exact to 1e-12", started, Duration::from_secs(1));
}

fn random_trace(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let length = rng.random_range(1..=200);
    (0..length).map(|_| rng.random::<f64>()).collect()
}

#[test]
fn criterion_2_randomized_range_and_characterization() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0acc);
    let config = OpdConfig::default();
    for case in 0..10_000 {
        let values = random_trace(&mut rng);
        let t = trace(values.clone());

        let mc = milestone_coverage(&t, config.milestone_count);
        let mp = max_progress(&t);
        let p = ppl(&t, config.ppl_delta);
        let c = cra(&t);
        assert!((0.0..=1.0).contains(&mc), "case {case}");
        assert!((0.0..=1.0).contains(&mp));
        assert!((0.0..=1.0).contains(&p));
        assert!((0.0..=1.0).contains(&c));
        if values.len() > 1 {
            let s = str_ratio(&t, config.str_epsilon).unwrap();
            assert!((0.0..=1.0).contains(&s));
        }

        // CRA = 0 exactly when the trace is non-decreasing.
        let non_decreasing = values.windows(2).all(|w| w[1] >= w[0]);
        assert_eq!(c == 0.0, non_decreasing, "case {case}: cra {c}");
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(cra(&trace(sorted)), 0.0);

        // Total variation dominates endpoint displacement.
        let derived = trajaudit_core::trace::derive(&t);
        assert!(derived.total_variation >= derived.net_progress.abs() - 1e-12);

        // The completion gate caps PPL at the terminal potential.
        assert!(p <= t.last() + 1e-12);

        // Pointwise dominance never lowers MC.
        let dominating: Vec<f64> =
            values.iter().map(|v| (v + rng.random::<f64>() * 0.3).min(1.0)).collect();
        assert!(mc <= milestone_coverage(&trace(dominating), config.milestone_count));

        // Margin construction: values pushed clear of every positive
        // milestone boundary keep MC under bounded perturbation.
        let sigma = 0.02;
        let k = config.milestone_count;
        let margined: Vec<f64> = values
            .iter()
            .map(|&v| {
                let mut v = v;
                for j in 1..=k {
                    let boundary = j as f64 / k as f64;
                    if (v - boundary).abs() <= sigma {
                        v = if v >= boundary && j != k {
                            boundary + 1.5 * sigma
                        } else {
                            boundary - 1.5 * sigma
                        };
                    }
                }
                v.clamp(0.0, 1.0)
            })
            .collect();
        let perturbed: Vec<f64> = margined
            .iter()
            .map(|v| (v + (rng.random::<f64>() * 2.0 - 1.0) * sigma).clamp(0.0, 1.0))
            .collect();
        assert_eq!(
            milestone_coverage(&trace(margined), k),
            milestone_coverage(&trace(perturbed), k),
            "case {case}"
        );
    }
    finish(2, "range/characterization over 10^4 random traces", started, Duration::from_secs(30));
}

#[test]
fn criterion_3_consistency_suite() {
    let started = Instant::now();
    // Potential differences pass exhaustively on up to 20 states.
    let mut rng = ChaCha8Rng::seed_from_u64(0x3acc);
    for n in [3usize, 7, 20] {
        let potentials: BTreeMap<String, f64> =
            (0..n).map(|i| (format!("s{i:02}"), rng.random::<f64>())).collect();
        let names: Vec<String> = potentials.keys().cloned().collect();
        let evaluator = PotentialDifferenceEvaluator { potentials };
        let states = StateSet::new(names.clone()).unwrap();
        let report =
            check_cocycle(&evaluator, &states, "acc", 1e-12, TripleSampling::Exhaustive).unwrap();
        assert_eq!(report.verdict, Verdict::ConsistentWithinTol);
        assert!(report.max_abs_residual <= 1e-12);

        // Anchored reconstruction reproduces the evaluator exactly, and
        // two anchors differ by a constant across all states.
        let from_first = induce_potential(&evaluator, &names[0], &states, "acc").unwrap();
        for i in &names {
            for j in &names {
                let direct = evaluator.score(i, j, "acc").unwrap();
                assert!((from_first[j] - from_first[i] - direct).abs() <= 1e-12);
            }
        }
        let from_last = induce_potential(&evaluator, &names[n - 1], &states, "acc").unwrap();
        let shift = from_first[&names[0]] - from_last[&names[0]];
        for name in &names {
            assert!((from_first[name] - from_last[name] - shift).abs() <= 1e-12);
        }
    }

    // The clipped evaluator certifies a violation and drifts by exactly
    // 0.5 on the (0, 0.5, 1) construction.
    let potentials: BTreeMap<String, f64> =
        [("a", 0.0), ("b", 0.5), ("c", 1.0)].iter().map(|(s, v)| (s.to_string(), *v)).collect();
    let clipped = ClippedDifferenceEvaluator { potentials, cap: 0.5 };
    let states = StateSet::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
    let report = check_cocycle(&clipped, &states, "acc", 1e-9, TripleSampling::Exhaustive).unwrap();
    assert_eq!(report.verdict, Verdict::Violated);
    assert!(!report.violations.is_empty());
    let coarse: Vec<String> = vec!["a".into(), "c".into()];
    let fine: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
    let drift = refinement_drift(&clipped, &coarse, &fine, "acc").unwrap();
    assert!((drift - 0.5).abs() <= 1e-12);
    assert!((accumulated_progress(&clipped, &coarse, "acc").unwrap() - 0.5).abs() <= 1e-12);

    finish(3, "cocycle checks, violation certificate, drift 0.5", started, Duration::from_secs(10));
}

#[test]
fn criterion_4_epsilon_calibration_monte_carlo() {
    let started = Instant::now();
    let sigma = 0.01;
    let tail = 0.01;
    let epsilon = calibrate_epsilon(sigma, tail).unwrap();
    assert!((epsilon - 0.036428).abs() <= 1e-4, "epsilon {epsilon}");

    // Static scene: noisy readings around a fixed level; increments are
    // differences of consecutive iid draws.
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x4acc);
    let steps = 1_000_000usize;
    let mut previous: f64 = normal.sample(&mut rng);
    let mut exceeding = 0usize;
    for _ in 0..steps {
        let current: f64 = normal.sample(&mut rng);
        if (current - previous).abs() >= epsilon {
            exceeding += 1;
        }
        previous = current;
    }
    let fraction = exceeding as f64 / steps as f64;
    assert!(
        (0.008..=0.012).contains(&fraction),
        "tail fraction {fraction} outside [0.008, 0.012]"
    );
    finish(4, "calibrated threshold hits the 1% tail", started, Duration::from_secs(10));
}

fn synthetic_annotations(count: usize) -> Vec<EpisodeAnnotation> {
    let settings = [Setting::Real, Setting::Sim, Setting::Umi, Setting::Human];
    (0..count)
        .map(|i| {
            let length = 120 + 30 * (i as u32 % 7);
            EpisodeAnnotation {
                episode_id: format!("ep-{i:03}"),
                task_context: format!("synthetic task {i}"),
                length,
                keyframes: vec![0, length / 2, length - 1],
                phases: vec![true, true],
                frame_refs: None,
                setting: settings[i % settings.len()],
            }
        })
        .collect()
}

fn write_annotations(path: &std::path::Path, annotations: &[EpisodeAnnotation]) {
    let mut file = std::fs::File::create(path).unwrap();
    for a in annotations {
        serde_json::to_writer(&mut file, a).unwrap();
        file.write_all(b"\n").unwrap();
    }
}

#[test]
fn criterion_5_sampler_contracts() {
    let started = Instant::now();
    // Reference discretization: M = 10 with exact i/10 potentials.
    let annotation = EpisodeAnnotation {
        episode_id: "ref".into(),
        task_context: "ctx".into(),
        length: 300,
        keyframes: vec![0, 150, 299],
        phases: vec![true, true],
        frame_refs: None,
        setting: Setting::Sim,
    };
    let sequence = discretize(&annotation, 30, PhaseFilter::RetainedOnly).unwrap();
    assert_eq!(sequence.last_index(), 10);
    for (i, state) in sequence.states.iter().enumerate() {
        assert_eq!(state.potential, i as f64 / 10.0);
    }

    // Pair invariants over 100 synthetic episodes.
    let annotations = synthetic_annotations(100);
    let sequences: Vec<DenseStateSequence> = annotations
        .iter()
        .map(|a| discretize(a, 30, PhaseFilter::RetainedOnly).unwrap())
        .collect();
    let config = SamplerConfig { quota_per_cell: 30, seed: 5, ..SamplerConfig::default() };
    let outcome = sample_pairs(&sequences, &config).unwrap();
    assert!(outcome.pairs.len() > 100);
    for pair in &outcome.pairs {
        assert_ne!(pair.hop, 0.0);
        assert_eq!(pair.hop.signum() as i8, pair.label);
        assert_eq!(pair.bin, assign_bin(pair.hop).unwrap());
    }
    for bin in ALL_BINS {
        let pos = outcome.pairs.iter().filter(|p| p.bin == bin && p.label > 0).count() as i64;
        let neg = outcome.pairs.iter().filter(|p| p.bin == bin && p.label < 0).count() as i64;
        assert!((pos - neg).abs() <= 1, "{bin}: {pos} vs {neg}");
    }
    // Bin boundaries at exact thirds.
    assert_eq!(assign_bin(1.0 / 3.0).unwrap(), MagnitudeBin::Small);
    assert_eq!(assign_bin(1.0 / 3.0 + 1e-12).unwrap(), MagnitudeBin::Medium);
    assert_eq!(assign_bin(2.0 / 3.0).unwrap(), MagnitudeBin::Medium);
    assert_eq!(assign_bin(2.0 / 3.0 + 1e-12).unwrap(), MagnitudeBin::Large);

    // Byte-identical output files from equal seeds, end to end through
    // the CLI.
    let dir = tempfile::tempdir().unwrap();
    let annotations_path = dir.path().join("annotations.jsonl");
    write_annotations(&annotations_path, &annotations);
    for out in ["run1", "run2"] {
        let status = std::process::Command::new(BIN_PATH)
            .args([
                "pairs",
                "build",
                "--annotations",
                annotations_path.to_str().unwrap(),
                "--seed",
                "11",
                "--out",
                dir.path().join(out).to_str().unwrap(),
            ])
            .stdout(std::process::Stdio::null())
            .stderr(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.code() == Some(0) || status.code() == Some(2));
    }
    let bytes1 = std::fs::read(dir.path().join("run1/pairs.jsonl")).unwrap();
    let bytes2 = std::fs::read(dir.path().join("run2/pairs.jsonl")).unwrap();
    assert!(!bytes1.is_empty());
    assert_eq!(bytes1, bytes2, "equal seeds must produce byte-identical pair files");

    finish(5, "discretization, pair invariants, byte-identical runs", started, Duration::from_secs(5));
}

#[test]
fn criterion_6_end_to_end_judging() {
    let started = Instant::now();
    let annotations = synthetic_annotations(40);
    let sequences: Vec<DenseStateSequence> = annotations
        .iter()
        .map(|a| discretize(a, 30, PhaseFilter::RetainedOnly).unwrap())
        .collect();
    let config = SamplerConfig { quota_per_cell: 24, seed: 6, ..SamplerConfig::default() };
    let pairs = sample_pairs(&sequences, &config).unwrap().pairs;
    assert!(!pairs.is_empty());

    let score_with = |spec: &str, pairs: &[ProgressPair]| {
        let mut harness =
            JudgeHarness::new(build_judge(&parse_judge_spec(spec).unwrap()).unwrap(), ValidationPolicy::Strict);
        let verdicts = harness.batch_judge(pairs).unwrap();
        trajaudit_core::benchmark::score(pairs, &verdicts).unwrap()
    };

    let index_table = score_with("builtin:index_oracle", &pairs);
    for (key, cell) in &index_table.cells {
        assert_eq!(cell.accuracy(), Some(1.0), "cell {key:?}");
    }
    let inverted_table = score_with("builtin:inverted_oracle", &pairs);
    for (key, cell) in &inverted_table.cells {
        assert_eq!(cell.accuracy(), Some(0.0), "cell {key:?}");
    }

    // Coin-flip judge over 10^4 balanced pairs: within 3 binomial sigma.
    let mut many = Vec::with_capacity(10_000);
    while many.len() < 10_000 {
        for pair in &pairs {
            if many.len() >= 10_000 {
                break;
            }
            let mut clone = pair.clone();
            clone.pair_id = format!("dup-{:05}", many.len());
            many.push(clone);
        }
    }
    let random_table = score_with("builtin:random_judge:seed=17", &many);
    let accuracy = random_table.pooled_accuracy().unwrap();
    assert!(
        (accuracy - 0.5).abs() <= 0.015,
        "random judge accuracy {accuracy} outside 0.5 +/- 0.015"
    );

    // Subprocess round-trip against the packaged stub judge.
    let subprocess = SubprocessJudge::spawn(
        &format!("{BIN_PATH} judge-stub --oracle index"),
        JudgeMode::Potential,
        4,
        Duration::from_secs(20),
    )
    .unwrap();
    let mut harness = JudgeHarness::new(Box::new(subprocess), ValidationPolicy::Strict);
    let sample: Vec<ProgressPair> = pairs.iter().take(60).cloned().collect();
    let verdicts = harness.batch_judge(&sample).unwrap();
    let table = trajaudit_core::benchmark::score(&sample, &verdicts).unwrap();
    assert_eq!(table.pooled_accuracy(), Some(1.0));

    finish(6, "oracle accuracies and subprocess round-trip", started, Duration::from_secs(30));
}

/// Exhaustive warping-path enumeration, independent of the DP.
fn dtw_brute_force(a: &[f64], b: &[f64]) -> f64 {
    fn walk(a: &[f64], b: &[f64], i: usize, j: usize) -> f64 {
        let cost = (a[i] - b[j]).abs();
        if i + 1 == a.len() && j + 1 == b.len() {
            return cost;
        }
        let mut best = f64::INFINITY;
        if i + 1 < a.len() {
            best = best.min(walk(a, b, i + 1, j));
        }
        if j + 1 < b.len() {
            best = best.min(walk(a, b, i, j + 1));
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            best = best.min(walk(a, b, i + 1, j + 1));
        }
        cost + best
    }
    walk(a, b, 0, 0)
}

#[test]
fn criterion_7_dtw_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x7acc);
    for case in 0..500 {
        let len_a = rng.random_range(1..=6);
        let len_b = rng.random_range(1..=6);
        let a: Vec<f64> = (0..len_a).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..len_b).map(|_| rng.random::<f64>()).collect();
        let dp = dtw_distance(&a, &b).unwrap();
        let oracle = dtw_brute_force(&a, &b);
        assert!((dp - oracle).abs() <= 1e-12, "case {case}: dp {dp} vs oracle {oracle}");
    }
    finish(7, "DTW equals exhaustive path enumeration on 500 pairs", started, Duration::from_secs(10));
}

#[test]
fn criterion_8_reporting() {
    let started = Instant::now();
    use trajaudit_core::audit::{audit_table, fingerprint};
    use trajaudit_core::metrics::OpdRecord;

    let record = |task: &str, policy: &str, success: bool, mc: f64, mp: f64, ppl: f64, cra: f64, s: f64| OpdRecord {
        episode_id: format!("{task}:{policy}:{mp}:{cra}"),
        task_id: task.into(),
        policy_id: Some(policy.into()),
        success: Some(success),
        mc,
        mp,
        ppl,
        cra,
        str_ratio: Some(s),
        config: OpdConfig::default(),
    };

    // Five policies whose failed-episode CRA means (percent) are the
    // reference table values; flipped z-scores must match to 1e-3.
    let cra_means = [
        ("act", 15.46),
        ("dp", 16.88),
        ("rdt", 22.68),
        ("pi0", 18.91),
        ("vla", 26.25),
    ];
    let mut records = Vec::new();
    for (rank, (policy, cra_pct)) in cra_means.into_iter().enumerate() {
        // Distinct per-policy means for every metric so each z row has
        // genuine variance.
        let mp = 0.5 + 0.08 * rank as f64;
        let ppl = 0.1 + 0.05 * rank as f64;
        let str_ratio = 0.2 + 0.1 * rank as f64;
        for i in 0..3 {
            records.push(record(
                "place-basket",
                policy,
                false,
                0.25 * ((i % 4) as f64 + 1.0),
                mp,
                ppl,
                cra_pct / 100.0,
                str_ratio,
            ));
        }
    }
    let rows = fingerprint(&records, 3);
    let z = |policy: &str| {
        rows.iter()
            .find(|r| r.policy_id == policy && r.metric == "CRA")
            .and_then(|r| r.z)
            .unwrap()
    };
    for (policy, expected) in [
        ("act", 1.160),
        ("dp", 0.800),
        ("rdt", -0.670),
        ("pi0", 0.286),
        ("vla", -1.576),
    ] {
        assert!((z(policy) - expected).abs() <= 1e-3, "{policy}: {} vs {expected}", z(policy));
    }
    // Every defined (task, metric) row set has mean 0 and population
    // standard deviation 1 within 1e-9.
    for metric in ["MP", "PPL", "CRA", "STR"] {
        let zs: Vec<f64> = rows.iter().filter(|r| r.metric == metric).filter_map(|r| r.z).collect();
        let mean = zs.iter().sum::<f64>() / zs.len() as f64;
        let var = zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / zs.len() as f64;
        assert!(mean.abs() <= 1e-9, "{metric} mean {mean}");
        assert!((var.sqrt() - 1.0).abs() <= 1e-9, "{metric} std {}", var.sqrt());
    }

    // MC@q non-increasing on every emitted audit row.
    let table = audit_table(&records).unwrap();
    for row in &table.rows {
        for window in row.mc_at.windows(2) {
            assert!(window[0] >= window[1]);
        }
    }

    // Noise operator: alpha = 0 is bit-identical; alpha = 1 matches the
    // standard normal within 1% over 10^6 elements.
    let image = ImageArray::new(
        1000,
        334,
        3,
        (0..1000 * 334 * 3).map(|i| (i % 997) as f64 / 996.0).collect(),
    )
    .unwrap();
    let untouched = perturb_observation(&image, 0.0, 123).unwrap();
    assert_eq!(untouched, image);
    let pure_noise = perturb_observation(&image, 1.0, 123).unwrap();
    let n = pure_noise.data.len() as f64;
    let mean = pure_noise.data.iter().sum::<f64>() / n;
    let var = pure_noise.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() <= 0.01, "noise mean {mean}");
    assert!((var - 1.0).abs() <= 0.01, "noise variance {var}");

    finish(8, "fingerprint z-rows, audit monotonicity, noise statistics", started, Duration::from_secs(10));
}
