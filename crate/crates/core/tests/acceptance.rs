//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! with its measured value and runtime.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use dermjudge_core::backends::{BackendConfig, BackendSet};
use dermjudge_core::bench::{
    alignment_report, build_stream, certify, load_jsonl, read_expert_scores, run_benchmark, Certification, CorpusStore,
    RunOptions,
};
use dermjudge_core::records::{CaseRecord, EvaluationRecord, NarrativeRecord, NarrativeRole, Rater, Stream};
use dermjudge_core::scores::{format_macro, macro_mae, Dimension, DimensionMap, Score, ScoreVector};
use dermjudge_core::soreb::{
    learning_rate, sample_evaluation, stage2_update, synthetic_corpus, text_loss, train_stage1, train_stage2,
    train_text_only, BaselineState, PolicyModel, StageKind, SyntheticSpec, TrainConfig, CLASSES,
};
use dermjudge_core::textproto::{parse_scores, render_evaluation, ParseStatus, PromptRegistry};
use dermjudge_core::verify::{
    ar1_reward_stream, baseline_variances, gradcheck_rl, gradcheck_text, round_trip_count, VARIANCE_STREAM,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const MACRO_TOL: f64 = 5e-5;
const ALGEBRA_TOL: f64 = 1e-12;
const GRAD_MAX_REL: f64 = 1e-4;
const CONVERGENCE_MAX_DEVIATION: f64 = 0.5;
const CONVERGENCE_MAX_STEPS: usize = 5_000;
const SMOOTHING_WINDOW: usize = 100;
const TRACE_TOL: f64 = 1e-12;
const VARIANCE_REDUCTION: f64 = 0.20;

const PIPELINE_CORPUS_HASH: &str = "0019618b289b050d260458efc4a673f0c9892fa32ad05ac24ecd46d6327dc12b";
const PIPELINE_REPORT_SHA256: &str = "67e327e7c3bd3fb2fc4f3a4bd10e5235032d9507fad8a9a4145b32f85ec3bd93";
const PIPELINE_ALIGNMENT_SHA256: &str = "d1088728ca8d76ec76a5278b57b81fbcf21d0685fd7fe23d087285f38e1a632f";

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn macro_mae_arithmetic() -> Outcome {
    let dermbench = [0.251, 0.314, 0.369, 0.456, 0.412, 0.377];
    let dermeval = [0.117, 0.230, 0.176, 0.152, 0.236, 0.147];
    let row = |v: [f64; 6]| -> DimensionMap<f64> { Dimension::ALL.into_iter().zip(v).collect() };
    let got_b = macro_mae(&row(dermbench)).unwrap();
    let got_e = macro_mae(&row(dermeval)).unwrap();
    // Hand sums: 2.179 / 6 and 1.058 / 6.
    let ok = (got_b - 0.3632).abs() < MACRO_TOL
        && (got_e - 0.1763).abs() < MACRO_TOL
        && format!("{got_b:.4}") == "0.3632"
        && format!("{got_e:.4}") == "0.1763"
        && format_macro(got_b) == "0.36"
        && format_macro(got_e) == "0.18";
    outcome(
        ok,
        format!(
            "dermbench {got_b:.4} ({}), dermeval {got_e:.4} ({})",
            format_macro(got_b),
            format_macro(got_e)
        ),
    )
}

fn reward_baseline_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut bad = 0usize;
    let mut baseline = BaselineState::new(0.9).unwrap();
    baseline.update(-12.5).unwrap();
    for _ in 0..10_000 {
        let physician: [u8; 6] = std::array::from_fn(|_| rng.random_range(0..=5));
        let mut parsed = ScoreVector::empty();
        let mut sq = 0.0;
        let mut k = 0;
        let mut exact = true;
        for d in Dimension::ALL {
            if rng.random_bool(0.75) {
                let half = rng.random_range(0..=10u32);
                parsed.set(d, Score::from_milli(half * 500).unwrap());
                let diff = half as f64 / 2.0 - physician[d.index()] as f64;
                sq += diff * diff;
                k += 1;
                exact &= diff == 0.0;
            }
        }
        let r = dermjudge_core::soreb::reward(&parsed, &ScoreVector::from_points(physician)).unwrap();
        let Some(r) = r else {
            bad += usize::from(k != 0);
            continue;
        };
        let oracle = -sq / k as f64;
        if (r - oracle).abs() > ALGEBRA_TOL || !(-25.0..=0.0).contains(&r) || (r == 0.0) != exact {
            bad += 1;
        }
        let pre = baseline.b;
        let adv = baseline.update(r).unwrap();
        let contained = baseline.b >= pre.min(r) && baseline.b <= pre.max(r);
        if (adv - baseline.beta * (r - pre)).abs() > ALGEBRA_TOL || !contained {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("{bad} violations over 10000 cases"))
}

fn gradient_correctness() -> Outcome {
    let text = gradcheck_text(100, 3);
    let rl = gradcheck_rl(100, 3);
    outcome(
        text.max_rel < GRAD_MAX_REL && rl.max_rel < GRAD_MAX_REL,
        format!("text max rel {:.2e}, rl max rel {:.2e}", text.max_rel, rl.max_rel),
    )
}

fn synthetic_convergence() -> Outcome {
    let spec = SyntheticSpec::default();
    let corpus = synthetic_corpus(&spec).unwrap();
    let config = TrainConfig {
        seed: 5,
        ..TrainConfig::default()
    };
    let s1 = train_stage1(&corpus, &config).unwrap();
    let s2 = train_stage2(&corpus, &config, s1.policy.clone()).unwrap();
    let steps = s1.steps() + s2.steps();
    let curve: Vec<f64> = s1.metrics.iter().chain(&s2.metrics).map(|m| m.mean_reward).collect();
    let smoothed: Vec<f64> = curve
        .windows(SMOOTHING_WINDOW)
        .map(|w| w.iter().sum::<f64>() / SMOOTHING_WINDOW as f64)
        .collect();
    let drops = smoothed.windows(2).filter(|w| w[1] < w[0] - 1e-12).count();
    let worst = s2.summary.iter().copied().fold(0.0, f64::max);
    outcome(
        spec.contexts() == 200 && steps <= CONVERGENCE_MAX_STEPS && worst < CONVERGENCE_MAX_DEVIATION && drops == 0,
        format!(
            "{} contexts, {steps} steps, worst per-dimension mean |sampled - target| {worst:.3}, smoothed reward {:.3} -> {:.3}, {drops} drops",
            spec.contexts(),
            smoothed[0],
            smoothed[smoothed.len() - 1]
        ),
    )
}

fn max_row_gap(a: &PolicyModel, b: &PolicyModel) -> f64 {
    let mut gap: f64 = 0.0;
    for ctx in a.contexts().chain(b.contexts()) {
        let (x, y) = (a.row_or_uniform(ctx), b.row_or_uniform(ctx));
        for d in 0..6 {
            for c in 0..CLASSES {
                gap = gap.max((x[d][c] - y[d][c]).abs());
            }
        }
    }
    gap
}

fn degenerate_weight_equivalence() -> Outcome {
    let corpus = synthetic_corpus(&SyntheticSpec {
        categories: 5,
        tiers: 4,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let base = TrainConfig {
        epochs_per_stage: 2,
        ..TrainConfig::default()
    };
    let start = train_stage1(
        &corpus,
        &TrainConfig {
            epochs_per_stage: 1,
            ..base
        },
    )
    .unwrap()
    .policy;
    let config = TrainConfig { lambda_rl: 0.0, ..base };

    // Step-for-step: the composed update with the RL weight at zero against
    // plain gradient descent on the text loss.
    let total = corpus.len() * config.epochs_per_stage;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut composed = start.clone();
    let mut plain = start.clone();
    let mut baseline = BaselineState::new(config.beta).unwrap();
    let mut trace_gap: f64 = 0.0;
    for step in 0..total {
        let inst = &corpus[step % corpus.len()];
        let lr = learning_rate(step, total, config.learning_rate, config.warmup_ratio);
        let sample = sample_evaluation(&composed, &inst.context, &mut rng);
        stage2_update(&mut composed, &mut baseline, inst, &sample, &config, lr).unwrap();
        let (_, grad) = text_loss(&plain, inst).unwrap();
        plain.apply(&inst.context, &grad, lr * config.lambda_text);
        trace_gap = trace_gap.max(max_row_gap(&composed, &plain));
    }

    let rl = train_stage2(&corpus, &config, start.clone()).unwrap();
    let text = train_text_only(&corpus, &config, start, StageKind::Stage2).unwrap();
    let loss_gap = rl
        .metrics
        .iter()
        .zip(&text.metrics)
        .map(|(a, b)| {
            (a.text_loss - b.text_loss)
                .abs()
                .max((a.mean_text_loss - b.mean_text_loss).abs())
        })
        .fold(0.0, f64::max);
    let final_gap = max_row_gap(&rl.policy, &text.policy);
    outcome(
        trace_gap <= TRACE_TOL && loss_gap <= TRACE_TOL && final_gap <= TRACE_TOL && rl.steps() == text.steps(),
        format!("{total} steps, parameter trace gap {trace_gap:.1e}, loss trace gap {loss_gap:.1e}, final gap {final_gap:.1e}"),
    )
}

fn parser_fidelity() -> Outcome {
    let round_trips = round_trip_count(1000, 17);
    let fixtures: [(&str, &str, [u8; 6]); 4] = [
        (
            "case1 reference-free",
            include_str!("../fixtures/case1_dermeval.txt"),
            [2, 3, 2, 2, 2, 2],
        ),
        (
            "case1 reference-anchored",
            include_str!("../fixtures/case1_dermbench.txt"),
            [2, 5, 2, 2, 2, 2],
        ),
        (
            "case2 reference-free",
            include_str!("../fixtures/case2_dermeval.txt"),
            [1, 2, 1, 3, 1, 2],
        ),
        (
            "case2 reference-anchored",
            include_str!("../fixtures/case2_dermbench.txt"),
            [1, 3, 1, 2, 2, 2],
        ),
    ];
    let mut wrong = Vec::new();
    for (name, text, want) in fixtures {
        if parse_scores(text).scores != ScoreVector::from_points(want) {
            wrong.push(name.to_string());
        }
    }
    let physician = ScoreVector::from_points([1, 2, 1, 2, 1, 2]);
    let rendered = render_evaluation(&physician, &["Restated by the rater."; 6])
        .unwrap()
        .to_string();
    if parse_scores(&rendered).scores != physician {
        wrong.push("case2 physician render".into());
    }
    let out_of_range = parse_scores(
        "Accuracy: 3/5\nSafety: 6/5\nMedical Groundedness: 2/5\nClinical Coverage: 4/5\nReasoning Coherence: -1/5\nDescription Precision: 1/5\n",
    );
    let excluded = out_of_range.status(Dimension::Safety) == ParseStatus::OutOfRange
        && out_of_range.scores.valid_count() == 4
        && out_of_range.scores.get(Dimension::Accuracy) == Some(Score::from_points(3).unwrap());
    let missing = parse_scores("**Accuracy:** 4.0 --- fine\n\n**Safety:** 5.0 --- fine\n");
    let excluded = excluded
        && missing.scores.valid_count() == 2
        && missing.status(Dimension::DescriptionPrecision) == ParseStatus::Missing;
    if !excluded {
        wrong.push("exclusion".into());
    }
    outcome(
        round_trips == 1000 && wrong.is_empty(),
        format!("{round_trips}/1000 round trips, 5 fixtures, exclusion checks; mismatches: {wrong:?}"),
    )
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/pipeline")
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Corpus build, certification, benchmark and alignment against the
/// recorded replay store only.
fn pipeline_cycle(work: &Path) -> (String, String, String) {
    let fixture = fixture_dir();
    let mut configs = BTreeMap::new();
    for (name, model, store) in [
        ("captioner", "caption-v1", "caption"),
        ("reasoner", "reasoning-v1", "reasoning"),
        ("model_a", "model-a", "model_a"),
        ("model_b", "model-b", "model_b"),
        ("judge", "judge-v1", "judge"),
    ] {
        configs.insert(
            name.to_string(),
            BackendConfig::replay(model, format!("replay/{store}")),
        );
    }
    let backends = BackendSet::build(&configs, &fixture).unwrap();
    let registry = PromptRegistry::default();
    let cases: Vec<CaseRecord> = load_jsonl(&fixture.join("cases.jsonl")).unwrap();

    let built = build_stream(
        &cases,
        Stream::HighQuality,
        backends.require("captioner").unwrap(),
        backends.require("reasoner").unwrap(),
        &registry,
        |c: &CaseRecord| fixture.join(&c.image_ref),
    )
    .unwrap();
    assert!(
        built.failures.is_empty() && built.skipped.is_empty(),
        "{:?}",
        built.failures
    );
    let mut store = CorpusStore::new(cases);
    store.image_root = Some(fixture.clone());
    for p in built.provenance {
        store.provenance.insert(p.record_id.clone(), p);
    }
    for n in built.narratives {
        store.upsert_narrative(n);
    }
    for eval in read_expert_scores(&fixture.join("references.csv")).unwrap() {
        let narrative = store
            .narratives
            .iter_mut()
            .find(|n| n.narrative_id == eval.narrative_id)
            .unwrap();
        assert_eq!(certify(&eval, narrative).unwrap(), Certification::Certified);
        store.upsert_evaluation(eval);
    }
    let corpus_dir = work.join("corpus");
    store.save(&corpus_dir).unwrap();
    let store = CorpusStore::load(&corpus_dir).unwrap();

    let models = vec![
        backends.require("model_a").unwrap().clone(),
        backends.require("model_b").unwrap().clone(),
    ];
    let options = RunOptions {
        registry,
        corpus_dir: corpus_dir.clone(),
        cell_dir: Some(work.join("cells")),
    };
    let run = run_benchmark(&store, &models, backends.require("judge").unwrap(), &options).unwrap();
    let report = run.report.to_json();

    let dermeval: Vec<EvaluationRecord> = load_jsonl(&fixture.join("dermeval.jsonl")).unwrap();
    let physician = read_expert_scores(&fixture.join("physician.csv")).unwrap();
    let alignment = alignment_report(&run.judgments, &dermeval, &physician)
        .unwrap()
        .to_json();
    (store.corpus_hash(), report, alignment)
}

fn pipeline_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (hash_a, report_a, align_a) = pipeline_cycle(a.path());
    let (hash_b, report_b, align_b) = pipeline_cycle(b.path());
    let report_sha = sha256_hex(report_a.as_bytes());
    let align_sha = sha256_hex(align_a.as_bytes());
    let ok = report_a == report_b
        && align_a == align_b
        && hash_a == hash_b
        && hash_a == PIPELINE_CORPUS_HASH
        && report_sha == PIPELINE_REPORT_SHA256
        && align_sha == PIPELINE_ALIGNMENT_SHA256;
    outcome(
        ok,
        format!("corpus {hash_a}, report sha256 {report_sha}, alignment sha256 {align_sha}"),
    )
}

fn certification_gate() -> Outcome {
    let mut narrative = NarrativeRecord {
        narrative_id: "n".into(),
        case_id: "c".into(),
        source_model: "m".into(),
        role: NarrativeRole::Candidate,
        text: "The answer is psoriasis.".into(),
        stream: Stream::HighQuality,
        flags: Vec::new(),
    };
    let mut wrong = 0;
    for mask in 0u32..64 {
        let points: [u8; 6] = std::array::from_fn(|d| if mask >> d & 1 == 1 { 4 } else { 5 });
        narrative.role = NarrativeRole::Candidate;
        let eval = EvaluationRecord::new("n", Rater::Physician, ScoreVector::from_points(points));
        let want: Vec<Dimension> = Dimension::ALL.into_iter().filter(|d| points[d.index()] == 4).collect();
        let got = certify(&eval, &mut narrative).unwrap();
        let expected = if mask == 0 {
            Certification::Certified
        } else {
            Certification::NeedsRevision(want)
        };
        let role_ok = (narrative.role == NarrativeRole::Reference) == (mask == 0);
        if got != expected || !role_ok {
            wrong += 1;
        }
    }
    outcome(wrong == 0, format!("{wrong} of 64 vectors misjudged"))
}

fn variance_reduction() -> Outcome {
    let (n, mean, sd, phi, seed) = VARIANCE_STREAM;
    let stream = ar1_reward_stream(n, mean, sd, phi, seed);
    let (var_r, var_a) = baseline_variances(&stream, 0.9);
    // Independent recomputation of both variances.
    let var = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
    };
    let mut b = stream[0];
    let advantages: Vec<f64> = stream
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            if i == 0 {
                return 0.0;
            }
            b = 0.9 * b + 0.1 * r;
            r - b
        })
        .collect();
    let (oracle_r, oracle_a) = (var(&stream), var(&advantages));
    let agree = (oracle_r - var_r).abs() < 1e-9 && (oracle_a - var_a).abs() < 1e-9;
    let reduction = 1.0 - var_a / var_r;
    outcome(
        agree && reduction >= VARIANCE_REDUCTION,
        format!(
            "reward variance {var_r:.4}, advantage variance {var_a:.4}, reduction {:.1}%",
            reduction * 100.0
        ),
    )
}

/// Timing uses the fastest of up to three runs, so a busy test harness does
/// not fail a sub-millisecond budget.
const TIMING_ATTEMPTS: usize = 3;

fn criterion(number: usize, name: &str, budget: Duration, check: fn() -> Outcome) {
    let mut best = Duration::MAX;
    let mut out = check_once(check, &mut best);
    for _ in 1..TIMING_ATTEMPTS {
        if best <= budget {
            break;
        }
        out = check_once(check, &mut best);
    }
    let passed = out.passed && best <= budget;
    println!(
        "{} {number} {name}: {} [{:.3} ms of {} ms]",
        if passed { "PASS" } else { "FAIL" },
        out.detail,
        best.as_secs_f64() * 1e3,
        budget.as_millis()
    );
    assert!(passed, "criterion {number} {name} failed: {}", out.detail);
}

fn check_once(check: fn() -> Outcome, best: &mut Duration) -> Outcome {
    let start = Instant::now();
    let out = check();
    *best = (*best).min(start.elapsed());
    out
}

#[test]
fn criterion_1_macro_mae_arithmetic() {
    criterion(
        1,
        "macro_mae_arithmetic",
        Duration::from_millis(1),
        macro_mae_arithmetic,
    );
}

#[test]
fn criterion_2_reward_baseline_algebra() {
    criterion(
        2,
        "reward_baseline_algebra",
        Duration::from_secs(1),
        reward_baseline_algebra,
    );
}

#[test]
fn criterion_3_gradient_correctness() {
    criterion(3, "gradient_correctness", Duration::from_secs(5), gradient_correctness);
}

#[test]
fn criterion_4_synthetic_convergence() {
    criterion(
        4,
        "synthetic_convergence",
        Duration::from_secs(60),
        synthetic_convergence,
    );
}

#[test]
fn criterion_5_degenerate_weight_equivalence() {
    criterion(
        5,
        "degenerate_weight_equivalence",
        Duration::from_secs(10),
        degenerate_weight_equivalence,
    );
}

#[test]
fn criterion_6_parser_fidelity() {
    criterion(6, "parser_fidelity", Duration::from_secs(1), parser_fidelity);
}

#[test]
fn criterion_7_pipeline_determinism() {
    criterion(7, "pipeline_determinism", Duration::from_secs(10), pipeline_determinism);
}

#[test]
fn criterion_8_certification_gate() {
    criterion(8, "certification_gate", Duration::from_millis(1), certification_gate);
}

#[test]
fn criterion_9_variance_reduction() {
    criterion(9, "variance_reduction", Duration::from_secs(1), variance_reduction);
}
