use std::fs;
use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::Args;
use dermjudge_core::backends::BackendKind;
use dermjudge_core::bench::{run_benchmark, write_jsonl, BenchError, CorpusStore, FailureTally, RunOptions};

use crate::config::{LoadedConfig, Settings};
use crate::manifest::{now, RunManifest};
use crate::{log, Classify, CmdResult, Failure, EXIT_CLEAN, EXIT_INPUT, EXIT_PARTIAL};

pub const REPORT_FILE: &str = "report.json";

#[derive(Args)]
pub struct RunArgs {
    /// Corpus directory with certified references for the bench split.
    #[arg(long)]
    corpus: PathBuf,
    /// Comma-separated backend names to benchmark.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    /// Backend name of the judge.
    #[arg(long)]
    judge: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    prompt_variant: Option<String>,
}

pub fn run(args: RunArgs, m: &mut RunManifest) -> CmdResult {
    m.dir = Some(args.out.clone());
    let config = LoadedConfig::load(args.config.as_deref()).input("config")?;
    m.config_path = config.path_string();
    let mut settings = Settings::default();
    let registry = config.registry(&mut settings, args.prompt_variant).input("config")?;
    let models = settings.pick(
        "bench.models",
        args.models,
        config.file.bench.models.clone(),
        Vec::new(),
    );
    let models: Vec<String> = models.into_iter().filter(|s| !s.trim().is_empty()).collect();
    if models.is_empty() {
        return Err(anyhow!("no models to benchmark")).input("config");
    }
    let judge = settings
        .pick_opt("bench.judge", args.judge, config.file.bench.judge.clone())
        .ok_or_else(|| anyhow!("no judge backend: pass --judge or set bench.judge"))
        .input("config")?;
    m.settings = settings;

    let mut names: Vec<&str> = models.iter().map(String::as_str).collect();
    names.push(&judge);
    let backends = config.backends(&names).input("config")?;
    m.backends(&backends);

    let corpus = CorpusStore::load(&args.corpus).input("corpus")?;
    corpus.validate().input("corpus")?;
    m.corpus_hash = Some(corpus.corpus_hash());

    let model_backends = models
        .iter()
        .map(|name| backends.require(name).cloned())
        .collect::<Result<Vec<_>, _>>()
        .input("config")?;
    let judge_backend = backends.require(&judge).input("config")?;

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .input("io")?;
    let options = RunOptions {
        registry,
        corpus_dir: args.corpus.clone(),
        cell_dir: Some(args.out.join("cells")),
    };
    let run = match run_benchmark(&corpus, &model_backends, judge_backend, &options) {
        Ok(run) => run,
        Err(e @ (BenchError::MissingReference(_) | BenchError::Invalid(_))) => {
            return Err(Failure {
                exit: EXIT_INPUT,
                code: "bench_input",
                error: e.into(),
            })
        }
        Err(e) => return Err(e).or_exit(EXIT_PARTIAL, "bench"),
    };

    let report_path = args.out.join(REPORT_FILE);
    fs::write(&report_path, run.report.to_json())
        .with_context(|| format!("writing {}", report_path.display()))
        .input("io")?;
    write_jsonl(&args.out.join("candidates.jsonl"), &run.candidates).input("io")?;
    write_jsonl(&args.out.join("judgments.jsonl"), &run.judgments).input("io")?;
    let stamp = now();
    let provenance: Vec<_> = run
        .provenance
        .iter()
        .cloned()
        .map(|mut p| {
            let remote = model_backends
                .iter()
                .any(|b| b.model_id() == p.model_id && b.kind() == BackendKind::Remote);
            if remote {
                p.timestamp = Some(stamp.clone());
            }
            p
        })
        .collect();
    write_jsonl(&args.out.join("provenance.jsonl"), &provenance).input("io")?;
    print!("{}", run.report.table());

    let failures: Vec<_> = run.report.per_case.iter().filter_map(|r| r.failure.clone()).collect();
    for f in &failures {
        log("warn", "case_failed", f);
    }
    let mut tally = FailureTally::default();
    for t in run.report.failures.values() {
        tally.generation += t.generation;
        tally.judging += t.judging;
        tally.partial += t.partial;
    }
    m.failures = failures;
    m.backend_calls = Some(backends.total_calls());
    m.detail("failures", &run.report.failures);
    m.output(&report_path);
    log(
        "info",
        "bench_finished",
        format!(
            "{} models x {} cases, {} backend calls, {} generation / {} judging failures, {} partial",
            run.report.metadata.models.len(),
            run.report.metadata.cases,
            backends.total_calls(),
            tally.generation,
            tally.judging,
            tally.partial
        ),
    );
    Ok(if tally.total() == 0 { EXIT_CLEAN } else { EXIT_PARTIAL })
}
