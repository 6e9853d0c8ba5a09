use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, ValueEnum};
use dermjudge_core::backends::BackendKind;
use dermjudge_core::bench::{
    build_stream, certify as certify_one, load_jsonl, read_expert_scores, sample_cases, write_jsonl, Certification,
    CorpusStore, SamplingMode, CASES_FILE,
};
use dermjudge_core::records::{CaseRecord, Stream};

use crate::config::{LoadedConfig, Settings};
use crate::manifest::{now, RunManifest};
use crate::{log, Classify, CmdResult, EXIT_CLEAN, EXIT_PARTIAL};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StreamArg {
    High,
    Regular,
}

#[derive(Args)]
pub struct BuildArgs {
    /// Case list (JSON lines).
    #[arg(long)]
    cases: PathBuf,
    #[arg(long, value_enum)]
    stream: StreamArg,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus directory; created or extended.
    #[arg(long)]
    out: PathBuf,
    /// Base for relative image references; defaults to the case file's directory.
    #[arg(long)]
    image_root: Option<PathBuf>,
    #[arg(long)]
    caption_backend: Option<String>,
    #[arg(long)]
    reasoning_backend: Option<String>,
    #[arg(long)]
    prompt_variant: Option<String>,
}

fn absolute(p: &Path) -> anyhow::Result<PathBuf> {
    fs::canonicalize(p).with_context(|| format!("resolving {}", p.display()))
}

pub fn build(args: BuildArgs, m: &mut RunManifest) -> CmdResult {
    m.dir = Some(args.out.clone());
    let config = LoadedConfig::load(args.config.as_deref()).input("config")?;
    m.config_path = config.path_string();
    let mut settings = Settings::default();
    let registry = config.registry(&mut settings, args.prompt_variant).input("config")?;
    let caption = settings
        .pick_opt(
            "corpus.caption_backend",
            args.caption_backend,
            config.file.corpus.caption_backend.clone(),
        )
        .ok_or_else(|| anyhow!("no caption backend: pass --caption-backend or set corpus.caption_backend"))
        .input("config")?;
    let reasoning = settings
        .pick_opt(
            "corpus.reasoning_backend",
            args.reasoning_backend,
            config.file.corpus.reasoning_backend.clone(),
        )
        .ok_or_else(|| anyhow!("no reasoning backend: pass --reasoning-backend or set corpus.reasoning_backend"))
        .input("config")?;
    let backends = config.backends(&[&caption, &reasoning]).input("config")?;
    m.backends(&backends);

    let cases: Vec<CaseRecord> = load_jsonl(&args.cases).input("cases")?;
    let stream = match args.stream {
        StreamArg::High => Stream::HighQuality,
        StreamArg::Regular => Stream::Regular,
    };
    settings.record("stream", serde_json::json!(stream), crate::config::Source::Flag);

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .input("io")?;
    let mut store = if args.out.join(CASES_FILE).exists() {
        let mut existing = CorpusStore::load(&args.out).input("corpus")?;
        for case in &cases {
            match existing.cases.iter_mut().find(|c| c.case_id == case.case_id) {
                Some(c) => *c = case.clone(),
                None => existing.cases.push(case.clone()),
            }
        }
        existing
    } else {
        CorpusStore::new(cases.clone())
    };
    let root = match &args.image_root {
        Some(r) => absolute(r).input("image_root")?,
        None => absolute(
            args.cases
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .unwrap_or(Path::new(".")),
        )
        .input("image_root")?,
    };
    let out_abs = absolute(&args.out).input("io")?;
    store.image_root = Some(pathdiff::diff_paths(&root, &out_abs).unwrap_or(root.clone()));
    let image_of = |case: &CaseRecord| {
        let p = Path::new(&case.image_ref);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            root.join(p)
        }
    };

    let caption_backend = backends.require(&caption).input("config")?;
    let reasoning_backend = backends.require(&reasoning).input("config")?;
    let output = build_stream(&cases, stream, caption_backend, reasoning_backend, &registry, image_of)
        .or_exit(EXIT_PARTIAL, "stream")?;

    let stamp = now();
    for mut p in output.provenance {
        let remote = if p.record_id.ends_with("#caption") {
            caption_backend.kind() == BackendKind::Remote
        } else {
            reasoning_backend.kind() == BackendKind::Remote
        };
        if remote {
            p.timestamp = Some(stamp.clone());
        }
        store.provenance.insert(p.record_id.clone(), p);
    }
    let built = output.narratives.len();
    for n in output.narratives {
        store.upsert_narrative(n);
    }
    store.save(&args.out).input("io")?;
    store.validate().or_exit(EXIT_PARTIAL, "integrity")?;

    for f in &output.skipped {
        log("warn", "case_skipped", f);
    }
    for f in &output.failures {
        log("warn", "case_failed", f);
    }
    m.corpus_hash = Some(store.corpus_hash());
    m.backend_calls = Some(backends.total_calls());
    m.settings = settings;
    m.failures = output.failures.clone();
    m.detail("narratives_built", built);
    m.detail("skipped", &output.skipped);
    m.output(&args.out);
    log(
        "info",
        "corpus_built",
        format!(
            "{built} narratives, {} failures, {} skipped",
            output.failures.len(),
            output.skipped.len()
        ),
    );
    Ok(if output.failures.is_empty() {
        EXIT_CLEAN
    } else {
        EXIT_PARTIAL
    })
}

#[derive(Args)]
pub struct CertifyArgs {
    /// Corpus directory, updated in place.
    #[arg(long)]
    corpus: PathBuf,
    /// Physician scores (CSV with narrative_id and six score columns).
    #[arg(long)]
    expert: PathBuf,
}

pub fn certify(args: CertifyArgs, m: &mut RunManifest) -> CmdResult {
    m.dir = Some(args.corpus.clone());
    let mut store = CorpusStore::load(&args.corpus).input("corpus")?;
    let evaluations = read_expert_scores(&args.expert).input("expert")?;
    let mut certified = Vec::new();
    let mut revision = Vec::new();
    for eval in evaluations {
        let narrative = store
            .narratives
            .iter_mut()
            .find(|n| n.narrative_id == eval.narrative_id)
            .ok_or_else(|| anyhow!("physician scores for unknown narrative {}", eval.narrative_id))
            .input("expert")?;
        match certify_one(&eval, narrative).input("certify")? {
            Certification::Certified => certified.push(eval.narrative_id.clone()),
            Certification::NeedsRevision(dims) => {
                let keys: Vec<&str> = dims.iter().map(|d| d.key()).collect();
                println!("needs_revision {} {}", eval.narrative_id, keys.join(","));
                revision.push(serde_json::json!({"narrative_id": eval.narrative_id, "dimensions": keys}));
            }
        }
        store.upsert_evaluation(eval);
    }
    for id in &certified {
        println!("certified {id}");
    }
    store.save(&args.corpus).input("io")?;
    store.validate().or_exit(EXIT_PARTIAL, "integrity")?;
    m.corpus_hash = Some(store.corpus_hash());
    m.detail("certified", &certified);
    m.detail("needs_revision", &revision);
    m.output(&args.corpus);
    log(
        "info",
        "certified",
        format!("{} certified, {} need revision", certified.len(), revision.len()),
    );
    Ok(EXIT_CLEAN)
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Uniform,
    Stratified,
}

#[derive(Args)]
pub struct SampleArgs {
    #[arg(long)]
    cases: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value = "stratified")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Destination case list.
    #[arg(long)]
    out: PathBuf,
}

pub fn sample(args: SampleArgs, m: &mut RunManifest) -> CmdResult {
    m.dir = Some(parent_dir(&args.out));
    let cases: Vec<CaseRecord> = load_jsonl(&args.cases).input("cases")?;
    let mode = match args.mode {
        ModeArg::Uniform => SamplingMode::Uniform,
        ModeArg::Stratified => SamplingMode::Stratified,
    };
    let picked = sample_cases(&cases, args.n, mode, args.seed).input("sample")?;
    write_jsonl(&args.out, &picked).input("io")?;
    m.seed = Some(args.seed);
    m.detail("mode", mode);
    m.detail("sampled", picked.len());
    m.output(&args.out);
    log("info", "sampled", format!("{} of {} cases", picked.len(), cases.len()));
    Ok(EXIT_CLEAN)
}

pub fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}
