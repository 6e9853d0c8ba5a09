use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use dermjudge_core::bench::{alignment_report, load_jsonl, read_expert_scores};
use dermjudge_core::records::EvaluationRecord;
use dermjudge_core::soreb::{synthetic_corpus, write_corpus, SyntheticSpec};
use dermjudge_core::textproto::export_catalog;
use dermjudge_core::verify::{run_suite, Suite};

use crate::corpus::parent_dir;
use crate::manifest::RunManifest;
use crate::{log, Classify, CmdResult, EXIT_CLEAN, EXIT_PARTIAL};

#[derive(Args)]
pub struct AlignArgs {
    /// Reference-anchored judge evaluations (JSON lines).
    #[arg(long)]
    bench: PathBuf,
    /// Reference-free evaluator scores (JSON lines).
    #[arg(long)]
    eval: PathBuf,
    /// Physician scores (CSV or JSON lines).
    #[arg(long)]
    expert: PathBuf,
    /// Destination report (JSON).
    #[arg(long)]
    out: PathBuf,
}

fn read_evaluations(path: &Path) -> anyhow::Result<Vec<EvaluationRecord>> {
    let records = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_expert_scores(path)?
    } else {
        load_jsonl(path)?
    };
    if records.is_empty() {
        bail!("{} holds no evaluations", path.display());
    }
    Ok(records)
}

pub fn align(args: AlignArgs, m: &mut RunManifest) -> CmdResult {
    m.dir = Some(parent_dir(&args.out));
    let bench = read_evaluations(&args.bench).input("input")?;
    let eval = read_evaluations(&args.eval).input("input")?;
    let expert = read_evaluations(&args.expert).input("input")?;
    let report = alignment_report(&bench, &eval, &expert).input("align")?;
    fs::write(&args.out, report.to_json())
        .with_context(|| format!("writing {}", args.out.display()))
        .input("io")?;
    print!("{}", report.table());
    m.detail("macro", &report.macro_mae);
    m.detail("pairs", &report.pairs);
    m.output(&args.out);
    log("info", "aligned", format!("report written to {}", args.out.display()));
    Ok(EXIT_CLEAN)
}

#[derive(Args)]
pub struct SynthArgs {
    /// Destination training corpus (JSON lines).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SyntheticSpec::default().categories)]
    categories: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().tiers)]
    tiers: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().instances_per_context)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn synth(args: SynthArgs, m: &mut RunManifest) -> CmdResult {
    m.dir = Some(parent_dir(&args.out));
    let spec = SyntheticSpec {
        categories: args.categories,
        tiers: args.tiers,
        instances_per_context: args.instances,
        seed: args.seed,
    };
    let corpus = synthetic_corpus(&spec).input("synth")?;
    write_corpus(&args.out, &corpus).input("io")?;
    m.seed = Some(args.seed);
    m.detail("spec", spec);
    m.detail("instances", corpus.len());
    m.output(&args.out);
    log(
        "info",
        "synthesized",
        format!("{} instances over {} contexts", corpus.len(), spec.contexts()),
    );
    Ok(EXIT_CLEAN)
}

#[derive(Args)]
pub struct VerifyArgs {
    /// gradcheck, parser or invariants; all suites when absent.
    #[arg(long)]
    suite: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn verify(args: VerifyArgs) -> CmdResult {
    let suites = match &args.suite {
        Some(name) => vec![name.parse::<Suite>().map_err(anyhow::Error::msg).input("suite")?],
        None => Suite::ALL.to_vec(),
    };
    let mut failed = 0;
    for suite in suites {
        for check in run_suite(suite, args.seed) {
            println!("{} {check}", suite.as_str());
            if !check.passed {
                failed += 1;
            }
        }
    }
    if failed > 0 {
        log("error", "verify_failed", format!("{failed} checks failed"));
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_CLEAN)
}

pub fn export_prompts(out: Option<PathBuf>) -> CmdResult {
    let catalog = export_catalog();
    match out {
        Some(path) => {
            fs::write(&path, catalog)
                .with_context(|| format!("writing {}", path.display()))
                .input("io")?;
            log("info", "prompts_exported", path.display());
        }
        None => print!("{catalog}"),
    }
    Ok(EXIT_CLEAN)
}
