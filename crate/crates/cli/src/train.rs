use std::fs;
use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::{Args, ValueEnum};
use dermjudge_core::scores::Dimension;
use dermjudge_core::soreb::{
    load_corpus, train_stage1, train_stage2, write_metrics_csv, Checkpoint, SorebError, TrainOutcome,
};

use crate::config::{LoadedConfig, Settings, Source};
use crate::manifest::RunManifest;
use crate::{log, Classify, CmdResult, Failure, EXIT_CLEAN, EXIT_DIVERGED, EXIT_INPUT};

pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    stage: StageArg,
    /// Training corpus (JSON lines).
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Stage-1 checkpoint to start stage 2 from.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
}

fn soreb_failure(e: SorebError) -> Failure {
    let (exit, code) = match &e {
        SorebError::Divergence { .. } | SorebError::NonFinite(_) => (EXIT_DIVERGED, "diverged"),
        _ => (EXIT_INPUT, "train_input"),
    };
    Failure {
        exit,
        code,
        error: e.into(),
    }
}

fn summary_json(outcome: &TrainOutcome) -> serde_json::Value {
    let mut map = serde_json::Map::new();
    for d in Dimension::ALL {
        map.insert(d.key().to_string(), serde_json::json!(outcome.summary[d.index()]));
    }
    serde_json::Value::Object(map)
}

pub fn run(args: TrainArgs, m: &mut RunManifest) -> CmdResult {
    m.dir = Some(args.out.clone());
    let config_file = LoadedConfig::load(args.config.as_deref()).input("config")?;
    m.config_path = config_file.path_string();
    let mut settings = Settings::default();
    let mut config = config_file.train_config(&mut settings).input("config")?;
    if let Some(seed) = args.seed {
        config.seed = seed;
        settings.record("train.seed", serde_json::json!(seed), Source::Flag);
    }
    if let Some(lr) = args.learning_rate {
        config.learning_rate = lr;
        settings.record("train.learning_rate", serde_json::json!(lr), Source::Flag);
    }
    if let Some(epochs) = args.epochs {
        config.epochs_per_stage = epochs;
        settings.record("train.epochs_per_stage", serde_json::json!(epochs), Source::Flag);
    }
    config.validate().map_err(soreb_failure)?;
    m.seed = Some(config.seed);
    m.settings = settings;

    let initial = match (args.stage, &args.checkpoint) {
        (StageArg::Two, None) => {
            return Err(anyhow!(
                "stage 2 needs --checkpoint from a stage-1 run, or use --stage both"
            ))
            .input("checkpoint")
        }
        (StageArg::Two, Some(path)) => Some(Checkpoint::load(path).map_err(soreb_failure)?.policy),
        _ => None,
    };
    let corpus = load_corpus(&args.corpus).map_err(soreb_failure)?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .input("io")?;

    let mut metrics = Vec::new();
    let mut last = None;
    let mut policy = initial;
    if args.stage != StageArg::Two {
        let s1 = train_stage1(&corpus, &config).map_err(soreb_failure)?;
        let path = args.out.join("policy_stage1.json");
        Checkpoint::new("stage1", s1.steps(), config, s1.policy.clone())
            .save(&path)
            .map_err(soreb_failure)?;
        m.output(&path);
        log("info", "stage1_done", format!("{} steps", s1.steps()));
        metrics.extend(s1.metrics.iter().cloned());
        policy = Some(s1.policy.clone());
        last = Some(s1);
    }
    if args.stage != StageArg::One {
        let start = policy.expect("stage 2 has an initial policy");
        let s2 = train_stage2(&corpus, &config, start).map_err(soreb_failure)?;
        let path = args.out.join("policy_stage2.json");
        Checkpoint::new("stage2", s2.steps(), config, s2.policy.clone())
            .save(&path)
            .map_err(soreb_failure)?;
        m.output(&path);
        if let Some((var_r, var_a)) = s2.reward_advantage_variance() {
            m.detail("reward_variance", var_r);
            m.detail("advantage_variance", var_a);
        }
        log("info", "stage2_done", format!("{} steps", s2.steps()));
        metrics.extend(s2.metrics.iter().cloned());
        last = Some(s2);
    }
    let outcome = last.expect("at least one stage ran");
    let metrics_path = args.out.join(METRICS_FILE);
    write_metrics_csv(&metrics_path, &metrics).map_err(soreb_failure)?;
    m.output(&metrics_path);

    let worst = outcome.summary.iter().copied().fold(0.0, f64::max);
    m.detail("steps", metrics.len());
    m.detail("mean_abs_deviation", summary_json(&outcome));
    m.detail("max_mean_abs_deviation", worst);
    if let Some(final_step) = metrics.last() {
        m.detail("final_mean_reward", final_step.mean_reward);
    }
    log(
        "info",
        "trained",
        format!(
            "{} steps, worst per-dimension mean |sampled - target| {worst:.4}",
            metrics.len()
        ),
    );
    Ok(EXIT_CLEAN)
}
