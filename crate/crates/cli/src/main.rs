//! Command-line entry point: corpus construction, benchmark runs, alignment
//! analysis, policy training and self-checks.

mod bench;
mod config;
mod corpus;
mod manifest;
mod tools;
mod train;

use std::fmt::Display;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::manifest::RunManifest;

pub const EXIT_CLEAN: u8 = 0;
pub const EXIT_PARTIAL: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;

/// A command error with its exit code and log code.
#[derive(Debug)]
pub struct Failure {
    pub exit: u8,
    pub code: &'static str,
    pub error: anyhow::Error,
}

pub type CmdResult = Result<u8, Failure>;

pub trait Classify<T> {
    fn or_exit(self, exit: u8, code: &'static str) -> Result<T, Failure>;

    fn input(self, code: &'static str) -> Result<T, Failure>
    where
        Self: Sized,
    {
        self.or_exit(EXIT_INPUT, code)
    }
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn or_exit(self, exit: u8, code: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            exit,
            code,
            error: e.into(),
        })
    }
}

/// Line-oriented diagnostics on standard error.
pub fn log(level: &str, code: &str, msg: impl Display) {
    eprintln!("level={level} code={code} msg={:?}", msg.to_string());
}

#[derive(Parser)]
#[command(
    name = "dermjudge",
    version,
    about = "Rubric-based judging and evaluator training for diagnostic narratives"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build, certify and sample benchmark corpora.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Run reference-anchored benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Compare evaluator scores against physician scores.
    Align(tools::AlignArgs),
    /// Train the scoring policy.
    Train(train::TrainArgs),
    /// Write a synthetic training corpus.
    Synth(tools::SynthArgs),
    /// Run a built-in self-check suite.
    Verify(tools::VerifyArgs),
    /// Inspect the prompt registry.
    #[command(subcommand)]
    Prompts(PromptsCommand),
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Generate narratives for a case list through one stream.
    Build(corpus::BuildArgs),
    /// Import physician scores and certify all-five narratives.
    Certify(corpus::CertifyArgs),
    /// Draw a uniform or category-stratified case sample.
    Sample(corpus::SampleArgs),
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Generate and judge candidates for every model and bench case.
    Run(bench::RunArgs),
}

#[derive(Subcommand)]
enum PromptsCommand {
    /// Write the prompt catalog.
    Export(ExportArgs),
}

#[derive(Args)]
struct ExportArgs {
    /// Destination file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, mut manifest) = match &cli.command {
        Command::Corpus(CorpusCommand::Build(_)) => ("corpus build", Some(RunManifest::new("corpus build"))),
        Command::Corpus(CorpusCommand::Certify(_)) => ("corpus certify", Some(RunManifest::new("corpus certify"))),
        Command::Corpus(CorpusCommand::Sample(_)) => ("corpus sample", Some(RunManifest::new("corpus sample"))),
        Command::Bench(BenchCommand::Run(_)) => ("bench run", Some(RunManifest::new("bench run"))),
        Command::Align(_) => ("align", Some(RunManifest::new("align"))),
        Command::Train(_) => ("train", Some(RunManifest::new("train"))),
        Command::Synth(_) => ("synth", Some(RunManifest::new("synth"))),
        Command::Verify(_) => ("verify", None),
        Command::Prompts(_) => ("prompts export", None),
    };
    let mut scratch = RunManifest::new(name);
    let m = manifest.as_mut().unwrap_or(&mut scratch);
    let result = match cli.command {
        Command::Corpus(CorpusCommand::Build(a)) => corpus::build(a, m),
        Command::Corpus(CorpusCommand::Certify(a)) => corpus::certify(a, m),
        Command::Corpus(CorpusCommand::Sample(a)) => corpus::sample(a, m),
        Command::Bench(BenchCommand::Run(a)) => bench::run(a, m),
        Command::Align(a) => tools::align(a, m),
        Command::Train(a) => train::run(a, m),
        Command::Synth(a) => tools::synth(a, m),
        Command::Verify(a) => tools::verify(a),
        Command::Prompts(PromptsCommand::Export(a)) => tools::export_prompts(a.out),
    };
    let exit = match result {
        Ok(code) => code,
        Err(f) => {
            log("error", f.code, format!("{:#}", f.error));
            f.exit
        }
    };
    if let Some(m) = manifest.as_mut() {
        match m.write(exit) {
            Ok(Some(path)) => log("info", "manifest_written", path.display()),
            Ok(None) => {}
            Err(e) => log("warn", "manifest_failed", format!("{e:#}")),
        }
    }
    ExitCode::from(exit)
}
