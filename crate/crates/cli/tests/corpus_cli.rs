mod common;

use std::fs;

use common::*;

#[test]
fn build_writes_corpus_and_manifest() {
    let ws = Workspace::new();
    let out = ws.build_corpus();
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    let narratives = fs::read_to_string(ws.path("corpus/narratives.jsonl")).unwrap();
    assert_eq!(narratives.lines().count(), 3);
    assert!(narratives.contains("\"hq-c2\""));
    assert!(!narratives.contains("diagnosis_mismatch"));

    let manifest = read_json(&ws.path("corpus/run_manifest.json"));
    assert_eq!(manifest["command"], "corpus build");
    assert_eq!(manifest["exit_status"], 0);
    assert_eq!(manifest["backend_kinds"]["captioner"], "mock");
    assert_eq!(manifest["backend_kinds"]["reasoner"], "mock");
    assert!(manifest["backend_kinds"].get("judge").is_none());
    assert_eq!(manifest["backend_calls"], 6);
    assert_eq!(manifest["settings"]["corpus.caption_backend"]["source"], "file");
    assert_eq!(manifest["corpus_hash"].as_str().unwrap().len(), 64);
    assert!(!fs::read_to_string(ws.path("corpus/provenance.jsonl"))
        .unwrap()
        .contains("timestamp\":\"2"));
}

#[test]
fn missing_image_fails_one_case() {
    let ws = Workspace::new();
    fs::remove_file(ws.path("images/c3.png")).unwrap();
    let out = ws.build_corpus();
    assert_eq!(exit_code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("code=case_failed"), "{err}");
    assert!(err.contains("c3.png"), "{err}");
    let narratives = fs::read_to_string(ws.path("corpus/narratives.jsonl")).unwrap();
    assert_eq!(narratives.lines().count(), 2);
    let manifest = read_json(&ws.path("corpus/run_manifest.json"));
    assert_eq!(manifest["exit_status"], 1);
    assert_eq!(manifest["failures"][0]["case_id"], "c3");
    assert_eq!(manifest["failures"][0]["stage"], "caption");
}

#[test]
fn malformed_config_is_an_input_error() {
    let ws = Workspace::new();
    fs::write(
        ws.path("config.toml"),
        "[backends.x]\nkind = \"mock\"\nmodel_id = \"m\"\nbogus = 1\n",
    )
    .unwrap();
    let out = ws.build_corpus();
    assert_eq!(exit_code(&out), 2);
    assert!(stderr(&out).contains("code=config"));

    fs::write(
        ws.path("config.toml"),
        "[backends.r]\nkind = \"remote\"\nmodel_id = \"m\"\n",
    )
    .unwrap();
    assert_eq!(exit_code(&ws.build_corpus()), 2);
}

#[test]
fn unknown_backend_name_is_an_input_error() {
    let ws = Workspace::new();
    let out = dermjudge(&[
        "corpus",
        "build",
        "--cases",
        &ws.arg("cases.jsonl"),
        "--stream",
        "regular",
        "--config",
        &ws.arg("config.toml"),
        "--out",
        &ws.arg("corpus"),
        "--caption-backend",
        "nope",
    ]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr(&out).contains("nope"));
}

#[test]
fn regular_stream_withholds_the_label() {
    let ws = Workspace::new();
    let out = dermjudge(&[
        "corpus",
        "build",
        "--cases",
        &ws.arg("cases.jsonl"),
        "--stream",
        "regular",
        "--config",
        &ws.arg("config.toml"),
        "--out",
        &ws.arg("corpus"),
    ]);
    // The reasoning script only answers labeled prompts.
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("code=case_failed"));
    assert!(stderr(&out).contains("Reasoning"));
}

#[test]
fn certify_promotes_all_fives_only() {
    let ws = Workspace::new();
    assert_eq!(exit_code(&ws.build_corpus()), 0);
    fs::write(
        ws.path("expert.csv"),
        "narrative_id,Acc,Safety,MedG,Cover,Reasoning Coherence,Desc\nhq-c1,5,5,5,5,5,5\nhq-c2,5,4,5,5,3,5\n",
    )
    .unwrap();
    let out = dermjudge(&[
        "corpus",
        "certify",
        "--corpus",
        &ws.arg("corpus"),
        "--expert",
        &ws.arg("expert.csv"),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("certified hq-c1"));
    assert!(text.contains("needs_revision hq-c2 safety,reasoning_coherence"));
    let narratives = fs::read_to_string(ws.path("corpus/narratives.jsonl")).unwrap();
    let refs = narratives
        .lines()
        .filter(|l| l.contains("\"role\":\"reference\""))
        .count();
    assert_eq!(refs, 1);

    fs::write(ws.path("bad.csv"), "narrative_id,accuracy,safety,medical_groundedness,clinical_coverage,reasoning_coherence,description_precision\nhq-c1,4.5,5,5,5,5,5\n").unwrap();
    let out = dermjudge(&[
        "corpus",
        "certify",
        "--corpus",
        &ws.arg("corpus"),
        "--expert",
        &ws.arg("bad.csv"),
    ]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn sample_is_seeded() {
    let ws = Workspace::new();
    let run = |out: &str| {
        dermjudge(&[
            "corpus",
            "sample",
            "--cases",
            &ws.arg("cases.jsonl"),
            "--n",
            "2",
            "--mode",
            "uniform",
            "--seed",
            "3",
            "--out",
            &ws.arg(out),
        ])
    };
    assert_eq!(exit_code(&run("a.jsonl")), 0);
    assert_eq!(exit_code(&run("b.jsonl")), 0);
    let a = fs::read_to_string(ws.path("a.jsonl")).unwrap();
    assert_eq!(a.lines().count(), 2);
    assert_eq!(a, fs::read_to_string(ws.path("b.jsonl")).unwrap());
    assert_eq!(read_json(&ws.path("run_manifest.json"))["seed"], 3);
}
