#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

pub const CASES: [(&str, &str, &str); 3] = [
    ("c1", "epidermal nevus", "nevi"),
    ("c2", "psoriasis", "papulosquamous"),
    ("c3", "common wart", "infections"),
];

pub fn dermjudge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dermjudge"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

pub fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

pub fn judge_reply(points: [u8; 6]) -> String {
    let names = [
        "Accuracy",
        "Safety",
        "Medical Groundedness",
        "Clinical Coverage",
        "Reasoning Coherence",
        "Description Precision",
    ];
    names
        .iter()
        .zip(points)
        .map(|(n, p)| format!("**{n}:** {p}.0 --- Compared with the reference."))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// A scratch directory with images, a case list, mock scripts and a config.
pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        let ws = Workspace {
            dir: tempfile::tempdir().unwrap(),
        };
        let root = ws.root();
        fs::create_dir_all(root.join("images")).unwrap();
        let mut lines = String::new();
        for (i, (id, label, category)) in CASES.iter().enumerate() {
            fs::write(
                root.join("images").join(format!("{id}.png")),
                [0x89, b'P', b'N', b'G', i as u8],
            )
            .unwrap();
            let case = json!({
                "case_id": id,
                "image_ref": format!("images/{id}.png"),
                "disease_label": label,
                "category": category,
                "split": "bench",
            });
            lines.push_str(&case.to_string());
            lines.push('\n');
        }
        fs::write(root.join("cases.jsonl"), lines).unwrap();

        let caption = json!({
            "rules": [],
            "default": "This image shows a lesion on the forearm ({fingerprint}).",
        });
        let mut reasoning_rules = Vec::new();
        for (_, label, _) in CASES {
            reasoning_rules.push(json!({
                "contains": [format!("ground truth {label}")],
                "text": format!("<think>Inspect the morphology.</think>\n\nA focused workup narrows the field. The answer is {label}."),
            }));
        }
        let reasoning = json!({ "rules": reasoning_rules });
        let model = json!({
            "rules": [],
            "default": "Raised papules with scale. Differentials considered. The answer is eczema.",
        });
        let judge = json!({
            "rules": [
                {"contains": ["The answer is epidermal nevus."], "text": judge_reply([2, 5, 2, 2, 2, 2])},
                {"contains": ["The answer is psoriasis."], "text": judge_reply([5, 5, 4, 4, 5, 4])},
                {"contains": ["The answer is common wart."], "text": judge_reply([1, 4, 2, 3, 2, 2])},
            ],
        });
        for (name, script) in [
            ("caption", caption),
            ("reasoning", reasoning),
            ("model", model),
            ("judge", judge),
        ] {
            fs::write(
                root.join(format!("{name}.json")),
                serde_json::to_string_pretty(&script).unwrap(),
            )
            .unwrap();
        }
        fs::write(
            root.join("config.toml"),
            r#"seed = 7

[backends.captioner]
kind = "mock"
model_id = "caption-model"
script = "caption.json"

[backends.reasoner]
kind = "mock"
model_id = "reasoning-model"
script = "reasoning.json"

[backends.candidate]
kind = "mock"
model_id = "candidate-model"
script = "model.json"
max_concurrency = 2

[backends.judge]
kind = "mock"
model_id = "judge-model"
script = "judge.json"

[backends.judge_replay]
kind = "replay"
model_id = "judge-model"
replay_path = "replay/judge"
record = true
upstream = "judge"

[backends.candidate_replay]
kind = "replay"
model_id = "candidate-model"
replay_path = "replay/candidate"
record = true
upstream = "candidate"

[corpus]
caption_backend = "captioner"
reasoning_backend = "reasoner"

[bench]
judge = "judge"
"#,
        )
        .unwrap();
        ws
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root().join(rel)
    }

    pub fn arg(&self, rel: &str) -> String {
        self.path(rel).display().to_string()
    }

    pub fn build_corpus(&self) -> Output {
        dermjudge(&[
            "corpus",
            "build",
            "--cases",
            &self.arg("cases.jsonl"),
            "--stream",
            "high",
            "--config",
            &self.arg("config.toml"),
            "--out",
            &self.arg("corpus"),
        ])
    }

    /// Builds the corpus and certifies every narrative.
    pub fn certified_corpus(&self) {
        assert_eq!(exit_code(&self.build_corpus()), 0);
        let mut csv = String::from("narrative_id,accuracy,safety,medical_groundedness,clinical_coverage,reasoning_coherence,description_precision\n");
        for (id, _, _) in CASES {
            csv.push_str(&format!("hq-{id},5,5,5,5,5,5\n"));
        }
        fs::write(self.path("expert.csv"), csv).unwrap();
        let out = dermjudge(&[
            "corpus",
            "certify",
            "--corpus",
            &self.arg("corpus"),
            "--expert",
            &self.arg("expert.csv"),
        ]);
        assert_eq!(exit_code(&out), 0, "{}", stderr(&out));
    }

    pub fn bench(&self, models: &str, out: &str) -> Output {
        dermjudge(&[
            "bench",
            "run",
            "--corpus",
            &self.arg("corpus"),
            "--models",
            models,
            "--config",
            &self.arg("config.toml"),
            "--out",
            &self.arg(out),
        ])
    }
}
