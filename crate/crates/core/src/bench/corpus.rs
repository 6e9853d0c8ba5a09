use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::BenchError;
use crate::records::{CaseRecord, EvaluationRecord, NarrativeRecord, NarrativeRole, Rater, Split};

pub const CASES_FILE: &str = "cases.jsonl";
pub const NARRATIVES_FILE: &str = "narratives.jsonl";
pub const EVALUATIONS_FILE: &str = "evaluations.jsonl";
pub const PROVENANCE_FILE: &str = "provenance.jsonl";
pub const CORPUS_META_FILE: &str = "corpus.json";

/// Where a generated record came from. Not part of the corpus hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub record_id: String,
    pub model_id: String,
    pub template: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct CorpusMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_root: Option<PathBuf>,
}

/// Cases, narratives and evaluations of one corpus directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusStore {
    pub cases: Vec<CaseRecord>,
    pub narratives: Vec<NarrativeRecord>,
    pub evaluations: Vec<EvaluationRecord>,
    pub provenance: BTreeMap<String, Provenance>,
    /// Base for relative `image_ref`s; defaults to the corpus directory.
    pub image_root: Option<PathBuf>,
}

pub fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, BenchError> {
    let text = fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| BenchError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), BenchError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let mut file = fs::File::create(&tmp).map_err(|e| BenchError::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| BenchError::io(&tmp, e))?;
    file.sync_all().map_err(|e| BenchError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| BenchError::io(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), BenchError> {
    let mut buf = String::new();
    for item in items {
        buf.push_str(&serde_json::to_string(item).map_err(|e| BenchError::io(path, e))?);
        buf.push('\n');
    }
    write_atomic(path, buf.as_bytes())
}

fn load_optional<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, BenchError> {
    if path.exists() {
        load_jsonl(path)
    } else {
        Ok(Vec::new())
    }
}

impl CorpusStore {
    pub fn new(cases: Vec<CaseRecord>) -> Self {
        CorpusStore {
            cases,
            ..CorpusStore::default()
        }
    }

    /// Reads a corpus directory. Only `cases.jsonl` is required.
    pub fn load(dir: &Path) -> Result<Self, BenchError> {
        let meta_path = dir.join(CORPUS_META_FILE);
        let meta: CorpusMeta = if meta_path.exists() {
            let text = fs::read_to_string(&meta_path).map_err(|e| BenchError::io(&meta_path, e))?;
            serde_json::from_str(&text).map_err(|e| BenchError::io(&meta_path, e))?
        } else {
            CorpusMeta::default()
        };
        let provenance: Vec<Provenance> = load_optional(&dir.join(PROVENANCE_FILE))?;
        Ok(CorpusStore {
            cases: load_jsonl(&dir.join(CASES_FILE))?,
            narratives: load_optional(&dir.join(NARRATIVES_FILE))?,
            evaluations: load_optional(&dir.join(EVALUATIONS_FILE))?,
            provenance: provenance.into_iter().map(|p| (p.record_id.clone(), p)).collect(),
            image_root: meta.image_root.map(|r| if r.is_relative() { dir.join(r) } else { r }),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<(), BenchError> {
        write_jsonl(&dir.join(CASES_FILE), &self.cases)?;
        write_jsonl(&dir.join(NARRATIVES_FILE), &self.narratives)?;
        write_jsonl(&dir.join(EVALUATIONS_FILE), &self.evaluations)?;
        let provenance: Vec<&Provenance> = self.provenance.values().collect();
        write_jsonl(&dir.join(PROVENANCE_FILE), &provenance)?;
        let meta = CorpusMeta {
            image_root: self.image_root.clone(),
        };
        let mut text = serde_json::to_string_pretty(&meta).expect("meta serializes");
        text.push('\n');
        write_atomic(&dir.join(CORPUS_META_FILE), text.as_bytes())
    }

    pub fn case(&self, case_id: &str) -> Option<&CaseRecord> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }

    pub fn narrative(&self, narrative_id: &str) -> Option<&NarrativeRecord> {
        self.narratives.iter().find(|n| n.narrative_id == narrative_id)
    }

    /// Absolute or URI refs pass through; relative ones join the image root.
    pub fn resolve_image(&self, case: &CaseRecord, corpus_dir: &Path) -> PathBuf {
        let r = Path::new(&case.image_ref);
        if r.is_absolute() || case.image_ref.contains("://") {
            return r.to_path_buf();
        }
        self.image_root.as_deref().unwrap_or(corpus_dir).join(r)
    }

    fn certified_ids(&self) -> BTreeSet<&str> {
        self.evaluations
            .iter()
            .filter(|e| e.is_certified())
            .map(|e| e.narrative_id.as_str())
            .collect()
    }

    /// The reference narrative for a case backed by an all-fives physician record.
    pub fn certified_reference(&self, case_id: &str) -> Option<&NarrativeRecord> {
        let certified = self.certified_ids();
        self.narratives.iter().find(|n| {
            n.case_id == case_id && n.role == NarrativeRole::Reference && certified.contains(n.narrative_id.as_str())
        })
    }

    /// Cases of `split` that lack a certified reference.
    pub fn missing_references(&self, split: Split) -> Vec<String> {
        self.cases
            .iter()
            .filter(|c| c.split == split && self.certified_reference(&c.case_id).is_none())
            .map(|c| c.case_id.clone())
            .collect()
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut case_ids = BTreeSet::new();
        for c in &self.cases {
            if !case_ids.insert(c.case_id.as_str()) {
                out.push(format!("duplicate case_id {}", c.case_id));
            }
        }
        let mut narrative_ids = BTreeSet::new();
        for n in &self.narratives {
            if !narrative_ids.insert(n.narrative_id.as_str()) {
                out.push(format!("duplicate narrative_id {}", n.narrative_id));
            }
            if !case_ids.contains(n.case_id.as_str()) {
                out.push(format!(
                    "narrative {} refers to unknown case {}",
                    n.narrative_id, n.case_id
                ));
            }
        }
        let mut seen_eval = BTreeSet::new();
        for e in &self.evaluations {
            if !narrative_ids.contains(e.narrative_id.as_str()) {
                out.push(format!("evaluation refers to unknown narrative {}", e.narrative_id));
            }
            if e.rater == Rater::Physician && !e.has_integer_scores() {
                out.push(format!("physician scores for {} are not integers", e.narrative_id));
            }
            if !seen_eval.insert((e.narrative_id.as_str(), e.rater)) {
                out.push(format!(
                    "duplicate {} evaluation for {}",
                    e.rater.as_str(),
                    e.narrative_id
                ));
            }
        }
        let certified = self.certified_ids();
        let mut per_case: BTreeMap<&str, usize> = BTreeMap::new();
        for n in &self.narratives {
            if n.role == NarrativeRole::Reference && certified.contains(n.narrative_id.as_str()) {
                *per_case.entry(n.case_id.as_str()).or_default() += 1;
            }
        }
        for (case, count) in per_case {
            if count > 1 {
                out.push(format!("case {case} has {count} certified references"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(BenchError::Integrity(v))
        }
    }

    /// SHA-256 over the canonical JSON lines of cases, narratives and
    /// evaluations, each sorted by id. Provenance and image root are excluded.
    pub fn corpus_hash(&self) -> String {
        fn section<T: Serialize>(h: &mut Sha256, name: &str, mut lines: Vec<(String, &T)>) {
            lines.sort_by(|a, b| a.0.cmp(&b.0));
            h.update(name.as_bytes());
            h.update(b"\n");
            for (_, item) in lines {
                h.update(serde_json::to_string(item).expect("record serializes").as_bytes());
                h.update(b"\n");
            }
        }
        let mut h = Sha256::new();
        section(
            &mut h,
            "cases",
            self.cases.iter().map(|c| (c.case_id.clone(), c)).collect(),
        );
        section(
            &mut h,
            "narratives",
            self.narratives.iter().map(|n| (n.narrative_id.clone(), n)).collect(),
        );
        section(
            &mut h,
            "evaluations",
            self.evaluations
                .iter()
                .map(|e| (format!("{}\u{0}{}", e.narrative_id, e.rater.as_str()), e))
                .collect(),
        );
        hex::encode(h.finalize())
    }

    /// Replaces any narrative with the same id, otherwise appends.
    pub fn upsert_narrative(&mut self, narrative: NarrativeRecord) {
        match self
            .narratives
            .iter_mut()
            .find(|n| n.narrative_id == narrative.narrative_id)
        {
            Some(slot) => *slot = narrative,
            None => self.narratives.push(narrative),
        }
    }

    /// Replaces the evaluation with the same (narrative, rater), otherwise appends.
    pub fn upsert_evaluation(&mut self, evaluation: EvaluationRecord) {
        match self
            .evaluations
            .iter_mut()
            .find(|e| e.narrative_id == evaluation.narrative_id && e.rater == evaluation.rater)
        {
            Some(slot) => *slot = evaluation,
            None => self.evaluations.push(evaluation),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Uniform,
    /// Per-category quotas proportional to category size, largest remainder.
    Stratified,
}

/// Draws `n` cases without replacement; output keeps input order.
pub fn sample_cases(
    cases: &[CaseRecord],
    n: usize,
    mode: SamplingMode,
    seed: u64,
) -> Result<Vec<CaseRecord>, BenchError> {
    if n > cases.len() {
        return Err(BenchError::Invalid(format!(
            "cannot sample {n} cases from {}",
            cases.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = match mode {
        SamplingMode::Uniform => {
            let mut idx: Vec<usize> = (0..cases.len()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(n);
            idx
        }
        SamplingMode::Stratified => {
            let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, c) in cases.iter().enumerate() {
                groups.entry(c.category.as_str()).or_default().push(i);
            }
            let total = cases.len();
            let mut quotas: Vec<(&str, usize, usize)> = groups
                .iter()
                .map(|(k, v)| (*k, n * v.len() / total, (n * v.len()) % total))
                .collect();
            let assigned: usize = quotas.iter().map(|q| q.1).sum();
            let mut order: Vec<usize> = (0..quotas.len()).collect();
            order.sort_by(|&a, &b| quotas[b].2.cmp(&quotas[a].2).then(quotas[a].0.cmp(quotas[b].0)));
            for &i in order.iter().take(n - assigned) {
                quotas[i].1 += 1;
            }
            let mut out = Vec::with_capacity(n);
            for (name, quota, _) in quotas {
                let mut members = groups[name].clone();
                members.shuffle(&mut rng);
                out.extend(members.into_iter().take(quota));
            }
            out
        }
    };
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| cases[i].clone()).collect())
}
