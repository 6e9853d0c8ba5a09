//! Rubric dimensions, fixed-point scores and the score arithmetic used by
//! every report: integer rounding, per-dimension MAE, macro MAE and
//! per-model aggregation.
//!
//! Scores are stored as integer thousandths of a rubric point so that
//! means and report cells are bit-stable across platforms.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Highest value on the rubric scale.
pub const MAX_POINTS: u8 = 5;

const MILLI_PER_POINT: u32 = 1000;
const MAX_MILLI: u32 = MAX_POINTS as u32 * MILLI_PER_POINT;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("score {0} is outside the rubric range [0, 5]")]
    OutOfRange(f64),
    #[error("no usable pairs to compare for {0}")]
    EmptyComparison(Dimension),
    #[error("predicted and expert lists differ in length ({predicted} vs {expert})")]
    LengthMismatch { predicted: usize, expert: usize },
    #[error("input is missing dimension {0}")]
    Incomplete(Dimension),
    #[error("group {0:?} has no records")]
    EmptyGroup(String),
    #[error("key sets differ: {0}")]
    Schema(String),
}

/// The six rubric dimensions in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Accuracy,
    Safety,
    MedicalGroundedness,
    ClinicalCoverage,
    ReasoningCoherence,
    DescriptionPrecision,
}

impl Dimension {
    pub const ALL: [Dimension; 6] = [
        Dimension::Accuracy,
        Dimension::Safety,
        Dimension::MedicalGroundedness,
        Dimension::ClinicalCoverage,
        Dimension::ReasoningCoherence,
        Dimension::DescriptionPrecision,
    ];

    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Dimension> {
        Self::ALL.get(index).copied()
    }

    /// Title-case name used in rendered evaluation texts.
    pub fn display_name(self) -> &'static str {
        match self {
            Dimension::Accuracy => "Accuracy",
            Dimension::Safety => "Safety",
            Dimension::MedicalGroundedness => "Medical Groundedness",
            Dimension::ClinicalCoverage => "Clinical Coverage",
            Dimension::ReasoningCoherence => "Reasoning Coherence",
            Dimension::DescriptionPrecision => "Description Precision",
        }
    }

    /// Column abbreviation used in report tables.
    pub fn short_name(self) -> &'static str {
        match self {
            Dimension::Accuracy => "Acc",
            Dimension::Safety => "Safe",
            Dimension::MedicalGroundedness => "MedG",
            Dimension::ClinicalCoverage => "Cover",
            Dimension::ReasoningCoherence => "Reason",
            Dimension::DescriptionPrecision => "Desc",
        }
    }

    /// Snake-case key used in files (`medical_groundedness`, ...).
    pub fn key(self) -> &'static str {
        match self {
            Dimension::Accuracy => "accuracy",
            Dimension::Safety => "safety",
            Dimension::MedicalGroundedness => "medical_groundedness",
            Dimension::ClinicalCoverage => "clinical_coverage",
            Dimension::ReasoningCoherence => "reasoning_coherence",
            Dimension::DescriptionPrecision => "description_precision",
        }
    }

    pub fn from_key(key: &str) -> Option<Dimension> {
        Self::ALL.into_iter().find(|d| d.key() == key)
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

/// A rubric score in `[0, 5]`, stored as thousandths of a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Score(u16);

impl Score {
    pub const ZERO: Score = Score(0);
    pub const MAX: Score = Score(MAX_MILLI as u16);

    pub fn from_milli(milli: u32) -> Result<Score, ScoreError> {
        if milli > MAX_MILLI {
            return Err(ScoreError::OutOfRange(milli as f64 / 1000.0));
        }
        Ok(Score(milli as u16))
    }

    pub fn from_points(points: u8) -> Result<Score, ScoreError> {
        Score::from_milli(points as u32 * MILLI_PER_POINT)
    }

    /// Converts a real value, rounding half-up to the nearest thousandth.
    pub fn from_f64(value: f64) -> Result<Score, ScoreError> {
        if !value.is_finite() || !(0.0..=MAX_POINTS as f64).contains(&value) {
            return Err(ScoreError::OutOfRange(value));
        }
        let milli = (value * 1000.0 + 0.5).floor() as u32;
        Score::from_milli(milli.min(MAX_MILLI))
    }

    pub fn milli(self) -> u32 {
        self.0 as u32
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn is_integer(self) -> bool {
        (self.0 as u32).is_multiple_of(MILLI_PER_POINT)
    }

    /// Nearest integer on the 0..=5 scale, ties rounding up.
    pub fn rounded(self) -> u8 {
        ((self.0 as u32 + MILLI_PER_POINT / 2) / MILLI_PER_POINT) as u8
    }
}

impl fmt::Display for Score {
    /// Shortest decimal form: `2`, `2.5`, `3.143`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 as u32 / MILLI_PER_POINT;
        let frac = self.0 as u32 % MILLI_PER_POINT;
        if frac == 0 {
            return write!(f, "{whole}");
        }
        let digits = format!("{frac:03}");
        write!(f, "{whole}.{}", digits.trim_end_matches('0'))
    }
}

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.to_f64())
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = f64::deserialize(deserializer)?;
        Score::from_f64(value).map_err(de::Error::custom)
    }
}

/// Rounds a rubric value to the nearest integer, ties half-up.
pub fn round_to_integer(score: f64) -> Result<u8, ScoreError> {
    if !score.is_finite() || !(0.0..=MAX_POINTS as f64).contains(&score) {
        return Err(ScoreError::OutOfRange(score));
    }
    Ok((score + 0.5).floor().min(MAX_POINTS as f64) as u8)
}

/// Scores for the six dimensions, any of which may be absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ScoreVector([Option<Score>; 6]);

impl ScoreVector {
    pub fn empty() -> Self {
        ScoreVector([None; 6])
    }

    pub fn complete(scores: [Score; 6]) -> Self {
        ScoreVector(scores.map(Some))
    }

    /// Complete vector from integer points. Panics on values above 5.
    pub fn from_points(points: [u8; 6]) -> Self {
        ScoreVector(points.map(|p| Some(Score::from_points(p).expect("points above 5"))))
    }

    pub fn from_f64(values: [f64; 6]) -> Result<Self, ScoreError> {
        let mut out = ScoreVector::empty();
        for (dim, v) in Dimension::ALL.into_iter().zip(values) {
            out.set(dim, Score::from_f64(v)?);
        }
        Ok(out)
    }

    pub fn get(&self, dim: Dimension) -> Option<Score> {
        self.0[dim.index()]
    }

    pub fn set(&mut self, dim: Dimension, score: Score) {
        self.0[dim.index()] = Some(score);
    }

    pub fn clear(&mut self, dim: Dimension) {
        self.0[dim.index()] = None;
    }

    pub fn with(mut self, dim: Dimension, score: Score) -> Self {
        self.set(dim, score);
        self
    }

    pub fn without(mut self, dim: Dimension) -> Self {
        self.clear(dim);
        self
    }

    pub fn valid_set(&self) -> Vec<Dimension> {
        self.iter().map(|(d, _)| d).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.0.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.valid_count() == Dimension::COUNT
    }

    /// Present entries in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (Dimension, Score)> + '_ {
        Dimension::ALL.into_iter().filter_map(|d| self.get(d).map(|s| (d, s)))
    }

    /// All six scores, or the first missing dimension.
    pub fn require_complete(&self) -> Result<[Score; 6], ScoreError> {
        let mut out = [Score::ZERO; 6];
        for dim in Dimension::ALL {
            out[dim.index()] = self.get(dim).ok_or(ScoreError::Incomplete(dim))?;
        }
        Ok(out)
    }

    /// Integer points for a complete integer-valued vector.
    pub fn integer_points(&self) -> Option<[u8; 6]> {
        let scores = self.require_complete().ok()?;
        if scores.iter().all(|s| s.is_integer()) {
            Some(scores.map(|s| s.rounded()))
        } else {
            None
        }
    }
}

impl Serialize for ScoreVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.valid_count()))?;
        for (dim, score) in self.iter() {
            map.serialize_entry(dim.key(), &score)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for ScoreVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct VectorVisitor;

        impl<'de> Visitor<'de> for VectorVisitor {
            type Value = ScoreVector;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map from dimension key to score")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<ScoreVector, A::Error> {
                let mut out = ScoreVector::empty();
                while let Some(key) = access.next_key::<String>()? {
                    let dim = Dimension::from_key(&key)
                        .ok_or_else(|| de::Error::custom(format!("unknown dimension {key:?}")))?;
                    let score: Option<Score> = access.next_value()?;
                    if let Some(score) = score {
                        out.set(dim, score);
                    }
                }
                Ok(out)
            }
        }

        deserializer.deserialize_map(VectorVisitor)
    }
}

/// Per-dimension values keyed in canonical order.
pub type DimensionMap<T> = BTreeMap<Dimension, T>;

/// Mean absolute error on one dimension between rounded predicted scores and
/// expert scores. Pairs where either side lacks the dimension are skipped.
pub fn mae(predicted: &[ScoreVector], expert: &[ScoreVector], dim: Dimension) -> Result<f64, ScoreError> {
    if predicted.len() != expert.len() {
        return Err(ScoreError::LengthMismatch {
            predicted: predicted.len(),
            expert: expert.len(),
        });
    }
    let mut total: u64 = 0;
    let mut pairs: u64 = 0;
    for (p, e) in predicted.iter().zip(expert) {
        if let (Some(p), Some(e)) = (p.get(dim), e.get(dim)) {
            total += (p.rounded() as i64 - e.rounded() as i64).unsigned_abs();
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(ScoreError::EmptyComparison(dim));
    }
    Ok(total as f64 / pairs as f64)
}

/// Unweighted mean over the six per-dimension values.
pub fn macro_mae(per_dim: &DimensionMap<f64>) -> Result<f64, ScoreError> {
    let mut sum = 0.0;
    for dim in Dimension::ALL {
        sum += per_dim.get(&dim).ok_or(ScoreError::Incomplete(dim))?;
    }
    Ok(sum / Dimension::COUNT as f64)
}

/// Mean of milli-point values rounded half-up to the nearest thousandth,
/// computed in integers.
fn mean_milli(sum: u64, n: u64) -> u32 {
    ((2 * sum + n) / (2 * n)) as u32
}

/// Per-model, per-dimension means of raw (unrounded) scores.
///
/// Every record must be complete; the result is kept at three decimals.
pub fn aggregate_model_means(
    groups: &BTreeMap<String, Vec<ScoreVector>>,
) -> Result<BTreeMap<String, DimensionMap<Score>>, ScoreError> {
    let mut out = BTreeMap::new();
    for (model, records) in groups {
        if records.is_empty() {
            return Err(ScoreError::EmptyGroup(model.clone()));
        }
        let mut sums = [0u64; 6];
        for record in records {
            let scores = record.require_complete()?;
            for (sum, score) in sums.iter_mut().zip(scores) {
                *sum += score.milli() as u64;
            }
        }
        let n = records.len() as u64;
        let means = Dimension::ALL
            .into_iter()
            .map(|d| (d, Score(mean_milli(sums[d.index()], n) as u16)))
            .collect();
        out.insert(model.clone(), means);
    }
    Ok(out)
}

/// Elementwise mean of two evaluators' per-model tables.
pub fn average_two_evaluators(
    bench: &BTreeMap<String, DimensionMap<Score>>,
    eval: &BTreeMap<String, DimensionMap<Score>>,
) -> Result<BTreeMap<String, DimensionMap<Score>>, ScoreError> {
    if bench.keys().ne(eval.keys()) {
        return Err(ScoreError::Schema("model keys differ".into()));
    }
    let mut out = BTreeMap::new();
    for (model, left) in bench {
        let right = &eval[model];
        if left.keys().ne(right.keys()) {
            return Err(ScoreError::Schema(format!("dimension keys differ for {model}")));
        }
        let row = left
            .iter()
            .map(|(dim, a)| {
                let b = right[dim];
                (*dim, Score(mean_milli(a.milli() as u64 + b.milli() as u64, 2) as u16))
            })
            .collect();
        out.insert(model.clone(), row);
    }
    Ok(out)
}

/// Report cell format: three decimals.
pub fn format_cell(value: f64) -> String {
    format!("{value:.3}")
}

/// Macro average format: two decimals.
pub fn format_macro(value: f64) -> String {
    format!("{value:.2}")
}
