//! Self-checks runnable from the command line: finite-difference gradient
//! checks, parser fixtures and round-trips, and reward/baseline invariants.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scores::{Dimension, Score, ScoreVector};
use crate::soreb::{reward, rl_loss_row, text_loss_row, BaselineState, LogitRow, CLASSES, MAX_SQUARED_ERROR};
use crate::textproto::{parse_scores, render_evaluation, ParseStatus};

pub const FD_EPSILON: f64 = 1e-5;
pub const GRADCHECK_DRAWS: usize = 100;
pub const GRADCHECK_MAX_REL: f64 = 1e-4;

/// Evaluation texts with known score tables.
pub const SCORED_FIXTURES: &[(&str, &str, [u8; 6])] = &[
    (
        "case1_dermeval",
        include_str!("../fixtures/case1_dermeval.txt"),
        [2, 3, 2, 2, 2, 2],
    ),
    (
        "case1_dermbench",
        include_str!("../fixtures/case1_dermbench.txt"),
        [2, 5, 2, 2, 2, 2],
    ),
    (
        "case2_dermeval",
        include_str!("../fixtures/case2_dermeval.txt"),
        [1, 2, 1, 3, 1, 2],
    ),
    (
        "case2_dermbench",
        include_str!("../fixtures/case2_dermbench.txt"),
        [1, 3, 1, 2, 2, 2],
    ),
];

/// Physician score table of the second fixture case.
pub const CASE2_PHYSICIAN: [u8; 6] = [1, 2, 1, 2, 1, 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Gradcheck,
    Parser,
    Invariants,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Gradcheck, Suite::Parser, Suite::Invariants];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Gradcheck => "gradcheck",
            Suite::Parser => "parser",
            Suite::Invariants => "invariants",
        }
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.as_str() == s)
            .ok_or_else(|| format!("unknown suite {s:?} (expected gradcheck, parser or invariants)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Vec<Check> {
    match suite {
        Suite::Gradcheck => gradcheck_suite(seed),
        Suite::Parser => parser_suite(seed),
        Suite::Invariants => invariants_suite(seed),
    }
}

/// Central differences of `f` at every logit.
pub fn finite_difference(f: impl Fn(&LogitRow) -> f64, at: &LogitRow, eps: f64) -> LogitRow {
    let mut out = [[0.0; CLASSES]; 6];
    for d in 0..6 {
        for c in 0..CLASSES {
            let mut plus = *at;
            let mut minus = *at;
            plus[d][c] += eps;
            minus[d][c] -= eps;
            out[d][c] = (f(&plus) - f(&minus)) / (2.0 * eps);
        }
    }
    out
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradStats {
    pub max_rel: f64,
    pub max_abs: f64,
}

impl GradStats {
    fn absorb(&mut self, analytic: &LogitRow, numeric: &LogitRow) {
        for d in 0..6 {
            for c in 0..CLASSES {
                self.max_rel = self.max_rel.max(relative_error(analytic[d][c], numeric[d][c]));
                self.max_abs = self.max_abs.max((analytic[d][c] - numeric[d][c]).abs());
            }
        }
    }
}

fn random_row(rng: &mut ChaCha8Rng) -> LogitRow {
    std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-3.0..3.0)))
}

fn random_points(rng: &mut ChaCha8Rng) -> [u8; 6] {
    std::array::from_fn(|_| rng.random_range(0..=5))
}

pub fn gradcheck_text(draws: usize, seed: u64) -> GradStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = GradStats::default();
    for _ in 0..draws {
        let row = random_row(&mut rng);
        let target = random_points(&mut rng);
        let (_, grad) = text_loss_row(&row, &target);
        let numeric = finite_difference(|r| text_loss_row(r, &target).0, &row, FD_EPSILON);
        stats.absorb(&grad, &numeric);
    }
    stats
}

/// The surrogate is differentiated with the sample and advantage held fixed.
pub fn gradcheck_rl(draws: usize, seed: u64) -> GradStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = GradStats::default();
    for _ in 0..draws {
        let row = random_row(&mut rng);
        let sampled = random_points(&mut rng);
        let adv = rng.random_range(-5.0..5.0);
        let generated = if rng.random_bool(0.5) {
            6
        } else {
            rng.random_range(6..40)
        };
        let (_, grad) = rl_loss_row(&row, &sampled, adv, generated);
        let numeric = finite_difference(|r| rl_loss_row(r, &sampled, adv, generated).0, &row, FD_EPSILON);
        stats.absorb(&grad, &numeric);
    }
    stats
}

fn gradcheck_suite(seed: u64) -> Vec<Check> {
    let text = gradcheck_text(GRADCHECK_DRAWS, seed);
    let rl = gradcheck_rl(GRADCHECK_DRAWS, seed.wrapping_add(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let row = random_row(&mut rng);
    let sampled = random_points(&mut rng);
    let (_, g) = rl_loss_row(&row, &sampled, 1.5, 6);
    // Each slot gradient is a scaled (softmax - onehot): non-zero at the
    // sampled class and summing to zero.
    let support_ok = (0..6).all(|d| g[d][sampled[d] as usize] != 0.0 && g[d].iter().sum::<f64>().abs() < 1e-12);
    vec![
        Check::new(
            "text_loss_gradient",
            text.max_rel < GRADCHECK_MAX_REL && text.max_abs < 1e-6,
            format!(
                "max relative error {:.3e}, max absolute error {:.3e}",
                text.max_rel, text.max_abs
            ),
        ),
        Check::new(
            "rl_loss_gradient",
            rl.max_rel < GRADCHECK_MAX_REL,
            format!(
                "max relative error {:.3e}, max absolute error {:.3e}",
                rl.max_rel, rl.max_abs
            ),
        ),
        Check::new(
            "rl_gradient_support",
            support_ok,
            "gradient confined to the sampled row's slot logits",
        ),
    ]
}

const WORDS: &[&str] = &[
    "lesion",
    "papules",
    "scale",
    "linear",
    "border",
    "2",
    "mm",
    "pigment",
    "benign",
    "biopsy",
    "counsel",
    "follow-up",
    "plaque",
    "erythema",
    "(cluster)",
    "4-6",
    "weeks",
    "dermoscopy",
];

fn random_justification(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(0..12);
    (0..n)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

/// Renders random complete score vectors (integer and half points) and
/// counts exact recoveries.
pub fn round_trip_count(n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ok = 0;
    for _ in 0..n {
        let scores = ScoreVector::complete(std::array::from_fn(|_| {
            Score::from_milli(500 * rng.random_range(0..=10)).expect("half points in range")
        }));
        let just: [String; 6] = std::array::from_fn(|_| random_justification(&mut rng));
        let text = render_evaluation(&scores, &just).expect("complete").to_string();
        if parse_scores(&text).scores == scores {
            ok += 1;
        }
    }
    ok
}

fn parser_suite(seed: u64) -> Vec<Check> {
    let mut checks = Vec::new();
    let n = 1000;
    let ok = round_trip_count(n, seed);
    checks.push(Check::new(
        "render_parse_round_trip",
        ok == n,
        format!("{ok}/{n} exact"),
    ));

    for (name, text, expected) in SCORED_FIXTURES {
        let got = parse_scores(text).scores;
        let want = ScoreVector::from_points(*expected);
        checks.push(Check::new(name, got == want, format!("parsed {}", describe(&got))));
    }
    let physician = ScoreVector::from_points(CASE2_PHYSICIAN);
    let rendered = render_evaluation(&physician, &[""; 6]).expect("complete").to_string();
    let got = parse_scores(&rendered).scores;
    checks.push(Check::new(
        "case2_physician_render",
        got == physician,
        format!("parsed {}", describe(&got)),
    ));

    let out_of_range = "Accuracy: 3/5\nSafety: 7/5\nMedical Groundedness: 2/5\nClinical Coverage: 4/5\nReasoning Coherence: 3/5\nDescription Precision: 1/5\n";
    let r = parse_scores(out_of_range);
    checks.push(Check::new(
        "out_of_range_excluded",
        r.status(Dimension::Safety) == ParseStatus::OutOfRange
            && r.scores.get(Dimension::Safety).is_none()
            && r.scores.valid_count() == 5,
        format!("parsed {}", describe(&r.scores)),
    ));
    let missing = "Accuracy: 3/5\nSafety: 4/5\nClinical Coverage: 4/5\nDescription Precision: 1/5\n";
    let r = parse_scores(missing);
    checks.push(Check::new(
        "missing_dimensions_excluded",
        r.status(Dimension::MedicalGroundedness) == ParseStatus::Missing
            && r.status(Dimension::ReasoningCoherence) == ParseStatus::Missing
            && r.scores.valid_count() == 4,
        format!("parsed {}", describe(&r.scores)),
    ));
    checks
}

fn describe(v: &ScoreVector) -> String {
    let parts: Vec<String> = Dimension::ALL
        .iter()
        .map(|d| v.get(*d).map_or("-".to_string(), |s| s.to_string()))
        .collect();
    format!("({})", parts.join(","))
}

/// Stationary AR(1) rewards around `mean`, clipped to the reward range.
/// Successive rewards are correlated, as they are when a slowly changing
/// policy is sampled.
pub fn ar1_reward_stream(n: usize, mean: f64, sd: f64, phi: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let innovation = sd * (1.0 - phi * phi).sqrt();
    let z: f64 = StandardNormal.sample(&mut rng);
    let mut dev = sd * z;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push((mean + dev).clamp(-MAX_SQUARED_ERROR, 0.0));
        let e: f64 = StandardNormal.sample(&mut rng);
        dev = phi * dev + innovation * e;
    }
    out
}

pub fn variance(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64
}

/// (reward variance, advantage variance) of a baseline run over `stream`.
pub fn baseline_variances(stream: &[f64], beta: f64) -> (f64, f64) {
    let mut b = BaselineState::new(beta).expect("beta in range");
    let adv: Vec<f64> = stream.iter().map(|&r| b.update(r).expect("finite")).collect();
    (variance(stream), variance(&adv))
}

/// Pinned stream used for the variance-reduction check.
pub const VARIANCE_STREAM: (usize, f64, f64, f64, u64) = (10_000, -4.0, 1.5, 0.95, 7);

fn random_parsed(rng: &mut ChaCha8Rng) -> ScoreVector {
    let mut v = ScoreVector::empty();
    for d in Dimension::ALL {
        if rng.random_bool(0.8) {
            v.set(d, Score::from_milli(500 * rng.random_range(0..=10)).expect("in range"));
        }
    }
    v
}

/// Counts violations over `cases` random reward and baseline draws.
pub fn reward_baseline_violations(cases: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = Vec::new();
    let physician_of = |rng: &mut ChaCha8Rng| ScoreVector::from_points(random_points(rng));
    for i in 0..cases {
        let physician = physician_of(&mut rng);
        let parsed = random_parsed(&mut rng);
        let r = reward(&parsed, &physician).expect("complete physician");
        match r {
            None if parsed.valid_count() > 0 => bad.push(format!("case {i}: no reward for parsed scores")),
            None => {}
            Some(r) => {
                if !(-MAX_SQUARED_ERROR..=0.0).contains(&r) {
                    bad.push(format!("case {i}: reward {r} out of range"));
                }
                let exact = parsed.iter().all(|(d, s)| physician.get(d) == Some(s));
                if (r == 0.0) != exact {
                    bad.push(format!("case {i}: zero reward {r} vs exact match {exact}"));
                }
                // Move one valid dimension a further half point away.
                if let Some((d, s)) = parsed.iter().next() {
                    let t = physician.get(d).expect("complete").milli() as i64;
                    let m = s.milli() as i64;
                    let worse = if m >= t { m + 500 } else { m - 500 };
                    if (0..=5000).contains(&worse) {
                        let w = parsed.with(d, Score::from_milli(worse as u32).expect("in range"));
                        let rw = reward(&w, &physician).expect("complete").expect("valid");
                        if rw >= r {
                            bad.push(format!("case {i}: worsening {d:?} did not lower the reward"));
                        }
                    }
                }
            }
        }
    }

    for stream in 0..(cases / 100).max(1) {
        let beta = rng.random_range(0.05..0.995);
        let mut b = BaselineState::new(beta).expect("beta in range");
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for step in 0..100 {
            let r = -rng.random_range(0.0..=MAX_SQUARED_ERROR);
            lo = lo.min(r);
            hi = hi.max(r);
            let pre = b.b;
            let first = !b.initialized;
            let adv = b.update(r).expect("finite");
            let want = if first { 0.0 } else { beta * (r - pre) };
            if (adv - want).abs() > 1e-12 {
                bad.push(format!("stream {stream} step {step}: advantage {adv} != {want}"));
            }
            if b.b < lo || b.b > hi {
                bad.push(format!(
                    "stream {stream} step {step}: baseline {} outside [{lo}, {hi}]",
                    b.b
                ));
            }
        }
    }
    bad
}

fn invariants_suite(seed: u64) -> Vec<Check> {
    let bad = reward_baseline_violations(10_000, seed);
    let (n, mean, sd, phi, s) = VARIANCE_STREAM;
    let (var_r, var_a) = baseline_variances(&ar1_reward_stream(n, mean, sd, phi, s), 0.9);
    let reduction = 1.0 - var_a / var_r;
    vec![
        Check::new(
            "reward_and_baseline_algebra",
            bad.is_empty(),
            if bad.is_empty() {
                "10000 cases, no violations".to_string()
            } else {
                format!("{} violations, first: {}", bad.len(), bad[0])
            },
        ),
        Check::new(
            "variance_reduction",
            reduction >= 0.2,
            format!(
                "reward variance {var_r:.4}, advantage variance {var_a:.4}, reduction {:.1}%",
                reduction * 100.0
            ),
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for suite in Suite::ALL {
            for check in run_suite(suite, 0) {
                assert!(check.passed, "{check}");
            }
        }
    }

    #[test]
    fn suite_names_round_trip() {
        for suite in Suite::ALL {
            assert_eq!(suite.as_str().parse::<Suite>().unwrap(), suite);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn finite_difference_of_a_quadratic() {
        let at: LogitRow = std::array::from_fn(|d| std::array::from_fn(|c| (d + c) as f64));
        let g = finite_difference(|r| r.iter().flatten().map(|v| v * v).sum(), &at, 1e-4);
        for d in 0..6 {
            for c in 0..CLASSES {
                assert!((g[d][c] - 2.0 * at[d][c]).abs() < 1e-6);
            }
        }
    }
}
