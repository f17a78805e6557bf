//! Enumeration of admissible tests.
//!
//! A test pairs two prediction vectors of equal overall accuracy against one
//! shared truth vector. The space of tests is a deterministic function of a
//! [`TestSpaceConfig`]; its size is whatever the config produces.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    compute_benefit, overall_accuracy, BenefitVector, FairnessNotion, Grouping, LabelVector, Roster,
};

/// Dense index of a test within its [`TestSpace`].
pub type TestId = usize;

/// One screen of the experiment: two equally accurate algorithms and the
/// ground truth they are judged against. `pred_a1` always precedes `pred_a2`
/// lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Test {
    pub id: TestId,
    pub truth: LabelVector,
    pub pred_a1: LabelVector,
    pub pred_a2: LabelVector,
}

impl Test {
    pub fn new(id: TestId, truth: LabelVector, pred_a1: LabelVector, pred_a2: LabelVector) -> Result<Self> {
        let test = Test {
            id,
            truth,
            pred_a1,
            pred_a2,
        };
        test.validate()?;
        Ok(test)
    }

    pub fn validate(&self) -> Result<()> {
        let acc1 = overall_accuracy(&self.truth, &self.pred_a1)?;
        let acc2 = overall_accuracy(&self.truth, &self.pred_a2)?;
        if acc1 != acc2 {
            return Err(Error::InvalidTest(format!(
                "test {}: accuracies differ ({acc1} vs {acc2})",
                self.id
            )));
        }
        if self.pred_a1 >= self.pred_a2 {
            return Err(Error::InvalidTest(format!(
                "test {}: algorithms are identical or not in canonical order",
                self.id
            )));
        }
        Ok(())
    }

    /// Number of subjects each algorithm misclassifies.
    pub fn error_count(&self) -> usize {
        self.truth.hamming(&self.pred_a1)
    }

    /// The same test with the two algorithms exchanged. The result is not in
    /// canonical orientation and fails [`Test::validate`].
    pub fn swapped(&self) -> Test {
        Test {
            id: self.id,
            truth: self.truth.clone(),
            pred_a1: self.pred_a2.clone(),
            pred_a2: self.pred_a1.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthPolicy {
    Fixed(LabelVector),
    EnumerateWithin { min_positives: usize, max_positives: usize },
}

/// Inclusive range of misclassified subjects per algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCountRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSpaceConfig {
    pub roster: Roster,
    pub truth_policy: TruthPolicy,
    pub error_count_range: ErrorCountRange,
    #[serde(default)]
    pub max_tests: Option<usize>,
}

/// Five positives: one Caucasian woman, two Caucasian men, one
/// African-American woman and one African-American man, so every
/// intersectional group has a positive and a negative subject under
/// [`Roster::default_roster`].
pub fn default_truth() -> LabelVector {
    "1001101010".parse().expect("valid label string")
}

impl Default for TestSpaceConfig {
    fn default() -> Self {
        TestSpaceConfig {
            roster: Roster::default_roster(),
            truth_policy: TruthPolicy::Fixed(default_truth()),
            error_count_range: ErrorCountRange { min: 1, max: 3 },
            max_tests: None,
        }
    }
}

impl TestSpaceConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.roster.len();
        let ErrorCountRange { min, max } = self.error_count_range;
        if min > max || max > n {
            return Err(Error::Config(format!(
                "error count range [{min}, {max}] must lie within [0, {n}]"
            )));
        }
        match &self.truth_policy {
            TruthPolicy::Fixed(truth) if truth.len() != n => Err(Error::LengthMismatch {
                expected: n,
                actual: truth.len(),
            }),
            TruthPolicy::EnumerateWithin {
                min_positives,
                max_positives,
            } if min_positives > max_positives || *max_positives > n => Err(Error::Config(format!(
                "positive count range [{min_positives}, {max_positives}] must lie within [0, {n}]"
            ))),
            _ => Ok(()),
        }
    }
}

/// The immutable universe of tests a session draws from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSpace {
    pub roster: Roster,
    pub tests: Vec<Test>,
    /// `None` for spaces loaded from an export.
    pub config: Option<TestSpaceConfig>,
}

/// All label vectors of length `n` whose popcount lies in `[lo, hi]`, as
/// bit masks, sorted so the resulting label vectors are lexicographic.
fn masks_with_popcount(n: usize, lo: usize, hi: usize) -> Vec<u32> {
    let mut masks: Vec<u32> = (0u32..1 << n)
        .filter(|m| (lo..=hi).contains(&(m.count_ones() as usize)))
        .collect();
    // label i is bit (n - 1 - i), so numeric order is lexicographic order
    masks.sort_unstable();
    masks
}

fn mask_to_labels(mask: u32, n: usize) -> LabelVector {
    LabelVector::from_bools((0..n).map(|i| mask >> (n - 1 - i) & 1 == 1))
}

/// Enumerates every admissible test in canonical orientation, ordered by
/// truth, then first algorithm, then second algorithm.
pub fn enumerate_tests(config: &TestSpaceConfig) -> Result<TestSpace> {
    config.validate()?;
    let n = config.roster.len();
    let truths: Vec<LabelVector> = match &config.truth_policy {
        TruthPolicy::Fixed(t) => vec![t.clone()],
        TruthPolicy::EnumerateWithin {
            min_positives,
            max_positives,
        } => masks_with_popcount(n, *min_positives, *max_positives)
            .into_iter()
            .map(|m| mask_to_labels(m, n))
            .collect(),
    };
    let ErrorCountRange { min, max } = config.error_count_range;
    let flip_masks = masks_with_popcount(n, min, max);
    let cap = config.max_tests.unwrap_or(usize::MAX);

    let mut tests = Vec::new();
    'outer: for truth in &truths {
        let mut candidates: Vec<(LabelVector, u32)> = flip_masks
            .iter()
            .map(|&m| {
                let pred = mask_to_labels(m, n);
                let pred = LabelVector::from_bools((0..n).map(|i| truth.get(i) ^ pred.get(i)));
                (pred, m.count_ones())
            })
            .collect();
        candidates.sort();
        for (i, (p1, k1)) in candidates.iter().enumerate() {
            for (p2, k2) in &candidates[i + 1..] {
                if k1 != k2 {
                    continue;
                }
                if tests.len() == cap {
                    break 'outer;
                }
                tests.push(Test {
                    id: tests.len(),
                    truth: truth.clone(),
                    pred_a1: p1.clone(),
                    pred_a2: p2.clone(),
                });
            }
        }
    }
    if tests.is_empty() {
        return Err(Error::Config(format!(
            "configuration admits no tests: error counts [{min}, {max}] over {} truth vector(s) \
             yield no pair of distinct equally accurate predictions",
            truths.len()
        )));
    }
    Ok(TestSpace {
        roster: config.roster.clone(),
        tests,
        config: Some(config.clone()),
    })
}

impl TestSpace {
    pub fn len(&self) -> usize {
        self.tests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tests.is_empty()
    }

    pub fn get(&self, id: TestId) -> Result<&Test> {
        self.tests.get(id).ok_or(Error::UnknownTest(id))
    }

    /// Keeps only the tests at `ids` (in the given order) and renumbers them
    /// densely from 0.
    pub fn subset(&self, ids: &[TestId]) -> Result<TestSpace> {
        let tests = ids
            .iter()
            .enumerate()
            .map(|(new_id, &id)| {
                let mut t = self.get(id)?.clone();
                t.id = new_id;
                Ok(t)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TestSpace {
            roster: self.roster.clone(),
            tests,
            config: None,
        })
    }

    /// Writes one line per test: `id truth p1 p2`, labels as bit strings.
    pub fn export<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# fairprobe test space v1: {} tests", self.tests.len())?;
        for t in &self.tests {
            writeln!(out, "{} {} {} {}", t.id, t.truth, t.pred_a1, t.pred_a2)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the format written by [`TestSpace::export`]. Blank lines and
    /// lines starting with `#` are skipped. Ids must be dense and every test
    /// must satisfy the test invariants.
    pub fn import<R: BufRead>(input: R, roster: Roster) -> Result<TestSpace> {
        let mut tests = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: lineno + 1,
                message,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [id, truth, p1, p2] = fields[..] else {
                return Err(parse_err(format!("expected 4 fields, got {}", fields.len())));
            };
            let id: usize = id.parse().map_err(|e| parse_err(format!("bad id: {e}")))?;
            if id != tests.len() {
                return Err(parse_err(format!("expected id {}, got {id}", tests.len())));
            }
            let parse = |s: &str| -> Result<LabelVector> {
                let v: LabelVector = s.parse().map_err(|e: Error| parse_err(e.to_string()))?;
                if v.len() != roster.len() {
                    return Err(parse_err(format!("expected {} labels, got {}", roster.len(), v.len())));
                }
                Ok(v)
            };
            let test = Test::new(id, parse(truth)?, parse(p1)?, parse(p2)?)
                .map_err(|e| parse_err(e.to_string()))?;
            tests.push(test);
        }
        Ok(TestSpace {
            roster,
            tests,
            config: None,
        })
    }
}

/// Generalized Entropy of both algorithms' benefit vectors under one notion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NotionEntropies {
    pub notion: FairnessNotion,
    pub a1: f64,
    pub a2: f64,
}

/// Per-notion inequality of each algorithm in `test`.
pub fn discriminativeness(
    test: &Test,
    notions: &[FairnessNotion],
    grouping: &Grouping,
) -> Result<Vec<NotionEntropies>> {
    notions
        .iter()
        .map(|&notion| {
            let a1 = compute_benefit(notion, &test.truth, &test.pred_a1, grouping)?.generalized_entropy()?;
            let a2 = compute_benefit(notion, &test.truth, &test.pred_a2, grouping)?.generalized_entropy()?;
            Ok(NotionEntropies { notion, a1, a2 })
        })
        .collect()
}

/// Benefit vectors and their inequality for both algorithms under one notion,
/// as shown to participants in the structured explanation form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disparity {
    pub notion: FairnessNotion,
    pub a1: BenefitVector,
    pub a2: BenefitVector,
    pub entropy_a1: f64,
    pub entropy_a2: f64,
}

pub fn disparities(test: &Test, notions: &[FairnessNotion], grouping: &Grouping) -> Result<Vec<Disparity>> {
    notions
        .iter()
        .map(|&notion| {
            let a1 = compute_benefit(notion, &test.truth, &test.pred_a1, grouping)?;
            let a2 = compute_benefit(notion, &test.truth, &test.pred_a2, grouping)?;
            Ok(Disparity {
                notion,
                entropy_a1: a1.generalized_entropy()?,
                entropy_a2: a2.generalized_entropy()?,
                a1,
                a2,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::GroupingDimension;

    fn config(min: usize, max: usize) -> TestSpaceConfig {
        TestSpaceConfig {
            error_count_range: ErrorCountRange { min, max },
            ..TestSpaceConfig::default()
        }
    }

    #[test]
    fn single_error_pairs() {
        let space = enumerate_tests(&config(1, 1)).unwrap();
        assert_eq!(space.len(), 45);
    }

    #[test]
    fn no_errors_means_no_tests() {
        let err = enumerate_tests(&config(0, 0)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn default_space_size() {
        let space = enumerate_tests(&TestSpaceConfig::default()).unwrap();
        assert_eq!(space.len(), 45 + 990 + 7140);
        assert_eq!(space.len(), 8175);
    }

    #[test]
    fn ordering_is_lexicographic() {
        let space = enumerate_tests(&config(1, 2)).unwrap();
        for w in space.tests.windows(2) {
            let a = (&w[0].truth, &w[0].pred_a1, &w[0].pred_a2);
            let b = (&w[1].truth, &w[1].pred_a1, &w[1].pred_a2);
            assert!(a < b);
        }
        for (i, t) in space.tests.iter().enumerate() {
            assert_eq!(t.id, i);
            t.validate().unwrap();
        }
    }

    #[test]
    fn cap_truncates() {
        let cfg = TestSpaceConfig {
            max_tests: Some(17),
            ..TestSpaceConfig::default()
        };
        assert_eq!(enumerate_tests(&cfg).unwrap().len(), 17);
    }

    #[test]
    fn enumerated_truths() {
        let cfg = TestSpaceConfig {
            truth_policy: TruthPolicy::EnumerateWithin {
                min_positives: 5,
                max_positives: 5,
            },
            error_count_range: ErrorCountRange { min: 1, max: 1 },
            ..TestSpaceConfig::default()
        };
        // C(10,5) truth vectors, 45 pairs each
        assert_eq!(enumerate_tests(&cfg).unwrap().len(), 252 * 45);
    }

    #[test]
    fn invalid_configs() {
        assert!(enumerate_tests(&config(3, 1)).is_err());
        assert!(enumerate_tests(&config(1, 11)).is_err());
        let cfg = TestSpaceConfig {
            truth_policy: TruthPolicy::Fixed("101".parse().unwrap()),
            ..TestSpaceConfig::default()
        };
        assert!(matches!(enumerate_tests(&cfg), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn export_import_roundtrip() {
        let space = enumerate_tests(&config(1, 2)).unwrap();
        let mut buf = Vec::new();
        space.export(&mut buf).unwrap();
        let back = TestSpace::import(buf.as_slice(), space.roster.clone()).unwrap();
        assert_eq!(back.tests, space.tests);
    }

    #[test]
    fn import_rejects_unequal_accuracy() {
        let text = "0 1001101010 0001101010 1001101011\n1 1001101010 0001101010 0001101011\n";
        let err = TestSpace::import(text.as_bytes(), Roster::default_roster()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn entropy_prefers_concentrated_errors_under_ep() {
        let roster = Roster::default_roster();
        let grouping = roster.grouping(GroupingDimension::Intersection);
        let truth = default_truth();
        // A1: two errors, both in the Caucasian-female group.
        // A2: two errors, one Caucasian man and one African-American man.
        let a1 = truth.flipped(&[0, 1]);
        let a2 = truth.flipped(&[3, 8]);
        let (p1, p2) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
        let concentrated_first = p1 == truth.flipped(&[0, 1]);
        let test = Test::new(0, truth, p1, p2).unwrap();
        let ent = discriminativeness(&test, &[FairnessNotion::EP], &grouping).unwrap()[0];
        // Oracle: EP benefits (2/3, 0, 0, 0) -> 1.5 ; (0, 1/3, 0, 1/2) -> mu = 5/24,
        // Σ(b-μ)² = 2(5/24)² + (1/3-5/24)² + (1/2-5/24)², / (8 μ²)
        let mu: f64 = 5.0 / 24.0;
        let spread = 2.0 * mu * mu + (1.0 / 3.0 - mu).powi(2) + (0.5 - mu).powi(2);
        let spread_even = spread / (8.0 * mu * mu);
        let (concentrated, even) = if concentrated_first { (ent.a1, ent.a2) } else { (ent.a2, ent.a1) };
        assert!((concentrated - 1.5).abs() < 1e-12);
        assert!((even - spread_even).abs() < 1e-12);
        assert!(concentrated > even);
    }

    #[test]
    fn identical_confusion_counts_give_equal_entropies() {
        let roster = Roster::default_roster();
        let grouping = roster.grouping(GroupingDimension::Intersection);
        let truth = default_truth();
        // swap which Caucasian-female negative is misclassified
        let test = Test::new(0, truth.clone(), truth.flipped(&[1]), truth.flipped(&[2])).unwrap_or_else(|_| {
            Test::new(0, truth.clone(), truth.flipped(&[2]), truth.flipped(&[1])).unwrap()
        });
        for e in discriminativeness(&test, &FairnessNotion::ALL, &grouping).unwrap() {
            assert_eq!(e.a1, e.a2, "{}", e.notion);
            assert!(e.a1 >= 0.0);
        }
    }
}
