//! Group-benefit vectors and the Generalized Entropy inequality index.
//!
//! A [`BenefitVector`] holds one value per demographic group for a single
//! fairness notion and a single prediction vector. The inequality of that
//! vector, as measured by [`generalized_entropy`] with exponent 2, is what a
//! follower of the notion perceives as discrimination.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of decision subjects shown in every test.
pub const ROSTER_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Female,
    Male,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Race {
    Caucasian,
    AfricanAmerican,
}

/// A hypothetical individual whose outcome the two algorithms predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionSubject {
    pub id: usize,
    pub gender: Gender,
    pub race: Race,
}

/// The fixed cast of decision subjects shared by every test of an experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DecisionSubject>", into = "Vec<DecisionSubject>")]
pub struct Roster {
    subjects: Vec<DecisionSubject>,
}

impl Roster {
    /// Builds a roster, checking that it has exactly [`ROSTER_SIZE`] subjects
    /// with ids `0..ROSTER_SIZE` in order and that every gender × race group
    /// is represented.
    pub fn new(subjects: Vec<DecisionSubject>) -> Result<Self> {
        if subjects.len() != ROSTER_SIZE {
            return Err(Error::InvalidRoster(format!(
                "expected {ROSTER_SIZE} subjects, got {}",
                subjects.len()
            )));
        }
        for (i, s) in subjects.iter().enumerate() {
            if s.id != i {
                return Err(Error::InvalidRoster(format!(
                    "subject ids must be contiguous from 0; position {i} has id {}",
                    s.id
                )));
            }
        }
        let roster = Roster { subjects };
        let groups = Grouping::new(GroupingDimension::Intersection, &roster);
        if let Some(empty) = groups.groups.iter().position(Vec::is_empty) {
            return Err(Error::InvalidRoster(format!(
                "intersectional group {} has no members",
                groups.labels[empty]
            )));
        }
        Ok(roster)
    }

    /// Three Caucasian women, three Caucasian men, two African-American
    /// women and two African-American men, in that order.
    pub fn default_roster() -> Self {
        use Gender::*;
        use Race::*;
        let layout = [
            (Female, Caucasian),
            (Female, Caucasian),
            (Female, Caucasian),
            (Male, Caucasian),
            (Male, Caucasian),
            (Male, Caucasian),
            (Female, AfricanAmerican),
            (Female, AfricanAmerican),
            (Male, AfricanAmerican),
            (Male, AfricanAmerican),
        ];
        let subjects = layout
            .iter()
            .enumerate()
            .map(|(id, &(gender, race))| DecisionSubject { id, gender, race })
            .collect();
        Roster::new(subjects).expect("default roster is valid")
    }

    pub fn subjects(&self) -> &[DecisionSubject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn grouping(&self, dimension: GroupingDimension) -> Grouping {
        Grouping::new(dimension, self)
    }
}

impl Default for Roster {
    fn default() -> Self {
        Roster::default_roster()
    }
}

impl TryFrom<Vec<DecisionSubject>> for Roster {
    type Error = Error;

    fn try_from(subjects: Vec<DecisionSubject>) -> Result<Self> {
        Roster::new(subjects)
    }
}

impl From<Roster> for Vec<DecisionSubject> {
    fn from(roster: Roster) -> Self {
        roster.subjects
    }
}

/// Binary labels, one per decision subject. `1` is the positive outcome
/// (e.g. "will reoffend").
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct LabelVector(Vec<u8>);

impl LabelVector {
    pub fn new(labels: Vec<u8>) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidTest(format!("label {bad} is not binary")));
        }
        Ok(LabelVector(labels))
    }

    pub fn from_bools(labels: impl IntoIterator<Item = bool>) -> Self {
        LabelVector(labels.into_iter().map(u8::from).collect())
    }

    pub fn zeros(len: usize) -> Self {
        LabelVector(vec![0; len])
    }

    pub fn labels(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i] == 1
    }

    pub fn count_positive(&self) -> usize {
        self.0.iter().filter(|&&l| l == 1).count()
    }

    /// Number of positions where the two vectors differ.
    pub fn hamming(&self, other: &LabelVector) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }

    /// Copy of `self` with the labels at `positions` flipped.
    pub fn flipped(&self, positions: &[usize]) -> LabelVector {
        let mut labels = self.0.clone();
        for &p in positions {
            labels[p] ^= 1;
        }
        LabelVector(labels)
    }

    pub fn complement(&self) -> LabelVector {
        LabelVector(self.0.iter().map(|l| l ^ 1).collect())
    }
}

impl TryFrom<Vec<u8>> for LabelVector {
    type Error = Error;

    fn try_from(labels: Vec<u8>) -> Result<Self> {
        LabelVector::new(labels)
    }
}

impl From<LabelVector> for Vec<u8> {
    fn from(v: LabelVector) -> Self {
        v.0
    }
}

impl fmt::Display for LabelVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.0 {
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

impl FromStr for LabelVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let labels = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::InvalidTest(format!("unexpected label character {other:?}"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Ok(LabelVector(labels))
    }
}

/// A group fairness notion, identified by the per-group benefit it equalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FairnessNotion {
    /// Demographic parity: share of the group predicted positive.
    DP,
    /// Error parity: share of the group misclassified.
    EP,
    /// False discovery rate parity: false positives over predicted positives.
    FDP,
    /// False negative rate parity: false negatives over actual positives.
    FNP,
    /// False positive rate parity: false positives over actual negatives.
    FPP,
    /// False omission rate parity: false negatives over predicted negatives.
    FOP,
}

impl FairnessNotion {
    pub const ALL: [FairnessNotion; 6] = [
        FairnessNotion::DP,
        FairnessNotion::EP,
        FairnessNotion::FDP,
        FairnessNotion::FNP,
        FairnessNotion::FPP,
        FairnessNotion::FOP,
    ];

    pub fn code(self) -> &'static str {
        match self {
            FairnessNotion::DP => "DP",
            FairnessNotion::EP => "EP",
            FairnessNotion::FDP => "FDP",
            FairnessNotion::FNP => "FNP",
            FairnessNotion::FPP => "FPP",
            FairnessNotion::FOP => "FOP",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            FairnessNotion::DP => "Demographic Parity",
            FairnessNotion::EP => "Error Parity",
            FairnessNotion::FDP => "False Discovery Rate Parity",
            FairnessNotion::FNP => "False Negative Rate Parity",
            FairnessNotion::FPP => "False Positive Rate Parity",
            FairnessNotion::FOP => "False Omission Rate Parity",
        }
    }

    /// Position in [`FairnessNotion::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    /// Benefit of one group from its confusion counts. A zero denominator
    /// yields zero benefit.
    pub fn benefit(self, c: &ConfusionCounts) -> f64 {
        let (num, den) = match self {
            FairnessNotion::DP => (c.tp + c.fp, c.total()),
            FairnessNotion::EP => (c.fp + c.fn_, c.total()),
            FairnessNotion::FDP => (c.fp, c.tp + c.fp),
            FairnessNotion::FNP => (c.fn_, c.tp + c.fn_),
            FairnessNotion::FPP => (c.fp, c.fp + c.tn),
            FairnessNotion::FOP => (c.fn_, c.fn_ + c.tn),
        };
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    }
}

impl fmt::Display for FairnessNotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for FairnessNotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DP" => Ok(FairnessNotion::DP),
            "EP" => Ok(FairnessNotion::EP),
            "FDP" | "FDR" => Ok(FairnessNotion::FDP),
            "FNP" | "FNR" => Ok(FairnessNotion::FNP),
            "FPP" | "FPR" => Ok(FairnessNotion::FPP),
            "FOP" | "FOR" => Ok(FairnessNotion::FOP),
            _ => Err(Error::Config(format!("unknown fairness notion {s:?}"))),
        }
    }
}

/// Demographic attribute along which subjects are partitioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingDimension {
    Gender,
    Race,
    #[default]
    Intersection,
}

impl FromStr for GroupingDimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gender" => Ok(GroupingDimension::Gender),
            "race" => Ok(GroupingDimension::Race),
            "intersection" => Ok(GroupingDimension::Intersection),
            _ => Err(Error::Config(format!("unknown grouping dimension {s:?}"))),
        }
    }
}

/// Partition of the roster's subject ids along one [`GroupingDimension`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grouping {
    pub dimension: GroupingDimension,
    pub groups: Vec<Vec<usize>>,
    pub labels: Vec<String>,
    population: usize,
}

impl Grouping {
    /// Groups are ordered female before male and Caucasian before
    /// African-American; for the intersection, race is the outer key.
    pub fn new(dimension: GroupingDimension, roster: &Roster) -> Self {
        let keys: Vec<(Gender, Race, &str)> = match dimension {
            GroupingDimension::Gender => vec![
                (Gender::Female, Race::Caucasian, "female"),
                (Gender::Male, Race::Caucasian, "male"),
            ],
            GroupingDimension::Race => vec![
                (Gender::Female, Race::Caucasian, "caucasian"),
                (Gender::Female, Race::AfricanAmerican, "african_american"),
            ],
            GroupingDimension::Intersection => vec![
                (Gender::Female, Race::Caucasian, "caucasian_female"),
                (Gender::Male, Race::Caucasian, "caucasian_male"),
                (Gender::Female, Race::AfricanAmerican, "african_american_female"),
                (Gender::Male, Race::AfricanAmerican, "african_american_male"),
            ],
        };
        let member = |s: &DecisionSubject, g: Gender, r: Race| match dimension {
            GroupingDimension::Gender => s.gender == g,
            GroupingDimension::Race => s.race == r,
            GroupingDimension::Intersection => s.gender == g && s.race == r,
        };
        let groups = keys
            .iter()
            .map(|&(g, r, _)| {
                roster
                    .subjects
                    .iter()
                    .filter(|s| member(s, g, r))
                    .map(|s| s.id)
                    .collect()
            })
            .collect();
        Grouping {
            dimension,
            groups,
            labels: keys.iter().map(|k| k.2.to_string()).collect(),
            population: roster.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Number of subjects in the partitioned roster.
    pub fn population(&self) -> usize {
        self.population
    }
}

/// Confusion-matrix counts for one group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn tally(truth: &LabelVector, predicted: &LabelVector, members: &[usize]) -> Self {
        let mut c = ConfusionCounts::default();
        for &i in members {
            match (truth.get(i), predicted.get(i)) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        c
    }
}

/// Per-group benefit values for one notion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenefitVector {
    pub notion: FairnessNotion,
    pub dimension: GroupingDimension,
    pub values: Vec<f64>,
}

impl BenefitVector {
    pub fn generalized_entropy(&self) -> Result<f64> {
        generalized_entropy(&self.values)
    }
}

fn check_len(expected: usize, v: &LabelVector) -> Result<()> {
    if v.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: v.len(),
        });
    }
    Ok(())
}

/// Per-group benefit of `predicted` against `truth` under `notion`.
pub fn compute_benefit(
    notion: FairnessNotion,
    truth: &LabelVector,
    predicted: &LabelVector,
    grouping: &Grouping,
) -> Result<BenefitVector> {
    check_len(grouping.population(), truth)?;
    check_len(grouping.population(), predicted)?;
    let values = grouping
        .groups
        .iter()
        .map(|members| notion.benefit(&ConfusionCounts::tally(truth, predicted, members)))
        .collect();
    Ok(BenefitVector {
        notion,
        dimension: grouping.dimension,
        values,
    })
}

/// Generalized Entropy index with exponent 2:
/// `1/(2N) * Σ_G ((b_G / μ)² − 1)` over the `N` group benefits.
///
/// Evaluated through the equivalent deviation form `Σ (b_G − μ)² / (2N μ²)`,
/// which is non-negative term by term. Returns exactly 0 when all entries are
/// equal, including the all-zero vector.
pub fn generalized_entropy(values: &[f64]) -> Result<f64> {
    let first = *values.first().ok_or(Error::EmptyBenefitVector)?;
    if values.iter().all(|&b| b == first) {
        return Ok(0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Ok(0.0);
    }
    let spread: f64 = values.iter().map(|b| (b - mean) * (b - mean)).sum();
    Ok(spread / (2.0 * n * mean * mean))
}

/// Fraction of positions where `predicted` matches `truth`.
pub fn overall_accuracy(truth: &LabelVector, predicted: &LabelVector) -> Result<f64> {
    check_len(truth.len(), predicted)?;
    if truth.is_empty() {
        return Err(Error::LengthMismatch {
            expected: 1,
            actual: 0,
        });
    }
    let hits = truth.len() - truth.hamming(predicted);
    Ok(hits as f64 / truth.len() as f64)
}
