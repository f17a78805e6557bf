//! Study instruments and the records they produce.
//!
//! Scenarios frame what the predictions mean to participants. Adaptive
//! sessions run under the crime and cancer scenarios; the accuracy/equality
//! survey pairs each high-stakes scenario with a low-stakes one.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{classify, Classification, HypothesisSet, Posterior, SessionTrace};
use crate::error::{Error, Result};
use crate::metrics::{FairnessNotion, GroupingDimension};
use crate::response::Choice;
use crate::test_space::TestId;

/// Version tag carried by every exported record and API payload.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    CrimeRisk,
    CancerRisk,
    FluSeverity,
    PrisonSentencing,
    BailAmount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stakes {
    High,
    Low,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::CrimeRisk,
        Scenario::CancerRisk,
        Scenario::FluSeverity,
        Scenario::PrisonSentencing,
        Scenario::BailAmount,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Scenario::CrimeRisk => "crime_risk",
            Scenario::CancerRisk => "cancer_risk",
            Scenario::FluSeverity => "flu_severity",
            Scenario::PrisonSentencing => "prison_sentencing",
            Scenario::BailAmount => "bail_amount",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Scenario::CrimeRisk => "Criminal risk prediction",
            Scenario::CancerRisk => "Skin cancer risk prediction",
            Scenario::FluSeverity => "Flu symptom severity prediction",
            Scenario::PrisonSentencing => "Sentencing time in prison",
            Scenario::BailAmount => "Setting the bail amount",
        }
    }

    pub fn stakes(self) -> Stakes {
        match self {
            Scenario::FluSeverity | Scenario::BailAmount => Stakes::Low,
            _ => Stakes::High,
        }
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, Scenario::CrimeRisk | Scenario::CancerRisk)
    }

    pub fn is_survey(self) -> bool {
        !matches!(self, Scenario::CrimeRisk)
    }

    /// The survey scenario of opposite stakes in the same domain.
    pub fn survey_counterpart(self) -> Option<Scenario> {
        match self {
            Scenario::CancerRisk => Some(Scenario::FluSeverity),
            Scenario::FluSeverity => Some(Scenario::CancerRisk),
            Scenario::PrisonSentencing => Some(Scenario::BailAmount),
            Scenario::BailAmount => Some(Scenario::PrisonSentencing),
            Scenario::CrimeRisk => None,
        }
    }

    /// Framing shown before adaptive tests.
    pub fn framing_text(self) -> Option<&'static str> {
        match self {
            Scenario::CrimeRisk => Some(include_str!("scenarios/crime_risk.txt")),
            Scenario::CancerRisk => Some(include_str!("scenarios/cancer_risk.txt")),
            _ => None,
        }
    }

    /// Framing shown with the three-algorithm survey.
    pub fn survey_text(self) -> Option<&'static str> {
        match self {
            Scenario::CancerRisk => Some(include_str!("scenarios/cancer_risk_survey.txt")),
            Scenario::FluSeverity => Some(include_str!("scenarios/flu_severity_survey.txt")),
            Scenario::PrisonSentencing => Some(include_str!("scenarios/prison_sentencing_survey.txt")),
            Scenario::BailAmount => Some(include_str!("scenarios/bail_amount_survey.txt")),
            Scenario::CrimeRisk => None,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario {s:?}")))
    }
}

impl fmt::Display for Stakes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stakes::High => "high",
            Stakes::Low => "low",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SurveyChoice {
    A1,
    A2,
    A3,
}

impl SurveyChoice {
    pub const ALL: [SurveyChoice; 3] = [SurveyChoice::A1, SurveyChoice::A2, SurveyChoice::A3];
}

impl FromStr for SurveyChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A1" => Ok(SurveyChoice::A1),
            "A2" => Ok(SurveyChoice::A2),
            "A3" => Ok(SurveyChoice::A3),
            _ => Err(Error::Config(format!("survey choice must be A1, A2 or A3, got {s:?}"))),
        }
    }
}

/// Accuracy overall and per gender, in percent, of one survey algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlgorithmTradeoff {
    pub algorithm: SurveyChoice,
    pub accuracy: u8,
    pub female_accuracy: u8,
    pub male_accuracy: u8,
}

/// The three algorithms offered in every survey, from most accurate to most
/// equal.
pub const SURVEY_ALGORITHMS: [AlgorithmTradeoff; 3] = [
    AlgorithmTradeoff {
        algorithm: SurveyChoice::A1,
        accuracy: 94,
        female_accuracy: 89,
        male_accuracy: 99,
    },
    AlgorithmTradeoff {
        algorithm: SurveyChoice::A2,
        accuracy: 91,
        female_accuracy: 90,
        male_accuracy: 92,
    },
    AlgorithmTradeoff {
        algorithm: SurveyChoice::A3,
        accuracy: 86,
        female_accuracy: 86,
        male_accuracy: 86,
    },
];

/// Optional self-reported participant attributes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Demographics {
    pub age_bracket: Option<String>,
    pub gender: Option<String>,
    pub race: Option<String>,
    pub education: Option<String>,
    pub political_leaning: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemographicAttribute {
    AgeBracket,
    Gender,
    Race,
    Education,
    PoliticalLeaning,
}

impl DemographicAttribute {
    pub fn name(self) -> &'static str {
        match self {
            DemographicAttribute::AgeBracket => "age_bracket",
            DemographicAttribute::Gender => "gender",
            DemographicAttribute::Race => "race",
            DemographicAttribute::Education => "education",
            DemographicAttribute::PoliticalLeaning => "political_leaning",
        }
    }
}

impl FromStr for DemographicAttribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "age" | "age_bracket" => Ok(DemographicAttribute::AgeBracket),
            "gender" => Ok(DemographicAttribute::Gender),
            "race" => Ok(DemographicAttribute::Race),
            "education" => Ok(DemographicAttribute::Education),
            "political_leaning" | "politics" => Ok(DemographicAttribute::PoliticalLeaning),
            _ => Err(Error::Config(format!("unknown demographic attribute {s:?}"))),
        }
    }
}

impl Demographics {
    pub fn get(&self, attribute: DemographicAttribute) -> Option<&str> {
        match attribute {
            DemographicAttribute::AgeBracket => self.age_bracket.as_deref(),
            DemographicAttribute::Gender => self.gender.as_deref(),
            DemographicAttribute::Race => self.race.as_deref(),
            DemographicAttribute::Education => self.education.as_deref(),
            DemographicAttribute::PoliticalLeaning => self.political_leaning.as_deref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub scenario: Scenario,
    pub chosen: SurveyChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demographics: Option<Demographics>,
}

/// Why a participant picked an algorithm.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "variant")]
pub enum Explanation {
    FreeText { body: String },
    Structured { attribute: GroupingDimension, metric: FairnessNotion },
}

impl Explanation {
    /// Free text must be non-blank; a structured metric must be one of the
    /// notions shown to the participant.
    pub fn validate(&self, hypotheses: &HypothesisSet) -> Result<()> {
        match self {
            Explanation::FreeText { body } if body.trim().is_empty() => {
                Err(Error::Config("explanation must not be empty".into()))
            }
            Explanation::Structured { metric, .. } if hypotheses.position(*metric).is_none() => Err(
                Error::Config(format!("metric {metric} was not offered in this session")),
            ),
            _ => Ok(()),
        }
    }
}

/// Which canonical algorithm is rendered on the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplayOrder {
    A1Left,
    A2Left,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordStep {
    pub step: usize,
    pub test_id: TestId,
    pub choice: Choice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_order: Option<DisplayOrder>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<Explanation>,
    pub posterior: Posterior,
}

/// One completed session as exported for analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub schema_version: u32,
    pub session_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    pub hypotheses: HypothesisSet,
    pub steps: Vec<RecordStep>,
    pub final_posterior: Posterior,
    pub classification: Classification,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub return_code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demographics: Option<Demographics>,
}

impl SessionRecord {
    /// Record of a simulated session.
    pub fn from_trace(session_id: impl Into<String>, trace: &SessionTrace, threshold: f64) -> Self {
        let final_posterior = trace.final_posterior().clone();
        SessionRecord {
            schema_version: SCHEMA_VERSION,
            session_id: session_id.into(),
            scenario: None,
            hypotheses: trace.hypotheses.clone(),
            steps: trace
                .steps
                .iter()
                .map(|s| RecordStep {
                    step: s.step,
                    test_id: s.test_id,
                    choice: s.choice,
                    display_order: None,
                    explanation: None,
                    posterior: s.posterior.clone(),
                })
                .collect(),
            classification: classify(&final_posterior, &trace.hypotheses, threshold),
            final_posterior,
            return_code: None,
            demographics: None,
        }
    }

    /// Most probable notion and its probability.
    pub fn map_notion(&self) -> (FairnessNotion, f64) {
        let (i, p) = self.final_posterior.max();
        (self.hypotheses.notions()[i], p)
    }

    /// Notion matched at `threshold`, which may lie outside the engine's
    /// admissible range.
    pub fn matched_at(&self, threshold: f64) -> Option<FairnessNotion> {
        let (notion, p) = self.map_notion();
        (p > threshold).then_some(notion)
    }
}

/// Reads line-delimited JSON, skipping blank lines.
pub fn read_ndjson<T: serde::de::DeserializeOwned, R: std::io::BufRead>(input: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_ndjson<T: Serialize, W: std::io::Write>(items: &[T], mut out: W) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
