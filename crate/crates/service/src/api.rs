//! Request and response bodies of the HTTP API. Every response body carries
//! `schema_version`.

use fairprobe::engine::{Classification, FirstTestPolicy, HypothesisSet, Posterior};
use fairprobe::metrics::{DecisionSubject, FairnessNotion, GroupingDimension, LabelVector};
use fairprobe::study::{AlgorithmTradeoff, Demographics, DisplayOrder, Explanation, Scenario, Stakes};
use fairprobe::test_space::Disparity;
use fairprobe::TestId;
use serde::{Deserialize, Serialize};

use crate::config::ExplanationVariant;
use crate::session::SessionStatus;

/// Body of `POST /sessions`. Scenario names are parsed by the handler so
/// that an unknown scenario is a request error rather than a schema error.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionRequest {
    pub scenario: String,
    /// Use the five-notion hypothesis set.
    #[serde(default)]
    pub appendix_set: bool,
    /// Defaults to a random first test with a fresh seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_test: Option<FirstTestPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation_variant: Option<ExplanationVariant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tests: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_stop_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPayload {
    pub schema_version: u32,
    pub session_id: String,
    /// 1-based position of this test in the session.
    pub step: usize,
    pub max_tests: usize,
    pub test_id: TestId,
    pub display_order: DisplayOrder,
    pub roster: Vec<DecisionSubject>,
    pub truth: LabelVector,
    pub a1: LabelVector,
    pub a2: LabelVector,
    pub explanation_variant: ExplanationVariant,
    /// Options of the structured form's attribute menu.
    pub attributes: Vec<GroupingDimension>,
    /// Options of the structured form's metric menu.
    pub metrics: Vec<FairnessNotion>,
    /// Group labels, in the order of every benefit vector below.
    pub groups: Vec<String>,
    pub disparities: Vec<Disparity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub schema_version: u32,
    pub session_id: String,
    pub scenario: Scenario,
    pub hypotheses: HypothesisSet,
    pub posterior: Posterior,
    pub test: TestPayload,
}

/// Snapshot of a session: the outstanding test while active, the outcome
/// once completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub schema_version: u32,
    pub session_id: String,
    pub status: SessionStatus,
    pub answered: usize,
    pub max_tests: usize,
    pub posterior: Posterior,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<TestPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<Classification>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub return_code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
}

/// Body of `POST /sessions/{id}/responses`. `choice` names the canonical
/// algorithm (`A1` or `A2`) regardless of how it was displayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitResponseRequest {
    pub test_id: TestId,
    pub choice: String,
    #[serde(default)]
    pub explanation: Option<Explanation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyRequest {
    pub scenario: String,
    pub chosen: String,
    #[serde(default)]
    pub demographics: Option<Demographics>,
}

/// Acknowledgement of a stored survey answer; also the export line format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyRecord {
    pub schema_version: u32,
    pub survey_id: String,
    pub scenario: Scenario,
    pub stakes: Stakes,
    pub chosen: fairprobe::study::SurveyChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demographics: Option<Demographics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub schema_version: u32,
    pub session_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportKind {
    #[default]
    Sessions,
    Surveys,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportQuery {
    pub kind: ExportKind,
    pub include_demographics: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioInfo {
    pub id: Scenario,
    pub title: String,
    pub stakes: Stakes,
    pub adaptive: bool,
    pub survey: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub framing_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub survey_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioList {
    pub schema_version: u32,
    pub scenarios: Vec<ScenarioInfo>,
    pub survey_algorithms: Vec<AlgorithmTradeoff>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub schema_version: u32,
    pub error: String,
    pub message: String,
}
