//! Live session state, rebuilt purely from events.
//!
//! The live path and log replay both go through [`Session::apply`], so a
//! replayed session performs the same floating-point operations in the same
//! order as the original.

use std::sync::Arc;

use fairprobe::engine::{Classification, Engine, EngineConfig, LikelihoodTable, NextStep, Posterior};
use fairprobe::simulation::derive_seed;
use fairprobe::study::{Demographics, DisplayOrder, Explanation, RecordStep, Scenario, SessionRecord, SCHEMA_VERSION};
use fairprobe::{TestId, TestSpace};
use serde::{Deserialize, Serialize};

use crate::config::ExplanationVariant;
use crate::error::{Result, ServiceError};
use crate::events::{Event, EventBody};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Completed,
    Aborted,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub scenario: Scenario,
    pub variant: ExplanationVariant,
    pub display_seed: u64,
    pub engine: Engine,
    /// Display order of every selected test, administered or outstanding.
    pub display_orders: Vec<DisplayOrder>,
    pub explanations: Vec<Explanation>,
    pub demographics: Option<Demographics>,
    pub status: SessionStatus,
    pub return_code: Option<String>,
    pub abort_reason: Option<String>,
    pub last_activity_ms: u64,
    /// Sequence number of the completion event, used to order exports.
    pub completed_seq: Option<u64>,
}

fn invariant(msg: String) -> ServiceError {
    ServiceError::Core(fairprobe::Error::Invariant(msg))
}

impl Session {
    /// Starts a session from its creation event.
    pub fn create(event: &Event, space: Arc<TestSpace>, table: Arc<LikelihoodTable>) -> Result<Session> {
        let EventBody::SessionCreated {
            session_id,
            scenario,
            explanation_variant,
            display_seed,
            config,
        } = &event.body
        else {
            return Err(invariant(format!("event {} does not create a session", event.seq)));
        };
        Ok(Session {
            id: session_id.clone(),
            scenario: *scenario,
            variant: *explanation_variant,
            display_seed: *display_seed,
            engine: Engine::new(space, table, config.clone())?,
            display_orders: Vec::new(),
            explanations: Vec::new(),
            demographics: None,
            status: SessionStatus::Active,
            return_code: None,
            abort_reason: None,
            last_activity_ms: event.timestamp_ms,
            completed_seq: None,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        self.engine.config()
    }

    pub fn posterior(&self) -> &Posterior {
        self.engine.posterior()
    }

    /// Number of answered tests.
    pub fn answered(&self) -> usize {
        self.engine.administered_count()
    }

    pub fn outstanding(&self) -> Option<TestId> {
        self.engine.outstanding()
    }

    /// Seeded left/right order for the test at 1-based `step`.
    pub fn display_order_for(&self, step: usize) -> DisplayOrder {
        if derive_seed(self.display_seed, step as u64, 0) & 1 == 0 {
            DisplayOrder::A1Left
        } else {
            DisplayOrder::A2Left
        }
    }

    pub fn is_idle(&self, now_ms: u64, ttl_ms: u64) -> bool {
        self.status == SessionStatus::Active && now_ms.saturating_sub(self.last_activity_ms) > ttl_ms
    }

    /// Applies one event. On error the session may be partially modified, so
    /// callers apply to a clone and keep it only on success.
    pub fn apply(&mut self, event: &Event) -> Result<()> {
        if event.body.session_id() != Some(self.id.as_str()) {
            return Err(invariant(format!("event {} belongs to another session", event.seq)));
        }
        let needs_active = !matches!(event.body, EventBody::DemographicsRecorded { .. });
        if needs_active && self.status != SessionStatus::Active {
            return Err(invariant(format!("event {} on a {:?} session", event.seq, self.status)));
        }
        match &event.body {
            EventBody::SessionCreated { .. } => {
                return Err(invariant(format!("session {} created twice", self.id)));
            }
            EventBody::TestSelected {
                step,
                test_id,
                display_order,
                ..
            } => {
                match self.engine.next_test()? {
                    NextStep::Test(id) if id == *test_id => {}
                    other => {
                        return Err(invariant(format!(
                            "log selects test {test_id} but the engine yields {other:?}"
                        )))
                    }
                }
                if *step != self.answered() + 1 {
                    return Err(invariant(format!("selection logged for step {step}")));
                }
                self.display_orders.truncate(self.answered());
                self.display_orders.push(*display_order);
            }
            EventBody::ResponseRecorded {
                test_id,
                choice,
                explanation,
                ..
            } => {
                self.engine.record(*test_id, *choice)?;
                self.explanations.push(explanation.clone());
            }
            EventBody::SessionCompleted {
                return_code,
                classification,
                ..
            } => {
                // an exhausted space is only discovered by asking for a test
                if !matches!(self.engine.next_test()?, NextStep::Finished(_)) {
                    return Err(invariant(format!("session {} completed before finishing", self.id)));
                }
                if *classification != self.engine.classify() {
                    return Err(invariant(format!("classification of session {} differs from the log", self.id)));
                }
                self.status = SessionStatus::Completed;
                self.return_code = Some(return_code.clone());
                self.completed_seq = Some(event.seq);
            }
            EventBody::SessionAborted { reason, .. } => {
                self.engine.abort(reason.clone());
                self.status = SessionStatus::Aborted;
                self.abort_reason = Some(reason.clone());
            }
            EventBody::DemographicsRecorded { demographics, .. } => {
                self.demographics = Some(demographics.clone());
            }
            EventBody::SurveySubmitted { .. } => unreachable!("surveys carry no session id"),
        }
        self.last_activity_ms = event.timestamp_ms;
        Ok(())
    }

    pub fn classification(&self) -> Classification {
        self.engine.classify()
    }

    /// Export record of a completed session.
    pub fn record(&self, include_demographics: bool) -> SessionRecord {
        let trace = self.engine.trace();
        SessionRecord {
            schema_version: SCHEMA_VERSION,
            session_id: self.id.clone(),
            scenario: Some(self.scenario),
            hypotheses: trace.hypotheses.clone(),
            steps: trace
                .steps
                .iter()
                .enumerate()
                .map(|(i, s)| RecordStep {
                    step: s.step,
                    test_id: s.test_id,
                    choice: s.choice,
                    display_order: self.display_orders.get(i).copied(),
                    explanation: self.explanations.get(i).cloned(),
                    posterior: s.posterior.clone(),
                })
                .collect(),
            final_posterior: self.posterior().clone(),
            classification: self.classification(),
            return_code: self.return_code.clone(),
            demographics: if include_demographics {
                self.demographics.clone()
            } else {
                None
            },
        }
    }
}
