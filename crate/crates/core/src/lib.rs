//! Adaptive elicitation of which group-fairness notion best explains a
//! responder's choices.
//!
//! The crate is organized bottom-up:
//!
//! - [`metrics`]: per-group benefit vectors and the Generalized Entropy index.
//! - [`test_space`]: enumeration of equal-accuracy algorithm pairs.
//! - [`response`]: the softmax response model and synthetic answers.
//! - [`engine`]: posterior updates, greedy test selection, classification.
//! - [`simulation`]: seeded multi-run studies with synthetic responders.
//! - [`study`]: scenarios, surveys and exported session records.
//! - [`report`]: tabular reports over simulations and exported sessions.

pub mod engine;
pub mod error;
pub mod metrics;
pub mod report;
pub mod response;
pub mod simulation;
pub mod study;
pub mod test_space;

pub use engine::{
    bayes_update, classify, objective_delta, run_session, select_next_test, Classification, Engine, EngineConfig,
    FirstTestPolicy, HypothesisSet, LikelihoodTable, NextStep, Posterior, Responder, SelectionPolicy, SessionTrace,
    StopReason,
};
pub use error::{Error, Result};
pub use metrics::{
    compute_benefit, generalized_entropy, overall_accuracy, BenefitVector, DecisionSubject, FairnessNotion, Gender,
    Grouping, GroupingDimension, LabelVector, Race, Roster,
};
pub use response::{choice_likelihood, simulate_choice, simulate_random_responder, Choice, ResponseModelConfig};
pub use simulation::{run_simulation, ResponderKind, Simulation, SimulationSpec};
pub use test_space::{enumerate_tests, Test, TestId, TestSpace, TestSpaceConfig};
