//! Bayesian inference over fairness notions with greedy test selection.
//!
//! The engine keeps a posterior over a [`HypothesisSet`] and, at every step,
//! administers the unused test maximizing the expected gain in the sum of
//! squared posterior probabilities:
//!
//! ```text
//! Δ(t | o) = Σ_{o' ∈ {A1, A2}} P(O_t = o' | o) · Σ_i P(h_i | o, O_t = o')²  −  Σ_i P(h_i | o)²
//! ```
//!
//! Responses are assumed conditionally independent given the notion, so the
//! posterior is updated one test at a time.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{FairnessNotion, Roster};
use crate::response::{choice_likelihood, softmax_first, Choice, ResponseModelConfig};
use crate::test_space::{discriminativeness, Test, TestId, TestSpace};

/// Δ values within this distance of the maximum are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Tolerance on the posterior's total mass.
pub const POSTERIOR_SUM_TOLERANCE: f64 = 1e-9;

/// Ordered, duplicate-free set of candidate notions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FairnessNotion>", into = "Vec<FairnessNotion>")]
pub struct HypothesisSet(Vec<FairnessNotion>);

impl HypothesisSet {
    pub fn new(notions: Vec<FairnessNotion>) -> Result<Self> {
        if notions.len() < 2 {
            return Err(Error::Config("hypothesis set needs at least two notions".into()));
        }
        for (i, n) in notions.iter().enumerate() {
            if notions[..i].contains(n) {
                return Err(Error::Config(format!("duplicate notion {n} in hypothesis set")));
            }
        }
        Ok(HypothesisSet(notions))
    }

    /// DP, EP, FDP, FNP.
    pub fn default_set() -> Self {
        use FairnessNotion::*;
        HypothesisSet(vec![DP, EP, FDP, FNP])
    }

    /// The set without demographic parity: EP, FPP, FNP, FDP, FOP.
    pub fn appendix_set() -> Self {
        use FairnessNotion::*;
        HypothesisSet(vec![EP, FPP, FNP, FDP, FOP])
    }

    pub fn notions(&self) -> &[FairnessNotion] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn position(&self, notion: FairnessNotion) -> Option<usize> {
        self.0.iter().position(|&n| n == notion)
    }
}

impl Default for HypothesisSet {
    fn default() -> Self {
        HypothesisSet::default_set()
    }
}

impl TryFrom<Vec<FairnessNotion>> for HypothesisSet {
    type Error = Error;

    fn try_from(v: Vec<FairnessNotion>) -> Result<Self> {
        HypothesisSet::new(v)
    }
}

impl From<HypothesisSet> for Vec<FairnessNotion> {
    fn from(h: HypothesisSet) -> Self {
        h.0
    }
}

/// Probability distribution over the notions of a [`HypothesisSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Posterior(Vec<f64>);

impl Posterior {
    pub fn uniform(n: usize) -> Self {
        Posterior(vec![1.0 / n as f64; n])
    }

    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::Config("posterior must not be empty".into()));
        }
        if probabilities.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(Error::Config("posterior entries must be finite and non-negative".into()));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > POSTERIOR_SUM_TOLERANCE {
            return Err(Error::Config(format!("posterior sums to {total}, not 1")));
        }
        Ok(Posterior(probabilities))
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index and value of the largest entry; the lowest index wins ties.
    pub fn max(&self) -> (usize, f64) {
        let mut best = (0, self.0[0]);
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > best.1 {
                best = (i, p);
            }
        }
        best
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.0.iter().map(|p| p * p).sum()
    }

    /// Bayes' rule with per-hypothesis likelihoods of the observed outcome.
    pub fn update(&self, likelihoods: &[f64]) -> Result<Posterior> {
        if likelihoods.len() != self.0.len() {
            return Err(Error::LengthMismatch {
                expected: self.0.len(),
                actual: likelihoods.len(),
            });
        }
        let joint: Vec<f64> = self.0.iter().zip(likelihoods).map(|(p, l)| p * l).collect();
        let evidence: f64 = joint.iter().sum();
        if !(evidence > 0.0 && evidence.is_finite()) {
            return Err(Error::Invariant(format!(
                "observation has zero probability under every hypothesis (evidence {evidence})"
            )));
        }
        Ok(Posterior(joint.into_iter().map(|j| j / evidence).collect()))
    }
}

impl TryFrom<Vec<f64>> for Posterior {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Posterior::new(v)
    }
}

impl From<Posterior> for Vec<f64> {
    fn from(p: Posterior) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SelectionPolicy {
    #[default]
    Adaptive,
    Random { seed: u64 },
}

/// How the first test of a session is picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FirstTestPolicy {
    #[default]
    Argmax,
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub hypotheses: HypothesisSet,
    pub max_tests: usize,
    pub classification_threshold: f64,
    pub response: ResponseModelConfig,
    pub selection: SelectionPolicy,
    pub first_test: FirstTestPolicy,
    /// Stop as soon as the largest posterior entry exceeds this value.
    pub early_stop_threshold: Option<f64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            hypotheses: HypothesisSet::default_set(),
            max_tests: 20,
            classification_threshold: 0.8,
            response: ResponseModelConfig::default(),
            selection: SelectionPolicy::Adaptive,
            first_test: FirstTestPolicy::Argmax,
            early_stop_threshold: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_tests < 1 {
            return Err(Error::Config("max_tests must be at least 1".into()));
        }
        let t = self.classification_threshold;
        if !(t > 0.5 && t < 1.0) {
            return Err(Error::Config(format!("classification threshold {t} must lie in (0.5, 1)")));
        }
        if let Some(e) = self.early_stop_threshold {
            if !(e > 0.0 && e < 1.0) {
                return Err(Error::Config(format!("early stop threshold {e} must lie in (0, 1)")));
            }
        }
        self.response.validate()
    }
}

/// Final verdict on a responder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "result")]
pub enum Classification {
    Matched { notion: FairnessNotion, probability: f64 },
    None { posterior: Posterior },
}

impl Classification {
    pub fn matched_notion(&self) -> Option<FairnessNotion> {
        match self {
            Classification::Matched { notion, .. } => Some(*notion),
            Classification::None { .. } => None,
        }
    }
}

/// Matches the most probable notion if its probability exceeds `threshold`.
pub fn classify(posterior: &Posterior, hypotheses: &HypothesisSet, threshold: f64) -> Classification {
    let (i, p) = posterior.max();
    if p > threshold {
        Classification::Matched {
            notion: hypotheses.notions()[i],
            probability: p,
        }
    } else {
        Classification::None {
            posterior: posterior.clone(),
        }
    }
}

/// `P(A1 | h_i, t)` for every test and hypothesis, computed once per space.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodTable {
    hypotheses: HypothesisSet,
    response: ResponseModelConfig,
    width: usize,
    p_a1: Vec<f64>,
}

impl LikelihoodTable {
    pub fn build(space: &TestSpace, hypotheses: &HypothesisSet, response: &ResponseModelConfig) -> Result<Self> {
        response.validate()?;
        let grouping = space.roster.grouping(response.grouping);
        let rows = space
            .tests
            .par_iter()
            .map(|test| {
                discriminativeness(test, hypotheses.notions(), &grouping).map(|ents| {
                    ents.iter()
                        .map(|e| softmax_first(e.a1, e.a2, response.temperature))
                        .collect::<Vec<f64>>()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LikelihoodTable {
            hypotheses: hypotheses.clone(),
            response: *response,
            width: hypotheses.len(),
            p_a1: rows.into_iter().flatten().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.p_a1.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.p_a1.is_empty()
    }

    pub fn hypotheses(&self) -> &HypothesisSet {
        &self.hypotheses
    }

    pub fn response(&self) -> &ResponseModelConfig {
        &self.response
    }

    /// `P(A1 | h_i)` for each hypothesis on test `id`.
    pub fn row(&self, id: TestId) -> &[f64] {
        &self.p_a1[id * self.width..(id + 1) * self.width]
    }

    /// Likelihood of `choice` under each hypothesis on test `id`.
    pub fn choice_row(&self, id: TestId, choice: Choice) -> Vec<f64> {
        let row = self.row(id);
        match choice {
            Choice::A1 => row.to_vec(),
            Choice::A2 => row.iter().map(|p| 1.0 - p).collect(),
        }
    }

    fn compatible_with(&self, config: &EngineConfig) -> bool {
        self.hypotheses == config.hypotheses && self.response == config.response
    }
}

/// Δ for a test whose A1-likelihoods per hypothesis are `p_a1`.
pub fn objective_from_likelihoods(p_a1: &[f64], posterior: &[f64]) -> f64 {
    // identical likelihoods leave the posterior unchanged under either outcome
    if p_a1.windows(2).all(|w| w[0] == w[1]) {
        return 0.0;
    }
    let (mut mass_a1, mut mass_a2) = (0.0, 0.0);
    let (mut sq_a1, mut sq_a2) = (0.0, 0.0);
    let mut prior_sq = 0.0;
    for (&l, &p) in p_a1.iter().zip(posterior) {
        let j1 = p * l;
        let j2 = p * (1.0 - l);
        mass_a1 += j1;
        mass_a2 += j2;
        sq_a1 += j1 * j1;
        sq_a2 += j2 * j2;
        prior_sq += p * p;
    }
    // P(o') · Σ_i (j_i / P(o'))² = Σ_i j_i² / P(o')
    let term = |sq: f64, mass: f64| if mass > 0.0 { sq / mass } else { 0.0 };
    term(sq_a1, mass_a1) + term(sq_a2, mass_a2) - prior_sq
}

/// Δ(t | o) for `test` under the engine's response model.
pub fn objective_delta(test: &Test, posterior: &Posterior, roster: &Roster, config: &EngineConfig) -> Result<f64> {
    let p_a1 = config
        .hypotheses
        .notions()
        .iter()
        .map(|&h| choice_likelihood(test, h, Choice::A1, roster, &config.response))
        .collect::<Result<Vec<_>>>()?;
    Ok(objective_from_likelihoods(&p_a1, posterior.probabilities()))
}

/// Posterior after observing `choice` on `test`.
pub fn bayes_update(
    posterior: &Posterior,
    test: &Test,
    choice: Choice,
    roster: &Roster,
    config: &EngineConfig,
) -> Result<Posterior> {
    let likelihoods = config
        .hypotheses
        .notions()
        .iter()
        .map(|&h| choice_likelihood(test, h, choice, roster, &config.response))
        .collect::<Result<Vec<_>>>()?;
    posterior.update(&likelihoods)
}

/// Unadministered test with the largest Δ, lowest id among ties.
pub fn argmax_test(table: &LikelihoodTable, administered: &[bool], posterior: &Posterior) -> Result<(TestId, f64)> {
    let deltas: Vec<Option<f64>> = (0..table.len())
        .map(|id| (!administered[id]).then(|| objective_from_likelihoods(table.row(id), posterior.probabilities())))
        .collect();
    let best = deltas
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if best == f64::NEG_INFINITY {
        return Err(Error::Exhausted);
    }
    deltas
        .iter()
        .enumerate()
        .find_map(|(id, d)| d.filter(|&d| d >= best - TIE_TOLERANCE).map(|d| (id, d)))
        .ok_or(Error::Exhausted)
}

/// Uniform draw from the unadministered tests.
pub fn random_test<R: Rng + ?Sized>(administered: &[bool], remaining: usize, rng: &mut R) -> Result<TestId> {
    if remaining == 0 {
        return Err(Error::Exhausted);
    }
    if remaining * 2 > administered.len() {
        // rejection sampling is uniform over the remainder and cheap while it is large
        loop {
            let id = rng.random_range(0..administered.len());
            if !administered[id] {
                return Ok(id);
            }
        }
    }
    let k = rng.random_range(0..remaining);
    administered
        .iter()
        .enumerate()
        .filter(|(_, &used)| !used)
        .nth(k)
        .map(|(id, _)| id)
        .ok_or_else(|| Error::Invariant("remaining count out of sync".into()))
}

/// Next test under `config`'s selection policy. `rng` drives random
/// selection and is ignored by the adaptive policy.
pub fn select_next_test(
    table: &LikelihoodTable,
    administered: &[bool],
    posterior: &Posterior,
    policy: SelectionPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<TestId> {
    match policy {
        SelectionPolicy::Adaptive => argmax_test(table, administered, posterior).map(|(id, _)| id),
        SelectionPolicy::Random { .. } => {
            let remaining = administered.iter().filter(|&&a| !a).count();
            random_test(administered, remaining, rng)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// `max_tests` responses were recorded.
    Budget,
    EarlyStop,
    Exhausted,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// 1-based position in the session.
    pub step: usize,
    pub test_id: TestId,
    pub choice: Choice,
    pub posterior: Posterior,
}

/// Everything that happened in one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub hypotheses: HypothesisSet,
    pub prior: Posterior,
    pub steps: Vec<TraceStep>,
    pub stop: Option<StopReason>,
    pub classification: Option<Classification>,
    /// Set when the session was aborted.
    pub error: Option<String>,
}

impl SessionTrace {
    pub fn final_posterior(&self) -> &Posterior {
        self.steps.last().map_or(&self.prior, |s| &s.posterior)
    }

    /// Writes the trace as line-delimited JSON events. `clock` supplies each
    /// event's timestamp in milliseconds.
    pub fn write_event_log<W: Write>(&self, session_id: &str, mut clock: impl FnMut() -> u64, mut out: W) -> Result<()> {
        let mut emit = |kind: &str, payload: serde_json::Value| -> Result<()> {
            let event = serde_json::json!({
                "timestamp_ms": clock(),
                "session_id": session_id,
                "kind": kind,
                "payload": payload,
            });
            serde_json::to_writer(&mut out, &event)?;
            out.write_all(b"\n")?;
            Ok(())
        };
        emit(
            "session_started",
            serde_json::json!({ "hypotheses": self.hypotheses, "prior": self.prior }),
        )?;
        for s in &self.steps {
            emit("test_selected", serde_json::json!({ "step": s.step, "test_id": s.test_id }))?;
            emit("choice_recorded", serde_json::to_value(s)?)?;
        }
        if let Some(stop) = self.stop {
            emit(
                "session_finished",
                serde_json::json!({
                    "stop": stop,
                    "classification": self.classification,
                    "error": self.error,
                }),
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextStep {
    Test(TestId),
    Finished(StopReason),
}

/// One responder's adaptive session. Sequential by contract; the test space
/// and likelihood table are shared read-only between sessions.
#[derive(Debug, Clone)]
pub struct Engine {
    space: Arc<TestSpace>,
    table: Arc<LikelihoodTable>,
    config: EngineConfig,
    posterior: Posterior,
    administered: Vec<bool>,
    remaining: usize,
    outstanding: Option<TestId>,
    selection_rng: ChaCha8Rng,
    first_rng: Option<ChaCha8Rng>,
    trace: SessionTrace,
}

impl Engine {
    pub fn new(space: Arc<TestSpace>, table: Arc<LikelihoodTable>, config: EngineConfig) -> Result<Self> {
        config.validate()?;
        if table.len() != space.len() {
            return Err(Error::Config(format!(
                "likelihood table covers {} tests but the space has {}",
                table.len(),
                space.len()
            )));
        }
        if !table.compatible_with(&config) {
            return Err(Error::Config(
                "likelihood table was built for a different hypothesis set or response model".into(),
            ));
        }
        let prior = Posterior::uniform(config.hypotheses.len());
        let selection_seed = match config.selection {
            SelectionPolicy::Random { seed } => seed,
            SelectionPolicy::Adaptive => 0,
        };
        let first_rng = match config.first_test {
            FirstTestPolicy::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            FirstTestPolicy::Argmax => None,
        };
        Ok(Engine {
            administered: vec![false; space.len()],
            remaining: space.len(),
            space,
            table,
            posterior: prior.clone(),
            outstanding: None,
            selection_rng: ChaCha8Rng::seed_from_u64(selection_seed),
            first_rng,
            trace: SessionTrace {
                hypotheses: config.hypotheses.clone(),
                prior,
                steps: Vec::new(),
                stop: None,
                classification: None,
                error: None,
            },
            config,
        })
    }

    /// Builds the likelihood table for `config` and starts a session.
    pub fn with_space(space: Arc<TestSpace>, config: EngineConfig) -> Result<Self> {
        let table = LikelihoodTable::build(&space, &config.hypotheses, &config.response)?;
        Engine::new(space, Arc::new(table), config)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn space(&self) -> &Arc<TestSpace> {
        &self.space
    }

    pub fn table(&self) -> &Arc<LikelihoodTable> {
        &self.table
    }

    pub fn posterior(&self) -> &Posterior {
        &self.posterior
    }

    pub fn trace(&self) -> &SessionTrace {
        &self.trace
    }

    pub fn into_trace(self) -> SessionTrace {
        self.trace
    }

    pub fn outstanding(&self) -> Option<TestId> {
        self.outstanding
    }

    pub fn administered_count(&self) -> usize {
        self.trace.steps.len()
    }

    pub fn is_finished(&self) -> bool {
        self.trace.stop.is_some()
    }

    pub fn classify(&self) -> Classification {
        classify(&self.posterior, &self.config.hypotheses, self.config.classification_threshold)
    }

    fn finish(&mut self, reason: StopReason) -> NextStep {
        self.outstanding = None;
        self.trace.stop = Some(reason);
        self.trace.classification = Some(self.classify());
        NextStep::Finished(reason)
    }

    /// Selects the next test, or returns the already outstanding one.
    pub fn next_test(&mut self) -> Result<NextStep> {
        if let Some(reason) = self.trace.stop {
            return Ok(NextStep::Finished(reason));
        }
        if let Some(id) = self.outstanding {
            return Ok(NextStep::Test(id));
        }
        let picked = match (&mut self.first_rng, self.trace.steps.is_empty()) {
            (Some(rng), true) => random_test(&self.administered, self.remaining, rng),
            _ => match self.config.selection {
                SelectionPolicy::Adaptive => {
                    argmax_test(&self.table, &self.administered, &self.posterior).map(|(id, _)| id)
                }
                SelectionPolicy::Random { .. } => {
                    random_test(&self.administered, self.remaining, &mut self.selection_rng)
                }
            },
        };
        match picked {
            Ok(id) => {
                self.outstanding = Some(id);
                Ok(NextStep::Test(id))
            }
            Err(Error::Exhausted) => Ok(self.finish(StopReason::Exhausted)),
            Err(e) => Err(e),
        }
    }

    /// Records the response to the outstanding test and updates the posterior.
    pub fn record(&mut self, test_id: TestId, choice: Choice) -> Result<&Posterior> {
        match self.outstanding {
            Some(id) if id == test_id => {}
            Some(id) => {
                return Err(Error::Config(format!(
                    "response for test {test_id} but test {id} is outstanding"
                )))
            }
            None => return Err(Error::Config(format!("no test is outstanding (got response for {test_id})"))),
        }
        let posterior = self.posterior.update(&self.table.choice_row(test_id, choice))?;
        self.administered[test_id] = true;
        self.remaining -= 1;
        self.outstanding = None;
        self.posterior = posterior;
        self.trace.steps.push(TraceStep {
            step: self.trace.steps.len() + 1,
            test_id,
            choice,
            posterior: self.posterior.clone(),
        });
        if self.trace.steps.len() >= self.config.max_tests {
            self.finish(StopReason::Budget);
        } else if self
            .config
            .early_stop_threshold
            .is_some_and(|t| self.posterior.max().1 > t)
        {
            self.finish(StopReason::EarlyStop);
        }
        Ok(&self.posterior)
    }

    /// Marks the session aborted, keeping everything recorded so far.
    pub fn abort(&mut self, reason: impl Into<String>) {
        self.trace.error = Some(reason.into());
        self.finish(StopReason::Aborted);
    }
}

/// Source of answers for a session.
pub trait Responder {
    fn respond(&mut self, test: &Test) -> Result<Choice>;
}

/// Replays a fixed sequence of choices and fails once it runs out.
#[derive(Debug, Clone)]
pub struct ScriptedResponder {
    choices: std::vec::IntoIter<Choice>,
}

impl ScriptedResponder {
    pub fn new(choices: Vec<Choice>) -> Self {
        ScriptedResponder {
            choices: choices.into_iter(),
        }
    }
}

impl Responder for ScriptedResponder {
    fn respond(&mut self, _test: &Test) -> Result<Choice> {
        self.choices
            .next()
            .ok_or_else(|| Error::Responder("scripted responder ran out of choices".into()))
    }
}

/// Runs a full session: select, ask, update, until the budget is spent,
/// the space is exhausted, or the optional early stop triggers. A failing
/// responder aborts the session; the partial trace is returned.
pub fn run_session(
    space: Arc<TestSpace>,
    table: Arc<LikelihoodTable>,
    config: EngineConfig,
    responder: &mut dyn Responder,
) -> Result<SessionTrace> {
    let mut engine = Engine::new(space, table, config)?;
    loop {
        match engine.next_test()? {
            NextStep::Finished(_) => break,
            NextStep::Test(id) => {
                let test = engine.space().get(id)?.clone();
                match responder.respond(&test) {
                    Ok(choice) => {
                        engine.record(id, choice)?;
                    }
                    Err(e) => {
                        engine.abort(e.to_string());
                        break;
                    }
                }
            }
        }
    }
    Ok(engine.into_trace())
}
