//! Transport-independent experiment service.
//!
//! Every mutation follows the same path: prepare the new session state on a
//! clone, stamp an event under the log lock, apply it to the clone, append
//! it, and only then swap the clone in. Sessions are locked individually, so
//! unrelated sessions never wait on each other except for the append itself.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use fairprobe::engine::{EngineConfig, FirstTestPolicy, HypothesisSet, LikelihoodTable, NextStep};
use fairprobe::study::{Demographics, Scenario, SurveyChoice, SurveyResponse, SCHEMA_VERSION};
use fairprobe::test_space::disparities;
use fairprobe::{enumerate_tests, Choice, GroupingDimension, Posterior, TestSpace};

use crate::api::{
    Ack, CreateSessionRequest, CreateSessionResponse, ExportKind, ExportQuery, ScenarioInfo, ScenarioList,
    SessionView, SubmitResponseRequest, SurveyRecord, SurveyRequest, TestPayload,
};
use crate::config::ServiceConfig;
use crate::error::{Result, ServiceError};
use crate::events::{Event, EventBody, EventLog};
use crate::session::{Session, SessionStatus};

/// Source of wall-clock time in milliseconds.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Manually advanced clock for tests.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        ManualClock(AtomicU64::new(start_ms))
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    // state is only swapped in after a successful append, so a poisoned
    // guard still holds a consistent value
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn token() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

fn return_code() -> String {
    let t = token().to_uppercase();
    format!("FP-{}-{}", &t[..4], &t[4..10])
}

pub struct Service {
    config: ServiceConfig,
    space: Arc<TestSpace>,
    tables: Mutex<HashMap<String, Arc<LikelihoodTable>>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    surveys: Mutex<Vec<SurveyRecord>>,
    log: Mutex<EventLog>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service")
            .field("log_dir", &self.config.log_dir)
            .field("tests", &self.space.len())
            .finish()
    }
}

impl Service {
    /// Opens the log in `config.log_dir`, replays it and brings interrupted
    /// sessions back to a consistent point.
    pub fn open(config: ServiceConfig, clock: Arc<dyn Clock>) -> Result<Service> {
        config.validate()?;
        let space_config = config.test_space.clone().unwrap_or_default();
        let space = Arc::new(enumerate_tests(&space_config)?);
        Service::open_with_space(config, space, clock)
    }

    /// Like [`Service::open`] with a prebuilt test space.
    pub fn open_with_space(config: ServiceConfig, space: Arc<TestSpace>, clock: Arc<dyn Clock>) -> Result<Service> {
        config.validate()?;
        let (log, events) = EventLog::open(&config.log_dir, config.sync_writes)?;
        let service = Service {
            config,
            space,
            tables: Mutex::new(HashMap::new()),
            sessions: RwLock::new(HashMap::new()),
            surveys: Mutex::new(Vec::new()),
            log: Mutex::new(log),
            clock,
        };
        // the default table is needed by nearly every session
        service.table_for(&service.config.engine)?;
        let replayed = events.len();
        for event in &events {
            service.replay(event)?;
        }
        service.recover()?;
        tracing::info!(events = replayed, sessions = service.session_ids().len(), "event log replayed");
        Ok(service)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn space(&self) -> &Arc<TestSpace> {
        &self.space
    }

    fn table_for(&self, config: &EngineConfig) -> Result<Arc<LikelihoodTable>> {
        let key = serde_json::to_string(&(&config.hypotheses, &config.response))?;
        let mut tables = lock(&self.tables);
        if let Some(t) = tables.get(&key) {
            return Ok(t.clone());
        }
        let table = Arc::new(LikelihoodTable::build(&self.space, &config.hypotheses, &config.response)?);
        tables.insert(key, table.clone());
        Ok(table)
    }

    fn replay(&self, event: &Event) -> Result<()> {
        match &event.body {
            EventBody::SessionCreated { session_id, config, .. } => {
                let session = Session::create(event, self.space.clone(), self.table_for(config)?)?;
                self.sessions
                    .write()
                    .unwrap_or_else(|e| e.into_inner())
                    .insert(session_id.clone(), Arc::new(Mutex::new(session)));
            }
            EventBody::SurveySubmitted { survey_id, response } => {
                lock(&self.surveys).push(survey_record(survey_id.clone(), response.clone()));
            }
            body => {
                let id = body.session_id().unwrap_or_default();
                let session = self.session(id).map_err(|_| ServiceError::Corrupt {
                    line: event.seq as usize + 1,
                    message: format!("event for unknown session {id}"),
                })?;
                lock(&session).apply(event)?;
            }
        }
        Ok(())
    }

    /// Logs the missing selection or completion of sessions interrupted
    /// between two events.
    fn recover(&self) -> Result<()> {
        for id in self.session_ids() {
            let session = self.session(&id)?;
            let mut s = lock(&session);
            if s.status == SessionStatus::Active && s.outstanding().is_none() {
                self.advance(&mut s)?;
            }
        }
        Ok(())
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("session {id}")))
    }

    /// Ids of all known sessions, sorted.
    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    /// Current posterior of every session.
    pub fn posteriors(&self) -> HashMap<String, Posterior> {
        self.session_ids()
            .into_iter()
            .filter_map(|id| self.session(&id).ok().map(|s| (id, lock(&s).posterior().clone())))
            .collect()
    }

    /// Stamps `body`, applies it to `prepared` and appends it; `session`
    /// becomes `prepared` only if both succeed.
    fn commit(&self, session: &mut Session, mut prepared: Session, body: EventBody) -> Result<()> {
        let mut log = lock(&self.log);
        let event = log.stamp(body, self.clock.now_ms());
        prepared.apply(&event)?;
        log.append(&event)?;
        drop(log);
        *session = prepared;
        Ok(())
    }

    /// Selects and logs the next test, or completes the session.
    fn advance(&self, session: &mut Session) -> Result<()> {
        let mut next = session.clone();
        let body = match next.engine.next_test()? {
            NextStep::Test(test_id) => {
                let step = next.answered() + 1;
                EventBody::TestSelected {
                    session_id: next.id.clone(),
                    step,
                    test_id,
                    display_order: next.display_order_for(step),
                }
            }
            NextStep::Finished(_) => EventBody::SessionCompleted {
                session_id: next.id.clone(),
                return_code: return_code(),
                classification: next.engine.classify(),
            },
        };
        self.commit(session, next, body)?;
        Ok(())
    }

    /// Aborts `session` if it has been idle longer than the configured TTL.
    fn expire_if_idle(&self, session: &mut Session) -> Result<bool> {
        let ttl_ms = self.config.session_ttl_secs.saturating_mul(1000);
        if !session.is_idle(self.clock.now_ms(), ttl_ms) {
            return Ok(false);
        }
        let body = EventBody::SessionAborted {
            session_id: session.id.clone(),
            reason: format!("idle for more than {} seconds", self.config.session_ttl_secs),
        };
        let prepared = session.clone();
        self.commit(session, prepared, body)?;
        Ok(true)
    }

    /// Aborts every idle session and returns how many were aborted.
    pub fn expire_idle(&self) -> Result<usize> {
        let mut n = 0;
        for id in self.session_ids() {
            let session = self.session(&id)?;
            if self.expire_if_idle(&mut lock(&session))? {
                n += 1;
            }
        }
        Ok(n)
    }

    fn test_payload(&self, session: &Session) -> Result<Option<TestPayload>> {
        let Some(test_id) = session.outstanding() else {
            return Ok(None);
        };
        let test = self.space.get(test_id)?;
        let config = session.config();
        let grouping = self.space.roster.grouping(config.response.grouping);
        let step = session.answered() + 1;
        Ok(Some(TestPayload {
            schema_version: SCHEMA_VERSION,
            session_id: session.id.clone(),
            step,
            max_tests: config.max_tests,
            test_id,
            display_order: session
                .display_orders
                .get(step - 1)
                .copied()
                .unwrap_or_else(|| session.display_order_for(step)),
            roster: self.space.roster.subjects().to_vec(),
            truth: test.truth.clone(),
            a1: test.pred_a1.clone(),
            a2: test.pred_a2.clone(),
            explanation_variant: session.variant,
            attributes: vec![
                GroupingDimension::Gender,
                GroupingDimension::Race,
                GroupingDimension::Intersection,
            ],
            metrics: config.hypotheses.notions().to_vec(),
            groups: grouping.labels.clone(),
            disparities: disparities(test, config.hypotheses.notions(), &grouping)?,
        }))
    }

    fn view(&self, session: &Session) -> Result<SessionView> {
        let completed = session.status == SessionStatus::Completed;
        Ok(SessionView {
            schema_version: SCHEMA_VERSION,
            session_id: session.id.clone(),
            status: session.status,
            answered: session.answered(),
            max_tests: session.config().max_tests,
            posterior: session.posterior().clone(),
            test: self.test_payload(session)?,
            classification: completed.then(|| session.classification()),
            return_code: session.return_code.clone(),
            abort_reason: session.abort_reason.clone(),
        })
    }

    pub fn scenarios(&self) -> ScenarioList {
        ScenarioList {
            schema_version: SCHEMA_VERSION,
            scenarios: self
                .config
                .scenarios
                .iter()
                .map(|&s| ScenarioInfo {
                    id: s,
                    title: s.title().to_string(),
                    stakes: s.stakes(),
                    adaptive: s.is_adaptive(),
                    survey: s.is_survey(),
                    framing_text: s.framing_text().map(str::to_string),
                    survey_text: s.survey_text().map(str::to_string),
                })
                .collect(),
            survey_algorithms: fairprobe::study::SURVEY_ALGORITHMS.to_vec(),
        }
    }

    fn enabled(&self, scenario: &str) -> Result<Scenario> {
        let s: Scenario = scenario
            .parse()
            .map_err(|_| ServiceError::BadRequest(format!("unknown scenario '{scenario}'")))?;
        if !self.config.scenarios.contains(&s) {
            return Err(ServiceError::BadRequest(format!("scenario '{s}' is not enabled")));
        }
        Ok(s)
    }

    pub fn create_session(&self, req: &CreateSessionRequest) -> Result<CreateSessionResponse> {
        let scenario = self.enabled(&req.scenario)?;
        if !scenario.is_adaptive() {
            return Err(ServiceError::BadRequest(format!("scenario '{scenario}' is survey-only")));
        }
        let mut config = self.config.engine.clone();
        if req.appendix_set {
            config.hypotheses = HypothesisSet::appendix_set();
        }
        config.first_test = req.first_test.unwrap_or(FirstTestPolicy::Random {
            seed: rand::random(),
        });
        if let Some(n) = req.max_tests {
            config.max_tests = n;
        }
        if req.early_stop_threshold.is_some() {
            config.early_stop_threshold = req.early_stop_threshold;
        }
        config
            .validate()
            .map_err(|e| ServiceError::Validation(e.to_string()))?;
        let table = self.table_for(&config)?;
        let session_id = token();
        let body = EventBody::SessionCreated {
            session_id: session_id.clone(),
            scenario,
            explanation_variant: req.explanation_variant.unwrap_or(self.config.default_explanation),
            display_seed: rand::random(),
            config,
        };

        let mut log = lock(&self.log);
        let event = log.stamp(body, self.clock.now_ms());
        let session = Session::create(&event, self.space.clone(), table)?;
        log.append(&event)?;
        drop(log);
        let shared = Arc::new(Mutex::new(session));
        self.sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(session_id.clone(), shared.clone());

        let mut s = lock(&shared);
        self.advance(&mut s)?;
        let test = self
            .test_payload(&s)?
            .ok_or(ServiceError::Core(fairprobe::Error::Exhausted))?;
        Ok(CreateSessionResponse {
            schema_version: SCHEMA_VERSION,
            session_id,
            scenario,
            hypotheses: s.config().hypotheses.clone(),
            posterior: s.posterior().clone(),
            test,
        })
    }

    pub fn current_test(&self, session_id: &str) -> Result<SessionView> {
        let session = self.session(session_id)?;
        let mut s = lock(&session);
        self.expire_if_idle(&mut s)?;
        if s.status == SessionStatus::Active && s.outstanding().is_none() {
            self.advance(&mut s)?;
        }
        self.view(&s)
    }

    pub fn submit_response(&self, session_id: &str, req: &SubmitResponseRequest) -> Result<SessionView> {
        let session = self.session(session_id)?;
        let mut s = lock(&session);
        self.expire_if_idle(&mut s)?;
        match s.status {
            SessionStatus::Active => {}
            SessionStatus::Completed => {
                return Err(ServiceError::Conflict(format!("session {session_id} is already completed")))
            }
            SessionStatus::Aborted => return Err(ServiceError::Gone(format!("session {session_id} was aborted"))),
        }
        if s.outstanding().is_none() {
            self.advance(&mut s)?;
        }
        match s.outstanding() {
            Some(id) if id == req.test_id => {}
            Some(id) => {
                return Err(ServiceError::Conflict(format!(
                    "test {} is not outstanding; the current test is {id}",
                    req.test_id
                )))
            }
            None => return Err(ServiceError::Conflict(format!("session {session_id} has no outstanding test"))),
        }
        let choice: Choice = req
            .choice
            .parse()
            .map_err(|_| ServiceError::Validation(format!("choice must be A1 or A2, got '{}'", req.choice)))?;
        let explanation = req
            .explanation
            .clone()
            .ok_or_else(|| ServiceError::Validation("an explanation is required".into()))?;
        let matches_variant = matches!(
            (&explanation, s.variant),
            (fairprobe::study::Explanation::FreeText { .. }, crate::config::ExplanationVariant::FreeText)
                | (fairprobe::study::Explanation::Structured { .. }, crate::config::ExplanationVariant::Structured)
        );
        if !matches_variant {
            return Err(ServiceError::Validation(format!(
                "this session collects {:?} explanations",
                s.variant
            )));
        }
        explanation
            .validate(&s.config().hypotheses)
            .map_err(|e| ServiceError::Validation(e.to_string()))?;

        let body = EventBody::ResponseRecorded {
            session_id: s.id.clone(),
            test_id: req.test_id,
            choice,
            explanation,
        };
        let prepared = s.clone();
        self.commit(&mut s, prepared, body)?;
        self.advance(&mut s)?;
        self.view(&s)
    }

    /// Stores optional responder demographics; allowed in any state.
    pub fn record_demographics(&self, session_id: &str, demographics: Demographics) -> Result<Ack> {
        let session = self.session(session_id)?;
        let mut s = lock(&session);
        let body = EventBody::DemographicsRecorded {
            session_id: s.id.clone(),
            demographics,
        };
        let prepared = s.clone();
        self.commit(&mut s, prepared, body)?;
        Ok(Ack {
            schema_version: SCHEMA_VERSION,
            session_id: session_id.to_string(),
        })
    }

    pub fn submit_survey(&self, req: &SurveyRequest) -> Result<SurveyRecord> {
        let scenario = self.enabled(&req.scenario)?;
        if !scenario.is_survey() {
            return Err(ServiceError::BadRequest(format!("scenario '{scenario}' has no survey")));
        }
        let chosen: SurveyChoice = req
            .chosen
            .parse()
            .map_err(|_| ServiceError::Validation(format!("chosen must be A1, A2 or A3, got '{}'", req.chosen)))?;
        let response = SurveyResponse {
            scenario,
            chosen,
            demographics: req.demographics.clone(),
        };
        let survey_id = token();
        let record = survey_record(survey_id.clone(), response.clone());
        let mut log = lock(&self.log);
        let event = log.stamp(EventBody::SurveySubmitted { survey_id, response }, self.clock.now_ms());
        log.append(&event)?;
        lock(&self.surveys).push(record.clone());
        Ok(record)
    }

    /// Line-delimited export. Sessions appear in completion order, surveys
    /// in submission order; demographics only when asked for.
    pub fn export(&self, query: ExportQuery) -> Result<String> {
        let mut out = Vec::new();
        match query.kind {
            ExportKind::Sessions => {
                let mut records = Vec::new();
                for id in self.session_ids() {
                    let session = self.session(&id)?;
                    let s = lock(&session);
                    if let Some(seq) = s.completed_seq {
                        records.push((seq, s.record(query.include_demographics)));
                    }
                }
                records.sort_by_key(|r| r.0);
                let records: Vec<_> = records.into_iter().map(|r| r.1).collect();
                fairprobe::study::write_ndjson(&records, &mut out)?;
            }
            ExportKind::Surveys => {
                let records: Vec<SurveyRecord> = lock(&self.surveys)
                    .iter()
                    .map(|r| SurveyRecord {
                        demographics: if query.include_demographics {
                            r.demographics.clone()
                        } else {
                            None
                        },
                        ..r.clone()
                    })
                    .collect();
                fairprobe::study::write_ndjson(&records, &mut out)?;
            }
        }
        Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
    }

    /// All logged events of one session, read back through the index.
    pub fn session_events(&self, session_id: &str) -> Result<Vec<Event>> {
        lock(&self.log).session_events(session_id)
    }

    /// Engine configuration a session runs with.
    pub fn session_config(&self, session_id: &str) -> Result<EngineConfig> {
        let session = self.session(session_id)?;
        let config = lock(&session).config().clone();
        Ok(config)
    }
}

fn survey_record(survey_id: String, response: SurveyResponse) -> SurveyRecord {
    SurveyRecord {
        schema_version: SCHEMA_VERSION,
        survey_id,
        scenario: response.scenario,
        stakes: response.scenario.stakes(),
        chosen: response.chosen,
        demographics: response.demographics,
    }
}
