mod common;

use std::sync::Arc;

use axum::http::StatusCode;
use common::{call, call_raw, free_text, open};
use fairprobe::engine::Responder;
use fairprobe::metrics::{compute_benefit, generalized_entropy, FairnessNotion, LabelVector};
use fairprobe::report::{summary_table, survey_tally};
use fairprobe::simulation::NotionFollower;
use fairprobe::study::{read_ndjson, SessionRecord, SurveyResponse};
use fairprobe::{ResponseModelConfig, Roster, Test};
use fairprobe_service::{router, ManualClock, SystemClock};
use serde_json::{json, Value};

fn app(dir: &std::path::Path) -> axum::Router {
    router(open(dir, Arc::new(SystemClock)))
}

fn test_id(v: &Value) -> u64 {
    v["test"]["test_id"].as_u64().expect("payload has a test")
}

#[tokio::test]
async fn create_defaults_to_four_notions_with_uniform_prior() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, created) = call(&app, "POST", "/sessions", Some(json!({"scenario": "crime_risk"}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(created["schema_version"], 1);
    assert_eq!(created["hypotheses"], json!(["DP", "EP", "FDP", "FNP"]));
    assert_eq!(created["posterior"], json!([0.25, 0.25, 0.25, 0.25]));
    assert_eq!(created["test"]["schema_version"], 1);
    assert_eq!(created["test"]["step"], 1);
    assert_eq!(created["test"]["max_tests"], 20);

    let id = created["session_id"].as_str().unwrap();
    let (status, view) = call(&app, "GET", &format!("/sessions/{id}/current-test"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(view["status"], "active");
    assert_eq!(view["posterior"], json!([0.25, 0.25, 0.25, 0.25]));
    assert_eq!(view["test"], created["test"]);
}

#[tokio::test]
async fn appendix_set_has_five_notions() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (_, created) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"scenario": "cancer_risk", "appendix_set": true})),
    )
    .await;
    assert_eq!(created["hypotheses"], json!(["EP", "FPP", "FNP", "FDP", "FOP"]));
    assert_eq!(created["posterior"], json!([0.2, 0.2, 0.2, 0.2, 0.2]));
    assert_eq!(created["test"]["disparities"].as_array().unwrap().len(), 5);
}

#[tokio::test]
async fn argmax_first_test_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let req = json!({"scenario": "crime_risk", "first_test": {"kind": "argmax"}});
    let (_, a) = call(&app, "POST", "/sessions", Some(req.clone())).await;
    let (_, b) = call(&app, "POST", "/sessions", Some(req)).await;
    assert_ne!(a["session_id"], b["session_id"]);
    assert_eq!(test_id(&a), test_id(&b));
}

#[tokio::test]
async fn seeded_random_first_test_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let req = |seed: u64| json!({"scenario": "crime_risk", "first_test": {"kind": "random", "seed": seed}});
    let (_, a) = call(&app, "POST", "/sessions", Some(req(5))).await;
    let (_, b) = call(&app, "POST", "/sessions", Some(req(5))).await;
    assert_eq!(test_id(&a), test_id(&b));
    let ids: std::collections::HashSet<u64> = futures_ids(&app).await;
    assert!(ids.len() > 1, "unseeded first tests should vary");
}

async fn futures_ids(app: &axum::Router) -> std::collections::HashSet<u64> {
    let mut ids = std::collections::HashSet::new();
    for _ in 0..8 {
        let (_, c) = call(app, "POST", "/sessions", Some(json!({"scenario": "crime_risk"}))).await;
        ids.insert(test_id(&c));
    }
    ids
}

#[tokio::test]
async fn request_errors() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, body) = call(&app, "POST", "/sessions", Some(json!({"scenario": "dog_walking"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["schema_version"], 1);
    assert_eq!(body["error"], "bad_request");
    let (status, _) = call(&app, "POST", "/sessions", Some(json!({"scenario": "flu_severity"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call_raw(&app, "POST", "/sessions", Some("{not json".into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "GET", "/sessions/nope/current-test", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"scenario": "crime_risk", "max_tests": 0})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn submission_rules() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (_, created) = call(&app, "POST", "/sessions", Some(json!({"scenario": "crime_risk"}))).await;
    let sid = created["session_id"].as_str().unwrap().to_string();
    let tid = test_id(&created);
    let uri = format!("/sessions/{sid}/responses");

    let (status, body) = call(&app, "POST", &uri, Some(json!({"test_id": tid, "choice": "A1"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    let blank = json!({"test_id": tid, "choice": "A1", "explanation": {"variant": "free_text", "body": "  "}});
    assert_eq!(call(&app, "POST", &uri, Some(blank)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let structured = json!({"test_id": tid, "choice": "A1",
        "explanation": {"variant": "structured", "attribute": "race", "metric": "DP"}});
    assert_eq!(call(&app, "POST", &uri, Some(structured)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(
        call(&app, "POST", &uri, Some(free_text("A3", tid))).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    assert_eq!(
        call(&app, "POST", &uri, Some(free_text("A1", tid + 1))).await.0,
        StatusCode::CONFLICT
    );

    let (status, first) = call(&app, "POST", &uri, Some(free_text("A1", tid))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(first["answered"], 1);
    let before = call(&app, "GET", &format!("/sessions/{sid}/current-test"), None).await.1;

    // a retried or duplicated submission changes nothing
    let (status, body) = call(&app, "POST", &uri, Some(free_text("A2", tid))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "conflict");
    let after = call(&app, "GET", &format!("/sessions/{sid}/current-test"), None).await.1;
    assert_eq!(before, after);
    assert_eq!(after["answered"], 1);
}

#[tokio::test]
async fn structured_variant_accepts_offered_metrics_only() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (_, created) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({"scenario": "crime_risk", "explanation_variant": "structured"})),
    )
    .await;
    assert_eq!(created["test"]["explanation_variant"], "structured");
    assert_eq!(created["test"]["attributes"], json!(["gender", "race", "intersection"]));
    let sid = created["session_id"].as_str().unwrap();
    let tid = test_id(&created);
    let uri = format!("/sessions/{sid}/responses");
    let bad = json!({"test_id": tid, "choice": "A2",
        "explanation": {"variant": "structured", "attribute": "gender", "metric": "FOP"}});
    assert_eq!(call(&app, "POST", &uri, Some(bad)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(
        call(&app, "POST", &uri, Some(free_text("A2", tid))).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    let good = json!({"test_id": tid, "choice": "A2",
        "explanation": {"variant": "structured", "attribute": "intersection", "metric": "FNP"}});
    assert_eq!(call(&app, "POST", &uri, Some(good)).await.0, StatusCode::OK);
}

#[tokio::test]
async fn payload_disparities_match_core_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let roster = Roster::default_roster();
    let grouping = roster.grouping(fairprobe::GroupingDimension::Intersection);
    let (_, created) = call(&app, "POST", "/sessions", Some(json!({"scenario": "crime_risk"}))).await;
    let t = &created["test"];
    assert_eq!(t["roster"].as_array().unwrap().len(), 10);
    assert_eq!(t["groups"], json!(grouping.labels));
    let lv = |v: &Value| serde_json::from_value::<LabelVector>(v.clone()).unwrap();
    let (truth, a1, a2) = (lv(&t["truth"]), lv(&t["a1"]), lv(&t["a2"]));
    let disparities = t["disparities"].as_array().unwrap();
    assert_eq!(disparities.len(), 4);
    for d in disparities {
        let notion: FairnessNotion = serde_json::from_value(d["notion"].clone()).unwrap();
        for (key, pred, ent) in [("a1", &a1, "entropy_a1"), ("a2", &a2, "entropy_a2")] {
            let b = compute_benefit(notion, &truth, pred, &grouping).unwrap();
            let shipped: Vec<f64> = serde_json::from_value(d[key]["values"].clone()).unwrap();
            assert_eq!(shipped, b.values);
            assert_eq!(d[ent].as_f64().unwrap(), generalized_entropy(&b.values).unwrap());
        }
    }
}

async fn complete(app: &axum::Router, scenario: &str, choose: impl Fn(&Value) -> &'static str) -> (String, Value) {
    let (_, created) = call(app, "POST", "/sessions", Some(json!({"scenario": scenario}))).await;
    let sid = created["session_id"].as_str().unwrap().to_string();
    let mut current = created;
    for step in 1..=20 {
        let tid = test_id(&current);
        assert_eq!(current["test"]["step"], step);
        let choice = choose(&current["test"]);
        let (status, next) = call(app, "POST", &format!("/sessions/{sid}/responses"), Some(free_text(choice, tid))).await;
        assert_eq!(status, StatusCode::OK, "{next}");
        assert_eq!(next["answered"], step);
        current = next;
    }
    (sid, current)
}

#[tokio::test]
async fn twentieth_response_completes_with_return_code() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (sid, done) = complete(&app, "crime_risk", |t| {
        if t["test_id"].as_u64().unwrap() % 2 == 0 { "A1" } else { "A2" }
    })
    .await;
    assert_eq!(done["status"], "completed");
    assert!(done.get("test").is_none());
    assert!(done["classification"]["result"].is_string());
    let code = done["return_code"].as_str().unwrap();
    assert!(code.starts_with("FP-"));

    let (status, view) = call(&app, "GET", &format!("/sessions/{sid}/current-test"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(view["return_code"], code);
    let (status, _) = call(&app, "POST", &format!("/sessions/{sid}/responses"), Some(free_text("A1", 0))).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn display_order_does_not_change_canonical_choice() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (sid, _) = complete(&app, "cancer_risk", |_| "A1").await;
    let export = call_raw(&app, "GET", "/export", None).await.1;
    let records: Vec<SessionRecord> = read_ndjson(export.as_bytes()).unwrap();
    let record = records.iter().find(|r| r.session_id == sid).unwrap();
    assert!(record.steps.iter().all(|s| s.choice == fairprobe::Choice::A1));
    let orders: std::collections::HashSet<_> = record.steps.iter().map(|s| s.display_order.unwrap()).collect();
    assert_eq!(orders.len(), 2, "both display orders should occur over 20 tests");
}

#[tokio::test]
async fn export_privacy_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let mut ids = Vec::new();
    for _ in 0..3 {
        ids.push(complete(&app, "crime_risk", |_| "A2").await.0);
    }
    // an unfinished session is not exported
    call(&app, "POST", "/sessions", Some(json!({"scenario": "crime_risk"}))).await;
    let d = json!({"age_bracket": "25-34", "gender": "female", "race": "asian",
        "education": "bachelor", "political_leaning": "moderate"});
    let (status, ack) = call(&app, "POST", &format!("/sessions/{}/demographics", ids[0]), Some(d)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack["schema_version"], 1);

    let (status, plain) = call_raw(&app, "GET", "/export", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(plain.lines().count(), 3);
    assert!(!plain.contains("demographics"));
    let records: Vec<SessionRecord> = read_ndjson(plain.as_bytes()).unwrap();
    assert_eq!(records.iter().map(|r| r.session_id.clone()).collect::<Vec<_>>(), ids);
    assert!(records.iter().all(|r| r.schema_version == 1 && r.return_code.is_some()));
    assert!(records.iter().all(|r| r.steps.iter().all(|s| s.explanation.is_some())));
    assert_eq!(call_raw(&app, "GET", "/export", None).await.1, plain);

    let full = call_raw(&app, "GET", "/export?kind=sessions&include_demographics=true", None).await.1;
    let records: Vec<SessionRecord> = read_ndjson(full.as_bytes()).unwrap();
    assert_eq!(records[0].demographics.as_ref().unwrap().race.as_deref(), Some("asian"));
    assert!(records[1].demographics.is_none());

    let table = summary_table(&records, 0.8);
    assert_eq!(table.rows.iter().map(|r| r.total).sum::<usize>(), 3);
    assert_eq!(
        call_raw(&app, "GET", "/export?kind=bogus", None).await.0,
        StatusCode::BAD_REQUEST
    );
}

#[tokio::test]
async fn surveys() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, ack) = call(&app, "POST", "/surveys", Some(json!({"scenario": "flu_severity", "chosen": "A3"}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(ack["stakes"], "low");
    assert_eq!(ack["chosen"], "A3");
    assert_eq!(ack["schema_version"], 1);
    let (status, body) = call(&app, "POST", "/surveys", Some(json!({"scenario": "flu_severity", "chosen": "A4"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "validation");
    let (status, _) = call(&app, "POST", "/surveys", Some(json!({"scenario": "crime_risk", "chosen": "A1"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let picks = [("cancer_risk", "A1"), ("prison_sentencing", "A2"), ("bail_amount", "A3"), ("flu_severity", "A2")];
    for (scenario, chosen) in picks {
        let body = json!({"scenario": scenario, "chosen": chosen, "demographics": {"gender": "male"}});
        assert_eq!(call(&app, "POST", "/surveys", Some(body)).await.0, StatusCode::CREATED);
    }
    let export = call_raw(&app, "GET", "/export?kind=surveys", None).await.1;
    assert!(!export.contains("demographics"));
    let responses: Vec<SurveyResponse> = read_ndjson(export.as_bytes()).unwrap();
    assert_eq!(responses.len(), 5);
    let tally = survey_tally(&responses);
    assert_eq!(tally.iter().map(|r| r.counts.iter().sum::<usize>()).sum::<usize>(), 5);
    let with = call_raw(&app, "GET", "/export?kind=surveys&include_demographics=true", None).await.1;
    assert_eq!(with.matches("demographics").count(), 4);

    let (_, list) = call(&app, "GET", "/scenarios", None).await;
    assert_eq!(list["schema_version"], 1);
    assert_eq!(list["scenarios"].as_array().unwrap().len(), 5);
    let accuracies: Vec<u64> = list["survey_algorithms"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|a| ["accuracy", "female_accuracy", "male_accuracy"].map(|k| a[k].as_u64().unwrap()))
        .collect();
    assert_eq!(accuracies, vec![94, 89, 99, 91, 90, 92, 86, 86, 86]);
}

#[tokio::test]
async fn idle_sessions_are_aborted_after_a_day() {
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::new(1_000_000));
    let service = open_with(dir.path(), clock.clone());
    let app = router(service.clone());
    let (_, a) = call(&app, "POST", "/sessions", Some(json!({"scenario": "crime_risk"}))).await;
    let (_, b) = call(&app, "POST", "/sessions", Some(json!({"scenario": "crime_risk"}))).await;
    let (a, b) = (a["session_id"].as_str().unwrap().to_string(), b);
    clock.advance(23 * 3600 * 1000);
    let bid = b["session_id"].as_str().unwrap();
    call(&app, "POST", &format!("/sessions/{bid}/responses"), Some(free_text("A1", test_id(&b)))).await;
    clock.advance(2 * 3600 * 1000);
    assert_eq!(service.expire_idle().unwrap(), 1);

    let (_, view) = call(&app, "GET", &format!("/sessions/{a}/current-test"), None).await;
    assert_eq!(view["status"], "aborted");
    assert!(view.get("return_code").is_none());
    let (status, _) = call(&app, "POST", &format!("/sessions/{a}/responses"), Some(free_text("A1", 0))).await;
    assert_eq!(status, StatusCode::GONE);
    let (_, view) = call(&app, "GET", &format!("/sessions/{bid}/current-test"), None).await;
    assert_eq!(view["status"], "active");

    // expiry also happens lazily on access
    clock.advance(25 * 3600 * 1000);
    let (_, view) = call(&app, "GET", &format!("/sessions/{bid}/current-test"), None).await;
    assert_eq!(view["status"], "aborted");
    drop(app);
    drop(service);
    let reopened = open_with(dir.path(), clock);
    assert_eq!(reopened.expire_idle().unwrap(), 0);
}

fn open_with(dir: &std::path::Path, clock: Arc<ManualClock>) -> Arc<fairprobe_service::Service> {
    open(dir, clock)
}

#[tokio::test]
async fn dp_followers_through_the_api_are_matched_to_dp() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let roster = Roster::default_roster();
    let lv = |v: &Value| serde_json::from_value::<LabelVector>(v.clone()).unwrap();
    let runs = 15;
    let mut matched = 0;
    for seed in 0..runs {
        let mut follower = NotionFollower::new(FairnessNotion::DP, &roster, &ResponseModelConfig::default(), seed);
        let (_, mut current) = call(&app, "POST", "/sessions", Some(json!({"scenario": "crime_risk"}))).await;
        let sid = current["session_id"].as_str().unwrap().to_string();
        while let Some(t) = current.get("test").cloned() {
            let test = Test::new(t["test_id"].as_u64().unwrap() as usize, lv(&t["truth"]), lv(&t["a1"]), lv(&t["a2"])).unwrap();
            let choice = match follower.respond(&test).unwrap() {
                fairprobe::Choice::A1 => "A1",
                fairprobe::Choice::A2 => "A2",
            };
            current = call(&app, "POST", &format!("/sessions/{sid}/responses"), Some(free_text(choice, test.id as u64))).await.1;
        }
        if current["classification"]["result"] == "matched" && current["classification"]["notion"] == "DP" {
            matched += 1;
        }
    }
    assert!(matched * 2 > runs, "matched {matched} of {runs}");
}
