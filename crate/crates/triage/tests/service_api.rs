use std::collections::BTreeMap;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use migtriage::default_experiment_config;
use migtriage::files::ModelEnvelope;
use migtriage::service::{router, AppState, Role, ServiceConfig};
use migtriage::store::RiskAssessment;
use migtriage_core::{build_layout, classify, confusion, encode_profile, sample_population, Matrix, MigrantProfile};
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

const MIGRANT: &str = "tok-migrant";
const WORKER: &str = "tok-worker";
const POLICY: &str = "tok-policy";
const RESEARCHER: &str = "tok-researcher";

fn app() -> (TempDir, AppState, Router) {
    let dir = tempfile::tempdir().unwrap();
    let tokens = BTreeMap::from([
        (MIGRANT.to_string(), Role::Migrant),
        (WORKER.to_string(), Role::HealthWorker),
        (POLICY.to_string(), Role::PolicyMaker),
        (RESEARCHER.to_string(), Role::Researcher),
    ]);
    let state = AppState::open(ServiceConfig::with_defaults(dir.path().join("data"), tokens)).unwrap();
    let app = router(state.clone());
    (dir, state, app)
}

async fn call(app: &Router, method: &str, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("X-Role-Token", t);
    }
    let body = match body {
        Some(v) => Body::from(serde_json::to_vec(&v).unwrap()),
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, v)
}

fn payload(p: &MigrantProfile) -> Value {
    json!({
        "age": p.age, "sex": p.sex, "city_of_birth": p.city_of_birth, "current_city": p.current_city,
        "duration_months": p.duration_months, "marital_status": p.marital_status,
        "accompanying_adult": p.accompanying_adult,
    })
}

fn profiles(n: usize, seed: u64) -> Vec<MigrantProfile> {
    sample_population(&default_experiment_config().generation.population, n, seed)
}

async fn submit_all(app: &Router, ps: &[MigrantProfile]) {
    for p in ps {
        let (s, v) = call(app, "POST", "/api/surveys", Some(MIGRANT), Some(payload(p))).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
    }
}

async fn train_and_wait(app: &Router, body: Value) -> Value {
    let (s, v) = call(app, "POST", "/api/models/train", Some(RESEARCHER), Some(body)).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    let url = format!("/api/jobs/{}", v["job_id"]);
    for _ in 0..600 {
        let (_, job) = call(app, "GET", &url, Some(RESEARCHER), None).await;
        if job["state"] != "running" {
            return job;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("training job did not finish");
}

/// (method, path, roles allowed), written out independently of the service's
/// own table.
fn documented_matrix() -> Vec<(&'static str, &'static str, &'static [&'static str])> {
    vec![
        ("POST", "/api/surveys", &[MIGRANT]),
        ("GET", "/api/surveys", &[WORKER, POLICY, RESEARCHER]),
        ("POST", "/api/models/train", &[RESEARCHER]),
        ("GET", "/api/jobs/1", &[RESEARCHER]),
        ("GET", "/api/models/m1/report", &[WORKER, POLICY, RESEARCHER]),
        ("POST", "/api/models/m1/assess", &[WORKER, RESEARCHER]),
        ("GET", "/api/analytics/summary", &[POLICY, RESEARCHER]),
        ("GET", "/api/tips", &[MIGRANT, WORKER, POLICY, RESEARCHER]),
        ("GET", "/api/schema", &[MIGRANT, WORKER, POLICY, RESEARCHER]),
        ("POST", "/api/labels", &[WORKER, RESEARCHER]),
    ]
}

#[tokio::test]
async fn authorization_matrix_holds_for_every_endpoint_and_role() {
    let (_dir, _state, app) = app();
    for (method, path, allowed) in documented_matrix() {
        // A body that cannot start real work: training is refused for lack of data.
        let body = (method == "POST").then(|| json!({ "n_total": 10 }));
        let (s, v) = call(&app, method, path, None, body.clone()).await;
        assert_eq!(s, StatusCode::UNAUTHORIZED, "{method} {path} without token");
        assert_eq!(v["code"], "unauthenticated");
        let (s, _) = call(&app, method, path, Some("nope"), body.clone()).await;
        assert_eq!(s, StatusCode::UNAUTHORIZED, "{method} {path} with unknown token");
        for token in [MIGRANT, WORKER, POLICY, RESEARCHER] {
            let (s, v) = call(&app, method, path, Some(token), body.clone()).await;
            if allowed.contains(&token) {
                assert!(
                    s != StatusCode::FORBIDDEN && s != StatusCode::UNAUTHORIZED,
                    "{method} {path} as {token}: {s} {v}"
                );
            } else {
                assert_eq!(s, StatusCode::FORBIDDEN, "{method} {path} as {token}");
                assert_eq!(v["code"], "forbidden");
                assert!(v["message"].is_string());
            }
        }
    }
}

#[tokio::test]
async fn submit_returns_id_and_matching_tips() {
    let (_dir, _state, app) = app();
    let p = json!({
        "age": 25, "sex": "M", "city_of_birth": "TAS", "current_city": "ALA",
        "duration_months": 20, "marital_status": "married", "accompanying_adult": false
    });
    let (s, v) = call(&app, "POST", "/api/surveys", Some(MIGRANT), Some(p)).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(v["id"], 1);
    let ids: Vec<&str> = v["tips"].as_array().unwrap().iter().map(|t| t["id"].as_str().unwrap()).collect();
    // Predicate oracle: T1 needs accompanying_adult = false, T5 needs age >= 18.
    assert_eq!(ids, ["T1", "T5"]);

    let bad = json!({
        "age": -3, "sex": "M", "city_of_birth": "TAS", "current_city": "ALA",
        "duration_months": 20, "marital_status": "married", "accompanying_adult": true
    });
    let (s, v) = call(&app, "POST", "/api/surveys", Some(MIGRANT), Some(bad)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "validation_failed");
    assert_eq!(v["fields"][0]["field"], "age");
    assert_eq!(v["fields"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn tips_preview_and_schema() {
    let (_dir, _state, app) = app();
    let (s, v) = call(&app, "GET", "/api/tips", Some(MIGRANT), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["tips"].as_array().unwrap().len(), 5);
    let preview = r#"{"age":15,"sex":"F","city_of_birth":"KLA","current_city":"NBO","duration_months":30,"marital_status":"married","accompanying_adult":true}"#;
    let uri = format!("/api/tips?preview={}", preview.replace('{', "%7B").replace('}', "%7D").replace('"', "%22"));
    let (s, v) = call(&app, "GET", &uri, Some(MIGRANT), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let ids: Vec<&str> = v["tips"].as_array().unwrap().iter().map(|t| t["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["T2"]);

    let (s, v) = call(&app, "GET", "/api/schema", Some(WORKER), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["questions"].as_array().unwrap().len(), 27);
}

#[tokio::test]
async fn pagination_and_page_errors() {
    let (_dir, _state, app) = app();
    let (s, v) = call(&app, "GET", "/api/surveys?page=1", Some(WORKER), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["items"].as_array().unwrap().len(), 0);

    submit_all(&app, &profiles(25, 3)).await;
    let sizes: Vec<usize> = futures_pages(&app).await;
    assert_eq!(sizes, [10, 10, 5]);
    let (s, v) = call(&app, "GET", "/api/surveys?page=4", Some(WORKER), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "invalid_page");
    let (s, _) = call(&app, "GET", "/api/surveys?page=0", Some(WORKER), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "GET", "/api/surveys?page=x", Some(WORKER), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (_, v) = call(&app, "GET", "/api/surveys?page=1&sort=recency", Some(WORKER), None).await;
    assert_eq!(v["items"][0]["id"], 25);
}

async fn futures_pages(app: &Router) -> Vec<usize> {
    let mut out = Vec::new();
    for page in 1..=3 {
        let (s, v) = call(app, "GET", &format!("/api/surveys?page={page}"), Some(WORKER), None).await;
        assert_eq!(s, StatusCode::OK);
        out.push(v["items"].as_array().unwrap().len());
    }
    out
}

#[tokio::test]
async fn free_text_is_hidden_from_policy_makers_and_researchers() {
    let (_dir, state, app) = app();
    let schema = &state.config.experiment.schema;
    let free = schema
        .questions()
        .iter()
        .find(|q| q.answer_kind == migtriage_core::AnswerKind::FreeText)
        .unwrap()
        .id
        .clone();
    let mut p = payload(&profiles(1, 9)[0]);
    p[&free] = json!("my name is Jo");
    let (s, _) = call(&app, "POST", "/api/surveys", Some(MIGRANT), Some(p)).await;
    assert_eq!(s, StatusCode::CREATED);
    let (_, v) = call(&app, "GET", "/api/surveys", Some(WORKER), None).await;
    assert_eq!(v["items"][0]["profile"][&free], "my name is Jo");
    for token in [POLICY, RESEARCHER] {
        let (_, v) = call(&app, "GET", "/api/surveys", Some(token), None).await;
        assert!(v["items"][0]["profile"].get(&free).is_none(), "{token}: {v}");
        assert_eq!(v["items"][0]["profile"]["age"], json!(profiles(1, 9)[0].age));
    }
}

#[tokio::test]
async fn empty_store_analytics_and_assessment() {
    let (_dir, _state, app) = app();
    let (s, v) = call(&app, "GET", "/api/analytics/summary", Some(POLICY), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["total_records"], 0);
    assert_eq!(v["counts_by_city"], json!({}));
    assert!(v["importance"].is_null());
    assert!(v["active_model"].is_null());

    let job = train_and_wait(&app, json!({ "kind": "gradient_boosted_trees" })).await;
    assert_eq!(job["state"], "succeeded", "{job}");
    let (s, v) = call(&app, "POST", "/api/models/m1/assess", Some(WORKER), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["assessed"], 0);
}

#[tokio::test]
async fn training_errors_are_reported() {
    let (_dir, _state, app) = app();
    let (s, v) = call(&app, "POST", "/api/models/train", Some(RESEARCHER), Some(json!({ "n_total": 10 }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "insufficient_data");
    assert!(v["message"].as_str().unwrap().starts_with("dataset: "), "{v}");

    let (s, v) = call(&app, "POST", "/api/models/train", Some(RESEARCHER), Some(json!({ "source": "stored" }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");

    let (s, _) = call(&app, "POST", "/api/models/train", Some(RESEARCHER), Some(json!({ "kind": "tree" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, v) = call(&app, "GET", "/api/jobs/77", Some(RESEARCHER), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "job_not_found");
    let (s, v) = call(&app, "GET", "/api/models/m9/report", Some(RESEARCHER), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "model_not_found");
}

#[tokio::test]
async fn identical_publishes_give_identical_reports() {
    let (_dir, _state, app) = app();
    let a = train_and_wait(&app, json!({ "kind": "random_forest" })).await;
    let b = train_and_wait(&app, json!({ "kind": "random_forest" })).await;
    assert_eq!(a["state"], "succeeded", "{a}");
    assert_eq!(a["result"]["report"], b["result"]["report"]);
    assert_eq!(a["result"]["model"]["id"], "m1");
    assert_eq!(b["result"]["model"]["id"], "m2");
    assert!(a["result"]["report"]["recall"].as_f64().unwrap() >= 0.8);

    let (s, r1) = call(&app, "GET", "/api/models/m1/report", Some(POLICY), None).await;
    assert_eq!(s, StatusCode::OK);
    let (_, r2) = call(&app, "GET", "/api/models/m2/report", Some(POLICY), None).await;
    assert_eq!(r1["report"], r2["report"]);
    assert_eq!(r1["importance"][0]["field"], "age");
}

#[tokio::test]
async fn assessment_matches_direct_classification() {
    let (_dir, state, app) = app();
    let ps = profiles(200, 41);
    submit_all(&app, &ps).await;
    let job = train_and_wait(&app, json!({ "kind": "random_forest" })).await;
    assert_eq!(job["state"], "succeeded", "{job}");

    let (s, v) = call(&app, "POST", "/api/models/m1/assess", Some(WORKER), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["assessed"], 200);
    assert_eq!(v["written"], true);

    // Independent path: encode the submitted profiles and classify them.
    let config = default_experiment_config();
    let layout = build_layout(config.schema.questions(), &config.registry).unwrap();
    let mut data = Vec::new();
    for p in &ps {
        data.extend(encode_profile(p, &layout).unwrap().values);
    }
    let model = state.store.load_model("m1").unwrap().envelope.model;
    let predicted = classify(&model, &Matrix::new(ps.len(), layout.len(), data)).unwrap();
    let expected: Vec<u64> = (1..=200u64).filter(|id| predicted[*id as usize - 1]).collect();

    let flagged: Vec<u64> = {
        let st = state.store.read();
        st.assessments.values().filter(|a| a.flagged).map(|a| a.record_id).collect()
    };
    assert_eq!(flagged, expected);
    let truth: Vec<bool> = ps.iter().map(|p| p.age < 18).collect();
    let cm = confusion(&truth, &predicted).unwrap();
    assert_eq!(v["flagged"].as_u64().unwrap(), cm.predicted_positive());

    // Idempotent: the second run writes nothing and changes nothing.
    let log_len = std::fs::metadata(state.store.log_path()).unwrap().len();
    let (_, v2) = call(&app, "POST", "/api/models/m1/assess", Some(RESEARCHER), None).await;
    assert_eq!(v2["written"], false);
    assert_eq!(v2["flagged"], v["flagged"]);
    assert_eq!(std::fs::metadata(state.store.log_path()).unwrap().len(), log_len);

    // risk_desc puts flagged records first, scores descending.
    let (_, page) = call(&app, "GET", "/api/surveys?sort=risk_desc", Some(WORKER), None).await;
    let items = page["items"].as_array().unwrap();
    let keys: Vec<(bool, f64)> = items
        .iter()
        .map(|i| (i["assessment"]["flagged"].as_bool().unwrap(), i["assessment"]["score"].as_f64().unwrap()))
        .collect();
    for w in keys.windows(2) {
        assert!(w[0].0 >= w[1].0);
        if w[0].0 == w[1].0 {
            assert!(w[0].1 >= w[1].1);
        }
    }
    assert_eq!(items[0]["assessment"]["top_factors"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn stale_schema_model_is_rejected() {
    let (_dir, state, app) = app();
    submit_all(&app, &profiles(3, 5)).await;
    let job = train_and_wait(&app, json!({ "kind": "random_forest" })).await;
    assert_eq!(job["state"], "succeeded");
    let published = state.store.load_model("m1").unwrap();
    let old = ModelEnvelope {
        schema_version: "0".into(),
        ..published.envelope
    };
    state.store.publish(old, published.report, published.importance).unwrap();
    let (s, v) = call(&app, "POST", "/api/models/m2/assess", Some(WORKER), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["code"], "schema_mismatch");
}

#[tokio::test]
async fn per_city_flagged_rates() {
    let (_dir, state, app) = app();
    let base = profiles(1, 11)[0].clone();
    let mut ps = Vec::new();
    for (city, n) in [("ALA", 10), ("NBO", 20)] {
        for _ in 0..n {
            ps.push(MigrantProfile {
                current_city: city.into(),
                ..base.clone()
            });
        }
    }
    submit_all(&app, &ps).await;
    let job = train_and_wait(&app, json!({ "kind": "random_forest" })).await;
    assert_eq!(job["state"], "succeeded");
    // Fixture: flag records 1-3 (ALA) and 11 (NBO).
    let items = (1..=30u64)
        .map(|id| RiskAssessment {
            record_id: id,
            score: 0.5,
            flagged: matches!(id, 1..=3 | 11),
            model_id: "m1".into(),
            top_factors: vec![],
            assessed_at_ms: 0,
        })
        .collect();
    state.store.record_assessments("m1", items).unwrap();

    let (s, v) = call(&app, "GET", "/api/analytics/summary", Some(RESEARCHER), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["counts_by_city"], json!({ "ALA": 10, "NBO": 20 }));
    assert_eq!(v["flagged_rate_by_city"]["ALA"]["rate"], 0.30);
    assert_eq!(v["flagged_rate_by_city"]["NBO"]["rate"], 0.05);
    assert_eq!(v["active_model"]["id"], "m1");
    assert!(v["importance"].as_array().is_some_and(|a| !a.is_empty()));
    assert!(v["report"]["f1"].is_number());
    assert!(v.get("items").is_none());
}

#[tokio::test]
async fn stored_labels_train_a_model() {
    let (_dir, _state, app) = app();
    let ps = profiles(120, 77);
    submit_all(&app, &ps).await;
    let labels: BTreeMap<String, bool> = ps
        .iter()
        .enumerate()
        .map(|(i, p)| ((i + 1).to_string(), p.age < 18 || !p.accompanying_adult))
        .collect();
    let (s, v) = call(&app, "POST", "/api/labels", Some(WORKER), Some(json!({ "labels": labels }))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["labeled"], 120);
    let (s, v) = call(&app, "POST", "/api/labels", Some(WORKER), Some(json!({ "labels": { "999": true } }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["code"], "unknown_record");

    let job = train_and_wait(&app, json!({ "source": "stored", "kind": "random_forest" })).await;
    assert_eq!(job["state"], "succeeded", "{job}");
    let cm = &job["result"]["report"]["confusion"];
    let total: u64 = ["tn", "fp", "fn", "tp"].iter().map(|k| cm[k].as_u64().unwrap()).sum();
    assert_eq!(total, 18);
}

#[tokio::test]
async fn unknown_path_uses_error_body() {
    let (_dir, _state, app) = app();
    let (s, v) = call(&app, "GET", "/api/nothing", Some(WORKER), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "not_found");
}
