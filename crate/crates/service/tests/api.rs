use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use gridgame::agents::GreedyLine;
use gridgame::builtins;
use gridgame::environment::{Action, EnvConfig, Environment};
use gridgame_service::{router, AppState, ServiceConfig, SCHEMA_VERSION};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app() -> Router {
    router(AppState::new(ServiceConfig::default()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(match body {
            Some(b) => Body::from(b.to_string()),
            None => Body::empty(),
        })
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    assert_eq!(value["schema_version"], json!(SCHEMA_VERSION), "{value}");
    (status, value)
}

async fn create(app: &Router, body: Value) -> String {
    let (status, v) = call(app, "POST", "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

async fn crisis(app: &Router) -> String {
    create(app, json!({"case": "case4gs", "chronic": "case4gs-crisis"})).await
}

fn grid() -> gridgame::GridCase {
    builtins::grid("case4gs").unwrap()
}

fn noop() -> Value {
    serde_json::to_value(Action::do_nothing(&grid())).unwrap()
}

fn split() -> Value {
    let g = grid();
    let id = g.configurations(1).iter().position(|c| c.bus_b == 0b0110).unwrap();
    serde_json::to_value(Action::set_configuration(&g, 1, id)).unwrap()
}

fn disconnect(b: usize) -> Value {
    serde_json::to_value(Action::switch_line(&grid(), b, -1)).unwrap()
}

fn code(v: &Value) -> &str {
    v["error"]["code"].as_str().unwrap()
}

async fn to_t1(app: &Router, id: &str) {
    let (status, v) = call(app, "POST", &format!("/sessions/{id}/action"), Some(noop())).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["done"], json!(false));
}

#[tokio::test]
async fn initial_state_has_no_overflow() {
    let app = app();
    let (status, v) = call(&app, "POST", "/sessions", Some(json!({"case": "case4gs", "chronic": "case4gs-crisis"}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(v["step"], json!(0));
    assert_eq!(v["chronic_length"], json!(2));
    let ratios: Vec<f64> = serde_json::from_value(v["observation"]["relative_thermal_limits"].clone()).unwrap();
    assert_eq!(ratios.len(), 5);
    assert!(ratios.iter().all(|&r| r < 1.0));

    let id = v["session_id"].as_str().unwrap();
    let (status, o) = call(&app, "GET", &format!("/sessions/{id}/observation"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(o["observation"], v["observation"]);
}

#[tokio::test]
async fn creation_errors() {
    let app = app();
    let cases = [
        (json!({"case": "case9"}), StatusCode::NOT_FOUND, "unknown_case"),
        (json!({"case": "case4gs", "chronic": "storm"}), StatusCode::NOT_FOUND, "unknown_chronic"),
        (json!({"case": "case4gs", "chronic": "case118-daily"}), StatusCode::BAD_REQUEST, "bad_config"),
        (json!({"case": "case4gs", "config": {"gamma": 2.0}}), StatusCode::BAD_REQUEST, "bad_config"),
        (json!({"case": "case4gs", "config": {"colour": "red"}}), StatusCode::BAD_REQUEST, "bad_config"),
        (json!({"kase": "case4gs"}), StatusCode::BAD_REQUEST, "bad_request"),
    ];
    for (body, status, want) in cases {
        let (got, v) = call(&app, "POST", "/sessions", Some(body.clone())).await;
        assert_eq!((got, code(&v)), (status, want), "{body}");
    }
    let (status, v) = call(&app, "GET", "/sessions/nope/observation", None).await;
    assert_eq!((status, code(&v)), (StatusCode::NOT_FOUND, "unknown_session"));
}

#[tokio::test]
async fn config_overrides_apply() {
    let app = app();
    let id = create(&app, json!({"case": "case4gs", "chronic": "case4gs-crisis", "config": {"load_cut_reward": -7.0}})).await;
    to_t1(&app, &id).await;
    let (_, v) = call(&app, "POST", &format!("/sessions/{id}/action"), Some(noop())).await;
    assert_eq!(v["reward"]["total"], json!(-7.0));
}

#[tokio::test]
async fn do_nothing_at_t1_replays_the_cascade() {
    let app = app();
    let id = crisis(&app).await;
    to_t1(&app, &id).await;
    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/action"), Some(noop())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["done"], json!(true));
    assert_eq!(v["observation"], Value::Null);
    let frames = v["cascade_frames"].as_array().unwrap();
    assert_eq!(frames.len(), 3);
    assert_eq!(frames[0]["overflowed"], json!([0]));
    assert_eq!(frames[1]["overflowed"], json!([1, 3, 4]));
    assert_eq!(frames[1]["line_status"], json!([0, 1, 1, 1, 1]));
    assert_eq!(frames[2]["line_status"], json!([0, 0, 1, 0, 0]));
    assert_eq!(frames[2]["converged"], json!(false));
    assert_eq!(v["reward"]["total"], json!(EnvConfig::default().load_cut_reward));

    let (status, e) = call(&app, "POST", &format!("/sessions/{id}/action"), Some(noop())).await;
    assert_eq!((status, code(&e)), (StatusCode::CONFLICT, "session_finished"));
    let (status, e) = call(&app, "POST", &format!("/sessions/{id}/simulate"), Some(noop())).await;
    assert_eq!((status, code(&e)), (StatusCode::CONFLICT, "session_finished"));

    // The cut happened on the last step of the chronic, so reset rewinds.
    let (status, r) = call(&app, "POST", &format!("/sessions/{id}/reset"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(r["done"], json!(false));
    assert_eq!(r["finished"], json!(false));
    assert!(r["observation"].is_object());
    to_t1(&app, &id).await;
}

#[tokio::test]
async fn reset_after_a_mid_chronic_cut_continues() {
    let app = app();
    let id = create(&app, json!({"case": "case4gs", "chronic": "case4gs-relief"})).await;
    let (_, v) = call(&app, "POST", &format!("/sessions/{id}/action"), Some(noop())).await;
    assert_eq!(v["done"], json!(true));
    assert_eq!(v["finished"], json!(false));
    let (_, o) = call(&app, "GET", &format!("/sessions/{id}/observation"), None).await;
    assert_eq!(o["observation"], Value::Null);
    let (_, r) = call(&app, "POST", &format!("/sessions/{id}/reset"), None).await;
    assert_eq!(r["step"], json!(1));
    assert!(r["observation"].is_object());
    let (_, v) = call(&app, "POST", &format!("/sessions/{id}/action"), Some(disconnect(2))).await;
    assert_eq!(v["done"], json!(false), "{v}");
    assert_eq!(v["finished"], json!(false));
    let (_, v) = call(&app, "POST", &format!("/sessions/{id}/action"), Some(noop())).await;
    assert_eq!(v["done"], json!(false), "{v}");
    assert_eq!(v["finished"], json!(true));
}

#[tokio::test]
async fn node_split_at_t1_survives_without_frames() {
    let app = app();
    let id = crisis(&app).await;
    to_t1(&app, &id).await;
    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/action"), Some(split())).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["done"], json!(false));
    assert_eq!(v["cascade_frames"], json!([]));
    assert_eq!(v["overflowed_after_action"], json!([]));
    // The crisis chronic has two steps, so the game is now over.
    assert_eq!(v["finished"], json!(true));
    let (status, e) = call(&app, "POST", &format!("/sessions/{id}/action"), Some(noop())).await;
    assert_eq!((status, code(&e)), (StatusCode::CONFLICT, "session_finished"));
}

#[tokio::test]
async fn malformed_actions_name_the_field() {
    let app = app();
    let id = crisis(&app).await;
    let mut bad = split();
    bad["substation_choices"][1] = json!([1, 1, 0, 0]);
    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/action"), Some(bad)).await;
    assert_eq!((status, code(&v)), (StatusCode::UNPROCESSABLE_ENTITY, "bad_one_hot"));
    assert_eq!(v["error"]["detail"]["substation"], json!(1));

    let mut bad = noop();
    bad["line_switches"][3] = json!(4);
    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/simulate"), Some(bad)).await;
    assert_eq!((status, code(&v)), (StatusCode::UNPROCESSABLE_ENTITY, "bad_value"));
    assert_eq!(v["error"]["detail"]["branch"], json!(3));

    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/action"), Some(json!({"line_switches": []}))).await;
    assert_eq!((status, code(&v)), (StatusCode::BAD_REQUEST, "bad_request"));

    // Rejected actions leave the session where it was.
    let (_, o) = call(&app, "GET", &format!("/sessions/{id}/observation"), None).await;
    assert_eq!(o["step"], json!(0));
}

#[tokio::test]
async fn what_if_is_pure_and_coherent() {
    let app = app();
    let id = crisis(&app).await;
    to_t1(&app, &id).await;
    let uri = format!("/sessions/{id}/simulate");
    let (_, first) = call(&app, "POST", &uri, Some(split())).await;
    let (_, again) = call(&app, "POST", &uri, Some(split())).await;
    assert_eq!(first, again);
    assert_eq!(first["predicted_overflows"], json!([]));
    for b in 0..5 {
        call(&app, "POST", &uri, Some(disconnect(b))).await;
    }
    let (_, o) = call(&app, "GET", &format!("/sessions/{id}/observation"), None).await;
    assert_eq!(o["step"], json!(1));

    let (_, predicted) = call(&app, "POST", &uri, Some(noop())).await;
    assert_eq!(predicted["predicted_overflows"], json!([0]));
    assert_eq!(predicted["cascade_frames"].as_array().unwrap().len(), 3);
    let (_, played) = call(&app, "POST", &format!("/sessions/{id}/action"), Some(noop())).await;
    assert_eq!(predicted["reward"], played["reward"]);
    assert_eq!(predicted["cascade_frames"], played["cascade_frames"]);
}

#[tokio::test]
async fn what_if_matches_greedy_evaluation() {
    let app = app();
    let id = crisis(&app).await;
    to_t1(&app, &id).await;

    let g = grid();
    let mut chronic = builtins::chronic("case4gs-crisis", &g).unwrap().unwrap();
    let mut env = Environment::new(&g, EnvConfig::default(), chronic.next().unwrap()).unwrap();
    env.step(&Action::do_nothing(&g), chronic.next().as_ref()).unwrap();
    let candidates = GreedyLine { with_noop: false }.candidates(&g);
    assert_eq!(candidates.len(), 5);
    for (b, a) in candidates.iter().enumerate() {
        let want = env.simulate(a).unwrap();
        let (_, v) = call(&app, "POST", &format!("/sessions/{id}/simulate"), Some(serde_json::to_value(a).unwrap())).await;
        assert_eq!(v["reward"], serde_json::to_value(want).unwrap(), "branch {b}");
    }
}

#[tokio::test]
async fn sessions_are_isolated() {
    // Interleaved on one server.
    let shared = app();
    let a = crisis(&shared).await;
    let b = crisis(&shared).await;
    assert_ne!(a, b);
    to_t1(&shared, &a).await;
    to_t1(&shared, &b).await;
    let (_, ra) = call(&shared, "POST", &format!("/sessions/{a}/action"), Some(noop())).await;
    let (_, rb) = call(&shared, "POST", &format!("/sessions/{b}/action"), Some(split())).await;

    // Each alone on its own server.
    let solo = app();
    let a2 = crisis(&solo).await;
    to_t1(&solo, &a2).await;
    let (_, sa) = call(&solo, "POST", &format!("/sessions/{a2}/action"), Some(noop())).await;
    let solo = app();
    let b2 = crisis(&solo).await;
    to_t1(&solo, &b2).await;
    let (_, sb) = call(&solo, "POST", &format!("/sessions/{b2}/action"), Some(split())).await;

    assert_eq!(ra, sa);
    assert_eq!(rb, sb);
    assert_eq!(ra["done"], json!(true));
    assert_eq!(rb["done"], json!(false));
}

#[tokio::test]
async fn idle_sessions_expire() {
    let state = AppState::new(ServiceConfig {
        session_ttl: Duration::from_millis(50),
    });
    let app = router(state.clone());
    let id = crisis(&app).await;
    let (status, _) = call(&app, "GET", &format!("/sessions/{id}/observation"), None).await;
    assert_eq!(status, StatusCode::OK);
    tokio::time::sleep(Duration::from_millis(120)).await;
    let (status, v) = call(&app, "GET", &format!("/sessions/{id}/observation"), None).await;
    assert_eq!((status, code(&v)), (StatusCode::CONFLICT, "session_finished"));
    assert_eq!(state.session_count(), 0);

    let other = crisis(&app).await;
    tokio::time::sleep(Duration::from_millis(120)).await;
    state.sweep();
    assert_eq!(state.session_count(), 0);
    let (status, v) = call(&app, "POST", &format!("/sessions/{other}/reset"), None).await;
    assert_eq!((status, code(&v)), (StatusCode::CONFLICT, "session_finished"));
}

#[tokio::test]
async fn listings_and_layout() {
    let app = app();
    let (status, cases) = call(&app, "GET", "/cases", None).await;
    assert_eq!(status, StatusCode::OK);
    let c118 = cases["items"].as_array().unwrap().iter().find(|c| c["name"] == "case118").unwrap();
    assert_eq!((c118["generators"].clone(), c118["loads"].clone(), c118["branches"].clone()), (json!(56), json!(99), json!(186)));

    let (_, chronics) = call(&app, "GET", "/chronics", None).await;
    let names: Vec<&str> = chronics["items"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["case4gs-crisis", "case4gs-relief", "case118-daily"]);

    let id = crisis(&app).await;
    let (status, l) = call(&app, "GET", &format!("/sessions/{id}/layout"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(l["layout"]["substations"].as_array().unwrap().len(), 4);
    assert_eq!(l["branches"].as_array().unwrap().len(), 5);

    let id = create(&app, json!({"case": "case118"})).await;
    let (_, l) = call(&app, "GET", &format!("/sessions/{id}/layout"), None).await;
    assert_eq!(l["layout"]["substations"].as_array().unwrap().len(), 118);
}

#[tokio::test]
async fn suggestions_come_from_the_session_agent() {
    let app = app();
    let id = create(&app, json!({"case": "case4gs", "chronic": "case4gs-relief", "agent": {"kind": "greedy_line"}})).await;
    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/suggest"), None).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["agent"], json!("greedy_line"));
    let (_, played) = call(&app, "POST", &format!("/sessions/{id}/action"), Some(v["action"].clone())).await;
    assert_eq!(played["done"], json!(false));

    let plain = crisis(&app).await;
    let (status, v) = call(&app, "POST", &format!("/sessions/{plain}/suggest"), None).await;
    assert_eq!((status, code(&v)), (StatusCode::BAD_REQUEST, "bad_config"));
}
