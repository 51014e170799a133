use awaire_core::alpha::AlphaParams;
use awaire_core::ballots::Ranking;
use awaire_core::engine::{AuditConfig, AuditState, HardOrder, StatusDoc};
use awaire_core::weights::SchemeSpec;
use awaire_service::{router, serve_on, AppState, Sessions};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tower::ServiceExt;

async fn call(app: &AppState, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or(Body::empty(), |b| Body::from(b.to_string())))
        .unwrap();
    let resp = router(app.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

fn k3_request(id: Option<&str>, n: u64) -> Value {
    let mut req = json!({
        "candidates": ["Alice", "Bob", "Carol"],
        "reported_winner": "Alice",
        "N": n,
        "risk": 0.05,
        "scheme": "largest",
        "eta0": 0.52,
        "d": 50,
    });
    if let Some(id) = id {
        req["id"] = json!(id);
    }
    req
}

async fn create(app: &AppState, req: Value) -> String {
    let (status, doc) = call(app, "POST", "/sessions", Some(req)).await;
    assert_eq!(status, StatusCode::CREATED, "{doc}");
    doc["id"].as_str().unwrap().to_string()
}

async fn submit(app: &AppState, id: &str, ranking: &[&str]) -> (StatusCode, Value) {
    call(app, "POST", &format!("/sessions/{id}/ballots"), Some(json!({ "ranking": ranking }))).await
}

#[tokio::test]
async fn fresh_session_has_unit_p_proxy() {
    let app = Sessions::in_memory();
    let (status, doc) = call(&app, "POST", "/sessions", Some(k3_request(None, 100))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(doc["p_proxy"], json!(1.0));
    assert_eq!(doc["status"], "running");
    assert_eq!(doc["num_trackers"], 4);
    assert_eq!(doc["config"]["reported_winner"], "Alice");
    let id = doc["id"].as_str().unwrap();
    let (status, got) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(got, doc);
}

#[tokio::test]
async fn six_candidates_track_600_orders() {
    let app = Sessions::in_memory();
    let req = json!({
        "candidates": ["A", "B", "C", "D", "E", "F"],
        "reported_winner": "C",
        "N": 1000,
    });
    let (status, doc) = call(&app, "POST", "/sessions", Some(req)).await;
    assert_eq!(status, StatusCode::CREATED, "{doc}");
    assert_eq!(doc["num_trackers"], 600);
    assert_eq!(doc["num_assertions"], 480);
    assert_eq!(doc["config"]["scheme"], "largest");
    assert_eq!(doc["config"]["eta0"], json!(0.51));
    assert_eq!(doc["config"]["d"], json!(100.0));
}

#[tokio::test]
async fn invalid_configs_are_bad_requests() {
    let app = Sessions::in_memory();
    let mut bad = Vec::new();
    let mut r = k3_request(None, 100);
    r["reported_winner"] = json!("Dave");
    bad.push(r);
    let mut r = k3_request(None, 100);
    r["scheme"] = json!("largest-count:0");
    bad.push(r);
    let mut r = k3_request(None, 100);
    r["risk"] = json!(1.5);
    bad.push(r);
    let mut r = k3_request(None, 100);
    r["eta0"] = json!(0.4);
    bad.push(r);
    let mut r = k3_request(None, 0);
    r["N"] = json!(0);
    bad.push(r);
    let mut r = k3_request(None, 100);
    r["candidates"] = json!(["Alice", "Alice", "Bob"]);
    bad.push(r);
    bad.push(k3_request(Some("../escape"), 100));
    bad.push(json!({ "candidates": ["A", "B"] }));
    let mut r = k3_request(None, 100);
    r["candidates"] = json!(["A", "B", "C", "D", "E", "F", "G"]);
    r["reported_winner"] = json!("A");
    bad.push(r);
    for req in bad {
        let (status, doc) = call(&app, "POST", "/sessions", Some(req.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{req} -> {doc}");
        assert!(doc["error"].is_string());
    }
    assert!(app.is_empty());
}

#[tokio::test]
async fn duplicate_client_id_conflicts() {
    let app = Sessions::in_memory();
    assert_eq!(create(&app, k3_request(Some("count-7"), 100)).await, "count-7");
    let (status, _) = call(&app, "POST", "/sessions", Some(k3_request(Some("count-7"), 100))).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn ballots_advance_and_validate() {
    let app = Sessions::in_memory();
    let id = create(&app, k3_request(None, 100)).await;
    let (status, reply) = submit(&app, &id, &["Bob", "Alice"]).await;
    assert_eq!(status, StatusCode::OK, "{reply}");
    assert_eq!(reply["draws_seen"], 1);
    assert_eq!(reply["draw"], 1);
    assert_eq!(reply["hardest"].as_array().unwrap().len(), 4);
    let (status, reply) = submit(&app, &id, &[]).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(reply["draws_seen"], 2);

    for bad in [vec!["Dave"], vec!["Bob", "Bob"]] {
        let (status, _) = submit(&app, &id, &bad).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    }
    let (status, _) =
        call(&app, "POST", &format!("/sessions/{id}/ballots"), Some(json!({ "ranking": "Bob" }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (_, doc) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(doc["draws_seen"], 2);
}

#[tokio::test]
async fn unknown_sessions_are_not_found() {
    let app = Sessions::in_memory();
    for (method, uri, body) in [
        ("GET", "/sessions/nope", None),
        ("POST", "/sessions/nope/ballots", Some(json!({ "ranking": ["A"] }))),
        ("POST", "/sessions/nope/undo", None),
        ("DELETE", "/sessions/nope", None),
    ] {
        let (status, _) = call(&app, method, uri, body).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{method} {uri}");
    }
}

#[tokio::test]
async fn submit_then_undo_restores_snapshot() {
    let app = Sessions::in_memory();
    let id = create(&app, k3_request(None, 100)).await;
    for r in [["Alice", "Bob"], ["Carol", "Bob"], ["Bob", "Alice"]] {
        submit(&app, &id, &r).await;
    }
    let uri = format!("/sessions/{id}?hardest=4");
    let (_, before) = call(&app, "GET", &uri, None).await;
    submit(&app, &id, &["Alice"]).await;
    let (status, undo) = call(&app, "POST", &format!("/sessions/{id}/undo"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(undo["undone"], json!(["Alice"]));
    let (_, after) = call(&app, "GET", &uri, None).await;
    assert_eq!(before, after);
}

#[tokio::test]
async fn second_undo_conflicts() {
    let app = Sessions::in_memory();
    let id = create(&app, k3_request(None, 100)).await;
    submit(&app, &id, &["Alice"]).await;
    let undo = format!("/sessions/{id}/undo");
    assert_eq!(call(&app, "POST", &undo, None).await.0, StatusCode::OK);
    assert_eq!(call(&app, "POST", &undo, None).await.0, StatusCode::CONFLICT);
}

#[tokio::test]
async fn certification_blocks_ballots_and_undo_reverts_it() {
    let app = Sessions::in_memory();
    let id = create(&app, k3_request(None, 60)).await;
    let mut draws = 0;
    loop {
        let (status, reply) = submit(&app, &id, &["Alice", "Bob"]).await;
        assert_eq!(status, StatusCode::OK);
        draws += 1;
        if reply["certified"] == json!(true) {
            assert_eq!(reply["status"], "certified");
            assert!(reply["p_proxy"].as_f64().unwrap() <= 0.05);
            break;
        }
        assert!(draws < 60);
    }
    let (_, doc) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(doc["certified"], json!(true));
    let (status, _) = submit(&app, &id, &["Bob"]).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, undo) = call(&app, "POST", &format!("/sessions/{id}/undo"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(undo["draws_seen"], draws - 1);
    assert_eq!(undo["certified"], json!(false));
    let (status, reply) = submit(&app, &id, &["Alice", "Bob"]).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(reply["certified"], json!(true));
}

#[tokio::test]
async fn list_and_delete() {
    let app = Sessions::in_memory();
    let a = create(&app, k3_request(Some("a"), 100)).await;
    let b = create(&app, k3_request(Some("b"), 100)).await;
    submit(&app, &b, &["Bob"]).await;
    let (status, list) = call(&app, "GET", "/sessions", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list[0]["id"], "a");
    assert_eq!(list[1]["draws_seen"], 1);
    let (status, _) = call(&app, "DELETE", &format!("/sessions/{a}"), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    assert_eq!(call(&app, "GET", &format!("/sessions/{a}"), None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(app.len(), 1);
}

#[tokio::test]
async fn preflight_allows_cross_origin() {
    let app = Sessions::in_memory();
    let req = Request::builder().method("OPTIONS").uri("/sessions").body(Body::empty()).unwrap();
    let resp = router(app).oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::NO_CONTENT);
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_submits_to_one_session_serialise() {
    let dir = tempfile::tempdir().unwrap();
    let app = Sessions::with_journal_dir(dir.path()).unwrap();
    let id = create(&app, k3_request(Some("busy"), 1000)).await;
    let other = create(&app, k3_request(Some("quiet"), 1000)).await;
    let mut tasks = Vec::new();
    for i in 0..40 {
        let app = app.clone();
        let target = if i % 4 == 0 { other.clone() } else { id.clone() };
        tasks.push(tokio::spawn(async move { submit(&app, &target, &["Bob", "Carol"]).await.0 }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let (_, doc) = call(&app, "GET", "/sessions/busy", None).await;
    assert_eq!(doc["draws_seen"], 30);
    let journal = std::fs::read_to_string(dir.path().join("busy.jsonl")).unwrap();
    assert_eq!(journal.lines().count(), 31);
}

#[tokio::test]
async fn journal_recovery_reproduces_state() {
    let dir = tempfile::tempdir().unwrap();
    let ballots: [&[&str]; 6] =
        [&["Alice"], &["Bob", "Carol"], &[], &["Carol", "Alice", "Bob"], &["Alice", "Carol"], &["Bob"]];
    let before = {
        let app = Sessions::with_journal_dir(dir.path()).unwrap();
        let id = create(&app, k3_request(Some("j1"), 500)).await;
        for (i, b) in ballots.iter().cycle().take(40).enumerate() {
            submit(&app, &id, b).await;
            if i % 7 == 3 {
                call(&app, "POST", &format!("/sessions/{id}/undo"), None).await;
            }
        }
        call(&app, "GET", "/sessions/j1?hardest=4", None).await.1
    };
    let app = Sessions::with_journal_dir(dir.path()).unwrap();
    let (status, after) = call(&app, "GET", "/sessions/j1?hardest=4", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(before, after);
    assert_eq!(after["draws_seen"], 34);
    let (status, _) = call(&app, "POST", "/sessions", Some(k3_request(Some("j1"), 500))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    call(&app, "DELETE", "/sessions/j1", None).await;
    assert!(!dir.path().join("j1.jsonl").exists());
    assert!(Sessions::with_journal_dir(dir.path()).unwrap().is_empty());
}

// Replay equivalence over a real socket -----------------------------------

async fn http(addr: std::net::SocketAddr, method: &str, path: &str, body: Option<&Value>) -> (u16, Value) {
    let mut stream = TcpStream::connect(addr).await.unwrap();
    let body = body.map(Value::to_string).unwrap_or_default();
    let request = format!(
        "{method} {path} HTTP/1.1\r\nHost: localhost\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(request.as_bytes()).await.unwrap();
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw).await.unwrap();
    let text = String::from_utf8(raw).unwrap();
    let (head, body) = text.split_once("\r\n\r\n").unwrap();
    let code = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    let value = if body.is_empty() { Value::Null } else { serde_json::from_str(body).unwrap() };
    (code, value)
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(1.0)
}

fn assert_same_order(a: &HardOrder, b: &HardOrder, draw: usize) {
    assert_eq!((a.order_id, &a.order, a.rejected), (b.order_id, &b.order, b.rejected), "draw {draw}");
    for (x, y) in [
        (a.running_max, b.running_max),
        (a.log_running_max, b.log_running_max),
        (a.log_value, b.log_value),
        (a.progress, b.progress),
    ] {
        assert!(close(x, y), "draw {draw}: {x} vs {y}");
    }
}

fn assert_same_status(got: &StatusDoc, want: &StatusDoc, draw: usize) {
    assert_eq!(
        (got.status, got.certified, got.draws_seen, got.population, got.num_trackers, got.rejected_trackers),
        (want.status, want.certified, want.draws_seen, want.population, want.num_trackers, want.rejected_trackers),
        "draw {draw}"
    );
    assert!(close(got.p_proxy, want.p_proxy), "draw {draw}");
    assert!(close(got.min_running_max, want.min_running_max), "draw {draw}");
    assert_eq!(got.hardest.len(), want.hardest.len());
    for (a, b) in got.hardest.iter().zip(&want.hardest) {
        assert_same_order(a, b, draw);
    }
}

/// 200 scripted draws from a close four-candidate contest.
fn scripted_ballots() -> Vec<Vec<&'static str>> {
    let names = ["Ana", "Ben", "Cy", "Dee"];
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    (0..200)
        .map(|_| {
            let len = (next() % 5) as usize;
            let mut pool: Vec<&str> = names.to_vec();
            let mut r = Vec::new();
            for _ in 0..len {
                let i = (next() % pool.len() as u64) as usize;
                r.push(pool.remove(i));
            }
            r
        })
        .collect()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn http_session_replays_engine_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let app = Sessions::with_journal_dir(dir.path()).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(serve_on(listener, app, async {
        let _ = stopped.await;
    }));

    let create = json!({
        "id": "replay",
        "candidates": ["Ana", "Ben", "Cy", "Dee"],
        "reported_winner": "Ben",
        "N": 5000,
        "risk": 0.05,
        "scheme": "ons:4",
        "eta0": 0.51,
        "d": 100,
    });
    let (code, doc) = http(addr, "POST", "/sessions", Some(&create)).await;
    assert_eq!(code, 201, "{doc}");

    let names: Vec<String> = ["Ana", "Ben", "Cy", "Dee"].map(String::from).to_vec();
    let config = AuditConfig::new(names, 1, 5000, 0.05, "ons:4".parse::<SchemeSpec>().unwrap(), AlphaParams::new(0.51, 100.0).unwrap());
    let mut engine = AuditState::new(config).unwrap();
    let initial: StatusDoc = serde_json::from_value(doc).unwrap();
    assert_same_status(&initial, &engine.status_with(10), 0);

    let ballots = scripted_ballots();
    let mut trajectory = Vec::new();
    for (i, b) in ballots.iter().enumerate() {
        let draw = i + 1;
        let (code, reply) = http(addr, "POST", "/sessions/replay/ballots", Some(&json!({ "ranking": b }))).await;
        assert_eq!(code, 200, "draw {draw}: {reply}");
        let got: StatusDoc = serde_json::from_value(reply.clone()).unwrap();
        let ranking: Ranking = engine.ranking_from_names(b).unwrap();
        engine.process_ballot(&ranking).unwrap();
        assert_same_status(&got, &engine.status_with(5), draw);
        assert!(!got.certified, "scripted contest should stay uncertified");
        trajectory.push(reply.clone());

        if draw % 50 == 0 {
            let (code, undo) = http(addr, "POST", "/sessions/replay/undo", None).await;
            assert_eq!(code, 200);
            assert_eq!(undo["draws_seen"], json!(draw - 1));
            let (code, again) = http(addr, "POST", "/sessions/replay/ballots", Some(&json!({ "ranking": b }))).await;
            assert_eq!(code, 200);
            assert_eq!(again, reply, "resubmission at draw {draw} diverged");
        }
    }
    assert_eq!(trajectory.len(), 200);

    let (code, status) = http(addr, "GET", "/sessions/replay", None).await;
    assert_eq!(code, 200);
    let got: StatusDoc = serde_json::from_value(status.clone()).unwrap();
    assert_same_status(&got, &engine.status_with(10), 200);

    stop.send(()).unwrap();
    server.await.unwrap().unwrap();

    let recovered = Sessions::with_journal_dir(dir.path()).unwrap();
    let (_, again) = call(&recovered, "GET", "/sessions/replay", None).await;
    assert_eq!(again, status);
}
