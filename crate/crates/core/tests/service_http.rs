//! The annotation service REST API over real HTTP.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Value};

use qaforge::dataset::SquadDataset;
use qaforge::service::{router, Service};

const ADMIN: &str = "admin-secret-0123456789";
const CONTEXT: &str = "Acme is a major food sector player based in Berlin.";

fn start(data_dir: &Path, static_dir: Option<&Path>) -> SocketAddr {
    let service = Arc::new(Service::open(data_dir, ADMIN).unwrap());
    let app = router(service, static_dir);
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

struct Client {
    base: String,
    agent: ureq::Agent,
}

struct Reply {
    status: u16,
    headers: ureq::http::HeaderMap,
    body: String,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_str(&self.body).unwrap_or_else(|e| panic!("{e}: {}", self.body))
    }
}

impl Client {
    fn new(addr: SocketAddr) -> Self {
        Self {
            base: format!("http://{addr}"),
            agent: ureq::Agent::config_builder().http_status_as_error(false).build().new_agent(),
        }
    }

    fn finish(resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Reply {
        let mut resp = resp.expect("request completes");
        Reply {
            status: resp.status().as_u16(),
            headers: resp.headers().clone(),
            body: resp.body_mut().read_to_string().unwrap(),
        }
    }

    fn get(&self, path: &str, token: Option<&str>) -> Reply {
        let mut req = self.agent.get(format!("{}{path}", self.base));
        if let Some(t) = token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        Self::finish(req.call())
    }

    fn post(&self, path: &str, token: Option<&str>, body: &str) -> Reply {
        let mut req = self
            .agent
            .post(format!("{}{path}", self.base))
            .header("Content-Type", "application/json");
        if let Some(t) = token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        Self::finish(req.send(body))
    }
}

fn tasks() -> Value {
    let questions = [
        "Who founded the moon?",
        "What sector is Acme in?",
        "Acme sector which?",
        "What does Acme do?",
        "What kind of player is Acme?",
    ];
    let answers = [("Berlin", 44), ("food", 16), ("food", 16), ("food sector player", 16), ("food", 16)];
    let list: Vec<Value> = questions
        .iter()
        .zip(answers)
        .enumerate()
        .map(|(i, (q, (a, s)))| {
            json!({ "pair_id": format!("t{i}"), "context": CONTEXT, "question": q, "answer_text": a, "answer_start": s })
        })
        .collect();
    json!({ "tasks": list })
}

/// The judgement every annotator enters for each task: unsuitable, all
/// natural, question rewrite, answer rewrite, adequate with correction.
fn judgement(task_id: &str) -> Value {
    let natural_q = json!({ "suitable": true, "reads_naturally": true });
    let precise = json!({ "reads_naturally": true, "quality": "PRECISE_CORRECT" });
    match task_id {
        "t0" => json!({ "task_id": task_id, "question": { "suitable": false, "unsuitable_reason": "NOT_ANSWERABLE" } }),
        "t1" => json!({ "task_id": task_id, "question": natural_q, "answer": precise }),
        "t2" => json!({
            "task_id": task_id,
            "question": { "suitable": true, "reads_naturally": false, "rewritten_question": "Which sector is Acme in?" },
            "answer": precise,
        }),
        "t3" => json!({
            "task_id": task_id,
            "question": natural_q,
            "answer": { "reads_naturally": false, "rewritten_answer": "food sector", "quality": "PRECISE_CORRECT" },
        }),
        "t4" => json!({
            "task_id": task_id,
            "question": natural_q,
            "answer": { "reads_naturally": true, "quality": "ADEQUATE", "corrected_answer": "major food sector player" },
        }),
        other => panic!("unexpected task {other}"),
    }
}

fn load_and_assign(c: &Client) -> Vec<(String, String)> {
    let r = c.post("/api/admin/load", Some(ADMIN), &tasks().to_string());
    assert_eq!(r.status, 200, "{}", r.body);
    assert_eq!(r.json()["tasks"], 5);
    let r = c.post(
        "/api/admin/assign",
        Some(ADMIN),
        r#"{"annotators": ["ann-a", "ann-b", "ann-c"], "group_size": 3, "slice_fraction": 1.0, "seed": 4}"#,
    );
    assert_eq!(r.status, 200, "{}", r.body);
    r.json()["sessions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| (s["annotator_id"].as_str().unwrap().to_string(), s["token"].as_str().unwrap().to_string()))
        .collect()
}

#[test]
fn scripted_session_covers_every_form_path() {
    let dir = tempfile::tempdir().unwrap();
    let c = Client::new(start(dir.path(), None));
    assert_eq!(c.get("/api/health", None).status, 200);
    let sessions = load_and_assign(&c);
    assert_eq!(sessions.len(), 3);

    assert_eq!(c.get("/api/export/qa", Some(ADMIN)).status, 409);
    for (_, token) in &sessions {
        let mut done = 0;
        loop {
            let r = c.get("/api/task", Some(token));
            if r.status == 204 {
                break;
            }
            assert_eq!(r.status, 200, "{}", r.body);
            let next = r.json();
            assert_eq!(next["done"], done);
            assert_eq!(next["assigned"], 5);
            let id = next["task"]["pair_id"].as_str().unwrap().to_string();
            let r = c.post("/api/annotation", Some(token), &judgement(&id).to_string());
            assert_eq!(r.status, 200, "{}", r.body);
            assert_eq!(r.json()["accepted"], true);
            done += 1;
        }
        assert_eq!(done, 5);
    }

    let progress = c.get("/api/progress", Some(ADMIN)).json();
    assert_eq!(progress["submissions"], 15);
    assert_eq!(progress["golds_resolved"], 5);
    assert_eq!(progress["groups"][0]["annotated"], 15);

    let r = c.get("/api/export/qa", Some(ADMIN));
    assert_eq!(r.status, 200);
    assert_eq!(r.headers["x-export-count"], "5");
    let ds: SquadDataset = serde_json::from_str(&r.body).unwrap();
    let by_id: std::collections::BTreeMap<_, _> = ds.iter_qas().map(|(_, q)| (q.id.clone(), q.clone())).collect();
    assert!(by_id["t0"].is_impossible);
    assert_eq!(by_id["t1"].answers[0].text, "food");
    assert_eq!(by_id["t2"].question, "Which sector is Acme in?");
    assert_eq!(by_id["t3"].answers[0].text, "food sector");
    assert_eq!(by_id["t4"].answers[0].text, "major food sector player");
    assert_eq!(by_id["t4"].answers[0].answer_start, 10);

    let r = c.get("/api/export/grammaticality", Some(ADMIN));
    assert_eq!(r.status, 200);
    let lines: Vec<&str> = r.body.lines().collect();
    assert_eq!(lines[0], "text\tlabel");
    assert!(lines.contains(&"Acme sector which?\tungrammatical"));
    assert!(lines.contains(&"Which sector is Acme in?\tgrammatical"));
    assert_eq!(r.headers["x-export-count"], (lines.len() - 1).to_string().as_str());
}

#[test]
fn error_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let c = Client::new(start(dir.path(), None));
    assert_eq!(c.post("/api/admin/load", None, &tasks().to_string()).status, 401);
    assert_eq!(c.post("/api/admin/load", Some(ADMIN), "{not json").status, 400);
    let sessions = load_and_assign(&c);
    let token = sessions[0].1.as_str();

    assert_eq!(c.get("/api/task", None).status, 401);
    assert_eq!(c.get("/api/task", Some("forged")).status, 401);
    assert_eq!(c.get("/api/progress", Some(token)).status, 401);
    assert_eq!(c.post("/api/annotation", None, "{}").status, 401);
    assert_eq!(c.post("/api/annotation", Some(token), "{\"task_id\": 3}").status, 400);

    let mut unknown = judgement("t1");
    unknown["task_id"] = json!("t99");
    assert_eq!(c.post("/api/annotation", Some(token), &unknown.to_string()).status, 403);

    let r = c.post(
        "/api/annotation",
        Some(token),
        &json!({
            "task_id": "t1",
            "question": { "suitable": true, "reads_naturally": false },
            "answer": { "reads_naturally": true, "quality": "ADEQUATE", "corrected_answer": "Munich" },
        })
        .to_string(),
    );
    assert_eq!(r.status, 422);
    let codes: Vec<String> = r.json()["violations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v["code"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(codes, ["REWRITE_REQUIRED", "ANSWER_NOT_IN_DOCUMENT"]);
    assert_eq!(r.json()["violations"][1]["message"], "answer must appear within the document");
    assert_eq!(r.json()["violations"][1]["field"], "corrected_answer");

    assert_eq!(c.post("/api/annotation", Some(token), &judgement("t1").to_string()).status, 200);
    assert_eq!(c.post("/api/annotation", Some(token), &judgement("t1").to_string()).status, 409);
    assert_eq!(c.post("/api/admin/load", Some(ADMIN), &tasks().to_string()).status, 409);
    assert_eq!(c.get("/api/export/nonsense", Some(ADMIN)).status, 400);
    assert_eq!(c.get("/api/progress", Some(ADMIN)).json()["submissions"], 1);
}

#[test]
fn state_survives_restart_and_static_files_are_served() {
    let data = tempfile::tempdir().unwrap();
    let web = tempfile::tempdir().unwrap();
    std::fs::write(web.path().join("index.html"), "<!doctype html><title>annotate</title>").unwrap();

    let first = Client::new(start(data.path(), Some(web.path())));
    let sessions = load_and_assign(&first);
    let token = sessions[1].1.clone();
    assert_eq!(first.post("/api/annotation", Some(&token), &judgement("t0").to_string()).status, 200);

    let second = Client::new(start(data.path(), Some(web.path())));
    let next = second.get("/api/task", Some(&token));
    assert_eq!(next.status, 200);
    assert_eq!(next.json()["task"]["pair_id"], "t1");
    assert_eq!(next.json()["done"], 1);
    assert_eq!(second.post("/api/annotation", Some(&token), &judgement("t0").to_string()).status, 409);

    let page = second.get("/index.html", None);
    assert_eq!(page.status, 200);
    assert!(page.body.contains("annotate"));
    assert_eq!(second.get("/", None).status, 200);
}
