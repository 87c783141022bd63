//! Runs the annotation service on an ephemeral port and drives one task
//! through the REST API: load, assign, annotate, export.

use std::sync::Arc;

use qaforge::service::{router, Service};
use serde_json::{json, Value};

const ADMIN: &str = "example-admin-token";

pub fn run() -> Result<String, Box<dyn std::error::Error>> {
    let data = tempfile::tempdir()?;
    let service = Arc::new(Service::open(data.path(), ADMIN)?);
    let app = router(service, None);
    let runtime = tokio::runtime::Runtime::new()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
    let base = format!("http://{}", listener.local_addr()?);
    runtime.spawn(async move { axum::serve(listener, app).await });

    let agent = ureq::Agent::config_builder().http_status_as_error(false).build().new_agent();
    let call = |method: &str, path: &str, token: &str, body: Option<Value>| -> Result<(u16, String), ureq::Error> {
        let url = format!("{base}{path}");
        let auth = format!("Bearer {token}");
        let mut resp = match body {
            Some(b) => agent.post(&url).header("Authorization", &auth).send_json(b)?,
            None if method == "GET" => agent.get(&url).header("Authorization", &auth).call()?,
            None => unreachable!("POST without body"),
        };
        Ok((resp.status().as_u16(), resp.body_mut().read_to_string()?))
    };

    let task = json!({
        "pair_id": "t1",
        "context": "Acme is a major food sector player based in Berlin.",
        "question": "What sector is Acme in?",
        "answer_text": "food",
        "answer_start": 16,
    });
    println!("load: {:?}", call("POST", "/api/admin/load", ADMIN, Some(json!({ "tasks": [task] })))?);
    let (_, assigned) = call(
        "POST",
        "/api/admin/assign",
        ADMIN,
        Some(json!({ "annotators": ["ann-a", "ann-b", "ann-c"], "slice_fraction": 1.0 })),
    )?;
    let assigned: Value = serde_json::from_str(&assigned)?;
    for session in assigned["sessions"].as_array().into_iter().flatten() {
        let token = session["token"].as_str().unwrap_or_default();
        let (_, next) = call("GET", "/api/task", token, None)?;
        let next: Value = serde_json::from_str(&next)?;
        let submission = json!({
            "task_id": next["task"]["pair_id"],
            "question": { "suitable": true, "reads_naturally": true },
            "answer": { "reads_naturally": true, "quality": "PRECISE_CORRECT" },
        });
        println!("{}: {:?}", session["annotator_id"], call("POST", "/api/annotation", token, Some(submission))?);
    }
    println!("progress: {}", call("GET", "/api/progress", ADMIN, None)?.1);
    let (status, export) = call("GET", "/api/export/qa", ADMIN, None)?;
    println!("export ({status}): {export}");
    Ok(export)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run().map(|_| ())
}
