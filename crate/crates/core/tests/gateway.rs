mod support;

use std::io::{BufRead, BufReader};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use mpx_core::debug_client::{serve_gateway, AttachOptions, Gateway, GatewayOptions, Session};
use mpx_core::{probe_scope, CommContext};
use serde_json::{json, Value};
use support::job::Job;

static SPIN: AtomicBool = AtomicBool::new(true);

fn spin_body(_: &mut CommContext) {
    probe_scope("main", || {
        while SPIN.load(Ordering::SeqCst) {
            probe_scope("tick", || std::thread::sleep(Duration::from_millis(1)));
        }
    });
}

fn serve(job: &Job) -> (Arc<Session>, Gateway, String) {
    let session = Arc::new(Session::attach(&job.conf, AttachOptions::default()).unwrap());
    let gw = serve_gateway(session.clone(), &GatewayOptions::default()).unwrap();
    let base = format!("http://{}", gw.local_addr());
    (session, gw, base)
}

fn client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder().timeout(None).build().unwrap()
}

#[test]
fn ranks_endpoint_lists_every_rank() {
    let job = Job::start(2, true);
    let (session, gw, base) = serve(&job);
    let body: Value = client()
        .get(format!("{base}/api/ranks"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    let ranks = body.as_array().unwrap();
    assert_eq!(ranks.len(), 2);
    for (i, r) in ranks.iter().enumerate() {
        assert_eq!(r["rank"], i);
        assert_eq!(r["size"], 2);
        assert_eq!(r["connected"], true);
        assert_eq!(r["port"], job.conf.records[i].debug_port);
    }
    session.broadcast(&mpx_core::mdwp::Command::Resume(None));
    drop(gw);
    job.join();
}

#[test]
fn suspend_shows_up_on_the_event_stream() {
    let job = Job::start_with(1, false, spin_body);
    let (session, gw, base) = serve(&job);
    let http = client();
    let events = http.get(format!("{base}/api/events")).send().unwrap();
    assert_eq!(events.headers()["content-type"], "text/event-stream");
    let reply: Value = http
        .post(format!("{base}/api/ranks/0/command"))
        .json(&json!({ "cmd": "SUSPEND" }))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(reply["ok"], true);
    let mut saw_suspended = false;
    for line in BufReader::new(events).lines() {
        let line = line.unwrap();
        let Some(data) = line.strip_prefix("data:") else {
            continue;
        };
        let ev: Value = serde_json::from_str(data.trim()).unwrap();
        assert_eq!(ev["rank"], 0);
        if ev["kind"] == "SUSPENDED" {
            assert!(ev["args"][0].as_str().unwrap().parse::<u32>().is_ok(), "{ev}");
            saw_suspended = true;
            break;
        }
    }
    assert!(saw_suspended);
    let view: Value = http.get(format!("{base}/api/ranks")).send().unwrap().json().unwrap();
    let threads = view[0]["threads"].as_object().unwrap();
    assert!(threads.values().any(|t| t["state"] == "SUSPENDED"), "{view}");

    SPIN.store(false, Ordering::SeqCst);
    let reply: Value = http
        .post(format!("{base}/api/broadcast"))
        .json(&json!({ "cmd": "RESUME" }))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(reply["replies"][0]["ok"], true);
    drop(gw);
    job.join();
    drop(session);
}

#[test]
fn bad_requests_are_rejected() {
    let job = Job::start(1, true);
    let (session, gw, base) = serve(&job);
    let http = client();
    let post = |path: &str, body: &str| {
        http.post(format!("{base}{path}"))
            .header("content-type", "application/json")
            .body(body.to_string())
            .send()
            .unwrap()
            .status()
            .as_u16()
    };
    assert_eq!(post("/api/ranks/0/command", "not json"), 400);
    assert_eq!(post("/api/ranks/0/command", r#"{"command":"THREADS"}"#), 400);
    assert_eq!(post("/api/ranks/0/command", r#"{"cmd":"FLY away"}"#), 400);
    assert_eq!(post("/api/broadcast", r#"{"cmd":""}"#), 400);
    assert_eq!(post("/api/ranks/7/command", r#"{"cmd":"THREADS"}"#), 404);
    assert_eq!(post("/api/ranks/0/command", r#"{"cmd":"THREADS"}"#), 200);
    session.broadcast(&mpx_core::mdwp::Command::Resume(None));
    drop(gw);
    job.join();
}

#[test]
fn assets_are_served_next_to_the_api() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>console</h1>").unwrap();
    let job = Job::start(1, true);
    let session = Arc::new(Session::attach(&job.conf, AttachOptions::default()).unwrap());
    let opts = GatewayOptions {
        assets: Some(dir.path().to_path_buf()),
        ..GatewayOptions::default()
    };
    let gw = serve_gateway(session.clone(), &opts).unwrap();
    let base = format!("http://{}", gw.local_addr());
    let page = client()
        .get(format!("{base}/index.html"))
        .send()
        .unwrap()
        .text()
        .unwrap();
    assert_eq!(page, "<h1>console</h1>");
    let missing = client().get(format!("{base}/nope.js")).send().unwrap().status();
    assert_eq!(missing.as_u16(), 404);
    session.broadcast(&mpx_core::mdwp::Command::Resume(None));
    drop(gw);
    job.join();
}
