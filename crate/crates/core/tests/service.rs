use std::io::{BufRead, BufReader};
use std::sync::mpsc;
use std::time::Duration;

use paza_core::alerts::{AlertRecord, AlertStore, ReviewStatus};
use paza_core::config::Config;
use paza_core::pipeline::{behavior_tags, Pipeline};
use paza_core::service::{spawn_service, IngestResponse, ServeOptions, ServiceHandle};
use paza_core::sim::mock::{shared, MockRule, MockScript, ScriptedTransport};
use paza_core::sim::trace::{generate_trace, single_shopper_trace, to_jsonl, Behavior, ScenarioConfig};
use reqwest::blocking::Client;
use reqwest::StatusCode;

fn script() -> MockScript {
    MockScript::new(vec![
        MockRule::respond("conceal", "CONFIRMED\nConfidence: 91\nItem moved into jacket"),
        MockRule::respond("pickup_no_conceal", "UNCERTAIN\nConfidence: 40\nHand near bag"),
        MockRule::respond("default", "NORMAL\nConfidence: 8"),
    ])
}

fn pipeline() -> Pipeline {
    let t = ScriptedTransport::new(shared(script()), 30_000);
    Pipeline::new(Config::default(), Box::new(t), AlertStore::in_memory())
}

fn quiet() -> ServeOptions {
    ServeOptions { stats_interval: Duration::from_secs(3600), idle_advance: false }
}

fn start(p: Pipeline, opts: ServeOptions) -> ServiceHandle {
    spawn_service(p, "127.0.0.1:0".parse().unwrap(), opts).unwrap()
}

fn client() -> Client {
    Client::builder().timeout(Duration::from_secs(10)).build().unwrap()
}

/// Reads `(event, data)` pairs off the stream on a background thread.
fn subscribe(base: &str) -> mpsc::Receiver<(String, String)> {
    let (tx, rx) = mpsc::channel();
    let (ready_tx, ready_rx) = mpsc::channel();
    let url = format!("{base}/api/stream");
    std::thread::spawn(move || {
        let resp = Client::builder().timeout(None).build().unwrap().get(url).send().unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        ready_tx.send(()).unwrap();
        let mut name = String::new();
        for line in BufReader::new(resp).lines() {
            let Ok(line) = line else { return };
            if let Some(n) = line.strip_prefix("event: ") {
                name = n.to_string();
            } else if let Some(d) = line.strip_prefix("data: ") {
                if tx.send((name.clone(), d.to_string())).is_err() {
                    return;
                }
            }
        }
    });
    ready_rx.recv_timeout(Duration::from_secs(5)).expect("stream connected");
    rx
}

fn next_named(rx: &mpsc::Receiver<(String, String)>, name: &str) -> String {
    loop {
        let (n, d) = rx.recv_timeout(Duration::from_secs(5)).unwrap_or_else(|_| panic!("no {name} event"));
        if n == name {
            return d;
        }
    }
}

fn post_ingest(c: &Client, base: &str, body: String) -> (StatusCode, IngestResponse) {
    let r = c.post(format!("{base}/api/ingest")).header("content-type", "application/x-ndjson").body(body).send().unwrap();
    let status = r.status();
    (status, r.json().unwrap())
}

#[test]
fn one_frame_is_accepted_and_counted() {
    let svc = start(pipeline(), quiet());
    let c = client();
    let (events, _) = single_shopper_trace(Behavior::Browse, 3, 10);
    let (status, resp) = post_ingest(&c, &svc.base_url(), to_jsonl(&events[..1]));
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!((resp.accepted, resp.rejected), (1, 0));
    let report: serde_json::Value = c.get(format!("{}/api/stats", svc.base_url())).send().unwrap().json().unwrap();
    assert_eq!(report["stats"]["frames_processed"], 1);
    assert_eq!(report["queue_len"], 0);
}

#[test]
fn bad_lines_are_reported_per_line() {
    let svc = start(pipeline(), quiet());
    let c = client();
    let (events, _) = single_shopper_trace(Behavior::Browse, 3, 10);
    let body = format!("{}not json\n", to_jsonl(&events[..2]));
    let (status, resp) = post_ingest(&c, &svc.base_url(), body);
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!((resp.accepted, resp.rejected), (2, 1));
    assert_eq!(resp.errors[0].line, 3);
    let (status, resp) = post_ingest(&c, &svc.base_url(), "{}\n".into());
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(resp.rejected, 1);
}

#[test]
fn review_round_trip_reaches_every_client() {
    let mut p = pipeline();
    let (events, truth) = single_shopper_trace(Behavior::Conceal, 5, 10);
    p.set_tags(behavior_tags(&truth));
    let svc = start(p, quiet());
    let base = svc.base_url();
    let c = client();
    let first = subscribe(&base);
    let second = subscribe(&base);

    let (status, resp) = post_ingest(&c, &base, to_jsonl(&events));
    assert_eq!(status, StatusCode::ACCEPTED);
    assert!(resp.alerts_created >= 1);
    let created: AlertRecord = serde_json::from_str(&next_named(&first, "alert-created")).unwrap();
    assert_eq!(created.category.as_str(), "CONFIRMED");

    let listed: Vec<AlertRecord> = c.get(format!("{base}/api/alerts")).send().unwrap().json().unwrap();
    assert_eq!(listed.len(), resp.alerts_created);
    let later: Vec<AlertRecord> =
        c.get(format!("{base}/api/alerts?since_ms={}", created.created_ms + 1)).send().unwrap().json().unwrap();
    assert!(later.iter().all(|a| a.created_ms > created.created_ms));

    let url = format!("{base}/api/alerts/{}/review", created.alert_id);
    let r = c.post(&url).json(&serde_json::json!({"decision": "dismissed", "note": "staff restocked"})).send().unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let reviewed: AlertRecord = r.json().unwrap();
    assert_eq!(reviewed.review.status, ReviewStatus::Dismissed);

    for rx in [&first, &second] {
        let seen: AlertRecord = serde_json::from_str(&next_named(rx, "alert-reviewed")).unwrap();
        assert_eq!(seen.alert_id, created.alert_id);
        assert_eq!(seen.review.status, ReviewStatus::Dismissed);
        assert_eq!(seen.review.note.as_deref(), Some("staff restocked"));
    }
    let stored: AlertRecord = c.get(format!("{base}/api/alerts/{}", created.alert_id)).send().unwrap().json().unwrap();
    assert_eq!(stored.review.status, ReviewStatus::Dismissed);
    assert_eq!(svc.state.pipeline().store().get(&created.alert_id).unwrap().review.status, ReviewStatus::Dismissed);

    let again = c.post(&url).json(&serde_json::json!({"decision": "confirmed"})).send().unwrap();
    assert_eq!(again.status(), StatusCode::CONFLICT);
    let bad = c.post(&url).json(&serde_json::json!({"decision": "maybe"})).send().unwrap();
    assert_eq!(bad.status(), StatusCode::BAD_REQUEST);
    let missing = c.post(format!("{base}/api/alerts/alert-999999/review")).json(&serde_json::json!({"decision": "confirmed"})).send().unwrap();
    assert_eq!(missing.status(), StatusCode::NOT_FOUND);
    assert_eq!(c.get(format!("{base}/api/alerts/alert-999999")).send().unwrap().status(), StatusCode::NOT_FOUND);
}

#[test]
fn stats_ticks_are_streamed() {
    let opts = ServeOptions { stats_interval: Duration::from_millis(100), idle_advance: true };
    let svc = start(pipeline(), opts);
    let rx = subscribe(&svc.base_url());
    let data = next_named(&rx, "stats-tick");
    let v: serde_json::Value = serde_json::from_str(&data).unwrap();
    assert_eq!(v["frames_processed"], 0);
}

#[test]
fn served_trace_matches_replay() {
    let cfg = ScenarioConfig::busy(2);
    let (events, truth) = generate_trace(&cfg).unwrap();

    let mut direct = pipeline();
    direct.set_tags(behavior_tags(&truth));
    for e in &events {
        direct.ingest(e).unwrap();
    }

    let mut served = pipeline();
    served.set_tags(behavior_tags(&truth));
    let svc = start(served, quiet());
    let c = client();
    for chunk in events.chunks(250) {
        let (status, _) = post_ingest(&c, &svc.base_url(), to_jsonl(chunk));
        assert_eq!(status, StatusCode::ACCEPTED);
    }
    let p = svc.state.pipeline();
    assert_eq!(p.fires(), direct.fires());
    assert_eq!(p.outcomes(), direct.outcomes());
    let a: Vec<_> = p.store().all().cloned().collect();
    let b: Vec<_> = direct.store().all().cloned().collect();
    assert_eq!(a, b);
    assert_eq!(p.stats(), direct.stats());
}
