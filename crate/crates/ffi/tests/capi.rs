use std::ffi::{c_char, CStr, CString};
use std::ptr;

use paza_core::sim::mock::{MockRule, MockScript};
use paza_core::sim::trace::{single_shopper_trace, Behavior};
use paza_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = paza_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

unsafe fn take(s: *mut c_char) -> String {
    let out = CStr::from_ptr(s).to_str().unwrap().to_string();
    paza_string_free(s);
    out
}

fn mock_json() -> CString {
    let script = MockScript::new(vec![MockRule::respond("default", "CONFIRMED\nConfidence: 88\nItem into jacket")]);
    c(&serde_json::to_string(&script).unwrap())
}

fn new_pipeline(config: Option<&str>) -> *mut PazaPipeline {
    let cfg = config.map(c);
    let mock = mock_json();
    let mut p = ptr::null_mut();
    let st = unsafe { paza_pipeline_new(cfg.as_ref().map_or(ptr::null(), |s| s.as_ptr()), mock.as_ptr(), ptr::null(), &mut p) };
    assert_eq!(st, PazaStatus::Ok);
    assert!(!p.is_null());
    p
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(paza_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_rejected() {
    let mut out = PazaVerdict { category: PazaCategory::Skipped, confidence: 0 };
    assert_eq!(unsafe { paza_parse_verdict(ptr::null(), &mut out) }, PazaStatus::NullArgument);
    assert!(last_error().contains("text"));
    assert_eq!(unsafe { paza_pipeline_finish(ptr::null_mut()) }, PazaStatus::NullArgument);
    assert_eq!(unsafe { paza_pipeline_new(ptr::null(), ptr::null(), ptr::null(), ptr::null_mut()) }, PazaStatus::NullArgument);
    unsafe {
        paza_pipeline_free(ptr::null_mut());
        paza_string_free(ptr::null_mut());
    }
}

#[test]
fn bad_config_and_utf8() {
    let mut p = ptr::null_mut();
    let bad = c("[prefilter]\ntau_d_s = \"long\"\n");
    assert_eq!(unsafe { paza_pipeline_new(bad.as_ptr(), ptr::null(), ptr::null(), &mut p) }, PazaStatus::InvalidConfig);
    assert!(p.is_null());
    let bad_mock = c("{not json");
    assert_eq!(unsafe { paza_pipeline_new(ptr::null(), bad_mock.as_ptr(), ptr::null(), &mut p) }, PazaStatus::InvalidConfig);

    let raw = [0xffu8, 0xfe, 0];
    let mut out = PazaVerdict { category: PazaCategory::Skipped, confidence: 0 };
    assert_eq!(unsafe { paza_parse_verdict(raw.as_ptr().cast(), &mut out) }, PazaStatus::InvalidUtf8);
}

#[test]
fn concealer_end_to_end() {
    let p = new_pipeline(None);
    let (events, _) = single_shopper_trace(Behavior::Conceal, 7, 10);
    let mut created = 0;
    for e in &events {
        let line = c(&serde_json::to_string(e).unwrap());
        let mut n = 0u32;
        assert_eq!(unsafe { paza_pipeline_ingest(p, line.as_ptr(), &mut n) }, PazaStatus::Ok);
        created += n;
    }
    assert!(created >= 1);
    assert_eq!(unsafe { paza_pipeline_finish(p) }, PazaStatus::Ok);

    let mut s = ptr::null_mut();
    assert_eq!(unsafe { paza_pipeline_report_json(p, &mut s) }, PazaStatus::Ok);
    let report: serde_json::Value = serde_json::from_str(&unsafe { take(s) }).unwrap();
    assert_eq!(report["stats"]["frames_processed"], events.len());
    assert_eq!(report["queue_len"], 0);

    assert_eq!(unsafe { paza_pipeline_alerts_json(p, 0, &mut s) }, PazaStatus::Ok);
    let alerts: serde_json::Value = serde_json::from_str(&unsafe { take(s) }).unwrap();
    let alerts = alerts.as_array().unwrap();
    assert_eq!(alerts.len(), created as usize);
    assert_eq!(alerts[0]["category"], "CONFIRMED");
    assert_eq!(alerts[0]["confidence"], 88);
    assert_eq!(unsafe { paza_pipeline_alerts_json(p, u64::MAX, &mut s) }, PazaStatus::Ok);
    assert_eq!(unsafe { take(s) }, "[]");

    let id = c(alerts[0]["alert_id"].as_str().unwrap());
    let (dismissed, confirmed, maybe, note) = (c("dismissed"), c("confirmed"), c("maybe"), c("restocked"));
    unsafe {
        assert_eq!(paza_pipeline_review(p, id.as_ptr(), maybe.as_ptr(), ptr::null()), PazaStatus::InvalidArgument);
        assert_eq!(paza_pipeline_review(p, id.as_ptr(), dismissed.as_ptr(), note.as_ptr()), PazaStatus::Ok);
        assert_eq!(paza_pipeline_review(p, id.as_ptr(), confirmed.as_ptr(), ptr::null()), PazaStatus::Conflict);
        let missing = c("alert-999999");
        assert_eq!(paza_pipeline_review(p, missing.as_ptr(), confirmed.as_ptr(), ptr::null()), PazaStatus::NotFound);
        assert_eq!(paza_pipeline_alerts_json(p, 0, &mut s), PazaStatus::Ok);
    }
    let after: serde_json::Value = serde_json::from_str(&unsafe { take(s) }).unwrap();
    assert_eq!(after[0]["review"]["status"], "dismissed");
    assert_eq!(after[0]["review"]["note"], "restocked");
    unsafe { paza_pipeline_free(p) };
}

#[test]
fn ingest_errors_map_to_statuses() {
    let p = new_pipeline(Some("[prefilter]\ntau_d_s = 3.0\n"));
    let (events, _) = single_shopper_trace(Behavior::Browse, 2, 10);
    let later = c(&serde_json::to_string(&events[5]).unwrap());
    let earlier = c(&serde_json::to_string(&events[0]).unwrap());
    let junk = c("{\"camera_id\": 1}");
    unsafe {
        assert_eq!(paza_pipeline_ingest(p, later.as_ptr(), ptr::null_mut()), PazaStatus::Ok);
        assert_eq!(paza_pipeline_ingest(p, earlier.as_ptr(), ptr::null_mut()), PazaStatus::StaleEvent);
        assert_eq!(paza_pipeline_ingest(p, junk.as_ptr(), ptr::null_mut()), PazaStatus::InvalidEvent);
        assert!(!last_error().is_empty());
        paza_pipeline_free(p);
    }
}

#[test]
fn verdict_parsing() {
    let mut out = PazaVerdict { category: PazaCategory::Skipped, confidence: 0 };
    let structured = c("CONFIRMED\nConfidence: 90\nBottle into coat");
    assert_eq!(unsafe { paza_parse_verdict(structured.as_ptr(), &mut out) }, PazaStatus::Ok);
    assert_eq!(out, PazaVerdict { category: PazaCategory::Confirmed, confidence: 90 });
    let loose = c("the shopper looks normal and the behaviour is uncertain");
    assert_eq!(unsafe { paza_parse_verdict(loose.as_ptr(), &mut out) }, PazaStatus::Ok);
    assert_eq!(out, PazaVerdict { category: PazaCategory::Uncertain, confidence: 50 });
    let none = c("no idea");
    assert_eq!(unsafe { paza_parse_verdict(none.as_ptr(), &mut out) }, PazaStatus::ParseError);
}

#[test]
fn metrics_and_costs() {
    let mut m = PazaMetrics { precision: 0.0, recall: 0.0, specificity: 0.0, accuracy: 0.0, f1: 0.0 };
    assert_eq!(unsafe { paza_confusion_metrics(8, 2, 85, 5, &mut m) }, PazaStatus::Ok);
    assert!((m.precision - 0.8).abs() < 1e-12);
    assert!((m.recall - 8.0 / 13.0).abs() < 1e-12);
    assert!((m.accuracy - 0.93).abs() < 1e-12);
    assert_eq!(unsafe { paza_confusion_metrics(0, 0, 3, 0, &mut m) }, PazaStatus::Ok);
    assert!(m.precision.is_nan() && m.recall.is_nan() && m.f1.is_nan());
    assert_eq!(m.specificity, 1.0);

    let mut params = PazaCostParams {
        gpu_usd_per_hr: 0.40,
        hours_per_day: 12.0,
        days_per_month: 30.0,
        stores_sharing: 10,
        db_low: 5.0,
        db_high: 15.0,
        network_low: 5.0,
        network_high: 10.0,
        vlm_low: f64::NAN,
        vlm_high: f64::NAN,
    };
    let mut cost = PazaCost { vlm_per_store: 0.0, total_low: 0.0, total_high: 0.0 };
    assert_eq!(unsafe { paza_cost_model(&params, &mut cost) }, PazaStatus::Ok);
    assert_eq!(cost.vlm_per_store, 14.40);
    params.vlm_low = 20.0;
    params.vlm_high = 60.0;
    assert_eq!(unsafe { paza_cost_model(&params, &mut cost) }, PazaStatus::Ok);
    assert_eq!((cost.total_low, cost.total_high), (30.0, 85.0));
    params.stores_sharing = 0;
    assert_eq!(unsafe { paza_cost_model(&params, &mut cost) }, PazaStatus::InvalidArgument);
    assert!(last_error().contains("stores_sharing"));

    let (mut lo, mut hi) = (0.0, 0.0);
    assert_eq!(unsafe { paza_call_volume(10.0, 60.0, 12.0, 30.0, &mut lo, &mut hi) }, PazaStatus::Ok);
    assert_eq!((lo, hi), (3_600.0, 21_600.0));
}
