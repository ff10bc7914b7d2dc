//! C ABI over `paza-core`.
//!
//! Every function returns a [`PazaStatus`]; on failure the message is
//! available from [`paza_last_error`] on the same thread. Strings handed
//! out by the library are freed with [`paza_string_free`], pipelines with
//! [`paza_pipeline_free`]. No function unwinds across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::time::Duration;

use paza_core::alerts::cost::{call_volume_projection, cost_model, CostParams, Range};
use paza_core::alerts::metrics::confusion_metrics;
use paza_core::alerts::{AlertStore, ReviewError, ReviewStatus};
use paza_core::config::Config;
use paza_core::event::parse_frame_event;
use paza_core::gateway::{parse_verdict, Category, HttpTransport, Transport};
use paza_core::pipeline::{Pipeline, PipelineError};
use paza_core::sim::mock::{shared, MockScript, ScriptedTransport};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PazaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    InvalidEvent = 4,
    StaleEvent = 5,
    StoreError = 6,
    ParseError = 7,
    InvalidArgument = 8,
    NotFound = 9,
    Conflict = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PazaCategory {
    Confirmed = 0,
    Uncertain = 1,
    Normal = 2,
    Skipped = 3,
}

impl From<Category> for PazaCategory {
    fn from(c: Category) -> Self {
        match c {
            Category::Confirmed => PazaCategory::Confirmed,
            Category::Uncertain => PazaCategory::Uncertain,
            Category::Normal => PazaCategory::Normal,
            Category::Skipped => PazaCategory::Skipped,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PazaVerdict {
    pub category: PazaCategory,
    pub confidence: u8,
}

/// Ratios are NaN when their denominator is zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PazaMetrics {
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub f1: f64,
}

/// Monthly USD figures. Set `vlm_low`/`vlm_high` to NaN to derive the VLM
/// line from the GPU share.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PazaCostParams {
    pub gpu_usd_per_hr: f64,
    pub hours_per_day: f64,
    pub days_per_month: f64,
    pub stores_sharing: u32,
    pub db_low: f64,
    pub db_high: f64,
    pub network_low: f64,
    pub network_high: f64,
    pub vlm_low: f64,
    pub vlm_high: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PazaCost {
    pub vlm_per_store: f64,
    pub total_low: f64,
    pub total_high: f64,
}

/// Opaque pipeline handle.
pub struct PazaPipeline {
    inner: Pipeline,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(PazaStatus, String);

impl Failure {
    fn new(status: PazaStatus, message: impl std::fmt::Display) -> Self {
        Failure(status, message.to_string())
    }
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PazaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PazaStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            PazaStatus::Panic
        }
    }
}

unsafe fn opt_str<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| Failure::new(PazaStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn req_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    opt_str(p, what)?.ok_or_else(|| Failure::new(PazaStatus::NullArgument, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::new(PazaStatus::NullArgument, format!("{what} is null")))
}

unsafe fn handle<'a>(p: *mut PazaPipeline) -> Result<&'a mut PazaPipeline, Failure> {
    out_ptr(p, "pipeline")
}

fn to_c(s: String) -> *mut c_char {
    CString::new(s).expect("JSON has no NUL bytes").into_raw()
}

fn nan_if_none(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

fn pipeline_error(e: PipelineError) -> Failure {
    let status = match e {
        PipelineError::Invalid(_) => PazaStatus::InvalidEvent,
        PipelineError::Stale(_) => PazaStatus::StaleEvent,
        PipelineError::Store(_) => PazaStatus::StoreError,
    };
    Failure::new(status, e)
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn paza_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn paza_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn paza_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a pipeline.
///
/// `config_toml` may be NULL for defaults; environment overrides apply
/// either way. With `mock_script_json` set, VLM calls are answered in
/// process by the scripted mock instead of the configured endpoint.
/// `alerts_dir` (nullable) persists alerts there.
///
/// # Safety
/// String arguments must be NULL or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn paza_pipeline_new(
    config_toml: *const c_char,
    mock_script_json: *const c_char,
    alerts_dir: *const c_char,
    out: *mut *mut PazaPipeline,
) -> PazaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let invalid = |e: &dyn std::fmt::Display| Failure::new(PazaStatus::InvalidConfig, e);
        let mut cfg = match opt_str(config_toml, "config_toml")? {
            Some(t) => Config::from_toml(t, "<config>").map_err(|e| invalid(&e))?,
            None => Config::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok()).map_err(|e| invalid(&e))?;
        if let Some(d) = opt_str(alerts_dir, "alerts_dir")? {
            cfg.alerts.dir = Some(d.into());
        }
        cfg.validate().map_err(|e| invalid(&e))?;
        let timeout_ms = (cfg.gateway.request_timeout_s * 1000.0).round() as u64;
        let transport: Box<dyn Transport> = match opt_str(mock_script_json, "mock_script_json")? {
            Some(j) => {
                let script = MockScript::from_json(j).map_err(|e| invalid(&e))?;
                Box::new(ScriptedTransport::new(shared(script), timeout_ms))
            }
            None => Box::new(
                HttpTransport::new(&cfg.gateway.api_url, Duration::from_millis(timeout_ms), cfg.gateway.api_key.clone())
                    .map_err(|e| invalid(&e))?,
            ),
        };
        let store = match &cfg.alerts.dir {
            Some(d) => AlertStore::open(Path::new(d), cfg.alerts.obfuscate_snapshots)
                .map_err(|e| Failure::new(PazaStatus::StoreError, e))?,
            None => AlertStore::in_memory(),
        };
        *out = Box::into_raw(Box::new(PazaPipeline { inner: Pipeline::new(cfg, transport, store) }));
        Ok(())
    })
}

/// # Safety
/// `p` must be NULL or a pipeline from [`paza_pipeline_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn paza_pipeline_free(p: *mut PazaPipeline) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Ingests one FrameEvent JSON line. `alerts_created` (nullable) receives
/// the number of alerts this frame produced.
///
/// # Safety
/// `p` must be a live pipeline; `frame_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn paza_pipeline_ingest(
    p: *mut PazaPipeline,
    frame_json: *const c_char,
    alerts_created: *mut u32,
) -> PazaStatus {
    guard(|| {
        let h = handle(p)?;
        let line = req_str(frame_json, "frame_json")?;
        let event = parse_frame_event(line).map_err(|e| Failure::new(PazaStatus::InvalidEvent, e))?;
        let out = h.inner.ingest(&event).map_err(pipeline_error)?;
        if let Some(n) = alerts_created.as_mut() {
            *n = out.alerts.len() as u32;
        }
        Ok(())
    })
}

/// Ends the input: drains the retry queue and applies retention.
///
/// # Safety
/// `p` must be a live pipeline.
#[no_mangle]
pub unsafe extern "C" fn paza_pipeline_finish(p: *mut PazaPipeline) -> PazaStatus {
    guard(|| {
        let h = handle(p)?;
        h.inner.drain().map_err(pipeline_error)?;
        h.inner.cleanup_retention().map_err(|e| Failure::new(PazaStatus::StoreError, e))?;
        Ok(())
    })
}

/// Run report as JSON. Free `out` with [`paza_string_free`].
///
/// # Safety
/// `p` must be a live pipeline; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn paza_pipeline_report_json(p: *mut PazaPipeline, out: *mut *mut c_char) -> PazaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = to_c(handle(p)?.inner.report(None).to_json());
        Ok(())
    })
}

/// Alerts created at or after `since_ms`, as a JSON array.
///
/// # Safety
/// `p` must be a live pipeline; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn paza_pipeline_alerts_json(
    p: *mut PazaPipeline,
    since_ms: u64,
    out: *mut *mut c_char,
) -> PazaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let alerts = handle(p)?.inner.store().since(since_ms);
        *out = to_c(serde_json::to_string(&alerts).expect("alerts serialize"));
        Ok(())
    })
}

/// Records a review. `decision` is `"confirmed"` or `"dismissed"`; `note`
/// may be NULL.
///
/// # Safety
/// `p` must be a live pipeline; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn paza_pipeline_review(
    p: *mut PazaPipeline,
    alert_id: *const c_char,
    decision: *const c_char,
    note: *const c_char,
) -> PazaStatus {
    guard(|| {
        let h = handle(p)?;
        let id = req_str(alert_id, "alert_id")?;
        let decision = match req_str(decision, "decision")?.parse::<ReviewStatus>() {
            Ok(d @ (ReviewStatus::Confirmed | ReviewStatus::Dismissed)) => d,
            _ => return Err(Failure::new(PazaStatus::InvalidArgument, "decision must be confirmed or dismissed")),
        };
        let note = opt_str(note, "note")?.map(str::to_string);
        let now = h.inner.clock_ms();
        h.inner.store_mut().review(id, decision, note, now).map(|_| ()).map_err(|e| {
            let status = match e {
                ReviewError::NotFound(_) => PazaStatus::NotFound,
                ReviewError::AlreadyReviewed(_) => PazaStatus::Conflict,
                ReviewError::InvalidDecision => PazaStatus::InvalidArgument,
                ReviewError::Store(_) => PazaStatus::StoreError,
            };
            Failure::new(status, e)
        })
    })
}

/// # Safety
/// `text` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn paza_parse_verdict(text: *const c_char, out: *mut PazaVerdict) -> PazaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let v = parse_verdict(req_str(text, "text")?).map_err(|e| Failure::new(PazaStatus::ParseError, e))?;
        *out = PazaVerdict { category: v.category.into(), confidence: v.confidence };
        Ok(())
    })
}

/// # Safety
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn paza_confusion_metrics(
    tp: u64,
    fp: u64,
    tn: u64,
    fn_: u64,
    out: *mut PazaMetrics,
) -> PazaStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let m = confusion_metrics(tp, fp, tn, fn_);
        *out = PazaMetrics {
            precision: nan_if_none(m.precision),
            recall: nan_if_none(m.recall),
            specificity: nan_if_none(m.specificity),
            accuracy: nan_if_none(m.accuracy),
            f1: nan_if_none(m.f1),
        };
        Ok(())
    })
}

/// # Safety
/// `params` readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn paza_cost_model(params: *const PazaCostParams, out: *mut PazaCost) -> PazaStatus {
    guard(|| {
        let p = *params.as_ref().ok_or_else(|| Failure::new(PazaStatus::NullArgument, "params is null"))?;
        let out = out_ptr(out, "out")?;
        let vlm = (!p.vlm_low.is_nan() && !p.vlm_high.is_nan()).then(|| Range::new(p.vlm_low, p.vlm_high));
        let params = CostParams {
            gpu_usd_per_hr: p.gpu_usd_per_hr,
            hours_per_day: p.hours_per_day,
            days_per_month: p.days_per_month,
            stores_sharing: p.stores_sharing,
            db_usd_month: Range::new(p.db_low, p.db_high),
            network_usd_month: Range::new(p.network_low, p.network_high),
            vlm_usd_month: vlm,
        };
        let b = cost_model(&params).map_err(|e| Failure::new(PazaStatus::InvalidArgument, e))?;
        *out = PazaCost { vlm_per_store: b.vlm_per_store, total_low: b.total_low, total_high: b.total_high };
        Ok(())
    })
}

/// Monthly VLM call range for a per-hour call range.
///
/// # Safety
/// `out_low` and `out_high` writable.
#[no_mangle]
pub unsafe extern "C" fn paza_call_volume(
    calls_per_hour_low: f64,
    calls_per_hour_high: f64,
    hours_per_day: f64,
    days: f64,
    out_low: *mut f64,
    out_high: *mut f64,
) -> PazaStatus {
    guard(|| {
        let (lo, hi) = (out_ptr(out_low, "out_low")?, out_ptr(out_high, "out_high")?);
        let r = call_volume_projection(calls_per_hour_low, calls_per_hour_high, hours_per_day, days);
        *lo = r.low;
        *hi = r.high;
        Ok(())
    })
}
