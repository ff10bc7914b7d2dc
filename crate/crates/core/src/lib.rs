//! Orchestration engine for zero-shot retail concealment detection.
//!
//! Per-frame detection events flow through a track registry, a behavioral
//! pre-filter and a clip builder; fired candidates are sent to any
//! OpenAI-compatible vision-language endpoint under a global rate limit,
//! with a bounded retry queue, and positive verdicts land in an append-only
//! alert store.

pub mod alerts;
pub mod clip;
pub mod event;
pub mod prefilter;
pub mod registry;
pub mod gateway;
pub mod privacy;
pub mod sim;
pub mod config;
pub mod pipeline;
pub mod service;
pub mod evaluate;
