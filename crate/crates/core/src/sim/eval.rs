//! Trigger-level evaluation against simulator ground truth.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::alerts::metrics::{ratio, undefined_marker};
use crate::registry::TrackKey;
use crate::sim::trace::{Behavior, GroundTruth};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriggerEval {
    pub concealers: u64,
    pub concealers_fired: u64,
    pub fires_total: u64,
    pub fires_on_concealers: u64,
    #[serde(serialize_with = "undefined_marker")]
    pub trigger_recall: Option<f64>,
    #[serde(serialize_with = "undefined_marker")]
    pub trigger_precision: Option<f64>,
}

/// `fired` holds the track key of every Fire, repeats included.
pub fn trigger_eval<'a, I>(fired: I, truth: &GroundTruth) -> TriggerEval
where
    I: IntoIterator<Item = &'a TrackKey>,
{
    let concealers: BTreeSet<&TrackKey> =
        truth.shoppers.iter().filter(|s| s.behavior == Behavior::Conceal).map(|s| &s.key).collect();
    let mut fires_total = 0;
    let mut fires_on_concealers = 0;
    let mut hit = BTreeSet::new();
    for key in fired {
        fires_total += 1;
        if concealers.contains(key) {
            fires_on_concealers += 1;
            hit.insert(key);
        }
    }
    let n = concealers.len() as u64;
    let concealers_fired = hit.len() as u64;
    TriggerEval {
        concealers: n,
        concealers_fired,
        fires_total,
        fires_on_concealers,
        trigger_recall: ratio(concealers_fired, n),
        trigger_precision: ratio(fires_on_concealers, fires_total),
    }
}
