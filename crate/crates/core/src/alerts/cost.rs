//! Monthly infrastructure cost and call-volume projections.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Inclusive dollar (or count) range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub low: f64,
    pub high: f64,
}

impl Range {
    pub fn new(low: f64, high: f64) -> Self {
        Range { low, high }
    }

    pub fn point(v: f64) -> Self {
        Range { low: v, high: v }
    }
}

impl fmt::Display for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.low == self.high {
            write!(f, "{:.2}", self.low)
        } else {
            write!(f, "{:.2}-{:.2}", self.low, self.high)
        }
    }
}

/// Parses `"5"` or `"5-15"`.
impl FromStr for Range {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("bad amount {t:?}: {e}"));
        match s.split_once('-') {
            Some((a, b)) => Ok(Range::new(num(a)?, num(b)?)),
            None => num(s).map(Range::point),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub gpu_usd_per_hr: f64,
    pub hours_per_day: f64,
    pub days_per_month: f64,
    pub stores_sharing: u32,
    pub db_usd_month: Range,
    pub network_usd_month: Range,
    /// Replaces the computed VLM line with a quoted range, e.g. a managed
    /// API tier. `None` uses `vlm_per_store` as a point value.
    pub vlm_usd_month: Option<Range>,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            gpu_usd_per_hr: 0.40,
            hours_per_day: 12.0,
            days_per_month: 30.0,
            stores_sharing: 10,
            db_usd_month: Range::new(5.0, 15.0),
            network_usd_month: Range::new(5.0, 10.0),
            vlm_usd_month: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid cost parameter {field}: {message}")]
pub struct CostParamError {
    pub field: &'static str,
    pub message: String,
}

impl CostParams {
    pub fn validate(&self) -> Result<(), CostParamError> {
        let scalars = [
            ("gpu_usd_per_hr", self.gpu_usd_per_hr),
            ("hours_per_day", self.hours_per_day),
            ("days_per_month", self.days_per_month),
        ];
        for (field, v) in scalars {
            if !v.is_finite() || v < 0.0 {
                return Err(CostParamError { field, message: format!("{v} must be >= 0") });
            }
        }
        let mut ranges = vec![("db_usd_month", self.db_usd_month), ("network_usd_month", self.network_usd_month)];
        if let Some(r) = self.vlm_usd_month {
            ranges.push(("vlm_usd_month", r));
        }
        for (field, r) in ranges {
            if !(r.low.is_finite() && r.high.is_finite()) || r.low < 0.0 || r.high < r.low {
                return Err(CostParamError { field, message: format!("range {r} must satisfy 0 <= low <= high") });
            }
        }
        if self.stores_sharing < 1 {
            return Err(CostParamError { field: "stores_sharing", message: "must be >= 1".into() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostLine {
    pub component: String,
    pub usd_month: Range,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub vlm_per_store: f64,
    pub lines: Vec<CostLine>,
    pub total_low: f64,
    pub total_high: f64,
}

impl CostBreakdown {
    pub fn table(&self) -> String {
        let mut out = String::from("component          usd/month\n");
        for l in &self.lines {
            out.push_str(&format!("{:<18} {}\n", l.component, l.usd_month));
        }
        out.push_str(&format!("{:<18} {}\n", "total", Range::new(self.total_low, self.total_high)));
        out
    }
}

fn cents(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

pub fn cost_model(p: &CostParams) -> Result<CostBreakdown, CostParamError> {
    p.validate()?;
    let vlm_per_store = cents(p.gpu_usd_per_hr * p.hours_per_day * p.days_per_month / f64::from(p.stores_sharing));
    let vlm = p.vlm_usd_month.unwrap_or(Range::point(vlm_per_store));
    let lines = vec![
        CostLine { component: "vlm_inference".into(), usd_month: vlm },
        CostLine { component: "database".into(), usd_month: p.db_usd_month },
        CostLine { component: "network".into(), usd_month: p.network_usd_month },
    ];
    let total_low = cents(lines.iter().map(|l| l.usd_month.low).sum());
    let total_high = cents(lines.iter().map(|l| l.usd_month.high).sum());
    Ok(CostBreakdown { vlm_per_store, lines, total_low, total_high })
}

/// Monthly calls from an hourly range.
pub fn call_volume_projection(calls_per_hour_low: f64, calls_per_hour_high: f64, hours_per_day: f64, days: f64) -> Range {
    Range::new(calls_per_hour_low * hours_per_day * days, calls_per_hour_high * hours_per_day * days)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_gpu_per_store() {
        let b = cost_model(&CostParams::default()).unwrap();
        assert_eq!(b.vlm_per_store, 14.40);
        let solo = cost_model(&CostParams { stores_sharing: 1, ..CostParams::default() }).unwrap();
        assert_eq!(solo.vlm_per_store, 144.00);
    }

    #[test]
    fn component_ranges_total() {
        let p = CostParams { vlm_usd_month: Some(Range::new(20.0, 60.0)), ..CostParams::default() };
        let b = cost_model(&p).unwrap();
        assert_eq!((b.total_low, b.total_high), (30.0, 85.0));
        assert!(b.table().contains("total              30.00-85.00"));
    }

    #[test]
    fn rejects_bad_params() {
        assert!(cost_model(&CostParams { stores_sharing: 0, ..CostParams::default() }).is_err());
        assert!(cost_model(&CostParams { gpu_usd_per_hr: -1.0, ..CostParams::default() }).is_err());
        assert!(cost_model(&CostParams { db_usd_month: Range::new(9.0, 3.0), ..CostParams::default() }).is_err());
    }

    #[test]
    fn projections() {
        assert_eq!(call_volume_projection(10.0, 60.0, 12.0, 30.0), Range::new(3_600.0, 21_600.0));
        assert_eq!(call_volume_projection(0.0, 0.0, 12.0, 30.0), Range::new(0.0, 0.0));
        assert_eq!(call_volume_projection(10.0, 10.0, 1.0, 1.0), Range::new(10.0, 10.0));
    }

    #[test]
    fn range_parsing() {
        assert_eq!("5-15".parse::<Range>().unwrap(), Range::new(5.0, 15.0));
        assert_eq!("7.5".parse::<Range>().unwrap(), Range::point(7.5));
        assert!("x".parse::<Range>().is_err());
    }
}
