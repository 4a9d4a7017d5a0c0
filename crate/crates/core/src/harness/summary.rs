use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use super::{Metric, SelfMonitoringRecord};

/// One component over one window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowReport {
    pub component: String,
    pub window_start: i64,
    pub window_end: i64,
    pub availability: Option<f64>,
    pub latency_p50_ms: Option<f64>,
    pub latency_p95_ms: Option<f64>,
    pub max_info_age_ms: Option<f64>,
    pub max_archiver_lag: Option<f64>,
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (p * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

/// Fraction of `[start, end)` covered by the step function `samples`
/// (value holds until the next sample, the last one until `horizon`),
/// over the part of the window the function is defined on.
fn availability(samples: &[(i64, f64)], start: i64, end: i64, horizon: i64) -> Option<f64> {
    let mut covered = 0i64;
    let mut up = 0.0;
    for (i, (t, v)) in samples.iter().enumerate() {
        let until = samples.get(i + 1).map_or(horizon, |n| n.0);
        let a = (*t).max(start);
        let b = until.min(end);
        if b > a {
            covered += b - a;
            up += v * (b - a) as f64;
        }
    }
    (covered > 0).then(|| up / covered as f64)
}

/// Per-window availability, latency percentiles, information age and
/// archiver lag. Windows are aligned to multiples of `window_ms` and run
/// up to `end` (default: one past the last record).
pub fn summarize(records: &[SelfMonitoringRecord], window_ms: i64, end: Option<i64>) -> Vec<WindowReport> {
    if records.is_empty() || window_ms <= 0 {
        return vec![];
    }
    let first = records.iter().map(|r| r.ts).min().expect("non-empty");
    let horizon = end.unwrap_or_else(|| records.iter().map(|r| r.ts).max().expect("non-empty") + 1);
    let mut by: BTreeMap<&str, BTreeMap<Metric, Vec<(i64, f64)>>> = BTreeMap::new();
    for r in records {
        by.entry(&r.component).or_default().entry(r.metric).or_default().push((r.ts, r.value));
    }
    let mut out = Vec::new();
    let mut w = first.div_euclid(window_ms) * window_ms;
    while w < horizon {
        let e = w + window_ms;
        for (component, metrics) in &by {
            let within = |m: Metric| -> Vec<f64> {
                metrics.get(&m).map_or(vec![], |v| v.iter().filter(|(t, _)| *t >= w && *t < e).map(|x| x.1).collect())
            };
            let avail = metrics.get(&Metric::Available).and_then(|s| {
                let mut s = s.clone();
                s.sort_by_key(|x| x.0);
                availability(&s, w, e, horizon)
            });
            let mut lat = within(Metric::ResponseTimeMs);
            lat.sort_by(f64::total_cmp);
            let max = |v: Vec<f64>| v.into_iter().max_by(f64::total_cmp);
            let report = WindowReport {
                component: component.to_string(),
                window_start: w,
                window_end: e,
                availability: avail,
                latency_p50_ms: percentile(&lat, 0.5),
                latency_p95_ms: percentile(&lat, 0.95),
                max_info_age_ms: max(within(Metric::InfoAgeMs)),
                max_archiver_lag: max(within(Metric::ArchiverLag)),
            };
            if report.availability.is_some()
                || report.latency_p50_ms.is_some()
                || report.max_info_age_ms.is_some()
                || report.max_archiver_lag.is_some()
            {
                out.push(report);
            }
        }
        w = e;
    }
    out
}

pub fn write_summary_csv<W: Write>(reports: &[WindowReport], w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for r in reports {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct RecordRow<'a> {
    component: &'a str,
    metric: &'static str,
    value: f64,
    ts: i64,
}

pub fn write_records_csv<W: Write>(records: &[SelfMonitoringRecord], w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(RecordRow { component: &r.component, metric: r.metric.name(), value: r.value, ts: r.ts })?;
    }
    wr.flush()?;
    Ok(())
}
