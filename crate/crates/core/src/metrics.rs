//! Evaluation metrics over trace files: jump-length distribution, per-agent
//! radius of gyration, category counts, and a two-sample KS statistic
//! against reference check-ins.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::geo::{haversine_km, GeoPoint};
use crate::poi::{CheckinLog, PoiStore};
use crate::trace::{TraceRecord, FAILED_DAY_ACTIVITY};

/// Jump-length bin edges in km; bin i covers [edges[i], edges[i+1]) and the
/// last bin is open-ended.
pub const JUMP_BIN_EDGES_KM: [f64; 8] = [0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0];

const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpHistogram {
    pub edges_km: Vec<f64>,
    /// One count per bin; same length as `edges_km`, last bin unbounded.
    pub counts: Vec<u64>,
    pub total: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub jump_lengths: JumpHistogram,
    pub radius_of_gyration_km: BTreeMap<String, f64>,
    pub category_histogram: BTreeMap<String, u64>,
    pub ks_statistic_vs_reference: Option<f64>,
}

/// Visits only: failed-day markers carry no movement information.
fn visits(records: &[TraceRecord]) -> Vec<&TraceRecord> {
    records.iter().filter(|r| r.activity != FAILED_DAY_ACTIVITY).collect()
}

fn sorted_visits(records: &[TraceRecord]) -> Vec<&TraceRecord> {
    let mut visits = visits(records);
    visits.sort_by(|a, b| {
        a.agent_id
            .cmp(&b.agent_id)
            .then_with(|| a.day.cmp(&b.day))
            .then_with(|| a.start.cmp(&b.start))
    });
    visits
}

/// Haversine distances between consecutive same-agent same-day visits,
/// zeros included (staying put is a jump of length 0).
pub fn jump_lengths_km(records: &[TraceRecord]) -> Vec<f64> {
    let visits = sorted_visits(records);
    let mut jumps = Vec::new();
    for pair in visits.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.agent_id == b.agent_id && a.day == b.day {
            let from = GeoPoint::new(a.lat, a.lon).expect("trace coordinates are valid");
            let to = GeoPoint::new(b.lat, b.lon).expect("trace coordinates are valid");
            jumps.push(haversine_km(from, to));
        }
    }
    jumps
}

pub fn histogram(samples: &[f64]) -> JumpHistogram {
    let mut counts = vec![0u64; JUMP_BIN_EDGES_KM.len()];
    for &sample in samples {
        // partition_point gives the first edge above the sample; the bin is
        // the edge at or below it.
        let bin = JUMP_BIN_EDGES_KM.partition_point(|edge| *edge <= sample);
        counts[bin.saturating_sub(1)] += 1;
    }
    JumpHistogram {
        edges_km: JUMP_BIN_EDGES_KM.to_vec(),
        counts,
        total: samples.len() as u64,
    }
}

/// Root-mean-square haversine distance of each agent's visits from their
/// centroid (arithmetic mean of latitudes and longitudes).
pub fn radius_of_gyration_km(records: &[TraceRecord]) -> BTreeMap<String, f64> {
    let mut per_agent: BTreeMap<&str, Vec<GeoPoint>> = BTreeMap::new();
    for record in visits(records) {
        let point = GeoPoint::new(record.lat, record.lon).expect("trace coordinates are valid");
        per_agent.entry(&record.agent_id).or_default().push(point);
    }
    per_agent
        .into_iter()
        .map(|(agent, points)| {
            let n = points.len() as f64;
            let lat = points.iter().map(|p| p.lat()).sum::<f64>() / n;
            let lon = points.iter().map(|p| p.lon()).sum::<f64>() / n;
            let centroid = GeoPoint::new(lat, lon).expect("mean of valid coordinates is valid");
            let mean_sq = points
                .iter()
                .map(|p| haversine_km(*p, centroid).powi(2))
                .sum::<f64>()
                / n;
            (agent.to_string(), mean_sq.sqrt())
        })
        .collect()
}

pub fn category_histogram(records: &[TraceRecord]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for record in visits(records) {
        *counts.entry(record.category.clone()).or_insert(0) += 1;
    }
    counts
}

/// Two-sample Kolmogorov-Smirnov statistic: the largest absolute gap
/// between the two empirical CDFs. Ties are consumed from both samples
/// before the gap is measured, so identical samples give exactly 0.
/// Returns None when either sample is empty.
pub fn ks_statistic(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.is_empty() || ys.is_empty() {
        return None;
    }
    let mut x = xs.to_vec();
    let mut y = ys.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let value = x[i].min(y[j]);
        while i < x.len() && x[i] == value {
            i += 1;
        }
        while j < y.len() && y[j] == value {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    // Once one sample is exhausted its CDF sits at 1 and the gap only
    // shrinks as the other catches up, so the loop has already seen the max.
    Some(d)
}

/// Jump lengths implied by the reference check-ins: consecutive same-user
/// same-UTC-day check-ins, distances via the POI store. Check-ins naming
/// unknown POIs are skipped.
pub fn reference_jumps_km(checkins: &CheckinLog, store: &PoiStore) -> Vec<f64> {
    let mut located: Vec<(&str, i64, GeoPoint)> = checkins
        .records()
        .iter()
        .filter_map(|record| {
            store
                .get(&record.poi_id)
                .map(|poi| (record.user_id.as_str(), record.timestamp, poi.location))
        })
        .collect();
    located.sort_by(|a, b| a.0.cmp(b.0).then_with(|| a.1.cmp(&b.1)));
    let mut jumps = Vec::new();
    for pair in located.windows(2) {
        let (user_a, time_a, from) = pair[0];
        let (user_b, time_b, to) = pair[1];
        if user_a == user_b && time_a.div_euclid(SECONDS_PER_DAY) == time_b.div_euclid(SECONDS_PER_DAY)
        {
            jumps.push(haversine_km(from, to));
        }
    }
    jumps
}

pub fn compute_metrics(
    records: &[TraceRecord],
    reference: Option<(&CheckinLog, &PoiStore)>,
) -> MetricsReport {
    let jumps = jump_lengths_km(records);
    let ks = reference.and_then(|(checkins, store)| {
        ks_statistic(&jumps, &reference_jumps_km(checkins, store))
    });
    MetricsReport {
        jump_lengths: histogram(&jumps),
        radius_of_gyration_km: radius_of_gyration_km(records),
        category_histogram: category_histogram(records),
        ks_statistic_vs_reference: ks,
    }
}
