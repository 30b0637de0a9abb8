//! Trace file format: one JSON record per visit, sorted, plus GeoJSON export.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::activity::DayTrace;
use crate::memory::MINUTES_PER_DAY;
use crate::poi::Poi;

/// Activity name of the single marker record an aborted agent-day leaves
/// behind; metrics treat it as a non-visit.
pub const FAILED_DAY_ACTIVITY: &str = "failed_day";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("cannot serialize record: {0}")]
    Serialize(#[source] serde_json::Error),
}

/// One visit on the wire. Field order here is the on-disk field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub agent_id: String,
    pub day: u32,
    /// Minutes since midnight.
    pub start: u32,
    pub end: u32,
    pub activity: String,
    pub category: String,
    pub poi_id: String,
    pub lat: f64,
    pub lon: f64,
    pub fallback_flags: Vec<String>,
}

/// Flatten one agent-day. A completed day yields one record per stop; an
/// aborted day collapses to a single failed-day marker spanning the rest of
/// the day at the home POI, with the failure code as its only flag.
pub fn day_records(trace: &DayTrace, home: &Poi, day_start: u32) -> Vec<TraceRecord> {
    if let Some(code) = &trace.failed {
        return vec![TraceRecord {
            agent_id: trace.agent_id.clone(),
            day: trace.day_index,
            start: day_start,
            end: MINUTES_PER_DAY,
            activity: FAILED_DAY_ACTIVITY.to_string(),
            category: home.category.clone(),
            poi_id: home.id.clone(),
            lat: home.location.lat(),
            lon: home.location.lon(),
            fallback_flags: vec![code.clone()],
        }];
    }
    trace
        .activities
        .iter()
        .map(|stop| TraceRecord {
            agent_id: trace.agent_id.clone(),
            day: trace.day_index,
            start: stop.activity.start,
            end: stop.activity.end(),
            activity: stop.activity.activity_type.clone(),
            category: stop.activity.location_category.clone(),
            poi_id: stop.poi.id.clone(),
            lat: stop.poi.location.lat(),
            lon: stop.poi.location.lon(),
            fallback_flags: stop.flags.clone(),
        })
        .collect()
}

/// Deterministic record order, independent of how agents were scheduled.
pub fn sort_records(records: &mut [TraceRecord]) {
    records.sort_by(|a, b| {
        a.agent_id
            .cmp(&b.agent_id)
            .then_with(|| a.day.cmp(&b.day))
            .then_with(|| a.start.cmp(&b.start))
    });
}

/// Write records as JSONL in (agent_id, day, start) order.
pub fn write_trace(records: &mut [TraceRecord], mut sink: impl Write) -> Result<(), TraceError> {
    sort_records(records);
    for record in records.iter() {
        let line = serde_json::to_string(record).map_err(TraceError::Serialize)?;
        sink.write_all(line.as_bytes())?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace(source: impl BufRead) -> Result<Vec<TraceRecord>, TraceError> {
    let mut records = Vec::new();
    for (index, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord = serde_json::from_str(&line)
            .map_err(|source| TraceError::Malformed { line: index + 1, source })?;
        records.push(record);
    }
    Ok(records)
}

/// GeoJSON FeatureCollection: one LineString per (agent, day) in visit
/// order. A single-visit day repeats its coordinate so viewers still get a
/// drawable line.
pub fn export_geojson(records: &[TraceRecord]) -> Value {
    let mut sorted: Vec<&TraceRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        a.agent_id
            .cmp(&b.agent_id)
            .then_with(|| a.day.cmp(&b.day))
            .then_with(|| a.start.cmp(&b.start))
    });

    let mut features = Vec::new();
    let mut group: Option<(&str, u32)> = None;
    let mut coordinates: Vec<[f64; 2]> = Vec::new();
    let mut flush = |group: Option<(&str, u32)>, coordinates: &mut Vec<[f64; 2]>| {
        let Some((agent_id, day)) = group else { return };
        if coordinates.len() == 1 {
            let only = coordinates[0];
            coordinates.push(only);
        }
        features.push(json!({
            "type": "Feature",
            "properties": { "agent_id": agent_id, "day": day },
            "geometry": { "type": "LineString", "coordinates": coordinates },
        }));
        coordinates.clear();
    };

    for record in sorted {
        let key = (record.agent_id.as_str(), record.day);
        if group != Some(key) {
            flush(group, &mut coordinates);
            group = Some(key);
        }
        // GeoJSON positions are [longitude, latitude].
        coordinates.push([record.lon, record.lat]);
    }
    flush(group, &mut coordinates);

    json!({ "type": "FeatureCollection", "features": features })
}
