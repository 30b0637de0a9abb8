//! Per-agent memory: raw visit log, rolled-up summaries, and pruning.
//!
//! Three layers with different lifetimes. The raw visit log is append-only
//! and never pruned; its only compaction is the lossy counter that tracks
//! per-POI visit frequencies in bounded memory. Summaries roll up the log
//! day by day, then week by week (7-day windows from day 0), then into
//! 28-day months. Once a summary has been rolled into its parent it becomes
//! prune-eligible: it survives only while its importance score clears the
//! threshold. Importance combines information density, recency, and access
//! frequency through a sigmoid, so it always lands strictly inside (0, 1)
//! and is recomputed from current fields on every read.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::frequency::{FrequencyError, LossyCounter};
use crate::geo::GeoPoint;

pub const MINUTES_PER_DAY: u32 = 1440;
pub const DAYS_PER_WEEK: u32 = 7;
pub const DAYS_PER_MONTH: u32 = 28;

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("{name} must be positive and finite, got {value}")]
    NonPositiveParam { name: &'static str, value: f64 },
    #[error("threshold must be in (0, 1), got {0}")]
    InvalidThreshold(f64),
    #[error("density weights must be nonnegative, with events and entities weighted at least as high as attributes")]
    InvalidDensityWeights,
    #[error(transparent)]
    Frequency(#[from] FrequencyError),
}

/// Relative weight of each tag class when scoring a summary's density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityWeights {
    pub events: f64,
    pub entities: f64,
    pub actions: f64,
    pub attributes: f64,
}

impl Default for DensityWeights {
    fn default() -> Self {
        // Events and entities carry the most signal about a day.
        Self { events: 0.3, entities: 0.3, actions: 0.25, attributes: 0.15 }
    }
}

impl DensityWeights {
    pub fn validate(&self) -> Result<(), MemoryError> {
        let all = [self.events, self.entities, self.actions, self.attributes];
        let nonneg = all.iter().all(|w| w.is_finite() && *w >= 0.0);
        if !nonneg || self.events < self.attributes || self.entities < self.attributes {
            return Err(MemoryError::InvalidDensityWeights);
        }
        Ok(())
    }
}

/// Scoring constants. All are configuration; none come from measured data.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryParams {
    pub density_weight: f64,
    pub recency_weight: f64,
    pub frequency_weight: f64,
    pub bias: f64,
    /// Recency e-folding time in days.
    pub tau_days: f64,
    /// Access count that normalizes the frequency term to 1.
    pub access_cap: u64,
    /// Minimum importance a prune-eligible summary needs to survive.
    pub threshold: f64,
    pub density: DensityWeights,
}

impl Default for MemoryParams {
    fn default() -> Self {
        Self {
            density_weight: 4.0,
            recency_weight: 2.0,
            frequency_weight: 2.0,
            bias: 2.0,
            tau_days: 7.0,
            access_cap: 100,
            threshold: 0.5,
            density: DensityWeights::default(),
        }
    }
}

impl MemoryParams {
    pub fn validate(&self) -> Result<(), MemoryError> {
        for (name, value) in [
            ("density_weight", self.density_weight),
            ("recency_weight", self.recency_weight),
            ("frequency_weight", self.frequency_weight),
            ("tau_days", self.tau_days),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(MemoryError::NonPositiveParam { name, value });
            }
        }
        if !self.bias.is_finite() {
            return Err(MemoryError::NonPositiveParam { name: "bias", value: self.bias });
        }
        if self.access_cap == 0 {
            return Err(MemoryError::NonPositiveParam { name: "access_cap", value: 0.0 });
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(MemoryError::InvalidThreshold(self.threshold));
        }
        self.density.validate()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One stop in an agent's day, as recorded into memory.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitRecord {
    pub day_index: u32,
    /// Minutes since midnight.
    pub start: u32,
    pub activity_type: String,
    pub category: String,
    pub poi_id: String,
    pub location: GeoPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryLevel {
    Daily,
    Weekly,
    Monthly,
}

impl MemoryLevel {
    fn index(self) -> usize {
        match self {
            MemoryLevel::Daily => 0,
            MemoryLevel::Weekly => 1,
            MemoryLevel::Monthly => 2,
        }
    }
}

/// Tagged element counts of a summary window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TagCounts {
    /// Activities performed.
    pub events: u64,
    /// Distinct POIs visited.
    pub entities: u64,
    /// Non-anchor destination selections.
    pub actions: u64,
    /// Distinct categories visited.
    pub attributes: u64,
}

impl TagCounts {
    pub fn total(&self) -> u64 {
        self.events + self.entities + self.actions + self.attributes
    }

    fn add(&mut self, other: &TagCounts) {
        self.events += other.events;
        self.entities += other.entities;
        self.actions += other.actions;
        self.attributes += other.attributes;
    }
}

/// A summary at one level of the hierarchy. `importance` is not stored:
/// it is a pure function of the fields below and the scoring params.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryItem {
    pub level: MemoryLevel,
    pub period_key: u32,
    pub summary_text: String,
    pub tags: TagCounts,
    pub created_day: u32,
    pub access_count: u64,
    pub last_access_day: u32,
    /// Set once a parent summary covers this item; gates pruning.
    pub rolled_up: bool,
}

impl MemoryItem {
    /// Weighted tag density in [0, max weight]; zero tags give zero.
    pub fn info_density(&self, w: &DensityWeights) -> f64 {
        let t = &self.tags;
        let weighted = w.events * t.events as f64
            + w.entities * t.entities as f64
            + w.actions * t.actions as f64
            + w.attributes * t.attributes as f64;
        weighted / (t.total().max(1) as f64)
    }

    /// Importance in (0, 1), strictly increasing in density, recency, and
    /// access frequency.
    pub fn importance(&self, now_day: u32, params: &MemoryParams) -> f64 {
        debug_assert!(now_day >= self.created_day);
        let d = self.info_density(&params.density);
        let age = now_day.saturating_sub(self.last_access_day) as f64;
        let r = (-age / params.tau_days).exp();
        let f = (1.0 + self.access_count as f64).ln() / (1.0 + params.access_cap as f64).ln();
        sigmoid(
            params.density_weight * d + params.recency_weight * r + params.frequency_weight * f
                - params.bias,
        )
    }
}

/// What a history query returns: recent matching visits plus the single
/// best surviving summary that mentions the category.
#[derive(Debug, Clone, Default)]
pub struct RetrievedHistory {
    pub visits: Vec<VisitRecord>,
    pub summary: Option<MemoryItem>,
}

impl RetrievedHistory {
    pub fn is_empty(&self) -> bool {
        self.visits.is_empty() && self.summary.is_none()
    }

    /// Plain-text rendering for prompts.
    pub fn render(&self) -> String {
        let mut lines: Vec<String> = self
            .visits
            .iter()
            .map(|v| {
                format!(
                    "day {}, {:02}:{:02}: {} at {} ({})",
                    v.day_index,
                    v.start / 60,
                    v.start % 60,
                    v.activity_type,
                    v.poi_id,
                    v.category
                )
            })
            .collect();
        if let Some(summary) = &self.summary {
            lines.push(summary.summary_text.clone());
        }
        if lines.is_empty() {
            "no relevant history".to_string()
        } else {
            lines.join("\n")
        }
    }
}

/// Row of the memory dump: a summary plus every scoring input and output.
#[derive(Debug, Serialize)]
pub struct MemoryDumpRow {
    pub level: MemoryLevel,
    pub period_key: u32,
    pub summary_text: String,
    pub tags: TagCounts,
    pub created_day: u32,
    pub access_count: u64,
    pub last_access_day: u32,
    pub rolled_up: bool,
    pub density: f64,
    pub recency: f64,
    pub frequency_score: f64,
    pub importance: f64,
}

/// Single-writer memory owned by one agent.
#[derive(Debug, Clone)]
pub struct AgentMemory {
    params: MemoryParams,
    anchor_categories: BTreeSet<String>,
    visits: Vec<VisitRecord>,
    counter: LossyCounter<String>,
    items: Vec<MemoryItem>,
    created: [u64; 3],
}

impl AgentMemory {
    pub fn new(
        counter_epsilon: f64,
        params: MemoryParams,
        anchor_categories: BTreeSet<String>,
    ) -> Result<Self, MemoryError> {
        params.validate()?;
        Ok(Self {
            params,
            anchor_categories,
            visits: Vec::new(),
            counter: LossyCounter::new(counter_epsilon)?,
            items: Vec::new(),
            created: [0; 3],
        })
    }

    pub fn record_visit(&mut self, record: VisitRecord) {
        self.counter.observe(record.poi_id.clone());
        self.visits.push(record);
    }

    /// Estimated visits to a POI; a lower bound within the counter's epsilon.
    pub fn visit_count(&self, poi_id: &str) -> u64 {
        self.counter.estimate(poi_id)
    }

    pub fn visits(&self) -> &[VisitRecord] {
        &self.visits
    }

    pub fn items(&self) -> &[MemoryItem] {
        &self.items
    }

    pub fn params(&self) -> &MemoryParams {
        &self.params
    }

    /// Summaries created so far per level (daily, weekly, monthly),
    /// independent of pruning.
    pub fn created_counts(&self) -> (u64, u64, u64) {
        (self.created[0], self.created[1], self.created[2])
    }

    fn day_visits(&self, day_index: u32) -> Vec<&VisitRecord> {
        let mut day: Vec<&VisitRecord> =
            self.visits.iter().filter(|v| v.day_index == day_index).collect();
        day.sort_by(|a, b| a.start.cmp(&b.start).then_with(|| a.poi_id.cmp(&b.poi_id)));
        day
    }

    fn tags_for_day(&self, day: &[&VisitRecord]) -> TagCounts {
        let entities: BTreeSet<&str> = day.iter().map(|v| v.poi_id.as_str()).collect();
        let attributes: BTreeSet<&str> = day.iter().map(|v| v.category.as_str()).collect();
        let actions =
            day.iter().filter(|v| !self.anchor_categories.contains(&v.category)).count() as u64;
        TagCounts {
            events: day.len() as u64,
            entities: entities.len() as u64,
            actions,
            attributes: attributes.len() as u64,
        }
    }

    /// Summarize one day's visits. A day with no records produces a sentinel
    /// with zero tags so weekly rollups stay aligned.
    pub fn summarize_daily(&mut self, day_index: u32) -> &MemoryItem {
        debug_assert!(
            !self
                .items
                .iter()
                .any(|i| i.level == MemoryLevel::Daily && i.period_key == day_index),
            "day {day_index} summarized twice"
        );
        let day = self.day_visits(day_index);
        let tags = self.tags_for_day(&day);
        let summary_text = if day.is_empty() {
            format!("day {day_index}: no activity")
        } else {
            let parts: Vec<String> = day
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let end = day.get(i + 1).map_or(MINUTES_PER_DAY, |next| next.start);
                    format!(
                        "{} at {} ({}, {} min)",
                        v.activity_type,
                        v.poi_id,
                        v.category,
                        end.saturating_sub(v.start)
                    )
                })
                .collect();
            format!("day {day_index}: {}", parts.join("; "))
        };
        self.push_item(MemoryLevel::Daily, day_index, summary_text, tags, day_index)
    }

    /// Roll days `7w .. 7w+7` into a weekly summary; the covered daily items
    /// become prune-eligible.
    pub fn summarize_weekly(&mut self, week_index: u32) -> &MemoryItem {
        let first_day = week_index * DAYS_PER_WEEK;
        let days = first_day..first_day + DAYS_PER_WEEK;
        let tags = self.sum_and_mark(MemoryLevel::Daily, days.clone());
        let text = self.window_text("week", week_index, days.clone());
        self.push_item(MemoryLevel::Weekly, week_index, text, tags, days.end - 1)
    }

    /// Roll weeks `4m .. 4m+4` into a monthly summary.
    pub fn summarize_monthly(&mut self, month_index: u32) -> &MemoryItem {
        let first_week = month_index * (DAYS_PER_MONTH / DAYS_PER_WEEK);
        let weeks = first_week..first_week + DAYS_PER_MONTH / DAYS_PER_WEEK;
        let tags = self.sum_and_mark(MemoryLevel::Weekly, weeks);
        let first_day = month_index * DAYS_PER_MONTH;
        let days = first_day..first_day + DAYS_PER_MONTH;
        let text = self.window_text("month", month_index, days.clone());
        self.push_item(MemoryLevel::Monthly, month_index, text, tags, days.end - 1)
    }

    /// Elementwise tag sums over child items, marking each as rolled up.
    fn sum_and_mark(&mut self, level: MemoryLevel, keys: std::ops::Range<u32>) -> TagCounts {
        let mut tags = TagCounts::default();
        for item in &mut self.items {
            if item.level == level && keys.contains(&item.period_key) {
                tags.add(&item.tags);
                item.rolled_up = true;
            }
        }
        tags
    }

    /// Top-3 most frequent (activity, category) pairs over a day window,
    /// ties broken lexicographically.
    fn window_text(&self, label: &str, index: u32, days: std::ops::Range<u32>) -> String {
        let mut pair_counts: BTreeMap<(&str, &str), u64> = BTreeMap::new();
        for v in self.visits.iter().filter(|v| days.contains(&v.day_index)) {
            *pair_counts.entry((v.activity_type.as_str(), v.category.as_str())).or_insert(0) += 1;
        }
        if pair_counts.is_empty() {
            return format!("{label} {index}: no activity");
        }
        let mut pairs: Vec<(&(&str, &str), &u64)> = pair_counts.iter().collect();
        pairs.sort_by(|(pa, ca), (pb, cb)| cb.cmp(ca).then_with(|| pa.cmp(pb)));
        let top: Vec<String> = pairs
            .iter()
            .take(3)
            .map(|((activity, category), count)| format!("{activity} ({category}) x{count}"))
            .collect();
        format!("{label} {index}: top activities {}", top.join(", "))
    }

    fn push_item(
        &mut self,
        level: MemoryLevel,
        period_key: u32,
        summary_text: String,
        tags: TagCounts,
        created_day: u32,
    ) -> &MemoryItem {
        self.created[level.index()] += 1;
        self.items.push(MemoryItem {
            level,
            period_key,
            summary_text,
            tags,
            created_day,
            access_count: 0,
            last_access_day: created_day,
            rolled_up: false,
        });
        self.items.last().unwrap()
    }

    /// Close out a day: daily summary, any due rollups, then a prune pass at
    /// the configured threshold.
    pub fn end_of_day(&mut self, day_index: u32) {
        self.summarize_daily(day_index);
        if (day_index + 1) % DAYS_PER_WEEK == 0 {
            self.summarize_weekly(day_index / DAYS_PER_WEEK);
        }
        if (day_index + 1) % DAYS_PER_MONTH == 0 {
            self.summarize_monthly(day_index / DAYS_PER_MONTH);
        }
        let threshold = self.params.threshold;
        self.prune(threshold, day_index);
    }

    /// Drop rolled-up summaries scoring below `threshold`. The newest item
    /// at each level is always kept, and the raw visit log is untouched.
    /// Returns how many items were removed.
    pub fn prune(&mut self, threshold: f64, now_day: u32) -> usize {
        assert!((0.0..=1.0).contains(&threshold), "threshold must be in [0, 1]");
        let mut newest: [Option<usize>; 3] = [None; 3];
        for (i, item) in self.items.iter().enumerate() {
            newest[item.level.index()] = Some(i);
        }
        let params = self.params.clone();
        let before = self.items.len();
        let mut index = 0;
        self.items.retain(|item| {
            let keep = !item.rolled_up
                || newest[item.level.index()] == Some(index)
                || item.importance(now_day, &params) >= threshold;
            index += 1;
            keep
        });
        before - self.items.len()
    }

    /// The `k` most recent visits of a category (recency, then poi_id), plus
    /// the highest-importance surviving summary mentioning it. Returning a
    /// summary counts as an access: its access_count and last_access_day move.
    pub fn retrieve_history(&mut self, category: &str, k: usize, now_day: u32) -> RetrievedHistory {
        let mut visits: Vec<VisitRecord> =
            self.visits.iter().filter(|v| v.category == category).cloned().collect();
        visits.sort_by(|a, b| {
            b.day_index
                .cmp(&a.day_index)
                .then_with(|| b.start.cmp(&a.start))
                .then_with(|| a.poi_id.cmp(&b.poi_id))
        });
        visits.truncate(k);

        let params = self.params.clone();
        let best = self
            .items
            .iter()
            .enumerate()
            .filter(|(_, item)| item.summary_text.contains(category))
            .max_by(|(ia, a), (ib, b)| {
                a.importance(now_day, &params)
                    .total_cmp(&b.importance(now_day, &params))
                    .then_with(|| a.created_day.cmp(&b.created_day))
                    .then_with(|| ia.cmp(ib))
            })
            .map(|(i, _)| i);
        let summary = best.map(|i| {
            let item = &mut self.items[i];
            item.access_count += 1;
            item.last_access_day = now_day;
            item.clone()
        });
        RetrievedHistory { visits, summary }
    }

    /// Newest summary per level, most aggregated first; prompt context.
    pub fn context_text(&self) -> String {
        let mut lines = Vec::new();
        for level in [MemoryLevel::Monthly, MemoryLevel::Weekly, MemoryLevel::Daily] {
            if let Some(item) = self.items.iter().rev().find(|i| i.level == level) {
                lines.push(item.summary_text.clone());
            }
        }
        if lines.is_empty() {
            "no history yet".to_string()
        } else {
            lines.join("\n")
        }
    }

    /// Snapshot of every surviving summary with its scoring breakdown.
    pub fn dump_rows(&self, now_day: u32) -> Vec<MemoryDumpRow> {
        self.items
            .iter()
            .map(|item| {
                let age = now_day.saturating_sub(item.last_access_day) as f64;
                MemoryDumpRow {
                    level: item.level,
                    period_key: item.period_key,
                    summary_text: item.summary_text.clone(),
                    tags: item.tags,
                    created_day: item.created_day,
                    access_count: item.access_count,
                    last_access_day: item.last_access_day,
                    rolled_up: item.rolled_up,
                    density: item.info_density(&self.params.density),
                    recency: (-age / self.params.tau_days).exp(),
                    frequency_score: (1.0 + item.access_count as f64).ln()
                        / (1.0 + self.params.access_cap as f64).ln(),
                    importance: item.importance(now_day, &self.params),
                }
            })
            .collect()
    }
}
