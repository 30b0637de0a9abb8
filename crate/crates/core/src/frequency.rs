//! Visit-frequency tracking and the frequency half of destination scoring.
//!
//! Per-agent visit counts are kept in a bounded lossy counter rather than an
//! exact map, so memory stays O(1/epsilon) over arbitrarily long runs while
//! counts keep a hard error bound: for every item,
//! `estimate <= true_count <= estimate + epsilon * n`, and any item whose
//! true count is at least `epsilon * n` is still tracked.
//!
//! Raw counts are not comparable across categories (a favorite cafe and a
//! favorite gym see very different absolute visit rates), so candidate
//! frequencies are rank-normalized through the category's empirical
//! distribution of per-POI visit counts before being smoothed into a weight.

use std::collections::HashMap;
use std::hash::Hash;

use thiserror::Error;

use crate::poi::{CheckinLog, PoiStore};

#[derive(Debug, Error, PartialEq)]
pub enum FrequencyError {
    #[error("epsilon must be in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("sigma must be in [0, 1], got {0}")]
    InvalidSigma(f64),
    #[error("quantile level must be in (0, 1], got {0}")]
    InvalidQuantile(f64),
    #[error("empirical distribution has no observations")]
    EmptyDistribution,
    #[error("frequencies must be finite and >= 0, got {0}")]
    InvalidFrequency(f64),
    #[error("log1p undefined for values <= -1, got {0}")]
    Log1pDomain(f64),
    #[error("candidate set is empty")]
    EmptyCandidates,
}

#[derive(Debug, Clone, Copy)]
struct CounterEntry {
    estimate: u64,
    max_error: u64,
}

/// Bounded-memory frequency counter over a stream of items.
///
/// Entries whose estimated count cannot reach the current bucket index are
/// dropped at bucket boundaries; dropped items may later re-enter with the
/// undercount absorbed into `max_error`.
#[derive(Debug, Clone)]
pub struct LossyCounter<T: Eq + Hash + Clone> {
    epsilon: f64,
    bucket_width: u64,
    observed: u64,
    entries: HashMap<T, CounterEntry>,
}

impl<T: Eq + Hash + Clone> LossyCounter<T> {
    pub fn new(epsilon: f64) -> Result<Self, FrequencyError> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(FrequencyError::InvalidEpsilon(epsilon));
        }
        Ok(Self {
            epsilon,
            bucket_width: (1.0 / epsilon).ceil() as u64,
            observed: 0,
            entries: HashMap::new(),
        })
    }

    pub fn observe(&mut self, item: T) {
        self.observed += 1;
        let current_bucket = self.observed.div_ceil(self.bucket_width);
        self.entries
            .entry(item)
            .and_modify(|e| e.estimate += 1)
            .or_insert(CounterEntry { estimate: 1, max_error: current_bucket - 1 });
        if self.observed % self.bucket_width == 0 {
            // Keep ties with the bucket index: dropping them (the classical
            // rule) can lose an item whose true count is exactly
            // epsilon * observed, and the reporting contract is that any
            // item reaching that bar is never missed.
            self.entries.retain(|_, e| e.estimate + e.max_error >= current_bucket);
        }
    }

    /// Estimated count; 0 for untracked items. Never exceeds the true count.
    pub fn estimate<Q>(&self, item: &Q) -> u64
    where
        T: std::borrow::Borrow<Q>,
        Q: Hash + Eq + ?Sized,
    {
        self.entries.get(item).map_or(0, |e| e.estimate)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Total items observed so far.
    pub fn observed(&self) -> u64 {
        self.observed
    }

    /// Number of items currently tracked.
    pub fn tracked_len(&self) -> usize {
        self.entries.len()
    }

    /// Tracked items with their estimates and error bounds.
    pub fn tracked(&self) -> impl Iterator<Item = (&T, u64, u64)> {
        self.entries.iter().map(|(item, e)| (item, e.estimate, e.max_error))
    }
}

impl<T: Eq + Hash + Clone + Ord> LossyCounter<T> {
    /// Items with estimated count >= (support - epsilon) * observed, i.e. a
    /// superset of every item whose true frequency is at least `support`.
    /// Ordered by descending estimate, ties by ascending item.
    pub fn heavy_hitters(&self, support: f64) -> Vec<(T, u64)> {
        let threshold = (support - self.epsilon) * self.observed as f64;
        let mut hits: Vec<(T, u64)> = self
            .entries
            .iter()
            .filter(|(_, e)| e.estimate as f64 >= threshold)
            .map(|(item, e)| (item.clone(), e.estimate))
            .collect();
        hits.sort_by(|(ia, ea), (ib, eb)| eb.cmp(ea).then_with(|| ia.cmp(ib)));
        hits
    }
}

/// Empirical distribution of per-POI visit counts within one category.
#[derive(Debug, Clone, Default)]
pub struct CategoryEcdf {
    sorted_values: Vec<f64>,
}

impl CategoryEcdf {
    /// Build from raw observations; non-finite values are rejected by debug
    /// assertion upstream. Values are sorted ascending.
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let mut sorted_values: Vec<f64> = values.into_iter().collect();
        sorted_values.sort_by(f64::total_cmp);
        Self { sorted_values }
    }

    /// A distribution with no observations; rank normalization against it
    /// falls back to the identity.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted_values.is_empty()
    }

    pub fn len(&self) -> usize {
        self.sorted_values.len()
    }

    /// Inverse ECDF: the smallest value v with F(v) >= q, for q in (0, 1].
    ///
    /// Indexing uses ceil(q * m) nudged down by 1e-9 so that q values computed
    /// as rank/m land on the exact rank despite float rounding.
    pub fn quantile(&self, q: f64) -> Result<f64, FrequencyError> {
        if self.sorted_values.is_empty() {
            return Err(FrequencyError::EmptyDistribution);
        }
        if !(q > 0.0 && q <= 1.0) {
            return Err(FrequencyError::InvalidQuantile(q));
        }
        let m = self.sorted_values.len();
        let pos = ((q * m as f64) - 1e-9).ceil().max(1.0) as usize;
        Ok(self.sorted_values[pos.min(m) - 1])
    }
}

/// Per-category visit-count distributions from reference check-ins.
///
/// Every POI of a category contributes one observation (its check-in count,
/// zero if never visited), so the distribution reflects the full category,
/// not just its popular venues.
pub fn ecdfs_from_checkins(store: &PoiStore, checkins: &CheckinLog) -> HashMap<String, CategoryEcdf> {
    let mut per_category: HashMap<String, Vec<f64>> = HashMap::new();
    for poi in store.iter() {
        per_category
            .entry(poi.category.clone())
            .or_default()
            .push(checkins.count(&poi.id) as f64);
    }
    per_category
        .into_iter()
        .map(|(category, values)| (category, CategoryEcdf::from_values(values)))
        .collect()
}

/// Map raw candidate frequencies onto the category's historical value scale.
///
/// Each frequency is ranked within the candidate set (ties take the highest
/// rank) and replaced with the category distribution's value at that rank
/// quantile. Ordering is preserved: a more-visited candidate never maps below
/// a less-visited one. An empty distribution leaves frequencies unchanged.
pub fn rank_normalize(freqs: &[f64], ecdf: &CategoryEcdf) -> Result<Vec<f64>, FrequencyError> {
    for &f in freqs {
        if !f.is_finite() || f < 0.0 {
            return Err(FrequencyError::InvalidFrequency(f));
        }
    }
    if ecdf.is_empty() {
        return Ok(freqs.to_vec());
    }
    let mut sorted = freqs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = freqs.len() as f64;
    freqs
        .iter()
        .map(|&f| {
            // Highest rank among ties: the count of values <= f.
            let rank = sorted.partition_point(|&v| v <= f);
            ecdf.quantile(rank as f64 / n)
        })
        .collect()
}

/// Optional nonlinearity applied to rank-normalized values before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsiMapping {
    #[default]
    Identity,
    /// ln(1 + z); compresses heavy-tailed visit counts.
    Log1p,
}

impl PsiMapping {
    pub fn apply(&self, z: f64) -> Result<f64, FrequencyError> {
        match self {
            PsiMapping::Identity => Ok(z),
            PsiMapping::Log1p => {
                if z <= -1.0 {
                    Err(FrequencyError::Log1pDomain(z))
                } else {
                    Ok(z.ln_1p())
                }
            }
        }
    }
}

/// Frequency weights with exploration smoothing:
/// `(1 - sigma) * f_i / sum(f) + sigma / n`.
///
/// Every weight gets at least the `sigma / n` floor, so unvisited candidates
/// stay reachable. When all mapped frequencies are zero the proportional term
/// degenerates to uniform. `sigma = 1` ignores history entirely.
pub fn frequency_weights(mapped: &[f64], sigma: f64) -> Result<Vec<f64>, FrequencyError> {
    if mapped.is_empty() {
        return Err(FrequencyError::EmptyCandidates);
    }
    if !(0.0..=1.0).contains(&sigma) || sigma.is_nan() {
        return Err(FrequencyError::InvalidSigma(sigma));
    }
    for &f in mapped {
        if !f.is_finite() || f < 0.0 {
            return Err(FrequencyError::InvalidFrequency(f));
        }
    }
    let n = mapped.len() as f64;
    let total: f64 = mapped.iter().sum();
    let weights = mapped
        .iter()
        .map(|&f| {
            let proportional = if total > 0.0 { f / total } else { 1.0 / n };
            (1.0 - sigma) * proportional + sigma / n
        })
        .collect();
    Ok(weights)
}
