//! Destination choice: turn an activity's location category into one POI.
//!
//! The physical strategy scores every candidate by the product of a spatial
//! weight (attraction damped by travel impedance) and a frequency weight
//! (the agent's own visit history, rank-normalized onto the category's
//! empirical scale and smoothed toward uniform by sigma), normalizes the
//! products into probabilities, and samples. The LLM strategy shows the model
//! the candidate list and lets it pick an id; anything the model gets wrong
//! (bad id twice, transport failure, malformed replies beyond the retry
//! budget) falls back to the physical strategy so a run always completes.
//!
//! Candidate sets come from a radius query that doubles up to six times when
//! empty, then falls back to every POI of the category; a category with no
//! POIs anywhere is the one unrecoverable error.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frequency::{
    frequency_weights, rank_normalize, CategoryEcdf, FrequencyError, PsiMapping,
};
use crate::geo::{haversine_km, GeoPoint};
use crate::llm::{request_json, ChatClient, PromptTemplates, ResponseContract};
use crate::memory::AgentMemory;
use crate::poi::{Poi, PoiStore};
use crate::spatial::{spatial_weight, DeterrenceMode, ImpedanceParams};

pub const MAX_RADIUS_DOUBLINGS: u32 = 6;

/// Visits shown per category when building LLM history context.
const HISTORY_K: usize = 5;

#[derive(Debug, Error)]
pub enum DestinationError {
    #[error("no POI of category `{0}` exists in the store")]
    CategoryMissing(String),
    #[error("spatial weight must be positive and finite, got {0}")]
    InvalidSpatialWeight(f64),
    #[error("weight lists must have equal nonzero length")]
    MismatchedWeights,
    #[error("every candidate scored zero probability mass")]
    ZeroProbabilityMass,
    #[error(transparent)]
    Frequency(#[from] FrequencyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DestinationStrategy {
    #[default]
    Physical,
    Llm,
}

/// Scoring knobs shared by every selection.
#[derive(Debug, Clone)]
pub struct SelectorParams {
    pub impedance: ImpedanceParams,
    pub mode: DeterrenceMode,
    /// Exploration mass in [0, 1]; the floor each candidate's frequency
    /// weight keeps regardless of history.
    pub sigma: f64,
    pub psi: PsiMapping,
}

/// Simulation-static references used by every selection call.
pub struct SelectorEnv<'a> {
    pub store: &'a PoiStore,
    pub ecdfs: &'a HashMap<String, CategoryEcdf>,
    pub params: SelectorParams,
}

/// Search radius configuration with per-category overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadiusConfig {
    pub radius_km: f64,
    pub radius_km_overrides: BTreeMap<String, f64>,
}

impl Default for RadiusConfig {
    fn default() -> Self {
        Self { radius_km: 3.0, radius_km_overrides: BTreeMap::new() }
    }
}

impl RadiusConfig {
    pub fn for_category(&self, category: &str) -> f64 {
        self.radius_km_overrides.get(category).copied().unwrap_or(self.radius_km)
    }
}

#[derive(Debug)]
pub struct CandidateSet<'a> {
    pub pois: Vec<&'a Poi>,
    /// Radius that finally produced candidates; None when the search fell
    /// back to the whole category.
    pub effective_radius_km: Option<f64>,
    pub doublings: u32,
}

/// In-category POIs near `current`, widening the search until something is
/// found. Order is deterministic: distance ascending, ties by id.
pub fn candidate_set<'a>(
    store: &'a PoiStore,
    current: GeoPoint,
    category: &str,
    radius_km: f64,
) -> Result<CandidateSet<'a>, DestinationError> {
    assert!(radius_km > 0.0, "radius must be positive");
    if !store.has_category(category) {
        return Err(DestinationError::CategoryMissing(category.to_string()));
    }
    let mut radius = radius_km;
    for doublings in 0..=MAX_RADIUS_DOUBLINGS {
        let pois = store.query_radius(current, radius, category);
        if !pois.is_empty() {
            return Ok(CandidateSet { pois, effective_radius_km: Some(radius), doublings });
        }
        radius *= 2.0;
    }
    // The category exists, so this list is nonempty.
    let mut pois = store.pois_of_category(category);
    pois.sort_by(|a, b| {
        haversine_km(current, a.location)
            .total_cmp(&haversine_km(current, b.location))
            .then_with(|| a.id.cmp(&b.id))
    });
    Ok(CandidateSet { pois, effective_radius_km: None, doublings: MAX_RADIUS_DOUBLINGS })
}

/// Normalize elementwise products of spatial and frequency weights into a
/// probability vector.
pub fn selection_probabilities(
    spatial: &[f64],
    frequency: &[f64],
) -> Result<Vec<f64>, DestinationError> {
    if spatial.is_empty() || spatial.len() != frequency.len() {
        return Err(DestinationError::MismatchedWeights);
    }
    for &w in spatial {
        if !(w > 0.0) || !w.is_finite() {
            return Err(DestinationError::InvalidSpatialWeight(w));
        }
    }
    let products: Vec<f64> = spatial.iter().zip(frequency).map(|(s, f)| s * f).collect();
    let total: f64 = products.iter().sum();
    if !(total > 0.0) {
        return Err(DestinationError::ZeroProbabilityMass);
    }
    Ok(products.into_iter().map(|p| p / total).collect())
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical(probabilities: &[f64], rng: &mut impl Rng) -> usize {
    debug_assert!(!probabilities.is_empty());
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probabilities.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probabilities.len() - 1
}

/// Everything the physical strategy computed for one selection; exposed so
/// tests and diagnostics can see the intermediate weights.
#[derive(Debug)]
pub struct SelectionContext<'a> {
    pub candidates: Vec<&'a Poi>,
    pub spatial: Vec<f64>,
    pub frequency: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub effective_radius_km: Option<f64>,
}

/// Build the full scoring pipeline for one (location, category) query.
pub fn physical_context<'a>(
    env: &SelectorEnv<'a>,
    memory: &AgentMemory,
    current: GeoPoint,
    category: &str,
    radius_km: f64,
) -> Result<SelectionContext<'a>, DestinationError> {
    let CandidateSet { pois: candidates, effective_radius_km, .. } =
        candidate_set(env.store, current, category, radius_km)?;

    let spatial: Vec<f64> = candidates
        .iter()
        .map(|poi| {
            spatial_weight(
                poi.attraction,
                haversine_km(current, poi.location),
                &env.params.impedance,
                env.params.mode,
            )
        })
        .collect();

    let raw_freqs: Vec<f64> =
        candidates.iter().map(|poi| memory.visit_count(&poi.id) as f64).collect();
    let empty = CategoryEcdf::empty();
    let ecdf = env.ecdfs.get(category).unwrap_or(&empty);
    let normalized = rank_normalize(&raw_freqs, ecdf)?;
    let mapped = normalized
        .into_iter()
        .map(|z| env.params.psi.apply(z))
        .collect::<Result<Vec<f64>, _>>()?;
    let frequency = frequency_weights(&mapped, env.params.sigma)?;

    let probabilities = selection_probabilities(&spatial, &frequency)?;
    Ok(SelectionContext { candidates, spatial, frequency, probabilities, effective_radius_km })
}

/// Physical-model destination choice: score candidates, sample one.
pub fn select_physical<'a>(
    env: &SelectorEnv<'a>,
    memory: &AgentMemory,
    current: GeoPoint,
    category: &str,
    radius_km: f64,
    rng: &mut impl Rng,
) -> Result<&'a Poi, DestinationError> {
    let context = physical_context(env, memory, current, category, radius_km)?;
    let index = sample_categorical(&context.probabilities, rng);
    Ok(context.candidates[index])
}

/// Why an LLM selection ended up on the physical path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FallbackReason {
    /// The model twice named an id outside the candidate list.
    InvalidCandidateId,
    /// Transport or contract failure after the retry budget.
    AdapterFailure,
}

impl FallbackReason {
    pub fn flag(&self) -> &'static str {
        match self {
            FallbackReason::InvalidCandidateId => "llm_invalid_id",
            FallbackReason::AdapterFailure => "llm_adapter_failure",
        }
    }
}

pub struct LlmSelection<'a> {
    pub poi: &'a Poi,
    pub fallback: Option<FallbackReason>,
}

/// The model side of destination choice.
pub struct LlmSelector<'a> {
    pub client: &'a dyn ChatClient,
    pub templates: &'a PromptTemplates,
    pub max_retries: u32,
}

/// Constrained LLM destination choice: the model picks from an explicit
/// candidate list, with the agent's relevant history in the prompt. Any
/// failure mode degrades to the physical strategy.
#[allow(clippy::too_many_arguments)]
pub fn select_llm<'a>(
    env: &SelectorEnv<'a>,
    llm: &LlmSelector<'_>,
    memory: &mut AgentMemory,
    persona_text: &str,
    activity_label: &str,
    day: u32,
    current: GeoPoint,
    category: &str,
    radius_km: f64,
    rng: &mut impl Rng,
) -> Result<LlmSelection<'a>, DestinationError> {
    let CandidateSet { pois: candidates, .. } =
        candidate_set(env.store, current, category, radius_km)?;

    let history = memory.retrieve_history(category, HISTORY_K, day);
    let candidate_lines: Vec<String> = candidates
        .iter()
        .map(|poi| {
            format!(
                "{} | {} | {:.2} km | {} visits",
                poi.id,
                poi.name,
                haversine_km(current, poi.location),
                memory.visit_count(&poi.id)
            )
        })
        .collect();
    let prompt = crate::llm::render_template(
        &llm.templates.destination,
        &[
            ("persona", persona_text),
            ("activity", activity_label),
            ("history", &history.render()),
            ("candidates", &candidate_lines.join("\n")),
        ],
    )
    .expect("destination template must render");

    let fallback = {
        let mut reason = None;
        let mut prompt = prompt;
        // Two shots at a valid candidate id; contract-level retries happen
        // inside request_json.
        for attempt in 0..2 {
            match request_json(
                llm.client,
                ResponseContract::Destination,
                &llm.templates.destination_system,
                &prompt,
                llm.max_retries,
            ) {
                Ok((value, _)) => {
                    let id = value["poi_id"].as_str().unwrap_or_default().to_string();
                    if let Some(poi) = candidates.iter().find(|p| p.id == id) {
                        return Ok(LlmSelection { poi, fallback: None });
                    }
                    if attempt == 0 {
                        prompt = format!(
                            "{prompt}\n\n`{id}` is not one of the candidates. \
                             Pick an id from the list above."
                        );
                    }
                    reason = Some(FallbackReason::InvalidCandidateId);
                }
                Err(e) => {
                    log::warn!("destination adapter failed for category {category}: {e}");
                    reason = Some(FallbackReason::AdapterFailure);
                    break;
                }
            }
        }
        reason.unwrap_or(FallbackReason::AdapterFailure)
    };

    log::warn!("falling back to physical selection for category {category} ({})", fallback.flag());
    let poi = select_physical(env, memory, current, category, radius_km, rng)?;
    Ok(LlmSelection { poi, fallback: Some(fallback) })
}
