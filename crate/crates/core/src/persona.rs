//! Persona generation: who each agent is, where they live and work, and
//! which venue categories their activities can use.
//!
//! Personas are generated as a pre-processing step and written to a JSONL
//! file, one persona per line with `schema_version: 1`, so a population can
//! be reused across runs. Attributes are drawn from configured population
//! distributions (occupation conditioned on employment), Big Five traits
//! uniformly per trait. Primary locations are fixed for the simulation's
//! lifetime: home uniformly from the residential category, workplace or
//! school near home using the same widening radius search as destination
//! choice.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::destination::{candidate_set, DestinationError};
use crate::llm::{request_json, ChatClient, LlmError, PromptTemplates, ResponseContract};
use crate::poi::PoiStore;

pub const PERSONA_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("distribution `{name}` is empty")]
    EmptyDistribution { name: String },
    #[error("distribution `{name}` probabilities sum to {sum}, expected 1")]
    BadProbabilitySum { name: String, sum: f64 },
    #[error("distribution `{name}` has a negative or non-finite probability")]
    BadProbability { name: String },
    #[error("no occupation row for employment label `{0}`")]
    MissingOccupationRow(String),
    #[error("employment `{label}` declares unknown anchor `{anchor}` (expected work or school)")]
    UnknownAnchor { label: String, anchor: String },
    #[error("store has no POI of the {role} category `{category}`")]
    MissingCategory { role: &'static str, category: String },
    #[error("persona file line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("persona file line {line}: schema_version {found}, expected {expected}")]
    SchemaVersion { line: usize, found: u32, expected: u32 },
    #[error("stats file: {0}")]
    StatsParse(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Destination(#[from] DestinationError),
}

/// One labeled outcome and its probability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedLabel {
    pub label: String,
    pub probability: f64,
    /// Employment rows only: which primary location this status pins
    /// ("work" or "school").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<String>,
}

/// Population marginals the sampler draws from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationStats {
    pub age_buckets: Vec<WeightedLabel>,
    pub genders: Vec<WeightedLabel>,
    pub employment: Vec<WeightedLabel>,
    pub occupations_by_employment: BTreeMap<String, Vec<WeightedLabel>>,
}

fn validate_distribution(name: &str, list: &[WeightedLabel]) -> Result<(), PersonaError> {
    if list.is_empty() {
        return Err(PersonaError::EmptyDistribution { name: name.to_string() });
    }
    if list.iter().any(|w| !w.probability.is_finite() || w.probability < 0.0) {
        return Err(PersonaError::BadProbability { name: name.to_string() });
    }
    let sum: f64 = list.iter().map(|w| w.probability).sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(PersonaError::BadProbabilitySum { name: name.to_string(), sum });
    }
    Ok(())
}

impl PopulationStats {
    pub fn from_toml(text: &str) -> Result<Self, PersonaError> {
        let stats: PopulationStats = toml::from_str(text)?;
        stats.validate()?;
        Ok(stats)
    }

    /// Every distribution must be a proper probability list, every employment
    /// label must have an occupation row, and anchors must be known kinds.
    pub fn validate(&self) -> Result<(), PersonaError> {
        validate_distribution("age_buckets", &self.age_buckets)?;
        validate_distribution("genders", &self.genders)?;
        validate_distribution("employment", &self.employment)?;
        for entry in &self.employment {
            let row = self
                .occupations_by_employment
                .get(&entry.label)
                .ok_or_else(|| PersonaError::MissingOccupationRow(entry.label.clone()))?;
            validate_distribution(&format!("occupations_by_employment.{}", entry.label), row)?;
            if let Some(anchor) = &entry.anchor {
                if anchor != "work" && anchor != "school" {
                    return Err(PersonaError::UnknownAnchor {
                        label: entry.label.clone(),
                        anchor: anchor.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Anchor kind ("work"/"school") the employment label pins, if any.
    pub fn anchor_kind(&self, employment: &str) -> Option<&str> {
        self.employment
            .iter()
            .find(|e| e.label == employment)
            .and_then(|e| e.anchor.as_deref())
    }
}

fn draw(list: &[WeightedLabel], rng: &mut impl Rng) -> String {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for entry in list {
        acc += entry.probability;
        if u < acc {
            return entry.label.clone();
        }
    }
    list.last().unwrap().label.clone()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BigFive {
    pub openness: f64,
    pub conscientiousness: f64,
    pub extraversion: f64,
    pub agreeableness: f64,
    pub neuroticism: f64,
}

/// Activity label to the ordered venue categories where it can happen.
pub type ActivityLocationList = BTreeMap<String, Vec<String>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Persona {
    pub schema_version: u32,
    pub id: String,
    pub age_bucket: String,
    pub gender: String,
    pub employment: String,
    pub occupation: String,
    pub big_five: BigFive,
    /// POI ids, resolved against the store at simulation start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub home_poi_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workplace_or_school_poi_id: Option<String>,
    pub activity_location_list: ActivityLocationList,
    /// Optional model-written sketch; prompts fall back to `blurb()`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl Persona {
    /// One-line self description for prompts; the model-written description
    /// wins when present.
    pub fn blurb(&self) -> String {
        if let Some(description) = &self.description {
            return description.clone();
        }
        format!(
            "{} resident, age {}, {} ({}); openness {:.2}, conscientiousness {:.2}, \
             extraversion {:.2}, agreeableness {:.2}, neuroticism {:.2}",
            self.gender,
            self.age_bucket,
            self.employment,
            self.occupation,
            self.big_five.openness,
            self.big_five.conscientiousness,
            self.big_five.extraversion,
            self.big_five.agreeableness,
            self.big_five.neuroticism,
        )
    }
}

/// Draw attributes and traits; locations and the activity list come later.
///
/// Draw order (gender, age, employment, occupation, then the five traits) is
/// part of the determinism contract: reordering changes every downstream
/// trajectory for a given seed.
pub fn sample_persona(stats: &PopulationStats, id: String, rng: &mut impl Rng) -> Persona {
    let gender = draw(&stats.genders, rng);
    let age_bucket = draw(&stats.age_buckets, rng);
    let employment = draw(&stats.employment, rng);
    let occupation = draw(&stats.occupations_by_employment[&employment], rng);
    let big_five = BigFive {
        openness: rng.random(),
        conscientiousness: rng.random(),
        extraversion: rng.random(),
        agreeableness: rng.random(),
        neuroticism: rng.random(),
    };
    Persona {
        schema_version: PERSONA_SCHEMA_VERSION,
        id,
        age_bucket,
        gender,
        employment,
        occupation,
        big_five,
        home_poi_id: None,
        workplace_or_school_poi_id: None,
        activity_location_list: ActivityLocationList::new(),
        description: None,
    }
}

/// Which categories host homes, workplaces, and schools in this dataset,
/// and how far agents commute.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PersonaConfig {
    pub home_category: String,
    pub work_category: String,
    pub school_category: String,
    pub commute_radius_km: f64,
}

impl Default for PersonaConfig {
    fn default() -> Self {
        Self {
            home_category: "Home".to_string(),
            work_category: "Office".to_string(),
            school_category: "School".to_string(),
            commute_radius_km: 10.0,
        }
    }
}

/// Pin the persona's home and, when employment requires one, a workplace or
/// school near it. These never change for the rest of the simulation.
pub fn assign_primary_locations(
    persona: &mut Persona,
    stats: &PopulationStats,
    store: &PoiStore,
    config: &PersonaConfig,
    rng: &mut impl Rng,
) -> Result<(), PersonaError> {
    let homes = store.pois_of_category(&config.home_category);
    if homes.is_empty() {
        return Err(PersonaError::MissingCategory {
            role: "home",
            category: config.home_category.clone(),
        });
    }
    let home = homes[rng.random_range(0..homes.len())];
    persona.home_poi_id = Some(home.id.clone());

    persona.workplace_or_school_poi_id = match stats.anchor_kind(&persona.employment) {
        None => None,
        Some(kind) => {
            let (role, category): (&'static str, &str) = match kind {
                "school" => ("school", &config.school_category),
                _ => ("workplace", &config.work_category),
            };
            if !store.has_category(category) {
                return Err(PersonaError::MissingCategory { role, category: category.to_string() });
            }
            let candidates =
                candidate_set(store, home.location, category, config.commute_radius_km)?;
            let choice = candidates.pois[rng.random_range(0..candidates.pois.len())];
            Some(choice.id.clone())
        }
    };
    Ok(())
}

/// Canonical category lists per activity; each is filtered to what the store
/// actually has, with the home category as the last resort so every entry
/// stays resolvable.
fn template_activity_list(
    persona: &Persona,
    stats: &PopulationStats,
    store: &PoiStore,
    config: &PersonaConfig,
) -> ActivityLocationList {
    let filter = |cats: &[&str]| -> Vec<String> {
        let found: Vec<String> =
            cats.iter().filter(|c| store.has_category(c)).map(|c| c.to_string()).collect();
        if found.is_empty() {
            vec![config.home_category.clone()]
        } else {
            found
        }
    };
    let mut list = ActivityLocationList::new();
    list.insert("sleep".to_string(), vec![config.home_category.clone()]);
    list.insert("rest".to_string(), vec![config.home_category.clone()]);
    list.insert("meal".to_string(), filter(&["Cafe", "Casual Dining", "Home", "Restaurant"]));
    list.insert(
        "errands".to_string(),
        filter(&["Grocery Store", "Convenience Store", "Pharmacy", "Shopping Mall"]),
    );
    list.insert(
        "leisure".to_string(),
        filter(&["Park", "Gym", "Cinema", "Museum", "Bar", "Shopping Mall"]),
    );
    match stats.anchor_kind(&persona.employment) {
        Some("school") => {
            list.insert("study".to_string(), vec![config.school_category.clone()]);
        }
        Some(_) => {
            list.insert("work".to_string(), vec![config.work_category.clone()]);
        }
        None => {}
    }
    list
}

/// Source of activity-location lists.
pub enum ListEngine<'a> {
    Template,
    Llm { client: &'a dyn ChatClient, templates: &'a PromptTemplates, max_retries: u32 },
}

/// Build the persona's activity-location list. The LLM path is validated
/// against the store's categories with one retry; any failure falls back to
/// the template list, so the result always resolves against the store.
pub fn generate_activity_location_list(
    engine: &ListEngine<'_>,
    persona: &Persona,
    stats: &PopulationStats,
    store: &PoiStore,
    config: &PersonaConfig,
) -> ActivityLocationList {
    let ListEngine::Llm { client, templates, max_retries } = engine else {
        return template_activity_list(persona, stats, store, config);
    };

    let categories: Vec<&str> = store.categories().collect();
    let base_prompt = crate::llm::render_template(
        &templates.activity_list,
        &[("persona", &persona.blurb()), ("categories", &categories.join(", "))],
    )
    .expect("activity list template must render");

    let mut prompt = base_prompt.clone();
    for attempt in 0..2 {
        match request_json(
            *client,
            ResponseContract::ActivityList,
            &templates.activity_list_system,
            &prompt,
            *max_retries,
        ) {
            Ok((value, _)) => {
                let object = value.as_object().unwrap();
                let unknown: Vec<&str> = object
                    .values()
                    .flat_map(|v| v.as_array().unwrap())
                    .filter_map(|c| c.as_str())
                    .filter(|c| !store.has_category(c))
                    .collect();
                if unknown.is_empty() {
                    return object
                        .iter()
                        .map(|(activity, cats)| {
                            let cats = cats
                                .as_array()
                                .unwrap()
                                .iter()
                                .map(|c| c.as_str().unwrap().to_string())
                                .collect();
                            (activity.clone(), cats)
                        })
                        .collect();
                }
                if attempt == 0 {
                    prompt = format!(
                        "{base_prompt}\n\nThese categories do not exist: {}. \
                         Use only categories from the provided list.",
                        unknown.join(", ")
                    );
                }
                log::warn!("activity list used unknown categories: {}", unknown.join(", "));
            }
            Err(e) => {
                log::warn!("activity list generation failed, using template: {e}");
                break;
            }
        }
    }
    template_activity_list(persona, stats, store, config)
}

/// Model-written persona sketch; None (with a log line) on any failure.
pub fn generate_description(
    client: &dyn ChatClient,
    templates: &PromptTemplates,
    persona: &Persona,
) -> Option<String> {
    let prompt = crate::llm::render_template(
        &templates.persona_description,
        &[
            ("gender", &persona.gender),
            ("age", &persona.age_bucket),
            ("employment", &persona.employment),
            ("occupation", &persona.occupation),
            ("openness", &format!("{:.2}", persona.big_five.openness)),
            ("conscientiousness", &format!("{:.2}", persona.big_five.conscientiousness)),
            ("extraversion", &format!("{:.2}", persona.big_five.extraversion)),
            ("agreeableness", &format!("{:.2}", persona.big_five.agreeableness)),
            ("neuroticism", &format!("{:.2}", persona.big_five.neuroticism)),
        ],
    )
    .expect("persona template must render");
    match client.chat(&templates.persona_system, &prompt) {
        Ok(text) if !text.trim().is_empty() => Some(text.trim().to_string()),
        Ok(_) => None,
        Err(e) => {
            log::warn!("persona description failed for {}: {e}", persona.id);
            None
        }
    }
}

/// Every list entry must be nonempty and resolve to at least one POI.
pub fn validate_activity_list(
    list: &ActivityLocationList,
    store: &PoiStore,
) -> Result<(), LlmError> {
    for (activity, categories) in list {
        if categories.is_empty() {
            return Err(LlmError::ContractViolation {
                contract: "activity_list",
                reason: format!("`{activity}` has no categories"),
            });
        }
        for category in categories {
            if !store.has_category(category) {
                return Err(LlmError::ContractViolation {
                    contract: "activity_list",
                    reason: format!("`{activity}` names unknown category `{category}`"),
                });
            }
        }
    }
    Ok(())
}

pub fn write_personas(personas: &[Persona], mut sink: impl Write) -> Result<(), PersonaError> {
    for persona in personas {
        serde_json::to_writer(&mut sink, persona)
            .map_err(|e| PersonaError::Malformed { line: 0, message: e.to_string() })?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_personas(source: impl BufRead) -> Result<Vec<Persona>, PersonaError> {
    let mut personas = Vec::new();
    for (index, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let persona: Persona = serde_json::from_str(&line)
            .map_err(|e| PersonaError::Malformed { line: index + 1, message: e.to_string() })?;
        if persona.schema_version != PERSONA_SCHEMA_VERSION {
            return Err(PersonaError::SchemaVersion {
                line: index + 1,
                found: persona.schema_version,
                expected: PERSONA_SCHEMA_VERSION,
            });
        }
        personas.push(persona);
    }
    Ok(personas)
}
