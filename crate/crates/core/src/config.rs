//! Run configuration: one TOML file carrying every module's knobs, parsed
//! strictly (unknown keys are errors) and validated before anything runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::activity::ActivityEngineKind;
use crate::destination::{DestinationStrategy, RadiusConfig, SelectorParams};
use crate::frequency::{LossyCounter, PsiMapping};
use crate::llm::LlmConfig;
use crate::memory::{MemoryParams, MINUTES_PER_DAY};
use crate::persona::PersonaConfig;
use crate::spatial::{DeterrenceMode, ImpedanceParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(message.into())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub seed: u64,
    pub agents: u32,
    pub days: u32,
    /// Minutes since midnight each simulated day begins at.
    #[serde(default)]
    pub day_start_minutes: u32,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub pois: PathBuf,
    #[serde(default)]
    pub checkins: Option<PathBuf>,
    pub personas: PathBuf,
    pub out: PathBuf,
}

/// Accepts a plain number, TOML's bare `inf`, or the string `"inf"`.
fn cutoff_km<'de, D: serde::Deserializer<'de>>(deserializer: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Raw::deserialize(deserializer)? {
        Raw::Num(v) => Ok(v),
        Raw::Text(s) if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") => {
            Ok(f64::INFINITY)
        }
        Raw::Text(s) => Err(serde::de::Error::custom(format!(
            "k_km must be a positive number or \"inf\", got {s:?}"
        ))),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImpedanceSection {
    pub r0_km: f64,
    pub beta: f64,
    #[serde(deserialize_with = "cutoff_km")]
    pub k_km: f64,
    pub mode: DeterrenceMode,
}

impl Default for ImpedanceSection {
    fn default() -> Self {
        Self { r0_km: 1.5, beta: 1.75, k_km: 400.0, mode: DeterrenceMode::Multiply }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrequencySection {
    pub epsilon: f64,
    pub sigma: f64,
    pub psi: PsiMapping,
}

impl Default for FrequencySection {
    fn default() -> Self {
        Self { epsilon: 0.01, sigma: 0.1, psi: PsiMapping::Identity }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DestinationSection {
    pub strategy: DestinationStrategy,
    pub radius_km: f64,
    pub radius_km_overrides: BTreeMap<String, f64>,
}

impl Default for DestinationSection {
    fn default() -> Self {
        Self {
            strategy: DestinationStrategy::Physical,
            radius_km: 3.0,
            radius_km_overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActivitySection {
    pub engine: ActivityEngineKind,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub simulation: SimulationSection,
    pub paths: PathsSection,
    #[serde(default)]
    pub impedance: ImpedanceSection,
    #[serde(default)]
    pub frequency: FrequencySection,
    #[serde(default)]
    pub destination: DestinationSection,
    #[serde(default)]
    pub activity: ActivitySection,
    #[serde(default)]
    pub persona: PersonaConfig,
    #[serde(default)]
    pub memory: MemoryParams,
    /// Only needed when a strategy or engine is `llm`.
    #[serde(default)]
    pub llm: Option<LlmConfig>,
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: SimConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let sim = &self.simulation;
        if sim.agents == 0 {
            return Err(invalid("simulation.agents must be at least 1"));
        }
        if sim.days == 0 {
            return Err(invalid("simulation.days must be at least 1"));
        }
        if sim.day_start_minutes >= MINUTES_PER_DAY {
            return Err(invalid(format!(
                "simulation.day_start_minutes must be below {MINUTES_PER_DAY}, got {}",
                sim.day_start_minutes
            )));
        }
        if sim.workers == 0 {
            return Err(invalid("simulation.workers must be at least 1"));
        }

        ImpedanceParams::new(self.impedance.r0_km, self.impedance.beta, self.impedance.k_km)
            .map_err(|e| invalid(format!("impedance: {e}")))?;

        LossyCounter::<String>::new(self.frequency.epsilon)
            .map_err(|e| invalid(format!("frequency: {e}")))?;
        let sigma = self.frequency.sigma;
        if !(sigma.is_finite() && (0.0..=1.0).contains(&sigma)) {
            return Err(invalid(format!("frequency.sigma must be in [0, 1], got {sigma}")));
        }

        if !(self.destination.radius_km.is_finite() && self.destination.radius_km > 0.0) {
            return Err(invalid(format!(
                "destination.radius_km must be positive, got {}",
                self.destination.radius_km
            )));
        }
        for (category, radius) in &self.destination.radius_km_overrides {
            if !(radius.is_finite() && *radius > 0.0) {
                return Err(invalid(format!(
                    "destination.radius_km_overrides[{category:?}] must be positive, got {radius}"
                )));
            }
        }

        if !(self.persona.commute_radius_km.is_finite() && self.persona.commute_radius_km > 0.0) {
            return Err(invalid(format!(
                "persona.commute_radius_km must be positive, got {}",
                self.persona.commute_radius_km
            )));
        }
        for (key, value) in [
            ("persona.home_category", &self.persona.home_category),
            ("persona.work_category", &self.persona.work_category),
            ("persona.school_category", &self.persona.school_category),
        ] {
            if value.trim().is_empty() {
                return Err(invalid(format!("{key} must not be empty")));
            }
        }

        self.memory.validate().map_err(|e| invalid(format!("memory: {e}")))?;

        if self.needs_llm() && self.llm.is_none() {
            return Err(invalid(
                "an [llm] section is required when destination.strategy or activity.engine is \"llm\"",
            ));
        }
        if let Some(llm) = &self.llm {
            if llm.endpoint_url.trim().is_empty() {
                return Err(invalid("llm.endpoint_url must not be empty"));
            }
            if llm.model_name.trim().is_empty() {
                return Err(invalid("llm.model_name must not be empty"));
            }
            if !(llm.temperature.is_finite() && llm.temperature >= 0.0) {
                return Err(invalid(format!(
                    "llm.temperature must be a nonnegative number, got {}",
                    llm.temperature
                )));
            }
            if llm.timeout_secs == 0 {
                return Err(invalid("llm.timeout_secs must be at least 1"));
            }
        }
        Ok(())
    }

    /// True when any stage needs a live chat endpoint.
    pub fn needs_llm(&self) -> bool {
        self.destination.strategy == DestinationStrategy::Llm
            || self.activity.engine == ActivityEngineKind::Llm
    }

    /// Scoring knobs for the destination selector; call after `validate`.
    pub fn selector_params(&self) -> SelectorParams {
        SelectorParams {
            impedance: ImpedanceParams::new(
                self.impedance.r0_km,
                self.impedance.beta,
                self.impedance.k_km,
            )
            .expect("validated impedance parameters"),
            mode: self.impedance.mode,
            sigma: self.frequency.sigma,
            psi: self.frequency.psi,
        }
    }

    pub fn radius(&self) -> RadiusConfig {
        RadiusConfig {
            radius_km: self.destination.radius_km,
            radius_km_overrides: self.destination.radius_km_overrides.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [simulation]
        seed = 42
        agents = 10
        days = 7

        [paths]
        pois = "data/pois.csv"
        personas = "out/personas.jsonl"
        out = "out"
    "#;

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let config = SimConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(config.simulation.day_start_minutes, 0);
        assert_eq!(config.simulation.workers, 1);
        assert_eq!(config.impedance.r0_km, 1.5);
        assert_eq!(config.impedance.beta, 1.75);
        assert_eq!(config.impedance.k_km, 400.0);
        assert_eq!(config.impedance.mode, DeterrenceMode::Multiply);
        assert_eq!(config.frequency.epsilon, 0.01);
        assert_eq!(config.frequency.sigma, 0.1);
        assert_eq!(config.frequency.psi, PsiMapping::Identity);
        assert_eq!(config.destination.strategy, DestinationStrategy::Physical);
        assert_eq!(config.destination.radius_km, 3.0);
        assert_eq!(config.activity.engine, ActivityEngineKind::Template);
        assert_eq!(config.persona.home_category, "Home");
        assert_eq!(config.memory.access_cap, 100);
        assert!(config.llm.is_none());
        assert!(config.paths.checkins.is_none());
    }

    #[test]
    fn full_config_parses() {
        let text = r#"
            [simulation]
            seed = 7
            agents = 3
            days = 2
            day_start_minutes = 240
            workers = 4

            [paths]
            pois = "pois.csv"
            checkins = "checkins.csv"
            personas = "personas.jsonl"
            out = "results"

            [impedance]
            r0_km = 0.5
            beta = 2.0
            k_km = 100.0
            mode = "divide"

            [frequency]
            epsilon = 0.05
            sigma = 0.2
            psi = "log1p"

            [destination]
            strategy = "llm"
            radius_km = 5.0

            [destination.radius_km_overrides]
            Park = 8.0

            [activity]
            engine = "llm"

            [persona]
            home_category = "Residence"
            work_category = "Workplace"
            school_category = "Campus"
            commute_radius_km = 15.0

            [memory]
            threshold = 0.4

            [llm]
            endpoint_url = "http://localhost:8080/v1/chat/completions"
            model_name = "local-model"
            temperature = 0.3
            timeout_secs = 10
            max_retries = 2
            api_key_env = "MY_KEY"
        "#;
        let config = SimConfig::from_toml(text).unwrap();
        assert_eq!(config.simulation.workers, 4);
        assert_eq!(config.impedance.mode, DeterrenceMode::Divide);
        assert_eq!(config.destination.radius_km_overrides["Park"], 8.0);
        assert_eq!(config.persona.work_category, "Workplace");
        assert_eq!(config.memory.threshold, 0.4);
        assert_eq!(config.llm.as_ref().unwrap().temperature, 0.3);
        assert_eq!(config.radius().for_category("Park"), 8.0);
        assert_eq!(config.radius().for_category("Gym"), 5.0);
    }

    #[test]
    fn cutoff_accepts_inf_spellings() {
        for value in ["k_km = \"inf\"", "k_km = \"Infinity\"", "k_km = inf"] {
            let text = format!(
                "{MINIMAL}\n[impedance]\nr0_km = 1.0\nbeta = 1.0\n{value}\nmode = \"multiply\""
            );
            let config = SimConfig::from_toml(&text).unwrap();
            assert!(config.impedance.k_km.is_infinite(), "{value}");
        }
        let bad = format!(
            "{MINIMAL}\n[impedance]\nr0_km = 1.0\nbeta = 1.0\nk_km = \"huge\"\nmode = \"multiply\""
        );
        assert!(SimConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[simulation2]\nx = 1");
        assert!(matches!(SimConfig::from_toml(&text), Err(ConfigError::Parse(_))));
        let text = MINIMAL.replace("agents = 10", "agents = 10\nagnets = 10");
        assert!(matches!(SimConfig::from_toml(&text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn bounds_are_enforced() {
        let cases = [
            ("agents = 10", "agents = 0"),
            ("days = 7", "days = 0"),
            ("seed = 42", "seed = 42\nday_start_minutes = 1440"),
            ("seed = 42", "seed = 42\nworkers = 0"),
        ];
        for (from, to) in cases {
            let text = MINIMAL.replace(from, to);
            assert!(
                matches!(SimConfig::from_toml(&text), Err(ConfigError::Invalid(_))),
                "{to} should be invalid"
            );
        }
    }

    #[test]
    fn module_parameter_validation_is_wired_through() {
        let bad_epsilon = format!("{MINIMAL}\n[frequency]\nepsilon = 0.0");
        assert!(SimConfig::from_toml(&bad_epsilon).is_err());
        let bad_sigma = format!("{MINIMAL}\n[frequency]\nsigma = 1.5");
        assert!(SimConfig::from_toml(&bad_sigma).is_err());
        let bad_impedance = format!("{MINIMAL}\n[impedance]\nr0_km = 0.0");
        assert!(SimConfig::from_toml(&bad_impedance).is_err());
        let bad_radius = format!("{MINIMAL}\n[destination]\nradius_km = -1.0");
        assert!(SimConfig::from_toml(&bad_radius).is_err());
        let bad_override =
            format!("{MINIMAL}\n[destination.radius_km_overrides]\nPark = 0.0");
        assert!(SimConfig::from_toml(&bad_override).is_err());
        let bad_threshold = format!("{MINIMAL}\n[memory]\nthreshold = 1.5");
        assert!(SimConfig::from_toml(&bad_threshold).is_err());
    }

    #[test]
    fn llm_strategies_require_llm_section() {
        let text = format!("{MINIMAL}\n[destination]\nstrategy = \"llm\"");
        let err = SimConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("[llm] section"), "{err}");

        let text = format!(
            "{MINIMAL}\n[activity]\nengine = \"llm\"\n\n[llm]\nendpoint_url = \"http://x/v1\"\nmodel_name = \"m\""
        );
        let config = SimConfig::from_toml(&text).unwrap();
        assert!(config.needs_llm());
        // Defaults fill in the unspecified connection knobs.
        let llm = config.llm.unwrap();
        assert_eq!(llm.temperature, 0.7);
        assert_eq!(llm.timeout_secs, 30);
    }

    #[test]
    fn selector_params_mirror_config() {
        let text = format!(
            "{MINIMAL}\n[impedance]\nr0_km = 2.0\nbeta = 1.0\nk_km = \"inf\"\nmode = \"divide\"\n\n[frequency]\nsigma = 0.3\npsi = \"log1p\""
        );
        let config = SimConfig::from_toml(&text).unwrap();
        let params = config.selector_params();
        assert_eq!(params.mode, DeterrenceMode::Divide);
        assert_eq!(params.sigma, 0.3);
        assert_eq!(params.psi, PsiMapping::Log1p);
        assert_eq!(params.impedance.r0_km(), 2.0);
    }
}
