//! Pipeline orchestration: fail-fast loading, per-agent worker pool,
//! deterministic trace output, run manifest, and persona-file generation.
//!
//! Determinism contract: each agent's randomness comes from a substream
//! derived from (master seed, agent index), agents share no mutable state,
//! and records are sorted after the pool joins. The same config and seed
//! therefore produce byte-identical traces at any worker count.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::activity::{
    run_day, ActivityEngine, ActivityEngineKind, AgentDay, DestinationEngine, LlmScheduler,
};
use crate::config::SimConfig;
use crate::destination::{DestinationStrategy, LlmSelector, SelectorEnv};
use crate::frequency::ecdfs_from_checkins;
use crate::llm::{
    ChatClient, HttpTransport, LlmConfig, LlmError, OpenAiChat, PromptTemplates, ScriptedChat,
    Transport,
};
use crate::memory::AgentMemory;
use crate::persona::{
    assign_primary_locations, generate_activity_location_list, generate_description,
    read_personas, sample_persona, write_personas, ListEngine, Persona, PersonaConfig,
    PopulationStats,
};
use crate::poi::{CheckinLog, PoiStore};
use crate::rng::{stream_rng, StreamDomain};
use crate::trace::{day_records, sort_records, TraceError, TraceRecord};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("config: {0}")]
    Invalid(String),
    #[error("cannot read {role} file {path}: {source}")]
    DataIo {
        role: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("poi data: {0}")]
    Poi(#[from] crate::poi::PoiLoadError),
    #[error("persona data: {0}")]
    Persona(#[from] crate::persona::PersonaError),
    #[error("persona {id}: {message}")]
    BadPersona { id: String, message: String },
    #[error("personas file holds {available} personas but the run needs {wanted}")]
    NotEnoughPersonas { available: usize, wanted: usize },
    #[error("llm: {0}")]
    Llm(#[from] LlmError),
    #[error("trace: {0}")]
    Trace(#[from] TraceError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl SimError {
    /// Process exit code category: 2 config, 3 data, 4 partial (reported by
    /// the runner, not as an error), 1 everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config(_) | SimError::Invalid(_) => 2,
            SimError::DataIo { .. }
            | SimError::Poi(_)
            | SimError::Persona(_)
            | SimError::BadPersona { .. }
            | SimError::NotEnoughPersonas { .. } => 3,
            _ => 1,
        }
    }
}

/// Where chat completions come from when an engine needs them.
pub enum ChatProvider {
    /// Each agent gets a private scripted client with these replies
    /// (deterministic under any parallelism).
    Scripted(Vec<String>),
    /// One HTTP client for the whole run, built from the [llm] section;
    /// only constructed when an engine actually needs it.
    Http,
    /// Like `Http` but over an injected transport; built whenever an [llm]
    /// section exists so tests can prove the network seam stays cold.
    WithTransport(Box<dyn Fn() -> Box<dyn Transport> + Send + Sync>),
}

pub struct RunOptions {
    /// Replace static attractions with normalized per-POI check-in counts.
    pub attraction_from_checkins: bool,
    pub chat: ChatProvider,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { attraction_from_checkins: false, chat: ChatProvider::Http }
    }
}

#[derive(Debug)]
pub struct RunSummary {
    pub trace_path: PathBuf,
    pub manifest_path: PathBuf,
    pub records: usize,
    pub failed_agent_days: u64,
    pub trace_sha256: String,
}

fn open(role: &'static str, path: &Path) -> Result<BufReader<File>, SimError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| SimError::DataIo { role, path: path.to_path_buf(), source })
}

fn shared_client(
    chat: &ChatProvider,
    llm: Option<&LlmConfig>,
    needed: bool,
) -> Result<Option<Arc<dyn ChatClient>>, SimError> {
    match chat {
        ChatProvider::Scripted(_) => Ok(None),
        ChatProvider::Http => {
            if !needed {
                return Ok(None);
            }
            let config = llm.expect("validated config has [llm] when an engine needs it");
            let transport = HttpTransport::new(Duration::from_secs(config.timeout_secs))?;
            Ok(Some(Arc::new(OpenAiChat::new(config.clone(), Box::new(transport))?)))
        }
        ChatProvider::WithTransport(factory) => match llm {
            Some(config) => Ok(Some(Arc::new(OpenAiChat::new(config.clone(), factory())?))),
            None => Ok(None),
        },
    }
}

struct AgentOutcome {
    records: Vec<TraceRecord>,
    failed_days: u64,
}

/// Writer that hashes exactly the bytes it passes through.
struct HashingWriter<W: Write> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let written = self.inner.write(buf)?;
        self.hasher.update(&buf[..written]);
        Ok(written)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

fn hex(digest: impl AsRef<[u8]>) -> String {
    digest.as_ref().iter().map(|b| format!("{b:02x}")).collect()
}

/// Run the configured simulation end to end. `config_text` is the raw
/// config file, hashed into the manifest so a run can be reproduced.
pub fn run_simulation(
    config: &SimConfig,
    config_text: &str,
    options: &RunOptions,
) -> Result<RunSummary, SimError> {
    // Fail-fast loading: every referenced file is read and parsed before
    // the first agent runs.
    let mut store = PoiStore::load_pois(open("pois", &config.paths.pois)?)?;
    let checkins = match &config.paths.checkins {
        Some(path) => Some(CheckinLog::load_checkins(open("checkins", path)?)?),
        None => None,
    };
    if options.attraction_from_checkins {
        let Some(checkins) = &checkins else {
            return Err(SimError::Invalid(
                "attraction-from-checkins needs paths.checkins in the config".to_string(),
            ));
        };
        store.set_attractions_from_checkins(checkins);
    }
    let ecdfs = checkins
        .as_ref()
        .map(|log| ecdfs_from_checkins(&store, log))
        .unwrap_or_default();

    let mut personas = read_personas(open("personas", &config.paths.personas)?)?;
    let wanted = config.simulation.agents as usize;
    if personas.len() < wanted {
        return Err(SimError::NotEnoughPersonas { available: personas.len(), wanted });
    }
    personas.truncate(wanted);
    for persona in &personas {
        let home = persona.home_poi_id.as_deref().ok_or_else(|| SimError::BadPersona {
            id: persona.id.clone(),
            message: "no home POI assigned".to_string(),
        })?;
        if store.get(home).is_none() {
            return Err(SimError::BadPersona {
                id: persona.id.clone(),
                message: format!("home POI `{home}` is not in the store"),
            });
        }
        if let Some(anchor) = persona.workplace_or_school_poi_id.as_deref() {
            if store.get(anchor).is_none() {
                return Err(SimError::BadPersona {
                    id: persona.id.clone(),
                    message: format!("anchor POI `{anchor}` is not in the store"),
                });
            }
        }
    }

    let client = shared_client(&options.chat, config.llm.as_ref(), config.needs_llm())?;
    let scripted: Option<&[String]> = match &options.chat {
        ChatProvider::Scripted(replies) => Some(replies),
        _ => None,
    };
    let templates = PromptTemplates::default();
    let params = config.selector_params();
    let radius = config.radius();
    let max_retries = config.llm.as_ref().map(|l| l.max_retries).unwrap_or(1);
    let anchor_categories: std::collections::BTreeSet<String> = [
        config.persona.home_category.clone(),
        config.persona.work_category.clone(),
        config.persona.school_category.clone(),
    ]
    .into();

    let seed = config.simulation.seed;
    let days = config.simulation.days;
    let day_start = config.simulation.day_start_minutes;
    let epsilon = config.frequency.epsilon;

    let run_agent = |(index, persona): (usize, &Persona)| -> AgentOutcome {
        let mut rng = stream_rng(seed, StreamDomain::Simulation, index as u64);
        let mut memory = AgentMemory::new(epsilon, config.memory.clone(), anchor_categories.clone())
            .expect("validated memory parameters");
        let agent_scripted = scripted.map(|replies| ScriptedChat::new(replies.to_vec()));
        let chat: Option<&dyn ChatClient> = match (&agent_scripted, &client) {
            (Some(own), _) => Some(own),
            (None, Some(shared)) => Some(shared.as_ref()),
            (None, None) => None,
        };
        let activity_engine = match config.activity.engine {
            ActivityEngineKind::Template => ActivityEngine::Template,
            ActivityEngineKind::Llm => ActivityEngine::Llm(LlmScheduler {
                client: chat.expect("llm activity engine needs a chat provider"),
                templates: &templates,
                max_retries,
            }),
        };
        let destination_engine = match config.destination.strategy {
            DestinationStrategy::Physical => DestinationEngine::Physical,
            DestinationStrategy::Llm => DestinationEngine::Llm(LlmSelector {
                client: chat.expect("llm destination strategy needs a chat provider"),
                templates: &templates,
                max_retries,
            }),
        };
        let env = SelectorEnv { store: &store, ecdfs: &ecdfs, params: params.clone() };
        let home = store
            .get(persona.home_poi_id.as_deref().expect("validated home"))
            .expect("validated home");
        let anchor =
            persona.workplace_or_school_poi_id.as_deref().map(|id| store.get(id).expect("validated anchor"));
        let agent = AgentDay {
            persona,
            home,
            anchor,
            env: &env,
            radius: &radius,
            activity_engine,
            destination_engine,
            day_start,
        };

        let mut records = Vec::new();
        let mut failed_days = 0;
        for day in 0..days {
            let trace = run_day(&agent, day, &mut memory, &mut rng);
            if trace.failed.is_some() {
                failed_days += 1;
            }
            records.extend(day_records(&trace, home, day_start));
        }
        AgentOutcome { records, failed_days }
    };

    let outcomes: Vec<AgentOutcome> = if config.simulation.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.simulation.workers)
            .build()
            .map_err(|e| SimError::Invalid(format!("worker pool: {e}")))?;
        pool.install(|| personas.par_iter().enumerate().map(run_agent).collect())
    } else {
        personas.iter().enumerate().map(run_agent).collect()
    };

    let mut records: Vec<TraceRecord> = Vec::new();
    let mut failed_agent_days = 0;
    for outcome in outcomes {
        records.extend(outcome.records);
        failed_agent_days += outcome.failed_days;
    }
    sort_records(&mut records);

    fs::create_dir_all(&config.paths.out)?;
    let trace_path = config.paths.out.join("trace.jsonl");
    let mut writer = HashingWriter {
        inner: BufWriter::new(File::create(&trace_path)?),
        hasher: Sha256::new(),
    };
    for record in &records {
        serde_json::to_writer(&mut writer, record).map_err(TraceError::Serialize)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    let trace_sha256 = hex(writer.hasher.finalize());

    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "agents": config.simulation.agents,
        "days": days,
        "workers": config.simulation.workers,
        "activity_engine": format!("{:?}", config.activity.engine).to_lowercase(),
        "destination_strategy": format!("{:?}", config.destination.strategy).to_lowercase(),
        "config_sha256": hex(Sha256::digest(config_text.as_bytes())),
        "trace_sha256": trace_sha256,
        "records": records.len(),
        "failed_agent_days": failed_agent_days,
    });
    let manifest_path = config.paths.out.join("manifest.json");
    fs::write(&manifest_path, format!("{:#}\n", manifest))?;

    Ok(RunSummary {
        trace_path,
        manifest_path,
        records: records.len(),
        failed_agent_days,
        trace_sha256,
    })
}

pub struct GenPersonas<'a> {
    pub stats_path: &'a Path,
    pub pois_path: &'a Path,
    pub count: u32,
    pub seed: u64,
    pub out_path: &'a Path,
    pub persona_config: PersonaConfig,
    /// Some: model-written activity lists and descriptions over this
    /// config and provider. None: template lists only, fully offline.
    pub llm: Option<(&'a LlmConfig, &'a ChatProvider)>,
}

/// Generate personas and write them as JSONL. Persona randomness comes from
/// per-index substreams of the seed, so a file regenerates identically.
pub fn generate_personas(args: &GenPersonas<'_>) -> Result<Vec<Persona>, SimError> {
    let stats_text = fs::read_to_string(args.stats_path).map_err(|source| SimError::DataIo {
        role: "stats",
        path: args.stats_path.to_path_buf(),
        source,
    })?;
    let stats = PopulationStats::from_toml(&stats_text)?;
    let store = PoiStore::load_pois(open("pois", args.pois_path)?)?;
    let templates = PromptTemplates::default();

    let client: Option<Box<dyn ChatClient>> = match args.llm {
        None => None,
        Some((config, provider)) => match provider {
            ChatProvider::Scripted(replies) => Some(Box::new(ScriptedChat::new(replies.clone()))),
            ChatProvider::Http => {
                let transport = HttpTransport::new(Duration::from_secs(config.timeout_secs))?;
                Some(Box::new(OpenAiChat::new(config.clone(), Box::new(transport))?))
            }
            ChatProvider::WithTransport(factory) => {
                Some(Box::new(OpenAiChat::new(config.clone(), factory())?))
            }
        },
    };
    let list_engine = match (&client, args.llm) {
        (Some(chat), Some((config, _))) => ListEngine::Llm {
            client: chat.as_ref(),
            templates: &templates,
            max_retries: config.max_retries,
        },
        _ => ListEngine::Template,
    };

    let width = (args.count.max(1) as f64).log10().floor() as usize + 1;
    let mut personas = Vec::with_capacity(args.count as usize);
    for index in 0..args.count {
        let mut rng = stream_rng(args.seed, StreamDomain::Persona, index as u64);
        let mut persona =
            sample_persona(&stats, format!("a{index:0width$}"), &mut rng);
        assign_primary_locations(&mut persona, &stats, &store, &args.persona_config, &mut rng)?;
        persona.activity_location_list = generate_activity_location_list(
            &list_engine,
            &persona,
            &stats,
            &store,
            &args.persona_config,
        );
        if let Some(chat) = &client {
            persona.description = generate_description(chat.as_ref(), &templates, &persona);
        }
        personas.push(persona);
    }

    if let Some(parent) = args.out_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let sink = BufWriter::new(File::create(args.out_path)?);
    write_personas(&personas, sink)?;
    Ok(personas)
}
