//! `mobsim`: persona generation, simulation, GeoJSON export, and metrics.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 partial run
//! (at least one failed agent-day).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mobsim_core::config::SimConfig;
use mobsim_core::metrics::compute_metrics;
use mobsim_core::persona::PersonaConfig;
use mobsim_core::poi::{CheckinLog, PoiStore};
use mobsim_core::sim::{
    generate_personas, run_simulation, ChatProvider, GenPersonas, RunOptions,
};
use mobsim_core::trace::{export_geojson, read_trace};

#[derive(Parser)]
#[command(name = "mobsim", version, about = "Agent-based human mobility simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a personas JSONL file from population statistics.
    GenPersonas {
        /// Population statistics TOML.
        #[arg(long)]
        stats: PathBuf,
        /// POI CSV the personas anchor into.
        #[arg(long)]
        pois: PathBuf,
        #[arg(long)]
        count: u32,
        #[arg(long)]
        seed: u64,
        /// Output JSONL path.
        #[arg(long)]
        out: PathBuf,
        /// Write activity lists and sketches with the configured LLM.
        #[arg(long)]
        llm: bool,
        /// Config file supplying [persona] and (with --llm) [llm] sections.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the simulation described by a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Override simulation.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override simulation.agents.
        #[arg(long)]
        agents: Option<u32>,
        /// Override simulation.days.
        #[arg(long)]
        days: Option<u32>,
        /// Override paths.out.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Set POI attractions from normalized per-POI check-in counts.
        #[arg(long)]
        attraction_from_checkins: bool,
    },
    /// Convert a trace to GeoJSON: one LineString per agent-day.
    ExportGeojson {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute jump-length, gyration, and category metrics over a trace.
    Metrics {
        #[arg(long)]
        trace: PathBuf,
        /// Reference check-ins CSV for the KS comparison.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// POI CSV used to locate reference check-ins (required with
        /// --reference).
        #[arg(long)]
        pois: Option<PathBuf>,
        /// Output JSON path.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Ok carries the process exit code; Err carries (exit code, message).
type CommandResult = Result<u8, (u8, String)>;

fn config_err(message: impl ToString) -> (u8, String) {
    (2, message.to_string())
}

fn data_err(message: impl ToString) -> (u8, String) {
    (3, message.to_string())
}

fn gen_personas_cmd(
    stats: PathBuf,
    pois: PathBuf,
    count: u32,
    seed: u64,
    out: PathBuf,
    llm: bool,
    config: Option<PathBuf>,
) -> CommandResult {
    let config = match config {
        Some(path) => Some(SimConfig::load(&path).map_err(config_err)?),
        None => None,
    };
    let persona_config =
        config.as_ref().map(|c| c.persona.clone()).unwrap_or_else(PersonaConfig::default);
    let provider = ChatProvider::Http;
    let llm_args = if llm {
        let llm_config = config
            .as_ref()
            .and_then(|c| c.llm.as_ref())
            .ok_or_else(|| config_err("--llm needs --config with an [llm] section"))?;
        Some((llm_config, &provider))
    } else {
        None
    };
    let personas = generate_personas(&GenPersonas {
        stats_path: &stats,
        pois_path: &pois,
        count,
        seed,
        out_path: &out,
        persona_config,
        llm: llm_args,
    })
    .map_err(|e| (e.exit_code() as u8, e.to_string()))?;
    println!("wrote {} personas to {}", personas.len(), out.display());
    Ok(0)
}

fn simulate_cmd(
    config_path: PathBuf,
    seed: Option<u64>,
    agents: Option<u32>,
    days: Option<u32>,
    out: Option<PathBuf>,
    attraction_from_checkins: bool,
) -> CommandResult {
    let text = fs::read_to_string(&config_path)
        .map_err(|e| config_err(format!("cannot read config {}: {e}", config_path.display())))?;
    let mut config = SimConfig::from_toml(&text).map_err(config_err)?;
    if let Some(seed) = seed {
        config.simulation.seed = seed;
    }
    if let Some(agents) = agents {
        config.simulation.agents = agents;
    }
    if let Some(days) = days {
        config.simulation.days = days;
    }
    if let Some(out) = out {
        config.paths.out = out;
    }
    // Flag overrides can break bounds the file satisfied.
    config.validate().map_err(config_err)?;

    let options = RunOptions { attraction_from_checkins, chat: ChatProvider::Http };
    let summary = run_simulation(&config, &text, &options)
        .map_err(|e| (e.exit_code() as u8, e.to_string()))?;
    println!("trace: {}", summary.trace_path.display());
    println!("manifest: {}", summary.manifest_path.display());
    println!("records: {}", summary.records);
    println!("failed agent-days: {}", summary.failed_agent_days);
    if summary.failed_agent_days > 0 {
        Ok(4)
    } else {
        Ok(0)
    }
}

fn export_geojson_cmd(trace: PathBuf, out: PathBuf) -> CommandResult {
    let file = File::open(&trace)
        .map_err(|e| data_err(format!("cannot read trace {}: {e}", trace.display())))?;
    let records = read_trace(BufReader::new(file)).map_err(data_err)?;
    let geojson = export_geojson(&records);
    let mut sink = BufWriter::new(
        File::create(&out)
            .map_err(|e| data_err(format!("cannot write {}: {e}", out.display())))?,
    );
    serde_json::to_writer_pretty(&mut sink, &geojson).map_err(data_err)?;
    sink.write_all(b"\n").and_then(|()| sink.flush()).map_err(data_err)?;
    println!(
        "wrote {} features to {}",
        geojson["features"].as_array().map(Vec::len).unwrap_or(0),
        out.display()
    );
    Ok(0)
}

fn metrics_cmd(
    trace: PathBuf,
    reference: Option<PathBuf>,
    pois: Option<PathBuf>,
    out: PathBuf,
) -> CommandResult {
    let file = File::open(&trace)
        .map_err(|e| data_err(format!("cannot read trace {}: {e}", trace.display())))?;
    let records = read_trace(BufReader::new(file)).map_err(data_err)?;

    let reference_data = match reference {
        None => None,
        Some(checkins_path) => {
            let pois_path = pois
                .ok_or_else(|| config_err("--reference needs --pois to locate check-ins"))?;
            let store_file = File::open(&pois_path)
                .map_err(|e| data_err(format!("cannot read pois {}: {e}", pois_path.display())))?;
            let store = PoiStore::load_pois(BufReader::new(store_file)).map_err(data_err)?;
            let checkins_file = File::open(&checkins_path).map_err(|e| {
                data_err(format!("cannot read check-ins {}: {e}", checkins_path.display()))
            })?;
            let log = CheckinLog::load_checkins(BufReader::new(checkins_file)).map_err(data_err)?;
            Some((log, store))
        }
    };

    let report = compute_metrics(
        &records,
        reference_data.as_ref().map(|(log, store)| (log, store)),
    );
    let mut sink = BufWriter::new(
        File::create(&out)
            .map_err(|e| data_err(format!("cannot write {}: {e}", out.display())))?,
    );
    serde_json::to_writer_pretty(&mut sink, &report).map_err(data_err)?;
    sink.write_all(b"\n").and_then(|()| sink.flush()).map_err(data_err)?;
    println!("wrote metrics to {}", out.display());
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenPersonas { stats, pois, count, seed, out, llm, config } => {
            gen_personas_cmd(stats, pois, count, seed, out, llm, config)
        }
        Command::Simulate { config, seed, agents, days, out, attraction_from_checkins } => {
            simulate_cmd(config, seed, agents, days, out, attraction_from_checkins)
        }
        Command::ExportGeojson { trace, out } => export_geojson_cmd(trace, out),
        Command::Metrics { trace, reference, pois, out } => {
            metrics_cmd(trace, reference, pois, out)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
