//! End-to-end CLI checks: the four subcommands chained over a temp
//! directory, exit-code contracts, and byte-level determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mobsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mobsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_code(output: &Output, expected: i32) {
    assert_eq!(
        output.status.code(),
        Some(expected),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn write_demo_data(dir: &Path) {
    let mut pois = String::from("poi_id,name,category,lat,lon,attraction\n");
    for i in 0..10 {
        pois.push_str(&format!(
            "h{i},Home {i},Home,{},139.76,1.0\n",
            35.68 + 0.001 * i as f64
        ));
    }
    for i in 0..3 {
        pois.push_str(&format!(
            "o{i},Office {i},Office,{},139.77,1.0\n",
            35.69 + 0.001 * i as f64
        ));
    }
    for i in 0..3 {
        pois.push_str(&format!(
            "s{i},School {i},School,{},139.755,1.0\n",
            35.671 + 0.001 * i as f64
        ));
    }
    for (category, prefix) in
        [("Cafe", "c"), ("Restaurant", "r"), ("Grocery Store", "g"), ("Park", "k"), ("Gym", "y")]
    {
        for i in 0..3 {
            pois.push_str(&format!(
                "{prefix}{i},{category} {i},{category},{},{},1.0\n",
                35.681 + 0.002 * i as f64,
                139.761 + 0.002 * i as f64
            ));
        }
    }
    fs::write(dir.join("pois.csv"), pois).unwrap();

    fs::write(
        dir.join("stats.toml"),
        r#"
age_buckets = [
    { label = "20-39", probability = 0.6 },
    { label = "40-64", probability = 0.4 },
]
genders = [
    { label = "female", probability = 0.5 },
    { label = "male", probability = 0.5 },
]
employment = [
    { label = "employee", probability = 0.7, anchor = "work" },
    { label = "student", probability = 0.3, anchor = "school" },
]

[occupations_by_employment]
employee = [
    { label = "engineer", probability = 0.5 },
    { label = "clerk", probability = 0.5 },
]
student = [{ label = "undergraduate", probability = 1.0 }]
"#,
    )
    .unwrap();

    fs::write(
        dir.join("checkins.csv"),
        "user_id,poi_id,timestamp,category\n\
         u1,c0,2024-01-01T09:00:00Z,Cafe\n\
         u1,c1,2024-01-01T12:00:00Z,Cafe\n\
         u2,k0,2024-01-01T10:00:00Z,Park\n",
    )
    .unwrap();
}

fn write_config(dir: &Path, seed: u64) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    fs::write(
        &path,
        format!(
            r#"
[simulation]
seed = {seed}
agents = 3
days = 2
workers = 2

[paths]
pois = "{dir}/pois.csv"
checkins = "{dir}/checkins.csv"
personas = "{dir}/personas.jsonl"
out = "{dir}/out"
"#,
            dir = dir.display()
        ),
    )
    .unwrap();
    path
}

#[test]
fn full_pipeline_runs_offline() {
    let dir = tempfile::tempdir().unwrap();
    write_demo_data(dir.path());
    let config = write_config(dir.path(), 7);
    let d = dir.path().display().to_string();

    let gen = mobsim(&[
        "gen-personas",
        "--stats",
        &format!("{d}/stats.toml"),
        "--pois",
        &format!("{d}/pois.csv"),
        "--count",
        "3",
        "--seed",
        "7",
        "--out",
        &format!("{d}/personas.jsonl"),
    ]);
    assert_code(&gen, 0);
    assert!(dir.path().join("personas.jsonl").exists());

    let sim = mobsim(&["simulate", "--config", config.to_str().unwrap()]);
    assert_code(&sim, 0);
    let trace_path = dir.path().join("out/trace.jsonl");
    assert!(trace_path.exists());
    assert!(dir.path().join("out/manifest.json").exists());

    let geo = mobsim(&[
        "export-geojson",
        "--trace",
        trace_path.to_str().unwrap(),
        "--out",
        &format!("{d}/trace.geojson"),
    ]);
    assert_code(&geo, 0);
    let geojson: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("trace.geojson")).unwrap())
            .unwrap();
    assert_eq!(geojson["type"], "FeatureCollection");
    assert_eq!(geojson["features"].as_array().unwrap().len(), 6, "3 agents over 2 days");

    let metrics = mobsim(&[
        "metrics",
        "--trace",
        trace_path.to_str().unwrap(),
        "--reference",
        &format!("{d}/checkins.csv"),
        "--pois",
        &format!("{d}/pois.csv"),
        "--out",
        &format!("{d}/metrics.json"),
    ]);
    assert_code(&metrics, 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap())
            .unwrap();
    assert!(report["jump_lengths"]["total"].as_u64().unwrap() > 0);
    assert_eq!(report["radius_of_gyration_km"].as_object().unwrap().len(), 3);
    assert!(report["ks_statistic_vs_reference"].is_number());
}

#[test]
fn simulate_is_deterministic_and_honors_overrides() {
    let dir = tempfile::tempdir().unwrap();
    write_demo_data(dir.path());
    let config = write_config(dir.path(), 7);
    let d = dir.path().display().to_string();

    assert_code(
        &mobsim(&[
            "gen-personas",
            "--stats",
            &format!("{d}/stats.toml"),
            "--pois",
            &format!("{d}/pois.csv"),
            "--count",
            "3",
            "--seed",
            "7",
            "--out",
            &format!("{d}/personas.jsonl"),
        ]),
        0,
    );

    assert_code(&mobsim(&["simulate", "--config", config.to_str().unwrap()]), 0);
    let first = fs::read(dir.path().join("out/trace.jsonl")).unwrap();
    assert_code(&mobsim(&["simulate", "--config", config.to_str().unwrap()]), 0);
    let second = fs::read(dir.path().join("out/trace.jsonl")).unwrap();
    assert_eq!(first, second, "same config, same bytes");

    // Overrides change the output location and the run shape.
    assert_code(
        &mobsim(&[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--days",
            "1",
            "--agents",
            "2",
            "--out",
            &format!("{d}/out2"),
        ]),
        0,
    );
    let trace = fs::read_to_string(dir.path().join("out2/trace.jsonl")).unwrap();
    let agent_days: std::collections::BTreeSet<(String, u64)> = trace
        .lines()
        .map(|line| {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            (v["agent_id"].as_str().unwrap().to_string(), v["day"].as_u64().unwrap())
        })
        .collect();
    assert_eq!(agent_days.len(), 2, "2 agents, 1 day");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    write_demo_data(dir.path());
    let config = dir.path().join("bad.toml");
    fs::write(
        &config,
        format!(
            "[simulation]\nseed = 1\nagents = 0\ndays = 1\n\n[paths]\npois = \"{d}/pois.csv\"\npersonas = \"{d}/personas.jsonl\"\nout = \"{d}/out\"\n",
            d = dir.path().display()
        ),
    )
    .unwrap();
    let output = mobsim(&["simulate", "--config", config.to_str().unwrap()]);
    assert_code(&output, 2);
    assert!(String::from_utf8_lossy(&output.stderr).contains("agents"));
}

#[test]
fn missing_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    write_demo_data(dir.path());
    let config = write_config(dir.path(), 7);
    // personas.jsonl was never generated.
    let output = mobsim(&["simulate", "--config", config.to_str().unwrap()]);
    assert_code(&output, 3);
}

#[test]
fn failed_agent_days_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    write_demo_data(dir.path());
    let config = write_config(dir.path(), 7);
    let d = dir.path().display().to_string();
    assert_code(
        &mobsim(&[
            "gen-personas",
            "--stats",
            &format!("{d}/stats.toml"),
            "--pois",
            &format!("{d}/pois.csv"),
            "--count",
            "3",
            "--seed",
            "7",
            "--out",
            &format!("{d}/personas.jsonl"),
        ]),
        0,
    );
    // Point every work activity at a category absent from the store; the
    // anchor bypass misses and destination resolution fails mid-day.
    let personas_path = dir.path().join("personas.jsonl");
    let mangled = fs::read_to_string(&personas_path)
        .unwrap()
        .replace(r#"["Office"]"#, r#"["Officium"]"#);
    fs::write(&personas_path, mangled).unwrap();

    let output = mobsim(&["simulate", "--config", config.to_str().unwrap()]);
    assert_code(&output, 4);
    let trace = fs::read_to_string(dir.path().join("out/trace.jsonl")).unwrap();
    assert!(trace.contains("failed_day"), "failed-day marker present");
}

#[test]
fn export_geojson_rejects_malformed_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    fs::write(&trace, "{\"agent_id\": broken\n").unwrap();
    let output = mobsim(&[
        "export-geojson",
        "--trace",
        trace.to_str().unwrap(),
        "--out",
        dir.path().join("out.geojson").to_str().unwrap(),
    ]);
    assert_code(&output, 3);
    assert!(String::from_utf8_lossy(&output.stderr).contains("line 1"));
}

#[test]
fn metrics_reference_requires_pois() {
    let dir = tempfile::tempdir().unwrap();
    write_demo_data(dir.path());
    let trace = dir.path().join("trace.jsonl");
    fs::write(&trace, "").unwrap();
    let output = mobsim(&[
        "metrics",
        "--trace",
        trace.to_str().unwrap(),
        "--reference",
        &format!("{}/checkins.csv", dir.path().display()),
        "--out",
        dir.path().join("metrics.json").to_str().unwrap(),
    ]);
    assert_code(&output, 2);
}
