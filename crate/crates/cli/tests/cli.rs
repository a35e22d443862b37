use std::path::Path;
use std::process::{Command, Output};

fn fcbench(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcbench"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn data_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("functions.toml"),
        "[[functions]]\nkind = \"sine\"\nlength = 200\n\n[[functions]]\nkind = \"sigmoid\"\nnoise_std = 0.01\nseed = 4\n",
    )
    .unwrap();
    ok(&fcbench(&["generate-functions", "functions.toml", "data"], d));
    let sine = d.join("data/00_sine.csv");
    assert_eq!(std::fs::read_to_string(&sine).unwrap().lines().count(), 200);

    ok(&fcbench(
        &["inject-noise", "data/00_sine.csv", "noisy.csv", "--kind", "missing", "--contamination", "0.1", "--seed", "2"],
        d,
    ));
    let zeros = std::fs::read_to_string(d.join("noisy.csv")).unwrap().lines().filter(|l| *l == "0").count();
    assert!(zeros >= 20);

    ok(&fcbench(&["filter", "noisy.csv", "smooth.csv", "--kind", "ema", "--alpha", "0.5"], d));
    assert_eq!(std::fs::read_to_string(d.join("smooth.csv")).unwrap().lines().count(), 200);

    ok(&fcbench(
        &[
            "fit-linear", "data/00_sine.csv", "model.json", "--input-length", "96", "--output-length", "24",
            "--variant", "rlinear", "--forecast", "forecast.csv",
        ],
        d,
    ));
    assert_eq!(std::fs::read_to_string(d.join("forecast.csv")).unwrap().lines().count(), 24);

    let out = fcbench(
        &["eval", "data/00_sine.csv", "--input-length", "48", "--output-length", "12", "--forecaster", "last-value",
          "--protocol", "sliding", "--test-fraction", "0.4"],
        d,
    );
    ok(&out);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["protocol"], "sliding");
    assert_eq!(report["windows"], 2);
}

const CONFIG: &str = r#"
output_dir = "results"
metric_space = "raw"

[task]
input_length = 96
output_length = 24

[split]
test_fraction = 0.5

[[datasets]]
name = "series"
source = "csv"
path = "series.csv"
layout = "plain"

[[forecasters]]
kind = "linear"
variant = "dlinear"
max_epochs = 200
decomposition_kernel = 5

[[forecasters]]
kind = "llm"
style = "llmp_single"
adapter = { kind = "mock", script = { mode = "persistence", count = 24 } }
decoding = { num_samples = 3 }
"#;

#[test]
fn run_with_overrides_and_dry_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let rows: String = (0..300).map(|i| format!("{}\n", (i as f64 * 0.3).sin() + 0.01 * i as f64)).collect();
    std::fs::write(d.join("series.csv"), rows).unwrap();
    std::fs::write(d.join("exp.toml"), CONFIG).unwrap();

    let dry = fcbench(&["run", "exp.toml", "--dry-run"], d);
    ok(&dry);
    assert!(String::from_utf8_lossy(&dry.stdout).contains("config ok"));
    assert!(!d.join("results").exists());

    ok(&fcbench(&["run", "exp.toml", "--output-dir", "other", "--protocol", "sliding", "--sweep", "0,0.01"], d));
    let summary = std::fs::read_to_string(d.join("other/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    assert!(summary.contains(",sliding,raw,"));
    assert!(d.join("other/plots/noise_sweep__series__llm-llmp_single.csv").is_file());
    let transcript = std::fs::read_to_string(d.join("other/transcripts/series__llm-llmp_single__sigma0.jsonl")).unwrap();
    assert_eq!(transcript.lines().count(), 6, "2 sliding windows x 3 samples");
}

#[test]
fn config_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("exp.toml"), CONFIG).unwrap();
    let out = fcbench(&["run", "exp.toml", "--dry-run"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));
}

#[test]
fn failed_runs_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let rows: String = (0..300).map(|i| format!("{}\n", i as f64)).collect();
    std::fs::write(d.join("series.csv"), rows).unwrap();
    let config = CONFIG.replace("mode = \"persistence\", count = 24", "mode = \"error\", status = 500, message = \"down\"");
    std::fs::write(d.join("exp.toml"), config).unwrap();
    let out = fcbench(&["run", "exp.toml"], d);
    assert_eq!(out.status.code(), Some(1));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("results/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["failed"], 1);
    assert_eq!(manifest["errors"][0]["forecaster"], "llm-llmp_single");
}

#[test]
fn shipped_offline_config_validates() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let out = fcbench(&["run", "configs/offline.toml", "--dry-run"], &root);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("2 datasets, 4 forecasters"));
}
