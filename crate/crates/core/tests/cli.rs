//! The command-line binary: subcommands, flags and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_evtol-surrogate");

const CONFIG: &str = r#"
seed = 3

[ecm]
r0 = 0.02
branches = [{ r = 0.01, tau = 10.0 }, { r = 0.02, tau = 100.0 }]
capacity_ah = 3.0
ocv_knots = [[0.0, 3.0], [0.5, 3.7], [1.0, 4.2]]

[synthetic]
k = 2e-4
noise_std_v = 0.002

[synthetic.profile]
takeoff = { current_a = 15.0, duration_s = 20.0 }
cruise = { current_a = 5.0, duration_s = 80.0 }
landing = { current_a = 15.0, duration_s = 20.0 }
rest_s = 60.0

[[synthetic.train]]
cell = "A"
temp_c = 20.0

[[synthetic.train]]
cell = "B"
cycle = 40
temp_c = 30.0
power_reduction = 0.2

[synthetic.test]
cell = "C"
cycle = 20
power_reduction = 0.1

[[grid]]
mode = "FNN"
hidden_layers = 1
neurons = 8

[[grid]]
mode = "PINN"
hidden_layers = 1
neurons = 8

[train]
epochs = 5
batch_size = 32
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("exp.toml");
    fs::write(&p, text).unwrap();
    p
}

fn cli(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn run_eval_and_bench() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("o");
    let o = cli(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--jobs", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("results.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("FNN-L1-N8,"));
    assert!(rows[2].starts_with("PINN-L1-N8,"));

    let synth_dir = dir.path().join("s");
    let o = cli(&["synth", cfg.to_str().unwrap(), "--out", synth_dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let weights = out.join("PINN-L1-N8.weights.json");
    let o = cli(&["eval", weights.to_str().unwrap(), synth_dir.join("test.csv").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    // predicting the exported test trace reproduces the run's table row
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().nth(1).unwrap(), rows[2]);

    let o = cli(&["bench", weights.to_str().unwrap(), "--rows", "50", "--repetitions", "20"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("PINN-L1-N8"));
}

#[test]
fn filter_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("o");
    let o = cli(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--filter", "PINN-*", "--seed", "9"]);
    assert_eq!(code(&o), 0);
    assert!(out.join("PINN-L1-N8.weights.json").exists());
    assert!(!out.join("FNN-L1-N8.weights.json").exists());
    let w: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("PINN-L1-N8.weights.json")).unwrap()).unwrap();
    assert_eq!(w["mode"], "PINN");
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), &CONFIG.replace("epochs = 5", "epochz = 5"));
    assert_eq!(code(&cli(&["run", bad.to_str().unwrap()])), 1);
    assert_eq!(code(&cli(&["run", dir.path().join("missing.toml").to_str().unwrap()])), 1);
    assert_eq!(code(&cli(&["run", "--bogus-flag"])), 1);
    let cfg = write_config(dir.path(), CONFIG);
    assert_eq!(code(&cli(&["run", cfg.to_str().unwrap(), "--filter", "XYZ"])), 1);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let start = CONFIG.find("[synthetic]").unwrap();
    let end = CONFIG.find("[[grid]]").unwrap();
    let text = format!("{}[data]\npath = \"nowhere\"\n\n{}", &CONFIG[..start], &CONFIG[end..]);
    let cfg = write_config(dir.path(), &text);
    assert_eq!(code(&cli(&["run", cfg.to_str().unwrap()])), 2);

    let csv = dir.path().join("bad.csv");
    fs::write(&csv, "cell,time_s\nA,0\n").unwrap();
    let weights = dir.path().join("w.json");
    let cfg = write_config(dir.path(), CONFIG);
    let o = cli(&["run", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--filter", "FNN-*"]);
    assert_eq!(code(&o), 0);
    fs::copy(dir.path().join("FNN-L1-N8.weights.json"), &weights).unwrap();
    assert_eq!(code(&cli(&["eval", weights.to_str().unwrap(), csv.to_str().unwrap()])), 2);
}

#[test]
fn failed_cell_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // constant training temperature: every cell fails its normalizer fit
    let text = CONFIG.replace("temp_c = 30.0", "temp_c = 20.0");
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("o");
    let o = cli(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(out.join("failures.csv").exists());
    assert_eq!(fs::read_to_string(out.join("results.csv")).unwrap().lines().count(), 1);
}
