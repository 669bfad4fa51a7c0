use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn telemap(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_telemap"))
        .args(args)
        .current_dir(cwd)
        .env_remove("TELEMAP_WORKERS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

const SMALL_SEARCH: &str = r#"
[features]
grid_rows = 10
grid_cols = 10

[search]
groups = [1, 2, 3]
col_factors = [1]
row_factors = [1]
inits = ["kmeans"]
max_iter = 60
"#;

/// Writes a small synthetic cohort and a config that searches a reduced grid.
fn cohort(dir: &Path) -> std::path::PathBuf {
    let out = telemap(&["synth", "--per-component", "12", "--epochs", "400", "--seed", "3", "--out", "cohort"], dir);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut text = String::from("seed = 3\noutput_dir = \"results\"\n[input]\nmanifest = \"manifest.csv\"\nsurvival = \"survival.csv\"\n");
    text.push_str(SMALL_SEARCH);
    text.push_str("\n[survival]\nleft_truncation = true\n");
    let path = dir.join("cohort/small.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn synth_writes_a_runnable_cohort() {
    let dir = TempDir::new().unwrap();
    cohort(dir.path());
    for f in ["manifest.csv", "survival.csv", "truth.csv", "telemap.toml", "epochs/P0001.csv"] {
        assert!(dir.path().join("cohort").join(f).is_file(), "{f} missing");
    }
    let cfg = telemap_core::pipeline::PipelineConfig::load(&dir.path().join("cohort/telemap.toml")).unwrap();
    cfg.validate().unwrap();
}

#[test]
fn run_is_reproducible_and_writes_all_artifacts() {
    let dir = TempDir::new().unwrap();
    let cfg = cohort(dir.path());
    let cfg = cfg.to_str().unwrap();
    let a = telemap(&["run", "--config", cfg, "--out", "a", "--workers", "1"], dir.path());
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let b = telemap(&["run", "--config", cfg, "--out", "b", "--workers", "1"], dir.path());
    assert_eq!(code(&b), 0);
    for f in ["clusters.csv", "model.txt", "search.csv", "report.txt", "manifest.json", "force_maps.bin"] {
        let x = fs::read(dir.path().join("a").join(f)).unwrap();
        let y = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between identical runs");
    }
    let clusters = fs::read_to_string(dir.path().join("a/clusters.csv")).unwrap();
    let stdout = String::from_utf8_lossy(&a.stdout);
    assert!(stdout.contains(&format!("clustered: {}", clusters.lines().count() - 1)), "{stdout}");
}

#[test]
fn stages_chain_through_files() {
    let dir = TempDir::new().unwrap();
    let cfg = cohort(dir.path());
    let cfg = cfg.to_str().unwrap();
    let run = |args: &[&str]| {
        let out = telemap(args, dir.path());
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out
    };
    run(&["ingest", "--config", cfg, "--out", "s"]);
    assert!(dir.path().join("s/ingest.csv").is_file());
    run(&["featurize", "--config", cfg, "--out", "s"]);
    run(&["fit", "--config", cfg, "--maps", "s/force_maps.bin", "-G", "2", "--out", "fit"]);
    assert!(dir.path().join("fit/model.json").is_file());
    run(&["search", "--config", cfg, "--maps", "s/force_maps.bin", "--out", "s"]);
    run(&["classify", "--maps", "s/force_maps.bin", "--model", "s/model.json", "--out", "s"]);
    let clusters = fs::read_to_string(dir.path().join("s/clusters.csv")).unwrap();
    let parsed = fs::read_to_string(dir.path().join("s/ingest.csv")).unwrap().lines().filter(|l| l.ends_with(",ok")).count();
    assert_eq!(clusters.lines().count(), parsed + 1);
    assert!(parsed >= 30);
    let surv = run(&["survival", "--config", cfg, "--clusters", "s/clusters.csv", "--out", "s"]);
    let text = String::from_utf8_lossy(&surv.stdout);
    assert!(text.contains("shift:") && text.contains("cluster:"), "{text}");
    assert!(dir.path().join("s/survival/shift_km.csv").is_file());
}

#[test]
fn validation_failures_exit_with_code_two() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("bad.toml"), "seeed = 1\n").unwrap();
    assert_eq!(code(&telemap(&["run", "--config", "bad.toml"], dir.path())), 2);
    assert_eq!(code(&telemap(&["ingest", "--manifest", "missing.csv"], dir.path())), 2);
    assert_eq!(code(&telemap(&["ingest"], dir.path())), 2);
    assert_eq!(code(&telemap(&["no-such-command"], dir.path())), 2);
}

#[test]
fn worker_variable_is_validated() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("manifest.csv"), "participant_id,path\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_telemap"))
        .args(["ingest", "--manifest", "manifest.csv"])
        .current_dir(dir.path())
        .env("TELEMAP_WORKERS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn data_and_io_failures_have_their_own_codes() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("manifest.csv"), "participant_id,path\n").unwrap();
    let empty = telemap(&["run", "--manifest", "manifest.csv", "--out", "o"], dir.path());
    assert_eq!(code(&empty), 3);
    assert!(!dir.path().join("o/force_maps.bin").exists());
    fs::write(dir.path().join("junk.bin"), b"not a container").unwrap();
    assert_eq!(code(&telemap(&["search", "--maps", "junk.bin"], dir.path())), 3);
    assert_eq!(code(&telemap(&["classify", "--maps", "nope.bin", "--model", "nope.json"], dir.path())), 5);
}
