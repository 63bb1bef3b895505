use std::path::Path;
use std::process::{Command, Output};

use fade_lab::RunManifest;

fn fade_lab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fade-lab"))
        .args(args)
        .env("FADE_LAB_OUT", out)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) {
    let o = fade_lab(args, out);
    assert!(
        o.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn pipeline_smoke_run_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&["world"], out);
    ok(&["train-base"], out);
    ok(&["neighborhood"], out);
    ok(&["evaluate", "--identity"], out);

    // Base-quality gate on the default configuration.
    let acc = read(out.join("base_accuracy.csv"));
    let rows: Vec<f64> = acc.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(rows.len(), 24);
    assert!(rows.iter().all(|&a| a >= 90.0), "{acc}");

    let adj = read(out.join("adjacency.csv"));
    assert_eq!(adj.lines().count(), 6);

    // Identity unlearning: both rows score the same, nothing is erased.
    let summary = read(out.join("eval_summary.csv"));
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "model,a_er,a_adj_mean,erb");
    assert_eq!(lines[1].trim_start_matches("base"), lines[2].trim_start_matches("unlearned"));

    let manifest = RunManifest::read(&out.join("evaluate.manifest.json")).unwrap();
    assert!(manifest.identity);
    assert_eq!(manifest.inputs.len(), 3);
    for o in &manifest.outputs {
        assert!(out.join(&o.file).exists());
    }

    let again = tempfile::tempdir().unwrap();
    let m = out.join("evaluate.manifest.json");
    ok(&["replay", "--manifest", m.to_str().unwrap(), "--out", again.path().to_str().unwrap()], out);
    let replayed = RunManifest::read(&again.path().join("evaluate.manifest.json")).unwrap();
    assert_eq!(replayed.run_id, manifest.run_id);
    for f in ["eval_summary.csv", "eval_neighbors.csv", "eval_retain.csv"] {
        assert_eq!(read(out.join(f)), read(again.path().join(f)), "{f}");
    }

    // A changed input is refused.
    std::fs::write(out.join("adjacency.json"), "{}").unwrap();
    let o = fade_lab(&["replay", "--manifest", m.to_str().unwrap(), "--out", again.path().to_str().unwrap()], out);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn unknown_subcommand_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let o = fade_lab(&["frobnicate"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn bad_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("lab.toml");
    std::fs::write(&cfg, "[world]\nfamilies = 4\nfamillies = 3\n").unwrap();
    let o = fade_lab(&["world", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("world.famillies"));

    let o = fade_lab(&["world", "--set", "fade.iterations=-1"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fade.iterations"));
}

#[test]
fn missing_inputs_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = fade_lab(&["train-base"], dir.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("world"));
}

#[test]
fn seed_flag_and_config_file_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("lab.toml");
    std::fs::write(&cfg, "[world]\nfamilies = 3\n").unwrap();
    ok(&["world", "--config", cfg.to_str().unwrap(), "--seed", "99"], dir.path());
    let m = RunManifest::read(&dir.path().join("world.manifest.json")).unwrap();
    assert_eq!(m.seed, 99);
    assert_eq!(m.config.world.families, 3);
    assert_eq!(read(dir.path().join("concepts.csv")).lines().count(), 19);

    let o = fade_lab(&["config", "--set", "fade.lr=0.5"], dir.path());
    assert!(String::from_utf8_lossy(&o.stdout).contains("lr = 0.5"));
}
