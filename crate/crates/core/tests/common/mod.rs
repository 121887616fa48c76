#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_depthforge");

pub const DATASET_SPEC: &str = r#"{
  "num_source": 10,
  "num_target": 20,
  "labeled_target": 4,
  "width": 64,
  "height": 32,
  "num_classes": 6,
  "uncertainty_steps": 3,
  "seed": 11
}
"#;

pub fn run(dir: &Path, threads: usize, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .env_remove("DEPTHFORGE_THREADS")
        .arg("--threads")
        .arg(threads.to_string())
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn run_ok(dir: &Path, threads: usize, args: &[&str]) -> Output {
    let out = run(dir, threads, args);
    assert!(
        out.status.success(),
        "depthforge {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub const BATCHES: usize = 4;

/// synthgen -> select -> plan-ssda -> mix -> loss-report -> stats, all with
/// relative paths inside `dir`.
pub fn run_pipeline(dir: &Path, threads: usize, seed: u64) {
    fs::write(dir.join("spec.json"), DATASET_SPEC).unwrap();
    let seed = seed.to_string();
    let s = seed.as_str();
    run_ok(dir, threads, &["--seed", s, "synthgen", "--spec", "spec.json", "--out", "data"]);
    run_ok(
        dir,
        threads,
        &[
            "--seed", s, "select", "--manifest", "data/manifest.json", "--schedule", "3,6,9",
            "--uncertainty-dir", "data/uncertainty", "--out", "sel",
        ],
    );
    let batches = BATCHES.to_string();
    run_ok(
        dir,
        threads,
        &["--seed", s, "plan-ssda", "--manifest", "data/manifest.json", "--batches", &batches, "--out", "plans.json"],
    );
    run_ok(
        dir,
        threads,
        &["--seed", s, "mix", "--manifest", "data/manifest.json", "--plans", "plans.json", "--out", "mix"],
    );
    for b in 0..BATCHES {
        let plan = format!("mix/batch{b:04}/loss_plan.json");
        let out = format!("reports/batch{b:04}.json");
        run_ok(dir, threads, &["--seed", s, "loss-report", "--plan", &plan, "--out", &out]);
    }
    run_ok(
        dir,
        threads,
        &[
            "--seed", s, "stats", "--selected", "sel/selected_step3.json", "--manifest", "data/manifest.json",
            "--out", "stats.json",
        ],
    );
}

/// Relative path -> file bytes for every file under `root`.
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// First difference between two snapshots, if any.
pub fn diff(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) -> Option<String> {
    let ka: Vec<_> = a.keys().collect();
    let kb: Vec<_> = b.keys().collect();
    if ka != kb {
        return Some(format!("file sets differ: {} vs {} files", ka.len(), kb.len()));
    }
    a.iter()
        .find(|(k, v)| b[*k] != **v)
        .map(|(k, _)| format!("{k} differs"))
}
