use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use endonav_cli::{RunConfig, RunManifest};
use endonav_core::evalsuite::ComparisonTable;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_endonav"));
    c.env_remove("ENDONAV_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn small_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.train.total_timesteps = 1024;
    c.train.rollout_len = 256;
    c.train.num_envs = 2;
    c.train.minibatch_size = 64;
    c.train.epochs = 2;
    c.train.hidden = vec![16, 8];
    c.eval.trials = 2;
    c.eval.max_steps = 10;
    c.output.checkpoint_every = 2;
    c
}

fn write_config(dir: &Path, name: &str, c: &RunConfig) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, c.to_toml()).unwrap();
    p
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_scene_is_idempotent_and_resolved_config_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", &small_config());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["gen-scene", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["gen-scene", "--config", s(&cfg), "--out", s(&b)]);
    for f in ["scene.msh", "scene.toml"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let text = fs::read_to_string(a.join("scene.toml")).unwrap();
    let resolved = RunConfig::from_toml(&text).unwrap();
    assert_eq!(resolved.to_toml(), text);
    assert!(resolved.scene.fixed_indices.is_some() && resolved.scene.force_indices.is_some());
    let m = manifest(&a);
    assert_eq!(m.command, "gen-scene");
    assert_eq!(m.config_hash.len(), 64);
    assert!(m.outputs.iter().any(|p| p.ends_with("scene.msh")));
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small_config();
    c.scene.mesh = None;
    let cfg = write_config(tmp.path(), "nomesh.toml", &c);
    let out = run(&["gen-scene", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mesh"));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, small_config().to_toml().replace("[eval]", "[eval]\ntrails = 3")).unwrap();
    let out = run(&["gen-scene", "--config", s(&bad), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trails"));

    // train without a policy
    let cfg = write_config(tmp.path(), "ok.toml", &small_config());
    assert_eq!(run(&["train", "--config", s(&cfg), "--out", s(&tmp.path().join("t"))]).status.code(), Some(2));
    // unknown policy letter is rejected by the parser
    assert_eq!(run(&["train", "--variant", "F"]).status.code(), Some(2));
}

#[test]
fn interrupted_training_resumes_to_the_same_result() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", &small_config());
    let full = tmp.path().join("full");
    let part = tmp.path().join("part");
    ok(&["train", "--config", s(&cfg), "--variant", "C", "--out", s(&full)]);
    ok(&["train", "--config", s(&cfg), "--variant", "C", "--out", s(&part), "--stop-after", "2"]);
    assert!(!part.join("final.bin").exists());
    let ck = part.join("checkpoint_00002.bin");
    ok(&["train", "--config", s(&cfg), "--variant", "C", "--out", s(&part), "--resume", s(&ck)]);
    assert_eq!(fs::read(full.join("final.bin")).unwrap(), fs::read(part.join("final.bin")).unwrap());
    assert_eq!(fs::read(full.join("curve.csv")).unwrap(), fs::read(part.join("curve.csv")).unwrap());
    let m = manifest(&full);
    assert_eq!(m.parameters["policy"], "C");
    assert_eq!(m.parameters["updates"], "4");

    // a different config refuses the resume and prints both hashes
    let mut other = small_config();
    other.train.learning_rate = 1e-3;
    let cfg2 = write_config(tmp.path(), "other.toml", &other);
    let out = run(&["train", "--config", s(&cfg2), "--variant", "C", "--out", s(&tmp.path().join("x")), "--resume", s(&ck)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    let hex_words = err.split(|c: char| !c.is_ascii_hexdigit()).filter(|w| w.len() == 64).count();
    assert_eq!(hex_words, 2, "{err}");
    // so does the same config under another policy
    let out = run(&["train", "--config", s(&cfg), "--variant", "D", "--out", s(&tmp.path().join("y")), "--resume", s(&ck)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_replay_compare_and_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", &small_config());
    let train = tmp.path().join("train");
    ok(&["train", "--config", s(&cfg), "--variant", "E", "--out", s(&train)]);
    let ck = train.join("final.bin");

    let ev = tmp.path().join("eval");
    ok(&["eval", "--config", s(&cfg), "--variant", "E", "--checkpoint", s(&ck), "--trials", "3", "--max-steps", "12", "--out", s(&ev)]);
    let m = manifest(&ev);
    assert_eq!((m.parameters["trials"].as_str(), m.parameters["max_steps"].as_str()), ("3", "12"));
    let reports: Vec<endonav_core::evalsuite::EvalReport> = serde_json::from_str(&fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].trials, 3);

    let rp = tmp.path().join("replay");
    let out = ok(&["replay", "--config", s(&cfg), "--log", s(&ev.join("logs.jsonl")), "--out", s(&rp)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("max divergence 0e0"));
    ok(&["replay", "--config", s(&cfg), "--log", s(&ev.join("logs.csv")), "--out", s(&rp)]);
    // a doctored log no longer reproduces
    let text = fs::read_to_string(ev.join("logs.jsonl")).unwrap();
    let mut rows: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    rows[0]["ee"][0] = serde_json::json!(rows[0]["ee"][0].as_f64().unwrap() + 1e-3);
    let doctored = tmp.path().join("doctored.jsonl");
    fs::write(&doctored, rows.iter().map(|r| r.to_string() + "\n").collect::<String>()).unwrap();
    assert_eq!(run(&["replay", "--config", s(&cfg), "--log", s(&doctored), "--out", s(&rp)]).status.code(), Some(3));

    // every policy slot filled with the same weights: a full 5 x 4 grid
    let cks = tmp.path().join("cks");
    fs::create_dir_all(&cks).unwrap();
    for p in ["A", "B", "C", "D", "E"] {
        fs::copy(&ck, cks.join(format!("{p}.bin"))).unwrap();
    }
    let cmp = tmp.path().join("compare");
    ok(&["compare", "--config", s(&cfg), "--checkpoints", s(&cks), "--trials", "1", "--max-steps", "3", "--out", s(&cmp)]);
    let table: ComparisonTable = serde_json::from_str(&fs::read_to_string(cmp.join("table.json")).unwrap()).unwrap();
    assert_eq!((table.policies.len(), table.variants.len(), table.cells.len()), (5, 4, 20));
    assert!(table.cells.iter().all(|c| c.report.is_some()));
    let md = fs::read_to_string(cmp.join("table.md")).unwrap();
    assert_eq!(md.lines().count(), 7);

    // missing checkpoints are listed as absent
    fs::remove_file(cks.join("B.bin")).unwrap();
    let cmp2 = tmp.path().join("compare2");
    ok(&["compare", "--config", s(&cfg), "--checkpoints", s(&cks), "--policies", "A,B", "--env", "SE", "--trials", "1", "--max-steps", "3", "--out", s(&cmp2)]);
    assert!(fs::read_to_string(cmp2.join("table.md")).unwrap().contains("| B | absent | absent |"));

    let pl = tmp.path().join("plots");
    ok(&["plot", "--curve", s(&train.join("curve.csv")), "--table", s(&cmp.join("table.json")), "--out", s(&pl)]);
    assert!(pl.join("curve.svg").exists() && pl.join("sr.svg").exists());
    // an empty curve writes no file
    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    fs::write(empty.join("curve.csv"), format!("{}\n", endonav_core::ppo::CURVE_HEADER)).unwrap();
    let pl2 = tmp.path().join("plots2");
    ok(&["plot", "--curve", s(&empty.join("curve.csv")), "--out", s(&pl2)]);
    assert!(!pl2.join("curve.svg").exists());
}

#[test]
fn checkpoint_version_mismatch_exits_with_code_four() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", &small_config());
    let train = tmp.path().join("train");
    ok(&["train", "--config", s(&cfg), "--variant", "A", "--out", s(&train), "--stop-after", "2"]);
    let mut bytes = fs::read(train.join("checkpoint_00002.bin")).unwrap();
    bytes[8] = 99;
    let bad = tmp.path().join("bad.bin");
    fs::write(&bad, bytes).unwrap();
    let out = run(&["eval", "--config", s(&cfg), "--variant", "A", "--checkpoint", s(&bad), "--out", s(&tmp.path().join("e"))]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version 99"));
}
