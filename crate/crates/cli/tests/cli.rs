use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use dcac_core::pipeline::{evaluate, load_checkpoint, Dataset, Decoder};
use serde_json::Value;
use tempfile::TempDir;

fn dcac(args: &[&str]) -> Output {
    dcac_env(args, &[])
}

fn dcac_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dcac"));
    cmd.args(args).env_remove("DCAC_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every regular file under `dir` with its bytes, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

const TINY: &str = r#"{"train": {"epochs": 2, "diag_samples": 4, "beam_width": 2}, "data": {"n_train": 10, "n_dev": 4}}"#;

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn data(&self) -> PathBuf {
        self.dir.path().join("data")
    }
    fn run(&self) -> PathBuf {
        self.dir.path().join("run")
    }
    fn checkpoint(&self) -> PathBuf {
        self.run().join("checkpoint")
    }
}

/// One generated dataset and one short training run shared by read-only tests.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let f = Fixture { dir };
        let cfg = f.dir.path().join("tiny.json");
        fs::write(&cfg, TINY).unwrap();
        let o = dcac(&["gen", "--seed", "5", "--n-train", "10", "--n-dev", "4", "--out", s(&f.data())]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let o = dcac(&["train", "--config", s(&cfg), "--data", s(&f.data()), "--out", s(&f.run())]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        f
    })
}

#[test]
fn gen_writes_every_sample_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = dcac(&["gen", "--seed", "7", "--n-train", "100", "--n-dev", "20", "--out", s(out)]);
        assert_eq!(code(&o), 0);
    }
    let files = snapshot(&a);
    assert_eq!(files.len(), 121);
    assert!(files.contains_key(Path::new("index.json")));
    assert_eq!(files, snapshot(&b));
    assert!(fs::read(a.join("index.json")).unwrap().ends_with(b"\n"));
}

#[test]
fn gen_seed_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let seed_of = |dir: &Path| -> u64 {
        let v: Value = serde_json::from_slice(&fs::read(dir.join("index.json")).unwrap()).unwrap();
        v["seed"].as_u64().unwrap()
    };
    let env_only = tmp.path().join("env");
    let o = dcac_env(&["gen", "--n-train", "1", "--n-dev", "1", "--out", s(&env_only)], &[("DCAC_SEED", "11")]);
    assert_eq!(code(&o), 0);
    assert_eq!(seed_of(&env_only), 11);
    let both = tmp.path().join("both");
    let o = dcac_env(&["gen", "--seed", "4", "--n-train", "1", "--n-dev", "1", "--out", s(&both)], &[("DCAC_SEED", "11")]);
    assert_eq!(code(&o), 0);
    assert_eq!(seed_of(&both), 4);
}

#[test]
fn usage_and_config_errors_exit_2() {
    let o = dcac(&["gen", "--n-train", "3"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));

    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(code(&dcac(&["gen", "--n-train", "0", "--out", s(&out)])), 2);
    assert_eq!(code(&dcac(&["train", "--preset", "table9-nothing", "--out", s(&out)])), 2);
    assert_eq!(code(&dcac_env(&["cost"], &[("DCAC_SEED", "abc")])), 2);

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"train": {"epochs": 0}}"#).unwrap();
    assert_eq!(code(&dcac(&["train", "--config", s(&bad), "--out", s(&out)])), 2);
    fs::write(&bad, r#"{"unknown_key": 1}"#).unwrap();
    assert_eq!(code(&dcac(&["cost", "--config", s(&bad)])), 2);
}

#[test]
fn io_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing");
    assert_eq!(code(&dcac(&["cost", "--config", s(&missing.join("c.json"))])), 3);
    let f = fixture();
    assert_eq!(code(&dcac(&["eval", "--checkpoint", s(&f.checkpoint()), "--data", s(&missing)])), 3);
}

#[test]
fn train_writes_artifacts_and_repeats_exactly() {
    let f = fixture();
    let metrics = fs::read_to_string(f.run().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "epoch,loss_final,loss_sr,dev_wer,stage2_zero_frac,stage3_zero_frac,stage4_zero_frac");
    assert_eq!(lines.len(), 3);
    let manifest: Value = serde_json::from_slice(&fs::read(f.checkpoint().join("manifest.json")).unwrap()).unwrap();
    let summary: Value = serde_json::from_slice(&fs::read(f.run().join("summary.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"], summary["config_hash"]);
    assert!(manifest["epoch"].as_u64().unwrap() >= 1);

    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.json");
    fs::write(&cfg, TINY).unwrap();
    let again = tmp.path().join("again");
    let o = dcac(&["train", "--config", s(&cfg), "--data", s(&f.data()), "--out", s(&again)]);
    assert_eq!(code(&o), 0);
    let log = String::from_utf8_lossy(&o.stdout);
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch ")).count(), 2);
    assert_eq!(fs::read_to_string(again.join("metrics.csv")).unwrap(), metrics);
    assert_eq!(snapshot(&again.join("checkpoint")), snapshot(&f.checkpoint()));
}

#[test]
fn seed_env_overrides_config_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"seed": 1, "train": {"epochs": 1, "diag_samples": 1, "beam_width": 1}, "data": {"n_train": 2, "n_dev": 1}}"#)
        .unwrap();
    let out = tmp.path().join("run");
    let o = dcac_env(&["train", "--config", s(&cfg), "--out", s(&out)], &[("DCAC_SEED", "9")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let written: Value = serde_json::from_slice(&fs::read(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(written["seed"], 9);
}

#[test]
fn divergence_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"train": {"epochs": 3, "lr": 1e30, "diag_samples": 1, "beam_width": 1}, "data": {"n_train": 6, "n_dev": 2}}"#)
        .unwrap();
    let o = dcac(&["train", "--config", s(&cfg), "--out", s(&tmp.path().join("run"))]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
}

fn eval_json(f: &Fixture, beam: &str) -> Value {
    let o = dcac(&["eval", "--checkpoint", s(&f.checkpoint()), "--data", s(&f.data()), "--beam", beam]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.ends_with(b"}\n"));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn eval_reports_split_and_is_repeatable() {
    let f = fixture();
    let before = (snapshot(&f.data()), snapshot(&f.checkpoint()));
    let a = eval_json(f, "10");
    let b = eval_json(f, "10");
    assert_eq!(a, b);
    for key in ["wer", "del", "ins"] {
        assert!(a[key].is_f64(), "{key} missing");
    }
    let t = &a["totals"];
    let errors = t["substitutions"].as_f64().unwrap() + t["insertions"].as_f64().unwrap() + t["deletions"].as_f64().unwrap();
    assert_eq!(a["wer"].as_f64().unwrap(), errors / t["ref_length"].as_f64().unwrap());
    assert_eq!(before, (snapshot(&f.data()), snapshot(&f.checkpoint())));
}

#[test]
fn eval_width_one_matches_greedy() {
    let f = fixture();
    let cli = eval_json(f, "1");
    let (model, ..) = load_checkpoint(&f.checkpoint()).unwrap();
    let data = Dataset::load(&f.data()).unwrap();
    let greedy = evaluate(&model, &data.dev, Decoder::Greedy).unwrap();
    assert_eq!(cli["wer"].as_f64().unwrap(), greedy.wer);
    assert_eq!(cli["totals"], serde_json::to_value(greedy.totals).unwrap());
}

#[test]
fn eval_per_sample_csv() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("eval");
    assert_eq!(code(&dcac(&["eval", "--checkpoint", s(&f.checkpoint()), "--data", s(&f.data()), "--per-sample"])), 2);
    let o = dcac(&["eval", "--checkpoint", s(&f.checkpoint()), "--data", s(&f.data()), "--per-sample", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(out.join("samples.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "id,reference,hypothesis,sub,ins,del,ref_len,wer");
    assert_eq!(csv.lines().count(), 5);
    let report: Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report, serde_json::from_slice::<Value>(&o.stdout).unwrap());
}

#[test]
fn tampered_checkpoint_exits_5() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let copy = tmp.path().join("ckpt");
    for (rel, bytes) in snapshot(&f.checkpoint()) {
        let p = copy.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, bytes).unwrap();
    }
    let cfg_path = copy.join("config.json");
    let text = fs::read_to_string(&cfg_path).unwrap().replacen("\"seed\": 0", "\"seed\": 1", 1);
    fs::write(&cfg_path, text).unwrap();
    let o = dcac(&["eval", "--checkpoint", s(&copy), "--data", s(&f.data())]);
    assert_eq!(code(&o), 5, "{}", String::from_utf8_lossy(&o.stderr));
}

fn cost_outputs(preset: &str) -> (Value, String) {
    let j = dcac(&["cost", "--preset", preset, "--format", "json"]);
    let t = dcac(&["cost", "--preset", preset]);
    assert_eq!(code(&j), 0);
    assert_eq!(code(&t), 0);
    (serde_json::from_slice(&j.stdout).unwrap(), String::from_utf8(t.stdout).unwrap())
}

#[test]
fn cost_json_and_table_agree() {
    let (json, table) = cost_outputs("table3-L-3-7-11");
    let rows: Vec<Vec<&str>> = table.lines().map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(rows[0], ["scope", "extent", "flops_exact", "flops_approx", "params_exact", "params_approx"]);
    let insertions = json["insertions"].as_array().unwrap();
    assert_eq!(rows.len(), insertions.len() + 3);
    let num = |v: &str| v.parse::<f64>().unwrap();
    for (row, ins) in rows[1..].iter().zip(insertions) {
        assert_eq!(row[0], format!("stage{}", ins["stage"]));
        let e: Vec<String> = ins["extent"].as_array().unwrap().iter().map(|v| v.to_string()).collect();
        assert_eq!(row[1], e.join("x"));
        for (cell, key) in row[2..].iter().zip(["flops_exact", "flops_approx", "params_exact", "params_approx"]) {
            assert_eq!(num(cell), json[key].as_f64().unwrap_or_else(|| ins[key].as_f64().unwrap()), "{key}");
        }
    }
    let backbone = &rows[rows.len() - 2];
    assert_eq!(num(backbone[2]), json["backbone_flops"].as_f64().unwrap());
    assert_eq!(num(backbone[4]), json["backbone_params"].as_f64().unwrap());
    let total = &rows[rows.len() - 1];
    assert_eq!(num(total[1]), json["frames"].as_f64().unwrap());
    for (cell, key) in total[2..].iter().zip(["total_flops_exact", "total_flops_approx", "total_params_exact", "total_params_approx"]) {
        assert_eq!(num(cell), json[key].as_f64().unwrap(), "{key}");
    }
}

#[test]
fn cost_total_grows_with_temporal_kernel() {
    let (small, _) = cost_outputs("table3-L-3-3-3");
    let (large, _) = cost_outputs("table3-L-13-13-13");
    let total = |v: &Value| v["total_flops_exact"].as_u64().unwrap();
    assert!(total(&large) > total(&small));
    assert_eq!(small["frames"], 100);
}

#[test]
fn cost_writes_both_forms_under_out() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cost");
    let o = dcac(&["cost", "--format", "json", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(out.join("cost.json")).unwrap(), o.stdout);
    assert_eq!(fs::read_to_string(out.join("cost.txt")).unwrap(), String::from_utf8(dcac(&["cost"]).stdout).unwrap());
}

#[test]
fn diagnose_emits_one_row_per_frame() {
    let f = fixture();
    let data = Dataset::load(&f.data()).unwrap();
    let sample = &data.dev[1];
    for stage in ["2", "stage4"] {
        let o = dcac(&[
            "diagnose",
            "--checkpoint",
            s(&f.checkpoint()),
            "--data",
            s(&f.data()),
            "--stage",
            stage,
            "--sample",
            &sample.id,
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let text = String::from_utf8(o.stdout).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "frame_index,grad_l2,stage");
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), sample.num_frames());
        let label = format!("stage{}", stage.trim_start_matches("stage"));
        for (i, r) in rows.iter().enumerate() {
            let cells: Vec<&str> = r.split(',').collect();
            assert_eq!(cells[0], i.to_string());
            assert!(cells[1].parse::<f64>().unwrap() >= 0.0);
            assert_eq!(cells[2], label);
        }
    }
}

#[test]
fn diagnose_rejects_unknown_stage_and_sample() {
    let f = fixture();
    let (ckpt, data) = (f.checkpoint(), f.data());
    let base = ["diagnose", "--checkpoint", s(&ckpt), "--data", s(&data)];
    for extra in [&["--stage", "5"][..], &["--stage", "stageX"], &["--stage", "2", "--sample", "nope"]] {
        let args: Vec<&str> = base.iter().chain(extra).copied().collect();
        assert_eq!(code(&dcac(&args)), 2, "{extra:?}");
    }
}

#[test]
fn diagnose_out_writes_csv_and_summary() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("diag");
    let o = dcac(&["diagnose", "--checkpoint", s(&f.checkpoint()), "--data", s(&f.data()), "--stage", "3", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    let summary: Value = serde_json::from_slice(&fs::read(out.join("spike_stage3.json")).unwrap()).unwrap();
    let csv = fs::read_to_string(out.join("grad_stage3.csv")).unwrap();
    assert_eq!(summary["frames"].as_u64().unwrap() as usize, csv.lines().count() - 1);
    let z = summary["stats"]["zero_fraction"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&z));
}
