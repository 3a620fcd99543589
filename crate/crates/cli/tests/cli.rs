use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn goalchain(out_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_goalchain"))
        .arg("--out-dir")
        .arg(out_dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn run_dirs(root: &Path) -> Vec<PathBuf> {
    let mut dirs: Vec<_> = fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs
}

#[test]
fn run_records_strategy_and_critic() {
    let tmp = tempfile::tempdir().unwrap();
    let o = goalchain(tmp.path(), &["run", "london_ambulance", "--strategy", "few-shot", "--critic", "on"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = tmp.path().join("london_ambulance-fs-critic-001");
    let m = manifest(&dir);
    assert_eq!(m["strategy"], "few-shot");
    assert_eq!(m["critic_enabled"], true);
    assert_eq!(m["status"]["state"], "completed");
    assert!(stdout(&o).contains("converged"));
}

#[test]
fn critic_off_transcript_has_no_critic_entries() {
    let tmp = tempfile::tempdir().unwrap();
    let o = goalchain(tmp.path(), &["run", "urban_maintenance", "--critic", "off"]);
    assert!(o.status.success());
    let transcript = fs::read_to_string(tmp.path().join("urban_maintenance-zs-nocritic-001/transcript.jsonl")).unwrap();
    assert!(!transcript.is_empty());
    for line in transcript.lines() {
        let entry: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(entry["request"]["endpoint_role"], "generator");
        assert_eq!(entry["request"]["temperature"], 0.0);
    }
}

#[test]
fn missing_dataset_fails_without_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let o = goalchain(&out, &["run", "no_such_dataset"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists() || run_dirs(&out).is_empty());
}

#[test]
fn bad_config_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("config.json");
    fs::write(&cfg, r#"{"temperature": 0.5}"#).unwrap();
    let o = goalchain(tmp.path(), &["--config", cfg.to_str().unwrap(), "run", "london_ambulance"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("temperature"));
}

#[test]
fn evaluate_is_deterministic_and_covers_all_strategies() {
    let tmp = tempfile::tempdir().unwrap();
    for s in ["zero-shot", "one-shot", "few-shot"] {
        assert!(goalchain(tmp.path(), &["run", "gestao_hospital", "--strategy", s]).status.success());
    }
    let runs: Vec<String> = run_dirs(tmp.path()).iter().map(|p| p.display().to_string()).collect();
    assert_eq!(runs.len(), 3);
    let mut args = vec!["evaluate"];
    args.extend(runs.iter().map(String::as_str));
    let first_out = tmp.path().join("a.json");
    let second_out = tmp.path().join("b.json");
    let a = goalchain(tmp.path(), &[args.clone(), vec!["--output", first_out.to_str().unwrap()]].concat());
    let b = goalchain(tmp.path(), &[args, vec!["--output", second_out.to_str().unwrap()]].concat());
    assert_eq!(stdout(&a).lines().take(8).collect::<Vec<_>>(), stdout(&b).lines().take(8).collect::<Vec<_>>());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(fs::read(&first_out).unwrap(), fs::read(&second_out).unwrap());
    let table = stdout(&a);
    assert!(table.contains("Metric  | ZS    OS    FS    | ZS    OS    FS    | ZS    OS    FS"), "{table}");
    for label in ["Prec.", "Recall", "F1"] {
        let line = table.lines().find(|l| l.starts_with(label)).unwrap();
        assert_eq!(line.matches("1.00*").count(), 9, "{line}");
    }
}

#[test]
fn evaluate_missing_artifacts_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = goalchain(tmp.path(), &["evaluate", tmp.path().join("nothing").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn replay_reproduces_goal_model() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(goalchain(tmp.path(), &["run", "genome_nexus"]).status.success());
    let first = tmp.path().join("genome_nexus-zs-critic-001");
    let record = tmp.path().join("copy.jsonl");
    let o = goalchain(
        tmp.path(),
        &[
            "--replay",
            first.join("transcript.jsonl").to_str().unwrap(),
            "--record",
            record.to_str().unwrap(),
            "run",
            "genome_nexus",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let second = tmp.path().join("genome_nexus-zs-critic-002");
    for f in ["goal_model.json", "api_mappings.json"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read(record).unwrap(), fs::read(second.join("transcript.jsonl")).unwrap());
    assert_eq!(manifest(&second)["replayed_from"], "genome_nexus-zs-critic-001");
}

#[test]
fn replay_mismatch_is_a_stage_failure() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(goalchain(tmp.path(), &["run", "london_ambulance"]).status.success());
    let t = tmp.path().join("london_ambulance-zs-critic-001/transcript.jsonl");
    let o = goalchain(tmp.path(), &["--replay", t.to_str().unwrap(), "run", "london_ambulance", "--strategy", "one-shot"]);
    assert_eq!(o.status.code(), Some(1));
    let m = manifest(&tmp.path().join("london_ambulance-os-critic-001"));
    assert_eq!(m["status"]["state"], "failed");
    assert_eq!(m["status"]["phase"], "actors");
}

#[test]
fn matrix_runs_six_isolated_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let o = goalchain(tmp.path(), &["run", "london_ambulance", "--matrix"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dirs = run_dirs(tmp.path());
    assert_eq!(dirs.len(), 6);
    for d in &dirs {
        let m = manifest(d);
        let t = fs::read_to_string(d.join("transcript.jsonl")).unwrap();
        let first: serde_json::Value = serde_json::from_str(t.lines().next().unwrap()).unwrap();
        assert_eq!(first["run_id"], m["run_id"]);
        let critic_entries = t.lines().filter(|l| l.contains(r#""endpoint_role":"critic""#)).count();
        assert_eq!(critic_entries == 0, m["critic_enabled"] == false, "{}", d.display());
    }
    assert_eq!(goalchain(tmp.path(), &["run", "london_ambulance", "--matrix", "--critic", "on"]).status.code(), Some(2));
}

#[test]
fn ablate_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(goalchain(tmp.path(), &["run", "london_ambulance", "--critic", "on"]).status.success());
    assert!(goalchain(tmp.path(), &["run", "london_ambulance", "--critic", "off"]).status.success());
    let on = tmp.path().join("on.json");
    let off = tmp.path().join("off.json");
    let eval = |run: &str, out: &Path| {
        let dir = tmp.path().join(run);
        assert!(goalchain(tmp.path(), &["evaluate", dir.to_str().unwrap(), "--output", out.to_str().unwrap()])
            .status
            .success());
    };
    eval("london_ambulance-zs-critic-001", &on);
    eval("london_ambulance-zs-nocritic-001", &off);
    let o = goalchain(tmp.path(), &["ablate", "--with", on.to_str().unwrap(), "--without", off.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 2 + 3);
    assert_eq!(text.matches(" 0.00").count(), 9, "{text}");

    let r = goalchain(tmp.path(), &["report", on.to_str().unwrap(), off.to_str().unwrap(), "--average"]);
    let text = stdout(&r);
    assert!(text.contains("london_ambulance (critic on)"));
    assert!(text.contains("london_ambulance (critic off)"));
    assert!(text.contains("average over 1 dataset (critic off)"));
}

#[test]
fn shot_sim_prints_both_sections() {
    let tmp = tempfile::tempdir().unwrap();
    let json = tmp.path().join("sim.json");
    let o = goalchain(tmp.path(), &["shot-sim", "gestao_hospital", "--output", json.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("Generator shot examples"));
    assert!(text.contains("Critic shot examples"));
    assert_eq!(text.matches("Average per Task").count(), 2);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(v["generator"]["rows"][0]["dataset_id"], "gestao_hospital");
}
