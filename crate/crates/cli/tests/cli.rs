use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn models() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn dpra(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpra")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn model(name: &str) -> String {
    models().join(name).display().to_string()
}

fn explore(extra: &[&str], out: &Path) -> Output {
    let mut args = vec!["explore".to_string(), model("pump_backup.model.json")];
    args.extend(extra.iter().map(|s| s.to_string()));
    args.extend(["--out-dir".to_string(), out.display().to_string()]);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    dpra(&refs)
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn validate_exit_codes() {
    assert_eq!(code(&dpra(&["validate", &model("pump_backup.model.json")])), 0);
    assert_eq!(code(&dpra(&["validate", &model("tank.model.json")])), 0);
    for v in ["baseline", "option_alarm", "option_qc"] {
        assert_eq!(code(&dpra(&["validate", &model(&format!("satellite/{v}.model.json"))])), 0);
    }
    let dir = tempfile::tempdir().unwrap();
    let bad = std::fs::read_to_string(models().join("pump_backup.model.json"))
        .unwrap()
        .replace("\"target\": \"FAILED\"", "\"target\": \"BROKEN\"");
    let o = dpra(&["validate", &write(dir.path(), "bad.json", &bad)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("BROKEN"));
    assert_eq!(code(&dpra(&["validate", &dir.path().join("missing.json").display().to_string()])), 2);
}

#[test]
fn plan_generates_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("plan.json");
    let o = dpra(&["plan", &model("satellite/baseline.plan.json"), "--out", &out.display().to_string()]);
    assert_eq!(code(&o), 0);
    let first = stdout(&o).lines().next().unwrap().to_string();
    let n: usize = first.split_whitespace().next().unwrap().parse().unwrap();
    assert!(n >= 2, "{first}");
    assert!(out.exists());
    let o = dpra(&["plan", &write(dir.path(), "broken.json", "{\"fsm\": 3}")]);
    assert_eq!(code(&o), 1);
}

#[test]
fn plan_whose_goal_is_the_initial_state_has_one_empty_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(models().join("pump_backup.plan.json"))
        .unwrap()
        .replace("\"Fail\": \"MELT\"", "\"Nominal\": \"OK\"");
    let o = dpra(&["plan", &write(dir.path(), "p.json", &text)]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.starts_with("1 scenarios"), "{out}");
    assert!(out.contains("[] -> OK"), "{out}");
}

#[test]
fn systematic_truncation_lands_in_the_csv_and_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(code(&explore(&["--mode", "systematic", "--plim", "0.005"], &out)), 0);
    let csv = std::fs::read_to_string(out.join("end_states.csv")).unwrap();
    let ok: Vec<&str> = csv.lines().find(|l| l.starts_with("OK,")).unwrap().split(',').collect();
    assert!((ok[1].parse::<f64>().unwrap() - 0.999).abs() < 1e-12);
    let ledger: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("ledger.json")).unwrap()).unwrap();
    assert!((ledger["truncated_mass"].as_f64().unwrap() - 0.001).abs() < 1e-12);
    assert!(out.join("traces/story_00000.csv").exists());
    assert!(out.join("manifest.json").exists());
}

fn data_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let plan = model("pump_backup.plan.json");
    let args = ["--mode", "guided", "--plan", &plan, "--n", "300", "--seed", "9"];
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&explore(&args, &a)), 0);
    assert_eq!(code(&explore(&args, &b)), 0);
    assert_eq!(data_files(&a), data_files(&b));
    let four = dir.path().join("four");
    let mut par = args.to_vec();
    par.extend(["--workers", "4"]);
    assert_eq!(code(&explore(&par, &four)), 0);
    assert_eq!(data_files(&a), data_files(&four));
}

#[test]
fn manifest_rerun_detects_a_changed_model() {
    let dir = tempfile::tempdir().unwrap();
    let src = std::fs::read_to_string(models().join("pump_backup.model.json")).unwrap();
    let m = write(dir.path(), "m.json", &src);
    let run = dir.path().join("run");
    let o = dpra(&["explore", &m, "--out-dir", &run.display().to_string()]);
    assert_eq!(code(&o), 0);
    write(dir.path(), "m.json", &src.replace("0.99", "0.98"));
    let manifest = run.join("manifest.json").display().to_string();
    let again = dir.path().join("again").display().to_string();
    assert_eq!(code(&dpra(&["explore", "--manifest", &manifest, "--out-dir", &again])), 1);
}

#[test]
fn bad_flag_combinations_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let plan = model("pump_backup.plan.json");
    let cases: Vec<Vec<&str>> = vec![
        vec!["--mode", "guided"],
        vec!["--mode", "targeted", "--plan", &plan],
        vec!["--target-event", "lost:primary_flow"],
        vec!["--mode", "targeted", "--plan", &plan, "--target-event", "lost:nothing"],
        vec!["--plim", "1.5"],
        vec!["--boost", "3"],
    ];
    for (i, c) in cases.iter().enumerate() {
        let out = dir.path().join(format!("r{i}"));
        assert_eq!(code(&explore(c, &out)), 2, "{c:?}");
        assert!(!out.exists(), "{c:?} wrote output");
    }
    let o = dpra(&["explore", "--out-dir", "x"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn targeted_run_reports_the_target() {
    let dir = tempfile::tempdir().unwrap();
    let plan = model("pump_backup.plan.json");
    let out = dir.path().join("t");
    let o = explore(
        &["--mode", "targeted", "--plan", &plan, "--target-event", "backup=FAILED", "--n", "200", "--seed", "3"],
        &out,
    );
    assert_eq!(code(&o), 0);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("result.json")).unwrap()).unwrap();
    assert_eq!(r["mode"], "targeted");
    assert!(r["target"]["total_matching"].as_u64().unwrap() > 0);
}

#[test]
fn report_exit_codes_follow_the_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let exact = dir.path().join("exact");
    assert_eq!(code(&explore(&[], &exact)), 0);
    let exact = exact.display().to_string();
    let loose = write(dir.path(), "loose.json", r#"{"fail": 0.01, "ok": "none"}"#);
    let tight = write(dir.path(), "tight.json", r#"{"fail": 0.0001, "ok": "none"}"#);
    let partial = write(dir.path(), "partial.json", r#"{"fail": 0.01}"#);
    let o = dpra(&["report", &exact, "--criteria", &loose]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("MELT"));
    assert_eq!(code(&dpra(&["report", &exact, "--criteria", &tight])), 3);
    assert_eq!(code(&dpra(&["report", &exact, "--criteria", &partial])), 2);
    assert_eq!(code(&dpra(&["report", &exact])), 0);

    let guided = dir.path().join("guided");
    let plan = model("pump_backup.plan.json");
    assert_eq!(code(&explore(&["--mode", "guided", "--plan", &plan, "--n", "2000", "--seed", "1"], &guided)), 0);
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(guided.join("result.json")).unwrap()).unwrap();
    let melt = r["end_states"].as_array().unwrap().iter().find(|e| e["name"] == "MELT").unwrap();
    let (lo, hi) = (melt["ci_low"].as_f64().unwrap(), melt["ci_high"].as_f64().unwrap());
    assert!(lo < hi);
    let straddle = write(dir.path(), "straddle.json", &format!(r#"{{"fail": {}, "ok": "none"}}"#, (lo + hi) / 2.0));
    assert_eq!(code(&dpra(&["report", &guided.display().to_string(), "--criteria", &straddle])), 4);

    let csv = dir.path().join("report.csv");
    assert_eq!(code(&dpra(&["report", &exact, "--csv", &csv.display().to_string()])), 0);
    assert!(std::fs::read_to_string(csv).unwrap().starts_with("kind,name,class"));
    assert_eq!(code(&dpra(&["report", &dir.path().display().to_string()])), 2);
}

#[test]
fn compare_prefers_the_alarm() {
    let o = dpra(&["compare", &model("satellite/compare.json")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert_eq!(out.lines().last().unwrap(), "preferred=option_alarm criterion=degraded");
    assert!(out.contains("[alarms / degradation]"));
}

#[test]
fn compare_ties_identical_models_and_needs_two() {
    let dir = tempfile::tempdir().unwrap();
    let m = model("pump_backup.model.json");
    let two = format!(
        r#"{{"criterion": {{"class": "fail"}}, "alternatives": [{{"name": "b", "model": "{m}"}}, {{"name": "a", "model": "{m}"}}]}}"#
    );
    let o = dpra(&["compare", &write(dir.path(), "two.json", &two)]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().last().unwrap(), "preferred=tie(a,b) criterion=fail");
    let one = format!(r#"{{"criterion": {{"class": "fail"}}, "alternatives": [{{"name": "a", "model": "{m}"}}]}}"#);
    assert_eq!(code(&dpra(&["compare", &write(dir.path(), "one.json", &one)])), 2);
    let broken = format!(
        r#"{{"criterion": {{"class": "fail"}}, "alternatives": [{{"name": "a", "model": "{m}"}}, {{"name": "b", "model": "missing.json"}}]}}"#
    );
    assert_eq!(code(&dpra(&["compare", &write(dir.path(), "broken.json", &broken)])), 2);
}
