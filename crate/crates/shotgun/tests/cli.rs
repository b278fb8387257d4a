use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use shotgun::ResultDocument;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shotgun"))
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn running() -> Value {
    serde_json::from_str(&std::fs::read_to_string(config_path("running_example.json")).unwrap()).unwrap()
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_accepts_bundled_configs() {
    for name in ["running_example.json", "delivery_two_agent.json", "delivery_eight_agent.json"] {
        let o = run(&["validate", "--config", s(&config_path(name))]);
        assert!(o.status.success(), "{name}: {}", stderr(&o));
    }
}

#[test]
fn validate_reports_substochastic_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = running();
    let rows = v["agents"][0]["mdp"]["transitions"].as_array_mut().unwrap();
    // drop the 0.1 branch of action r at state 1
    let i = rows.iter().position(|r| r[0] == "1" && r[1] == "r" && r[3].as_f64() == Some(0.1)).unwrap();
    rows.remove(i);
    let p = write_config(dir.path(), "bad.json", &v);
    let o = run(&["validate", "--config", s(&p)]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("RowNotStochastic"), "{err}");
}

#[test]
fn validate_reports_missing_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = running();
    v.as_object_mut().unwrap().remove("nu_A");
    let p = write_config(dir.path(), "bad.json", &v);
    let o = run(&["validate", "--config", s(&p)]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("MissingField") && err.contains("nu_A"), "{err}");
}

#[test]
fn zero_threshold_needs_no_deviation() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = running();
    v["nu_A"] = 0.0.into();
    let p = write_config(dir.path(), "zero.json", &v);
    let out = dir.path().join("r.json");
    let o = run(&["worst-case", "--config", s(&p), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc = ResultDocument::load(&out).unwrap();
    assert_eq!(doc.team.unwrap().kl_bound, 0.0);
    assert!(doc.agents.iter().all(|a| a.kl == 0.0));
}

#[test]
fn unreachable_threshold_exits_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = running();
    // each agent reaches at most 0.9, so the pair tops out at 0.99
    v["nu_A"] = 0.995.into();
    let p = write_config(dir.path(), "hard.json", &v);
    let o = run(&["worst-case", "--config", s(&p), "--out", s(&dir.path().join("r.json"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!dir.path().join("r.json").exists());
}

#[test]
fn decoy_run_writes_table_and_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("dec.json");
    let o = run(&["decoys", "--config", s(&config_path("running_example.json")), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc = ResultDocument::load(&out).unwrap();
    assert_eq!(doc.decoys.as_ref().unwrap().b_table.len(), 2);
    assert!(doc.verify().unwrap() <= 1e-6);
    let csv = std::fs::read_to_string(dir.path().join("dec_b_k.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("k,B_k,K_k,Fail_k"));
    assert_eq!(lines.count(), 2);
}

#[test]
fn worst_case_document_verifies_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_path("running_example.json");
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for (out, threads) in [(&a, "1"), (&b, "4")] {
        let o = run(&["--threads", threads, "worst-case", "--config", s(&cfg), "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let doc = ResultDocument::load(&a).unwrap();
    assert!(doc.verify().unwrap() <= 1e-6);
}

#[test]
fn tampered_document_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a.json");
    let o = run(&["worst-case", "--config", s(&config_path("running_example.json")), "--out", s(&out)]);
    assert!(o.status.success());
    let mut doc = ResultDocument::load(&out).unwrap();
    doc.agents[0].kl += 1e-3;
    assert!(doc.verify().is_err());
    let mut doc = ResultDocument::load(&out).unwrap();
    doc.config.nu_a = 0.4;
    assert!(doc.verify().is_err());
}

#[test]
fn simulate_zero_trials_and_missing_seed() {
    let dir = tempfile::tempdir().unwrap();
    let res = dir.path().join("a.json");
    let o = run(&["worst-case", "--config", s(&config_path("running_example.json")), "--out", s(&res)]);
    assert!(o.status.success());
    let sim = dir.path().join("sim");
    let o = run(&["simulate", "--result", s(&res), "--trials", "0", "--out", s(&sim)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(sim.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["episodes"], 0);
    assert!(sim.join("agents.csv").exists() && sim.join("belief_histogram.csv").exists());

    let mut v = running();
    v.as_object_mut().unwrap().remove("seed");
    let p = write_config(dir.path(), "noseed.json", &v);
    let o = run(&["simulate", "--result", s(&res), "--config", s(&p), "--trials", "10", "--out", s(&sim)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("SeedMissing"));
}

#[test]
fn simulation_summary_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let res = dir.path().join("a.json");
    assert!(run(&["worst-case", "--config", s(&config_path("running_example.json")), "--out", s(&res)]).status.success());
    let mut outs = Vec::new();
    for (name, threads) in [("x", "1"), ("y", "3")] {
        let d = dir.path().join(name);
        let o = run(&["--threads", threads, "simulate", "--result", s(&res), "--trials", "3000", "--out", s(&d)]);
        assert!(o.status.success(), "{}", stderr(&o));
        outs.push(std::fs::read(d.join("summary.json")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn plot_data_for_delivery_run() {
    let dir = tempfile::tempdir().unwrap();
    let res = dir.path().join("d.json");
    let o = run(&["worst-case", "--config", s(&config_path("delivery_two_agent.json")), "--out", s(&res)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let plots = dir.path().join("plots");
    assert!(run(&["emit-plot-data", "--result", s(&res), "--out", s(&plots)]).status.success());
    let heat = std::fs::read_to_string(plots.join("heat_agent1.csv")).unwrap();
    assert!(heat.starts_with("node,flight_occupancy,landed_flow"));
    // one row per graph node
    assert_eq!(heat.lines().count(), 1 + 11);
}

#[test]
fn refpol_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ref.json");
    let o = run(&["refpol", "--config", s(&config_path("running_example.json")), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc = ResultDocument::load(&out).unwrap();
    assert!(doc.verify().unwrap() <= 1e-6);
    let rep = doc.refpol.unwrap();
    let accepted: Vec<f64> = rep.trace.iter().filter(|t| t.accepted).filter_map(|t| t.objective).collect();
    assert!(accepted.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    let trace = std::fs::read_to_string(dir.path().join("ref_trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,objective,accepted,step"));
}
