use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn guided(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_guided"))
        .args(args)
        .env("GUIDED_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = guided(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: TempDir,
    model: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let model = dir.path().join("model.json");
        ok(&["fixture", "-o", s(&model)]);
        Self { dir, model }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn model_json(&self) -> Value {
        serde_json::from_str(&std::fs::read_to_string(&self.model).unwrap()).unwrap()
    }

    fn write(&self, name: &str, v: &Value) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
        p
    }

    fn policy(&self) -> PathBuf {
        let p = self.path("policy.json");
        ok(&["optimize", s(&self.model), "--policy-out", s(&p)]);
        p
    }
}

#[test]
fn optimize_reports_the_closed_form_last_threshold() {
    let ws = Workspace::new();
    let v: Value = serde_json::from_str(&ok(&["optimize", s(&ws.model)])).unwrap();
    assert_eq!(v["kind"], "cascade");
    assert_eq!(v["meta"]["tool_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(v["meta"]["config_hash"].as_str().unwrap().len(), 64);
    let t = v["summary"]["thresholds"].as_array().unwrap();
    assert_eq!(t.last().unwrap().as_f64().unwrap(), 0.25);
}

#[test]
fn zero_price_thresholds_sit_on_the_lower_bounds() {
    let ws = Workspace::new();
    let v: Value = serde_json::from_str(&ok(&["optimize", s(&ws.model), "--lambda", "0"])).unwrap();
    let sum = &v["summary"];
    let t = sum["thresholds"].as_array().unwrap();
    let lo = sum["bounds"].as_array().unwrap();
    for s in 0..t.len() - 1 {
        assert_eq!(t[s], lo[s]["lo"], "stage {s}");
    }
}

#[test]
fn a_fixed_seed_simulation_is_byte_identical() {
    let ws = Workspace::new();
    let policy = ws.policy();
    let run = |threads: &str, name: &str| {
        let out = ws.path(name);
        ok(&[
            "simulate",
            s(&ws.model),
            s(&policy),
            "--n-frames",
            "200000",
            "--seed",
            "11",
            "--threads",
            threads,
            "-o",
            s(&out),
        ]);
        std::fs::read(out).unwrap()
    };
    let a = run("1", "a.json");
    assert_eq!(a, run("1", "b.json"));
    assert_eq!(a, run("3", "c.json"));
}

#[test]
fn adaptive_simulation_reports_its_thresholds() {
    let ws = Workspace::new();
    let policy = ws.policy();
    let out = ok(&[
        "simulate",
        s(&ws.model),
        s(&policy),
        "--mode",
        "adaptive",
        "--n-frames",
        "20000",
        "--burn-in",
        "1000",
    ]);
    let v: Value = serde_json::from_str(&out).unwrap();
    let a = &v["report"]["adaptive"];
    assert!(a["final_eta"].is_array());
    assert!(a["tracking_error"].is_array());
}

#[test]
fn a_single_frame_simulation_succeeds() {
    let ws = Workspace::new();
    let policy = ws.policy();
    let v: Value = serde_json::from_str(&ok(&["simulate", s(&ws.model), s(&policy), "--n-frames", "1"])).unwrap();
    assert_eq!(v["report"]["n_frames"], 1);
}

#[test]
fn a_malformed_pmf_is_a_schema_error_naming_the_stage() {
    let ws = Workspace::new();
    let mut v = ws.model_json();
    for x in v["stages"][1]["p0"].as_array_mut().unwrap() {
        *x = Value::from(x.as_f64().unwrap() * 0.5);
    }
    let bad = ws.write("bad.json", &v);
    let out = guided(&["optimize", s(&bad)]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage 2"), "{err}");
}

#[test]
fn an_unreachable_budget_exits_with_the_achievable_range() {
    let ws = Workspace::new();
    let out = guided(&["optimize", s(&ws.model), "--budget", "0.1"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("0.1"));
}

#[test]
fn a_mismatched_policy_is_rejected() {
    let ws = Workspace::new();
    let policy = ws.policy();
    let mut v = ws.model_json();
    v["miss_cost"] = Value::from(5.0);
    let other = ws.write("other.json", &v);
    let out = guided(&["simulate", s(&other), s(&policy), "--n-frames", "10"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn compare_rows_follow_the_requested_sweep() {
    let ws = Workspace::new();
    let csv = ok(&[
        "compare",
        s(&ws.model),
        "--sweep-pi0",
        "0.05:0.15:5",
        "--n-frames",
        "20000",
    ]);
    let mut lines = csv.lines();
    let meta = lines.next().unwrap();
    assert!(meta.starts_with("# tool_version="), "{meta}");
    assert!(meta.contains("config_hash="));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(
        &header[..12],
        &[
            "pi0",
            "gp_risk",
            "dc_ideal_risk",
            "dc_real_risk",
            "gp_energy",
            "dc_energy",
            "gp_fa",
            "dc_fa",
            "gp_miss",
            "dc_miss",
            "dominance_eq13",
            "dominance_eq14"
        ]
    );
    let pi: Vec<f64> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    let want: Vec<f64> = (0..5)
        .map(|k| 0.05 * (1.0 - k as f64 / 4.0) + 0.15 * (k as f64 / 4.0))
        .collect();
    assert_eq!(pi, want);
}

#[test]
fn robustify_without_uncertainty_keeps_the_model() {
    let ws = Workspace::new();
    let mut v = ws.model_json();
    for st in v["stages"].as_array_mut().unwrap() {
        st["uncertainty"] = serde_json::json!({ "eps0": 0.0, "eps1": 0.0, "nu0": 0.0, "nu1": 0.0 });
    }
    let plain = ws.write("plain.json", &v);
    let out: Value = serde_json::from_str(&ok(&["robustify", s(&plain)])).unwrap();
    for (a, b) in out["stages"]
        .as_array()
        .unwrap()
        .iter()
        .zip(v["stages"].as_array().unwrap())
    {
        assert_eq!(a["p0"], b["p0"]);
        assert_eq!(a["p1"], b["p1"]);
    }
    assert!(out["bands"].is_array());
}

#[test]
fn robustify_records_small_residuals() {
    let ws = Workspace::new();
    let out: Value = serde_json::from_str(&ok(&["robustify", s(&ws.model)])).unwrap();
    let bands = out["bands"].as_array().unwrap();
    assert!(!bands.is_empty());
    for b in bands {
        assert!(b["residual_null"].as_f64().unwrap() < 1e-8, "{b}");
        assert!(b["residual_target"].as_f64().unwrap() < 1e-8, "{b}");
    }
}

#[test]
fn check_optimality_holds_on_the_fixture() {
    let ws = Workspace::new();
    let v: Value = serde_json::from_str(&ok(&["check-optimality", s(&ws.model)])).unwrap();
    let holds = v["optimality"]["holds"].as_array().unwrap();
    assert_eq!(holds.len(), 2);
    assert!(holds.iter().all(|h| h == true), "{v}");
}

#[test]
fn a_missing_file_is_an_io_error() {
    let out = guided(&["optimize", "/nonexistent/model.json"]);
    assert_eq!(out.status.code(), Some(1));
}
