use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn finsleroid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_finsleroid")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const ROTATING: &str = "seed = 7\nsamples = 8\n\n[model]\nkind = \"ii\"\ng = 0.6\n\n[transport]\nloops = 1\n";

#[test]
fn check_passes_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ii.toml", ROTATING);
    let out = dir.path().join("report.json");
    let o = finsleroid(&["check", "--config", &cfg, "--suite", "connection", "--suite", "metric", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let rows = json["rows"].as_array().unwrap();
    assert_eq!(rows[0]["suite"], "metric");
    assert_eq!(rows.last().unwrap()["suite"], "connection");
    assert!(String::from_utf8(o.stdout).unwrap().ends_with("0 failed\n"));
}

#[test]
fn identical_runs_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ii.toml", ROTATING);
    let mut bytes = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let out = dir.path().join(name);
        let o = finsleroid(&["check", "--config", &cfg, "--out", out.to_str().unwrap(), "--format", "csv"]);
        assert_eq!(o.status.code(), Some(0));
        bytes.push(fs::read(out).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn failing_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // K differs from its axis value by about q~^2 at the near-axis offset.
    let text = format!("{ROTATING}\n[tolerance.checks]\n\"metric/K near the axis\" = 1e-12\n");
    let cfg = write(dir.path(), "strict.toml", &text);
    let o = finsleroid(&["check", "--config", &cfg, "--suite", "metric"]);
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(o.status.code(), Some(1), "{stdout}");
    assert!(stdout.contains("FAIL  metric/K near the axis"));
    assert!(stdout.ends_with("1 failed\n"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "[model]\nkind = \"iii\"\ng = 2.5\n");
    let o = finsleroid(&["check", "--config", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8(o.stderr).unwrap().contains("g out of (-2,2)"));
    assert_eq!(finsleroid(&["check", "--config", "/nonexistent/x.toml"]).status.code(), Some(2));
    let cfg = write(dir.path(), "ii.toml", ROTATING);
    assert_eq!(finsleroid(&["check", "--config", &cfg, "--suite", "spray"]).status.code(), Some(2));
    assert_eq!(finsleroid(&["transport", "--config", &cfg, "--curve", "spiral:1", "--steps", "64"]).status.code(), Some(2));
    assert_eq!(finsleroid(&["transport", "--config", &cfg, "--curve", "circle:0.5", "--steps", "64,32"]).status.code(), Some(2));
}

#[test]
fn transport_loop_reports_orders_and_holonomy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ii.toml", ROTATING);
    let csv = dir.path().join("t.csv");
    let o = finsleroid(&["transport", "--config", &cfg, "--curve", "circle:0.5", "--steps", "128,256,512", "--out", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("observed order"));
    assert!(text.contains("holonomy"));
    let orders: Vec<f64> = text
        .lines()
        .filter(|l| l.contains("->"))
        .flat_map(|l| l.split_whitespace().skip(3).filter_map(|v| v.parse::<f64>().ok()).collect::<Vec<_>>())
        .collect();
    assert!(!orders.is_empty() && orders.iter().all(|o| (o - 4.0).abs() < 0.3), "{orders:?}");
    assert_eq!(fs::read_to_string(csv).unwrap().lines().count(), 514);
}

#[test]
fn open_curve_on_flat_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "i.toml", "[model]\nkind = \"i\"\ng = 0.9\n");
    let o = finsleroid(&["transport", "--config", &cfg, "--curve", "line:0,0,0:1,0.5,0", "--steps", "64"]);
    assert_eq!(o.status.code(), Some(0));
    let summary = String::from_utf8(o.stderr).unwrap();
    assert!(!summary.contains("holonomy"));
    assert!(summary.contains("0.000e0"));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert_eq!(csv.lines().count(), 66);
    assert!(csv.starts_with("s,x0,x1,x2,"));
}
