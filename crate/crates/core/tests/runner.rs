//! Configuration files through to rendered reports.

use finsleroid::config::{parse_curve, ConfigError, SuiteConfig};
use finsleroid::suites;

const CONFIG: &str = r#"
seed = 11
samples = 6
suites = ["metric", "connection", "transport"]

[model]
kind = "iii"
g = 0.6

[transport]
loops = 1
order_steps = [32, 64]
final_steps = 256

[tolerance.checks]
"metric/determinant of g" = 1e-10
"#;

#[test]
fn toml_to_report() {
    let cfg = SuiteConfig::from_toml(CONFIG).unwrap();
    let report = suites::run(&cfg).unwrap();
    assert!(report.pass, "{}", report.summary());
    assert_eq!(report.seed, 11);
    let suites: Vec<&str> = report.rows.iter().map(|r| r.suite.as_str()).collect();
    assert_eq!(suites.first(), Some(&"metric"));
    assert_eq!(suites.last(), Some(&"transport"));
    assert_eq!(report.row("metric", "determinant of g").unwrap().tolerance, Some(1e-10));
    for r in &report.rows {
        assert!(r.samples > 0, "{}", r.key());
        assert!(r.max_residual.is_finite(), "{}", r.key());
    }
}

#[test]
fn renderings_agree() {
    let cfg = SuiteConfig::from_toml(CONFIG).unwrap();
    let report = suites::run(&cfg).unwrap();
    let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    let rows = json["rows"].as_array().unwrap();
    assert_eq!(rows.len(), report.rows.len());
    let text = report.to_csv();
    let mut csv = csv::Reader::from_reader(text.as_bytes());
    let records: Vec<csv::StringRecord> = csv.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), report.rows.len());
    for ((rec, row), orig) in records.iter().zip(rows).zip(&report.rows) {
        assert_eq!(&rec[0], row["suite"].as_str().unwrap());
        assert_eq!(&rec[1], row["name"].as_str().unwrap());
        // CSV keeps residuals exactly.
        assert_eq!(rec[5].parse::<f64>().unwrap(), orig.max_residual);
    }
    let worst = &rows[0]["worst_sample"];
    assert_eq!(worst["x"].as_array().unwrap().len(), 3);
}

#[test]
fn invalid_configs_are_rejected() {
    let cases = [
        ("[model]\nkind = \"iii\"\ng = 2.5\n", "g out of"),
        ("[model]\nkind = \"i\"\ng = 0.5\namp = 0.1\n", "amp"),
        ("samples = 0\n[model]\nkind = \"i\"\ng = 0.5\n", "samples"),
        ("suites = [\"spray\"]\n[model]\nkind = \"i\"\ng = 0.5\n", "spray"),
        ("[model]\nkind = \"i\"\ng = 0.5\nextra = 1\n", "extra"),
    ];
    for (text, needle) in cases {
        let err = SuiteConfig::from_toml(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(needle), "{text:?}: {msg}");
        assert!(matches!(err, ConfigError::Parse(_) | ConfigError::Invalid(_)));
    }
}

#[test]
fn curve_specs() {
    let c = parse_curve("circle:0.3", &[0.0, 0.1, 0.2]).unwrap();
    assert!(c.closed());
    assert!((c.enclosed_area() - std::f64::consts::PI * 0.09).abs() < 1e-15);
    let l = parse_curve("line:0,0,0:1,0.5,0", &[0.0; 3]).unwrap();
    assert!(!l.closed());
    assert!(parse_curve("spiral:1", &[0.0; 3]).is_err());
    assert!(parse_curve("line:0,0:1,0,0", &[0.0; 3]).is_err());
}

#[test]
fn flat_model_all_suites() {
    let cfg = SuiteConfig::from_toml("seed = 7\nsamples = 50\n[model]\nkind = \"i\"\ng = 0.8\n").unwrap();
    let report = suites::run(&cfg).unwrap();
    assert!(report.pass, "{}", report.summary());
    // Constant fields in flat coordinates: the coefficients vanish.
    assert_eq!(report.row("connection", "Riemannian limit: N = -Gamma y").unwrap().max_residual, 0.0);
    assert_eq!(report.row("transport", "K drift at final steps").unwrap().max_residual, 0.0);
}

#[test]
fn rotating_connection_suite() {
    let cfg = SuiteConfig::from_toml("samples = 100\nsuites = [\"connection\"]\n[model]\nkind = \"ii\"\ng = 0.6\n").unwrap();
    let report = suites::run(&cfg).unwrap();
    assert!(report.pass, "{}", report.summary());
    assert!(report.rows.iter().all(|r| r.max_residual < 1e-6));
}
