//! Residual reports: one row per check, JSON and CSV renderings, and a
//! plain-text summary.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::background::BackgroundModel;
use crate::sampling::Sample;

/// Tolerance class of a check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Grade {
    /// No finite differences involved.
    Analytic,
    /// Involves a finite-difference derivative.
    Fd,
    /// Axis values inside the near-pole band.
    NearPole,
    /// Fixed budget for this check.
    Budget(f64),
    /// Reported, never asserted.
    Measured,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub suite: String,
    pub name: String,
    /// What the check compares, as a formula.
    pub anchor: String,
    pub grade: Grade,
    pub samples: usize,
    pub max_residual: f64,
    /// `None` for measured rows.
    pub tolerance: Option<f64>,
    pub pass: bool,
    pub worst_sample: Option<Sample>,
}

impl CheckRow {
    pub fn key(&self) -> String {
        format!("{}/{}", self.suite, self.name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualReport {
    pub model: BackgroundModel,
    pub seed: u64,
    pub samples: usize,
    pub pass: bool,
    pub rows: Vec<CheckRow>,
}

impl ResidualReport {
    pub fn new(model: BackgroundModel, seed: u64, samples: usize, rows: Vec<CheckRow>) -> Self {
        let pass = rows.iter().all(|r| r.pass);
        Self { model, seed, samples, pass, rows }
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRow> {
        self.rows.iter().filter(|r| !r.pass)
    }

    pub fn row(&self, suite: &str, name: &str) -> Option<&CheckRow> {
        self.rows.iter().find(|r| r.suite == suite && r.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serialisable") + "\n"
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["suite", "check", "anchor", "grade", "samples", "max_residual", "tolerance", "pass", "worst_x", "worst_y"])?;
        for r in &self.rows {
            let (wx, wy) = match &r.worst_sample {
                Some(s) => (join(&s.x), s.y.iter().map(|v| join(v)).collect::<Vec<_>>().join(";")),
                None => (String::new(), String::new()),
            };
            w.write_record([
                r.suite.clone(),
                r.name.clone(),
                r.anchor.clone(),
                grade_label(r.grade),
                r.samples.to_string(),
                format!("{:e}", r.max_residual),
                r.tolerance.map(|t| format!("{t:e}")).unwrap_or_default(),
                r.pass.to_string(),
                wx,
                wy,
            ])?;
        }
        w.flush()
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Aligned text table with a final verdict line.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "model {} (N = {}, c = {}, g = {}), seed {}, {} samples",
            self.model.kind.label(),
            self.model.dim,
            self.model.c,
            self.model.g,
            self.seed,
            self.samples
        );
        let width = self.rows.iter().map(|r| r.key().len()).max().unwrap_or(0);
        for r in &self.rows {
            let status = match (r.tolerance, r.pass) {
                (None, _) => "INFO",
                (Some(_), true) => "ok",
                (Some(_), false) => "FAIL",
            };
            let tol = r.tolerance.map(|t| format!("{t:.0e}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(s, "{status:>4}  {:<width$}  {:>10.3e}  tol {tol:>6}", r.key(), r.max_residual);
        }
        let failed = self.failures().count();
        let _ = writeln!(s, "{} checks, {failed} failed", self.rows.len());
        s
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" ")
}

fn grade_label(g: Grade) -> String {
    match g {
        Grade::Analytic => "analytic".into(),
        Grade::Fd => "fd".into(),
        Grade::NearPole => "near_pole".into(),
        Grade::Budget(b) => format!("budget {b:e}"),
        Grade::Measured => "measured".into(),
    }
}
