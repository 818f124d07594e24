//! Run configuration read from TOML.
//!
//! ```toml
//! seed = 7
//! samples = 50
//! suites = ["metric", "connection"]
//!
//! [model]
//! kind = "rotating"   # flat | rotating | conformal | constant_curvature | perturbed
//! dim = 3
//! c = 1.0
//! g = 0.6
//!
//! [tolerance]
//! analytic = 1e-8
//! checks = { "connection/closed form vs difference oracle" = 1e-7 }
//!
//! [output]
//! path = "report.json"
//! format = "json"
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::background::{default_wave, BackgroundModel, CurvePath, ModelKind};
use crate::sampling::SamplingConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Verification suites, in report order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteName {
    Metric,
    Automorphism,
    Connection,
    Angle,
    Curvature,
    Transport,
    Indicatrix,
}

impl SuiteName {
    pub const ALL: [SuiteName; 7] = [
        SuiteName::Metric,
        SuiteName::Automorphism,
        SuiteName::Connection,
        SuiteName::Angle,
        SuiteName::Curvature,
        SuiteName::Transport,
        SuiteName::Indicatrix,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SuiteName::Metric => "metric",
            SuiteName::Automorphism => "automorphism",
            SuiteName::Connection => "connection",
            SuiteName::Angle => "angle",
            SuiteName::Curvature => "curvature",
            SuiteName::Transport => "transport",
            SuiteName::Indicatrix => "indicatrix",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown suite {s:?}")))
    }
}

impl fmt::Display for SuiteName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    #[serde(alias = "i")]
    Flat,
    #[serde(alias = "ii")]
    Rotating,
    #[serde(alias = "iii")]
    Conformal,
    #[serde(alias = "iv")]
    ConstantCurvature,
    Perturbed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelId,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_c")]
    pub c: f64,
    pub g: f64,
    /// Phase gradient of rotating 1-forms.
    #[serde(default)]
    pub wave: Option<Vec<f64>>,
    /// Amplitude of the conformal factor or of the metric perturbation.
    #[serde(default)]
    pub amp: Option<f64>,
    /// Sectional curvature of the round model.
    #[serde(default)]
    pub curvature: Option<f64>,
}

fn default_dim() -> usize {
    3
}

fn default_c() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn build(&self) -> Result<BackgroundModel, ConfigError> {
        let dim = self.dim;
        let wave = || self.wave.clone().unwrap_or_else(|| default_wave(dim));
        let unused = |what: &str| ConfigError::Invalid(format!("model knob {what:?} does not apply to {:?}", self.kind));
        let kind = match self.kind {
            ModelId::Flat | ModelId::ConstantCurvature if self.wave.is_some() => return Err(unused("wave")),
            ModelId::Flat | ModelId::Rotating | ModelId::ConstantCurvature if self.amp.is_some() => return Err(unused("amp")),
            ModelId::Flat | ModelId::Rotating | ModelId::Conformal | ModelId::Perturbed if self.curvature.is_some() => {
                return Err(unused("curvature"))
            }
            ModelId::Flat => ModelKind::Flat,
            ModelId::Rotating => ModelKind::Rotating { wave: wave() },
            ModelId::Conformal => ModelKind::Conformal { amp: self.amp.unwrap_or(0.2), wave: wave() },
            ModelId::ConstantCurvature => ModelKind::ConstantCurvature { curvature: self.curvature.unwrap_or(1.0) },
            ModelId::Perturbed => ModelKind::Perturbed { amp: self.amp.unwrap_or(0.08), wave: wave() },
        };
        BackgroundModel::new(dim, kind, self.c, self.g).map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Checks computed without finite differences.
    #[serde(default = "default_analytic")]
    pub analytic: f64,
    /// Checks that involve a finite-difference derivative.
    #[serde(default = "default_fd")]
    pub fd: f64,
    /// Axis values evaluated on rays inside the near-pole band.
    #[serde(default = "default_near_pole")]
    pub near_pole: f64,
    /// Per-check overrides keyed by `"suite/check name"`.
    #[serde(default)]
    pub checks: BTreeMap<String, f64>,
}

fn default_analytic() -> f64 {
    1e-8
}

fn default_fd() -> f64 {
    1e-6
}

fn default_near_pole() -> f64 {
    1e-3
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { analytic: default_analytic(), fd: default_fd(), near_pole: default_near_pole(), checks: BTreeMap::new() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(ConfigError::Invalid(format!("unknown output format {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: Format,
}

fn default_format() -> Format {
    Format::Json
}

/// Settings of the transport suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportConfig {
    /// Radius of the circular loops around sampled base points.
    #[serde(default = "default_loop_radius")]
    pub radius: f64,
    /// Number of loops (each on its own sample).
    #[serde(default = "default_loops")]
    pub loops: usize,
    /// Increasing step counts for the convergence-order study.
    #[serde(default = "default_order_steps")]
    pub order_steps: Vec<usize>,
    /// Step count at which absolute drifts are asserted.
    #[serde(default = "default_final_steps")]
    pub final_steps: usize,
    /// Smallest acceptable observed order.
    #[serde(default = "default_min_order")]
    pub min_order: f64,
    /// Vectors for the `transport` command; sampled when absent.
    #[serde(default)]
    pub vectors: Option<Vec<Vec<f64>>>,
}

fn default_loop_radius() -> f64 {
    0.5
}

fn default_loops() -> usize {
    2
}

fn default_order_steps() -> Vec<usize> {
    vec![32, 64, 128]
}

fn default_final_steps() -> usize {
    1024
}

fn default_min_order() -> f64 {
    3.5
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            radius: default_loop_radius(),
            loops: default_loops(),
            order_steps: default_order_steps(),
            final_steps: default_final_steps(),
            min_order: default_min_order(),
            vectors: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Suites to run; all of them when empty.
    #[serde(default)]
    pub suites: Vec<SuiteName>,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub tolerance: Tolerances,
    #[serde(default)]
    pub transport: TransportConfig,
    #[serde(default)]
    pub output: Option<OutputConfig>,
}

fn default_samples() -> usize {
    20
}

impl SuiteConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: SuiteConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    /// A configuration with default settings for the given model.
    pub fn for_model(model: ModelConfig, seed: u64, samples: usize) -> Self {
        Self {
            model,
            seed,
            samples,
            suites: Vec::new(),
            sampling: SamplingConfig::default(),
            tolerance: Tolerances::default(),
            transport: TransportConfig::default(),
            output: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let model = self.model.build()?;
        if self.samples < 1 {
            return Err(ConfigError::Invalid("samples must be at least 1".into()));
        }
        self.sampling.validate(model.dim).map_err(ConfigError::Invalid)?;
        let t = &self.tolerance;
        for (name, v) in [("analytic", t.analytic), ("fd", t.fd), ("near_pole", t.near_pole)].into_iter().chain(t.checks.iter().map(|(k, v)| (k.as_str(), *v))) {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("tolerance {name:?} must be positive, got {v}")));
            }
        }
        for key in t.checks.keys() {
            let suite = key.split_once('/').map(|(s, _)| s).unwrap_or("");
            SuiteName::parse(suite).map_err(|_| ConfigError::Invalid(format!("tolerance override {key:?} is not of the form \"suite/check\"")))?;
        }
        let tr = &self.transport;
        if tr.order_steps.len() < 2 || tr.order_steps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ConfigError::Invalid("transport order_steps needs two or more increasing counts".into()));
        }
        if tr.order_steps[0] < crate::transport::MIN_STEPS || tr.final_steps < crate::transport::MIN_STEPS {
            return Err(ConfigError::Invalid(format!("transport step counts must be at least {}", crate::transport::MIN_STEPS)));
        }
        if !(tr.radius > 0.0) || tr.loops < 1 {
            return Err(ConfigError::Invalid("transport needs a positive radius and at least one loop".into()));
        }
        if let Some(vs) = &tr.vectors {
            if vs.is_empty() || vs.iter().any(|v| v.len() != model.dim) {
                return Err(ConfigError::Invalid(format!("transport vectors must be non-empty with {} components", model.dim)));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<BackgroundModel, ConfigError> {
        self.model.build()
    }

    pub fn suites(&self) -> Vec<SuiteName> {
        let mut s = if self.suites.is_empty() { SuiteName::ALL.to_vec() } else { self.suites.clone() };
        s.sort();
        s.dedup();
        s
    }
}

fn numbers(s: &str) -> Result<Vec<f64>, ConfigError> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| ConfigError::Invalid(format!("bad number {t:?} in curve spec"))))
        .collect()
}

/// Parses `circle:R`, `circle:R:P,Q` (plane of coordinates `P`, `Q`) or
/// `line:A1,..,AN:B1,..,BN`. Circles are centred at `center`.
pub fn parse_curve(spec: &str, center: &[f64]) -> Result<CurvePath, ConfigError> {
    let dim = center.len();
    let parts: Vec<&str> = spec.split(':').collect();
    let curve = match parts.as_slice() {
        ["circle", r] | ["circle", r, _] => {
            let radius = r.trim().parse::<f64>().map_err(|_| ConfigError::Invalid(format!("bad radius {r:?}")))?;
            let plane = match parts.get(2) {
                Some(p) => {
                    let ij: Vec<usize> = p
                        .split(',')
                        .map(|t| t.trim().parse::<usize>().map_err(|_| ConfigError::Invalid(format!("bad plane {p:?}"))))
                        .collect::<Result<_, _>>()?;
                    match ij.as_slice() {
                        [i, j] => (*i, *j),
                        _ => return Err(ConfigError::Invalid(format!("plane needs two indices, got {p:?}"))),
                    }
                }
                None => (0, 1),
            };
            CurvePath::Circle { center: center.to_vec(), radius, plane }
        }
        ["line", a, b] => CurvePath::Line { from: numbers(a)?, to: numbers(b)? },
        _ => return Err(ConfigError::Invalid(format!("unrecognised curve spec {spec:?}"))),
    };
    curve.validate(dim).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "seed = 7\nsamples = 5\n[model]\nkind = \"ii\"\ng = 0.6\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = SuiteConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.suites(), SuiteName::ALL.to_vec());
        let m = cfg.model().unwrap();
        assert_eq!(m.dim, 3);
        assert_eq!(m.kind, ModelKind::Rotating { wave: default_wave(3) });
        assert_eq!(cfg.tolerance.analytic, 1e-8);
    }

    #[test]
    fn charge_outside_range_is_rejected() {
        let err = SuiteConfig::from_toml(&MINIMAL.replace("0.6", "2.5")).unwrap_err();
        assert!(err.to_string().contains("g out of (-2,2)"), "{err}");
    }

    #[test]
    fn invariant_gates() {
        for (from, to) in [("samples = 5", "samples = 0"), ("g = 0.6", "g = 0.6\nc = 1.5"), ("g = 0.6", "g = 0.6\ndim = 2")] {
            assert!(matches!(SuiteConfig::from_toml(&MINIMAL.replace(from, to)), Err(ConfigError::Invalid(_))), "{to}");
        }
        assert!(matches!(SuiteConfig::from_toml("seed = 1\n[model]\nkind = \"flat\"\ng = 0.1\nbogus = 1\n"), Err(ConfigError::Parse(_))));
        let amp = MINIMAL.replace("g = 0.6", "g = 0.6\namp = 0.1");
        assert!(SuiteConfig::from_toml(&amp).is_err());
        let bad_key = format!("{MINIMAL}[tolerance]\nchecks = {{ \"nothing\" = 1e-3 }}\n");
        assert!(SuiteConfig::from_toml(&bad_key).is_err());
    }

    #[test]
    fn suites_are_ordered_and_unique() {
        let cfg = SuiteConfig::from_toml(&format!("suites = [\"indicatrix\", \"metric\", \"metric\"]\n{MINIMAL}")).unwrap();
        assert_eq!(cfg.suites(), vec![SuiteName::Metric, SuiteName::Indicatrix]);
    }

    #[test]
    fn curve_specs() {
        let c = parse_curve("circle:0.5", &[0.0; 3]).unwrap();
        assert!(c.closed());
        assert_eq!(parse_curve("circle:0.5:1,2", &[0.0; 3]).unwrap(), CurvePath::Circle { center: vec![0.0; 3], radius: 0.5, plane: (1, 2) });
        let l = parse_curve("line:0,0,0:1,0.5,0", &[0.0; 3]).unwrap();
        assert!(!l.closed());
        assert!(parse_curve("circle:0.5:0,0", &[0.0; 3]).is_err());
        assert!(parse_curve("line:0,0:1,1", &[0.0; 3]).is_err());
        assert!(parse_curve("spiral:1", &[0.0; 3]).is_err());
    }
}
