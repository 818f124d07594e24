//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Models (i)-(iv) at N = 3, charges 0, 0.6 and 1.2, unit norm. Every
//! criterion compares report rows (or transport studies) against its own
//! threshold; a criterion with no measured values fails.

use finsleroid::background::CurvePath;
use finsleroid::config::{ModelConfig, ModelId, SuiteConfig, SuiteName};
use finsleroid::report::ResidualReport;
use finsleroid::sampling::Sampler;
use finsleroid::suites;
use finsleroid::transport::{convergence_study, transport, ORDER_FLOOR};

const MODELS: [ModelId; 4] = [ModelId::Flat, ModelId::Rotating, ModelId::Conformal, ModelId::ConstantCurvature];
const CHARGES: [f64; 3] = [0.0, 0.6, 1.2];
const SEED: u64 = 20_240_611;

struct Value {
    what: String,
    residual: f64,
    tol: f64,
}

#[derive(Default)]
struct Criterion {
    values: Vec<Value>,
    missing: Vec<String>,
}

impl Criterion {
    fn push(&mut self, what: impl Into<String>, residual: f64, tol: f64) {
        self.values.push(Value { what: what.into(), residual, tol });
    }

    /// Takes a report row; a row that is absent counts as a failure.
    fn row(&mut self, tag: &str, report: &ResidualReport, suite: &str, name: &str, tol: f64) {
        match report.row(suite, name) {
            Some(r) => self.push(format!("{tag} {suite}/{name}"), r.max_residual, tol),
            None => self.missing.push(format!("{tag} {suite}/{name}")),
        }
    }

    fn pass(&self) -> bool {
        !self.values.is_empty() && self.missing.is_empty() && self.values.iter().all(|v| v.residual <= v.tol)
    }

    fn line(&self, number: usize, title: &str) -> String {
        let verdict = if self.pass() { "PASS" } else { "FAIL" };
        let worst = self
            .values
            .iter()
            .max_by(|a, b| (a.residual / a.tol).total_cmp(&(b.residual / b.tol)))
            .map(|v| format!("worst {} = {:.2e} (tol {:.0e})", v.what, v.residual, v.tol))
            .unwrap_or_else(|| "nothing measured".into());
        let missing = if self.missing.is_empty() { String::new() } else { format!(", missing {}", self.missing.join("; ")) };
        format!("{verdict} criterion {number:>2}: {title}: {} values, {worst}{missing}", self.values.len())
    }
}

fn config(kind: ModelId, g: f64, samples: usize, suites: &[SuiteName]) -> SuiteConfig {
    let mut cfg = SuiteConfig::for_model(ModelConfig { kind, dim: 3, c: 1.0, g, wave: None, amp: None, curvature: None }, SEED, samples);
    cfg.suites = suites.to_vec();
    cfg
}

fn tag(kind: ModelId, g: f64) -> String {
    format!("[{kind:?} g={g}]")
}

const METRICITY: &[&str] = &[
    "metric function is parallel",
    "covariant tangent vector is parallel",
    "metric tensor is parallel",
    "image vector is parallel",
    "map Jacobian is parallel",
    "inverse Jacobian is parallel",
    "deformation tensor is parallel",
    "derivative coefficients contracted with y",
    "metric function derivative through the map",
    "first fiber derivative through the map",
    "closed form vs inverse Jacobian",
];

const CURVATURE: &[(&str, f64)] = &[
    ("M: definition vs transitive form", 1e-6),
    ("E: definition vs fiber derivative of M", 1e-6),
    ("E: definition vs transitive form", 1e-6),
    ("rho: definition vs closed form", 1e-6),
    ("rho: definition vs T-form", 1e-6),
    ("M lowered: transitive form", 1e-6),
    ("contravariant rho: closed form vs raising", 1e-6),
    ("D M: definition vs transitive form", 1e-6),
    ("D rho: closed form vs T-form", 1e-6),
    ("Finsleroid closed form of M", 1e-6),
    ("M skew in base indices", 1e-8),
    ("rho skew in fiber pair", 1e-8),
    ("rho skew in base pair", 1e-8),
    ("covector annihilates M", 1e-7),
    ("vector contracted with E gives -M", 1e-7),
    ("covector contracted with E gives lowered M", 1e-7),
    ("squared norm of rho", 1e-6),
    ("squared norm of M", 1e-6),
    ("Finsleroid squared norm of M", 1e-6),
    ("cyclic identity for M", 1e-7),
    ("cyclic identity for rho", 1e-7),
    ("T is parallel", 1e-7),
];

const LIMITS: &[(&str, &str)] = &[
    ("metric", "Riemannian limit: K = S and g = a"),
    ("automorphism", "Riemannian limit: t = y"),
    ("connection", "Riemannian limit: N = -Gamma y"),
    ("angle", "Riemannian limit: alpha = background angle"),
    ("curvature", "Riemannian limit: rho = E = Riemann"),
];

fn main() {
    let started = std::time::Instant::now();
    let mut c: Vec<Criterion> = (0..12).map(|_| Criterion::default()).collect();
    let field = [SuiteName::Automorphism, SuiteName::Connection, SuiteName::Angle, SuiteName::Curvature, SuiteName::Indicatrix];

    for kind in MODELS {
        for g in CHARGES {
            let t = tag(kind, g);
            let metric = suites::run(&config(kind, g, 200, &[SuiteName::Metric])).expect("metric run");
            for name in ["K on the axis", "f on the axis", "f opposite the axis"] {
                c[1].row(&t, &metric, "metric", name, 1e-8);
            }
            for name in ["K near the axis", "f near the axis", "f near the opposite axis"] {
                c[1].row(&t, &metric, "metric", name, 1e-3);
            }
            for name in ["determinant of g", "squared norm of A"] {
                c[2].row(&t, &metric, "metric", name, 1e-8);
            }
            c[10].row(&t, &metric, "metric", LIMITS[0].1, 1e-9);

            let r = suites::run(&config(kind, g, 100, &field)).expect("suite run");
            c[3].row(&t, &r, "automorphism", "conformality", 1e-8);
            c[4].row(&t, &r, "indicatrix", "indicatrix curvature equals h^2", 1e-6);
            c[4].row(&t, &r, "indicatrix", "spread across directions", 1e-6);
            c[4].row(&t, &r, "indicatrix", "spread across base points", 1e-6);
            c[5].row(&t, &r, "connection", "closed form vs difference oracle", 1e-6);
            c[6].row(&t, &r, "connection", "closed form vs difference oracle", 1e-6);
            for name in METRICITY {
                c[6].row(&t, &r, "connection", name, 1e-8);
            }
            c[7].row(&t, &r, "connection", "covector annihilates second fiber derivative", 1e-6);
            c[7].row(&t, &r, "connection", "second fiber derivative equals minus covariant Cartan derivative", 1e-6);
            c[7].row(&t, &r, "connection", "total symmetry of lowered second fiber derivative", 1e-6);
            c[8].row(&t, &r, "angle", "angle derivative along the connection", 1e-6);
            for (name, tol) in CURVATURE {
                c[9].row(&t, &r, "curvature", name, *tol);
            }
            for (suite, name) in &LIMITS[1..] {
                c[10].row(&t, &r, suite, name, 1e-9);
            }
            // Every row of a run must be free of evaluation failures.
            for suite in ["automorphism", "connection", "angle", "curvature", "indicatrix"] {
                c[6].row(&t, &r, suite, "sample evaluation", 0.0);
            }
        }
    }

    // Transport on a unit-diameter loop: order of the alpha drift under step
    // doubling, and its size at 1024 steps.
    for kind in MODELS {
        for g in CHARGES {
            let t = tag(kind, g);
            let cfg = config(kind, g, 1, &[]);
            let model = cfg.model().expect("model");
            let curve = CurvePath::Circle { center: vec![0.1, -0.2, 0.15], radius: 0.5, plane: (0, 1) };
            let start = curve.point(0.0);
            let mut sampler = Sampler::new(&model, &cfg.sampling, SEED);
            let geo = finsleroid::background::geometry(&model, &start, finsleroid::background::Level::Connection).expect("geometry");
            let ys = vec![sampler.direction(&geo).expect("direction"), sampler.direction(&geo).expect("direction")];
            match convergence_study(&model, &curve, &ys, &[32, 64, 128, 256]) {
                Ok(study) => {
                    for (o, d) in study.orders.iter().zip(&study.drifts) {
                        match o.alpha {
                            Some(order) => c[8].push(format!("{t} alpha order shortfall below 3.5"), (3.5 - order).max(0.0), 0.0),
                            // No drift above rounding level at the coarser count.
                            None => c[8].push(format!("{t} alpha drift at rounding level"), d.alpha, 10.0 * ORDER_FLOOR),
                        }
                    }
                }
                Err(e) => c[8].missing.push(format!("{t} transport study failed: {}", e.error)),
            }
            match transport(&model, &curve, &ys, 1024) {
                Ok(run) => c[8].push(format!("{t} alpha drift at 1024 steps"), run.drift.alpha, 1e-8),
                Err(e) => c[8].missing.push(format!("{t} transport failed: {}", e.error)),
            }
        }
    }

    // Determinism: same config and seed, single-threaded and default pools.
    let mut cfg = config(ModelId::Conformal, 0.6, 30, &[]);
    cfg.transport.loops = 1;
    let a = suites::run(&cfg).expect("run");
    let b = suites::run(&cfg).expect("run");
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
    let single = pool.install(|| suites::run(&cfg).expect("run"));
    let differs = |x: &ResidualReport, y: &ResidualReport| if x.to_json() == y.to_json() && x.to_csv() == y.to_csv() { 0.0 } else { 1.0 };
    c[11].push("repeat run bytes differ", differs(&a, &b), 0.0);
    c[11].push("single-thread run bytes differ", differs(&a, &single), 0.0);

    let titles = [
        "",
        "metric normalization on and near the axis",
        "determinant of g and squared norm of A",
        "conformality of the map",
        "indicatrix of constant curvature 1 - g^2/4",
        "closed-form connection vs transitivity route",
        "metricity and transitivity",
        "fiber derivatives of the connection",
        "angle preservation and transport drift",
        "curvature identities",
        "Riemannian limit",
        "determinism",
    ];
    let mut all = true;
    for (i, title) in titles.iter().enumerate().skip(1) {
        println!("{}", c[i].line(i, title));
        all &= c[i].pass();
    }
    println!("acceptance finished in {:.1} s", started.elapsed().as_secs_f64());
    if !all {
        std::process::exit(1);
    }
}
