//! Verification suites over seeded samples, assembled into a
//! [`ResidualReport`].
//!
//! Samples are drawn sequentially from the seed, evaluated in parallel, and
//! reduced in sample order, so a report depends only on the configuration.

use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

use crate::angle::{
    angle_equation_residual, b_contractions_closed, dg_relation, dlambda_dg_closed, dlambda_dg_fd, dlambda_dy_closed, dlambda_dy_generic,
    dlambda_dy_jets, isometry_residual, two_vector_angle, G_STEP,
};
use crate::automorphism::{frame_reconstruction, identity_residuals, t_map};
use crate::background::{angle_in, geometry, BackgroundModel, CurvePath, Level, LocalGeometry, Site};
use crate::check::{id, Identity};
use crate::config::{ConfigError, SuiteConfig, SuiteName};
use crate::connection::{
    axis_contraction_residual, connection_data, contractions, covariant_suite, homogeneity, n_coeffs, n_coeffs_alternative, n_coeffs_closed,
    n_coeffs_inverse_jacobian, n_coeffs_transitivity, orthogonality, unit_norm,
};
use crate::curvature::{curvature_data, curvature_identities, drho_fd_residual, finsleroid_m_identities};
use crate::error::{GeomError, Result};
use crate::fd;
use crate::finsleroid::{axis_identities, eval_scalars, metric_data, metric_identities};
use crate::indicatrix::{constant_curvature_check, IndicatrixReport};
use crate::linalg::{self, scaled_diff};
use crate::report::{CheckRow, Grade, ResidualReport};
use crate::sampling::{Sample, Sampler};
use crate::transport::{convergence_study, holonomy_report, ConvergenceStudy, HolonomyReport};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("sampling failed: {0}")]
    Sampling(GeomError),
}

/// One entry of a suite's catalogue.
#[derive(Clone, Copy, Debug)]
pub struct Check {
    pub name: &'static str,
    pub anchor: &'static str,
    pub grade: Grade,
}

const fn ck(name: &'static str, anchor: &'static str, grade: Grade) -> Check {
    Check { name, anchor, grade }
}

use Grade::{Analytic as AN, Fd as FD, Measured as MEAS, NearPole as POLE};

/// Budget for Riemannian-limit comparisons. The limit is taken at `g = 0`
/// and `c = 1`; below unit norm the `g = 0` metric is `a + (1 - 1/c^2) b b`.
const LIMIT: Grade = Grade::Budget(1e-9);
const ROUTE: Grade = Grade::Budget(1e-6);
const CONTRACT: Grade = Grade::Budget(1e-7);

const SAMPLE_ROW: &str = "sample evaluation";
const SAMPLE_CHECK: Check = ck(SAMPLE_ROW, "fraction of samples whose evaluation failed", Grade::Budget(0.0));

const METRIC: &[Check] = &[
    ck("L^2 + h^2 b^2 = B", "L = q~ + g b / 2, B = b^2 + g b q~ + q~^2", AN),
    ck("B - h^2 q~^2 = A^2", "A = b + g q~ / 2", AN),
    ck("f within [0, pi]", "f = arccos(A / sqrt(B))", AN),
    ck("tau identity", "tau - w~ (tau' - w~) = 1 with tau = 1 + g w~ + w~^2", AN),
    ck("g(y, y) = K^2", "g_ij y^i y^j = K^2", AN),
    ck("covector equals g y", "y_i = g_ij y^j", AN),
    ck("g times inverse is identity", "g_ij g^jk = delta_i^k", AN),
    ck("l_i l^i = 1", "l_i = y_i / K, l^i = y^i / K", AN),
    ck("m orthogonal to l", "m^m l_m = 0", AN),
    ck("m has unit length", "g_mn m^m m^n = 1", AN),
    ck("m along the Cartan vector", "m^m = sign(g) C^m / sqrt(g^kh C_k C_h)", AN),
    ck("projector equals scaled eta", "g^mj - l^m l^j - m^m m^j = (B / K^2) eta~^mj", AN),
    ck("Cartan tensor annihilates y", "C_ijk y^k = 0", AN),
    ck("Cartan tensor totally symmetric", "C_ijk = C_jik = C_ikj", AN),
    ck("squared norm of A", "A^i A_i = N^2 g^2 / 4 with A_i = K C_i", AN),
    ck("determinant of g", "det g = c^2 (K^2 / B)^N det a", AN),
    ck("metric tensor positive definite", "smallest eigenvalue of g_ij > 0", AN),
    ck("positive homogeneity", "degrees 1, 1, 0, -1 of K, y_i, g_ij, C_ijk under y -> k y", AN),
    ck("Euler identity for K", "y^k dK/dy^k = K", AN),
    ck("K on the axis", "K(x, b^i) = c^2", AN),
    ck("f on the axis", "f(x, b^i) = 0", AN),
    ck("f opposite the axis", "f(x, -b^i) = pi", AN),
    ck("K near the axis", "K -> c^2 along a ray reaching b^i, evaluated at q~ = 1e-4", POLE),
    ck("f near the axis", "f -> 0 along a ray reaching b^i, evaluated at q~ = 1e-4", POLE),
    ck("f near the opposite axis", "f -> pi along a ray reaching -b^i, evaluated at q~ = 1e-4", POLE),
    ck("Riemannian limit: K = S and g = a", "g = 0: K = |y|_a, g_ij = a_ij, C_ijk = 0", LIMIT),
];

const AUTOMORPHISM: &[Check] = &[
    ck("norm equals K^h", "|t|_a = K^h", AN),
    ck("Euler identity of the map", "t^i_n y^n = h t^i", AN),
    ck("conformality", "(1/h^2) a_mn t^m_k t^n_h = K^(2(h-1)) g_kh", AN),
    ck("inverse round trip", "y(x, t(x, y)) = y", AN),
    ck("inverse Euler identity", "y^n_m t^m = y^n / h", AN),
    ck("inverse homogeneity", "y(x, k t) = k^(1/h) y(x, t)", AN),
    ck("inverse conformality", "g_kh y^k_m y^h_n = p^2 a_mn with p = K^(1-h) / h", AN),
    ck("covector through inverse Jacobian", "y_m y^m_n = K^(2(1-h)) t_n / h", AN),
    ck("image covector through Jacobian", "t_h t^h_n = h K^(2(h-1)) y_n", AN),
    ck("image covector through Hessian", "t_h t^h_ni = h (1-h) K^(2(h-1)) (g_ni - 2 l_n l_i)", AN),
    ck("mixed Hessian identity", "t_h t^h_nu y^u_i + a_hi t^h_n = 2(h-1) K^-2 t_i y_n + h K^(2(h-1)) g_nu y^u_i", AN),
    ck("Cartan tensor through the map", "2 C_mnk = 2(1-h)/K l_k g_mn + p^2 (t^i_mk t^j_n + t^i_m t^j_nk) a_ij", AN),
    ck("skew identity of the Hessian", "antisymmetric part of p^2 t^i_nk t^j_m a_ij in (m, k)", AN),
    ck("Cartan tensor alternative form", "C_mnk = (1-h)/K (l_k g_mn + l_n g_mk - l_m g_nk) + p^2 t^i_nk t^j_m a_ij", AN),
    ck("contracted Hessian identity", "p^2 t^i_mk t^j a_ij = (1/h - 1)(g_km - 2 l_k l_m)", AN),
    ck("Cartan vector through the map", "K C_m = -(N-2)(1-h) l_m + K g^nk p^2 t^i_nk t^j_m a_ij", AN),
    ck("metric from deformation tensor", "g_mn = a_ij z^i_m z^j_n with z = p t^i_n", AN),
    ck("deformation tensor on y", "z^i_n y^n = K^(1-h) t^i", AN),
    ck("deformation tensor homogeneity", "z^i_n(x, k y) = z^i_n(x, y)", AN),
    ck("indicatrix to unit sphere", "|t(x, l)|_a = 1", AN),
    ck("metric on the indicatrix", "(1/h^2) a_mn t^m_k t^n_h = g_kh at K = 1", AN),
    ck("inverse Hessian Euler identity", "y^n_ml t^l = (1/h - 1) y^n_m", AN),
    ck("sin^2 + cos^2", "sin = h q~ / sqrt(B), cos = A / sqrt(B)", AN),
    ck("rotation angle equals f", "atan2(h q~, A) = f", AN),
    ck("frame reconstruction of t", "t = (T1 l + T2 m) (K^2 / B) K^(h-1) / sqrt(B)", AN),
    ck("Riemannian limit: t = y", "g = 0: t(x, y) = y", LIMIT),
];

const CONNECTION: &[Check] = &[
    ck("closed form vs difference oracle", "closed N^n_i vs dy^n(x, t)/dx^i + y^n_h L^h_i with d/dx by differences", FD),
    ck("closed form vs inverse Jacobian", "N^m_n = -y^m_i (dt^i/dx^n + a^i_kn t^k)", AN),
    ck("closed form vs alternative assembly", "closed N vs the assembly through dK/dx", AN),
    ck("metric function is parallel", "d_i K = 0", AN),
    ck("covariant tangent vector is parallel", "D_i y_j = 0", AN),
    ck("metric tensor is parallel", "D_i g_mn = 0", AN),
    ck("image vector is parallel", "D_i t^m = 0", AN),
    ck("map Jacobian is parallel", "D_i t^m_n = 0", AN),
    ck("inverse Jacobian is parallel", "D_i y^n_m = 0", AN),
    ck("deformation tensor is parallel", "D_i z^m_n = 0", AN),
    ck("second fiber derivative equals minus covariant Cartan derivative", "N^k_imj = -D_i C^k_mj", AN),
    ck("covector annihilates second fiber derivative", "y_k N^k_imj = 0", AN),
    ck("total symmetry of lowered second fiber derivative", "g_kh N^h_imj totally symmetric in (k, m, j)", AN),
    ck("derivative coefficients contracted with y", "D^k_im y^m = -N^k_i", AN),
    ck("metric function derivative through the map", "dK/dx^m = K^(2(1-h)) t_s (dt^s/dx^m + a^s_mh t^h) / (K h)", AN),
    ck("first fiber derivative through the map", "N^n_ik = dN^n_i/dy^k via y^n_m and t^m_k", AN),
    ck("frame vector orthogonal to l", "m^m l_m = 0", AN),
    ck("beta orthogonal to b", "b_m beta~^m_i = 0", AN),
    ck("beta orthogonal to l", "l_m beta~^m_i = 0", AN),
    ck("beta orthogonal to m", "m_m beta~^m_i = 0", AN),
    ck("l contraction of the coefficients", "l_h N^h_i = -K (g q~ / B) s~_i - l_t a^t_ih y^h", AN),
    ck("u contraction", "u_n N^n_i = -g q s_i / h - u_n a^n_ih y^h", AN),
    ck("b contraction", "b_n N^n_i = (1-h) s_i / h - b_n a^n_ih y^h", AN),
    ck("transported b", "d_i b = s_i / h", AN),
    ck("transported q", "d_i q = -(b + g q) s_i / (h q)", AN),
    ck("transported B", "d_i B = -g B s_i / (q h)", AN),
    ck("N homogeneous of degree 1", "N(x, k y) = k N(x, y)", AN),
    ck("D homogeneous of degree 0", "D(x, k y) = D(x, y)", AN),
    ck("Riemannian limit: N = -Gamma y", "g = 0: N^m_i = -a^m_ih y^h", LIMIT),
];

const ANGLE: &[Check] = &[
    ck("angle derivative along the connection", "d_i lambda = dlambda/dx^i + N^n_i dlambda/dy1^n + N^n_i(y2) dlambda/dy2^n = 0", AN),
    ck("lambda gradient: jets vs generic", "dlambda/dy from the map Jacobian", AN),
    ck("lambda gradient: jets vs closed form", "closed dlambda/dy through v_1k = r_kn y1^n, r = a - b b", AN),
    ck("b contractions of the lambda gradient", "b^k dlambda/dy1^k = h^2 (q1^2 A2 - v12 A1) / (B1 sqrt(B1 B2))", AN),
    ck("g-derivative: closed vs difference", "dlambda/dg closed vs central differences in g", FD),
    ck("g-derivative: direct vs sigma form", "dlambda/dg through sigma = q + g b / 2", AN),
    ck("g-derivative: direct vs b-contracted gradient", "dlambda/dg = (sigma1 b.dlambda/dy1 + sigma2 b.dlambda/dy2) / (2 h^2)", AN),
    ck("g-derivative: sigma form vs Cartan form", "b-contracted form vs z C^k dlambda/dy^k / h^2 with z = q K^2 sigma / (N g B)", AN),
    ck("angle invariant under coordinate change", "alpha unchanged under y = R y' with a, b transformed", AN),
    ck("Riemannian limit: alpha = background angle", "g = 0: alpha = arccos(a(y1, y2) / (S1 S2))", LIMIT),
];

const CURVATURE: &[Check] = &[
    ck("M: definition vs transitive form", "M^n_ij = -y^n_t t^h a_h^t_ij", ROUTE),
    ck("E: definition vs fiber derivative of M", "E^n_kij = dM^n_ij/dy^k", ROUTE),
    ck("E: definition vs transitive form", "E = y^n_t t^t_hk M^h + y^n_t a_h^t_ij t^h_k", ROUTE),
    ck("rho: definition vs closed form", "rho = -(1-h)/F (l_k M^n_ij - l^n M_kij) + y^n_m a_h^m_ij t^h_k", ROUTE),
    ck("rho: definition vs T-form", "rho_knij = T_kn^hm a_hmij", ROUTE),
    ck("M lowered: transitive form", "M_nij = -y_t^ t^h a_h^t_ij lowered with g", ROUTE),
    ck("contravariant rho: closed form vs raising", "rho^knij with k, n raised by g and i, j by a", ROUTE),
    ck("D M: definition vs transitive form", "D_l M^n_ij = -y^n_t t^h nabla_l a_h^t_ij", ROUTE),
    ck("M skew in base indices", "M^n_ij = -M^n_ji", AN),
    ck("rho skew in fiber pair", "rho_knij = -rho_nkij", AN),
    ck("rho skew in base pair", "rho_knij = -rho_knji", AN),
    ck("covector annihilates M", "y_n M^n_ij = 0", CONTRACT),
    ck("vector contracted with E gives -M", "y^k E^n_kij = -M^n_ij", CONTRACT),
    ck("covector contracted with E gives lowered M", "y_n E^n_kij = M_kij", CONTRACT),
    ck("symmetric part of lowered E", "E_nkij + E_knij = -2 C_nkh M^h_ij", CONTRACT),
    ck("squared norm of rho", "rho^knij rho_knij = p^4 a^knij a_knij-type contraction", ROUTE),
    ck("squared norm of M", "M^nij M_nij = K^(2(1-h)) ... through t and a_h^t_ij", ROUTE),
    ck("cyclic identity for M", "M^n_ij cyclic sum with the transitive form", CONTRACT),
    ck("cyclic identity for rho", "rho_k^n_ij + rho_k^n_jl + rho_k^n_li cyclic sums", CONTRACT),
    ck("D rho: closed form vs T-form", "D_l rho_knij = T_kn^hm nabla_l a_hmij", ROUTE),
    ck("D rho: difference quotient vs T-form", "D_l rho_knij with d/dx by differences vs T_kn^hm nabla_l a_hmij", FD),
    ck("T is parallel", "D_l T_kn^hm = 0", CONTRACT),
    ck("commutator of covariant derivatives", "[D_i, D_j] W^n = -rho-type terms for a test field", AN),
    ck("transitivity of the covariant derivative", "D_i W^n(x, y) = y^n_m nabla_i W^m(x, t)", AN),
    ck("Finsleroid closed form of M", "(B/K^2) M_nij = P_nij, P = ((1-h) b + g q / 2)/h b_l a_n^l_ij - a_tnij y^t", ROUTE),
    ck("Finsleroid squared norm of M", "(B/K^2) M^nij M_nij = P^nij P_nij", ROUTE),
    ck("Riemannian limit: rho = E = Riemann", "g = 0: rho^n_kij = E^n_kij = a_k^n_ij", LIMIT),
];

const TRANSPORT: &[Check] = &[
    ck("K drift at final steps", "max_s |K(s) - K(0)| / K(0) under RK4 transport", AN),
    ck("alpha drift at final steps", "max_s |alpha(s) - alpha(0)| for the transported pair", AN),
    ck("transitivity drift at final steps", "max_s |t(x, y) - T|_a / |T(0)|_a against Riemannian transport", AN),
    ck("K drift order shortfall", "max(0, min order - observed order) under step doubling; rounding-level drift counts as attained", Grade::Budget(0.0)),
    ck("alpha drift order shortfall", "max(0, min order - observed order) under step doubling; rounding-level drift counts as attained", Grade::Budget(0.0)),
    ck("transitivity drift order shortfall", "max(0, min order - observed order) under step doubling; rounding-level drift counts as attained", Grade::Budget(0.0)),
    ck("holonomy: K change around the loop", "|K(1) - K(0)| / K(0)", AN),
    ck("holonomy: alpha change around the loop", "|alpha(1) - alpha(0)|", AN),
    ck("holonomy: vector change per unit area", "|y(1) - y(0)|_a / (|y(0)|_a area)", MEAS),
];

const INDICATRIX: &[Check] = &[
    ck("indicatrix curvature equals h^2", "1 - C = h^2 = 1 - g^2/4 with S_nmij = C (h_nj h_mi - h_ni h_mj)", Grade::Budget(1e-6)),
    ck("fit residual", "|S - C (h h - h h)| / |h h - h h|", Grade::Budget(1e-6)),
    ck("antisymmetry of S", "S_nmij = -S_nmji = -S_mnij", AN),
    ck("conformal multiplier", "p = K^(1-h) / h from the map", Grade::Budget(1e-12)),
    ck("spread across directions", "(max - min) of 1 - C over directions at one point, relative", Grade::Budget(1e-6)),
    ck("spread across base points", "(max - min) of 1 - C over all samples, relative", Grade::Budget(1e-6)),
];

pub fn catalogue(suite: SuiteName) -> &'static [Check] {
    match suite {
        SuiteName::Metric => METRIC,
        SuiteName::Automorphism => AUTOMORPHISM,
        SuiteName::Connection => CONNECTION,
        SuiteName::Angle => ANGLE,
        SuiteName::Curvature => CURVATURE,
        SuiteName::Transport => TRANSPORT,
        SuiteName::Indicatrix => INDICATRIX,
    }
}

fn lookup(suite: SuiteName, name: &str) -> Check {
    if name == SAMPLE_ROW {
        return SAMPLE_CHECK;
    }
    catalogue(suite).iter().copied().find(|c| c.name == name).unwrap_or(Check { name: "", anchor: "", grade: AN })
}

/// Everything a suite needs: the model, the samples and the settings.
pub struct Context<'a> {
    pub config: &'a SuiteConfig,
    pub model: BackgroundModel,
    pub samples: Vec<Sample>,
}

impl<'a> Context<'a> {
    pub fn new(config: &'a SuiteConfig) -> std::result::Result<Self, RunError> {
        config.validate()?;
        let model = config.model()?;
        let samples = Sampler::new(&model, &config.sampling, config.seed).samples(config.samples).map_err(RunError::Sampling)?;
        Ok(Self { config, model, samples })
    }

    fn tolerance(&self, suite: SuiteName, check: &Check) -> Option<f64> {
        let key = format!("{suite}/{}", check.name);
        if let Some(v) = self.config.tolerance.checks.get(&key) {
            return Some(*v);
        }
        let t = &self.config.tolerance;
        match check.grade {
            Grade::Analytic => Some(t.analytic),
            Grade::Fd => Some(t.fd),
            Grade::NearPole => Some(t.near_pole),
            Grade::Budget(b) => Some(b),
            Grade::Measured => None,
        }
    }

    fn unit_norm(&self) -> bool {
        unit_norm(self.model.c)
    }

    /// Evaluates `f` on every sample in parallel and reduces in sample order.
    fn per_sample<F>(&self, suite: SuiteName, f: F) -> Vec<CheckRow>
    where
        F: Fn(&Sample) -> Result<Vec<Identity>> + Sync,
    {
        let results: Vec<Result<Vec<Identity>>> = self.samples.par_iter().map(&f).collect();
        self.reduce(suite, &self.samples, results)
    }

    fn reduce(&self, suite: SuiteName, samples: &[Sample], results: Vec<Result<Vec<Identity>>>) -> Vec<CheckRow> {
        // (name, count, worst residual, index of worst sample)
        let mut acc: Vec<(&'static str, usize, f64, usize)> = Vec::new();
        let mut failed = Vec::new();
        for (i, r) in results.iter().enumerate() {
            match r {
                Ok(ids) => {
                    for idn in ids {
                        let slot = match acc.iter().position(|a| a.0 == idn.name) {
                            Some(p) => p,
                            None => {
                                acc.push((idn.name, 0, f64::NEG_INFINITY, i));
                                acc.len() - 1
                            }
                        };
                        let a = &mut acc[slot];
                        a.1 += 1;
                        let v = if idn.residual.is_nan() { f64::INFINITY } else { idn.residual };
                        if v > a.2 {
                            a.2 = v;
                            a.3 = i;
                        }
                    }
                }
                Err(_) => failed.push(i),
            }
        }
        let mut rows: Vec<CheckRow> = acc
            .into_iter()
            .map(|(name, count, worst, idx)| self.row(suite, name, count, worst.max(0.0), Some(samples[idx].clone())))
            .collect();
        let frac = failed.len() as f64 / results.len().max(1) as f64;
        rows.push(self.row(suite, SAMPLE_ROW, results.len(), frac, failed.first().map(|&i| samples[i].clone())));
        rows
    }

    fn row(&self, suite: SuiteName, name: &str, samples: usize, residual: f64, worst: Option<Sample>) -> CheckRow {
        let check = lookup(suite, name);
        let tolerance = self.tolerance(suite, &check);
        CheckRow {
            suite: suite.to_string(),
            name: name.to_string(),
            anchor: check.anchor.to_string(),
            grade: check.grade,
            samples,
            max_residual: residual,
            tolerance,
            pass: tolerance.is_none_or(|t| residual <= t),
            worst_sample: worst,
        }
    }

    pub fn run_suite(&self, suite: SuiteName) -> Vec<CheckRow> {
        match suite {
            SuiteName::Metric => self.per_sample(suite, |s| metric_sample(&self.model, s)),
            SuiteName::Automorphism => self.per_sample(suite, |s| automorphism_sample(&self.model, s)),
            SuiteName::Connection => self.per_sample(suite, |s| connection_sample(&self.model, s, self.unit_norm())),
            SuiteName::Angle => self.per_sample(suite, |s| angle_sample(&self.model, s, self.unit_norm())),
            SuiteName::Curvature => self.per_sample(suite, |s| curvature_sample(&self.model, s, self.unit_norm())),
            SuiteName::Transport => self.transport_suite(),
            SuiteName::Indicatrix => self.indicatrix_suite(),
        }
    }

    fn transport_suite(&self) -> Vec<CheckRow> {
        let suite = SuiteName::Transport;
        let tc = &self.config.transport;
        let loops: Vec<Sample> = self.samples.iter().take(tc.loops).cloned().collect();
        let results: Vec<Result<Vec<Identity>>> = loops
            .par_iter()
            .map(|s| {
                let curve = CurvePath::Circle { center: s.x.clone(), radius: tc.radius, plane: (0, 1) };
                let start = curve.point(0.0);
                let site = Site::new(&self.model, &start, Level::Connection)?;
                let vectors = match &tc.vectors {
                    Some(v) => v.clone(),
                    None => s.y.iter().take(2).map(|y| rescale_off_axis(&site.geo, y)).collect(),
                };
                let study = convergence_study(&self.model, &curve, &vectors, &tc.order_steps).map_err(|e| e.error)?;
                let hol = holonomy_report(&self.model, &curve, &vectors, tc.final_steps).map_err(|e| e.error)?;
                Ok(transport_identities(&study, &hol, tc.min_order))
            })
            .collect();
        self.reduce(suite, &loops, results)
    }

    fn indicatrix_suite(&self) -> Vec<CheckRow> {
        let suite = SuiteName::Indicatrix;
        let reports: Vec<Result<IndicatrixReport>> = self
            .samples
            .par_iter()
            .map(|s| {
                let geo = geometry(&self.model, &s.x, Level::Connection)?;
                constant_curvature_check(&geo, &s.y)
            })
            .collect();
        let curvatures: Vec<f64> = reports.iter().filter_map(|r| r.as_ref().ok()).map(|r| r.curvature).collect();
        let results: Vec<Result<Vec<Identity>>> = reports
            .into_iter()
            .map(|r| {
                r.map(|r| {
                    vec![
                        id("indicatrix curvature equals h^2", (r.curvature - r.h_squared).abs()),
                        id("fit residual", r.residual),
                        id("antisymmetry of S", r.skew),
                        id("conformal multiplier", r.multiplier),
                        id("spread across directions", r.spread),
                    ]
                })
            })
            .collect();
        let mut rows = self.reduce(suite, &self.samples, results);
        if let (Some(lo), Some(hi)) = (curvatures.iter().copied().reduce(f64::min), curvatures.iter().copied().reduce(f64::max)) {
            let mean = curvatures.iter().sum::<f64>() / curvatures.len() as f64;
            rows.push(self.row(suite, "spread across base points", curvatures.len(), (hi - lo) / mean.abs(), None));
        }
        rows
    }

    pub fn run(&self) -> ResidualReport {
        let mut rows = Vec::new();
        for suite in self.config.suites() {
            let mut r = self.run_suite(suite);
            r.sort_by(|a, b| a.name.cmp(&b.name));
            rows.extend(r);
        }
        ResidualReport::new(self.model.clone(), self.config.seed, self.config.samples, rows)
    }
}

/// Validates the configuration, draws samples and runs the selected suites.
pub fn run(config: &SuiteConfig) -> std::result::Result<ResidualReport, RunError> {
    Ok(Context::new(config)?.run())
}

/// Sampled vectors are kept; this only guards against a loop start where
/// the first vector would sit on the axis after moving the base point.
fn rescale_off_axis(geo: &LocalGeometry, y: &[f64]) -> Vec<f64> {
    if eval_scalars(geo, y).is_ok() {
        return y.to_vec();
    }
    let shifted: Vec<f64> = y.iter().enumerate().map(|(i, v)| if i == 2 { v + 0.1 } else { *v }).collect();
    shifted
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn metric_sample(model: &BackgroundModel, s: &Sample) -> Result<Vec<Identity>> {
    let geo = geometry(model, &s.x, Level::Connection)?;
    let y = &s.y[0];
    let mut out = metric_identities(&geo, y)?;
    out.extend(axis_identities(&geo, y, 1e-4)?);
    let g0 = geometry(&model.with_g(0.0).with_c(1.0), &s.x, Level::Connection)?;
    let md = metric_data(&g0, y)?;
    let lim = rel(md.k, g0.norm(y)).max(scaled_diff(&md.g, &g0.a)).max(linalg::max_abs(&md.cartan));
    out.push(id("Riemannian limit: K = S and g = a", lim));
    Ok(out)
}

fn automorphism_sample(model: &BackgroundModel, s: &Sample) -> Result<Vec<Identity>> {
    let geo = geometry(model, &s.x, Level::Connection)?;
    let y = &s.y[0];
    let mut out = identity_residuals(&geo, y)?;
    if unit_norm(geo.c) {
        out.push(id("frame reconstruction of t", scaled_diff(&frame_reconstruction(&geo, y)?, &t_map(&geo, y)?)));
    }
    let g0 = geometry(&model.with_g(0.0).with_c(1.0), &s.x, Level::Connection)?;
    out.push(id("Riemannian limit: t = y", scaled_diff(&t_map(&g0, y)?, &ndarray::Array1::from(y.clone()))));
    Ok(out)
}

fn connection_sample(model: &BackgroundModel, s: &Sample, unit: bool) -> Result<Vec<Identity>> {
    let site = Site::new(model, &s.x, Level::Connection)?;
    let geo = &site.geo;
    let y = &s.y[0];
    let mut out = Vec::new();
    let closed = n_coeffs_closed(geo, y)?;
    out.push(id("closed form vs difference oracle", scaled_diff(&closed, &n_coeffs_transitivity(&site, y, fd::DEFAULT_STEP)?)));
    out.push(id("closed form vs inverse Jacobian", scaled_diff(&closed, &n_coeffs_inverse_jacobian(&site, y)?)));
    let cd = connection_data(&site, y)?;
    let md = metric_data(geo, y)?;
    out.extend(orthogonality(geo, &md, &cd));
    if unit {
        out.push(id("closed form vs alternative assembly", scaled_diff(&closed, &n_coeffs_alternative(&site, y)?)));
        out.push(id("l contraction of the coefficients", axis_contraction_residual(geo, &md, &cd, y)?));
        out.extend(contractions(&site, y)?);
    }
    out.extend(covariant_suite(&site, y)?);
    let (mut hn, mut hd) = (0.0f64, 0.0f64);
    for factor in [0.5, 3.0] {
        let (a, b) = homogeneity(&site, y, factor)?;
        hn = hn.max(a);
        hd = hd.max(b);
    }
    out.push(id("N homogeneous of degree 1", hn));
    out.push(id("D homogeneous of degree 0", hd));
    let m0 = model.with_g(0.0).with_c(1.0);
    let s0 = Site::new(&m0, &s.x, Level::Connection)?;
    let n = geo.dim;
    let gy = Array2::from_shape_fn((n, n), |(m, i)| -(0..n).map(|h| s0.geo.gamma[[m, i, h]] * y[h]).sum::<f64>());
    out.push(id("Riemannian limit: N = -Gamma y", scaled_diff(&n_coeffs(&s0, y)?, &gy)));
    Ok(out)
}

/// Fixed coordinate change used by the invariance check.
fn frame_change(n: usize) -> Array2<f64> {
    let (s, c) = 0.6f64.sin_cos();
    Array2::from_shape_fn((n, n), |(i, j)| match (i, j) {
        (0, 0) | (1, 1) => c,
        (0, 1) => -s,
        (1, 0) => s,
        _ if i == j => 1.0 + 0.1 * i as f64,
        _ if j == i + 1 => 0.2,
        _ => 0.0,
    })
}

fn angle_sample(model: &BackgroundModel, s: &Sample, unit: bool) -> Result<Vec<Identity>> {
    let site = Site::new(model, &s.x, Level::Connection)?;
    let geo = &site.geo;
    let (y1, y2) = (&s.y[0], &s.y[1]);
    let mut out = vec![id("angle derivative along the connection", linalg::max_abs(angle_equation_residual(&site, y1, y2)?.iter()))];
    let jets = dlambda_dy_jets(geo, y1, y2)?;
    out.push(id("lambda gradient: jets vs generic", jets.max_diff(&dlambda_dy_generic(geo, y1, y2)?)));
    if unit {
        out.push(id("lambda gradient: jets vs closed form", jets.max_diff(&dlambda_dy_closed(geo, y1, y2)?)));
        let (c1, c2) = b_contractions_closed(geo, y1, y2)?;
        out.push(id("b contractions of the lambda gradient", rel(c1, geo.b_up.dot(&jets.dy1)).max(rel(c2, geo.b_up.dot(&jets.dy2)))));
        let fdg = dlambda_dg_fd(model, &s.x, y1, y2, G_STEP)?;
        let (direct, via_sigma) = dlambda_dg_closed(geo, y1, y2)?;
        let (sigma_form, z_form) = dg_relation(geo, y1, y2)?;
        out.push(id("g-derivative: closed vs difference", rel(direct, fdg)));
        out.push(id("g-derivative: direct vs sigma form", rel(direct, via_sigma)));
        out.push(id("g-derivative: direct vs b-contracted gradient", rel(direct, sigma_form)));
        if let Some(z) = z_form {
            out.push(id("g-derivative: sigma form vs Cartan form", rel(sigma_form, z)));
        }
    }
    out.push(id("angle invariant under coordinate change", isometry_residual(geo, y1, y2, &frame_change(geo.dim))?));
    let g0 = geometry(&model.with_g(0.0).with_c(1.0), &s.x, Level::Connection)?;
    let lim = (two_vector_angle(&g0, y1, y2)?.alpha - angle_in(&g0, y1, y2)?).abs();
    out.push(id("Riemannian limit: alpha = background angle", lim));
    Ok(out)
}

fn curvature_sample(model: &BackgroundModel, s: &Sample, unit: bool) -> Result<Vec<Identity>> {
    let site = Site::new(model, &s.x, Level::CurvatureDerivative)?;
    let y = &s.y[0];
    let mut out = curvature_identities(&site, y)?;
    let cd = connection_data(&site, y)?;
    out.push(id("D rho: difference quotient vs T-form", drho_fd_residual(&site, y, &cd, fd::DEFAULT_STEP)?));
    if unit {
        out.extend(finsleroid_m_identities(&site, y)?);
    }
    let m0 = model.with_g(0.0).with_c(1.0);
    let s0 = Site::new(&m0, &s.x, Level::Curvature)?;
    let c0 = curvature_data(&s0, y)?;
    let r = s0.geo.riemann();
    out.push(id("Riemannian limit: rho = E = Riemann", scaled_diff(&c0.rho, r).max(scaled_diff(&c0.e, r))));
    Ok(out)
}

fn shortfall(order: Option<f64>, coarse: f64, min_order: f64) -> f64 {
    match order {
        Some(o) => (min_order - o).max(0.0),
        // Drift at rounding level: nothing left to converge.
        None if coarse <= crate::transport::ORDER_FLOOR * 10.0 => 0.0,
        None => min_order,
    }
}

fn transport_identities(study: &ConvergenceStudy, hol: &HolonomyReport, min_order: f64) -> Vec<Identity> {
    let mut short = [0.0f64; 3];
    for (o, d) in study.orders.iter().zip(&study.drifts) {
        short[0] = short[0].max(shortfall(o.k, d.k, min_order));
        short[1] = short[1].max(shortfall(o.alpha, d.alpha, min_order));
        short[2] = short[2].max(shortfall(o.transitivity, d.transitivity, min_order));
    }
    let per_area = hol.vector.iter().copied().fold(0.0, f64::max) / hol.area;
    vec![
        id("K drift at final steps", hol.drift.k),
        id("alpha drift at final steps", hol.drift.alpha),
        id("transitivity drift at final steps", hol.drift.transitivity),
        id("K drift order shortfall", short[0]),
        id("alpha drift order shortfall", short[1]),
        id("transitivity drift order shortfall", short[2]),
        id("holonomy: K change around the loop", hol.k_delta.iter().copied().fold(0.0, f64::max)),
        id("holonomy: alpha change around the loop", hol.alpha_delta.iter().copied().fold(0.0, f64::max)),
        id("holonomy: vector change per unit area", per_area),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModelConfig, ModelId};

    fn config(kind: ModelId, c: f64, g: f64, samples: usize) -> SuiteConfig {
        SuiteConfig::for_model(ModelConfig { kind, dim: 3, c, g, wave: None, amp: None, curvature: None }, 7, samples)
    }

    #[test]
    fn every_emitted_check_is_catalogued() {
        for (kind, c) in [(ModelId::Conformal, 1.0), (ModelId::Perturbed, 0.7)] {
            let mut cfg = config(kind, c, 0.9, 2);
            cfg.transport.loops = 1;
            let report = run(&cfg).unwrap();
            for r in &report.rows {
                assert!(!r.anchor.is_empty(), "{} has no catalogue entry", r.key());
            }
        }
    }

    #[test]
    fn rows_ordered_by_suite_then_name() {
        let mut cfg = config(ModelId::Rotating, 1.0, 0.6, 2);
        cfg.suites = vec![SuiteName::Angle, SuiteName::Metric];
        let report = run(&cfg).unwrap();
        let keys: Vec<(usize, String)> = report
            .rows
            .iter()
            .map(|r| (SuiteName::ALL.iter().position(|s| s.as_str() == r.suite).unwrap(), r.name.clone()))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(report.rows[0].suite, "metric");
    }

    #[test]
    fn same_seed_same_bytes() {
        let mut cfg = config(ModelId::Conformal, 1.0, 1.2, 3);
        cfg.suites = vec![SuiteName::Metric, SuiteName::Connection, SuiteName::Indicatrix];
        assert_eq!(run(&cfg).unwrap().to_json(), run(&cfg).unwrap().to_json());
        let mut other = cfg.clone();
        other.seed = 8;
        assert_ne!(run(&cfg).unwrap().to_json(), run(&other).unwrap().to_json());
    }

    #[test]
    fn overrides_and_measured_rows() {
        let mut cfg = config(ModelId::Conformal, 0.8, 0.9, 2);
        cfg.suites = vec![SuiteName::Connection];
        cfg.tolerance.checks.insert("connection/metric function is parallel".into(), 1e-30);
        let report = run(&cfg).unwrap();
        let measured = report.row("connection", "closed form vs difference oracle").unwrap();
        assert!(measured.pass && measured.tolerance == Some(1e-6));
        assert!(report.row("connection", "u contraction").is_none());
        let forced = report.row("connection", "metric function is parallel").unwrap();
        assert_eq!(forced.tolerance, Some(1e-30));
        assert!(!report.pass || forced.max_residual == 0.0);
    }

    #[test]
    fn flat_constant_form_passes_everything() {
        let cfg = config(ModelId::Flat, 1.0, 0.9, 3);
        let report = run(&cfg).unwrap();
        let failures: Vec<String> = report.failures().map(|r| format!("{} {:e}", r.key(), r.max_residual)).collect();
        assert!(failures.is_empty(), "{failures:?}");
        assert_eq!(report.row("transport", "K drift at final steps").unwrap().max_residual, 0.0);
    }
}
