//! Riemannian background: metric field `a_ij(x)`, the 1-form `b_i(x)` of
//! constant norm `c`, Christoffel symbols, the Riemann tensor and its
//! covariant derivative.
//!
//! Models are written once, generically over [`Scalar`]. Evaluating them on
//! coordinate jets in `x` yields exact partial derivatives of `a` up to third
//! order and of `b` up to second order, which feed the curvature tensors
//! without finite differencing.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, Array3, Array4, Array5};
use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::fd;
use crate::jets::{lift, lift_block, Jet, Scalar};
use crate::linalg::{self, Mat};

/// The shape of the background fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// Euclidean metric, constant 1-form along the first axis.
    Flat,
    /// Euclidean metric, unit direction rotating in the first coordinate
    /// plane: `n = (cos th, sin th, 0, ...)` with `th = wave . x`.
    Rotating { wave: Vec<f64> },
    /// `a = exp(2 phi) delta` with
    /// `phi = amp (x0 + sin(x1) / 2 + x_last^2 / 4)` and the rotating direction.
    Conformal { amp: f64, wave: Vec<f64> },
    /// Round metric `delta / (1 + k |x|^2 / 4)^2` of sectional curvature `k`,
    /// 1-form along the first axis.
    ConstantCurvature { curvature: f64 },
    /// Non-conformally-flat metric `delta + amp P(x)` with a trigonometric
    /// symmetric perturbation `P`, rotating direction.
    Perturbed { amp: f64, wave: Vec<f64> },
}

impl ModelKind {
    /// Short identifier used in reports.
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::Flat => "flat",
            ModelKind::Rotating { .. } => "rotating",
            ModelKind::Conformal { .. } => "conformal",
            ModelKind::ConstantCurvature { .. } => "constant_curvature",
            ModelKind::Perturbed { .. } => "perturbed",
        }
    }

    /// Whether the metric is the Euclidean one.
    pub fn is_flat_metric(&self) -> bool {
        matches!(self, ModelKind::Flat | ModelKind::Rotating { .. })
    }
}

/// Default wave vector for rotating 1-form fields.
pub fn default_wave(dim: usize) -> Vec<f64> {
    [0.7, -0.4, 0.5, 0.3, -0.2, 0.25, -0.15, 0.1].iter().copied().cycle().take(dim).collect()
}

/// The background Riemannian space together with the Finsleroid constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundModel {
    pub dim: usize,
    #[serde(flatten)]
    pub kind: ModelKind,
    /// Riemannian norm of `b`.
    pub c: f64,
    /// Finsleroid charge.
    pub g: f64,
}

impl BackgroundModel {
    pub fn new(dim: usize, kind: ModelKind, c: f64, g: f64) -> Result<Self> {
        let model = Self { dim, kind, c, g };
        model.validate()?;
        Ok(model)
    }

    /// Model (i): flat metric, constant 1-form.
    pub fn flat(dim: usize, c: f64, g: f64) -> Result<Self> {
        Self::new(dim, ModelKind::Flat, c, g)
    }

    /// Model (ii): flat metric, rotating unit direction.
    pub fn rotating(dim: usize, c: f64, g: f64) -> Result<Self> {
        Self::new(dim, ModelKind::Rotating { wave: default_wave(dim) }, c, g)
    }

    /// Model (iii): conformally flat metric, rotating direction.
    pub fn conformal(dim: usize, c: f64, g: f64) -> Result<Self> {
        Self::new(dim, ModelKind::Conformal { amp: 0.2, wave: default_wave(dim) }, c, g)
    }

    /// Model (iv): constant positive curvature.
    pub fn constant_curvature(dim: usize, c: f64, g: f64) -> Result<Self> {
        Self::new(dim, ModelKind::ConstantCurvature { curvature: 1.0 }, c, g)
    }

    /// Generic metric with no special structure.
    pub fn perturbed(dim: usize, c: f64, g: f64) -> Result<Self> {
        Self::new(dim, ModelKind::Perturbed { amp: 0.08, wave: default_wave(dim) }, c, g)
    }

    /// The four canonical models in order (i)-(iv).
    pub fn canonical(dim: usize, c: f64, g: f64) -> Result<Vec<Self>> {
        Ok(vec![
            Self::flat(dim, c, g)?,
            Self::rotating(dim, c, g)?,
            Self::conformal(dim, c, g)?,
            Self::constant_curvature(dim, c, g)?,
        ])
    }

    pub fn with_g(&self, g: f64) -> Self {
        Self { g, ..self.clone() }
    }

    pub fn with_c(&self, c: f64) -> Self {
        Self { c, ..self.clone() }
    }

    /// `h = sqrt(1 - g^2 / 4)`, the homogeneity degree of the conformal map.
    pub fn h(&self) -> f64 {
        (1.0 - 0.25 * self.g * self.g).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 3 {
            return Err(GeomError::InvalidModel(format!("dimension {} below 3", self.dim)));
        }
        if !(self.g > -2.0 && self.g < 2.0) {
            return Err(GeomError::InvalidModel(format!("g out of (-2,2): {}", self.g)));
        }
        if !(self.c > 0.0 && self.c <= 1.0) {
            return Err(GeomError::InvalidModel(format!("c out of (0,1]: {}", self.c)));
        }
        let wave_len = match &self.kind {
            ModelKind::Rotating { wave } | ModelKind::Conformal { wave, .. } | ModelKind::Perturbed { wave, .. } => {
                Some(wave.len())
            }
            _ => None,
        };
        if let Some(len) = wave_len {
            if len != self.dim {
                return Err(GeomError::InvalidModel(format!("wave vector has {len} entries, dimension is {}", self.dim)));
            }
        }
        if let ModelKind::Perturbed { amp, .. } = self.kind {
            if amp.abs() * self.dim as f64 >= 1.0 {
                return Err(GeomError::InvalidModel(format!("perturbation amplitude {amp} too large for dimension")));
            }
        }
        if let ModelKind::ConstantCurvature { curvature } = self.kind {
            if curvature < 0.0 {
                return Err(GeomError::InvalidModel("negative curvature chart not provided".into()));
            }
        }
        Ok(())
    }

    fn phase<S: Scalar>(wave: &[f64], x: &[S]) -> S {
        let mut th = S::cst(0.0);
        for (w, xi) in wave.iter().zip(x) {
            th = th + xi.clone() * *w;
        }
        th
    }

    fn rotating_direction<S: Scalar>(&self, wave: &[f64], x: &[S]) -> Vec<S> {
        let th = Self::phase(wave, x);
        let mut u = vec![S::cst(0.0); self.dim];
        u[0] = th.clone().cos();
        u[1] = th.sin();
        u
    }

    /// Metric components `a_ij(x)`.
    pub fn metric<S: Scalar>(&self, x: &[S]) -> Mat<S> {
        let n = self.dim;
        match &self.kind {
            ModelKind::Flat | ModelKind::Rotating { .. } => Mat::identity(n),
            ModelKind::Conformal { amp, .. } => {
                let phi = (x[0].clone() + x[1].clone().sin() * 0.5 + x[n - 1].clone().square() * 0.25) * *amp;
                let e = (phi * 2.0).exp();
                Mat::from_fn(n, |i, j| if i == j { e.clone() } else { S::cst(0.0) })
            }
            ModelKind::ConstantCurvature { curvature } => {
                let mut r2 = S::cst(0.0);
                for xi in x {
                    r2 = r2 + xi.clone().square();
                }
                let d = (r2 * (0.25 * curvature) + 1.0).square();
                let f = d.recip();
                Mat::from_fn(n, |i, j| if i == j { f.clone() } else { S::cst(0.0) })
            }
            ModelKind::Perturbed { amp, .. } => Mat::from_fn(n, |i, j| {
                let (fi, fj) = (i as f64, j as f64);
                let p1 = (x[i].clone() + x[j].clone() * 2.0 + fi * fj * 0.3).sin();
                let p2 = (x[j].clone() + x[i].clone() * 2.0 + fi * fj * 0.3).sin();
                let p = (p1 + p2) * (0.5 * amp);
                if i == j {
                    p + 1.0
                } else {
                    p
                }
            }),
        }
    }

    /// The 1-form direction before normalisation to norm `c`.
    pub fn raw_form<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        match &self.kind {
            ModelKind::Flat | ModelKind::ConstantCurvature { .. } => {
                let mut u = vec![S::cst(0.0); self.dim];
                u[0] = S::cst(1.0);
                u
            }
            ModelKind::Rotating { wave } | ModelKind::Conformal { wave, .. } | ModelKind::Perturbed { wave, .. } => {
                self.rotating_direction(wave, x)
            }
        }
    }

    /// Metric, its inverse, and the covariant 1-form `b_i` normalised so that
    /// `a^{ij} b_i b_j = c^2`.
    pub fn fields<S: Scalar>(&self, x: &[S]) -> Result<(Mat<S>, Mat<S>, Vec<S>)> {
        let a = self.metric(x);
        let a_inv = a.inverse().map_err(|_| GeomError::SingularMetric(linalg::values(x)))?;
        let u = self.raw_form(x);
        let norm = a_inv.quad(&u, &u).sqrt();
        let scale = norm.recip() * self.c;
        let b = u.into_iter().map(|ui| ui * scale.clone()).collect();
        Ok((a, a_inv, b))
    }
}

/// How the covariant derivative of the Riemann tensor was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DerivativeSource {
    Analytic,
    FiniteDifference,
}

/// How many x-derivatives of the metric to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    /// Metric, Christoffel symbols, `nabla b`.
    Connection,
    /// Adds the Riemann tensor.
    Curvature,
    /// Adds the covariant derivative of the Riemann tensor.
    CurvatureDerivative,
}

/// Background data at one base point.
///
/// Index conventions: `da[[k, i, j]] = d_k a_ij`, `gamma[[i, k, n]] =
/// a^i_{kn}`, `nabla_b[[i, m]] = nabla_i b_m`, `riemann[[n, i, k, m]] =
/// a_n^i_{km}`, `nabla_riemann[[k, h, t, i, j]] = nabla_k a_h^t_{ij}`.
#[derive(Clone, Debug)]
pub struct LocalGeometry {
    pub x: Vec<f64>,
    pub dim: usize,
    pub c: f64,
    pub g: f64,
    pub a: Array2<f64>,
    pub a_inv: Array2<f64>,
    pub b: Array1<f64>,
    pub b_up: Array1<f64>,
    pub da: Array3<f64>,
    pub db: Array2<f64>,
    pub gamma: Array3<f64>,
    pub nabla_b: Array2<f64>,
    pub riemann: Option<Array4<f64>>,
    pub nabla_riemann: Option<Array5<f64>>,
    pub source: DerivativeSource,
}

impl LocalGeometry {
    pub fn h(&self) -> f64 {
        (1.0 - 0.25 * self.g * self.g).sqrt()
    }

    /// `b~_i = b_i / c`.
    pub fn b_tilde(&self) -> Array1<f64> {
        &self.b / self.c
    }

    pub fn b_tilde_up(&self) -> Array1<f64> {
        &self.b_up / self.c
    }

    /// `nabla_i b~_m`.
    pub fn nabla_b_tilde(&self) -> Array2<f64> {
        &self.nabla_b / self.c
    }

    /// `nabla_i b~^m = a^{mj} nabla_i b~_j`, stored as `[[i, m]]`.
    pub fn nabla_b_tilde_up(&self) -> Array2<f64> {
        self.nabla_b_tilde().dot(&self.a_inv)
    }

    /// Riemannian transport coefficients `L^k_i(x, t) = -a^k_{ih} t^h`,
    /// stored as `[[k, i]]`.
    pub fn riem_transport_coeffs(&self, t: &[f64]) -> Array2<f64> {
        let n = self.dim;
        Array2::from_shape_fn((n, n), |(k, i)| -(0..n).map(|h| self.gamma[[k, i, h]] * t[h]).sum::<f64>())
    }

    pub fn riemann(&self) -> &Array4<f64> {
        self.riemann.as_ref().expect("geometry evaluated without curvature")
    }

    pub fn nabla_riemann(&self) -> &Array5<f64> {
        self.nabla_riemann.as_ref().expect("geometry evaluated without curvature derivative")
    }

    /// Fully covariant Riemann tensor `a_{hlij} = a_{lr} a_h^r_{ij}`.
    pub fn riemann_lower(&self) -> Array4<f64> {
        let r = self.riemann();
        let n = self.dim;
        Array4::from_shape_fn((n, n, n, n), |(h, l, i, j)| (0..n).map(|s| self.a[[l, s]] * r[[h, s, i, j]]).sum())
    }

    /// `a(u, v)`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let n = self.dim;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += self.a[[i, j]] * u[i] * v[j];
            }
        }
        acc
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).sqrt()
    }

    /// Covariant components `a_ij v^j`.
    pub fn lower(&self, v: &[f64]) -> Array1<f64> {
        self.a.dot(&Array1::from(v.to_vec()))
    }
}

/// Background quantities at one point over a generic scalar.
///
/// With `f64` this is a plain evaluation; with constant jets it serves fiber
/// differentiation; with jets seeded in `x` it carries exact base-point
/// derivatives. `gamma` is indexed `(i, k, m)` for `a^i_{km}` and `nabla_b`
/// as `(i, m)` for `nabla_i b_m`.
#[derive(Clone, Debug)]
pub struct PointFields<S> {
    pub n: usize,
    pub c: f64,
    pub g: f64,
    pub a: Mat<S>,
    pub a_inv: Mat<S>,
    pub b: Vec<S>,
    pub b_up: Vec<S>,
    pub gamma: Vec<S>,
    pub nabla_b: Vec<S>,
}

impl<S: Scalar> PointFields<S> {
    pub fn h(&self) -> f64 {
        (1.0 - 0.25 * self.g * self.g).sqrt()
    }

    #[inline]
    pub fn gamma(&self, i: usize, k: usize, m: usize) -> &S {
        &self.gamma[(i * self.n + k) * self.n + m]
    }

    #[inline]
    pub fn nabla_b(&self, i: usize, m: usize) -> &S {
        &self.nabla_b[i * self.n + m]
    }

    fn map_from(geo: &LocalGeometry, f: impl Fn(f64) -> S) -> Self {
        let n = geo.dim;
        Self {
            n,
            c: geo.c,
            g: geo.g,
            a: Mat::from_fn(n, |i, j| f(geo.a[[i, j]])),
            a_inv: Mat::from_fn(n, |i, j| f(geo.a_inv[[i, j]])),
            b: geo.b.iter().map(|&v| f(v)).collect(),
            b_up: geo.b_up.iter().map(|&v| f(v)).collect(),
            gamma: geo.gamma.iter().map(|&v| f(v)).collect(),
            nabla_b: geo.nabla_b.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl PointFields<f64> {
    pub fn from_geometry(geo: &LocalGeometry) -> Self {
        Self::map_from(geo, |v| v)
    }
}

impl PointFields<Jet> {
    /// Background frozen at a point: every entry is a jet constant.
    pub fn constant(geo: &LocalGeometry) -> Self {
        Self::map_from(geo, Jet::constant)
    }

    /// Background as jets in `x`, seeded at variables `0..dim` out of
    /// `nvars`. The metric and 1-form carry `order` derivatives, the
    /// Christoffel symbols and `nabla b` one fewer.
    pub fn x_jets(model: &BackgroundModel, x: &[f64], nvars: usize, order: u8) -> Result<Self> {
        let n = model.dim;
        let xj = lift_block(x, 0, nvars, order)?;
        let (a, a_inv, b) = model.fields(&xj)?;
        let b_up = a_inv.mul_vec(&b);
        let gamma = christoffel_from_jets(&a_inv, &a, order - 1);
        let mut nabla_b = Vec::with_capacity(n * n);
        for i in 0..n {
            for m in 0..n {
                let mut acc = b[m].partial(i);
                for k in 0..n {
                    acc = acc - gamma[(k * n + i) * n + m].clone() * b[k].clone();
                }
                nabla_b.push(acc);
            }
        }
        Ok(Self { n, c: model.c, g: model.g, a, a_inv, b, b_up, gamma, nabla_b })
    }
}

fn christoffel_from_jets(a_inv: &Mat<Jet>, a: &Mat<Jet>, order: u8) -> Vec<Jet> {
    let n = a.n;
    // da[k][i][j] = d_k a_ij, one order lower than a.
    let da: Vec<Vec<Vec<Jet>>> =
        (0..n).map(|k| (0..n).map(|i| (0..n).map(|j| a.at(i, j).partial(k)).collect()).collect()).collect();
    let mut gamma = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for k in 0..n {
            for m in 0..n {
                let mut acc = Jet::constant(0.0);
                for h in 0..n {
                    let bracket = da[m][h][k].clone() + da[k][h][m].clone() - da[h][k][m].clone();
                    acc = acc + a_inv.at(i, h).truncate(order) * bracket;
                }
                gamma.push((acc * 0.5).truncate(order));
            }
        }
    }
    gamma
}

fn riemann_from_gamma(gamma: &[Jet], n: usize) -> Vec<Jet> {
    let gi = |i: usize, k: usize, m: usize| &gamma[(i * n + k) * n + m];
    let mut out = Vec::with_capacity(n * n * n * n);
    // a_n^i_{km} = d_k a^i_{nm} - d_m a^i_{nk} + a^u_{nm} a^i_{uk} - a^u_{nk} a^i_{um}
    for nn in 0..n {
        for i in 0..n {
            for k in 0..n {
                for m in 0..n {
                    let mut acc = gi(i, nn, m).partial(k) - gi(i, nn, k).partial(m);
                    for u in 0..n {
                        acc = acc + gi(u, nn, m).clone() * gi(i, u, k).clone() - gi(u, nn, k).clone() * gi(i, u, m).clone();
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

fn nabla_riemann_from(riem_d: &dyn Fn(usize, usize, usize, usize, usize) -> f64, r: &Array4<f64>, gamma: &Array3<f64>) -> Array5<f64> {
    let n = gamma.dim().0;
    // nabla_k a_h^t_{ij} = d_k a_h^t_{ij} + a^t_{ku} a_h^u_{ij} - a^u_{kh} a_u^t_{ij}
    //                      - a^u_{ki} a_h^t_{uj} - a^u_{kj} a_h^t_{iu}
    Array5::from_shape_fn((n, n, n, n, n), |(k, h, t, i, j)| {
        let mut acc = riem_d(k, h, t, i, j);
        for u in 0..n {
            acc += gamma[[t, k, u]] * r[[h, u, i, j]] - gamma[[u, k, h]] * r[[u, t, i, j]]
                - gamma[[u, k, i]] * r[[h, t, u, j]]
                - gamma[[u, k, j]] * r[[h, t, i, u]];
        }
        acc
    })
}

/// Evaluate the background at `x` to the requested derivative level.
pub fn geometry(model: &BackgroundModel, x: &[f64], level: Level) -> Result<LocalGeometry> {
    let n = model.dim;
    if x.len() != n {
        return Err(GeomError::InvalidModel(format!("point has {} coordinates, dimension is {n}", x.len())));
    }
    let order = match level {
        Level::Connection => 1,
        Level::Curvature => 2,
        Level::CurvatureDerivative => 3,
    };
    let xj = lift(x, None, order)?;
    let (aj, a_inv_j, bj) = model.fields(&xj)?;
    let a = aj.values();
    let a_inv = linalg::invert(&a).ok_or_else(|| GeomError::SingularMetric(x.to_vec()))?;
    if linalg::symmetric_eigenvalues(&a)[0] <= 0.0 {
        return Err(GeomError::SingularMetric(x.to_vec()));
    }
    let da = Array3::from_shape_fn((n, n, n), |(k, i, j)| aj.at(i, j).d1(k));
    let b = Array1::from_iter(bj.iter().map(Jet::val));
    let db = Array2::from_shape_fn((n, n), |(k, i)| bj[i].d1(k));
    let b_up = a_inv.dot(&b);

    let gamma_j = christoffel_from_jets(&a_inv_j, &aj, order - 1);
    let gamma = Array3::from_shape_fn((n, n, n), |(i, k, m)| gamma_j[(i * n + k) * n + m].val());
    let nabla_b = Array2::from_shape_fn((n, n), |(i, m)| {
        db[[i, m]] - (0..n).map(|k| gamma[[k, i, m]] * b[k]).sum::<f64>()
    });

    let mut riemann = None;
    let mut nabla_riemann = None;
    if level >= Level::Curvature {
        let rj = riemann_from_gamma(&gamma_j, n);
        let r = Array4::from_shape_fn((n, n, n, n), |(p, i, k, m)| rj[((p * n + i) * n + k) * n + m].val());
        if level >= Level::CurvatureDerivative {
            let deriv = |k: usize, h: usize, t: usize, i: usize, j: usize| rj[((h * n + t) * n + i) * n + j].d1(k);
            nabla_riemann = Some(nabla_riemann_from(&deriv, &r, &gamma));
        }
        riemann = Some(r);
    }

    Ok(LocalGeometry {
        x: x.to_vec(),
        dim: n,
        c: model.c,
        g: model.g,
        a,
        a_inv,
        b,
        b_up,
        da,
        db,
        gamma,
        nabla_b,
        riemann,
        nabla_riemann,
        source: DerivativeSource::Analytic,
    })
}

/// A model together with its geometry at one base point.
#[derive(Clone, Debug)]
pub struct Site<'a> {
    pub model: &'a BackgroundModel,
    pub geo: LocalGeometry,
}

impl<'a> Site<'a> {
    pub fn new(model: &'a BackgroundModel, x: &[f64], level: Level) -> Result<Self> {
        Ok(Self { model, geo: geometry(model, x, level)? })
    }

    pub fn x(&self) -> &[f64] {
        &self.geo.x
    }

    pub fn dim(&self) -> usize {
        self.geo.dim
    }
}

/// Christoffel symbols `a^i_{kn}` at `x`.
pub fn christoffel(model: &BackgroundModel, x: &[f64]) -> Result<Array3<f64>> {
    Ok(geometry(model, x, Level::Connection)?.gamma)
}

/// Riemann tensor `a_n^i_{km}` at `x`.
pub fn riemann(model: &BackgroundModel, x: &[f64]) -> Result<Array4<f64>> {
    Ok(geometry(model, x, Level::Curvature)?.riemann.expect("curvature level"))
}

/// Covariant derivative of the Riemann tensor from exact third derivatives
/// of the metric.
pub fn nabla_riemann(model: &BackgroundModel, x: &[f64]) -> Result<(Array5<f64>, DerivativeSource)> {
    let geo = geometry(model, x, Level::CurvatureDerivative)?;
    Ok((geo.nabla_riemann.expect("derivative level"), DerivativeSource::Analytic))
}

/// Covariant derivative of the Riemann tensor with `d_k` replaced by
/// Richardson-extrapolated central differences of the curvature level.
pub fn nabla_riemann_fd(model: &BackgroundModel, x: &[f64], step: f64) -> Result<(Array5<f64>, DerivativeSource)> {
    let n = model.dim;
    let geo = geometry(model, x, Level::Curvature)?;
    let grads = fd::gradient(x, step, |xs| Ok(riemann(model, xs)?.iter().copied().collect()))?;
    let r = geo.riemann();
    let deriv = |k: usize, h: usize, t: usize, i: usize, j: usize| grads[k][((h * n + t) * n + i) * n + j];
    Ok((nabla_riemann_from(&deriv, r, &geo.gamma), DerivativeSource::FiniteDifference))
}

/// Covariant derivative `nabla_i b_m` at `x`, stored as `[[i, m]]`.
pub fn nabla_b(model: &BackgroundModel, x: &[f64]) -> Result<Array2<f64>> {
    Ok(geometry(model, x, Level::Connection)?.nabla_b)
}

/// `arccos` of the normalised background inner product.
pub fn riemannian_angle(model: &BackgroundModel, x: &[f64], t1: &[f64], t2: &[f64]) -> Result<f64> {
    let geo = geometry(model, x, Level::Connection)?;
    angle_in(&geo, t1, t2)
}

/// Background angle between two vectors at a prepared point.
pub fn angle_in(geo: &LocalGeometry, t1: &[f64], t2: &[f64]) -> Result<f64> {
    let (n1, n2) = (geo.norm(t1), geo.norm(t2));
    if n1 == 0.0 || n2 == 0.0 {
        return Err(GeomError::ZeroVector);
    }
    let cos = geo.inner(t1, t2) / (n1 * n2);
    Ok(cos.clamp(-1.0, 1.0).acos())
}

/// Residual of the cyclic identity
/// `nabla_k a_m^n_{ij} + nabla_j a_m^n_{ki} + nabla_i a_m^n_{jk}`.
pub fn second_bianchi_residual(nr: &Array5<f64>) -> f64 {
    let n = nr.dim().0;
    let mut worst = 0.0f64;
    for k in 0..n {
        for m in 0..n {
            for p in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        let s = nr[[k, m, p, i, j]] + nr[[j, m, p, k, i]] + nr[[i, m, p, j, k]];
                        worst = worst.max(s.abs());
                    }
                }
            }
        }
    }
    worst
}

/// Base curve `x(s)`, `s in [0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum CurvePath {
    /// Circle of the given radius in the coordinate plane `(p, q)`.
    Circle { center: Vec<f64>, radius: f64, plane: (usize, usize) },
    /// Straight segment.
    Line { from: Vec<f64>, to: Vec<f64> },
}

impl CurvePath {
    pub fn closed(&self) -> bool {
        matches!(self, CurvePath::Circle { .. })
    }

    pub fn dim(&self) -> usize {
        match self {
            CurvePath::Circle { center, .. } => center.len(),
            CurvePath::Line { from, .. } => from.len(),
        }
    }

    pub fn point(&self, s: f64) -> Vec<f64> {
        match self {
            CurvePath::Circle { center, radius, plane } => {
                let mut x = center.clone();
                let th = 2.0 * PI * s;
                x[plane.0] += radius * th.cos();
                x[plane.1] += radius * th.sin();
                x
            }
            CurvePath::Line { from, to } => from.iter().zip(to).map(|(a, b)| a + s * (b - a)).collect(),
        }
    }

    pub fn velocity(&self, s: f64) -> Vec<f64> {
        match self {
            CurvePath::Circle { center, radius, plane } => {
                let mut v = vec![0.0; center.len()];
                let th = 2.0 * PI * s;
                v[plane.0] = -2.0 * PI * radius * th.sin();
                v[plane.1] = 2.0 * PI * radius * th.cos();
                v
            }
            CurvePath::Line { from, to } => from.iter().zip(to).map(|(a, b)| b - a).collect(),
        }
    }

    /// Area enclosed by a circle, zero for open curves.
    pub fn enclosed_area(&self) -> f64 {
        match self {
            CurvePath::Circle { radius, .. } => PI * radius * radius,
            CurvePath::Line { .. } => 0.0,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(GeomError::InvalidModel(format!("curve lives in {} dimensions, model in {dim}", self.dim())));
        }
        match self {
            CurvePath::Circle { radius, plane, .. } => {
                if *radius <= 0.0 || plane.0 == plane.1 || plane.0 >= dim || plane.1 >= dim {
                    return Err(GeomError::InvalidModel("degenerate circle".into()));
                }
            }
            CurvePath::Line { to, .. } => {
                if to.len() != dim {
                    return Err(GeomError::InvalidModel("line endpoints differ in dimension".into()));
                }
            }
        }
        Ok(())
    }

    /// Largest mismatch between the stated velocity and a central difference
    /// of the position, sampled on a uniform grid.
    pub fn velocity_consistency(&self, samples: usize) -> f64 {
        let h = 1e-6;
        (0..samples)
            .map(|k| {
                let s = (k as f64 + 0.5) / samples as f64;
                let (p, m) = (self.point(s + h), self.point(s - h));
                let v = self.velocity(s);
                p.iter().zip(&m).zip(&v).map(|((a, b), v)| ((a - b) / (2.0 * h) - v).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const X: [f64; 4] = [0.2, -0.1, 0.3, 0.15];

    fn curved(dim: usize, c: f64) -> Vec<BackgroundModel> {
        vec![
            BackgroundModel::conformal(dim, c, 0.5).unwrap(),
            BackgroundModel::constant_curvature(dim, c, 0.5).unwrap(),
            BackgroundModel::perturbed(dim, c, 0.5).unwrap(),
        ]
    }

    fn max_abs<D: ndarray::Dimension>(t: &ndarray::Array<f64, D>) -> f64 {
        t.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    #[test]
    fn euclidean_models_are_flat() {
        for m in [BackgroundModel::flat(3, 1.0, 0.5).unwrap(), BackgroundModel::rotating(4, 0.7, 0.5).unwrap()] {
            let geo = geometry(&m, &X[..m.dim], Level::CurvatureDerivative).unwrap();
            assert_eq!(max_abs(&geo.gamma), 0.0);
            assert_eq!(max_abs(geo.riemann()), 0.0);
            assert_eq!(max_abs(geo.nabla_riemann()), 0.0);
        }
    }

    #[test]
    fn christoffel_matches_metric_differences() {
        for m in curved(4, 1.0) {
            let n = m.dim;
            let geo = geometry(&m, &X, Level::Connection).unwrap();
            let da = fd::gradient(&X, 1e-3, |xs| Ok(m.metric::<f64>(xs).values().iter().copied().collect())).unwrap();
            let d = |k: usize, i: usize, j: usize| da[k][i * n + j];
            for i in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let v: f64 = (0..n).map(|s| 0.5 * geo.a_inv[[i, s]] * (d(k, s, l) + d(l, s, k) - d(s, k, l))).sum();
                        assert!((v - geo.gamma[[i, k, l]]).abs() < 1e-9, "{:?}", m.kind);
                    }
                }
            }
        }
    }

    #[test]
    fn metric_is_parallel() {
        for m in curved(3, 1.0) {
            let n = m.dim;
            let geo = geometry(&m, &X[..n], Level::Connection).unwrap();
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        let v = geo.da[[k, i, j]]
                            - (0..n).map(|s| geo.a[[s, j]] * geo.gamma[[s, k, i]] + geo.a[[i, s]] * geo.gamma[[s, k, j]]).sum::<f64>();
                        assert!(v.abs() < 1e-13);
                    }
                }
            }
        }
    }

    #[test]
    fn round_metric_has_constant_curvature() {
        let m = BackgroundModel::constant_curvature(4, 1.0, 0.0).unwrap();
        let k = match m.kind {
            ModelKind::ConstantCurvature { curvature } => curvature,
            _ => unreachable!(),
        };
        let geo = geometry(&m, &X, Level::CurvatureDerivative).unwrap();
        let r = geo.riemann_lower();
        let a = &geo.a;
        let expect = Array4::from_shape_fn((4, 4, 4, 4), |(h, l, i, j)| k * (a[[h, j]] * a[[l, i]] - a[[h, i]] * a[[l, j]]));
        assert!(max_abs(&(&r - &expect)) < 1e-13);
        assert!(max_abs(geo.nabla_riemann()) < 1e-12);
    }

    #[test]
    fn bianchi_identities_and_pair_symmetry() {
        for m in curved(4, 1.0) {
            let n = m.dim;
            let geo = geometry(&m, &X, Level::CurvatureDerivative).unwrap();
            let r = geo.riemann_lower();
            let scale = max_abs(&r).max(1.0);
            for h in 0..n {
                for l in 0..n {
                    for i in 0..n {
                        for j in 0..n {
                            let cyc = r[[h, l, i, j]] + r[[h, i, j, l]] + r[[h, j, l, i]];
                            assert!(cyc.abs() < 1e-12 * scale);
                            assert!((r[[h, l, i, j]] - r[[i, j, h, l]]).abs() < 1e-12 * scale);
                            assert!((r[[h, l, i, j]] + r[[l, h, i, j]]).abs() < 1e-12 * scale);
                        }
                    }
                }
            }
            assert!(second_bianchi_residual(geo.nabla_riemann()) < 1e-11 * scale, "{:?}", m.kind);
        }
    }

    #[test]
    fn difference_fallback_agrees_and_is_flagged() {
        let m = BackgroundModel::perturbed(3, 1.0, 0.5).unwrap();
        let (exact, src) = nabla_riemann(&m, &X[..3]).unwrap();
        let (approx, fd_src) = nabla_riemann_fd(&m, &X[..3], fd::DEFAULT_STEP * 100.0).unwrap();
        assert_eq!(src, DerivativeSource::Analytic);
        assert_eq!(fd_src, DerivativeSource::FiniteDifference);
        assert!(max_abs(&(&exact - &approx)) < 1e-7);
    }

    #[test]
    fn one_form_has_constant_norm() {
        for c in [1.0, 0.6] {
            for m in curved(3, c).into_iter().chain([BackgroundModel::rotating(3, c, 0.5).unwrap()]) {
                let geo = geometry(&m, &X[..3], Level::Connection).unwrap();
                assert!((geo.b.dot(&geo.b_up) - c * c).abs() < 1e-14);
                let along = geo.nabla_b.dot(&geo.b_up);
                assert!(along.iter().all(|v| v.abs() < 1e-13), "{:?}", m.kind);
            }
        }
    }

    #[test]
    fn rotating_field_is_not_parallel() {
        let m = BackgroundModel::rotating(3, 1.0, 0.5).unwrap();
        assert!(max_abs(&nabla_b(&m, &X[..3]).unwrap()) > 0.1);
    }

    #[test]
    fn curves_are_consistent() {
        let c = CurvePath::Circle { center: vec![0.1, 0.0, 0.2], radius: 0.5, plane: (0, 2) };
        assert!(c.velocity_consistency(64) < 1e-8);
        assert!(c.point(0.0).iter().zip(c.point(1.0)).all(|(a, b)| (a - b).abs() < 1e-14));
        let l = CurvePath::Line { from: vec![0.0; 3], to: vec![1.0, 2.0, 3.0] };
        assert!(l.velocity_consistency(16) < 1e-8 && !l.closed() && l.enclosed_area() == 0.0);
        assert!(c.validate(4).is_err());
    }

    #[test]
    fn validation_messages() {
        let e = BackgroundModel::flat(3, 1.0, 2.0).unwrap_err();
        assert!(e.to_string().contains("g out of (-2,2)"));
        assert!(BackgroundModel::flat(3, 0.0, 0.5).is_err());
        assert!(BackgroundModel::flat(3, 1.2, 0.5).is_err());
        assert!(BackgroundModel::flat(2, 1.0, 0.5).is_err());
        assert!(BackgroundModel::new(3, ModelKind::Rotating { wave: vec![1.0] }, 1.0, 0.5).is_err());
    }
}
