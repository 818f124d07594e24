//! The Finsleroid metric function `K(x, y)` and the fiber objects derived
//! from it: covariant tangent vector, metric tensor, Cartan tensor, unit
//! vectors, the frame vector `m` and the projector onto the complement of
//! `{l, m}`.
//!
//! The scalar formulas are generic over [`Scalar`], so the same code yields
//! values, fiber derivatives (jets in `y`) and base-point derivatives (jets
//! in `x`).

use std::f64::consts::PI;

use ndarray::{Array1, Array2, Array3, Array4};

use crate::background::{LocalGeometry, PointFields};
use crate::check::{id, Identity};
use crate::error::{GeomError, Result};
use crate::jets::{lift, Jet, Scalar};
use crate::linalg::{self, dot};

/// Relative pole guard: `q~ >= POLE_EPS * |y|_a`.
pub const POLE_EPS: f64 = 1e-6;

/// Scalars shared by every Finsleroid formula.
#[derive(Clone, Debug)]
pub struct Scalars<S> {
    /// `b_i y^i`.
    pub b: S,
    /// `a_ij y^i y^j`.
    pub s2: S,
    /// `q~ = sqrt(S^2 - b^2 / c^2)`.
    pub qt: S,
    /// `b / c`.
    pub bt: S,
    /// `A = b + g q~ / 2`.
    pub a_cap: S,
    /// `L = q~ + g b / 2`.
    pub l_cap: S,
    /// `B = b^2 + g b q~ + q~^2`.
    pub bb: S,
    pub chi: S,
    /// `J = exp(-g chi / 2)`.
    pub j: S,
    /// `K = sqrt(B) J`.
    pub k: S,
    /// `u_i = a_ij y^j`.
    pub u: Vec<S>,
}

impl<S: Scalar> Scalars<S> {
    /// `v~^m = y^m - b~ b~^m`.
    pub fn v_tilde(&self, f: &PointFields<S>, y: &[S]) -> Vec<S> {
        let c = f.c;
        y.iter().zip(&f.b_up).map(|(yi, bi)| yi.clone() - self.bt.clone() * bi.clone() / c).collect()
    }
}

fn chi_from<S: Scalar>(l_cap: S, b: S, g: f64, h: f64) -> S {
    let mut theta = l_cap.atan2(b * h);
    if theta.value() < -0.5 * PI {
        theta = theta + 2.0 * PI;
    }
    (theta - (0.5 * g / h).atan()) / h
}

fn scalars_impl<S: Scalar>(f: &PointFields<S>, y: &[S], guard: bool) -> Result<Scalars<S>> {
    let (c, g, h) = (f.c, f.g, f.h());
    let u = f.a.mul_vec(y);
    let s2 = dot(y, &u);
    if !(s2.value() > 0.0) {
        return Err(GeomError::ZeroVector);
    }
    let b = dot(&f.b, y);
    let bt = b.clone() / c;
    // Squared length of the part of y transverse to b, taken from the
    // projected vector so that it does not cancel near the axis.
    let v: Vec<S> = y.iter().zip(&f.b_up).map(|(yi, bi)| yi.clone() - bt.clone() * bi.clone() / c).collect();
    let mut qt2 = dot(&v, &f.a.mul_vec(&v));
    let norm = s2.value().sqrt();
    if guard && qt2.value() < (POLE_EPS * norm).powi(2) {
        return Err(GeomError::PoleProximity { qt: qt2.value().max(0.0).sqrt(), norm });
    }
    if qt2.value() < 0.0 {
        qt2 = S::cst(0.0);
    }
    let qt = if guard { qt2.sqrt() } else { S::cst(qt2.value().sqrt()) };
    let a_cap = b.clone() + qt.clone() * (0.5 * g);
    let l_cap = qt.clone() + b.clone() * (0.5 * g);
    let bb = b.clone().square() + b.clone() * qt.clone() * g + qt.clone().square();
    let chi = chi_from(l_cap.clone(), b.clone(), g, h);
    let j = (chi.clone() * (-0.5 * g)).exp();
    let k = bb.clone().sqrt() * j.clone();
    Ok(Scalars { b, s2, qt, bt, a_cap, l_cap, bb, chi, j, k, u })
}

/// Guarded scalar evaluation. Fails inside the pole cones around `+-b`.
pub fn scalars<S: Scalar>(f: &PointFields<S>, y: &[S]) -> Result<Scalars<S>> {
    scalars_impl(f, y, true)
}

/// `K(x, y)`.
pub fn metric_function<S: Scalar>(f: &PointFields<S>, y: &[S]) -> Result<S> {
    Ok(scalars(f, y)?.k)
}

/// Covariant tangent vector `y_i = (1/2) dK^2/dy^i`, written as
/// `J^2 (u_i + g q~ b_i + (1 - 1/c^2) b b_i)`.
pub fn covector_from<S: Scalar>(f: &PointFields<S>, sc: &Scalars<S>) -> Vec<S> {
    let (c, g) = (f.c, f.g);
    let j2 = sc.j.clone().square();
    let coef = sc.qt.clone() * g + sc.b.clone() * (1.0 - 1.0 / (c * c));
    sc.u.iter().zip(&f.b).map(|(ui, bi)| (ui.clone() + coef.clone() * bi.clone()) * j2.clone()).collect()
}

pub fn covector<S: Scalar>(f: &PointFields<S>, y: &[S]) -> Result<Vec<S>> {
    let sc = scalars(f, y)?;
    Ok(covector_from(f, &sc))
}

/// Frame vector `m^m = (q~^2 b^m / c^2 - (b + g q~) v~^m) / (q~ K)`; at
/// `c = 1` the axis term is `q~^2 b~^m`.
pub fn frame_vector<S: Scalar>(f: &PointFields<S>, sc: &Scalars<S>, y: &[S]) -> Vec<S> {
    let c = f.c;
    let v = sc.v_tilde(f, y);
    let q2 = sc.qt.clone().square();
    let coef = sc.b.clone() + sc.qt.clone() * f.g;
    let scale = (sc.qt.clone() * sc.k.clone()).recip();
    f.b_up
        .iter()
        .zip(&v)
        .map(|(bu, vi)| (q2.clone() * bu.clone() / (c * c) - coef.clone() * vi.clone()) * scale.clone())
        .collect()
}

/// All Finsleroid scalars at one `(x, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FinsleroidEval {
    pub b: f64,
    pub q: f64,
    pub qt: f64,
    /// `q / b`.
    pub w: f64,
    /// `q~ / b`.
    pub wt: f64,
    pub a_cap: f64,
    pub l_cap: f64,
    pub bb: f64,
    /// `arccos(A / sqrt(B))`, in `[0, pi]`.
    pub f: f64,
    pub chi: f64,
    pub j: f64,
    pub k: f64,
    pub h: f64,
    /// `1 + g w~ + w~^2`.
    pub tau: f64,
}

fn finish_eval(f: &PointFields<f64>, sc: &Scalars<f64>) -> FinsleroidEval {
    let h = f.h();
    let q = (sc.s2 - sc.b * sc.b).max(0.0).sqrt();
    let wt = sc.qt / sc.b;
    FinsleroidEval {
        b: sc.b,
        q,
        qt: sc.qt,
        w: q / sc.b,
        wt,
        a_cap: sc.a_cap,
        l_cap: sc.l_cap,
        bb: sc.bb,
        // cos f = A / sqrt(B), sin f = h q~ / sqrt(B); atan2 stays accurate on the axis.
        f: (h * sc.qt).atan2(sc.a_cap),
        chi: sc.chi,
        j: sc.j,
        k: sc.k,
        h,
        tau: 1.0 + f.g * wt + wt * wt,
    }
}

/// Guarded evaluation of every scalar.
pub fn eval_scalars(geo: &LocalGeometry, y: &[f64]) -> Result<FinsleroidEval> {
    let f = PointFields::from_geometry(geo);
    let sc = scalars(&f, y)?;
    Ok(finish_eval(&f, &sc))
}

/// Scalar evaluation without the pole guard, valid on the axis `y = +-b`
/// where `K` is still continuous.
pub fn eval_scalars_unguarded(geo: &LocalGeometry, y: &[f64]) -> Result<FinsleroidEval> {
    let f = PointFields::from_geometry(geo);
    let sc = scalars_impl(&f, y, false)?;
    Ok(finish_eval(&f, &sc))
}

/// Fiber objects of the Finsler metric at one `(x, y)`.
///
/// `cartan[[i, j, k]] = C_ijk`, `cartan_mixed[[k, i, j]] = C^k_ij`.
#[derive(Clone, Debug)]
pub struct MetricData {
    pub k: f64,
    pub y: Array1<f64>,
    pub y_lower: Array1<f64>,
    pub g: Array2<f64>,
    pub g_inv: Array2<f64>,
    pub l_lower: Array1<f64>,
    pub l_up: Array1<f64>,
    pub cartan: Array3<f64>,
    pub cartan_mixed: Array3<f64>,
    /// `C_i = g^{mn} C_imn`.
    pub c_vec: Array1<f64>,
    pub m: Array1<f64>,
    /// `g^{mj} - l^m l^j - m^m m^j`.
    pub h_proj: Array2<f64>,
    /// `a^{kn} - b~^k b~^n - v~^k v~^n / q~^2`.
    pub eta: Array2<f64>,
    /// `h_ij = g_ij - l_i l_j`.
    pub angular: Array2<f64>,
    pub bb: f64,
}

/// Covariant vector as order-`order` jets in `y` over a frozen background.
pub fn covector_jets(geo: &LocalGeometry, y: &[f64], order: u8) -> Result<Vec<Jet>> {
    let f = PointFields::constant(geo);
    let yj = lift(y, None, order)?;
    covector(&f, &yj)
}

pub fn metric_data(geo: &LocalGeometry, y: &[f64]) -> Result<MetricData> {
    let n = geo.dim;
    let yl = covector_jets(geo, y, 2)?;
    let g = Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (yl[i].d1(j) + yl[j].d1(i)));
    let cartan = Array3::from_shape_fn((n, n, n), |(i, j, k)| 0.5 * yl[i].d2(j, k));
    let g_inv = linalg::invert(&g).ok_or_else(|| GeomError::NumericalInconsistency("singular Finsler metric".into()))?;
    let f = PointFields::from_geometry(geo);
    let sc = scalars(&f, y)?;
    let k = sc.k;
    let y_lower = Array1::from_iter(yl.iter().map(Jet::val));
    let l_lower = &y_lower / k;
    let l_up = Array1::from(y.to_vec()) / k;
    let cartan_mixed = Array3::from_shape_fn((n, n, n), |(k, i, j)| (0..n).map(|s| g_inv[[k, s]] * cartan[[s, i, j]]).sum());
    let c_vec = Array1::from_shape_fn(n, |i| (0..n).map(|m| cartan_mixed[[m, i, m]]).sum());
    let m = Array1::from(frame_vector(&f, &sc, y));
    let h_proj = Array2::from_shape_fn((n, n), |(a, b)| g_inv[[a, b]] - l_up[a] * l_up[b] - m[a] * m[b]);
    let bt_up = geo.b_tilde_up();
    let v = Array1::from(sc.v_tilde(&f, y));
    let q2 = sc.qt * sc.qt;
    let eta = Array2::from_shape_fn((n, n), |(a, b)| geo.a_inv[[a, b]] - bt_up[a] * bt_up[b] - v[a] * v[b] / q2);
    let angular = Array2::from_shape_fn((n, n), |(i, j)| g[[i, j]] - l_lower[i] * l_lower[j]);
    Ok(MetricData {
        k,
        y: Array1::from(y.to_vec()),
        y_lower,
        g,
        g_inv,
        l_lower,
        l_up,
        cartan,
        cartan_mixed,
        c_vec,
        m,
        h_proj,
        eta,
        angular,
        bb: sc.bb,
    })
}

/// Fiber derivative of the Cartan tensor, `[[i, j, k, l]] = dC_ijk/dy^l`.
pub fn cartan_derivative(geo: &LocalGeometry, y: &[f64]) -> Result<Array4<f64>> {
    let n = geo.dim;
    let yl = covector_jets(geo, y, 3)?;
    Ok(Array4::from_shape_fn((n, n, n, n), |(i, j, k, l)| 0.5 * yl[i].d3(j, k, l)))
}

/// Residuals of positive homogeneity under `y -> k y`: `K` degree 1, `y_i`
/// degree 1, `g_ij` degree 0, `C_ijk` degree -1, plus the Euler identity
/// `y^k dK/dy^k = K`.
#[derive(Clone, Debug, PartialEq)]
pub struct HomogeneityResiduals {
    pub k: f64,
    pub covector: f64,
    pub metric: f64,
    pub cartan: f64,
    pub euler: f64,
}

impl HomogeneityResiduals {
    pub fn max(&self) -> f64 {
        [self.k, self.covector, self.metric, self.cartan, self.euler].into_iter().fold(0.0, f64::max)
    }
}

pub fn homogeneity_check(geo: &LocalGeometry, y: &[f64], factor: f64) -> Result<HomogeneityResiduals> {
    if !(factor > 0.0) {
        return Err(GeomError::Domain(format!("homogeneity factor must be positive, got {factor}")));
    }
    let ky: Vec<f64> = y.iter().map(|v| v * factor).collect();
    let base = metric_data(geo, y)?;
    let scaled = metric_data(geo, &ky)?;
    let y_scaled = &base.y_lower * factor;
    let c_scaled = &base.cartan / factor;
    let f = PointFields::constant(geo);
    let kj = metric_function(&f, &lift(y, None, 1)?)?;
    let euler: f64 = (0..y.len()).map(|i| y[i] * kj.d1(i)).sum::<f64>() - base.k;
    Ok(HomogeneityResiduals {
        k: (scaled.k - factor * base.k).abs() / (factor * base.k).max(1.0),
        covector: linalg::scaled_diff(&scaled.y_lower, &y_scaled),
        metric: linalg::scaled_diff(&scaled.g, &base.g),
        cartan: linalg::scaled_diff(&scaled.cartan, &c_scaled),
        euler: euler.abs() / base.k.max(1.0),
    })
}

/// Identities of the scalars and fiber objects at one `(x, y)`.
pub fn metric_identities(geo: &LocalGeometry, y: &[f64]) -> Result<Vec<Identity>> {
    let n = geo.dim;
    let e = eval_scalars(geo, y)?;
    let md = metric_data(geo, y)?;
    let g = geo.g;
    let yv = Array1::from(y.to_vec());
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    let mut out = vec![
        id("L^2 + h^2 b^2 = B", rel(e.l_cap * e.l_cap + e.h * e.h * e.b * e.b, e.bb)),
        id("B - h^2 q~^2 = A^2", rel(e.bb - e.h * e.h * e.qt * e.qt, e.a_cap * e.a_cap)),
        id("f within [0, pi]", (-e.f).max(e.f - PI).max(0.0).max((e.f.cos() - e.a_cap / e.bb.sqrt()).abs())),
        id("tau identity", {
            let tau = 1.0 + g * e.wt + e.wt * e.wt;
            (tau - e.wt * (g + 2.0 * e.wt - e.wt) - 1.0).abs() / tau.max(1.0)
        }),
        id("g(y, y) = K^2", rel(yv.dot(&md.g.dot(&yv)), md.k * md.k)),
        id("covector equals g y", linalg::scaled_diff(&md.g.dot(&yv), &md.y_lower)),
        id("g times inverse is identity", linalg::scaled_diff(&md.g.dot(&md.g_inv), &Array2::eye(n))),
        id("l_i l^i = 1", (md.l_lower.dot(&md.l_up) - 1.0).abs()),
        id("m orthogonal to l", md.m.dot(&md.l_lower).abs()),
        id("m has unit length", (md.m.dot(&md.g.dot(&md.m)) - 1.0).abs()),
        id("projector equals scaled eta", linalg::scaled_diff(&md.h_proj, &(&md.eta * (md.bb / (md.k * md.k))))),
    ];
    let cy = Array2::from_shape_fn((n, n), |(i, j)| (0..n).map(|k| md.cartan[[i, j, k]] * y[k]).sum::<f64>());
    let cscale = linalg::max_abs(&md.cartan).max(1.0) * linalg::max_abs(y.iter()).max(1.0);
    out.push(id("Cartan tensor annihilates y", linalg::max_abs(&cy) / cscale));
    let mut sym = 0.0f64;
    for ((i, j, k), v) in md.cartan.indexed_iter() {
        sym = sym.max((v - md.cartan[[j, i, k]]).abs()).max((v - md.cartan[[i, k, j]]).abs());
    }
    out.push(id("Cartan tensor totally symmetric", sym / linalg::max_abs(&md.cartan).max(1.0)));
    let c_up = md.g_inv.dot(&md.c_vec);
    let c_norm = md.c_vec.dot(&c_up).sqrt();
    out.push(id(
        "m along the Cartan vector",
        // C^m points along g m, so the sign flips with the charge.
        if g == 0.0 { 0.0 } else { linalg::scaled_diff(&md.m, &(&c_up * (g.signum() / c_norm))) },
    ));
    let a_cap = &md.c_vec * md.k;
    out.push(id("squared norm of A", rel(a_cap.dot(&md.g_inv.dot(&a_cap)), (n * n) as f64 * g * g / 4.0)));
    let det_expected = geo.c * geo.c * (md.k * md.k / md.bb).powi(n as i32) * linalg::determinant(&geo.a);
    out.push(id("determinant of g", (linalg::determinant(&md.g) / det_expected - 1.0).abs()));
    out.push(id("metric tensor positive definite", if linalg::symmetric_eigenvalues(&md.g)[0] > 0.0 { 0.0 } else { 1.0 }));
    let mut hom = 0.0f64;
    let mut euler = 0.0f64;
    for factor in [0.5, 2.0, 7.0] {
        let r = homogeneity_check(geo, y, factor)?;
        hom = hom.max(r.k).max(r.covector).max(r.metric).max(r.cartan);
        euler = euler.max(r.euler);
    }
    out.push(id("positive homogeneity", hom));
    out.push(id("Euler identity for K", euler));
    Ok(out)
}

/// Axis values of `K` and `f`: exact on `+-b`, and along rays that reach
/// the axis with `q~ = offset` (tested with the relaxed near-pole budget).
///
/// `toward` picks the transverse direction of the ray; it must not be
/// parallel to `b`.
pub fn axis_identities(geo: &LocalGeometry, toward: &[f64], offset: f64) -> Result<Vec<Identity>> {
    let c2 = geo.c * geo.c;
    let b = geo.b_up.to_vec();
    let neg: Vec<f64> = b.iter().map(|v| -v).collect();
    let on = eval_scalars_unguarded(geo, &b)?;
    let opposite = eval_scalars_unguarded(geo, &neg)?;
    // Transverse unit vector: remove the b component in the background metric.
    let along = geo.inner(toward, &b) / c2;
    let v: Vec<f64> = toward.iter().zip(&b).map(|(t, bi)| t - along * bi).collect();
    let vn = geo.norm(&v);
    if !(vn > 0.0) {
        return Err(GeomError::Domain("ray direction parallel to the axis".into()));
    }
    let ray = |sign: f64| -> Vec<f64> { b.iter().zip(&v).map(|(bi, vi)| sign * bi + offset * vi / vn).collect() };
    let near = eval_scalars(geo, &ray(1.0))?;
    let near_opp = eval_scalars(geo, &ray(-1.0))?;
    Ok(vec![
        id("K on the axis", (on.k - c2).abs() / c2),
        id("f on the axis", on.f.abs()),
        id("f opposite the axis", (opposite.f - PI).abs()),
        id("K near the axis", (near.k - c2).abs() / c2),
        id("f near the axis", near.f.abs()),
        id("f near the opposite axis", (near_opp.f - PI).abs()),
    ])
}
