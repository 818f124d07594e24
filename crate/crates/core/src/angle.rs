//! Two-vector angle `alpha = arccos(lambda) / h` and its derivatives.
//!
//! `lambda` is the background cosine of the images `t(y1)`, `t(y2)`. Fiber
//! derivatives come three ways: the closed Finsleroid expressions (unit-norm
//! 1-form only), jets through the map, and the contraction of the map
//! Jacobian with the background gradient of `lambda`.

use ndarray::{Array1, Array2};

use crate::automorphism::{t_jacobian, t_map, t_map_generic};
use crate::background::{BackgroundModel, LocalGeometry, PointFields, Site};
use crate::connection::connection_data;
use crate::error::{GeomError, Result};
use crate::finsleroid::{eval_scalars, metric_data};
use crate::jets::{lift_block, Scalar};
use crate::linalg;

/// How far `lambda` may leave `[-1, 1]` before it counts as an error.
pub const CLAMP_GUARD: f64 = 1e-9;

/// Step in `g` for the finite-difference `dlambda/dg`.
pub const G_STEP: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct AngleData {
    pub t1: Array1<f64>,
    pub t2: Array1<f64>,
    pub s1: f64,
    pub s2: f64,
    /// Unclamped cosine.
    pub lambda: f64,
    pub alpha: f64,
    /// `q + g b / 2` for each vector.
    pub sigma1: f64,
    pub sigma2: f64,
    /// `q K^2 sigma / (N g B)`; absent at `g = 0`.
    pub z1: Option<f64>,
    pub z2: Option<f64>,
    /// `r_in y1^i y2^n` with `r = a - b b`.
    pub v12: f64,
}

/// `lambda` over a generic scalar.
pub fn lambda_generic<S: Scalar>(f: &PointFields<S>, y1: &[S], y2: &[S]) -> Result<S> {
    let t1 = t_map_generic(f, y1)?;
    let t2 = t_map_generic(f, y2)?;
    let s1 = f.a.quad(&t1, &t1).sqrt();
    let s2 = f.a.quad(&t2, &t2).sqrt();
    Ok(f.a.quad(&t1, &t2) / (s1 * s2))
}

/// Clamp into `[-1, 1]`, refusing values further out than the guard.
pub fn clamp_lambda(lambda: f64) -> Result<f64> {
    if !lambda.is_finite() || lambda.abs() > 1.0 + CLAMP_GUARD {
        return Err(GeomError::NumericalInconsistency(format!("cosine out of range: {lambda}")));
    }
    Ok(lambda.clamp(-1.0, 1.0))
}

fn v_pair(geo: &LocalGeometry, y1: &[f64], y2: &[f64]) -> f64 {
    geo.inner(y1, y2) - linalg::dot(geo.b.as_slice().expect("contiguous"), y1) * linalg::dot(geo.b.as_slice().expect("contiguous"), y2)
}

pub fn two_vector_angle(geo: &LocalGeometry, y1: &[f64], y2: &[f64]) -> Result<AngleData> {
    let t1 = t_map(geo, y1)?;
    let t2 = t_map(geo, y2)?;
    let s1 = geo.norm(t1.as_slice().expect("contiguous"));
    let s2 = geo.norm(t2.as_slice().expect("contiguous"));
    let lambda = geo.inner(t1.as_slice().expect("contiguous"), t2.as_slice().expect("contiguous")) / (s1 * s2);
    let alpha = clamp_lambda(lambda)?.acos() / geo.h();
    let e1 = eval_scalars(geo, y1)?;
    let e2 = eval_scalars(geo, y2)?;
    let g = geo.g;
    let sigma1 = e1.qt + 0.5 * g * e1.b;
    let sigma2 = e2.qt + 0.5 * g * e2.b;
    let n = geo.dim as f64;
    let z = |e: &crate::finsleroid::FinsleroidEval, s: f64| (g != 0.0).then(|| e.qt * e.k * e.k * s / (n * g * e.bb));
    Ok(AngleData {
        t1,
        t2,
        s1,
        s2,
        lambda,
        alpha,
        sigma1,
        sigma2,
        z1: z(&e1, sigma1),
        z2: z(&e2, sigma2),
        v12: v_pair(geo, y1, y2),
    })
}

/// Angle at a point of a model.
pub fn angle(model: &BackgroundModel, x: &[f64], y1: &[f64], y2: &[f64]) -> Result<f64> {
    let geo = crate::background::geometry(model, x, crate::background::Level::Connection)?;
    Ok(two_vector_angle(&geo, y1, y2)?.alpha)
}

/// `(dlambda/dy1, dlambda/dy2)` as covectors.
#[derive(Clone, Debug)]
pub struct LambdaGradient {
    pub dy1: Array1<f64>,
    pub dy2: Array1<f64>,
}

impl LambdaGradient {
    pub fn max_diff(&self, other: &Self) -> f64 {
        linalg::scaled_diff(&self.dy1, &other.dy1).max(linalg::scaled_diff(&self.dy2, &other.dy2))
    }
}

/// Jets through the map over a frozen background.
pub fn dlambda_dy_jets(geo: &LocalGeometry, y1: &[f64], y2: &[f64]) -> Result<LambdaGradient> {
    let n = geo.dim;
    let f = PointFields::constant(geo);
    let j1 = lift_block(y1, 0, 2 * n, 1)?;
    let j2 = lift_block(y2, n, 2 * n, 1)?;
    let l = lambda_generic(&f, &j1, &j2)?;
    Ok(LambdaGradient {
        dy1: Array1::from_shape_fn(n, |k| l.d1(k)),
        dy2: Array1::from_shape_fn(n, |k| l.d1(n + k)),
    })
}

/// Background gradient of `lambda` in `t`, pulled back by the map Jacobian.
pub fn dlambda_dy_generic(geo: &LocalGeometry, y1: &[f64], y2: &[f64]) -> Result<LambdaGradient> {
    let ad = two_vector_angle(geo, y1, y2)?;
    let j1 = t_jacobian(geo, y1)?;
    let j2 = t_jacobian(geo, y2)?;
    let t1l = geo.lower(ad.t1.as_slice().expect("contiguous"));
    let t2l = geo.lower(ad.t2.as_slice().expect("contiguous"));
    let w1 = &t2l / (ad.s1 * ad.s2) - &t1l * (ad.lambda / (ad.s1 * ad.s1));
    let w2 = &t1l / (ad.s1 * ad.s2) - &t2l * (ad.lambda / (ad.s2 * ad.s2));
    Ok(LambdaGradient { dy1: w1.dot(&j1), dy2: w2.dot(&j2) })
}

fn require_unit_norm(geo: &LocalGeometry) -> Result<()> {
    if (geo.c - 1.0).abs() > 1e-14 {
        return Err(GeomError::RequiresUnitNorm(geo.c));
    }
    Ok(())
}

/// Closed Finsleroid expressions for both fiber gradients.
pub fn dlambda_dy_closed(geo: &LocalGeometry, y1: &[f64], y2: &[f64]) -> Result<LambdaGradient> {
    require_unit_norm(geo)?;
    let h2 = geo.h().powi(2);
    let g = geo.g;
    let e1 = eval_scalars(geo, y1)?;
    let e2 = eval_scalars(geo, y2)?;
    let v12 = v_pair(geo, y1, y2);
    let bl = &geo.b;
    let v1 = geo.lower(y1) - bl * e1.b;
    let v2 = geo.lower(y2) - bl * e2.b;
    let side = |ea: &crate::finsleroid::FinsleroidEval, eb: &crate::finsleroid::FinsleroidEval, va: &Array1<f64>, vb: &Array1<f64>| {
        let den = ea.bb * ea.bb.sqrt() * eb.bb.sqrt();
        Array1::from_shape_fn(geo.dim, |k| {
            let num = ea.bb * vb[k] + ea.q * ea.q * bl[k] * eb.a_cap
                - ea.b * eb.a_cap * va[k]
                - v12 * (h2 * va[k] + (bl[k] + 0.5 * g * va[k] / ea.q) * ea.a_cap);
            h2 * num / den
        })
    };
    Ok(LambdaGradient { dy1: side(&e1, &e2, &v1, &v2), dy2: side(&e2, &e1, &v2, &v1) })
}

/// Closed expressions for `b^k dlambda/dy1^k` and `b^k dlambda/dy2^k`.
pub fn b_contractions_closed(geo: &LocalGeometry, y1: &[f64], y2: &[f64]) -> Result<(f64, f64)> {
    require_unit_norm(geo)?;
    let h2 = geo.h().powi(2);
    let e1 = eval_scalars(geo, y1)?;
    let e2 = eval_scalars(geo, y2)?;
    let v12 = v_pair(geo, y1, y2);
    let den1 = e1.bb * e1.bb.sqrt() * e2.bb.sqrt();
    let den2 = e2.bb * e1.bb.sqrt() * e2.bb.sqrt();
    Ok((
        h2 * (e1.q * e1.q * e2.a_cap - v12 * e1.a_cap) / den1,
        h2 * (e2.q * e2.q * e1.a_cap - v12 * e2.a_cap) / den2,
    ))
}

/// `dlambda/dg` by central differences in `g` at fixed background.
pub fn dlambda_dg_fd(model: &BackgroundModel, x: &[f64], y1: &[f64], y2: &[f64], step: f64) -> Result<f64> {
    let d = crate::fd::derivative(model.g, step, |g| {
        let m = model.with_g(g);
        let geo = crate::background::geometry(&m, x, crate::background::Level::Connection)?;
        Ok(vec![two_vector_angle(&geo, y1, y2)?.lambda])
    })?;
    Ok(d[0])
}

/// The two closed expressions for `dlambda/dg`: the direct one and the one
/// written through `sigma`.
pub fn dlambda_dg_closed(geo: &LocalGeometry, y1: &[f64], y2: &[f64]) -> Result<(f64, f64)> {
    require_unit_norm(geo)?;
    let ad = two_vector_angle(geo, y1, y2)?;
    let e1 = eval_scalars(geo, y1)?;
    let e2 = eval_scalars(geo, y2)?;
    let g = geo.g;
    let root = e1.bb.sqrt() * e2.bb.sqrt();
    let direct = -0.5 * (e1.b * e1.q / e1.bb + e2.b * e2.q / e2.bb) * ad.lambda
        + (e1.q * e2.a_cap + e2.q * e1.a_cap - g * ad.v12) / (2.0 * root);
    let (s1, s2) = (ad.sigma1, ad.sigma2);
    let via_sigma = (e1.q * e1.q * e2.a_cap / e1.bb * s1 + e2.q * e2.q * e1.a_cap / e2.bb * s2
        - ad.v12 * (e1.a_cap / e1.bb * s1 + e2.a_cap / e2.bb * s2))
        / (2.0 * root);
    Ok((direct, via_sigma))
}

/// Right-hand sides of the `g`-derivative relation: the `b`-contracted
/// `sigma` form and the Cartan-vector `z` form (absent at `g = 0`).
pub fn dg_relation(geo: &LocalGeometry, y1: &[f64], y2: &[f64]) -> Result<(f64, Option<f64>)> {
    let ad = two_vector_angle(geo, y1, y2)?;
    let grad = dlambda_dy_jets(geo, y1, y2)?;
    let h2 = geo.h().powi(2);
    let bu = &geo.b_up;
    let sigma_form = (ad.sigma1 * bu.dot(&grad.dy1) + ad.sigma2 * bu.dot(&grad.dy2)) / (2.0 * h2);
    let z_form = match (ad.z1, ad.z2) {
        (Some(z1), Some(z2)) => {
            let c1 = cartan_vector_up(geo, y1)?;
            let c2 = cartan_vector_up(geo, y2)?;
            Some((z1 * c1.dot(&grad.dy1) + z2 * c2.dot(&grad.dy2)) / h2)
        }
        _ => None,
    };
    Ok((sigma_form, z_form))
}

fn cartan_vector_up(geo: &LocalGeometry, y: &[f64]) -> Result<Array1<f64>> {
    let md = metric_data(geo, y)?;
    Ok(md.g_inv.dot(&md.c_vec))
}

/// `d_i lambda` with the default connection of the model; one entry per
/// base direction. The base derivative at fixed `y1`, `y2` is exact.
pub fn angle_equation_residual(site: &Site, y1: &[f64], y2: &[f64]) -> Result<Array1<f64>> {
    let n = site.dim();
    let nv = 3 * n;
    let f = PointFields::x_jets(site.model, site.x(), nv, 1)?;
    let j1 = lift_block(y1, n, nv, 1)?;
    let j2 = lift_block(y2, 2 * n, nv, 1)?;
    let l = lambda_generic(&f, &j1, &j2)?;
    let n1 = connection_data(site, y1)?.n;
    let n2 = connection_data(site, y2)?.n;
    Ok(Array1::from_shape_fn(n, |i| {
        let mut v = l.d1(i);
        for k in 0..n {
            v += n1[[k, i]] * l.d1(n + k) + n2[[k, i]] * l.d1(2 * n + k);
        }
        v
    }))
}

/// `|alpha - alpha'|` where `alpha'` is evaluated in coordinates changed by
/// the linear map `y = R y'` applied to the fiber objects and both vectors.
pub fn isometry_residual(geo: &LocalGeometry, y1: &[f64], y2: &[f64], r: &Array2<f64>) -> Result<f64> {
    let ri = linalg::invert(r).ok_or_else(|| GeomError::NumericalInconsistency("singular frame change".into()))?;
    let mut g2 = geo.clone();
    g2.a = r.t().dot(&geo.a).dot(r);
    g2.a_inv = ri.dot(&geo.a_inv).dot(&ri.t());
    g2.b = r.t().dot(&geo.b);
    g2.b_up = ri.dot(&geo.b_up);
    let p1 = ri.dot(&Array1::from(y1.to_vec()));
    let p2 = ri.dot(&Array1::from(y2.to_vec()));
    let a = two_vector_angle(geo, y1, y2)?.alpha;
    let b = two_vector_angle(&g2, p1.as_slice().expect("contiguous"), p2.as_slice().expect("contiguous"))?.alpha;
    Ok((a - b).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::{angle_in, geometry, Level};

    const X: [f64; 3] = [0.2, -0.3, 0.4];
    const Y1: [f64; 3] = [0.4, 0.9, -0.5];
    const Y2: [f64; 3] = [-0.7, 0.3, 0.8];

    fn geo(model: &BackgroundModel) -> LocalGeometry {
        geometry(model, &X, Level::Connection).unwrap()
    }

    #[test]
    fn ray_has_zero_angle() {
        let g = geo(&BackgroundModel::conformal(3, 1.0, 1.1).unwrap());
        let y2: Vec<f64> = Y1.iter().map(|v| 2.0 * v).collect();
        let ad = two_vector_angle(&g, &Y1, &y2).unwrap();
        assert!((ad.lambda - 1.0).abs() < 1e-12);
        assert!(ad.alpha.abs() < 1e-5);
    }

    #[test]
    fn riemannian_limit_and_scaling() {
        let m = BackgroundModel::perturbed(3, 1.0, 0.0).unwrap();
        let g = geo(&m);
        let a = two_vector_angle(&g, &Y1, &Y2).unwrap();
        assert!((a.alpha - angle_in(&g, &Y1, &Y2).unwrap()).abs() < 1e-12);
        let m = m.with_g(1.3);
        let g = geo(&m);
        let a = two_vector_angle(&g, &Y1, &Y2).unwrap();
        let riem = angle_in(&g, a.t1.as_slice().unwrap(), a.t2.as_slice().unwrap()).unwrap();
        assert!((a.alpha - riem / g.h()).abs() < 1e-12);
    }

    #[test]
    fn gradient_routes_agree() {
        let g = geo(&BackgroundModel::rotating(3, 1.0, 0.8).unwrap());
        let jet = dlambda_dy_jets(&g, &Y1, &Y2).unwrap();
        let gen = dlambda_dy_generic(&g, &Y1, &Y2).unwrap();
        let closed = dlambda_dy_closed(&g, &Y1, &Y2).unwrap();
        assert!(jet.max_diff(&gen) < 1e-12);
        assert!(jet.max_diff(&closed) < 1e-12, "{}", jet.max_diff(&closed));
        assert!(jet.dy1.dot(&Array1::from(Y1.to_vec())).abs() < 1e-13);
        let (c1, c2) = b_contractions_closed(&g, &Y1, &Y2).unwrap();
        assert!((c1 - g.b_up.dot(&jet.dy1)).abs() < 1e-12);
        assert!((c2 - g.b_up.dot(&jet.dy2)).abs() < 1e-12);
    }

    #[test]
    fn g_derivative_relation() {
        let m = BackgroundModel::conformal(3, 1.0, 0.5).unwrap();
        let g = geo(&m);
        let fd = dlambda_dg_fd(&m, &X, &Y1, &Y2, G_STEP).unwrap();
        let (direct, sig) = dlambda_dg_closed(&g, &Y1, &Y2).unwrap();
        let (sform, zform) = dg_relation(&g, &Y1, &Y2).unwrap();
        assert!((fd - direct).abs() < 1e-8, "{fd} {direct}");
        assert!((direct - sig).abs() < 1e-12);
        assert!((direct - sform).abs() < 1e-12);
        assert!((sform - zform.unwrap()).abs() < 1e-12);
        let ad = two_vector_angle(&g, &Y1, &Y2).unwrap();
        let e1 = eval_scalars(&g, &Y1).unwrap();
        assert!((ad.sigma1 - (0.5 * g.g * e1.a_cap + g.h().powi(2) * e1.q)).abs() < 1e-12);
    }

    #[test]
    fn angle_is_preserved_by_the_connection() {
        for c in [1.0, 0.7] {
            let m = BackgroundModel::perturbed(3, c, 1.1).unwrap();
            let site = Site::new(&m, &X, Level::Connection).unwrap();
            let r = angle_equation_residual(&site, &Y1, &Y2).unwrap();
            assert!(linalg::max_abs(r.iter()) < 1e-12, "c={c}: {r}");
        }
    }

    #[test]
    fn rotation_invariance() {
        let g = geo(&BackgroundModel::flat(3, 1.0, 1.4).unwrap());
        let (s, c) = 0.7f64.sin_cos();
        let r = ndarray::arr2(&[[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]);
        assert!(isometry_residual(&g, &Y1, &Y2, &r).unwrap() < 1e-12);
    }

    #[test]
    fn clamp_guard() {
        assert_eq!(clamp_lambda(1.0 + 1e-12).unwrap(), 1.0);
        assert!(clamp_lambda(1.0 + 1e-6).is_err());
    }

    #[test]
    fn unit_norm_required() {
        let g = geo(&BackgroundModel::rotating(3, 0.8, 0.8).unwrap());
        assert!(matches!(dlambda_dy_closed(&g, &Y1, &Y2), Err(GeomError::RequiresUnitNorm(_))));
    }
}
