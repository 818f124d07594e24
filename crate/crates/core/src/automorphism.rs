//! The conformal automorphism `t(x, y)` that carries the Finsleroid
//! indicatrix onto the background unit sphere: forward map, its fiber
//! Jacobian, numeric inverse, deformation tensor and the identities that
//! certify conformality.

use ndarray::{Array1, Array2, Array3};

use crate::background::{LocalGeometry, PointFields};
use crate::check::{id, Identity};
use crate::error::{GeomError, Result};
use crate::finsleroid::{metric_data, scalars, MetricData, Scalars};
use crate::jets::{lift, Jet, Scalar};
use crate::linalg;

/// Newton iteration budget for the inverse map.
pub const NEWTON_MAX_ITER: usize = 50;
/// Relative update at which the Newton iteration stops.
pub const NEWTON_TOL: f64 = 1e-12;

/// `t^m = [h v~^m + A b~^m] K^h / sqrt(B)`, given precomputed scalars.
pub fn t_map_from<S: Scalar>(f: &PointFields<S>, sc: &Scalars<S>, y: &[S]) -> Vec<S> {
    let (c, h) = (f.c, f.h());
    let v = sc.v_tilde(f, y);
    let scale = sc.k.clone().powf(h) / sc.bb.clone().sqrt();
    v.iter()
        .zip(&f.b_up)
        .map(|(vi, bu)| (vi.clone() * h + sc.a_cap.clone() * bu.clone() / c) * scale.clone())
        .collect()
}

/// Forward map over a generic scalar.
pub fn t_map_generic<S: Scalar>(f: &PointFields<S>, y: &[S]) -> Result<Vec<S>> {
    let sc = scalars(f, y)?;
    Ok(t_map_from(f, &sc, y))
}

/// Forward map at a prepared point.
pub fn t_map(geo: &LocalGeometry, y: &[f64]) -> Result<Array1<f64>> {
    let f = PointFields::from_geometry(geo);
    Ok(Array1::from(t_map_generic(&f, y)?))
}

/// Forward map as jets in `y`.
pub fn t_jets(geo: &LocalGeometry, y: &[f64], order: u8) -> Result<Vec<Jet>> {
    let f = PointFields::constant(geo);
    t_map_generic(&f, &lift(y, None, order)?)
}

/// `t^m_k = dt^m/dy^k`, stored as `[[m, k]]`.
pub fn t_jacobian(geo: &LocalGeometry, y: &[f64]) -> Result<Array2<f64>> {
    let n = geo.dim;
    let tj = t_jets(geo, y, 1)?;
    Ok(Array2::from_shape_fn((n, n), |(m, k)| tj[m].d1(k)))
}

/// Values, Jacobian and Hessian of the forward map:
/// `(t^m, t^m_k, t^m_{kh})`.
pub fn t_derivatives(geo: &LocalGeometry, y: &[f64]) -> Result<(Array1<f64>, Array2<f64>, Array3<f64>)> {
    let n = geo.dim;
    let tj = t_jets(geo, y, 2)?;
    Ok((
        Array1::from_iter(tj.iter().map(Jet::val)),
        Array2::from_shape_fn((n, n), |(m, k)| tj[m].d1(k)),
        Array3::from_shape_fn((n, n, n), |(m, k, h)| tj[m].d2(k, h)),
    ))
}

/// Data of the automorphism at one `(x, y)`.
///
/// `t_jac[[m, k]] = t^m_k`, `defo[[m, k]]` is the deformation tensor.
#[derive(Clone, Debug)]
pub struct AutomorphismEval {
    pub t: Array1<f64>,
    pub t_jac: Array2<f64>,
    /// Background norm of `t`.
    pub s: f64,
    /// Conformal multiplier `K^(1-h) / h`.
    pub p: f64,
    pub defo: Array2<f64>,
    pub sin_rho: f64,
    pub cos_rho: f64,
    /// `h^2`.
    pub mu: f64,
    /// Frame coefficients, present when `c = 1`.
    pub frame: Option<(f64, f64)>,
}

pub fn automorphism_eval(geo: &LocalGeometry, y: &[f64]) -> Result<AutomorphismEval> {
    let f = PointFields::from_geometry(geo);
    let sc = scalars(&f, y)?;
    let h = f.h();
    let t_jac = t_jacobian(geo, y)?;
    let t = Array1::from(t_map_from(&f, &sc, y));
    let p = sc.k.powf(1.0 - h) / h;
    let sqrt_b = sc.bb.sqrt();
    Ok(AutomorphismEval {
        s: geo.norm(t.as_slice().expect("contiguous")),
        defo: &t_jac * p,
        t,
        t_jac,
        p,
        sin_rho: h * sc.qt / sqrt_b,
        cos_rho: sc.a_cap / sqrt_b,
        mu: h * h,
        frame: frame_expansion(geo, y).ok(),
    })
}

/// Conformal deformation tensor `p t^m_k`, stored as `[[m, k]]`.
pub fn deformation_tensor(geo: &LocalGeometry, y: &[f64]) -> Result<Array2<f64>> {
    let f = PointFields::from_geometry(geo);
    let k = scalars(&f, y)?.k;
    let h = f.h();
    Ok(t_jacobian(geo, y)? * (k.powf(1.0 - h) / h))
}

/// Coefficients `(T1, T2)` of `t` in the frame `{l, m}`:
/// `t = (T1 l + T2 m) (K^2 / B) K^(h-1) / sqrt(B)`. Unit-norm 1-form only.
pub fn frame_expansion(geo: &LocalGeometry, y: &[f64]) -> Result<(f64, f64)> {
    if (geo.c - 1.0).abs() > 1e-14 {
        return Err(GeomError::RequiresUnitNorm(geo.c));
    }
    let f = PointFields::from_geometry(geo);
    let sc = scalars(&f, y)?;
    let (g, h) = (geo.g, f.h());
    let q = sc.qt;
    let t1 = -(1.0 - h) * q * q + sc.bb + 0.5 * g * q * (sc.b + g * q);
    let t2 = ((1.0 - h) * sc.b + 0.5 * g * q) * q;
    Ok((t1, t2))
}

/// Rebuild `t` from the frame coefficients.
pub fn frame_reconstruction(geo: &LocalGeometry, y: &[f64]) -> Result<Array1<f64>> {
    let (t1, t2) = frame_expansion(geo, y)?;
    let f = PointFields::from_geometry(geo);
    let sc = scalars(&f, y)?;
    let m = crate::finsleroid::frame_vector(&f, &sc, y);
    let h = f.h();
    let scale = sc.k * sc.k / sc.bb * sc.k.powf(h - 1.0) / sc.bb.sqrt();
    Ok(Array1::from_shape_fn(y.len(), |i| (t1 * y[i] / sc.k + t2 * m[i]) * scale))
}

/// Solve `t(x, y) = t` for `y` by damped Newton iteration.
///
/// The target is first scaled to unit background norm; by homogeneity the
/// solution is then rescaled by `S(t)^(1/h)`.
pub fn inverse_map(geo: &LocalGeometry, t: &[f64]) -> Result<Array1<f64>> {
    let s = geo.norm(t);
    if !(s > 0.0) {
        return Err(GeomError::ZeroVector);
    }
    let h = geo.h();
    let target = Array1::from_iter(t.iter().map(|v| v / s));
    let f = PointFields::from_geometry(geo);
    let mut y = target.clone();
    let k0 = scalars(&f, y.as_slice().expect("contiguous"))?.k;
    y /= k0;
    let residual = |y: &Array1<f64>| -> Result<Array1<f64>> {
        Ok(t_map(geo, y.as_slice().expect("contiguous"))? - &target)
    };
    let mut r = residual(&y)?;
    let mut last_update = f64::INFINITY;
    for _ in 0..NEWTON_MAX_ITER {
        let jac = t_jacobian(geo, y.as_slice().expect("contiguous"))?;
        let delta = linalg::solve(&jac, &r)
            .ok_or_else(|| GeomError::NumericalInconsistency("singular Jacobian of the forward map".into()))?;
        let rnorm = linalg::max_abs(&r);
        let mut lambda = 1.0;
        let (next, rnext) = loop {
            let cand = &y - &(&delta * lambda);
            match residual(&cand) {
                Ok(rc) => {
                    if linalg::max_abs(&rc) <= rnorm.max(1e-15) || lambda < 1e-3 {
                        break (cand, rc);
                    }
                }
                Err(GeomError::PoleProximity { .. }) if lambda >= 1e-3 => {}
                Err(e) => return Err(e),
            }
            lambda *= 0.5;
        };
        last_update = lambda * linalg::max_abs(&delta) / linalg::max_abs(&next).max(1e-300);
        y = next;
        r = rnext;
        if last_update <= NEWTON_TOL || linalg::max_abs(&r) <= 1e-16 {
            return Ok(y * s.powf(1.0 / h));
        }
    }
    Err(GeomError::NoConvergence { iterations: NEWTON_MAX_ITER, update: last_update })
}

/// Jacobian of the inverse map, `y^i_n = dy^i/dt^n`, as the matrix inverse
/// of `t^m_k` at the preimage. Stored as `[[i, n]]`.
pub fn inverse_jacobian(geo: &LocalGeometry, y: &[f64]) -> Result<Array2<f64>> {
    let jac = t_jacobian(geo, y)?;
    linalg::invert(&jac).ok_or_else(|| GeomError::NumericalInconsistency("singular Jacobian of the forward map".into()))
}

/// Second derivatives of the inverse map,
/// `y^n_{ml} = -y^j_m y^n_k y^h_l t^k_{hj}`, stored as `[[n, m, l]]`.
pub fn inverse_second(yi: &Array2<f64>, t2: &Array3<f64>) -> Array3<f64> {
    let n = yi.dim().0;
    // w[k][m][l] = t^k_{hj} y^h_l y^j_m
    let mut w = Array3::<f64>::zeros((n, n, n));
    for k in 0..n {
        for m in 0..n {
            for l in 0..n {
                let mut acc = 0.0;
                for hh in 0..n {
                    for j in 0..n {
                        acc += t2[[k, hh, j]] * yi[[hh, l]] * yi[[j, m]];
                    }
                }
                w[[k, m, l]] = acc;
            }
        }
    }
    Array3::from_shape_fn((n, n, n), |(nn, m, l)| -(0..n).map(|k| yi[[nn, k]] * w[[k, m, l]]).sum::<f64>())
}

/// Conformality residual
/// `(1/h^2) a_mn t^m_k t^n_h - K^(2(h-1)) g_kh`, scaled.
pub fn conformality_residual(geo: &LocalGeometry, md: &MetricData, t_jac: &Array2<f64>) -> f64 {
    let h = geo.h();
    let lhs = t_jac.t().dot(&geo.a).dot(t_jac) / (h * h);
    let rhs = &md.g * md.k.powf(2.0 * (h - 1.0));
    linalg::scaled_diff(&lhs, &rhs)
}

/// Residuals of the identities satisfied by the forward map, its inverse
/// and the deformation tensor at one `(x, y)`.
pub fn identity_residuals(geo: &LocalGeometry, y: &[f64]) -> Result<Vec<Identity>> {
    let n = geo.dim;
    let h = geo.h();
    let md = metric_data(geo, y)?;
    let (t, tj, t2) = t_derivatives(geo, y)?;
    let k = md.k;
    let p = k.powf(1.0 - h) / h;
    let yv = Array1::from(y.to_vec());
    let s = geo.norm(t.as_slice().expect("contiguous"));
    let t_low = geo.a.dot(&t);
    let yi = linalg::invert(&tj).ok_or_else(|| GeomError::NumericalInconsistency("singular Jacobian".into()))?;
    let y2 = inverse_second(&yi, &t2);
    let l = &md.l_lower;
    let g = &md.g;
    let mut out = Vec::new();

    out.push(id("norm equals K^h", (s - k.powf(h)).abs() / k.powf(h).max(1.0)));
    out.push(id("Euler identity of the map", linalg::scaled_diff(&tj.dot(&yv), &(&t * h))));
    out.push(id("conformality", conformality_residual(geo, &md, &tj)));

    // Round trip through the numeric inverse.
    let back = inverse_map(geo, t.as_slice().expect("contiguous"))?;
    out.push(id("inverse round trip", linalg::scaled_diff(&back, &yv)));
    out.push(id("inverse Euler identity", linalg::scaled_diff(&yi.dot(&t), &(&yv / h))));
    let tt = t.mapv(|v| 2.0 * v);
    let back2 = inverse_map(geo, tt.as_slice().expect("contiguous"))?;
    out.push(id("inverse homogeneity", linalg::scaled_diff(&back2, &(&yv * 2f64.powf(1.0 / h)))));

    // g_kh y^k_m y^h_n = p^2 a_mn
    let lhs = yi.t().dot(g).dot(&yi);
    out.push(id("inverse conformality", linalg::scaled_diff(&lhs, &(&geo.a * (p * p)))));
    // y_m y^m_n = K^(2(1-h)) t_n / h
    out.push(id(
        "covector through inverse Jacobian",
        linalg::scaled_diff(&md.y_lower.dot(&yi), &(&t_low * (k.powf(2.0 * (1.0 - h)) / h))),
    ));
    // t_h t^h_n = h K^(2(h-1)) y_n
    out.push(id(
        "image covector through Jacobian",
        linalg::scaled_diff(&t_low.dot(&tj), &(&md.y_lower * (h * k.powf(2.0 * (h - 1.0))))),
    ));
    // t_h t^h_{ni} = h (1-h) K^(2(h-1)) (g_ni - 2 l_n l_i)
    let lhs = Array2::from_shape_fn((n, n), |(a, b)| (0..n).map(|m| t_low[m] * t2[[m, a, b]]).sum());
    let rhs = Array2::from_shape_fn((n, n), |(a, b)| {
        h * (1.0 - h) * k.powf(2.0 * (h - 1.0)) * (g[[a, b]] - 2.0 * l[a] * l[b])
    });
    out.push(id("image covector through Hessian", linalg::scaled_diff(&lhs, &rhs)));
    // t_h t^h_{nu} y^u_i + a_hi t^h_n = 2(h-1) K^-2 t_i y_n + h K^(2(h-1)) g_nu y^u_i
    let lhs = Array2::from_shape_fn((n, n), |(nn, i)| {
        let mut acc = 0.0;
        for u in 0..n {
            acc += lhs[[nn, u]] * yi[[u, i]];
        }
        acc + (0..n).map(|hh| geo.a[[hh, i]] * tj[[hh, nn]]).sum::<f64>()
    });
    let gyi = g.dot(&yi);
    let rhs = Array2::from_shape_fn((n, n), |(nn, i)| {
        2.0 * (h - 1.0) / (k * k) * t_low[i] * md.y_lower[nn] + h * k.powf(2.0 * (h - 1.0)) * gyi[[nn, i]]
    });
    out.push(id("mixed Hessian identity", linalg::scaled_diff(&lhs, &rhs)));

    // Cartan tensor through the map:
    // 2 C_mnk = (1-h)(2/K) l_k g_mn + p^2 (t^i_{mk} t^j_n + t^i_m t^j_{nk}) a_ij
    let at = geo.a.dot(&tj); // a_ij t^j_n as [[i, n]]
    let t2a = |mm: usize, kk: usize, nn: usize| -> f64 { (0..n).map(|i| t2[[i, mm, kk]] * at[[i, nn]]).sum() };
    let mut worst_cartan = 0.0f64;
    let mut worst_skew = 0.0f64;
    let mut worst_alt = 0.0f64;
    let scale = linalg::max_abs(&md.cartan).max(1.0);
    for mm in 0..n {
        for nn in 0..n {
            for kk in 0..n {
                let rep = (1.0 - h) / k * l[kk] * g[[mm, nn]] + 0.5 * p * p * (t2a(mm, kk, nn) + t2a(nn, kk, mm));
                worst_cartan = worst_cartan.max((rep - md.cartan[[mm, nn, kk]]).abs());
                let skew = (1.0 - h) * 2.0 / k * (l[kk] * g[[mm, nn]] - l[mm] * g[[kk, nn]])
                    + p * p * (t2a(nn, kk, mm) - t2a(nn, mm, kk));
                worst_skew = worst_skew.max(skew.abs());
                let alt = (1.0 - h) / k * (l[kk] * g[[mm, nn]] + l[nn] * g[[mm, kk]] - l[mm] * g[[nn, kk]])
                    + p * p * t2a(nn, kk, mm);
                worst_alt = worst_alt.max((alt - md.cartan[[mm, nn, kk]]).abs());
            }
        }
    }
    out.push(id("Cartan tensor through the map", worst_cartan / scale));
    out.push(id("skew identity of the Hessian", worst_skew / scale));
    out.push(id("Cartan tensor alternative form", worst_alt / scale));
    // p^2 t^i_{mk} t^j a_ij = (1/h - 1)(g_km - 2 l_k l_m)
    let lhs = Array2::from_shape_fn((n, n), |(mm, kk)| p * p * (0..n).map(|i| t2[[i, mm, kk]] * t_low[i]).sum::<f64>());
    let rhs = Array2::from_shape_fn((n, n), |(mm, kk)| (1.0 / h - 1.0) * (g[[kk, mm]] - 2.0 * l[kk] * l[mm]));
    out.push(id("contracted Hessian identity", linalg::scaled_diff(&lhs, &rhs)));
    // K C_m = -(N-2)(1-h) l_m + K g^{nk} p^2 t^i_{nk} t^j_m a_ij
    let lhs = &md.c_vec * k;
    let rhs = Array1::from_shape_fn(n, |mm| {
        let mut acc = 0.0;
        for nn in 0..n {
            for kk in 0..n {
                acc += md.g_inv[[nn, kk]] * t2a(nn, kk, mm);
            }
        }
        -((n as f64) - 2.0) * (1.0 - h) * l[mm] + k * p * p * acc
    });
    out.push(id("Cartan vector through the map", linalg::scaled_diff(&lhs, &rhs)));

    // Deformation tensor.
    let defo = &tj * p;
    out.push(id("metric from deformation tensor", linalg::scaled_diff(&defo.t().dot(&geo.a).dot(&defo), g)));
    out.push(id("deformation tensor on y", linalg::scaled_diff(&defo.dot(&yv), &(&t * k.powf(1.0 - h)))));
    let defo3 = deformation_tensor(geo, &y.iter().map(|v| 3.0 * v).collect::<Vec<_>>())?;
    out.push(id("deformation tensor homogeneity", linalg::scaled_diff(&defo3, &defo)));

    // Unit vectors map to unit vectors, and the metric at l.
    let l_up: Vec<f64> = y.iter().map(|v| v / k).collect();
    let tl = t_map(geo, &l_up)?;
    out.push(id("indicatrix to unit sphere", (geo.norm(tl.as_slice().expect("contiguous")) - 1.0).abs()));
    let tjl = t_jacobian(geo, &l_up)?;
    let gl = metric_data(geo, &l_up)?.g;
    out.push(id("metric on the indicatrix", linalg::scaled_diff(&(tjl.t().dot(&geo.a).dot(&tjl) / (h * h)), &gl)));

    // Second derivatives of the inverse contracted back: y^n_{ml} t^l = (1/h - 1) y^n_m.
    let lhs = Array2::from_shape_fn((n, n), |(nn, m)| (0..n).map(|ll| y2[[nn, m, ll]] * t[ll]).sum());
    out.push(id("inverse Hessian Euler identity", linalg::scaled_diff(&lhs, &(&yi * (1.0 / h - 1.0)))));

    let f = PointFields::from_geometry(geo);
    let sc = scalars(&f, y)?;
    let sin_rho = h * sc.qt / sc.bb.sqrt();
    let cos_rho = sc.a_cap / sc.bb.sqrt();
    out.push(id("sin^2 + cos^2", (sin_rho * sin_rho + cos_rho * cos_rho - 1.0).abs()));
    let ev = crate::finsleroid::eval_scalars(geo, y)?;
    out.push(id("rotation angle equals f", (sin_rho.atan2(cos_rho) - ev.f).abs()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::{geometry, BackgroundModel, Level};

    fn geo(model: &BackgroundModel) -> LocalGeometry {
        geometry(model, &[0.3, -0.2, 0.1], Level::Connection).unwrap()
    }

    #[test]
    fn identity_map_at_zero_charge() {
        let geo = geo(&BackgroundModel::conformal(3, 1.0, 0.0).unwrap());
        let y = [0.4, -0.3, 1.2];
        let t = t_map(&geo, &y).unwrap();
        assert!(linalg::scaled_diff(&t, &Array1::from(y.to_vec())) < 1e-15);
        assert!(linalg::scaled_diff(&t_jacobian(&geo, &y).unwrap(), &Array2::eye(3)) < 1e-14);
        let back = inverse_map(&geo, &y).unwrap();
        assert!(linalg::scaled_diff(&back, &Array1::from(y.to_vec())) < 1e-14);
        assert!(linalg::scaled_diff(&deformation_tensor(&geo, &y).unwrap(), &Array2::eye(3)) < 1e-14);
    }

    #[test]
    fn identities_hold() {
        for model in BackgroundModel::canonical(3, 1.0, 1.1).unwrap() {
            let geo = geo(&model);
            for r in identity_residuals(&geo, &[0.5, 0.8, -0.4]).unwrap() {
                assert!(r.residual < 1e-8, "{}: {} ({})", model.kind.label(), r.name, r.residual);
            }
        }
    }

    #[test]
    fn identities_hold_below_unit_norm() {
        let model = BackgroundModel::rotating(4, 0.7, -0.9).unwrap();
        let geo = geometry(&model, &[0.3, -0.2, 0.1, 0.5], Level::Connection).unwrap();
        for r in identity_residuals(&geo, &[0.5, 0.8, -0.4, 0.2]).unwrap() {
            assert!(r.residual < 1e-8, "{} ({})", r.name, r.residual);
        }
    }

    #[test]
    fn frame_expansion_reconstructs() {
        let geo = geo(&BackgroundModel::rotating(3, 1.0, 0.7).unwrap());
        let y = [0.2, 0.9, 0.6];
        let t = t_map(&geo, &y).unwrap();
        assert!(linalg::scaled_diff(&frame_reconstruction(&geo, &y).unwrap(), &t) < 1e-12);
        let low = geometry(&BackgroundModel::rotating(3, 0.8, 0.7).unwrap(), &[0.3, -0.2, 0.1], Level::Connection).unwrap();
        assert_eq!(frame_expansion(&low, &y).unwrap_err(), GeomError::RequiresUnitNorm(0.8));
    }

    #[test]
    fn frame_coefficients_orthogonal_to_axis() {
        let geo = geo(&BackgroundModel::flat(3, 1.0, 0.9).unwrap());
        let y = [0.0, 1.3, 0.4];
        let (t1, t2) = frame_expansion(&geo, &y).unwrap();
        let e = crate::finsleroid::eval_scalars(&geo, &y).unwrap();
        let h = e.h;
        let q2 = e.q * e.q;
        assert!((t1 - (-(1.0 - h) * q2 + e.bb + 0.5 * 0.9 * 0.9 * q2)).abs() < 1e-12);
        assert!((t2 - 0.5 * 0.9 * q2).abs() < 1e-12);
    }

    #[test]
    fn near_axis_image_aligns_with_axis() {
        let geo = geo(&BackgroundModel::flat(3, 1.0, 1.2).unwrap());
        let y = [1.0, 1e-4, 0.0];
        let t = t_map(&geo, &y).unwrap();
        let s = geo.norm(t.as_slice().unwrap());
        assert!((t[0] / s - 1.0).abs() < 1e-3);
    }
}
