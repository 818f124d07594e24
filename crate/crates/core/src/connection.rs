//! The angle-preserving nonlinear connection `N^m_i(x, y)`.
//!
//! Production route: the closed Finsleroid form, for every norm of `b`.
//! Oracles: an alternative assembled form that uses `dK/dx`, the route
//! through the inverse Jacobian of the conformal map, and the transitivity
//! route `N = d^Riem y(x, t)` with finite differences in `x`.
//!
//! Index layout: `n[[m, i]] = N^m_i`, `n2[[k, m, n]] = N^k_{mn} = dN^k_m /
//! dy^n`, `n3[[k, m, n, j]] = N^k_{mnj}`, `d = -n2`.

use ndarray::{Array1, Array2, Array3, Array4};

use crate::automorphism::{inverse_map, inverse_second, t_map, t_map_from, t_map_generic};
use crate::background::{geometry, Level, LocalGeometry, PointFields, Site};
use crate::check::{id, Acc, Identity};
use crate::error::{GeomError, Result};
use crate::fd;
use crate::finsleroid::{covector_from, frame_vector, metric_data, scalars, MetricData};
use crate::jets::{lift, lift_block, Jet, Scalar};
use crate::linalg::{self, Mat};

/// Which formula produced a set of coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    /// Closed Finsleroid form.
    ClosedForm,
    /// `N^m_n = -y^m_i (dt^i/dx^n + a^i_{kn} t^k)` carried through jets.
    Transitivity,
}

/// `|b| = 1`: the forms written through `b`, `q` and `s_i` need it.
pub fn unit_norm(c: f64) -> bool {
    (c - 1.0).abs() <= 1e-14
}

/// Closed-form coefficients over a generic scalar, flattened as
/// `[m * n + i]`.
pub fn n_closed_generic<S: Scalar>(f: &PointFields<S>, y: &[S]) -> Result<Vec<S>> {
    let n = f.n;
    let (c, h) = (f.c, f.h());
    let sc = scalars(f, y)?;
    let m = frame_vector(f, &sc, y);
    let v = sc.v_tilde(f, y);
    let qt2 = sc.qt.clone().square();
    // s~_i = y^h nabla_i b~_h
    let st: Vec<S> = (0..n)
        .map(|i| {
            let mut acc = S::cst(0.0);
            for hh in 0..n {
                acc = acc + y[hh].clone() * f.nabla_b(i, hh).clone();
            }
            acc / c
        })
        .collect();
    // nabla_i b~^m = a^{mj} nabla_i b~_j
    let mut nbt = Vec::with_capacity(n * n);
    for i in 0..n {
        for mm in 0..n {
            let mut acc = S::cst(0.0);
            for j in 0..n {
                acc = acc + f.a_inv.at(mm, j).clone() * f.nabla_b(i, j).clone();
            }
            nbt.push(acc / c);
        }
    }
    let kq = sc.k.clone() / (sc.qt.clone() * h);
    let ah = sc.a_cap.clone() / h;
    let mut out = Vec::with_capacity(n * n);
    for mm in 0..n {
        let bt_up = f.b_up[mm].clone() / c;
        for i in 0..n {
            let beta = nbt[i * n + mm].clone() - v[mm].clone() * st[i].clone() / qt2.clone();
            let mut val = kq.clone() * m[mm].clone() * st[i].clone() - ah.clone() * beta - bt_up.clone() * st[i].clone()
                + sc.bt.clone() * nbt[i * n + mm].clone();
            for hh in 0..n {
                val = val - f.gamma(mm, i, hh).clone() * y[hh].clone();
            }
            out.push(val);
        }
    }
    Ok(out)
}

/// Closed-form coefficients `N^m_i`.
pub fn n_coeffs_closed(geo: &LocalGeometry, y: &[f64]) -> Result<Array2<f64>> {
    let n = geo.dim;
    let f = PointFields::from_geometry(geo);
    let v = n_closed_generic(&f, y)?;
    Ok(Array2::from_shape_vec((n, n), v).expect("square"))
}

/// `dK/dx^i` at fixed `y`, exact via jets in `x`.
pub fn dk_dx(site: &Site, y: &[f64]) -> Result<Array1<f64>> {
    let n = site.dim();
    let f = PointFields::x_jets(site.model, site.x(), n, 1)?;
    let k = scalars(&f, &linalg::constants(y))?.k;
    Ok(Array1::from(k.gradient(n)))
}

/// Alternative assembled form built from `dK/dx`, the projector onto the
/// complement of `{l, m}` and the frame vector.
pub fn n_coeffs_alternative(site: &Site, y: &[f64]) -> Result<Array2<f64>> {
    let geo = &site.geo;
    let n = geo.dim;
    let h = geo.h();
    let md = metric_data(geo, y)?;
    let f = PointFields::from_geometry(geo);
    let sc = scalars(&f, y)?;
    let dk = dk_dx(site, y)?;
    let nbt = geo.nabla_b_tilde();
    let (k, bb, qt, b) = (sc.k, sc.bb, sc.qt, sc.b);
    let c1 = sc.bt - sc.a_cap / h;
    let c2 = 1.0 / (h * qt) - (b * b + qt * qt) / (qt * bb);
    let gy = Array2::from_shape_fn((n, n), |(t, i)| (0..n).map(|j| geo.gamma[[t, i, j]] * y[j]).sum::<f64>());
    Ok(Array2::from_shape_fn((n, n), |(m, i)| {
        let mut val = -md.l_up[m] * dk[i];
        for j in 0..n {
            val += (c1 * md.h_proj[[m, j]] * k * k / bb + c2 * k * md.m[m] * y[j]) * nbt[[i, j]];
        }
        for t in 0..n {
            let proj = if m == t { 1.0 } else { 0.0 } - md.l_up[m] * md.l_lower[t];
            val -= proj * gy[[t, i]];
        }
        val
    }))
}

/// Coefficients through the inverse Jacobian of the map:
/// `N^m_n = -y^m_i (dt^i/dx^n + a^i_{kn} t^k)`, with `dt/dx` exact.
pub fn n_coeffs_inverse_jacobian(site: &Site, y: &[f64]) -> Result<Array2<f64>> {
    let geo = &site.geo;
    let n = geo.dim;
    let f = PointFields::x_jets(site.model, site.x(), n, 1)?;
    let tj = t_map_generic(&f, &linalg::constants(y))?;
    let t = Array1::from_iter(tj.iter().map(Jet::val));
    let tt = transport_term(geo, &tj, &t);
    let yi = crate::automorphism::inverse_jacobian(geo, y)?;
    Ok(-yi.dot(&tt))
}

/// Coefficient values by the production route.
pub fn n_coeffs(site: &Site, y: &[f64]) -> Result<Array2<f64>> {
    n_coeffs_closed(&site.geo, y)
}

/// `T^s_m = dt^s/dx^m + a^s_{mh} t^h`, stored as `[[s, m]]`.
fn transport_term(geo: &LocalGeometry, tj: &[Jet], t: &Array1<f64>) -> Array2<f64> {
    let n = geo.dim;
    Array2::from_shape_fn((n, n), |(s, m)| tj[s].d1(m) + (0..n).map(|hh| geo.gamma[[s, m, hh]] * t[hh]).sum::<f64>())
}

/// Transitivity route: `N^n_i = dy^n(x, t)/dx^i + y^n_h L^h_i` with the
/// derivative at fixed `t` by Richardson-extrapolated central differences
/// of the numeric inverse map.
pub fn n_coeffs_transitivity(site: &Site, y: &[f64], step: f64) -> Result<Array2<f64>> {
    let geo = &site.geo;
    let n = geo.dim;
    let t = t_map(geo, y)?;
    let ts = t.to_vec();
    let yi = crate::automorphism::inverse_jacobian(geo, y)?;
    let grads = fd::gradient(site.x(), step, |xs| {
        let g2 = geometry(site.model, xs, Level::Connection)?;
        Ok(inverse_map(&g2, &ts)?.to_vec())
    })?;
    let l = geo.riem_transport_coeffs(&ts);
    let yl = yi.dot(&l);
    Ok(Array2::from_shape_fn((n, n), |(nn, i)| grads[i][nn] + yl[[nn, i]]))
}

/// Coefficients together with their fiber derivatives.
#[derive(Clone, Debug)]
pub struct ConnectionData {
    pub n: Array2<f64>,
    pub d: Array3<f64>,
    pub n2: Array3<f64>,
    pub n3: Array4<f64>,
    /// `s~_i = y^h nabla_i b~_h`.
    pub s_tilde: Array1<f64>,
    /// `beta~^m_i`, stored as `[[m, i]]`.
    pub beta_tilde: Array2<f64>,
    pub route: Route,
}

/// Coefficients as jets over `2N` variables (base point, then fiber),
/// carrying two orders of derivatives, flattened as `[m * n + i]`.
pub fn n_jets(site: &Site, y: &[f64], route: Route) -> Result<Vec<Jet>> {
    let n = site.dim();
    let nv = 2 * n;
    let f = PointFields::x_jets(site.model, site.x(), nv, 3)?;
    let yj = lift_block(y, n, nv, 3)?;
    match route {
        Route::ClosedForm => n_closed_generic(&f, &yj),
        Route::Transitivity => {
            let t = t_map_generic(&f, &yj)?;
            let jac = Mat::from_fn(n, |s, k| t[s].partial(n + k));
            let yi = jac.inverse()?;
            let mut out = Vec::with_capacity(n * n);
            for m in 0..n {
                for nn in 0..n {
                    let mut acc = Jet::constant(0.0);
                    for i in 0..n {
                        let mut tt = t[i].partial(nn);
                        for k in 0..n {
                            tt = tt + f.gamma(i, k, nn).clone() * t[k].clone();
                        }
                        acc = acc - yi.at(m, i).clone() * tt;
                    }
                    out.push(acc);
                }
            }
            Ok(out)
        }
    }
}

fn data_from_jets(geo: &LocalGeometry, y: &[f64], nj: &[Jet], offset: usize, route: Route) -> Result<ConnectionData> {
    let n = geo.dim;
    let at = |k: usize, m: usize| &nj[k * n + m];
    let n2 = Array3::from_shape_fn((n, n, n), |(k, m, nn)| at(k, m).d1(offset + nn));
    let n3 = Array4::from_shape_fn((n, n, n, n), |(k, m, nn, j)| at(k, m).d2(offset + nn, offset + j));
    let fv = PointFields::from_geometry(geo);
    let sc = scalars(&fv, y)?;
    let v = sc.v_tilde(&fv, y);
    let nbt = geo.nabla_b_tilde();
    let nbt_up = geo.nabla_b_tilde_up();
    let s_tilde = Array1::from_shape_fn(n, |i| (0..n).map(|hh| y[hh] * nbt[[i, hh]]).sum::<f64>());
    let beta_tilde = Array2::from_shape_fn((n, n), |(m, i)| nbt_up[[i, m]] - v[m] * s_tilde[i] / (sc.qt * sc.qt));
    Ok(ConnectionData {
        n: Array2::from_shape_fn((n, n), |(m, i)| at(m, i).val()),
        d: -&n2,
        n2,
        n3,
        s_tilde,
        beta_tilde,
        route,
    })
}

/// Coefficients and fiber derivatives by the closed form at a frozen base
/// point.
pub fn connection_data_closed(geo: &LocalGeometry, y: &[f64]) -> Result<ConnectionData> {
    let f = PointFields::constant(geo);
    let nj = n_closed_generic(&f, &lift(y, None, 2)?)?;
    data_from_jets(geo, y, &nj, 0, Route::ClosedForm)
}

/// Coefficients and fiber derivatives by the given route.
pub fn connection_data_with(site: &Site, y: &[f64], route: Route) -> Result<ConnectionData> {
    match route {
        Route::ClosedForm => connection_data_closed(&site.geo, y),
        Route::Transitivity => {
            let nj = n_jets(site, y, route)?;
            data_from_jets(&site.geo, y, &nj, site.dim(), route)
        }
    }
}

/// Coefficients and fiber derivatives by the default route for the model.
pub fn connection_data(site: &Site, y: &[f64]) -> Result<ConnectionData> {
    connection_data_with(site, y, Route::ClosedForm)
}

/// `(N^k_{mn}, N^k_{mnj})`.
pub fn n_derivatives(site: &Site, y: &[f64]) -> Result<(Array3<f64>, Array4<f64>)> {
    let cd = connection_data(site, y)?;
    Ok((cd.n2, cd.n3))
}

/// Jets over `2N` variables, base point first, then the fiber.
pub struct MixedJets {
    pub n: usize,
    pub k: Jet,
    pub b: Jet,
    pub bb: Jet,
    pub s2: Jet,
    pub y_lower: Vec<Jet>,
    pub t: Vec<Jet>,
}

impl MixedJets {
    #[inline]
    pub fn x(&self, i: usize) -> usize {
        i
    }

    #[inline]
    pub fn y(&self, j: usize) -> usize {
        self.n + j
    }
}

pub fn mixed_jets(site: &Site, y: &[f64], order: u8) -> Result<MixedJets> {
    let n = site.dim();
    let f = PointFields::x_jets(site.model, site.x(), 2 * n, order)?;
    let yj = lift_block(y, n, 2 * n, order)?;
    let sc = scalars(&f, &yj)?;
    let y_lower = covector_from(&f, &sc);
    let t = t_map_from(&f, &sc, &yj);
    Ok(MixedJets { n, k: sc.k, b: sc.b, bb: sc.bb, s2: sc.s2, y_lower, t })
}

fn mat_mul3(a: &Array2<f64>, b: &Array2<f64>, c: &Array2<f64>) -> Array2<f64> {
    a.dot(b).dot(c)
}

/// Fiber and base derivatives of the inverse of the map Jacobian.
struct InverseJacobianDerivs {
    yi: Array2<f64>,
    /// `d y^n_k / dx^i` at fixed `t`, indexed `[i]`.
    dx_at_t: Vec<Array2<f64>>,
    /// `d y^n_k / dt^h`, indexed `[h]`.
    dt: Vec<Array2<f64>>,
}

fn inverse_jacobian_derivs(mj: &MixedJets) -> Result<InverseJacobianDerivs> {
    let n = mj.n;
    let tj = Array2::from_shape_fn((n, n), |(m, k)| mj.t[m].d1(mj.y(k)));
    let yi = linalg::invert(&tj).ok_or_else(|| GeomError::NumericalInconsistency("singular Jacobian".into()))?;
    let dy_y: Vec<Array2<f64>> = (0..n)
        .map(|l| {
            let dt = Array2::from_shape_fn((n, n), |(m, k)| mj.t[m].d2(mj.y(k), mj.y(l)));
            -mat_mul3(&yi, &dt, &yi)
        })
        .collect();
    let dt: Vec<Array2<f64>> = (0..n)
        .map(|hh| {
            let mut acc = Array2::zeros((n, n));
            for l in 0..n {
                acc = acc + &dy_y[l] * yi[[l, hh]];
            }
            acc
        })
        .collect();
    let dx_at_t = (0..n)
        .map(|i| {
            let dtx = Array2::from_shape_fn((n, n), |(m, k)| mj.t[m].d2(mj.x(i), mj.y(k)));
            let mut acc = -mat_mul3(&yi, &dtx, &yi);
            let tx = Array1::from_shape_fn(n, |m| mj.t[m].d1(mj.x(i)));
            let ydot = -yi.dot(&tx);
            for l in 0..n {
                acc = acc + &dy_y[l] * ydot[l];
            }
            acc
        })
        .collect();
    Ok(InverseJacobianDerivs { yi, dx_at_t, dt })
}

/// Residuals of the covariant-derivative vanishings at one `(x, y)`.
pub fn covariant_suite(site: &Site, y: &[f64]) -> Result<Vec<Identity>> {
    let geo = &site.geo;
    let n = geo.dim;
    let h = geo.h();
    let gam = &geo.gamma;
    let cd = connection_data(site, y)?;
    let md = metric_data(geo, y)?;
    let mj = mixed_jets(site, y, 3)?;
    let (nc, n2, n3) = (&cd.n, &cd.n2, &cd.n3);
    let k = md.k;
    let g = &md.g;
    let t = Array1::from_iter(mj.t.iter().map(Jet::val));
    let tjac = Array2::from_shape_fn((n, n), |(m, kk)| mj.t[m].d1(mj.y(kk)));
    let t2 = Array3::from_shape_fn((n, n, n), |(m, a, b)| mj.t[m].d2(mj.y(a), mj.y(b)));
    let dkx = Array1::from_shape_fn(n, |i| mj.k.d1(mj.x(i)));
    let mut out = Vec::new();

    let mut acc = Acc::default();
    for nn in 0..n {
        let mut terms = vec![dkx[nn]];
        terms.extend((0..n).map(|m| nc[[m, nn]] * md.l_lower[m]));
        acc.add(&terms);
    }
    out.push(id("metric function is parallel", acc.value()));

    let mut acc = Acc::default();
    for nn in 0..n {
        for j in 0..n {
            let mut terms = vec![mj.y_lower[j].d1(mj.x(nn))];
            terms.extend((0..n).map(|m| nc[[m, nn]] * g[[m, j]]));
            terms.extend((0..n).map(|m| n2[[m, nn, j]] * md.y_lower[m]));
            acc.add(&terms);
        }
    }
    out.push(id("covariant tangent vector is parallel", acc.value()));

    let mut acc = Acc::default();
    for nn in 0..n {
        for i in 0..n {
            for j in 0..n {
                let dg = 0.5 * (mj.y_lower[i].d2(mj.x(nn), mj.y(j)) + mj.y_lower[j].d2(mj.x(nn), mj.y(i)));
                let mut terms = vec![dg];
                terms.extend((0..n).map(|m| 2.0 * nc[[m, nn]] * md.cartan[[m, j, i]]));
                terms.extend((0..n).map(|m| n2[[m, nn, j]] * g[[m, i]]));
                terms.extend((0..n).map(|m| n2[[m, nn, i]] * g[[m, j]]));
                acc.add(&terms);
            }
        }
    }
    out.push(id("metric tensor is parallel", acc.value()));

    let mut acc = Acc::default();
    for nn in 0..n {
        for i in 0..n {
            let mut terms = vec![mj.t[i].d1(mj.x(nn))];
            terms.extend((0..n).map(|kk| nc[[kk, nn]] * tjac[[i, kk]]));
            terms.extend((0..n).map(|kk| gam[[i, kk, nn]] * t[kk]));
            acc.add(&terms);
        }
    }
    out.push(id("image vector is parallel", acc.value()));

    let mut acc = Acc::default();
    for nn in 0..n {
        for i in 0..n {
            for m in 0..n {
                let mut terms = vec![mj.t[i].d2(mj.x(nn), mj.y(m))];
                terms.extend((0..n).map(|kk| nc[[kk, nn]] * t2[[i, m, kk]]));
                terms.extend((0..n).map(|hh| n2[[hh, nn, m]] * tjac[[i, hh]]));
                terms.extend((0..n).map(|l| gam[[i, nn, l]] * tjac[[l, m]]));
                acc.add(&terms);
            }
        }
    }
    out.push(id("map Jacobian is parallel", acc.value()));

    let ij = inverse_jacobian_derivs(&mj)?;
    let lcoef = geo.riem_transport_coeffs(t.as_slice().expect("contiguous"));
    let mut acc = Acc::default();
    for i in 0..n {
        for nn in 0..n {
            for kk in 0..n {
                let mut terms = vec![ij.dx_at_t[i][[nn, kk]]];
                terms.extend((0..n).map(|hh| lcoef[[hh, i]] * ij.dt[hh][[nn, kk]]));
                terms.extend((0..n).map(|s| -n2[[nn, i, s]] * ij.yi[[s, kk]]));
                terms.extend((0..n).map(|hh| -gam[[hh, i, kk]] * ij.yi[[nn, hh]]));
                acc.add(&terms);
            }
        }
    }
    out.push(id("inverse Jacobian is parallel", acc.value()));

    let p = k.powf(1.0 - h) / h;
    let defo = &tjac * p;
    let mut acc = Acc::default();
    for nn in 0..n {
        for m in 0..n {
            for kk in 0..n {
                let dpx = p * (1.0 - h) * dkx[nn] / k;
                let mut terms = vec![dpx * tjac[[m, kk]], p * mj.t[m].d2(mj.x(nn), mj.y(kk))];
                for hh in 0..n {
                    let dpy = p * (1.0 - h) * md.l_lower[hh] / k;
                    terms.push(nc[[hh, nn]] * (dpy * tjac[[m, kk]] + p * t2[[m, kk, hh]]));
                }
                terms.extend((0..n).map(|hh| n2[[hh, nn, kk]] * defo[[m, hh]]));
                terms.extend((0..n).map(|l| gam[[m, nn, l]] * defo[[l, kk]]));
                acc.add(&terms);
            }
        }
    }
    out.push(id("deformation tensor is parallel", acc.value()));

    // Mixed Cartan tensor and its derivatives.
    let ginv = &md.g_inv;
    let c_low = Array3::from_shape_fn((n, n, n), |(i, a, b)| 0.5 * mj.y_lower[i].d2(mj.y(a), mj.y(b)));
    let mixed = |dg: &Array2<f64>, dc: &Array3<f64>| -> Array3<f64> {
        let dginv = -mat_mul3(ginv, dg, ginv);
        Array3::from_shape_fn((n, n, n), |(kk, a, b)| {
            (0..n).map(|i| dginv[[kk, i]] * c_low[[i, a, b]] + ginv[[kk, i]] * dc[[i, a, b]]).sum()
        })
    };
    let cm = Array3::from_shape_fn((n, n, n), |(kk, a, b)| (0..n).map(|i| ginv[[kk, i]] * c_low[[i, a, b]]).sum::<f64>());
    let dcm_y: Vec<Array3<f64>> = (0..n)
        .map(|hh| {
            let dg = Array2::from_shape_fn((n, n), |(i, j)| 2.0 * c_low[[i, j, hh]]);
            let dc = Array3::from_shape_fn((n, n, n), |(i, a, b)| 0.5 * mj.y_lower[i].d3(mj.y(hh), mj.y(a), mj.y(b)));
            mixed(&dg, &dc)
        })
        .collect();
    let mut acc = Acc::default();
    let mut sym = 0.0f64;
    for m in 0..n {
        let dg = Array2::from_shape_fn((n, n), |(i, j)| {
            0.5 * (mj.y_lower[i].d2(mj.x(m), mj.y(j)) + mj.y_lower[j].d2(mj.x(m), mj.y(i)))
        });
        let dc = Array3::from_shape_fn((n, n, n), |(i, a, b)| 0.5 * mj.y_lower[i].d3(mj.x(m), mj.y(a), mj.y(b)));
        let dcm_x = mixed(&dg, &dc);
        for kk in 0..n {
            for nn in 0..n {
                for j in 0..n {
                    let mut terms = vec![n3[[kk, m, nn, j]], dcm_x[[kk, nn, j]]];
                    terms.extend((0..n).map(|hh| nc[[hh, m]] * dcm_y[hh][[kk, nn, j]]));
                    terms.extend((0..n).map(|s| -n2[[kk, m, s]] * cm[[s, nn, j]]));
                    terms.extend((0..n).map(|s| n2[[s, m, nn]] * cm[[kk, s, j]]));
                    terms.extend((0..n).map(|s| n2[[s, m, j]] * cm[[kk, nn, s]]));
                    acc.add(&terms);
                }
            }
        }
    }
    out.push(id("second fiber derivative equals minus covariant Cartan derivative", acc.value()));

    let mut acc = Acc::default();
    let n3_low = Array4::from_shape_fn((n, n, n, n), |(kk, m, nn, j)| (0..n).map(|hh| g[[kk, hh]] * n3[[hh, m, nn, j]]).sum::<f64>());
    for m in 0..n {
        for nn in 0..n {
            for j in 0..n {
                let terms: Vec<f64> = (0..n).map(|kk| md.y_lower[kk] * n3[[kk, m, nn, j]]).collect();
                acc.add(&terms);
                for kk in 0..n {
                    let v = n3_low[[kk, m, nn, j]];
                    sym = sym.max((v - n3_low[[nn, m, kk, j]]).abs()).max((v - n3_low[[j, m, nn, kk]]).abs());
                }
            }
        }
    }
    out.push(id("covector annihilates second fiber derivative", acc.value()));
    out.push(id("total symmetry of lowered second fiber derivative", sym / linalg::max_abs(&n3_low).max(1.0)));

    let mut acc = Acc::default();
    for kk in 0..n {
        for i in 0..n {
            let mut terms = vec![nc[[kk, i]]];
            terms.extend((0..n).map(|m| cd.d[[kk, i, m]] * y[m]));
            acc.add(&terms);
        }
    }
    out.push(id("derivative coefficients contracted with y", acc.value()));

    // dK/dx^m = K^(2(1-h)) t_s T^s_m / (K h)
    let tt = transport_term(geo, &mj.t, &t);
    let t_low = geo.a.dot(&t);
    let rhs = t_low.dot(&tt) * (k.powf(2.0 * (1.0 - h)) / (k * h));
    out.push(id("metric function derivative through the map", linalg::scaled_diff(&dkx, &rhs)));

    // N^k_{mn} = -y^k_{sl} t^l_n T^s_m - y^k_s T^s_{n,m}
    let y2 = inverse_second(&ij.yi, &t2);
    let tnm = Array3::from_shape_fn((n, n, n), |(s, nn, m)| {
        mj.t[s].d2(mj.x(m), mj.y(nn)) + (0..n).map(|hh| gam[[s, m, hh]] * tjac[[hh, nn]]).sum::<f64>()
    });
    let rhs = Array3::from_shape_fn((n, n, n), |(kk, m, nn)| {
        let mut v = 0.0;
        for s in 0..n {
            for l in 0..n {
                v -= y2[[kk, s, l]] * tjac[[l, nn]] * tt[[s, m]];
            }
            v -= ij.yi[[kk, s]] * tnm[[s, nn, m]];
        }
        v
    });
    out.push(id("first fiber derivative through the map", linalg::scaled_diff(n2, &rhs)));
    Ok(out)
}

/// `l_h N^h_i = -K (g q~ / B) s~_i - l_t a^t_{ih} y^h`.
pub fn axis_contraction_residual(geo: &LocalGeometry, md: &MetricData, cd: &ConnectionData, y: &[f64]) -> Result<f64> {
    let n = geo.dim;
    let f = PointFields::from_geometry(geo);
    let sc = scalars(&f, y)?;
    let lhs = md.l_lower.dot(&cd.n);
    let rhs = Array1::from_shape_fn(n, |i| {
        let gy: f64 = (0..n)
            .map(|t| md.l_lower[t] * (0..n).map(|hh| geo.gamma[[t, i, hh]] * y[hh]).sum::<f64>())
            .sum();
        -sc.k * geo.g * sc.qt / sc.bb * cd.s_tilde[i] - gy
    });
    Ok(linalg::scaled_diff(&lhs, &rhs))
}

/// Orthogonality relations of the frame vector and `beta~`.
pub fn orthogonality(geo: &LocalGeometry, md: &MetricData, cd: &ConnectionData) -> Vec<Identity> {
    let m_low = md.g.dot(&md.m);
    let scale = linalg::max_abs(&cd.beta_tilde).max(1.0);
    vec![
        id("frame vector orthogonal to l", md.m.dot(&md.l_lower).abs()),
        id("beta orthogonal to b", linalg::max_abs(&geo.b.dot(&cd.beta_tilde)) / scale),
        id("beta orthogonal to l", linalg::max_abs(&md.l_lower.dot(&cd.beta_tilde)) / scale),
        id("beta orthogonal to m", linalg::max_abs(&m_low.dot(&cd.beta_tilde)) / scale),
    ]
}

/// Contractions of the coefficients with `u`, `b`, and the derivatives
/// `d_n b`, `d_n q`, `d_n B`, stated for a unit-norm 1-form.
pub fn contractions(site: &Site, y: &[f64]) -> Result<Vec<Identity>> {
    let geo = &site.geo;
    if (geo.c - 1.0).abs() > 1e-14 {
        return Err(GeomError::RequiresUnitNorm(geo.c));
    }
    let n = geo.dim;
    let (g, h) = (geo.g, geo.h());
    let nc = n_coeffs_closed(geo, y)?;
    let mj = mixed_jets(site, y, 1)?;
    let yv = Array1::from(y.to_vec());
    let u = geo.a.dot(&yv);
    let b = geo.b.dot(&yv);
    let q = (u.dot(&yv) - b * b).sqrt();
    let s = Array1::from_shape_fn(n, |i| (0..n).map(|j| y[j] * geo.nabla_b[[i, j]]).sum::<f64>());
    let gy = Array2::from_shape_fn((n, n), |(kk, i)| (0..n).map(|j| geo.gamma[[kk, i, j]] * y[j]).sum::<f64>());
    let d_op = |jet: &Jet, i: usize| jet.d1(mj.x(i)) + (0..n).map(|kk| nc[[kk, i]] * jet.d1(mj.y(kk))).sum::<f64>();
    let qj = (mj.s2.clone() - mj.b.clone().square()).sqrt();
    let bb = mj.bb.val();
    let lhs_u = u.dot(&nc);
    let rhs_u = Array1::from_shape_fn(n, |i| -g * q * s[i] / h - u.dot(&gy.column(i)));
    let lhs_b = geo.b.dot(&nc);
    let rhs_b = Array1::from_shape_fn(n, |i| (1.0 - h) * s[i] / h - geo.b.dot(&gy.column(i)));
    let db = Array1::from_shape_fn(n, |i| d_op(&mj.b, i));
    let dq = Array1::from_shape_fn(n, |i| d_op(&qj, i));
    let dbb = Array1::from_shape_fn(n, |i| d_op(&mj.bb, i));
    Ok(vec![
        id("u contraction", linalg::scaled_diff(&lhs_u, &rhs_u)),
        id("b contraction", linalg::scaled_diff(&lhs_b, &rhs_b)),
        id("transported b", linalg::scaled_diff(&db, &(&s / h))),
        id("transported q", linalg::scaled_diff(&dq, &(&s * (-(b + g * q) / (h * q))))),
        id("transported B", linalg::scaled_diff(&dbb, &(&s * (-g * bb / (q * h))))),
    ])
}

/// Homogeneity of `N` (degree 1) and `D` (degree 0) under `y -> k y`.
pub fn homogeneity(site: &Site, y: &[f64], factor: f64) -> Result<(f64, f64)> {
    let a = connection_data(site, y)?;
    let ky: Vec<f64> = y.iter().map(|v| v * factor).collect();
    let b = connection_data(site, &ky)?;
    Ok((linalg::scaled_diff(&b.n, &(&a.n * factor)), linalg::scaled_diff(&b.d, &a.d)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::BackgroundModel;

    const X: [f64; 3] = [0.2, -0.3, 0.4];
    const Y: [f64; 3] = [0.4, 0.9, -0.5];

    #[test]
    fn flat_constant_form_has_zero_connection() {
        let model = BackgroundModel::flat(3, 1.0, 1.2).unwrap();
        let site = Site::new(&model, &X, Level::Connection).unwrap();
        assert!(linalg::max_abs(&n_coeffs_closed(&site.geo, &Y).unwrap()) < 1e-15);
        assert!(linalg::max_abs(&n_coeffs_transitivity(&site, &Y, fd::DEFAULT_STEP).unwrap()) < 1e-9);
    }

    #[test]
    fn riemannian_limit() {
        let model = BackgroundModel::conformal(3, 1.0, 0.0).unwrap();
        let site = Site::new(&model, &X, Level::Connection).unwrap();
        let nc = n_coeffs_closed(&site.geo, &Y).unwrap();
        let gy = Array2::from_shape_fn((3, 3), |(m, i)| -(0..3).map(|hh| site.geo.gamma[[m, i, hh]] * Y[hh]).sum::<f64>());
        assert!(linalg::scaled_diff(&nc, &gy) < 1e-13);
    }

    #[test]
    fn routes_agree() {
        for model in [
            BackgroundModel::rotating(3, 1.0, 0.9).unwrap(),
            BackgroundModel::rotating(3, 0.6, 0.9).unwrap(),
            BackgroundModel::perturbed(3, 0.8, -0.7).unwrap(),
            BackgroundModel::conformal(3, 1.0, -1.3).unwrap(),
            BackgroundModel::constant_curvature(3, 1.0, 1.5).unwrap(),
        ] {
            let site = Site::new(&model, &X, Level::Connection).unwrap();
            // Both signs of b = b_i y^i.
            for y in [Y, Y.map(|v| -v)] {
                assert!(crate::finsleroid::eval_scalars(&site.geo, &y).is_ok());
                let a = n_coeffs_closed(&site.geo, &y).unwrap();
                let b = n_coeffs_transitivity(&site, &y, fd::DEFAULT_STEP).unwrap();
                let c = n_coeffs_inverse_jacobian(&site, &y).unwrap();
                let label = model.kind.label();
                assert!(linalg::scaled_diff(&a, &b) < 1e-8, "{label} transitivity {}", linalg::scaled_diff(&a, &b));
                assert!(linalg::scaled_diff(&a, &c) < 1e-12, "{label} inverse Jacobian {}", linalg::scaled_diff(&a, &c));
                // The assembly through dK/dx is written for |b| = 1.
                if unit_norm(model.c) {
                    let d = n_coeffs_alternative(&site, &y).unwrap();
                    assert!(linalg::scaled_diff(&a, &d) < 1e-12, "{label} alternative {}", linalg::scaled_diff(&a, &d));
                }
            }
        }
    }

    #[test]
    fn covariant_suite_vanishes() {
        let model = BackgroundModel::conformal(3, 1.0, 0.8).unwrap();
        let site = Site::new(&model, &X, Level::Connection).unwrap();
        for r in covariant_suite(&site, &Y).unwrap() {
            assert!(r.residual < 1e-10, "{}: {}", r.name, r.residual);
        }
    }

    #[test]
    fn closed_form_holds_below_unit_norm() {
        let model = BackgroundModel::conformal(3, 0.7, 0.9).unwrap();
        let site = Site::new(&model, &X, Level::Connection).unwrap();
        let cd = connection_data(&site, &Y).unwrap();
        assert_eq!(cd.route, Route::ClosedForm);
        let fd_route = n_coeffs_transitivity(&site, &Y, fd::DEFAULT_STEP).unwrap();
        assert!(linalg::scaled_diff(&cd.n, &fd_route) < 1e-8);
        let jets = connection_data_with(&site, &Y, Route::Transitivity).unwrap();
        assert!(linalg::scaled_diff(&cd.n, &jets.n) < 1e-12);
        assert!(linalg::scaled_diff(&cd.n2, &jets.n2) < 1e-11);
        assert!(linalg::scaled_diff(&cd.n3, &jets.n3) < 1e-10);
        for r in covariant_suite(&site, &Y).unwrap() {
            assert!(r.residual < 1e-10, "{}: {}", r.name, r.residual);
        }
    }

    #[test]
    fn jet_routes_match_frozen_closed_form() {
        let model = BackgroundModel::rotating(3, 1.0, 0.9).unwrap();
        let site = Site::new(&model, &X, Level::Connection).unwrap();
        let a = connection_data_closed(&site.geo, &Y).unwrap();
        let b = connection_data_with(&site, &Y, Route::Transitivity).unwrap();
        assert!(linalg::scaled_diff(&a.n, &b.n) < 1e-12);
        assert!(linalg::scaled_diff(&a.n2, &b.n2) < 1e-11);
        assert!(linalg::scaled_diff(&a.n3, &b.n3) < 1e-10);
    }

    #[test]
    fn unit_norm_contractions() {
        let model = BackgroundModel::rotating(3, 1.0, 1.1).unwrap();
        let site = Site::new(&model, &X, Level::Connection).unwrap();
        for r in contractions(&site, &Y).unwrap() {
            assert!(r.residual < 1e-10, "{}: {}", r.name, r.residual);
        }
        let md = metric_data(&site.geo, &Y).unwrap();
        let cd = connection_data(&site, &Y).unwrap();
        for r in orthogonality(&site.geo, &md, &cd) {
            assert!(r.residual < 1e-10, "{}: {}", r.name, r.residual);
        }
        assert!(axis_contraction_residual(&site.geo, &md, &cd, &Y).unwrap() < 1e-10);
    }

    #[test]
    fn homogeneity_degrees() {
        let model = BackgroundModel::conformal(3, 1.0, 0.8).unwrap();
        let site = Site::new(&model, &X, Level::Connection).unwrap();
        for k in [0.5, 3.0] {
            let (a, b) = homogeneity(&site, &Y, k).unwrap();
            assert!(a < 1e-12 && b < 1e-12);
        }
    }
}
