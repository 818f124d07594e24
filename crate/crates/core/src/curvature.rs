//! Curvature of the angle-preserving connection.
//!
//! `M^n_ij` (commutator of the horizontal derivatives), `E_k^n_ij` (its
//! fiber counterpart), `rho_k^n_ij = E_k^n_ij - M^h_ij C^n_hk` and the
//! tensor `T_kn^hm` that carries the background curvature over:
//! `rho_knij = T_kn^hm a_hmij`.
//!
//! Definition routes use the connection coefficients as exact jets in
//! `(x, y)`. Transitive routes go through the map, its inverse Jacobian and
//! the background Riemann tensor.
//!
//! Layouts: `m[[n, i, j]] = M^n_ij`, `e[[k, n, i, j]] = E_k^n_ij`,
//! `rho[[k, n, i, j]] = rho_k^n_ij`, lowered tensors put the lowered index
//! second, `t_tensor[[k, n, h, m]] = T_kn^hm`.

use ndarray::{Array1, Array2, Array3, Array4, Array5};

use crate::automorphism::{t_derivatives, t_jets};
use crate::background::{geometry, Level, LocalGeometry, PointFields, Site};
use crate::check::{id, Acc, Identity};
use crate::connection::{connection_data, n_jets, mixed_jets, ConnectionData, Route};
use crate::error::{GeomError, Result};
use crate::fd;
use crate::finsleroid::{eval_scalars, metric_data, MetricData};
use crate::jets::{lift_block, Jet, Scalar};
use crate::linalg::{self, scaled_diff, Mat};

/// Connection coefficients with their base and fiber derivatives up to
/// second order.
///
/// `v[[m, i]] = N^m_i`, `dx[[m, i, l]] = dN^m_i/dx^l`, `dy[[m, i, h]] =
/// dN^m_i/dy^h`, and likewise for the second derivatives with the
/// differentiation indices last, base before fiber.
#[derive(Clone, Debug)]
pub struct NField {
    pub v: Array2<f64>,
    pub dx: Array3<f64>,
    pub dy: Array3<f64>,
    pub dxx: Array4<f64>,
    pub dxy: Array4<f64>,
    pub dyy: Array4<f64>,
}

pub fn n_field(site: &Site, y: &[f64], route: Route) -> Result<NField> {
    let n = site.dim();
    let nj = n_jets(site, y, route)?;
    let at = |m: usize, i: usize| &nj[m * n + i];
    Ok(NField {
        v: Array2::from_shape_fn((n, n), |(m, i)| at(m, i).val()),
        dx: Array3::from_shape_fn((n, n, n), |(m, i, l)| at(m, i).d1(l)),
        dy: Array3::from_shape_fn((n, n, n), |(m, i, h)| at(m, i).d1(n + h)),
        dxx: Array4::from_shape_fn((n, n, n, n), |(m, i, l, r)| at(m, i).d2(l, r)),
        dxy: Array4::from_shape_fn((n, n, n, n), |(m, i, l, h)| at(m, i).d2(l, n + h)),
        dyy: Array4::from_shape_fn((n, n, n, n), |(m, i, h, r)| at(m, i).d2(n + h, n + r)),
    })
}

/// `M^n_ij = dN^n_j/dx^i - dN^n_i/dx^j - N^h_i D^n_jh + N^h_j D^n_ih`.
pub fn m_definition(nf: &NField) -> Array3<f64> {
    let n = nf.v.nrows();
    Array3::from_shape_fn((n, n, n), |(a, i, j)| {
        let mut v = nf.dx[[a, j, i]] - nf.dx[[a, i, j]];
        for h in 0..n {
            v += nf.v[[h, i]] * nf.dy[[a, j, h]] - nf.v[[h, j]] * nf.dy[[a, i, h]];
        }
        v
    })
}

/// `E_k^n_ij = d_i D^n_jk - d_j D^n_ik + D^m_jk D^n_im - D^m_ik D^n_jm`.
pub fn e_definition(nf: &NField) -> Array4<f64> {
    let n = nf.v.nrows();
    // d_i D^a_jk with D = -dN/dy
    let d_d = |i: usize, a: usize, j: usize, k: usize| {
        let mut v = -nf.dxy[[a, j, i, k]];
        for h in 0..n {
            v -= nf.v[[h, i]] * nf.dyy[[a, j, h, k]];
        }
        v
    };
    let dd = |a: usize, i: usize, j: usize| -nf.dy[[a, i, j]];
    Array4::from_shape_fn((n, n, n, n), |(k, a, i, j)| {
        let mut v = d_d(i, a, j, k) - d_d(j, a, i, k);
        for m in 0..n {
            v += dd(m, j, k) * dd(a, i, m) - dd(m, i, k) * dd(a, j, m);
        }
        v
    })
}

/// `rho_k^n_ij = E_k^n_ij - M^h_ij C^n_hk`.
pub fn rho_from(e: &Array4<f64>, m: &Array3<f64>, md: &MetricData) -> Array4<f64> {
    let n = m.dim().0;
    Array4::from_shape_fn((n, n, n, n), |(k, a, i, j)| {
        e[[k, a, i, j]] - (0..n).map(|h| m[[h, i, j]] * md.cartan_mixed[[a, h, k]]).sum::<f64>()
    })
}

/// Lower the second index with `g`.
pub fn lower_second(t: &Array4<f64>, g: &Array2<f64>) -> Array4<f64> {
    let n = g.nrows();
    Array4::from_shape_fn((n, n, n, n), |(k, a, i, j)| (0..n).map(|s| g[[a, s]] * t[[k, s, i, j]]).sum())
}

fn lower_m(m: &Array3<f64>, g: &Array2<f64>) -> Array3<f64> {
    let n = g.nrows();
    Array3::from_shape_fn((n, n, n), |(a, i, j)| (0..n).map(|s| g[[a, s]] * m[[s, i, j]]).sum())
}

/// The map and its derivatives at one `(x, y)`.
#[derive(Clone, Debug)]
pub struct MapFrame {
    pub t: Array1<f64>,
    /// `t^h_k`, `[[h, k]]`.
    pub tj: Array2<f64>,
    /// `t^h_km`, `[[h, k, m]]`.
    pub t2: Array3<f64>,
    /// `y^n_h`, `[[n, h]]`.
    pub yi: Array2<f64>,
    pub k: f64,
    pub p: f64,
    pub md: MetricData,
}

pub fn map_frame(geo: &LocalGeometry, y: &[f64]) -> Result<MapFrame> {
    let (t, tj, t2) = t_derivatives(geo, y)?;
    let yi = linalg::invert(&tj).ok_or_else(|| GeomError::NumericalInconsistency("singular map Jacobian".into()))?;
    let md = metric_data(geo, y)?;
    let h = geo.h();
    let k = md.k;
    Ok(MapFrame { t, tj, t2, yi, k, p: k.powf(1.0 - h) / h, md })
}

/// `M^n_ij = -y^n_t t^h a_h^t_ij`.
pub fn m_transitive(geo: &LocalGeometry, fr: &MapFrame) -> Array3<f64> {
    let n = geo.dim;
    let r = geo.riemann();
    Array3::from_shape_fn((n, n, n), |(a, i, j)| {
        let mut v = 0.0;
        for t in 0..n {
            for h in 0..n {
                v -= fr.yi[[a, t]] * fr.t[h] * r[[h, t, i, j]];
            }
        }
        v
    })
}

/// `E_k^n_ij = y^n_h t^h_km M^m_ij + y^n_m a_h^m_ij t^h_k`.
pub fn e_transitive(geo: &LocalGeometry, fr: &MapFrame, m: &Array3<f64>) -> Array4<f64> {
    let n = geo.dim;
    let r = geo.riemann();
    Array4::from_shape_fn((n, n, n, n), |(k, a, i, j)| {
        let mut v = 0.0;
        for h in 0..n {
            for mm in 0..n {
                v += fr.yi[[a, h]] * fr.t2[[h, k, mm]] * m[[mm, i, j]];
                v += fr.yi[[a, mm]] * r[[h, mm, i, j]] * fr.tj[[h, k]];
            }
        }
        v
    })
}

/// `E = -dM/dy` with `M` in its transitive form carried as fiber jets.
pub fn e_from_m_jets(geo: &LocalGeometry, y: &[f64]) -> Result<Array4<f64>> {
    let n = geo.dim;
    let t = t_jets(geo, y, 2)?;
    let jac = Mat::from_fn(n, |h, k| t[h].partial(k));
    let yi = jac.inverse()?;
    let r = geo.riemann();
    let mut out = Array4::zeros((n, n, n, n));
    for a in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut acc = Jet::constant(0.0);
                for tt in 0..n {
                    for h in 0..n {
                        acc = acc - yi.at(a, tt).clone() * t[h].clone() * r[[h, tt, i, j]];
                    }
                }
                for k in 0..n {
                    out[[k, a, i, j]] = -acc.d1(k);
                }
            }
        }
    }
    Ok(out)
}

/// `rho_k^n_ij = -(1-h)/F (l_k M^n_ij - l^n M_kij) + y^n_m a_h^m_ij t^h_k`.
pub fn rho_closed(geo: &LocalGeometry, fr: &MapFrame, m: &Array3<f64>) -> Array4<f64> {
    let n = geo.dim;
    let h = geo.h();
    let r = geo.riemann();
    let ml = lower_m(m, &fr.md.g);
    let (l, lu) = (&fr.md.l_lower, &fr.md.l_up);
    Array4::from_shape_fn((n, n, n, n), |(k, a, i, j)| {
        let mut v = -(1.0 - h) / fr.k * (l[k] * m[[a, i, j]] - lu[a] * ml[[k, i, j]]);
        for mm in 0..n {
            for hh in 0..n {
                v += fr.yi[[a, mm]] * r[[hh, mm, i, j]] * fr.tj[[hh, k]];
            }
        }
        v
    })
}

/// `T_kn^hm = p^2 [ (t^h_k t^m_n - t^m_k t^h_n)/2 + (1-h)/F^2 (y_k t^h t^m_n
/// - y_n t^h t^m_k) ]`.
pub fn t_tensor(geo: &LocalGeometry, fr: &MapFrame) -> Array4<f64> {
    let n = geo.dim;
    let h = geo.h();
    let yl = &fr.md.y_lower;
    let (p2, f2) = (fr.p * fr.p, fr.k * fr.k);
    Array4::from_shape_fn((n, n, n, n), |(k, a, hh, m)| {
        p2 * (0.5 * (fr.tj[[hh, k]] * fr.tj[[m, a]] - fr.tj[[m, k]] * fr.tj[[hh, a]])
            + (1.0 - h) / f2 * (yl[k] * fr.t[hh] * fr.tj[[m, a]] - yl[a] * fr.t[hh] * fr.tj[[m, k]]))
    })
}

/// `rho_knij = T_kn^hm a_hmij`.
pub fn rho_tform(tt: &Array4<f64>, a_low: &Array4<f64>) -> Array4<f64> {
    let n = tt.dim().0;
    Array4::from_shape_fn((n, n, n, n), |(k, a, i, j)| {
        let mut v = 0.0;
        for h in 0..n {
            for m in 0..n {
                v += tt[[k, a, h, m]] * a_low[[h, m, i, j]];
            }
        }
        v
    })
}

/// `M_nij = -p^2 t^h t^m_n a_hmij`.
pub fn m_lower_transitive(fr: &MapFrame, a_low: &Array4<f64>) -> Array3<f64> {
    let n = fr.t.len();
    Array3::from_shape_fn((n, n, n), |(a, i, j)| {
        let mut v = 0.0;
        for h in 0..n {
            for m in 0..n {
                v -= fr.t[h] * fr.tj[[m, a]] * a_low[[h, m, i, j]];
            }
        }
        fr.p * fr.p * v
    })
}

fn raise_ij3(t: &Array3<f64>, ai: &Array2<f64>) -> Array3<f64> {
    let n = ai.nrows();
    Array3::from_shape_fn((n, n, n), |(a, i, j)| {
        let mut v = 0.0;
        for r in 0..n {
            for s in 0..n {
                v += ai[[i, r]] * ai[[j, s]] * t[[a, r, s]];
            }
        }
        v
    })
}

/// Raise all four indices: the first two with `m1`, the last two with `a`.
fn raise4(t: &Array4<f64>, m1: &Array2<f64>, ai: &Array2<f64>) -> Array4<f64> {
    let n = ai.nrows();
    let step = |t: &Array4<f64>, mat: &Array2<f64>, slot: usize| {
        Array4::from_shape_fn((n, n, n, n), |idx| {
            let idx = [idx.0, idx.1, idx.2, idx.3];
            (0..n)
                .map(|s| {
                    let mut j = idx;
                    j[slot] = s;
                    mat[[idx[slot], s]] * t[j]
                })
                .sum()
        })
    };
    let a = step(t, m1, 0);
    let a = step(&a, m1, 1);
    let a = step(&a, ai, 2);
    step(&a, ai, 3)
}

fn contract4(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn contract3(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Curvature at one `(x, y)` by the definition routes.
#[derive(Clone, Debug)]
pub struct CurvatureData {
    pub m: Array3<f64>,
    pub e: Array4<f64>,
    pub rho: Array4<f64>,
    pub t_tensor: Array4<f64>,
    pub rho_lower: Array4<f64>,
    pub m_lower: Array3<f64>,
}

/// Requires a site prepared at least at [`Level::Curvature`].
pub fn curvature_data(site: &Site, y: &[f64]) -> Result<CurvatureData> {
    let geo = &site.geo;
    let nf = n_field(site, y, Route::ClosedForm)?;
    let fr = map_frame(geo, y)?;
    let m = m_definition(&nf);
    let e = e_definition(&nf);
    let rho = rho_from(&e, &m, &fr.md);
    Ok(CurvatureData {
        rho_lower: lower_second(&rho, &fr.md.g),
        m_lower: lower_m(&m, &fr.md.g),
        t_tensor: t_tensor(geo, &fr),
        m,
        e,
        rho,
    })
}

/// `(B/K^2) M_nij` in closed Finsleroid form (unit-norm 1-form only).
pub fn m_lower_finsleroid(geo: &LocalGeometry, y: &[f64]) -> Result<Array3<f64>> {
    if (geo.c - 1.0).abs() > 1e-14 {
        return Err(GeomError::RequiresUnitNorm(geo.c));
    }
    let n = geo.dim;
    let (h, g) = (geo.h(), geo.g);
    let ev = eval_scalars(geo, y)?;
    let (b, q) = (ev.b, ev.q);
    let bl = &geo.b;
    let v = geo.lower(y) - bl * b;
    let r = geo.riemann();
    let al = geo.riemann_lower();
    let coef = ((1.0 - h) * b + 0.5 * g * q) / h;
    Ok(Array3::from_shape_fn((n, n, n), |(a, i, j)| {
        let mut ba = 0.0;
        let mut yba = 0.0;
        let mut ya = 0.0;
        for l in 0..n {
            ba += bl[l] * r[[a, l, i, j]];
            for t in 0..n {
                yba += y[t] * bl[l] * r[[t, l, i, j]];
            }
            ya += al[[l, a, i, j]] * y[l];
        }
        coef * ba - (0.5 * g / q * v[a] + (1.0 - h) * bl[a]) / h * yba - ya
    }))
}

/// `((1-h) b + g q / 2)/h b_l a_n^l_ij - a_tnij y^t`: the closed form of
/// `(B/K^2) M_nij` without its `v_n`, `b_n` term. Its full `a`-contraction
/// with itself gives `(B/K^2) M^nij M_nij`.
fn m_norm_factor(geo: &LocalGeometry, y: &[f64]) -> Result<Array3<f64>> {
    let n = geo.dim;
    let (h, g) = (geo.h(), geo.g);
    let ev = eval_scalars(geo, y)?;
    let r = geo.riemann();
    let al = geo.riemann_lower();
    let coef = ((1.0 - h) * ev.b + 0.5 * g * ev.q) / h;
    Ok(Array3::from_shape_fn((n, n, n), |(a, i, j)| {
        let mut v = 0.0;
        for l in 0..n {
            v += coef * geo.b[l] * r[[a, l, i, j]] - al[[l, a, i, j]] * y[l];
        }
        v
    }))
}

/// `nabla_l a_hmij = a_mr nabla_l a_h^r_ij`, `[[l, h, m, i, j]]`.
fn nabla_a_lower(geo: &LocalGeometry) -> Array5<f64> {
    let n = geo.dim;
    let nr = geo.nabla_riemann();
    Array5::from_shape_fn((n, n, n, n, n), |(l, h, m, i, j)| (0..n).map(|r| geo.a[[m, r]] * nr[[l, h, r, i, j]]).sum())
}

/// `D_l M^n_ij` by definition, `[[l, n, i, j]]`.
pub fn dm_definition(geo: &LocalGeometry, nf: &NField, m: &Array3<f64>) -> Array4<f64> {
    let n = geo.dim;
    let gam = &geo.gamma;
    let dmx = |a: usize, i: usize, j: usize, l: usize| {
        let mut v = nf.dxx[[a, j, i, l]] - nf.dxx[[a, i, j, l]];
        for h in 0..n {
            v += nf.dx[[h, i, l]] * nf.dy[[a, j, h]] + nf.v[[h, i]] * nf.dxy[[a, j, l, h]];
            v -= nf.dx[[h, j, l]] * nf.dy[[a, i, h]] + nf.v[[h, j]] * nf.dxy[[a, i, l, h]];
        }
        v
    };
    let dmy = |a: usize, i: usize, j: usize, r: usize| {
        let mut v = nf.dxy[[a, j, i, r]] - nf.dxy[[a, i, j, r]];
        for h in 0..n {
            v += nf.dy[[h, i, r]] * nf.dy[[a, j, h]] + nf.v[[h, i]] * nf.dyy[[a, j, h, r]];
            v -= nf.dy[[h, j, r]] * nf.dy[[a, i, h]] + nf.v[[h, j]] * nf.dyy[[a, i, h, r]];
        }
        v
    };
    Array4::from_shape_fn((n, n, n, n), |(l, a, i, j)| {
        let mut v = dmx(a, i, j, l);
        for h in 0..n {
            v += nf.v[[h, l]] * dmy(a, i, j, h);
            v -= nf.dy[[a, l, h]] * m[[h, i, j]];
            v -= gam[[h, l, i]] * m[[a, h, j]] + gam[[h, l, j]] * m[[a, i, h]];
        }
        v
    })
}

/// `D_l M^n_ij = -y^n_t t^h nabla_l a_h^t_ij`.
pub fn dm_transitive(geo: &LocalGeometry, fr: &MapFrame) -> Array4<f64> {
    let n = geo.dim;
    let nr = geo.nabla_riemann();
    Array4::from_shape_fn((n, n, n, n), |(l, a, i, j)| {
        let mut v = 0.0;
        for t in 0..n {
            for h in 0..n {
                v -= fr.yi[[a, t]] * fr.t[h] * nr[[l, h, t, i, j]];
            }
        }
        v
    })
}

/// `D_l rho_knij = T_kn^hm nabla_l a_hmij`, `[[l, k, n, i, j]]`.
pub fn drho_tform(tt: &Array4<f64>, na: &Array5<f64>) -> Array5<f64> {
    let n = tt.dim().0;
    Array5::from_shape_fn((n, n, n, n, n), |(l, k, a, i, j)| {
        let mut v = 0.0;
        for h in 0..n {
            for m in 0..n {
                v += tt[[k, a, h, m]] * na[[l, h, m, i, j]];
            }
        }
        v
    })
}

/// `D_l rho_k^n_ij` from the closed form, `[[l, k, n, i, j]]`.
pub fn drho_closed(geo: &LocalGeometry, fr: &MapFrame) -> Array5<f64> {
    let n = geo.dim;
    let h = geo.h();
    let nr = geo.nabla_riemann();
    let dm = dm_transitive(geo, fr);
    let dml = Array4::from_shape_fn((n, n, n, n), |(l, a, i, j)| (0..n).map(|s| fr.md.g[[a, s]] * dm[[l, s, i, j]]).sum::<f64>());
    let (lo, lu) = (&fr.md.l_lower, &fr.md.l_up);
    Array5::from_shape_fn((n, n, n, n, n), |(l, k, a, i, j)| {
        let mut v = -(1.0 - h) / fr.k * (lo[k] * dm[[l, a, i, j]] - lu[a] * dml[[l, k, i, j]]);
        for m in 0..n {
            for hh in 0..n {
                v += fr.yi[[a, m]] * fr.tj[[hh, k]] * nr[[l, hh, m, i, j]];
            }
        }
        v
    })
}

fn cyclic4(d: &Array4<f64>) -> f64 {
    let n = d.dim().0;
    let mut acc = Acc::default();
    for l in 0..n {
        for a in 0..n {
            for i in 0..n {
                for j in 0..n {
                    acc.add(&[d[[l, a, i, j]], d[[j, a, l, i]], d[[i, a, j, l]]]);
                }
            }
        }
    }
    acc.value()
}

fn cyclic5(d: &Array5<f64>) -> f64 {
    let n = d.dim().0;
    let mut acc = Acc::default();
    for l in 0..n {
        for k in 0..n {
            for a in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        acc.add(&[d[[l, k, a, i, j]], d[[j, k, a, l, i]], d[[i, k, a, j, l]]]);
                    }
                }
            }
        }
    }
    acc.value()
}

/// `D_l T_kn^hm` by definition with exact jets; returns the scaled
/// residual of its vanishing.
pub fn t_parallel_residual(site: &Site, y: &[f64], cd: &ConnectionData) -> Result<f64> {
    let geo = &site.geo;
    let n = geo.dim;
    let h = geo.h();
    let mj = mixed_jets(site, y, 3)?;
    let tj: Vec<Vec<Jet>> = (0..n).map(|a| (0..n).map(|k| mj.t[a].partial(n + k)).collect()).collect();
    let p = mj.k.clone().powf(1.0 - h) / h;
    let p2 = p.clone() * p;
    let f2 = mj.k.clone().square();
    let mut tt: Vec<Jet> = Vec::with_capacity(n.pow(4));
    let inv_f2 = Jet::constant(1.0 - h) / f2;
    for k in 0..n {
        for a in 0..n {
            for hh in 0..n {
                for m in 0..n {
                    let first = (tj[hh][k].clone() * tj[m][a].clone() - tj[m][k].clone() * tj[hh][a].clone()) * 0.5;
                    let second = inv_f2.clone()
                        * mj.t[hh].clone()
                        * (mj.y_lower[k].clone() * tj[m][a].clone() - mj.y_lower[a].clone() * tj[m][k].clone());
                    tt.push(p2.clone() * (first + second));
                }
            }
        }
    }
    let at = |k: usize, a: usize, hh: usize, m: usize| &tt[((k * n + a) * n + hh) * n + m];
    let gam = &geo.gamma;
    let mut acc = Acc::default();
    for l in 0..n {
        for k in 0..n {
            for a in 0..n {
                for hh in 0..n {
                    for m in 0..n {
                        let tv = at(k, a, hh, m);
                        let mut terms = vec![tv.d1(l)];
                        for s in 0..n {
                            terms.push(cd.n[[s, l]] * tv.d1(n + s));
                            terms.push(cd.n2[[s, l, k]] * at(s, a, hh, m).val());
                            terms.push(cd.n2[[s, l, a]] * at(k, s, hh, m).val());
                            terms.push(gam[[hh, l, s]] * at(k, a, s, m).val());
                            terms.push(gam[[m, l, s]] * at(k, a, hh, s).val());
                        }
                        acc.add(&terms);
                    }
                }
            }
        }
    }
    Ok(acc.value())
}

/// Test tensor field `w^n_k(x, y)`: trigonometric in `x`, polynomial in `y`.
/// Flattened as `[n * dim + k]`.
pub fn test_tensor<S: Scalar>(x: &[S], y: &[S]) -> Vec<S> {
    let n = x.len();
    let mut out = Vec::with_capacity(n * n);
    for a in 0..n {
        for k in 0..n {
            let phase = x[a].clone() * 0.7 - x[k].clone() * 0.4 + 0.3 * (a + 1) as f64;
            let base = phase.sin() * (x[(a + k) % n].clone() * 0.1 + 1.0);
            let poly = y[a].clone() * y[k].clone() * 0.5 + y[(k + 1) % n].clone() * (0.3 * (a + 1) as f64)
                - y[(a + 2) % n].clone() * (0.2 * (k + 1) as f64);
            out.push(base + poly);
        }
    }
    out
}

/// Scaled residual of the commutator identity
/// `[D_i, D_j] w^n_k = M^h_ij S_h w^n_k - rho_k^h_ij w^n_h + rho_h^n_ij w^h_k`
/// on the test tensor, all derivatives exact.
pub fn commutator_residual(site: &Site, y: &[f64]) -> Result<f64> {
    let geo = &site.geo;
    let n = geo.dim;
    let nv = 2 * n;
    let route = Route::ClosedForm;
    let nj = n_jets(site, y, route)?;
    let xj = lift_block(site.x(), 0, nv, 2)?;
    let yj = lift_block(y, n, nv, 2)?;
    let w = test_tensor(&xj, &yj);
    let wv = |a: usize, k: usize| w[a * n + k].val();
    // D^a_jh = -dN^a_j/dy^h as jets of order one
    let dd: Vec<Jet> = (0..n * n * n)
        .map(|idx| {
            let (a, j, h) = (idx / (n * n), (idx / n) % n, idx % n);
            -nj[a * n + j].partial(n + h)
        })
        .collect();
    let d = |a: usize, j: usize, h: usize| &dd[(a * n + j) * n + h];
    // X_j^a_k = D_j w^a_k as jets
    let mut x_t: Vec<Jet> = Vec::with_capacity(n * n * n);
    for j in 0..n {
        for a in 0..n {
            for k in 0..n {
                let wk = &w[a * n + k];
                let mut v = wk.partial(j);
                for h in 0..n {
                    v = v + nj[h * n + j].clone() * wk.partial(n + h);
                    v = v + d(a, j, h).clone() * w[h * n + k].clone();
                    v = v - d(h, j, k).clone() * w[a * n + h].clone();
                }
                x_t.push(v);
            }
        }
    }
    let xv = |j: usize, a: usize, k: usize| &x_t[(j * n + a) * n + k];
    let nval = |m: usize, i: usize| nj[m * n + i].val();
    let dval = |a: usize, j: usize, h: usize| d(a, j, h).val();
    let outer = |i: usize, j: usize, a: usize, k: usize| {
        let xa = xv(j, a, k);
        let mut v = xa.d1(i);
        for h in 0..n {
            v += nval(h, i) * xa.d1(n + h);
            v += dval(a, i, h) * xv(j, h, k).val();
            v -= dval(h, i, k) * xv(j, a, h).val();
        }
        v
    };
    let cd = curvature_data(site, y)?;
    let md = metric_data(geo, y)?;
    let cm = &md.cartan_mixed;
    let s_w = |h: usize, a: usize, k: usize| {
        let mut v = w[a * n + k].d1(n + h);
        for s in 0..n {
            v += cm[[a, h, s]] * wv(s, k) - cm[[s, h, k]] * wv(a, s);
        }
        v
    };
    let mut lhs = Vec::with_capacity(n.pow(4));
    let mut rhs = Vec::with_capacity(n.pow(4));
    for i in 0..n {
        for j in 0..n {
            for a in 0..n {
                for k in 0..n {
                    lhs.push(outer(i, j, a, k) - outer(j, i, a, k));
                    let mut r = 0.0;
                    for h in 0..n {
                        r += cd.m[[h, i, j]] * s_w(h, a, k);
                        r -= cd.rho[[k, h, i, j]] * wv(a, h);
                        r += cd.rho[[h, a, i, j]] * wv(h, k);
                    }
                    rhs.push(r);
                }
            }
        }
    }
    Ok(scaled_diff(&lhs, &rhs))
}

/// Scaled residual of `D_i w^n_m = y^n_h t^j_m nabla_i W^h_j` for
/// `w = y W t` built from the background test tensor `W(x, t)`.
pub fn transitivity_residual(site: &Site, y: &[f64]) -> Result<f64> {
    let geo = &site.geo;
    let n = geo.dim;
    let nv = 2 * n;
    let cd = connection_data(site, y)?;
    let f = PointFields::x_jets(site.model, site.x(), nv, 3)?;
    let yj = lift_block(y, n, nv, 3)?;
    let t = crate::automorphism::t_map_generic(&f, &yj)?;
    let jac = Mat::from_fn(n, |h, k| t[h].partial(n + k));
    let yi = jac.inverse()?;
    let xj = lift_block(site.x(), 0, nv, 3)?;
    let wt = test_tensor(&xj, &t);
    let mut w = Vec::with_capacity(n * n);
    for a in 0..n {
        for m in 0..n {
            let mut acc = Jet::constant(0.0);
            for h in 0..n {
                for j in 0..n {
                    acc = acc + yi.at(a, h).clone() * jac.at(j, m).clone() * wt[h * n + j].clone();
                }
            }
            w.push(acc);
        }
    }
    let tv: Vec<f64> = t.iter().map(Jet::val).collect();
    let xw = lift_block(site.x(), 0, nv, 1)?;
    let tw = lift_block(&tv, n, nv, 1)?;
    let big = test_tensor(&xw, &tw);
    let lcoef = geo.riem_transport_coeffs(&tv);
    let gam = &geo.gamma;
    let nabla_w = |i: usize, h: usize, j: usize| {
        let mut v = big[h * n + j].d1(i);
        for k in 0..n {
            v += lcoef[[k, i]] * big[h * n + j].d1(n + k);
            v += gam[[h, k, i]] * big[k * n + j].val() - gam[[k, j, i]] * big[h * n + k].val();
        }
        v
    };
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..n {
        for a in 0..n {
            for m in 0..n {
                let wa = &w[a * n + m];
                let mut v = wa.d1(i);
                for h in 0..n {
                    v += cd.n[[h, i]] * wa.d1(n + h);
                    v -= cd.n2[[a, i, h]] * w[h * n + m].val();
                    v += cd.n2[[h, i, m]] * w[a * n + h].val();
                }
                lhs.push(v);
                let mut r = 0.0;
                for h in 0..n {
                    for j in 0..n {
                        r += yi.at(a, h).val() * jac.at(j, m).val() * nabla_w(i, h, j);
                    }
                }
                rhs.push(r);
            }
        }
    }
    Ok(scaled_diff(&lhs, &rhs))
}

/// `rho_knij` through the T-form, as a function of `(x, y)`.
fn rho_lower_at(site: &Site, x: &[f64], y: &[f64]) -> Result<Array4<f64>> {
    let geo = geometry(site.model, x, Level::Curvature)?;
    let fr = map_frame(&geo, y)?;
    Ok(rho_tform(&t_tensor(&geo, &fr), &geo.riemann_lower()))
}

/// `D_l rho_knij` by definition with finite differences of the T-form in
/// `(x, y)`, compared with `T_kn^hm nabla_l a_hmij`.
pub fn drho_fd_residual(site: &Site, y: &[f64], cd: &ConnectionData, step: f64) -> Result<f64> {
    let geo = &site.geo;
    let n = geo.dim;
    let z: Vec<f64> = site.x().iter().chain(y).copied().collect();
    let grads = fd::gradient(&z, step, |zz| Ok(rho_lower_at(site, &zz[..n], &zz[n..])?.iter().copied().collect()))?;
    let fr = map_frame(geo, y)?;
    let rho = rho_tform(&t_tensor(geo, &fr), &geo.riemann_lower());
    let want = drho_tform(&t_tensor(geo, &fr), &nabla_a_lower(geo));
    let flat = |k: usize, a: usize, i: usize, j: usize| ((k * n + a) * n + i) * n + j;
    let gam = &geo.gamma;
    let got = Array5::from_shape_fn((n, n, n, n, n), |(l, k, a, i, j)| {
        let mut v = grads[l][flat(k, a, i, j)];
        for s in 0..n {
            v += cd.n[[s, l]] * grads[n + s][flat(k, a, i, j)];
            v += cd.n2[[s, l, k]] * rho[[s, a, i, j]] + cd.n2[[s, l, a]] * rho[[k, s, i, j]];
            v -= gam[[s, l, i]] * rho[[k, a, s, j]] + gam[[s, l, j]] * rho[[k, a, i, s]];
        }
        v
    });
    Ok(scaled_diff(&got, &want))
}

/// Every curvature identity at one `(x, y)`. The site must be prepared at
/// [`Level::CurvatureDerivative`].
pub fn curvature_identities(site: &Site, y: &[f64]) -> Result<Vec<Identity>> {
    let geo = &site.geo;
    let n = geo.dim;
    let h = geo.h();
    let route = Route::ClosedForm;
    let nf = n_field(site, y, route)?;
    let cdat = connection_data(site, y)?;
    let fr = map_frame(geo, y)?;
    let md = &fr.md;
    let a_low = geo.riemann_lower();
    let mut out = Vec::new();

    let m = m_definition(&nf);
    let m_tr = m_transitive(geo, &fr);
    out.push(id("M: definition vs transitive form", scaled_diff(&m, &m_tr)));

    let e = e_definition(&nf);
    let e_tr = e_transitive(geo, &fr, &m_tr);
    let e_jet = e_from_m_jets(geo, y)?;
    out.push(id("E: definition vs fiber derivative of M", scaled_diff(&e, &e_jet)));
    out.push(id("E: definition vs transitive form", scaled_diff(&e, &e_tr)));

    let rho = rho_from(&e, &m, md);
    let rho_cl = rho_closed(geo, &fr, &m_tr);
    let rho_low = lower_second(&rho, &md.g);
    let tt = t_tensor(geo, &fr);
    let rho_t = rho_tform(&tt, &a_low);
    out.push(id("rho: definition vs closed form", scaled_diff(&rho, &rho_cl)));
    out.push(id("rho: definition vs T-form", scaled_diff(&rho_low, &rho_t)));

    let ml = lower_m(&m, &md.g);
    out.push(id("M lowered: transitive form", scaled_diff(&ml, &m_lower_transitive(&fr, &a_low))));

    // skew-symmetries
    let skew_m = Array3::from_shape_fn((n, n, n), |(a, i, j)| m[[a, i, j]] + m[[a, j, i]]);
    out.push(id("M skew in base indices", linalg::max_abs(&skew_m) / linalg::max_abs(&m).max(1.0)));
    let rscale = linalg::max_abs(&rho_low).max(1.0);
    let skew_r1 = Array4::from_shape_fn((n, n, n, n), |(k, a, i, j)| rho_low[[k, a, i, j]] + rho_low[[a, k, i, j]]);
    let skew_r2 = Array4::from_shape_fn((n, n, n, n), |(k, a, i, j)| rho_low[[k, a, i, j]] + rho_low[[k, a, j, i]]);
    out.push(id("rho skew in fiber pair", linalg::max_abs(&skew_r1) / rscale));
    out.push(id("rho skew in base pair", linalg::max_abs(&skew_r2) / rscale));

    // contractions
    let mscale = linalg::max_abs(&m).max(1.0);
    let ym = Array2::from_shape_fn((n, n), |(i, j)| (0..n).map(|a| md.y_lower[a] * m[[a, i, j]]).sum::<f64>());
    out.push(id("covector annihilates M", linalg::max_abs(&ym) / mscale));
    let ye = Array3::from_shape_fn((n, n, n), |(a, i, j)| (0..n).map(|k| y[k] * e[[k, a, i, j]]).sum::<f64>() + m[[a, i, j]]);
    out.push(id("vector contracted with E gives -M", linalg::max_abs(&ye) / mscale.max(linalg::max_abs(&e))));
    let e_low = lower_second(&e, &md.g);
    let yel2 = Array3::from_shape_fn((n, n, n), |(k, i, j)| (0..n).map(|a| md.y_lower[a] * e[[k, a, i, j]]).sum::<f64>() - ml[[k, i, j]]);
    out.push(id("covector contracted with E gives lowered M", linalg::max_abs(&yel2) / mscale.max(linalg::max_abs(&e))));
    let esym = Array4::from_shape_fn((n, n, n, n), |(a, b, i, j)| {
        e_low[[a, b, i, j]] + e_low[[b, a, i, j]] - 2.0 * (0..n).map(|s| md.cartan[[a, b, s]] * m[[s, i, j]]).sum::<f64>()
    });
    out.push(id("symmetric part of lowered E", linalg::max_abs(&esym) / linalg::max_abs(&e_low).max(1.0)));

    // squared norms
    let ai = &geo.a_inv;
    let rho_up = raise4(&rho_low, &md.g_inv, ai);
    let a_up = raise4(&a_low, ai, ai);
    let ta = Array3::from_shape_fn((n, n, n), |(a, i, j)| (0..n).map(|l| fr.t[l] * a_low[[l, a, i, j]]).sum::<f64>());
    let ta_up = Array3::from_shape_fn((n, n, n), |(a, i, j)| {
        let mut v = 0.0;
        for s in 0..n {
            for r in 0..n {
                for q in 0..n {
                    v += ai[[a, s]] * ai[[i, r]] * ai[[j, q]] * ta[[s, r, q]];
                }
            }
        }
        v
    });
    let s2 = geo.inner(fr.t.as_slice().expect("contiguous"), fr.t.as_slice().expect("contiguous"));
    let lhs = contract4(&rho_up, &rho_low);
    let rhs = contract4(&a_up, &a_low) + 2.0 / s2 * (1.0 / (h * h) - 1.0) * contract3(&ta_up, &ta);
    out.push(id("squared norm of rho", (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0)));
    let m_up = raise_ij3(&m, ai);
    let lhs = contract3(&m_up, &ml);
    let rhs = fr.p * fr.p * contract3(&ta_up, &ta);
    out.push(id("squared norm of M", (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0)));

    // contravariant closed form against raising
    let ml_up = raise_ij3(&m, ai);
    let lu = &md.l_up;
    let rho_up_cl = Array4::from_shape_fn((n, n, n, n), |(k, a, i, j)| {
        let mut v = -(1.0 - h) / fr.k * (lu[k] * ml_up[[a, i, j]] - lu[a] * ml_up[[k, i, j]]);
        for hh in 0..n {
            for r in 0..n {
                v += fr.yi[[k, hh]] * fr.yi[[a, r]] * a_up[[hh, r, i, j]] / (fr.p * fr.p);
            }
        }
        v
    });
    out.push(id("contravariant rho: closed form vs raising", scaled_diff(&rho_up, &rho_up_cl)));

    // covariant derivatives and cyclic identities
    let dm = dm_definition(geo, &nf, &m);
    let dm_tr = dm_transitive(geo, &fr);
    out.push(id("D M: definition vs transitive form", scaled_diff(&dm, &dm_tr)));
    out.push(id("cyclic identity for M", cyclic4(&dm)));
    let na = nabla_a_lower(geo);
    let drho_t = drho_tform(&tt, &na);
    out.push(id("cyclic identity for rho", cyclic5(&drho_t)));
    let drho_cl = drho_closed(geo, &fr);
    let drho_cl_low = Array5::from_shape_fn((n, n, n, n, n), |(l, k, a, i, j)| {
        (0..n).map(|s| md.g[[a, s]] * drho_cl[[l, k, s, i, j]]).sum::<f64>()
    });
    out.push(id("D rho: closed form vs T-form", scaled_diff(&drho_cl_low, &drho_t)));
    out.push(id("T is parallel", t_parallel_residual(site, y, &cdat)?));

    out.push(id("commutator of covariant derivatives", commutator_residual(site, y)?));
    out.push(id("transitivity of the covariant derivative", transitivity_residual(site, y)?));
    Ok(out)
}

/// Finsleroid closed forms for `(B/K^2) M_nij` and its squared norm; unit
/// norm only.
pub fn finsleroid_m_identities(site: &Site, y: &[f64]) -> Result<Vec<Identity>> {
    let geo = &site.geo;
    let n = geo.dim;
    let fr = map_frame(geo, y)?;
    let md = &fr.md;
    let m = m_transitive(geo, &fr);
    let ml = lower_m(&m, &md.g);
    let scale = md.bb / (md.k * md.k);
    let direct = &ml * scale;
    let closed = m_lower_finsleroid(geo, y)?;
    let mut out = vec![id("Finsleroid closed form of M", scaled_diff(&direct, &closed))];
    let ai = &geo.a_inv;
    let m_up_n = Array3::from_shape_fn((n, n, n), |(a, i, j)| (0..n).map(|s| md.g_inv[[a, s]] * ml[[s, i, j]]).sum::<f64>());
    let lhs = scale * contract3(&raise_ij3(&m_up_n, ai), &ml);
    let fac = m_norm_factor(geo, y)?;
    let fac_up = Array3::from_shape_fn((n, n, n), |(a, i, j)| {
        let mut v = 0.0;
        for s in 0..n {
            v += ai[[a, s]] * fac[[s, i, j]];
        }
        v
    });
    let rhs = contract3(&raise_ij3(&fac_up, ai), &fac);
    out.push(id("Finsleroid squared norm of M", (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0)));
    Ok(out)
}
