//! Curvature of the indicatrix from the Cartan tensor.
//!
//! `S_n^m_ij = (dC^m_ni/dy^j - dC^m_nj/dy^i + C^h_ni C^m_hj - C^h_nj C^m_hi) F^2`.
//! On a conformally automorphic space `S_nmij = C (h_nj h_mi - h_ni h_mj)`
//! with `1 - C = h^2`, the indicatrix curvature.

use ndarray::{Array2, Array4};
use serde::Serialize;

use crate::automorphism::automorphism_eval;
use crate::background::LocalGeometry;
use crate::error::{GeomError, Result};
use crate::finsleroid::{cartan_derivative, metric_data};

/// `S_nmij` with the second index lowered by `g`.
pub fn s_tensor(geo: &LocalGeometry, y: &[f64]) -> Result<Array4<f64>> {
    let n = geo.dim;
    let md = metric_data(geo, y)?;
    let dc = cartan_derivative(geo, y)?;
    let gi = &md.g_inv;
    let cl = &md.cartan;
    let cm = &md.cartan_mixed;
    // d C^m_ni / d y^j = -2 g^ma C_abj C^b_ni + g^mk dC_kni/dy^j
    let dcm = |m: usize, a_: usize, i: usize, j: usize| {
        let mut v = 0.0;
        for a in 0..n {
            v += gi[[m, a]] * dc[[a, a_, i, j]];
            for b in 0..n {
                v -= 2.0 * gi[[m, a]] * cl[[a, b, j]] * cm[[b, a_, i]];
            }
        }
        v
    };
    let f2 = md.k * md.k;
    let s_up = Array4::from_shape_fn((n, n, n, n), |(nn, m, i, j)| {
        let mut v = dcm(m, nn, i, j) - dcm(m, nn, j, i);
        for h in 0..n {
            v += cm[[h, nn, i]] * cm[[m, h, j]] - cm[[h, nn, j]] * cm[[m, h, i]];
        }
        v * f2
    });
    Ok(Array4::from_shape_fn((n, n, n, n), |(nn, m, i, j)| (0..n).map(|s| md.g[[m, s]] * s_up[[nn, s, i, j]]).sum()))
}

/// `h_nj h_mi - h_ni h_mj`.
fn wedge(hm: &Array2<f64>) -> Array4<f64> {
    let n = hm.nrows();
    Array4::from_shape_fn((n, n, n, n), |(a, m, i, j)| hm[[a, j]] * hm[[m, i]] - hm[[a, i]] * hm[[m, j]])
}

/// Full contraction of two covariant rank-4 tensors with `g^{-1}`.
fn g_contract(a: &Array4<f64>, b: &Array4<f64>, gi: &Array2<f64>) -> f64 {
    let n = gi.nrows();
    let raise = |t: &Array4<f64>, slot: usize| {
        Array4::from_shape_fn((n, n, n, n), |idx| {
            let idx = [idx.0, idx.1, idx.2, idx.3];
            (0..n)
                .map(|s| {
                    let mut j = idx;
                    j[slot] = s;
                    gi[[idx[slot], s]] * t[j]
                })
                .sum()
        })
    };
    let mut up = raise(a, 0);
    for slot in 1..4 {
        up = raise(&up, slot);
    }
    up.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Fit of `S` onto the wedge of the angular metric at one `(x, y)`.
#[derive(Clone, Debug, Serialize)]
pub struct IndicatrixFit {
    /// Fitted coefficient `C`.
    pub c: f64,
    /// `|S - C (h h - h h)| / |h h - h h|`, componentwise maxima.
    pub residual: f64,
    /// Antisymmetry of `S_nmij` in `(i, j)` and in `(n, m)`.
    pub skew: f64,
}

pub fn fit(geo: &LocalGeometry, y: &[f64]) -> Result<IndicatrixFit> {
    let md = metric_data(geo, y)?;
    let s = s_tensor(geo, y)?;
    let p = wedge(&md.angular);
    let c = g_contract(&s, &p, &md.g_inv) / g_contract(&p, &p, &md.g_inv);
    let pmax = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let res = s.iter().zip(p.iter()).fold(0.0f64, |m, (a, b)| m.max((a - c * b).abs()));
    let n = geo.dim;
    let mut skew = 0.0f64;
    for a in 0..n {
        for m in 0..n {
            for i in 0..n {
                for j in 0..n {
                    skew = skew.max((s[[a, m, i, j]] + s[[a, m, j, i]]).abs()).max((s[[a, m, i, j]] + s[[m, a, i, j]]).abs());
                }
            }
        }
    }
    Ok(IndicatrixFit { c, residual: res / pmax, skew: skew / pmax })
}

#[derive(Clone, Debug, Serialize)]
pub struct IndicatrixReport {
    pub samples: usize,
    /// Mean fitted `C`.
    pub fitted_c: f64,
    /// `1 - C`.
    pub curvature: f64,
    pub h_squared: f64,
    /// Largest fit residual.
    pub residual: f64,
    /// `(max - min)` of the indicatrix curvature over samples, relative.
    pub spread: f64,
    /// Largest antisymmetry defect of `S`.
    pub skew: f64,
    /// `|K^(1-h)/h - p|` against the automorphism's multiplier.
    pub multiplier: f64,
}

/// Fits over the given fiber directions at one base point.
pub fn constant_curvature_check(geo: &LocalGeometry, ys: &[Vec<f64>]) -> Result<IndicatrixReport> {
    if ys.is_empty() {
        return Err(GeomError::Domain("no directions to sample".into()));
    }
    let h = geo.h();
    let mut cs = Vec::with_capacity(ys.len());
    let (mut residual, mut skew, mut multiplier) = (0.0f64, 0.0f64, 0.0f64);
    for y in ys {
        let f = fit(geo, y)?;
        residual = residual.max(f.residual);
        skew = skew.max(f.skew);
        cs.push(f.c);
        let ae = automorphism_eval(geo, y)?;
        let k = metric_data(geo, y)?.k;
        multiplier = multiplier.max((k.powf(1.0 - h) / h - ae.p).abs() / ae.p);
    }
    let mean = cs.iter().sum::<f64>() / cs.len() as f64;
    let (lo, hi) = cs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &c| (a.min(c), b.max(c)));
    let curvature = 1.0 - mean;
    Ok(IndicatrixReport {
        samples: ys.len(),
        fitted_c: mean,
        curvature,
        h_squared: h * h,
        residual,
        spread: (hi - lo) / curvature.abs(),
        skew,
        multiplier,
    })
}
