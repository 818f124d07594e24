//! Parallel transport of tangent vectors along base curves.
//!
//! The transport equation is `dy^n/ds = N^n_j(x(s), y) dx^j/ds`. Each vector
//! is carried together with a Riemannian companion `T` that starts at
//! `t(x(0), y0)` and obeys `dT/ds = L(x, T) dx/ds`; transitivity says the
//! map keeps `t(x(s), y(s)) = T(s)`. Integration is classical RK4.

use serde::Serialize;
use std::io::Write;

use crate::angle::two_vector_angle;
use crate::automorphism::t_map;
use crate::background::{BackgroundModel, CurvePath, Level, Site};
use crate::connection::n_coeffs;
use crate::error::{GeomError, Result};
use crate::finsleroid::eval_scalars;

/// Fewest steps accepted by [`transport`].
pub const MIN_STEPS: usize = 16;
/// Largest relative change of `K` tolerated across one step.
pub const STEP_DRIFT_LIMIT: f64 = 1e-3;
/// Drifts below this are rounding noise and carry no order information.
pub const ORDER_FLOOR: f64 = 1e-13;

#[derive(Clone, Debug, Serialize)]
pub struct TransportSample {
    pub s: f64,
    pub x: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    /// `K(x, y)` for each vector.
    pub k: Vec<f64>,
    /// Angle for each pair `(a, b)`, `a < b`, in lexicographic order.
    pub alpha: Vec<f64>,
}

/// Largest deviations along a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Drift {
    /// `max |K(s) - K(0)| / K(0)`.
    pub k: f64,
    /// `max |alpha(s) - alpha(0)|`.
    pub alpha: f64,
    /// `max |t(x, y) - T|_a / |T(0)|_a` against the Riemannian companion.
    pub transitivity: f64,
}

impl Drift {
    fn absorb(&mut self, other: &Drift) {
        self.k = self.k.max(other.k);
        self.alpha = self.alpha.max(other.alpha);
        self.transitivity = self.transitivity.max(other.transitivity);
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TransportRun {
    pub curve: CurvePath,
    pub steps: usize,
    /// One record per grid point, `s = 0` included.
    pub trajectory: Vec<TransportSample>,
    /// Riemannian companions at the last recorded point.
    pub companions: Vec<Vec<f64>>,
    pub drift: Drift,
}

impl TransportRun {
    pub fn last(&self) -> &TransportSample {
        self.trajectory.last().expect("trajectory holds the initial point")
    }

    /// Trajectory as CSV: `s`, the base point, each vector, each `K`, each
    /// pairwise angle.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let first = &self.trajectory[0];
        let dim = first.x.len();
        let mut w = csv::Writer::from_writer(out);
        let mut head = vec!["s".to_string()];
        head.extend((0..dim).map(|i| format!("x{i}")));
        for v in 0..first.y.len() {
            head.extend((0..dim).map(|i| format!("y{v}_{i}")));
        }
        head.extend((0..first.k.len()).map(|v| format!("K{v}")));
        for (a, b) in pairs(first.y.len()) {
            head.push(format!("alpha{a}{b}"));
        }
        w.write_record(&head)?;
        for r in &self.trajectory {
            let mut row = vec![r.s];
            row.extend(&r.x);
            for y in &r.y {
                row.extend(y);
            }
            row.extend(&r.k);
            row.extend(&r.alpha);
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()
    }
}

/// Error from [`transport`], carrying everything integrated before it.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct TransportFailure {
    #[source]
    pub error: GeomError,
    pub partial: Option<Box<TransportRun>>,
}

impl From<GeomError> for TransportFailure {
    fn from(error: GeomError) -> Self {
        Self { error, partial: None }
    }
}

fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect()
}

/// Pole proximity while stepping becomes a crossing at `s`.
fn at(s: f64) -> impl Fn(GeomError) -> GeomError {
    move |e| match e {
        GeomError::PoleProximity { .. } => GeomError::PoleCrossing { s },
        e => e,
    }
}

/// Right-hand side for the stacked state `[y_0, .., y_{m-1}, T_0, .., T_{m-1}]`.
fn rhs(model: &BackgroundModel, curve: &CurvePath, s: f64, state: &[f64], m: usize) -> Result<Vec<f64>> {
    let site = Site::new(model, &curve.point(s), Level::Connection)?;
    let v = curve.velocity(s);
    let n = site.dim();
    let mut out = vec![0.0; state.len()];
    for k in 0..m {
        let y = &state[k * n..(k + 1) * n];
        let nc = n_coeffs(&site, y).map_err(at(s))?;
        let t = &state[(m + k) * n..(m + k + 1) * n];
        let l = site.geo.riem_transport_coeffs(t);
        for a in 0..n {
            out[k * n + a] = (0..n).map(|j| nc[[a, j]] * v[j]).sum();
            out[(m + k) * n + a] = (0..n).map(|j| l[[a, j]] * v[j]).sum();
        }
    }
    Ok(out)
}

fn rk4_step(model: &BackgroundModel, curve: &CurvePath, s: f64, ds: f64, state: &[f64], m: usize) -> Result<Vec<f64>> {
    let shift = |base: &[f64], k: &[f64], f: f64| base.iter().zip(k).map(|(a, b)| a + f * b).collect::<Vec<_>>();
    let k1 = rhs(model, curve, s, state, m)?;
    let k2 = rhs(model, curve, s + 0.5 * ds, &shift(state, &k1, 0.5 * ds), m)?;
    let k3 = rhs(model, curve, s + 0.5 * ds, &shift(state, &k2, 0.5 * ds), m)?;
    let k4 = rhs(model, curve, s + ds, &shift(state, &k3, ds), m)?;
    Ok((0..state.len()).map(|i| state[i] + ds / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect())
}

struct Record {
    sample: TransportSample,
    /// `|t(x, y) - T|_a` for each vector.
    gap: Vec<f64>,
}

fn record(model: &BackgroundModel, s: f64, x: Vec<f64>, state: &[f64], m: usize) -> Result<Record> {
    let site = Site::new(model, &x, Level::Connection)?;
    let geo = &site.geo;
    let n = geo.dim;
    let ys: Vec<Vec<f64>> = (0..m).map(|k| state[k * n..(k + 1) * n].to_vec()).collect();
    let mut k = Vec::with_capacity(m);
    let mut gap = Vec::with_capacity(m);
    for (i, y) in ys.iter().enumerate() {
        k.push(eval_scalars(geo, y).map_err(at(s))?.k);
        let t = t_map(geo, y).map_err(at(s))?;
        let d: Vec<f64> = (0..n).map(|a| t[a] - state[(m + i) * n + a]).collect();
        gap.push(geo.norm(&d));
    }
    let mut alpha = Vec::new();
    for (a, b) in pairs(m) {
        alpha.push(two_vector_angle(geo, &ys[a], &ys[b]).map_err(at(s))?.alpha);
    }
    Ok(Record { sample: TransportSample { s, x, y: ys, k, alpha }, gap })
}

/// Transports `y0s` along `curve` with `steps` uniform RK4 steps.
pub fn transport(model: &BackgroundModel, curve: &CurvePath, y0s: &[Vec<f64>], steps: usize) -> Result<TransportRun, TransportFailure> {
    model.validate()?;
    let n = model.dim;
    curve.validate(n)?;
    if steps < MIN_STEPS {
        return Err(GeomError::Domain(format!("transport needs at least {MIN_STEPS} steps, got {steps}")).into());
    }
    if y0s.is_empty() || y0s.iter().any(|y| y.len() != n) {
        return Err(GeomError::Domain(format!("transport needs one or more vectors of dimension {n}")).into());
    }
    let m = y0s.len();
    let x0 = curve.point(0.0);
    let site = Site::new(model, &x0, Level::Connection)?;
    let mut state: Vec<f64> = y0s.concat();
    for y in y0s {
        state.extend(t_map(&site.geo, y)?.iter());
    }
    let first = record(model, 0.0, x0, &state, m)?;
    let k0 = first.sample.k.clone();
    let a0 = first.sample.alpha.clone();
    let s0: Vec<f64> = (0..m).map(|k| site.geo.norm(&state[(m + k) * n..(m + k + 1) * n])).collect();
    let mut run = TransportRun { curve: curve.clone(), steps, trajectory: vec![first.sample], companions: Vec::new(), drift: Drift::default() };
    let ds = 1.0 / steps as f64;
    let companions = |st: &[f64]| (0..m).map(|k| st[(m + k) * n..(m + k + 1) * n].to_vec()).collect::<Vec<_>>();
    run.companions = companions(&state);
    let fail = |run: TransportRun, error: GeomError| TransportFailure { error, partial: Some(Box::new(run)) };
    for step in 0..steps {
        let s = step as f64 * ds;
        let s_next = (step + 1) as f64 * ds;
        let next = match rk4_step(model, curve, s, ds, &state, m) {
            Ok(v) => v,
            Err(e) => return Err(fail(run, e)),
        };
        let rec = match record(model, s_next, curve.point(s_next), &next, m) {
            Ok(r) => r,
            Err(e) => return Err(fail(run, e)),
        };
        let prev = &run.last().k;
        let jump = (0..m).map(|k| (rec.sample.k[k] - prev[k]).abs() / k0[k]).fold(0.0, f64::max);
        if jump > STEP_DRIFT_LIMIT {
            return Err(fail(run, GeomError::StepTooLarge { s: s_next, drift: jump }));
        }
        let d = Drift {
            k: (0..m).map(|k| (rec.sample.k[k] - k0[k]).abs() / k0[k]).fold(0.0, f64::max),
            alpha: rec.sample.alpha.iter().zip(&a0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
            transitivity: rec.gap.iter().zip(&s0).map(|(g, s)| g / s).fold(0.0, f64::max),
        };
        run.drift.absorb(&d);
        state = next;
        run.companions = companions(&state);
        run.trajectory.push(rec.sample);
    }
    Ok(run)
}

/// Observed convergence order between consecutive step counts; `None`
/// when either drift sits at rounding level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ObservedOrder {
    pub k: Option<f64>,
    pub alpha: Option<f64>,
    pub transitivity: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceStudy {
    pub steps: Vec<usize>,
    pub drifts: Vec<Drift>,
    /// `orders[i]` compares `steps[i]` with `steps[i + 1]`.
    pub orders: Vec<ObservedOrder>,
}

impl ConvergenceStudy {
    /// Smallest order of the chosen drift over the refinements that carry
    /// one.
    pub fn min_order(&self, pick: impl Fn(&ObservedOrder) -> Option<f64>) -> Option<f64> {
        self.orders.iter().filter_map(pick).reduce(f64::min)
    }
}

fn order(coarse: f64, fine: f64, ratio: f64) -> Option<f64> {
    (coarse > ORDER_FLOOR && fine > ORDER_FLOOR).then(|| (coarse / fine).ln() / ratio.ln())
}

/// Runs [`transport`] at each step count; counts must increase.
pub fn convergence_study(model: &BackgroundModel, curve: &CurvePath, y0s: &[Vec<f64>], steps: &[usize]) -> Result<ConvergenceStudy, TransportFailure> {
    if steps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(GeomError::Domain("step counts must increase".into()).into());
    }
    let mut drifts = Vec::with_capacity(steps.len());
    for &k in steps {
        drifts.push(transport(model, curve, y0s, k)?.drift);
    }
    let orders = steps
        .windows(2)
        .zip(drifts.windows(2))
        .map(|(s, d)| {
            let r = s[1] as f64 / s[0] as f64;
            ObservedOrder {
                k: order(d[0].k, d[1].k, r),
                alpha: order(d[0].alpha, d[1].alpha, r),
                transitivity: order(d[0].transitivity, d[1].transitivity, r),
            }
        })
        .collect();
    Ok(ConvergenceStudy { steps: steps.to_vec(), drifts, orders })
}

/// Comparison of the end of a closed loop with its start.
#[derive(Clone, Debug, Serialize)]
pub struct HolonomyReport {
    pub area: f64,
    pub steps: usize,
    /// `|y(1) - y(0)|_a / |y(0)|_a` per vector.
    pub vector: Vec<f64>,
    /// `|K(1) - K(0)| / K(0)` per vector.
    pub k_delta: Vec<f64>,
    /// `|alpha(1) - alpha(0)|` per pair.
    pub alpha_delta: Vec<f64>,
    pub drift: Drift,
}

pub fn holonomy_report(model: &BackgroundModel, curve: &CurvePath, y0s: &[Vec<f64>], steps: usize) -> Result<HolonomyReport, TransportFailure> {
    if !curve.closed() {
        return Err(GeomError::Domain("holonomy needs a closed curve".into()).into());
    }
    let run = transport(model, curve, y0s, steps)?;
    let geo = crate::background::geometry(model, &curve.point(0.0), Level::Connection)?;
    let (first, last) = (&run.trajectory[0], run.last());
    let vector = first
        .y
        .iter()
        .zip(&last.y)
        .map(|(a, b)| {
            let d: Vec<f64> = a.iter().zip(b).map(|(u, v)| v - u).collect();
            geo.norm(&d) / geo.norm(a)
        })
        .collect();
    Ok(HolonomyReport {
        area: curve.enclosed_area(),
        steps,
        vector,
        k_delta: first.k.iter().zip(&last.k).map(|(a, b)| (b - a).abs() / a).collect(),
        alpha_delta: first.alpha.iter().zip(&last.alpha).map(|(a, b)| (b - a).abs()).collect(),
        drift: run.drift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(n: usize, radius: f64) -> CurvePath {
        let mut center = vec![0.0; n];
        center[0] = 0.1;
        CurvePath::Circle { center, radius, plane: (0, 1) }
    }

    fn vectors() -> Vec<Vec<f64>> {
        vec![vec![0.3, 0.9, -0.2], vec![-0.5, 0.4, 0.7]]
    }

    #[test]
    fn constant_field_leaves_vectors_fixed() {
        let m = BackgroundModel::flat(3, 1.0, 0.9).unwrap();
        let run = transport(&m, &circle(3, 0.5), &vectors(), 32).unwrap();
        for (a, b) in run.trajectory[0].y.iter().zip(&run.last().y) {
            assert_eq!(a, b);
        }
        assert!(run.drift.k < 1e-15 && run.drift.alpha < 1e-15);
    }

    #[test]
    fn riemannian_limit_preserves_angle() {
        let m = BackgroundModel::constant_curvature(3, 1.0, 0.0).unwrap();
        let run = transport(&m, &circle(3, 0.4), &vectors(), 1024).unwrap();
        assert!(run.drift.alpha < 1e-10, "{:?}", run.drift);
        assert!(run.drift.transitivity < 1e-12, "{:?}", run.drift);
    }

    #[test]
    fn fourth_order_on_rotating_field() {
        let m = BackgroundModel::rotating(3, 1.0, 1.1).unwrap();
        let study = convergence_study(&m, &circle(3, 0.5), &vectors(), &[64, 128, 256]).unwrap();
        let a = study.min_order(|o| o.alpha).unwrap();
        let k = study.min_order(|o| o.k).unwrap();
        assert!(a > 3.5 && k > 3.5, "{study:?}");
        assert!(study.drifts[2].alpha < 1e-8);
    }

    #[test]
    fn holonomy_scales_with_area() {
        let m = BackgroundModel::constant_curvature(3, 1.0, 0.8).unwrap();
        let h: Vec<HolonomyReport> = [0.2, 0.1].iter().map(|&r| holonomy_report(&m, &circle(3, r), &vectors(), 256).unwrap()).collect();
        assert!(h[0].vector[0] > 1e-4);
        let ratio = h[0].vector[0] / h[1].vector[0];
        assert!((ratio - 4.0).abs() < 0.3, "ratio {ratio}");
        assert!(h[0].alpha_delta[0] < 1e-10);
    }

    #[test]
    fn unit_norm_not_required() {
        let m = BackgroundModel::conformal(3, 0.7, 0.9).unwrap();
        let run = transport(&m, &circle(3, 0.3), &vectors(), 256).unwrap();
        assert!(run.drift.alpha < 1e-9 && run.drift.k < 1e-9 && run.drift.transitivity < 1e-9, "{:?}", run.drift);
    }

    #[test]
    fn too_few_steps_rejected() {
        let m = BackgroundModel::flat(3, 1.0, 0.5).unwrap();
        assert!(transport(&m, &circle(3, 0.5), &vectors(), 8).is_err());
    }

    #[test]
    fn pole_crossing_keeps_partial_run() {
        // Flat background: the companion stays constant, so a start whose
        // image is the axis direction at the midpoint reaches the pole there.
        let m = BackgroundModel::rotating(3, 1.0, 0.5).unwrap();
        let line = CurvePath::Line { from: vec![0.0; 3], to: vec![1.0, 0.5, 0.0] };
        let mid = Site::new(&m, &line.point(0.5), Level::Connection).unwrap();
        let start = Site::new(&m, &line.point(0.0), Level::Connection).unwrap();
        let y0 = crate::automorphism::inverse_map(&start.geo, mid.geo.b_up.as_slice().unwrap()).unwrap().to_vec();
        match transport(&m, &line, &[y0], 64) {
            Err(TransportFailure { error: GeomError::PoleCrossing { s }, partial }) => {
                assert!((s - 0.5).abs() < 0.05, "s = {s}");
                assert!(partial.unwrap().trajectory.len() > 16);
            }
            other => panic!("expected a pole crossing, got {:?}", other.map(|r| r.drift)),
        }
    }

    #[test]
    fn csv_has_one_row_per_grid_point() {
        let m = BackgroundModel::rotating(3, 1.0, 0.5).unwrap();
        let run = transport(&m, &circle(3, 0.5), &vectors(), 16).unwrap();
        let mut buf = Vec::new();
        run.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 18);
        assert!(text.starts_with("s,x0,x1,x2,y0_0"));
    }
}
