//! Property tests: the identity sets hold at arbitrary points, vectors,
//! charges and norms of the 1-form.

use finsleroid::angle::{angle_equation_residual, two_vector_angle};
use finsleroid::automorphism::{identity_residuals, inverse_map, t_map};
use finsleroid::background::{angle_in, geometry, BackgroundModel, Level, Site};
use finsleroid::check::Identity;
use finsleroid::connection::covariant_suite;
use finsleroid::curvature::curvature_identities;
use finsleroid::finsleroid::{eval_scalars, metric_identities};
use finsleroid::indicatrix::fit;
use proptest::prelude::*;

fn model(kind: usize, c: f64, g: f64) -> BackgroundModel {
    match kind {
        0 => BackgroundModel::flat(3, c, g),
        1 => BackgroundModel::rotating(3, c, g),
        2 => BackgroundModel::conformal(3, c, g),
        3 => BackgroundModel::constant_curvature(3, c, g),
        _ => BackgroundModel::perturbed(3, c, g),
    }
    .unwrap()
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-0.5f64..0.5, 3)
}

fn vector() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-2.0f64..2.0, 3).prop_filter("length", |v| v.iter().map(|a| a * a).sum::<f64>() > 0.04)
}

fn charge() -> impl Strategy<Value = f64> {
    -1.5f64..1.5
}

fn norm() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1.0), 0.4f64..1.0]
}

fn all_below(ids: &[Identity], tol: f64) -> std::result::Result<(), TestCaseError> {
    for i in ids {
        prop_assert!(i.residual <= tol, "{}: {:e}", i.name, i.residual);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn metric_identity_set(kind in 0usize..5, c in norm(), g in charge(), x in point(), y in vector()) {
        let m = model(kind, c, g);
        let geo = geometry(&m, &x, Level::Connection).unwrap();
        prop_assume!(eval_scalars(&geo, &y).is_ok());
        all_below(&metric_identities(&geo, &y).unwrap(), 1e-8)?;
    }

    #[test]
    fn map_identity_set(kind in 0usize..5, c in norm(), g in charge(), x in point(), y in vector()) {
        let m = model(kind, c, g);
        let geo = geometry(&m, &x, Level::Connection).unwrap();
        prop_assume!(eval_scalars(&geo, &y).is_ok());
        all_below(&identity_residuals(&geo, &y).unwrap(), 1e-8)?;
    }

    #[test]
    fn inverse_map_round_trip(kind in 0usize..5, c in norm(), g in charge(), x in point(), y in vector()) {
        let m = model(kind, c, g);
        let geo = geometry(&m, &x, Level::Connection).unwrap();
        prop_assume!(eval_scalars(&geo, &y).is_ok());
        let back = inverse_map(&geo, t_map(&geo, &y).unwrap().as_slice().unwrap()).unwrap();
        let scale = geo.norm(&y);
        for (a, b) in back.iter().zip(&y) {
            prop_assert!((a - b).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn connection_is_metrical(kind in 0usize..5, c in norm(), g in charge(), x in point(), y in vector()) {
        let m = model(kind, c, g);
        let site = Site::new(&m, &x, Level::Connection).unwrap();
        prop_assume!(eval_scalars(&site.geo, &y).is_ok());
        all_below(&covariant_suite(&site, &y).unwrap(), 1e-8)?;
    }

    #[test]
    fn angle_is_preserved(kind in 0usize..5, c in norm(), g in charge(), x in point(), y1 in vector(), y2 in vector()) {
        let m = model(kind, c, g);
        let site = Site::new(&m, &x, Level::Connection).unwrap();
        prop_assume!(eval_scalars(&site.geo, &y1).is_ok() && eval_scalars(&site.geo, &y2).is_ok());
        let r = angle_equation_residual(&site, &y1, &y2).unwrap();
        prop_assert!(r.iter().all(|v| v.abs() < 1e-8), "{r:?}");
    }

    #[test]
    fn indicatrix_curvature_is_h_squared(kind in 0usize..5, c in norm(), g in charge(), x in point(), y in vector()) {
        let m = model(kind, c, g);
        let geo = geometry(&m, &x, Level::Connection).unwrap();
        prop_assume!(eval_scalars(&geo, &y).is_ok());
        let f = fit(&geo, &y).unwrap();
        prop_assert!(((1.0 - f.c) - (1.0 - g * g / 4.0)).abs() < 1e-8, "{}", f.c);
        prop_assert!(f.residual < 1e-8);
    }

    #[test]
    fn zero_charge_is_riemannian(kind in 0usize..5, x in point(), y1 in vector(), y2 in vector()) {
        let m = model(kind, 1.0, 0.0);
        let geo = geometry(&m, &x, Level::Connection).unwrap();
        prop_assume!(eval_scalars(&geo, &y1).is_ok() && eval_scalars(&geo, &y2).is_ok());
        let t = t_map(&geo, &y1).unwrap();
        for (a, b) in t.iter().zip(&y1) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let alpha = two_vector_angle(&geo, &y1, &y2).unwrap().alpha;
        prop_assert!((alpha - angle_in(&geo, &y1, &y2).unwrap()).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn curvature_identity_set(kind in 1usize..5, c in norm(), g in charge(), x in point(), y in vector()) {
        let m = model(kind, c, g);
        let site = Site::new(&m, &x, Level::CurvatureDerivative).unwrap();
        prop_assume!(eval_scalars(&site.geo, &y).is_ok());
        all_below(&curvature_identities(&site, &y).unwrap(), 1e-6)?;
    }
}
