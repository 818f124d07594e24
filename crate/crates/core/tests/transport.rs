//! Transport along open and closed curves on the generic model.

use finsleroid::background::{BackgroundModel, CurvePath};
use finsleroid::transport::{convergence_study, holonomy_report, transport};

fn vectors() -> Vec<Vec<f64>> {
    vec![vec![1.0, 0.3, -0.2], vec![-0.4, 0.9, 0.5], vec![0.2, -0.7, 0.6]]
}

#[test]
fn open_segment_below_unit_norm() {
    let model = BackgroundModel::perturbed(3, 0.7, 0.9).unwrap();
    let curve = CurvePath::Line { from: vec![-0.3, 0.1, 0.0], to: vec![0.4, -0.2, 0.3] };
    let run = transport(&model, &curve, &vectors(), 256).unwrap();
    assert_eq!(run.trajectory.len(), 257);
    assert!(run.drift.k < 1e-10 && run.drift.alpha < 1e-10 && run.drift.transitivity < 1e-10, "{:?}", run.drift);
    // Three vectors give three angles.
    assert_eq!(run.last().alpha.len(), 3);
    let mut buf = Vec::new();
    run.write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 258);
}

#[test]
fn fourth_order_on_a_loop() {
    let model = BackgroundModel::perturbed(3, 1.0, 1.2).unwrap();
    let curve = CurvePath::Circle { center: vec![0.0, 0.1, -0.1], radius: 0.5, plane: (1, 2) };
    let study = convergence_study(&model, &curve, &vectors(), &[32, 64, 128]).unwrap();
    let k = study.min_order(|o| o.k).unwrap();
    let t = study.min_order(|o| o.transitivity).unwrap();
    assert!(k > 3.5 && t > 3.5, "{k} {t}");
}

#[test]
fn holonomy_grows_with_area() {
    let model = BackgroundModel::conformal(3, 1.0, 0.6).unwrap();
    let at = |r: f64| {
        let curve = CurvePath::Circle { center: vec![0.1, 0.0, 0.0], radius: r, plane: (0, 1) };
        holonomy_report(&model, &curve, &vectors()[..2], 512).unwrap()
    };
    let (small, large) = (at(0.1), at(0.2));
    assert!(large.vector[0] > 2.0 * small.vector[0]);
    assert!(large.alpha_delta.iter().all(|d| *d < 1e-10));
    assert!(large.k_delta.iter().all(|d| *d < 1e-10));
}

#[test]
fn open_curves_have_no_holonomy() {
    let model = BackgroundModel::flat(3, 1.0, 0.6).unwrap();
    let curve = CurvePath::Line { from: vec![0.0; 3], to: vec![1.0, 0.0, 0.0] };
    assert!(holonomy_report(&model, &curve, &vectors(), 64).is_err());
}
