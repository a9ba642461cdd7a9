//! The demo's logic, exercised off the browser.

use gmnm_web::{agp_grid_impl, grid_points, FitDemo};

#[test]
fn grid_covers_the_box_row_major() {
    let g = grid_points(4);
    assert_eq!(g.len(), 16);
    assert_eq!(g[0], [-3.0, -3.0]);
    assert_eq!(g[1], [-1.0, -3.0]);
    assert_eq!(g[15], [3.0, 3.0]);
}

#[test]
fn fitting_reduces_test_error() {
    let mut demo = FitDemo::create(0, 30, 1).unwrap();
    assert_eq!(demo.steps(), 0);
    let start = demo.advance(0).unwrap();
    let after = demo.advance(150).unwrap();
    assert_eq!(demo.steps(), 150);
    assert!(after < start, "{after} vs {start}");
    assert_eq!(demo.model_values(8).unwrap().len(), 64);
    let target = demo.target_values(2).unwrap();
    assert!(target.iter().all(|v| v.is_finite()));
}

#[test]
fn fresh_model_is_the_zero_function() {
    let demo = FitDemo::create(3, 10, 2).unwrap();
    assert!(demo.model_values(5).unwrap().iter().all(|&v| v == 0.0));
    // Per AGP: μ 2, A 4, b 2, α 2, β 1, π 1.
    assert_eq!(demo.param_count(), 10 * 12);
}

#[test]
fn bad_level_rejected() {
    assert!(FitDemo::create(4, 10, 0).is_err());
}

#[test]
fn agp_grid_matches_gaussian() {
    let (values, worst) = agp_grid_impl(0.8, 0.3, 0.5, 12).unwrap();
    assert_eq!(values.len(), 144);
    assert!(worst < 1e-12, "{worst}");
    assert!(values.iter().all(|&v| v > 0.0 && v <= 1.0));
    assert!(agp_grid_impl(1.0, 2.0, 1.0, 4).is_err());
}
