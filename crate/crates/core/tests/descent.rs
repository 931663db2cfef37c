//! Slow-point descent on maps whose fixed points are known in closed form:
//! hand-built affine and tanh-saturated contractions implementing `StateMap`
//! directly, plus degenerate GRU/LSTM networks wired so their dynamics
//! reduce to such contractions, which routes the same check through
//! `find_slow_point` itself. The constructions live in `common::maps`.

mod common;

use common::maps::{cell_carry_lstm, dist, halving_gru, Affine, Saturated};
use memlab_core::nncore::AnalysisState;
use memlab_core::slowpoint::{descend, find_slow_point, speed, DescentOptions, FixedInput};

const DIST_TOL: f64 = 1e-8;
const SPEED_TOL: f64 = 1e-10;

fn tight() -> DescentOptions {
    DescentOptions { tol: 1e-14, max_iters: 50_000, ..DescentOptions::default() }
}

#[test]
fn descent_finds_the_fixed_point_of_an_affine_contraction() {
    let x_star = [0.8, -0.3, 0.5, 0.1, -0.6];
    let map = Affine::contraction_with_fixed_point(&x_star);
    let xi0 = [2.0, -2.0, 1.5, 3.0, 0.0];

    let out = descend(&map, &xi0, &tight()).unwrap();
    assert!(out.converged, "gradient norm stalled at {:?}", out.grad_inf);
    assert!(dist(out.xi.as_slice(), &x_star) < DIST_TOL, "ended {:?}", out.xi);
    assert!(out.speed < SPEED_TOL, "terminal speed {}", out.speed);
    assert!(speed(&map, out.xi.as_slice()).unwrap() < SPEED_TOL);
}

#[test]
fn descent_finds_the_fixed_point_of_a_saturated_contraction() {
    let x_star = [0.2, -0.7, 0.45, 0.0];
    let map = Saturated::with_fixed_point(&x_star);
    let xi0 = [0.9, 0.9, -0.9, 0.9];

    let out = descend(&map, &xi0, &tight()).unwrap();
    assert!(out.converged);
    assert!(dist(out.xi.as_slice(), &x_star) < DIST_TOL);
    assert!(out.speed < SPEED_TOL);
}

#[test]
fn descent_trace_is_monotone_under_the_line_search() {
    let x_star = [0.5, -0.5, 0.25];
    let map = Affine::contraction_with_fixed_point(&x_star);
    let opts = DescentOptions { record_trace: true, ..tight() };
    let out = descend(&map, &[1.0, 1.0, 1.0], &opts).unwrap();
    assert!(out.trace.windows(2).all(|w| w[1] <= w[0]), "an accepted step raised the objective");
    assert!(out.trace.len() >= 2);
}

#[test]
fn find_slow_point_recovers_the_constructed_gru_fixed_point() {
    let px = [0.4, -0.8, 1.2];
    let (params, x_star) = halving_gru(&px);
    let input = FixedInput::new(px.to_vec());

    let xi0 = AnalysisState(vec![0.9, -0.9, 0.9, -0.9]);
    let rec = find_slow_point(&params, &input, &xi0, 0, &tight(), 0, 0).unwrap();
    assert!(rec.converged);
    assert!(dist(rec.xi_star.as_slice(), &x_star) < DIST_TOL, "found {:?}, want {x_star:?}", rec.xi_star);
    assert!(rec.speed < SPEED_TOL);
}

#[test]
fn find_slow_point_recovers_the_constructed_lstm_fixed_point() {
    let px = [0.6, -0.2];
    let (params, x_star) = cell_carry_lstm(&px);
    let input = FixedInput::new(px.to_vec());

    let xi0 = AnalysisState(vec![0.5; x_star.len()]);
    let rec = find_slow_point(&params, &input, &xi0, 1, &tight(), 0, 0).unwrap();
    assert!(rec.converged);
    assert!(dist(rec.xi_star.as_slice(), &x_star) < DIST_TOL, "found {:?}, want {x_star:?}", rec.xi_star);
    assert!(rec.speed < SPEED_TOL);
}
