use std::iter::Peekable;
use std::slice::Iter;

use ndarray::Array1;
use stochrk::adaptive::{integrate_adaptive_with, AdaptiveOptions};
use stochrk::{integrate_fixed, NoiseIncrement, make_problem, FixedStepConfig, NoiseSource, ProblemId, RngStream, SchemeId, StepController, WienerGrid};

fn fold_tree(pieces: &mut Peekable<Iter<'_, NoiseIncrement>>, dt: f64) -> Array1<f64> {
    let next = pieces.peek().expect("pieces cover every root");
    if next.dt == dt {
        return pieces.next().unwrap().dw.clone();
    }
    assert!(next.dt < dt, "piece {} straddles a split of {dt}", next.dt);
    let left = fold_tree(pieces, 0.5 * dt);
    left + fold_tree(pieces, 0.5 * dt)
}

#[test]
fn realized_path_is_the_sum_of_its_roots() {
    let sys = make_problem(ProblemId::Rotational2x3);
    let mut ctrl = StepController::new(1e-9, 1e-9);
    ctrl.dt_initial = Some(0.2);
    let opts = AdaptiveOptions::default();
    let traj = integrate_adaptive_with(&sys, sys.x0(), 0.0, 1.0, &ctrl, &mut RngStream::new(4, 0), &opts).unwrap();
    assert!(traj.rejected_steps > 0, "test needs rejections");
    assert_eq!(traj.final_time(), 1.0);

    let m = traj.roots[0].noise_dim();
    let mut w = Array1::<f64>::zeros(m);
    for root in &traj.roots {
        w += &root.dw;
    }
    assert_eq!(traj.w.last().unwrap(), &w);

    // The consumed pieces are the leaves of each root's split tree, in
    // order; folding the tree back up reproduces every root exactly.
    let mut pieces = traj.consumed.iter().peekable();
    for root in &traj.roots {
        let dw = fold_tree(&mut pieces, root.dt);
        assert_eq!(dw, root.dw);
    }
    assert!(pieces.next().is_none());
}

#[test]
fn fixed_run_on_a_grid_matches_its_increments() {
    let sys = make_problem(ProblemId::GeomBM2);
    let grid = WienerGrid::generate(&mut RngStream::new(1, 0), 0.0, 1.0 / 64.0, 64, 2).unwrap();
    let cfg = FixedStepConfig::new(0.0, 1.0, 1.0 / 16.0, SchemeId::Srk2);
    let traj = integrate_fixed(&sys, sys.x0(), &cfg, NoiseSource::Grid(&grid)).unwrap();
    assert_eq!(traj.len(), 17);
    assert_eq!(traj.w.last().unwrap()[0], grid.w_at(64)[0]);
}
