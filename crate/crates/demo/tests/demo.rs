use aggbfgs_demo::{equivalence_errors, rosenbrock_path, tracking_curves, DemoError};

#[test]
fn paths_start_at_the_start_and_end_near_the_minimizer() {
    for mode in ["bfgs", "lbfgs", "aggbfgs"] {
        let p = rosenbrock_path(mode, 2, -1.2, 1.0).unwrap();
        assert_eq!(p.points[0], [-1.2, 1.0]);
        assert_eq!(p.points.len(), p.iters + 1, "{mode}");
        let last = p.points.last().unwrap();
        assert!((last[0] - 1.0).abs() < 1e-4 && (last[1] - 1.0).abs() < 1e-4, "{mode}: {last:?}");
        assert_eq!(p.status, "Converged");
        assert_eq!(p.aggregated_at.len(), p.aggs);
    }
}

#[test]
fn aggregating_solver_aggregates_in_two_dimensions() {
    // With two stored pairs in the plane every new step is dependent.
    let p = rosenbrock_path("aggbfgs", 2, -1.2, 1.0).unwrap();
    assert!(p.aggs > 0);
}

#[test]
fn equivalence_errors_are_small() {
    let e = equivalence_errors(8, 3, 10, 1).unwrap();
    assert_eq!(e.rel_error.len(), 10);
    assert_eq!(e.floor.len(), 10);
    assert_eq!(e.failures, 0);
    assert!(e.rel_error.iter().all(|v| *v <= 1e-8), "{:?}", e.rel_error);
}

#[test]
fn tracking_has_aligned_curves() {
    let c = tracking_curves(2).unwrap();
    assert!(!c.k.is_empty());
    assert_eq!(c.k.len(), c.agg.len());
    assert_eq!(c.k.len(), c.lbfgs.len());
    assert!(c.agg.iter().all(|v| *v <= 1e-8));
}

#[test]
fn bad_inputs_are_rejected() {
    assert!(matches!(rosenbrock_path("newton", 2, 0.0, 0.0), Err(DemoError::Input(_))));
    assert!(matches!(rosenbrock_path("bfgs", 2, f64::NAN, 0.0), Err(DemoError::Input(_))));
    assert!(matches!(equivalence_errors(128, 4, 10, 1), Err(DemoError::Input(_))));
    assert!(matches!(equivalence_errors(4, 8, 10, 1), Err(DemoError::Experiment(_))));
}
