//! Integrator and optimizer checks against analytic solutions.

use nalgebra::{dvector, DVector};
use sauc_core::ode::{integrate_grid, OdeError, OdeOptions, RkMethod};
use sauc_core::opt::{minimize_bfgs, minimize_multistart, BfgsOptions};

fn uniform_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

#[test]
fn harmonic_oscillator_matches_analytic() {
    let grid = uniform_grid(0.0, 2.0 * std::f64::consts::PI, 101);
    for method in [RkMethod::Order8, RkMethod::Order5] {
        let opts = OdeOptions {
            method,
            ..OdeOptions::default()
        };
        let sol = integrate_grid(
            |_t, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
                true
            },
            &dvector![1.0, 0.0],
            &grid,
            &opts,
        )
        .unwrap();
        assert!(sol.aborted_at.is_none());
        assert_eq!(sol.states.len(), grid.len());
        for (t, y) in grid.iter().zip(&sol.states) {
            assert!((y[0] - t.cos()).abs() < 1e-8, "{method:?} t={t}");
            assert!((y[1] + t.sin()).abs() < 1e-8, "{method:?} t={t}");
        }
    }
}

#[test]
fn backward_integration_works() {
    let grid = uniform_grid(0.0, -3.0, 61);
    let sol = integrate_grid(
        |_t, y, dy| {
            dy[0] = -y[0];
            true
        },
        &dvector![1.0],
        &grid,
        &OdeOptions::default(),
    )
    .unwrap();
    for (t, y) in grid.iter().zip(&sol.states) {
        assert!((y[0] - (-t).exp()).abs() < 1e-7 * (-t).exp(), "t={t}");
    }
}

#[test]
fn tighter_tolerance_reduces_error() {
    let grid = uniform_grid(0.0, 10.0, 21);
    let run = |rtol: f64| -> f64 {
        let opts = OdeOptions {
            rtol,
            atol: rtol * 1e-3,
            method: RkMethod::Order5,
            ..OdeOptions::default()
        };
        let sol = integrate_grid(
            |t, _y, dy| {
                dy[0] = t.cos();
                true
            },
            &dvector![0.0],
            &grid,
            &opts,
        )
        .unwrap();
        grid.iter()
            .zip(&sol.states)
            .map(|(t, y)| (y[0] - t.sin()).abs())
            .fold(0.0, f64::max)
    };
    let coarse = run(1e-4);
    let fine = run(1e-10);
    assert!(fine < coarse, "fine {fine} vs coarse {coarse}");
    assert!(fine < 1e-9);
}

#[test]
fn rhs_rejection_truncates_solution() {
    let grid = uniform_grid(0.0, 2.0, 21);
    let sol = integrate_grid(
        |t, y, dy| {
            if t > 1.0 {
                return false;
            }
            dy[0] = y[0];
            true
        },
        &dvector![1.0],
        &grid,
        &OdeOptions::default(),
    )
    .unwrap();
    let aborted = sol.aborted_at.expect("should abort past t = 1");
    assert!(aborted >= 1.0 && aborted < 1.2, "aborted at {aborted}");
    assert!(sol.states.len() < grid.len());
    // everything retained is still accurate
    for (t, y) in grid.iter().zip(&sol.states) {
        assert!((y[0] - t.exp()).abs() < 1e-7 * t.exp());
    }
}

#[test]
fn degenerate_grids_are_rejected() {
    let f = |_t: f64, _y: &DVector<f64>, dy: &mut DVector<f64>| {
        dy[0] = 0.0;
        true
    };
    assert!(matches!(
        integrate_grid(f, &dvector![0.0], &[0.0], &OdeOptions::default()),
        Err(OdeError::BadGrid)
    ));
    assert!(matches!(
        integrate_grid(f, &dvector![0.0], &[0.0, 1.0, 0.5], &OdeOptions::default()),
        Err(OdeError::BadGrid)
    ));
}

#[test]
fn bfgs_minimizes_rosenbrock() {
    let rosen = |x: &DVector<f64>| -> f64 {
        100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2)
    };
    let r = minimize_bfgs(rosen, &dvector![-1.2, 1.0], &BfgsOptions::default());
    assert!(r.converged, "grad_norm {}", r.grad_norm);
    assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{}", r.x);
}

#[test]
fn bfgs_solves_quadratic_quickly() {
    let q = |x: &DVector<f64>| -> f64 {
        (0..x.len()).map(|i| (i + 1) as f64 * x[i] * x[i]).sum()
    };
    let r = minimize_bfgs(q, &DVector::from_element(6, 2.0), &BfgsOptions::default());
    assert!(r.converged);
    assert!(r.f < 1e-10);
    assert!(r.iters < 60, "{} iterations", r.iters);
}

#[test]
fn multistart_escapes_local_minimum_deterministically() {
    // Global minimum near x = π (where cos(2x) peaks close to the parabola's
    // center); a plain descent from x = 0.9 lands in the basin near x = 0.
    let f = |x: &DVector<f64>| -> f64 {
        let t = x[0];
        0.1 * (t - 4.0).powi(2) - (2.0 * t).cos()
    };
    let opts = BfgsOptions::default();
    let local = minimize_bfgs(f, &dvector![0.9], &opts);
    let a = minimize_multistart(f, &dvector![0.9], 20, 5.0, 42, &opts);
    let b = minimize_multistart(f, &dvector![0.9], 20, 5.0, 42, &opts);
    assert!((a.x[0] - b.x[0]).abs() == 0.0, "same seed must reproduce");
    assert!((a.x[0] - std::f64::consts::PI).abs() < 0.2, "found {}", a.x[0]);
    assert!(a.f < local.f - 0.1, "multistart {} vs single-start {}", a.f, local.f);
}
