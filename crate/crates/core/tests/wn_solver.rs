//! Wei–Norman solver tests: adjoint transforms against dense conjugation,
//! the published coefficient matrix, integration, closed forms, fitting, and
//! ordering scans.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use sauc_core::algebra::Family;
use sauc_core::fock::{expm_antihermitian, to_matrix};
use sauc_core::ode::OdeOptions;
use sauc_core::wn::*;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

fn system_ppqr() -> WnSystem {
    let mut sys = WnSystem::for_family(Family::PpQrD, &[0, 1, 2]).unwrap();
    sys.certify(1e-12).unwrap();
    sys
}

#[test]
fn adjoint_transform_trivial_cases() {
    let sys = system_ppqr();
    let v = DVector::from_row_slice(&[0.3, -0.2, 0.7, 0.0, 0.1]);
    // α = 0 leaves coordinates unchanged
    let t = adjoint_transform(&v, 2, 0.0, &sys.sc);
    assert!((t - &v).amax() < 1e-15);
    // transforming E_j by its own exponential is a no-op
    for j in 0..5 {
        let mut ej = DVector::zeros(5);
        ej[j] = 1.0;
        let t = adjoint_transform(&ej, j, 0.8, &sys.sc);
        assert!((t - &ej).amax() < 1e-12);
    }
}

#[test]
fn adjoint_transform_matches_dense_conjugation() {
    let sys = system_ppqr();
    let n = 6;
    let mats: Vec<DMatrix<f64>> = sys
        .basis
        .elements
        .iter()
        .map(|e| to_matrix(&e.expr(), n).unwrap().data)
        .collect();
    for (j, alpha) in [(0usize, 0.37), (1, -1.25), (2, 0.9), (4, 2.2)] {
        let u = expm_antihermitian(&to_matrix(&sys.basis.elements[j].expr(), n).unwrap(), alpha)
            .unwrap()
            .data;
        for i in 0..5 {
            let mut ei = DVector::zeros(5);
            ei[i] = 1.0;
            let coords = adjoint_transform(&ei, j, alpha, &sys.sc);
            let mut expect = &u * &mats[i] * u.transpose();
            for (k, m) in mats.iter().enumerate() {
                expect -= m * coords[k];
            }
            assert!(expect.amax() < 1e-10, "E_{i} by exp(α E_{j})");
        }
    }
}

#[test]
fn coeff_matrix_is_identity_at_zero() {
    let sys = system_ppqr();
    let m = sys.coeff_matrix(&DVector::zeros(5)).unwrap();
    assert!((m - DMatrix::<f64>::identity(5, 5)).amax() < 1e-14);
}

#[test]
fn coeff_matrix_reproduces_published_three_by_three() {
    let sys = system_ppqr();
    // first two coordinates of the target: ±1/√2 on the bare elements
    assert!((sys.d[0] - 1.0 / SQRT_2).abs() < 1e-12);
    assert!((sys.d[1] + 1.0 / SQRT_2).abs() < 1e-12);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let theta: f64 = rng.gen_range(-3.0..3.0);
        let a3: f64 = rng.gen_range(-1.5..1.5);
        let a4: f64 = rng.gen_range(-1.4..1.4);
        let a5: f64 = rng.gen_range(-1.5..1.5);
        let alpha = DVector::from_row_slice(&[theta / SQRT_2, -theta / SQRT_2, a3, a4, a5]);
        let m = sys.coeff_matrix(&alpha).unwrap();

        let (ct, st) = ((theta / SQRT_2).cos(), (theta / SQRT_2).sin());
        let (c3, s3) = (a3.cos(), a3.sin());
        let (c4, s4) = (a4.cos(), a4.sin());
        let published = DMatrix::from_row_slice(
            3,
            3,
            &[
                ct,
                -st * s3,
                ct * s4 - st * c3 * c4,
                -st * st,
                ct * c3 - ct * st * s3,
                -st * st * s4 - ct * s3 * c4 - ct * st * c3 * c4,
                ct * st,
                st * c3 + ct * ct * s3,
                ct * ct * c3 * c4 + ct * st * s4 - st * s3 * c4,
            ],
        );
        let block = m.view((2, 2), (3, 3)).clone_owned();
        assert!((block - published).amax() < 1e-10);
        assert!((m.determinant() - a4.cos()).abs() < 1e-10);
    }
}

#[test]
fn integrate_recovers_trotter_head_and_verifies() {
    let sys = system_ppqr();
    let grid = uniform_grid(0.0, 10.0, 501);
    let table = integrate(&sys, &grid, &OdeOptions::default()).unwrap();
    assert!(table.aborted_at.is_none());
    assert_eq!(table.len(), 501);
    for (i, theta) in grid.iter().enumerate() {
        let a = &table.alphas[i];
        assert!((a[0] - theta / SQRT_2).abs() < 1e-9, "θ={theta}");
        assert!((a[1] + theta / SQRT_2).abs() < 1e-9, "θ={theta}");
        assert!((table.det_m[i] - a[3].cos()).abs() < 1e-10);
        assert!(table.residual[i] < 1e-8, "θ={theta}: {}", table.residual[i]);
    }
}

#[test]
fn integration_requires_certification_and_zero_start() {
    let sys = WnSystem::for_family(Family::PpQrD, &[0, 1, 2]).unwrap();
    let grid = uniform_grid(0.0, 1.0, 11);
    assert!(matches!(
        integrate(&sys, &grid, &OdeOptions::default()),
        Err(WnError::NotCertified)
    ));
    let sys = system_ppqr();
    assert!(matches!(
        integrate(&sys, &uniform_grid(1.0, 2.0, 11), &OdeOptions::default()),
        Err(WnError::GridMustStartAtZero)
    ));
}

#[test]
fn closed_form_tilde_values() {
    assert!(closed_form_tilde(0.0).iter().all(|a| a.abs() < 1e-15));
    let a = closed_form_tilde(std::f64::consts::FRAC_PI_2);
    assert!((a[4] - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
}

#[test]
fn closed_form_tilde_is_continuous_across_branches() {
    for center in [
        std::f64::consts::FRAC_PI_2,
        -std::f64::consts::FRAC_PI_2,
        3.0 * std::f64::consts::FRAC_PI_2,
    ] {
        let left = closed_form_tilde(center - 1e-7);
        let right = closed_form_tilde(center + 1e-7);
        for i in 0..5 {
            assert!(
                (left[i] - right[i]).abs() < 1e-5,
                "α̃_{} jumps at {center}: {} vs {}",
                i + 1,
                left[i],
                right[i]
            );
        }
    }
}

#[test]
fn tilde_product_matches_oracle() {
    let sys = system_ppqr();
    let grid = uniform_grid(-10.0, 10.0, 401);
    let table = tilde_parameter_table(&sys.basis, &sys.target(), &grid).unwrap();
    for (i, theta) in grid.iter().enumerate() {
        assert!(
            table.residual[i] < 1e-9,
            "θ={theta}: residual {}",
            table.residual[i]
        );
    }
}

#[test]
fn frobenius_fit_agrees_with_integration() {
    let sys = system_ppqr();
    let grid = uniform_grid(0.0, 10.0, 51);
    let ode = integrate(&sys, &grid, &OdeOptions::default()).unwrap();
    let fit = frobenius_fit(&sys, &grid, &FitOptions::default()).unwrap();
    for i in 0..grid.len() {
        assert!(fit.residual[i] < 1e-6, "θ={}: {}", grid[i], fit.residual[i]);
        let dev = (&fit.alphas[i] - &ode.alphas[i]).amax();
        assert!(dev < 1e-6, "θ={}: parameter deviation {dev}", grid[i]);
    }
}

#[test]
fn trotter_like_fit_is_exact_with_sum_constraints() {
    let grid = uniform_grid(0.0, 10.0, 21);
    let t = trotter_like_fit(&grid, 12345).unwrap();
    for (i, theta) in grid.iter().enumerate() {
        assert!(t.residual[i] <= 1e-10, "θ={theta}: {}", t.residual[i]);
        assert!((t.sum_a[i] - theta / SQRT_2).abs() < 1e-8, "θ={theta}: Σ odd {}", t.sum_a[i]);
        // The even-position sum is the negative of the odd one: expanding the
        // product to first order gives (Σ odd)A + (Σ even)B, which must match
        // θ(A−B)/√2. A multistart survey of exact solutions confirms that
        // Σ even ≡ −θ/√2 (mod 2π) on every branch.
        assert!((t.sum_b[i] + theta / SQRT_2).abs() < 1e-8, "θ={theta}: Σ even {}", t.sum_b[i]);
    }
}

#[test]
fn integrate_28_dim_passes_removable_crossings() {
    let mut sys = WnSystem::for_family(Family::Int0D, &[0, 1, 2, 3]).unwrap();
    sys.certify(1e-10).unwrap();
    let grid = uniform_grid(0.0, 10.0, 201);
    let table = integrate(&sys, &grid, &OdeOptions::default()).unwrap();
    // det M crosses zero at odd multiples of π/2 but the parameters stay
    // finite and consistent; the run must pass through, not truncate
    assert!(table.aborted_at.is_none());
    assert_eq!(table.len(), 201);
    for (i, theta) in grid.iter().enumerate() {
        assert!(table.residual[i] < 1e-8, "θ={theta}: {}", table.residual[i]);
    }
    // the two elements that never contribute stay identically zero
    assert_eq!(table.zero_columns(1e-6).len(), 2);
    // the 26 active trajectories collapse onto 9 curves up to sign; with the
    // zero trajectory that makes 10 independent curves
    let groups = table.shared_curves(1e-6);
    assert_eq!(groups.len(), 9);
    let covered: usize = groups.iter().map(|g| g.len()).sum();
    assert_eq!(covered, 26);
}

#[test]
fn permutation_scan_classifies_default_ordering() {
    let sys = system_ppqr();
    let reports = permutation_scan(&sys, 20.0, 400).unwrap();
    assert_eq!(reports.len(), 120);
    let default = &reports[0];
    assert_eq!(default.ordering, vec![0, 1, 2, 3, 4]);
    assert!(default.singular_at.is_none());
    assert!(default.trotter_match);
    use Parity::*;
    assert_eq!(default.parity, vec![Odd, Odd, Odd, Odd, Even]);
    // plenty of orderings hit singularities even in this reduced range
    let singular = reports.iter().filter(|r| r.singular_at.is_some()).count();
    assert!(singular > 0, "no singular orderings found");
}

#[test]
fn parameter_table_csv_and_grouping() {
    let thetas = vec![0.0, 0.5, 1.0];
    let alphas = vec![
        DVector::from_row_slice(&[0.0, 0.0, 0.0, 0.0]),
        DVector::from_row_slice(&[0.3, -0.3, 1e-9, 0.3]),
        DVector::from_row_slice(&[0.6, -0.6, -1e-9, 0.6]),
    ];
    let table = ParameterTable {
        thetas,
        alphas,
        det_m: vec![1.0; 3],
        residual: vec![0.0; 3],
        converged: vec![true; 3],
        method: TableMethod::Fit,
        aborted_at: None,
    };
    assert_eq!(table.zero_columns(1e-6), vec![2]);
    let groups = table.shared_curves(1e-6);
    assert_eq!(groups, vec![vec![0, 1, 3]]);

    let mut buf = Vec::new();
    table.write_csv(&mut buf, "family=test").unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# family=test"));
    assert_eq!(
        lines.next(),
        Some("theta,alpha_1,alpha_2,alpha_3,alpha_4,detM,residual")
    );
    assert_eq!(lines.count(), 3);
}

#[test]
fn ordering_validation() {
    let sys = WnSystem::for_family(Family::PpQrD, &[0, 1, 2]).unwrap();
    assert!(matches!(
        sys.with_ordering(vec![0, 1, 2, 3, 3]),
        Err(WnError::BadOrdering(5))
    ));
}
