//! Oracle tests for the symbolic algebra and the dense Fock-space backend.

use sauc_core::algebra::*;
use sauc_core::fock::*;

fn frob(a: &FockMatrix, b: &FockMatrix) -> f64 {
    frobenius_distance(a, b).unwrap()
}

#[test]
fn anticommutator_identity() {
    // a_0 a_0† = 1 − n_0 = h_0
    let x = normal_order(&[(0, OpKind::Annihilate), (0, OpKind::Create)], 1.0);
    assert_eq!(x, h_op(0));
}

#[test]
fn number_operator_idempotency() {
    // a_0† a_0 a_0† a_0 = n_0
    let raw = [
        (0, OpKind::Create),
        (0, OpKind::Annihilate),
        (0, OpKind::Create),
        (0, OpKind::Annihilate),
    ];
    assert_eq!(normal_order(&raw, 1.0), n_op(0));
}

#[test]
fn two_body_number_string_matches_matrix() {
    // a_1† a_0† a_0 a_1 → n_0 n_1 with coefficient +1; checked against the
    // 4×4 representation built directly from n_0·n_1.
    let raw = [
        (1, OpKind::Create),
        (0, OpKind::Create),
        (0, OpKind::Annihilate),
        (1, OpKind::Annihilate),
    ];
    let x = normal_order(&raw, 1.0);
    let m = to_matrix(&x, 2).unwrap();
    let expected = to_matrix(&n_op(0).mul(&n_op(1)), 2).unwrap();
    assert!(frob(&m, &expected) < 1e-14);
    assert_eq!(x.terms.len(), 1);
    let (s, c) = x.terms.iter().next().unwrap();
    assert_eq!(s.creates, vec![0, 1]);
    assert_eq!(s.annihs, vec![0, 1]);
    assert!((c - 1.0).abs() < 1e-15);
}

#[test]
fn normal_order_is_idempotent_and_linear() {
    let x = build_generator(Family::Int0D, &[0, 1, 2, 3]).unwrap();
    for (s, c) in &x.terms {
        let again = OperatorExpr::from_term(s.clone(), *c);
        assert_eq!(again.terms.len(), 1);
        let (s2, c2) = again.terms.iter().next().unwrap();
        assert_eq!(s2, s);
        assert!((c2 - c).abs() < 1e-15);
    }
}

#[test]
fn adjoint_is_involutive_and_self_commutator_vanishes() {
    let x = build_generator(Family::Int1D, &[0, 1, 2, 3]).unwrap();
    assert_eq!(x.adjoint().adjoint(), x);
    assert!(x.commutator(&x).is_zero());
    assert!(x.is_anti_hermitian(1e-14));
}

#[test]
fn generators_are_anti_hermitian_and_normalized() {
    for (fam, orbs) in [
        (Family::SaGS, vec![0, 1]),
        (Family::PpD, vec![0, 1]),
        (Family::PpQrD, vec![0, 1, 2]),
        (Family::Int0D, vec![0, 1, 2, 3]),
        (Family::Int1D, vec![0, 1, 2, 3]),
    ] {
        let g = build_generator(fam, &orbs).unwrap();
        assert!(g.is_anti_hermitian(1e-14), "{fam:?}");
        assert!(!g.is_zero());
    }
    assert!(build_generator(Family::Int0D, &[0, 1, 1, 3]).is_err());
    assert!(build_generator(Family::SaGS, &[2, 2]).is_err());
}

#[test]
fn commutator_identity_pp_qq_to_pp_qr() {
    // A_PP^QR = [A_QQ^PP, A_Q^R] (spatial P,Q,R = 0,1,2), where A_PP^QR is the
    // normalized Eq.-5-style generator and A_Q^R the normalized single.
    let a_qq_pp = a_double(2 * 1, 2 * 1 + 1, 2 * 0, 2 * 0 + 1); // A_QQ^PP
    let a_q_r = build_generator(Family::SaGS, &[1, 2]).unwrap();
    let lhs = a_qq_pp.commutator(&a_q_r);
    let rhs = build_generator(Family::PpQrD, &[0, 1, 2]).unwrap();
    assert!(lhs.sub(&rhs).coeff_norm() < 1e-12, "residual {}", lhs.sub(&rhs).coeff_norm());
}

#[test]
fn jacobi_identity_on_random_generators() {
    let gens = [
        build_generator(Family::SaGS, &[0, 1]).unwrap(),
        build_generator(Family::PpQrD, &[0, 1, 2]).unwrap(),
        build_generator(Family::PpD, &[1, 2]).unwrap(),
    ];
    let [x, y, z] = &gens;
    let jac = x
        .commutator(y)
        .commutator(z)
        .add(&y.commutator(z).commutator(x))
        .add(&z.commutator(x).commutator(y));
    assert!(jac.coeff_norm() < 1e-12);
}

#[test]
fn matrix_homomorphism() {
    let x = build_generator(Family::PpQrD, &[0, 1, 2]).unwrap();
    let y = build_generator(Family::SaGS, &[1, 2]).unwrap();
    let (mx, my) = (to_matrix(&x, 6).unwrap(), to_matrix(&y, 6).unwrap());
    let prod = to_matrix(&x.mul(&y), 6).unwrap();
    assert!((&mx.data * &my.data - &prod.data).norm() < 1e-12);
    let comm = to_matrix(&x.commutator(&y), 6).unwrap();
    assert!((&mx.data * &my.data - &my.data * &mx.data - &comm.data).norm() < 1e-12);
}

#[test]
fn text_round_trip() {
    let x = build_generator(Family::Int0D, &[0, 1, 2, 3]).unwrap();
    let back = OperatorExpr::from_text(&x.to_text()).unwrap();
    assert!(x.sub(&back).coeff_norm() < 1e-15);
}

#[test]
fn number_operator_spectrum() {
    let m = to_matrix(&n_op(0), 1).unwrap();
    assert_eq!(m.data[(0, 0)], 0.0);
    assert_eq!(m.data[(1, 1)], 1.0);
    assert_eq!(m.data[(0, 1)], 0.0);
}

#[test]
fn single_excitation_is_planar_rotation() {
    // exp(θ A_0^1) rotates the {|01⟩=state 1, |10⟩=state 2} block by θ.
    let a = to_matrix(&a_single(0, 1), 2).unwrap();
    let theta = 0.37;
    let u = expm_antihermitian(&a, theta).unwrap();
    // A_0^1 = a_1† a_0 − a_0† a_1 sends state with bit0 set to bit1 set.
    let (c, s) = (theta.cos(), theta.sin());
    assert!((u.data[(1, 1)] - c).abs() < 1e-12);
    assert!((u.data[(2, 2)] - c).abs() < 1e-12);
    assert!((u.data[(2, 1)].abs() - s.abs()) < 1e-12);
    assert!((u.data[(0, 0)] - 1.0).abs() < 1e-12);
    assert!((u.data[(3, 3)] - 1.0).abs() < 1e-12);
    assert!((u.data.transpose() * &u.data - nalgebra::DMatrix::identity(4, 4)).norm() < 1e-12);
}

#[test]
fn expm_rejects_non_antihermitian() {
    let m = to_matrix(&n_op(0), 1).unwrap();
    assert!(expm_antihermitian(&m, 1.0).is_err());
}

#[test]
fn expm_at_zero_is_identity() {
    let a = to_matrix(&a_single(0, 1), 2).unwrap();
    let u = expm_antihermitian(&a, 0.0).unwrap();
    assert!(frob(&u, &FockMatrix::identity(2)) == 0.0);
}

#[test]
fn closed_form_ppqr_matches_exponential_oracle() {
    let gen = build_generator(Family::PpQrD, &[0, 1, 2]).unwrap();
    let a = to_matrix(&gen, 6).unwrap();
    for theta in [0.0, 0.7, std::f64::consts::PI / 2f64.sqrt(), -1.3, 3.9] {
        let by_expm = expm_antihermitian(&a, theta).unwrap();
        let by_formula = closed_form_ppqr(theta, (0, 1, 2), 6).unwrap();
        let d = frob(&by_expm, &by_formula);
        assert!(d < 1e-10, "θ={theta}: distance {d:.3e}");
    }
}

#[test]
fn closed_form_grid_agreement() {
    // 101-point grid over [0, 10].
    let gen = build_generator(Family::PpQrD, &[0, 1, 2]).unwrap();
    let a = to_matrix(&gen, 6).unwrap();
    for i in 0..=100 {
        let theta = 0.1 * i as f64;
        let d = frob(
            &expm_antihermitian(&a, theta).unwrap(),
            &closed_form_ppqr(theta, (0, 1, 2), 6).unwrap(),
        );
        assert!(d < 1e-10, "θ={theta}: {d:.3e}");
    }
}

#[test]
fn symmetry_commutants() {
    let sym = SymmetryOperators::build(8).unwrap();
    assert!(commutator_norm(&sym.n, &sym.sz).unwrap() < 1e-12);
    assert!(commutator_norm(&sym.n, &sym.s2).unwrap() < 1e-12);
    assert!(commutator_norm(&sym.sz, &sym.s2).unwrap() < 1e-12);
    for (fam, orbs) in [
        (Family::SaGS, vec![0, 1]),
        (Family::PpD, vec![0, 1]),
        (Family::PpQrD, vec![0, 1, 2]),
        (Family::Int0D, vec![0, 1, 2, 3]),
        (Family::Int1D, vec![0, 1, 2, 3]),
    ] {
        let m = to_matrix(&build_generator(fam, &orbs).unwrap(), 8).unwrap();
        assert!(commutator_norm(&m, &sym.n).unwrap() < 1e-12, "{fam:?} vs N");
        assert!(commutator_norm(&m, &sym.sz).unwrap() < 1e-12, "{fam:?} vs Sz");
        assert!(commutator_norm(&m, &sym.s2).unwrap() < 1e-12, "{fam:?} vs S²");
    }
    // A bare spinorbital double is spin-contaminating: strict witness.
    let bare = to_matrix(&a_double(0, 3, 4, 7), 8).unwrap();
    assert!(commutator_norm(&bare, &sym.s2).unwrap() >= 1e-3);
}

#[test]
fn spin_contamination_expectations() {
    // Closed-shell determinant |P↑P↓⟩ on 8 spinorbitals: U = I keeps S² = 0;
    // a spin-adapted unitary keeps all three symmetric expectations; a bare
    // double moves ⟨S²⟩.
    let reference = 0b0000_0011usize; // spinorbitals 0,1 occupied
    let id = FockMatrix::identity(8);
    let e = symmetry_expectations(&id, reference).unwrap();
    assert!(e.s2.abs() < 1e-12 && (e.n - 2.0).abs() < 1e-12 && e.sz.abs() < 1e-12);

    let g = to_matrix(&build_generator(Family::Int0D, &[0, 1, 2, 3]).unwrap(), 8).unwrap();
    let refc = 0b0000_1111usize;
    let u = expm_antihermitian(&g, 0.8).unwrap();
    let e = symmetry_expectations(&u, refc).unwrap();
    assert!((e.n - 4.0).abs() < 1e-10 && e.sz.abs() < 1e-10 && e.s2.abs() < 1e-10);

    let bare = to_matrix(&a_double(0, 3, 4, 7), 8).unwrap();
    let u = expm_antihermitian(&bare, 0.5).unwrap();
    let e = symmetry_expectations(&u, refc).unwrap();
    assert!(e.s2.abs() > 1e-3, "expected spin contamination, got {}", e.s2);
}

#[test]
fn frobenius_distance_basics() {
    let id = FockMatrix::identity(3);
    assert_eq!(frob(&id, &id), 0.0);
    let neg = FockMatrix::from_data(-id.data.clone(), 3);
    assert!((frob(&id, &neg) - 2.0 * 8f64.sqrt()) < 1e-12);
}

#[test]
fn cubic_closure_of_pair_generator() {
    let e = GeneratorSpec::bare(a_double(0, 1, 2, 5), "A[0,1->2,5]");
    let report = check_cubic_closure(&e, &[], 1e-12);
    assert!(report.passed());
}

fn a_double(p: usize, q: usize, r: usize, s: usize) -> OperatorExpr {
    sauc_core::algebra::a_double(p, q, r, s)
}
