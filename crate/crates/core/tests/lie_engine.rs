//! Closure, canonicalization, and structure-constant tests against published
//! dimensions and the dense matrix oracle.

use sauc_core::algebra::*;
use sauc_core::fock::{commutator_norm, to_matrix};
use sauc_core::lie::*;

fn closure_for(family: Family, orbs: &[usize]) -> Vec<OperatorExpr> {
    let seeds = closure_seeds(family, orbs).unwrap();
    lie_closure(&seeds, DEFAULT_CLOSURE_CAP).unwrap()
}

#[test]
fn closure_dimension_5() {
    assert_eq!(closure_for(Family::PpQrD, &[0, 1, 2]).len(), 5);
}

#[test]
fn closure_dimension_28() {
    assert_eq!(closure_for(Family::Int0D, &[0, 1, 2, 3]).len(), 28);
}

#[test]
fn closure_dimension_int1() {
    // Six seed operators: two same-spin doubles and four mixed-spin doubles.
    // The closure has 12 excitation skeletons: the 6 doubles carry 8
    // number-dressed copies each and the 6 spin-flips carry 6, so 6*8 + 6*6.
    assert_eq!(closure_for(Family::Int1D, &[0, 1, 2, 3]).len(), 84);
}

#[test]
fn canonical_int1_block_structure() {
    let basis = canonicalize(&closure_for(Family::Int1D, &[0, 1, 2, 3])).unwrap();
    assert_eq!(basis.dim(), 84);
    let total: usize = basis.commuting_sets.iter().sum();
    assert_eq!(total, 84);
    // blocks really commute, symbolically
    let mut start = 0;
    for &len in &basis.commuting_sets {
        for i in start..start + len {
            for j in i + 1..start + len {
                let c = basis.elements[i].expr().commutator(&basis.elements[j].expr());
                assert!(c.coeff_norm() < 1e-12, "[{i},{j}] != 0");
            }
        }
        start += len;
    }
}

#[test]
fn closure_is_fixed_point() {
    let raw = closure_for(Family::PpQrD, &[0, 1, 2]);
    let again = lie_closure(&raw, DEFAULT_CLOSURE_CAP).unwrap();
    assert_eq!(again.len(), raw.len());
}

#[test]
fn canonical_5_matches_published_basis() {
    let raw = closure_for(Family::PpQrD, &[0, 1, 2]);
    let basis = canonicalize(&raw).unwrap();
    assert_eq!(basis.dim(), 5);
    assert_eq!(basis.commuting_sets, vec![2, 3]);

    // E1 = A_{P↑P↓}^{Q↑R↓}, E2 = A_{P↑P↓}^{Q↓R↑},
    // E3 = E1·(h_{Q↓R↑}+n_{Q↓R↑}), E4 = E2·(h_{Q↑R↓}+n_{Q↑R↓}),
    // E5 = A_{Q↑R↓}^{Q↓R↑}·(h_{P↑P↓}−n_{P↑P↓}); spatial (P,Q,R) = (0,1,2).
    let e1 = a_double(0, 1, 2, 5);
    let e2 = a_double(0, 1, 3, 4);
    let gate = |ix: &[usize], plus: bool| {
        let nn = ix.iter().fold(OperatorExpr::identity(), |a, &i| a.mul(&n_op(i)));
        let hh = ix.iter().fold(OperatorExpr::identity(), |a, &i| a.mul(&h_op(i)));
        if plus {
            hh.add(&nn)
        } else {
            hh.sub(&nn)
        }
    };
    let e3 = e1.mul(&gate(&[3, 4], true));
    let e4 = e2.mul(&gate(&[2, 5], true));
    let e5 = a_double(2, 5, 3, 4).mul(&gate(&[0, 1], false));
    let expected = [e1, e2, e3, e4, e5];
    for (i, exp) in expected.iter().enumerate() {
        let got = basis.elements[i].expr();
        assert!(
            got.sub(exp).coeff_norm() < 1e-12,
            "element {i} ({}) differs from published form",
            basis.elements[i].label
        );
    }
}

#[test]
fn canonical_5_structure_constants() {
    let basis = canonicalize(&closure_for(Family::PpQrD, &[0, 1, 2])).unwrap();
    let sc = structure_constants(&basis).unwrap();
    // Levi-Civita pattern on (E3,E4,E5): [E3,E4]=±E5 etc.
    for (i, j, k) in [(2, 3, 4), (3, 4, 2), (4, 2, 3)] {
        assert!((sc.get(i, j, k).abs() - 1.0).abs() < 1e-10, "c[{i}{j}{k}]={}", sc.get(i, j, k));
    }
    // [E1, E3] = 0
    for k in 0..5 {
        assert!(sc.get(0, 2, k).abs() < 1e-10);
    }
    // c_ii^k = 0
    for i in 0..5 {
        for k in 0..5 {
            assert_eq!(sc.get(i, i, k), 0.0);
        }
    }
    assert!(sc.jacobi_defect() < 1e-10);

    let report = classify_small(&sc);
    assert!(report.so3_block, "{report:?}");
    assert_eq!(report.isomorphism, "R^2 (+) so(3)");
    assert!(report.max_center_commutator < 1e-10);
}

#[test]
fn canonical_28_block_structure() {
    let basis = canonicalize(&closure_for(Family::Int0D, &[0, 1, 2, 3])).unwrap();
    assert_eq!(basis.dim(), 28);
    assert_eq!(basis.commuting_sets, vec![10, 10, 8]);
    // blocks really commute, symbolically
    let mut start = 0;
    for &len in &basis.commuting_sets {
        for i in start..start + len {
            for j in i + 1..start + len {
                let c = basis.elements[i].expr().commutator(&basis.elements[j].expr());
                assert!(c.coeff_norm() < 1e-12, "[{i},{j}] != 0");
            }
        }
        start += len;
    }
}

#[test]
fn canonical_elements_pass_generator_invariants() {
    let basis = canonicalize(&closure_for(Family::PpQrD, &[0, 1, 2])).unwrap();
    for e in &basis.elements {
        // adjoint = −self
        assert!(e.expr().is_anti_hermitian(1e-12), "{}", e.label);
        // [A, N] = 0
        assert!(
            e.excitation.commutator(&e.number_part).coeff_norm() < 1e-12,
            "{}",
            e.label
        );
        // N³ = N always; N² = N for the plus-type/identity number parts.
        let n2 = e.number_part.mul(&e.number_part);
        let n3 = n2.mul(&e.number_part);
        assert!(n3.sub(&e.number_part).coeff_norm() < 1e-12, "{}", e.label);
        // E³ = −E
        let report = check_cubic_closure(&GeneratorSpec::bare(e.expr(), &*e.label), &[], 1e-12);
        assert!(report.passed(), "{}", e.label);
    }
}

#[test]
fn cubic_closure_all_pairs_28() {
    let basis = canonicalize(&closure_for(Family::Int0D, &[0, 1, 2, 3])).unwrap();
    let specs = basis.elements.clone();
    for e in &specs {
        let report = check_cubic_closure(e, &specs, 1e-12);
        assert!(report.passed(), "{}: {:?}", e.label, report.violations);
    }
}

#[test]
fn structure_constants_reproduce_commutators_at_matrix_level() {
    let basis = canonicalize(&closure_for(Family::PpQrD, &[0, 1, 2])).unwrap();
    let sc = structure_constants(&basis).unwrap();
    let mats: Vec<_> = basis
        .elements
        .iter()
        .map(|e| to_matrix(&e.expr(), 6).unwrap())
        .collect();
    for i in 0..5 {
        for j in 0..5 {
            let mut expect = nalgebra::DMatrix::zeros(64, 64);
            for (k, m) in mats.iter().enumerate() {
                expect += &m.data * sc.get(i, j, k);
            }
            let comm = &mats[i].data * &mats[j].data - &mats[j].data * &mats[i].data;
            assert!((comm - expect).norm() < 1e-10, "[{i},{j}]");
        }
    }
    // sanity: all canonical elements commute with N and Sz at matrix level
    let sym = sauc_core::fock::SymmetryOperators::build(6).unwrap();
    for m in &mats {
        assert!(commutator_norm(m, &sym.n).unwrap() < 1e-12);
        assert!(commutator_norm(m, &sym.sz).unwrap() < 1e-12);
    }
}
