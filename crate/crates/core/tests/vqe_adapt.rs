//! ADAPT-VQE lab tests: FCIDUMP parsing against hand-assembled oracles,
//! pool construction and symmetry verification, exact sector diagonalization,
//! gradient consistency, and full adaptive runs on the fixtures.

use sauc_core::algebra::a_double;
use sauc_core::fock::symmetry_exprs;
use sauc_core::vqe::*;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

fn fixture(name: &str) -> String {
    let path = format!("{}/../../fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path).unwrap()
}

fn hubbard_dimer() -> MolecularHamiltonian {
    parse_fcidump(&fixture("hubbard_dimer.fcidump")).unwrap()
}

/// The same dimer in its restricted Hartree–Fock molecular-orbital basis.
/// ADAPT runs start from this one: in the site basis the aufbau determinant
/// sits on a flat line of the pair-double rotation (zero gradient), while in
/// the MO basis a single pair double carries the full correlation.
fn hubbard_dimer_mo() -> MolecularHamiltonian {
    parse_fcidump(&fixture("hubbard_dimer_mo.fcidump")).unwrap()
}

#[test]
fn parse_hubbard_dimer_fields() {
    let h = hubbard_dimer();
    assert_eq!(h.n_spatial, 2);
    assert_eq!(h.n_elec, 2);
    assert_eq!(h.ms2, 0);
    assert_eq!(h.e_core, 0.0);
    assert_eq!(h.irreps.as_deref(), Some(&[1, 1][..]));
    assert_eq!(h.one(0, 1), -1.0);
    assert_eq!(h.one(1, 0), -1.0);
    assert_eq!(h.two(0, 0, 0, 0), 4.0);
    assert_eq!(h.two(1, 1, 1, 1), 4.0);
}

#[test]
fn hubbard_dimer_exact_energy() {
    let h = hubbard_dimer();
    let (e, v) = exact_ground_state(&h, (2, 0)).unwrap();
    assert!((e - (2.0 - 2.0 * SQRT_2)).abs() < 1e-12, "E = {e}");
    let norm: f64 = v.iter().map(|x| x * x).sum();
    assert!((norm - 1.0).abs() < 1e-12);
}

#[test]
fn parse_one_orbital_and_ground_energy() {
    let h = parse_fcidump(&fixture("one_orbital.fcidump")).unwrap();
    assert_eq!(h.n_spatial, 1);
    assert_eq!(h.e_core, 0.5);
    // Doubly occupied determinant: 2 h11 + (11|11) + core.
    let (e, _) = exact_ground_state(&h, (2, 0)).unwrap();
    assert!((e - (-2.0 + 1.0 + 0.5)).abs() < 1e-12, "E = {e}");
}

#[test]
fn empty_integral_section_gives_core_only() {
    let h = parse_fcidump("&FCI NORB=2,NELEC=2,MS2=0 &END\n 1.25 0 0 0 0\n").unwrap();
    let (e, _) = exact_ground_state(&h, (2, 0)).unwrap();
    assert!((e - 1.25).abs() < 1e-12);
}

#[test]
fn parse_errors_carry_line_numbers() {
    let no_header = parse_fcidump("1.0 1 1 0 0\n");
    assert!(matches!(no_header, Err(VqeError::Parse { line: 1, .. })));

    let bad_index = parse_fcidump("&FCI NORB=2,NELEC=2 &END\n 1.0 1 3 0 0\n");
    match bad_index {
        Err(VqeError::Parse { line, msg }) => {
            assert_eq!(line, 2);
            assert!(msg.contains("out of range"), "{msg}");
        }
        other => panic!("expected index error, got {other:?}"),
    }

    let bad_value = parse_fcidump("&FCI NORB=2,NELEC=2 &END\n 1.0 1 1 0 0\n x 1 2 0 0\n");
    match bad_value {
        Err(VqeError::Parse { line, msg }) => {
            assert_eq!(line, 3);
            assert!(msg.contains("non-numeric"), "{msg}");
        }
        other => panic!("expected value error, got {other:?}"),
    }
}

#[test]
fn two_electron_integrals_complete_eightfold() {
    let h = parse_fcidump("&FCI NORB=4,NELEC=2,MS2=0 &END\n 0.25 1 2 3 4\n").unwrap();
    for (p, q, r, s) in [
        (0, 1, 2, 3),
        (1, 0, 2, 3),
        (0, 1, 3, 2),
        (1, 0, 3, 2),
        (2, 3, 0, 1),
        (3, 2, 0, 1),
        (2, 3, 1, 0),
        (3, 2, 1, 0),
    ] {
        assert_eq!(h.two(p, q, r, s), 0.25, "({p}{q}|{r}{s})");
    }
    assert_eq!(h.two(0, 2, 1, 3), 0.0);
}

#[test]
fn assembled_hamiltonian_commutes_with_symmetries() {
    let h = hubbard_dimer();
    let hop = h.to_operator();
    let (n, sz, s2) = symmetry_exprs(h.register());
    assert!(hop.commutator(&n).coeff_norm() < 1e-10);
    assert!(hop.commutator(&sz).coeff_norm() < 1e-10);
    assert!(hop.commutator(&s2).coeff_norm() < 1e-10);
    // D-exponent notation parses too.
    let hd = parse_fcidump("&FCI NORB=2,NELEC=2 &END\n 1.0D-01 1 1 0 0\n").unwrap();
    assert!((hd.one(0, 0) - 0.1).abs() < 1e-15);
}

#[test]
fn sagspd_on_two_orbitals_is_one_single_plus_one_pair_double() {
    let pool = build_pool(PoolKind::SaGspD, 2, None).unwrap();
    let labels = pool.labels();
    assert_eq!(labels.len(), 2);
    assert!(labels.iter().any(|l| l.starts_with("saGS")));
    assert!(labels.iter().any(|l| l.starts_with("ppD")));
}

#[test]
fn pool_containment_chain() {
    let sagsd: Vec<String> = build_pool(PoolKind::SaGsd, 4, None)
        .unwrap()
        .labels()
        .iter()
        .map(|s| s.to_string())
        .collect();
    let sagsd0 = build_pool(PoolKind::SaGsd0, 4, None).unwrap();
    let pdint0 = build_pool(PoolKind::PDint0, 4, None).unwrap();
    for l in pdint0.labels() {
        assert!(sagsd0.labels().contains(&l), "{l} not in saGSD0");
    }
    for l in sagsd0.labels() {
        assert!(sagsd.iter().any(|s| s == l), "{l} not in saGSD");
    }
    assert!(pdint0.labels().len() < sagsd0.labels().len());
    assert!(sagsd0.labels().len() < sagsd.len());
}

#[test]
fn spin_adapted_pools_pass_symmetry_verification() {
    for kind in [PoolKind::SaGsd, PoolKind::SaGspD, PoolKind::SaGsd0, PoolKind::PDint0] {
        let pool = build_pool(kind, 3, None).unwrap();
        pool.verify(6).unwrap_or_else(|e| panic!("{}: {e}", kind.name()));
    }
    // GSD conserves N and Sz (S² is not required of it).
    build_pool(PoolKind::Gsd, 3, None).unwrap().verify(6).unwrap();
}

#[test]
fn bare_spinorbital_double_breaks_s2() {
    // A same-spin double has a non-vanishing S² commutator — the witness
    // that un-adapted pools can contaminate spin.
    let (_, _, s2) = symmetry_exprs(6);
    let bare = a_double(0, 2, 4, 1);
    assert!(bare.commutator(&s2).coeff_norm() > 1e-3);
}

#[test]
fn irrep_filter_prunes_pool() {
    let all = build_pool(PoolKind::SaGsd, 4, None).unwrap().elements.len();
    let filtered = build_pool(PoolKind::SaGsd, 4, Some(&[1, 2, 1, 2])).unwrap().elements.len();
    assert!(filtered < all, "{filtered} vs {all}");
    // Filtered singles only connect like-irrep orbitals.
    let pool = build_pool(PoolKind::SaGspD, 4, Some(&[1, 2, 1, 2])).unwrap();
    for l in pool.labels().iter().filter(|l| l.starts_with("saGS")) {
        assert!(*l == "saGS(0->2)" || *l == "saGS(1->3)", "{l}");
    }
}

#[test]
fn reference_is_aufbau_on_h1_diagonal() {
    let h = hubbard_dimer();
    assert_eq!(reference_determinant(&h).unwrap(), 0b11);
    let mut shifted = hubbard_dimer();
    shifted.set_one(0, 0, 5.0); // orbital 1 now lies below orbital 0
    assert_eq!(reference_determinant(&shifted).unwrap(), 0b1100);
}

#[test]
fn pool_gradients_match_finite_differences() {
    let h = hubbard_dimer();
    let pool = build_pool(PoolKind::SaGsd, 2, None).unwrap();
    let grads = pool_gradients(&h, &pool, &[]).unwrap();
    let step = 1e-5;
    for (i, g) in grads.iter().enumerate() {
        let ep = ansatz_energy(&h, &pool, &[(i, step)]).unwrap();
        let em = ansatz_energy(&h, &pool, &[(i, -step)]).unwrap();
        let fd = (ep - em) / (2.0 * step);
        assert!((g - fd).abs() < 1e-6, "element {i}: analytic {g} vs fd {fd}");
    }
}

#[test]
fn adapt_hubbard_dimer_pdint0_is_exact_in_one_iteration() {
    let h = hubbard_dimer_mo();
    let (exact, _) = exact_ground_state(&h, (2, 0)).unwrap();
    assert!((exact - (2.0 - 2.0 * SQRT_2)).abs() < 1e-12, "MO-basis exact {exact}");
    let pool = build_pool(PoolKind::PDint0, 2, None).unwrap();
    assert_eq!(pool.elements.len(), 1); // the pair double alone
    let state = adapt_vqe(&h, &pool, &AdaptOptions::default()).unwrap();
    assert!((state.energy - (2.0 - 2.0 * SQRT_2)).abs() < 1e-8, "E = {}", state.energy);
    assert_eq!(state.history[0].n_params, 1);
    assert!(state.history[0].error_vs_exact.abs() < 1e-8);
}

#[test]
fn adapt_three_orbital_chain_is_monotone_and_spin_pure() {
    let text = "&FCI NORB=3,NELEC=2,MS2=0 &END\n\
        2.0 1 1 1 1\n 2.0 2 2 2 2\n 2.0 3 3 3 3\n\
        -1.0 1 2 0 0\n -1.0 2 3 0 0\n";
    let h = parse_fcidump(text).unwrap();
    let pool = build_pool(PoolKind::SaGsd, 3, None).unwrap();
    let opts = AdaptOptions { max_params: 8, ..AdaptOptions::default() };
    let state = adapt_vqe(&h, &pool, &opts).unwrap();
    assert!(!state.history.is_empty());
    let mut prev = f64::INFINITY;
    for r in &state.history {
        assert!(r.energy <= prev + 1e-10, "iter {}: {} > {}", r.iter, r.energy, prev);
        assert!(r.s2.abs() < 1e-8, "iter {}: S² = {}", r.iter, r.s2);
        assert!(r.sigma_s2.abs() < 1e-6, "iter {}: σ = {}", r.iter, r.sigma_s2);
        prev = r.energy;
    }
    let last = state.history.last().unwrap();
    assert!(last.error_vs_exact.abs() < 1e-6, "final error {}", last.error_vs_exact);
}

#[test]
fn run_log_csv_and_ansatz_json() {
    let h = hubbard_dimer_mo();
    let pool = build_pool(PoolKind::PDint0, 2, None).unwrap();
    let state = adapt_vqe(&h, &pool, &AdaptOptions::default()).unwrap();
    let mut buf = Vec::new();
    state.write_log_csv(&mut buf, "pool=pDint0").unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# pool=pDint0"));
    assert_eq!(
        lines.next(),
        Some("iter,n_params,energy,error_vs_exact,S2,sigma_S2,max_gradient")
    );
    assert_eq!(lines.next().unwrap().split(',').count(), 7);

    let json = state.ansatz_json();
    assert_eq!(json["operators"].as_array().unwrap().len(), state.ansatz.len());
    assert!(json["operators"][0]["label"].as_str().unwrap().starts_with("ppD"));
    assert!((json["energy"].as_f64().unwrap() - state.energy).abs() < 1e-15);
}

#[test]
fn sector_and_register_guards() {
    let h = hubbard_dimer();
    assert!(matches!(
        exact_ground_state(&h, (5, 0)),
        Err(VqeError::EmptySector { .. })
    ));
    let big = MolecularHamiltonian::empty(8, 2, 0);
    assert!(matches!(
        exact_ground_state(&big, (2, 0)),
        Err(VqeError::RegisterOverflow(16))
    ));
    let mut odd = hubbard_dimer();
    odd.ms2 = 1;
    assert!(matches!(
        reference_determinant(&odd),
        Err(VqeError::BadSpinSector { .. })
    ));
}
