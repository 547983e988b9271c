//! ADAPT-VQE statevector lab: FCIDUMP ingestion, symmetry-adapted operator
//! pools, gradient-driven ansatz growth, and per-iteration symmetry tracking.
//!
//! The simulator works on real statevectors (all operators here are real in
//! the occupation basis): the Hamiltonian and pool generators are fermionic
//! operator expressions applied term by term, ansatz exponentials act by
//! scaled Taylor series, and exact reference energies come from dense
//! diagonalization restricted to a particle-number/Sz sector.

use crate::algebra::{
    a_double, a_single, normal_order, AlgebraError, Family, OpKind, OperatorExpr,
};
use crate::fock::{apply_expr, symmetry_exprs};
use crate::opt::{minimize_bfgs_with_grad, BfgsOptions, BfgsResult};
use crate::par;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

/// Largest spinorbital register the statevector backend will simulate.
pub const MAX_REGISTER: usize = 14;

#[derive(Debug, Error)]
pub enum VqeError {
    #[error("FCIDUMP line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("register of {0} spinorbitals exceeds the statevector cap of {MAX_REGISTER}")]
    RegisterOverflow(usize),
    #[error("no determinant has N={n} and 2Sz={ms2} on {spatial} orbitals")]
    EmptySector { n: usize, ms2: i64, spatial: usize },
    #[error("electron count {nelec} and 2Sz={ms2} have mismatched parity")]
    BadSpinSector { nelec: usize, ms2: i64 },
    #[error("operator pool is empty")]
    EmptyPool,
    #[error("pool element {label} breaks {symmetry} conservation (commutator {norm:.3e})")]
    PoolSymmetry { label: String, symmetry: &'static str, norm: f64 },
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

fn up(p: usize) -> usize {
    2 * p
}

fn dn(p: usize) -> usize {
    2 * p + 1
}

// ---------------------------------------------------------------------------
// Molecular Hamiltonian and FCIDUMP parsing
// ---------------------------------------------------------------------------

/// Electronic Hamiltonian in spatial-orbital integrals: h1 symmetric, h2 in
/// chemist convention (pq|rs) with full 8-fold symmetry completion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MolecularHamiltonian {
    pub n_spatial: usize,
    pub n_elec: usize,
    /// Twice the spin projection, as in the FCIDUMP MS2 field.
    pub ms2: i64,
    pub e_core: f64,
    h1: Vec<f64>,
    h2: Vec<f64>,
    pub irreps: Option<Vec<usize>>,
}

impl MolecularHamiltonian {
    pub fn empty(n_spatial: usize, n_elec: usize, ms2: i64) -> Self {
        MolecularHamiltonian {
            n_spatial,
            n_elec,
            ms2,
            e_core: 0.0,
            h1: vec![0.0; n_spatial * n_spatial],
            h2: vec![0.0; n_spatial.pow(4)],
            irreps: None,
        }
    }

    pub fn register(&self) -> usize {
        2 * self.n_spatial
    }

    pub fn one(&self, p: usize, q: usize) -> f64 {
        self.h1[p * self.n_spatial + q]
    }

    pub fn set_one(&mut self, p: usize, q: usize, v: f64) {
        let n = self.n_spatial;
        self.h1[p * n + q] = v;
        self.h1[q * n + p] = v;
    }

    /// Chemist-convention integral (pq|rs).
    pub fn two(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        let n = self.n_spatial;
        self.h2[((p * n + q) * n + r) * n + s]
    }

    pub fn set_two(&mut self, p: usize, q: usize, r: usize, s: usize, v: f64) {
        let n = self.n_spatial;
        for (a, b, c, d) in [
            (p, q, r, s),
            (q, p, r, s),
            (p, q, s, r),
            (q, p, s, r),
            (r, s, p, q),
            (s, r, p, q),
            (r, s, q, p),
            (s, r, q, p),
        ] {
            self.h2[((a * n + b) * n + c) * n + d] = v;
        }
    }

    /// Second-quantized Hamiltonian on the spinorbital register, including
    /// the core-energy identity term.
    pub fn to_operator(&self) -> OperatorExpr {
        let n = self.n_spatial;
        let mut h = OperatorExpr::identity().scale(self.e_core);
        for p in 0..n {
            for q in 0..n {
                let v = self.one(p, q);
                if v == 0.0 {
                    continue;
                }
                for spin in [up, dn] {
                    h = h.add(&normal_order(
                        &[(spin(p), OpKind::Create), (spin(q), OpKind::Annihilate)],
                        v,
                    ));
                }
            }
        }
        for p in 0..n {
            for q in 0..n {
                for r in 0..n {
                    for s in 0..n {
                        let v = self.two(p, q, r, s);
                        if v == 0.0 {
                            continue;
                        }
                        // ½ (pq|rs) a†_pσ a†_rτ a_sτ a_qσ
                        for sp in [up, dn] {
                            for tp in [up, dn] {
                                h = h.add(&normal_order(
                                    &[
                                        (sp(p), OpKind::Create),
                                        (tp(r), OpKind::Create),
                                        (tp(s), OpKind::Annihilate),
                                        (sp(q), OpKind::Annihilate),
                                    ],
                                    0.5 * v,
                                ));
                            }
                        }
                    }
                }
            }
        }
        h
    }
}

/// Parses the standard FCIDUMP text format: a namelist header carrying NORB,
/// NELEC, MS2, ORBSYM, then `value i j k l` integral lines with 1-based
/// indices; `i j 0 0` one-electron, `0 0 0 0` core energy.
pub fn parse_fcidump(source: &str) -> Result<MolecularHamiltonian, VqeError> {
    let mut lines = source.lines().enumerate();

    // Header: runs from the &FCI (or $FCI) line through &END / $END / "/".
    let mut header = String::new();
    let mut header_end_line = 0usize;
    let mut saw_start = false;
    for (i, line) in lines.by_ref() {
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if !saw_start {
            let upper = trimmed.to_uppercase();
            if !(upper.starts_with("&FCI") || upper.starts_with("$FCI")) {
                return Err(VqeError::Parse {
                    line: lineno,
                    msg: "expected namelist header starting with &FCI".into(),
                });
            }
            saw_start = true;
        }
        header.push(' ');
        header.push_str(trimmed);
        let upper = trimmed.to_uppercase();
        if upper.contains("&END") || upper.contains("$END") || upper.ends_with('/') {
            header_end_line = lineno;
            break;
        }
    }
    if header_end_line == 0 {
        return Err(VqeError::Parse { line: 1, msg: "unterminated namelist header".into() });
    }

    let mut fields: HashMap<String, Vec<String>> = HashMap::new();
    {
        let cleaned = header
            .to_uppercase()
            .replace("&FCI", " ")
            .replace("$FCI", " ")
            .replace("&END", " ")
            .replace("$END", " ")
            .replace('/', " ")
            .replace('=', " = ")
            .replace(',', " ");
        let mut current: Option<String> = None;
        let toks: Vec<&str> = cleaned.split_whitespace().collect();
        let mut i = 0;
        while i < toks.len() {
            if i + 1 < toks.len() && toks[i + 1] == "=" {
                current = Some(toks[i].to_string());
                fields.entry(toks[i].to_string()).or_default();
                i += 2;
            } else if toks[i] == "=" {
                i += 1;
            } else {
                match &current {
                    Some(key) => fields.get_mut(key).unwrap().push(toks[i].to_string()),
                    None => {
                        return Err(VqeError::Parse {
                            line: 1,
                            msg: format!("stray header token {:?}", toks[i]),
                        })
                    }
                }
                i += 1;
            }
        }
    }
    let scalar = |key: &str| -> Option<&String> { fields.get(key).and_then(|v| v.first()) };
    let parse_num = |key: &str, required: bool, default: i64| -> Result<i64, VqeError> {
        match scalar(key) {
            Some(v) => v.parse::<i64>().map_err(|_| VqeError::Parse {
                line: 1,
                msg: format!("non-numeric {key} value {v:?}"),
            }),
            None if required => Err(VqeError::Parse { line: 1, msg: format!("missing {key}") }),
            None => Ok(default),
        }
    };
    let norb = parse_num("NORB", true, 0)? as usize;
    let nelec = parse_num("NELEC", true, 0)? as usize;
    let ms2 = parse_num("MS2", false, 0)?;
    if norb == 0 {
        return Err(VqeError::Parse { line: 1, msg: "NORB must be positive".into() });
    }
    let irreps = match fields.get("ORBSYM") {
        Some(vals) if !vals.is_empty() => {
            let mut v = Vec::with_capacity(vals.len());
            for t in vals {
                v.push(t.parse::<usize>().map_err(|_| VqeError::Parse {
                    line: 1,
                    msg: format!("non-numeric ORBSYM entry {t:?}"),
                })?);
            }
            if v.len() != norb {
                return Err(VqeError::Parse {
                    line: 1,
                    msg: format!("ORBSYM lists {} labels for NORB={norb}", v.len()),
                });
            }
            Some(v)
        }
        _ => None,
    };

    let mut h = MolecularHamiltonian::empty(norb, nelec, ms2);
    h.irreps = irreps;

    for (i, line) in lines {
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() != 5 {
            return Err(VqeError::Parse {
                line: lineno,
                msg: format!("expected `value i j k l`, got {} fields", toks.len()),
            });
        }
        let value: f64 = toks[0]
            .replace(['D', 'd'], "E")
            .parse()
            .map_err(|_| VqeError::Parse {
                line: lineno,
                msg: format!("non-numeric value {:?}", toks[0]),
            })?;
        let mut idx = [0usize; 4];
        for (k, t) in toks[1..].iter().enumerate() {
            let v: i64 = t.parse().map_err(|_| VqeError::Parse {
                line: lineno,
                msg: format!("non-numeric index {t:?}"),
            })?;
            if v < 0 || v as usize > norb {
                return Err(VqeError::Parse {
                    line: lineno,
                    msg: format!("index {v} out of range 1..={norb}"),
                });
            }
            idx[k] = v as usize;
        }
        match idx {
            [0, 0, 0, 0] => h.e_core = value,
            [p, q, 0, 0] if p > 0 && q > 0 => h.set_one(p - 1, q - 1, value),
            [p, q, r, s] if p > 0 && q > 0 && r > 0 && s > 0 => {
                h.set_two(p - 1, q - 1, r - 1, s - 1, value)
            }
            _ => {
                return Err(VqeError::Parse {
                    line: lineno,
                    msg: format!("unsupported index pattern {idx:?}"),
                })
            }
        }
    }
    Ok(h)
}

// ---------------------------------------------------------------------------
// Operator pools
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolKind {
    /// Spinorbital generalized singles and doubles (Sz- and irrep-filtered).
    Gsd,
    /// Full spin-adapted pool: singlet singles, pair doubles, paired-origin
    /// doubles, and both intermediate-coupling doubles.
    SaGsd,
    /// Singlet singles plus pair doubles only.
    SaGspD,
    /// SaGsd without the triplet-intermediate doubles.
    SaGsd0,
    /// Pair doubles plus singlet-intermediate doubles only.
    PDint0,
    Custom,
}

impl PoolKind {
    pub fn name(self) -> &'static str {
        match self {
            PoolKind::Gsd => "GSD",
            PoolKind::SaGsd => "saGSD",
            PoolKind::SaGspD => "saGSpD",
            PoolKind::SaGsd0 => "saGSD0",
            PoolKind::PDint0 => "pDint0",
            PoolKind::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<PoolKind> {
        match s.to_lowercase().as_str() {
            "gsd" => Some(PoolKind::Gsd),
            "sagsd" => Some(PoolKind::SaGsd),
            "sagspd" => Some(PoolKind::SaGspD),
            "sagsd0" => Some(PoolKind::SaGsd0),
            "pdint0" => Some(PoolKind::PDint0),
            "custom" => Some(PoolKind::Custom),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PoolElement {
    pub generator: OperatorExpr,
    pub label: String,
}

#[derive(Debug, Clone)]
pub struct OperatorPool {
    pub kind: PoolKind,
    pub elements: Vec<PoolElement>,
}

/// Totally-symmetric test under an abelian point group: XOR of the 0-based
/// irrep labels over all participating spatial indices must vanish.
fn symmetric(irreps: Option<&[usize]>, indices: &[usize]) -> bool {
    match irreps {
        None => true,
        Some(labels) => indices.iter().fold(0usize, |acc, &p| acc ^ (labels[p] - 1)) == 0,
    }
}

/// Enumerates an operator pool over `n_spatial` orbitals, deduplicated up to
/// sign and filtered to totally symmetric elements under `irreps`.
pub fn build_pool(
    kind: PoolKind,
    n_spatial: usize,
    irreps: Option<&[usize]>,
) -> Result<OperatorPool, VqeError> {
    assert!(n_spatial >= 2, "pools need at least two orbitals");
    let mut elements: Vec<PoolElement> = Vec::new();
    let mut push = |generator: OperatorExpr, label: String| {
        if !generator.is_zero() {
            elements.push(PoolElement { generator, label });
        }
    };

    let add_family = |fam: Family, push: &mut dyn FnMut(OperatorExpr, String)| -> Result<(), VqeError> {
        match fam {
            Family::SaGS => {
                for p in 0..n_spatial {
                    for q in p + 1..n_spatial {
                        if symmetric(irreps, &[p, q]) {
                            push(build(fam, &[p, q])?, format!("saGS({p}->{q})"));
                        }
                    }
                }
            }
            Family::PpD => {
                for p in 0..n_spatial {
                    for q in p + 1..n_spatial {
                        push(build(fam, &[p, q])?, format!("ppD({p}{p}->{q}{q})"));
                    }
                }
            }
            Family::PpQrD => {
                for p in 0..n_spatial {
                    for q in 0..n_spatial {
                        for r in q + 1..n_spatial {
                            if p != q && p != r && symmetric(irreps, &[q, r]) {
                                push(build(fam, &[p, q, r])?, format!("ppqrD({p}{p}->{q}{r})"));
                            }
                        }
                    }
                }
            }
            Family::Int0D | Family::Int1D => {
                let tag = if fam == Family::Int0D { "0" } else { "1" };
                for p in 0..n_spatial {
                    for q in p + 1..n_spatial {
                        for r in 0..n_spatial {
                            for s in r + 1..n_spatial {
                                if (r, s) <= (p, q) {
                                    continue;
                                }
                                let all = [p, q, r, s];
                                let mut sorted = all.to_vec();
                                sorted.sort_unstable();
                                sorted.dedup();
                                if sorted.len() == 4 && symmetric(irreps, &all) {
                                    push(
                                        build(fam, &all)?,
                                        format!("int{tag}D({p}{q}->{r}{s})"),
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    };

    match kind {
        PoolKind::Custom => return Err(VqeError::EmptyPool),
        PoolKind::Gsd => {
            // Spin-preserving spinorbital singles.
            for p in 0..n_spatial {
                for q in p + 1..n_spatial {
                    if !symmetric(irreps, &[p, q]) {
                        continue;
                    }
                    push(a_single(up(p), up(q)), format!("s({p}a->{q}a)"));
                    push(a_single(dn(p), dn(q)), format!("s({p}b->{q}b)"));
                }
            }
            // Sz-conserving spinorbital doubles, deduplicated by ordering the
            // two occupied-pair index sets.
            let r = 2 * n_spatial;
            let mut pairs: Vec<(usize, usize)> = Vec::new();
            for i in 0..r {
                for j in i + 1..r {
                    pairs.push((i, j));
                }
            }
            let sz = |i: usize| if i % 2 == 0 { 1i64 } else { -1 };
            for (ai, &(i, j)) in pairs.iter().enumerate() {
                for &(k, l) in &pairs[ai + 1..] {
                    if i == k || i == l || j == k || j == l {
                        continue;
                    }
                    if sz(i) + sz(j) != sz(k) + sz(l) {
                        continue;
                    }
                    if !symmetric(irreps, &[i / 2, j / 2, k / 2, l / 2]) {
                        continue;
                    }
                    push(a_double(i, j, k, l), format!("d({i},{j}->{k},{l})"));
                }
            }
        }
        PoolKind::SaGsd => {
            for fam in [Family::SaGS, Family::PpD, Family::PpQrD, Family::Int0D, Family::Int1D] {
                add_family(fam, &mut push)?;
            }
        }
        PoolKind::SaGspD => {
            for fam in [Family::SaGS, Family::PpD] {
                add_family(fam, &mut push)?;
            }
        }
        PoolKind::SaGsd0 => {
            for fam in [Family::SaGS, Family::PpD, Family::PpQrD, Family::Int0D] {
                add_family(fam, &mut push)?;
            }
        }
        PoolKind::PDint0 => {
            for fam in [Family::PpD, Family::Int0D] {
                add_family(fam, &mut push)?;
            }
        }
    }
    if elements.is_empty() {
        return Err(VqeError::EmptyPool);
    }
    Ok(OperatorPool { kind, elements })
}

fn build(fam: Family, orbs: &[usize]) -> Result<OperatorExpr, VqeError> {
    Ok(crate::algebra::build_generator(fam, orbs)?)
}

impl OperatorPool {
    pub fn custom(elements: Vec<PoolElement>) -> Self {
        OperatorPool { kind: PoolKind::Custom, elements }
    }

    pub fn labels(&self) -> Vec<&str> {
        self.elements.iter().map(|e| e.label.as_str()).collect()
    }

    /// Checks every element for anti-Hermiticity and N/Sz conservation (plus
    /// S² for the spin-adapted kinds) by operator-level commutators.
    pub fn verify(&self, register: usize) -> Result<(), VqeError> {
        let (n_expr, sz_expr, s2_expr) = symmetry_exprs(register);
        let spin_adapted = matches!(
            self.kind,
            PoolKind::SaGsd | PoolKind::SaGspD | PoolKind::SaGsd0 | PoolKind::PDint0
        );
        for e in &self.elements {
            let fail = |symmetry: &'static str, norm: f64| VqeError::PoolSymmetry {
                label: e.label.clone(),
                symmetry,
                norm,
            };
            if !e.generator.is_anti_hermitian(1e-10) {
                return Err(fail("anti-Hermiticity", 1.0));
            }
            let cn = e.generator.commutator(&n_expr).coeff_norm();
            if cn > 1e-10 {
                return Err(fail("N", cn));
            }
            let cz = e.generator.commutator(&sz_expr).coeff_norm();
            if cz > 1e-10 {
                return Err(fail("Sz", cz));
            }
            if spin_adapted {
                let cs = e.generator.commutator(&s2_expr).coeff_norm();
                if cs > 1e-10 {
                    return Err(fail("S²", cs));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Statevector backend
// ---------------------------------------------------------------------------

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn apply_into(x: &OperatorExpr, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    apply_expr(x, v, &mut out);
    out
}

/// v ← exp(θA)·v by scaled Taylor series; adequate for the bounded
/// anti-Hermitian pool generators used here.
fn apply_exp(a: &OperatorExpr, theta: f64, v: &mut Vec<f64>) {
    if theta == 0.0 || a.is_zero() {
        return;
    }
    let chunks = theta.abs().ceil().max(1.0) as usize;
    let step = theta / chunks as f64;
    for _ in 0..chunks {
        let mut term = v.clone();
        let mut k = 1usize;
        loop {
            let mut next = apply_into(a, &term);
            let scale = step / k as f64;
            next.iter_mut().for_each(|x| *x *= scale);
            let mut biggest = 0.0f64;
            for (vi, ni) in v.iter_mut().zip(&next) {
                *vi += ni;
                biggest = biggest.max(ni.abs());
            }
            if biggest < 1e-16 || k > 200 {
                break;
            }
            term = next;
            k += 1;
        }
    }
}

/// Lowest-energy symmetry-compatible determinant: aufbau fill of the h1
/// diagonal with (N+MS2)/2 up and (N−MS2)/2 down electrons.
pub fn reference_determinant(h: &MolecularHamiltonian) -> Result<u64, VqeError> {
    let nelec = h.n_elec;
    let ms2 = h.ms2;
    if (nelec as i64 + ms2) % 2 != 0 || (nelec as i64) < ms2.abs() {
        return Err(VqeError::BadSpinSector { nelec, ms2 });
    }
    let n_alpha = ((nelec as i64 + ms2) / 2) as usize;
    let n_beta = nelec - n_alpha;
    if n_alpha > h.n_spatial || n_beta > h.n_spatial {
        return Err(VqeError::EmptySector { n: nelec, ms2, spatial: h.n_spatial });
    }
    let mut order: Vec<usize> = (0..h.n_spatial).collect();
    order.sort_by(|&a, &b| h.one(a, a).total_cmp(&h.one(b, b)).then(a.cmp(&b)));
    let mut bits = 0u64;
    for &p in order.iter().take(n_alpha) {
        bits |= 1 << up(p);
    }
    for &p in order.iter().take(n_beta) {
        bits |= 1 << dn(p);
    }
    Ok(bits)
}

/// Lowest eigenpair of the Hamiltonian within the (N, 2Sz) determinant
/// sector, by dense symmetric diagonalization in the sector basis.
pub fn exact_ground_state(
    h: &MolecularHamiltonian,
    sector: (usize, i64),
) -> Result<(f64, Vec<f64>), VqeError> {
    let register = h.register();
    if register > MAX_REGISTER {
        return Err(VqeError::RegisterOverflow(register));
    }
    let (n_target, ms2) = sector;
    let mut basis: Vec<u64> = Vec::new();
    for bits in 0..(1u64 << register) {
        let n = bits.count_ones() as usize;
        if n != n_target {
            continue;
        }
        let na = (bits & 0x5555_5555_5555_5555).count_ones() as i64;
        let nb = (bits & 0xAAAA_AAAA_AAAA_AAAA).count_ones() as i64;
        if na - nb == ms2 {
            basis.push(bits);
        }
    }
    if basis.is_empty() {
        return Err(VqeError::EmptySector { n: n_target, ms2, spatial: h.n_spatial });
    }
    let index: HashMap<u64, usize> = basis.iter().enumerate().map(|(i, &b)| (b, i)).collect();
    let dim = basis.len();
    let hop = h.to_operator();
    let mut m = DMatrix::<f64>::zeros(dim, dim);
    let columns: Vec<Vec<(usize, f64)>> = par::map_slice(&basis, |&bits| {
        let mut col: HashMap<usize, f64> = HashMap::new();
        for (string, &coeff) in &hop.terms {
            if let Some((to, sign)) = string.apply_to_bits(bits) {
                if let Some(&row) = index.get(&to) {
                    *col.entry(row).or_insert(0.0) += sign * coeff;
                }
            }
        }
        col.into_iter().collect()
    });
    for (j, col) in columns.iter().enumerate() {
        for &(i, v) in col {
            m[(i, j)] = v;
        }
    }
    let eig = m.symmetric_eigen();
    let (best, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let energy = eig.eigenvalues[best];
    let mut vector = vec![0.0; 1usize << register];
    for (i, &bits) in basis.iter().enumerate() {
        vector[bits as usize] = eig.eigenvectors[(i, best)];
    }
    Ok((energy, vector))
}

// ---------------------------------------------------------------------------
// ADAPT-VQE
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AdaptOptions {
    /// Stop once the ansatz holds this many parameters.
    pub max_params: usize,
    /// Stop when the largest pool gradient magnitude falls below this.
    pub grad_ceiling: f64,
    /// Micro-iteration (BFGS) gradient-norm convergence target.
    pub micro_gtol: f64,
    pub micro_max_iters: usize,
    /// Baseline for the error column; computed from the sector when absent.
    pub exact_energy: Option<f64>,
}

impl Default for AdaptOptions {
    fn default() -> Self {
        AdaptOptions {
            max_params: 30,
            grad_ceiling: 1e-7,
            micro_gtol: 1e-6,
            micro_max_iters: 400,
            exact_energy: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub n_params: usize,
    pub energy: f64,
    pub error_vs_exact: f64,
    pub s2: f64,
    pub sigma_s2: f64,
    pub max_gradient: f64,
    /// The micro-optimizer missed its gradient target within its budget.
    pub stalled: bool,
}

#[derive(Debug, Clone)]
pub struct AdaptState {
    /// Pool indices with optimized parameters, in selection order.
    pub ansatz: Vec<(usize, f64)>,
    pub labels: Vec<String>,
    pub energy: f64,
    pub reference: u64,
    pub history: Vec<IterationRecord>,
    pub exact_energy: f64,
    pub stalled: bool,
}

impl AdaptState {
    /// Run log in the `iter,n_params,...` CSV layout with a leading metadata
    /// comment.
    pub fn write_log_csv(&self, w: &mut impl std::io::Write, metadata: &str) -> std::io::Result<()> {
        writeln!(w, "# {metadata}")?;
        writeln!(w, "iter,n_params,energy,error_vs_exact,S2,sigma_S2,max_gradient")?;
        for r in &self.history {
            writeln!(
                w,
                "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                r.iter, r.n_params, r.energy, r.error_vs_exact, r.s2, r.sigma_s2, r.max_gradient
            )?;
        }
        Ok(())
    }

    /// Final ansatz as ordered (label, parameter) pairs.
    pub fn ansatz_json(&self) -> serde_json::Value {
        let ops: Vec<serde_json::Value> = self
            .ansatz
            .iter()
            .zip(&self.labels)
            .map(|(&(idx, theta), label)| {
                serde_json::json!({ "pool_index": idx, "label": label, "parameter": theta })
            })
            .collect();
        serde_json::json!({
            "energy": self.energy,
            "exact_energy": self.exact_energy,
            "reference": format!("{:b}", self.reference),
            "operators": ops,
        })
    }
}

struct AnsatzEngine<'a> {
    pool: &'a OperatorPool,
    hamiltonian: OperatorExpr,
    reference: Vec<f64>,
}

impl AnsatzEngine<'_> {
    /// Forward states φ_k after each exponential; φ_0 is the reference.
    fn forward(&self, ansatz: &[(usize, f64)]) -> Vec<Vec<f64>> {
        let mut states = Vec::with_capacity(ansatz.len() + 1);
        states.push(self.reference.clone());
        for &(idx, theta) in ansatz {
            let mut v = states.last().unwrap().clone();
            apply_exp(&self.pool.elements[idx].generator, theta, &mut v);
            states.push(v);
        }
        states
    }

    fn energy_of(&self, ansatz: &[(usize, f64)]) -> f64 {
        let psi = self.forward(ansatz).pop().unwrap();
        dot(&psi, &apply_into(&self.hamiltonian, &psi))
    }

    /// Analytic energy gradient by one reverse sweep: for the product
    /// ψ = U_m…U_1|ref⟩, ∂E/∂θ_k = 2⟨U_{k+1}†…U_m†·Hψ | A_k φ_k⟩.
    fn energy_and_grad(&self, ansatz: &[(usize, f64)], grad: &mut [f64]) -> f64 {
        let states = self.forward(ansatz);
        let psi = states.last().unwrap();
        let mut lambda = apply_into(&self.hamiltonian, psi);
        let energy = dot(psi, &lambda);
        for (k, &(idx, theta)) in ansatz.iter().enumerate().rev() {
            let a = &self.pool.elements[idx].generator;
            grad[k] = 2.0 * dot(&lambda, &apply_into(a, &states[k + 1]));
            apply_exp(a, -theta, &mut lambda);
        }
        energy
    }

    /// Selection gradients 2⟨Hψ|A|ψ⟩ for every pool element in parallel.
    fn pool_gradients(&self, psi: &[f64]) -> Vec<f64> {
        let hpsi = apply_into(&self.hamiltonian, psi);
        par::map_slice(&self.pool.elements, |e| {
            2.0 * dot(&hpsi, &apply_into(&e.generator, psi))
        })
    }
}

/// Energy of a fixed ansatz (pool indices with parameters, applied in order
/// to the aufbau reference).
pub fn ansatz_energy(
    h: &MolecularHamiltonian,
    pool: &OperatorPool,
    ansatz: &[(usize, f64)],
) -> Result<f64, VqeError> {
    Ok(engine_for(h, pool)?.energy_of(ansatz))
}

/// Selection gradients 2⟨Hψ|A|ψ⟩ of every pool element at the state prepared
/// by `ansatz`.
pub fn pool_gradients(
    h: &MolecularHamiltonian,
    pool: &OperatorPool,
    ansatz: &[(usize, f64)],
) -> Result<Vec<f64>, VqeError> {
    let engine = engine_for(h, pool)?;
    let psi = engine.forward(ansatz).pop().unwrap();
    Ok(engine.pool_gradients(&psi))
}

fn engine_for<'a>(
    h: &MolecularHamiltonian,
    pool: &'a OperatorPool,
) -> Result<AnsatzEngine<'a>, VqeError> {
    let register = h.register();
    if register > MAX_REGISTER {
        return Err(VqeError::RegisterOverflow(register));
    }
    let reference = reference_determinant(h)?;
    let mut ref_vec = vec![0.0; 1usize << register];
    ref_vec[reference as usize] = 1.0;
    Ok(AnsatzEngine { pool, hamiltonian: h.to_operator(), reference: ref_vec })
}

/// Grows an ansatz by repeatedly appending the pool element with the largest
/// energy-gradient magnitude (ties to the lowest index) and re-optimizing all
/// parameters with warm-started BFGS.
pub fn adapt_vqe(
    h: &MolecularHamiltonian,
    pool: &OperatorPool,
    opts: &AdaptOptions,
) -> Result<AdaptState, VqeError> {
    let register = h.register();
    if register > MAX_REGISTER {
        return Err(VqeError::RegisterOverflow(register));
    }
    if pool.elements.is_empty() {
        return Err(VqeError::EmptyPool);
    }
    let reference = reference_determinant(h)?;
    let dim = 1usize << register;
    let mut ref_vec = vec![0.0; dim];
    ref_vec[reference as usize] = 1.0;

    let engine = AnsatzEngine {
        pool,
        hamiltonian: h.to_operator(),
        reference: ref_vec,
    };
    let exact_energy = match opts.exact_energy {
        Some(e) => e,
        None => exact_ground_state(h, (h.n_elec, h.ms2))?.0,
    };
    let (_, _, s2_expr) = symmetry_exprs(register);

    let mut ansatz: Vec<(usize, f64)> = Vec::new();
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut stalled_any = false;
    let mut energy = engine.energy_of(&ansatz);

    for iter in 1..=opts.max_params {
        let psi = engine.forward(&ansatz).pop().unwrap();
        let grads = engine.pool_gradients(&psi);
        let (best_idx, best_mag) = grads
            .iter()
            .enumerate()
            .fold((0usize, -1.0f64), |(bi, bm), (i, g)| {
                if g.abs() > bm {
                    (i, g.abs())
                } else {
                    (bi, bm)
                }
            });
        if best_mag < opts.grad_ceiling {
            break;
        }
        ansatz.push((best_idx, 0.0));

        let x0 = DVector::from_iterator(ansatz.len(), ansatz.iter().map(|&(_, t)| t));
        let shape: Vec<usize> = ansatz.iter().map(|&(i, _)| i).collect();
        let with_params = |x: &DVector<f64>| -> Vec<(usize, f64)> {
            shape.iter().zip(x.iter()).map(|(&i, &t)| (i, t)).collect()
        };
        let bfgs_opts = BfgsOptions {
            gtol: opts.micro_gtol,
            max_iters: opts.micro_max_iters,
            ..BfgsOptions::default()
        };
        let result: BfgsResult = minimize_bfgs_with_grad(
            |x| engine.energy_of(&with_params(x)),
            |x, g| {
                let mut gs = vec![0.0; x.len()];
                engine.energy_and_grad(&with_params(x), &mut gs);
                for (gi, v) in g.iter_mut().zip(&gs) {
                    *gi = *v;
                }
            },
            &x0,
            &bfgs_opts,
        );
        for (slot, &t) in ansatz.iter_mut().zip(result.x.iter()) {
            slot.1 = t;
        }
        stalled_any |= !result.converged;
        energy = result.f;

        let psi = engine.forward(&ansatz).pop().unwrap();
        let s2psi = apply_into(&s2_expr, &psi);
        let s2 = dot(&psi, &s2psi);
        let sigma_s2 = (dot(&s2psi, &s2psi) - s2 * s2).max(0.0).sqrt();
        history.push(IterationRecord {
            iter,
            n_params: ansatz.len(),
            energy,
            error_vs_exact: energy - exact_energy,
            s2,
            sigma_s2,
            max_gradient: best_mag,
            stalled: !result.converged,
        });
    }

    let labels = ansatz
        .iter()
        .map(|&(i, _)| pool.elements[i].label.clone())
        .collect();
    Ok(AdaptState {
        ansatz,
        labels,
        energy,
        reference,
        history,
        exact_energy,
        stalled: stalled_any,
    })
}
