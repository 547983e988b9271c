//! Symbolic second-quantized operator algebra over real coefficients.
//!
//! Strings are kept in a canonical normal form (creations ascending, then
//! annihilations ascending, signs absorbed into coefficients), which makes a
//! `BTreeMap` keyed by the string a unique representation of any operator.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::COEFF_EPS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Spin {
    Up,
    Down,
}

/// A spatial orbital paired with a spin label. Flat (qubit) index layout is the
/// fixed alternating pattern: `2P` for `P↑`, `2P+1` for `P↓`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpinOrbital {
    pub spatial: usize,
    pub spin: Spin,
}

impl SpinOrbital {
    pub fn new(spatial: usize, spin: Spin) -> Self {
        SpinOrbital { spatial, spin }
    }

    pub fn up(spatial: usize) -> Self {
        SpinOrbital::new(spatial, Spin::Up)
    }

    pub fn down(spatial: usize) -> Self {
        SpinOrbital::new(spatial, Spin::Down)
    }

    pub fn flat(&self) -> usize {
        2 * self.spatial + if self.spin == Spin::Up { 0 } else { 1 }
    }

    pub fn from_flat(flat: usize) -> Self {
        SpinOrbital {
            spatial: flat / 2,
            spin: if flat % 2 == 0 { Spin::Up } else { Spin::Down },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Create,
    Annihilate,
}

/// A normal-form fermionic string: creations ascending, then annihilations.
/// Both index lists are stored strictly increasing; the operator the string
/// denotes writes the annihilations in *descending* order,
/// a†_{c1} … a†_{ck} a_{a_m} … a_{a_1}, so that every diagonal number string
/// n_{p} n_{q} … carries coefficient +1. The overall sign lives in the owning
/// term's coefficient.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FermionString {
    pub creates: Vec<usize>,
    pub annihs: Vec<usize>,
}

impl FermionString {
    pub fn identity() -> Self {
        FermionString { creates: vec![], annihs: vec![] }
    }

    pub fn is_identity(&self) -> bool {
        self.creates.is_empty() && self.annihs.is_empty()
    }

    /// True when the string maps each determinant to a multiple of itself.
    pub fn is_diagonal(&self) -> bool {
        self.creates == self.annihs
    }

    pub fn max_index(&self) -> Option<usize> {
        self.creates.iter().chain(&self.annihs).copied().max()
    }

    /// Applies the string to an occupation bitstring (bit p = spinorbital p):
    /// annihilations act first from the smallest index up, then creations
    /// from the largest down, each contributing the parity of the occupied
    /// modes below it. Returns the resulting bitstring and sign, or None if
    /// the string annihilates the state.
    pub fn apply_to_bits(&self, bits: u64) -> Option<(u64, f64)> {
        let mut state = bits;
        let mut sign = 1.0_f64;
        for &p in &self.annihs {
            if state & (1 << p) == 0 {
                return None;
            }
            if (state & ((1u64 << p) - 1)).count_ones() % 2 == 1 {
                sign = -sign;
            }
            state &= !(1u64 << p);
        }
        for &p in self.creates.iter().rev() {
            if state & (1 << p) != 0 {
                return None;
            }
            if (state & ((1u64 << p) - 1)).count_ones() % 2 == 1 {
                sign = -sign;
            }
            state |= 1u64 << p;
        }
        Some((state, sign))
    }

    /// Elementary operators in written (left-to-right) order.
    fn ops(&self) -> Vec<(usize, OpKind)> {
        self.creates
            .iter()
            .map(|&i| (i, OpKind::Create))
            .chain(self.annihs.iter().rev().map(|&i| (i, OpKind::Annihilate)))
            .collect()
    }
}

/// A real-linear combination of normal-form fermionic strings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OperatorExpr {
    pub terms: BTreeMap<FermionString, f64>,
}

#[derive(Debug, Error)]
pub enum AlgebraError {
    #[error("invalid index pattern for family {family}: {detail}")]
    InvalidIndexPattern { family: String, detail: String },
}

/// Normal-orders a raw product of elementary operators, expanding
/// anticommutators as it goes. The zero expression is a valid result.
pub fn normal_order(raw: &[(usize, OpKind)], coeff: f64) -> OperatorExpr {
    let mut out = OperatorExpr::default();
    push_normal_ordered(raw.to_vec(), coeff, &mut out.terms);
    out.prune();
    out
}

fn push_normal_ordered(
    ops: Vec<(usize, OpKind)>,
    coeff: f64,
    out: &mut BTreeMap<FermionString, f64>,
) {
    let mut stack = vec![(ops, coeff)];
    'outer: while let Some((ops, c)) = stack.pop() {
        for i in 0..ops.len().saturating_sub(1) {
            let (a, ka) = ops[i];
            let (b, kb) = ops[i + 1];
            match (ka, kb) {
                (OpKind::Create, OpKind::Create) => {
                    if a == b {
                        continue 'outer; // nilpotency: term vanishes
                    }
                    if a > b {
                        let mut swapped = ops.clone();
                        swapped.swap(i, i + 1);
                        stack.push((swapped, -c));
                        continue 'outer;
                    }
                }
                (OpKind::Annihilate, OpKind::Annihilate) => {
                    // written order for annihilations is descending
                    if a == b {
                        continue 'outer;
                    }
                    if a < b {
                        let mut swapped = ops.clone();
                        swapped.swap(i, i + 1);
                        stack.push((swapped, -c));
                        continue 'outer;
                    }
                }
                (OpKind::Annihilate, OpKind::Create) => {
                    // a_a a_b† = δ_ab − a_b† a_a
                    if a == b {
                        let mut contracted = ops.clone();
                        contracted.drain(i..=i + 1);
                        stack.push((contracted, c));
                    }
                    let mut swapped = ops.clone();
                    swapped.swap(i, i + 1);
                    stack.push((swapped, -c));
                    continue 'outer;
                }
                (OpKind::Create, OpKind::Annihilate) => {}
            }
        }
        let split = ops.iter().position(|&(_, k)| k == OpKind::Annihilate).unwrap_or(ops.len());
        let string = FermionString {
            creates: ops[..split].iter().map(|&(i, _)| i).collect(),
            annihs: ops[split..].iter().rev().map(|&(i, _)| i).collect(),
        };
        *out.entry(string).or_insert(0.0) += c;
    }
}

impl OperatorExpr {
    pub fn zero() -> Self {
        OperatorExpr::default()
    }

    pub fn identity() -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(FermionString::identity(), 1.0);
        OperatorExpr { terms }
    }

    pub fn from_term(string: FermionString, coeff: f64) -> Self {
        normal_order(&string.ops(), coeff)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn prune(&mut self) {
        self.terms.retain(|_, c| c.abs() >= COEFF_EPS);
    }

    pub fn scale(&self, s: f64) -> OperatorExpr {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c *= s;
        }
        out.prune();
        out
    }

    pub fn add(&self, other: &OperatorExpr) -> OperatorExpr {
        let mut out = self.clone();
        for (s, c) in &other.terms {
            *out.terms.entry(s.clone()).or_insert(0.0) += c;
        }
        out.prune();
        out
    }

    pub fn sub(&self, other: &OperatorExpr) -> OperatorExpr {
        self.add(&other.scale(-1.0))
    }

    /// Operator product, re-expanded into normal form.
    pub fn mul(&self, other: &OperatorExpr) -> OperatorExpr {
        let mut out = OperatorExpr::default();
        for (sx, cx) in &self.terms {
            let ox = sx.ops();
            for (sy, cy) in &other.terms {
                let mut ops = ox.clone();
                ops.extend(sy.ops());
                push_normal_ordered(ops, cx * cy, &mut out.terms);
            }
        }
        out.prune();
        out
    }

    pub fn adjoint(&self) -> OperatorExpr {
        let mut out = OperatorExpr::default();
        for (s, c) in &self.terms {
            // Adjoint reverses the written order and flips kinds: written
            // annihilations were descending, so the new creations read
            // ascending; the new annihilations read descending.
            let ops: Vec<_> = s
                .annihs
                .iter()
                .map(|&i| (i, OpKind::Create))
                .chain(s.creates.iter().rev().map(|&i| (i, OpKind::Annihilate)))
                .collect();
            push_normal_ordered(ops, *c, &mut out.terms);
        }
        out.prune();
        out
    }

    pub fn commutator(&self, other: &OperatorExpr) -> OperatorExpr {
        self.mul(other).sub(&other.mul(self))
    }

    pub fn is_anti_hermitian(&self, tol: f64) -> bool {
        self.add(&self.adjoint()).terms.values().all(|c| c.abs() < tol)
    }

    pub fn max_index(&self) -> Option<usize> {
        self.terms.keys().filter_map(|s| s.max_index()).max()
    }

    /// l∞ norm over string coefficients.
    pub fn coeff_norm(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// One term per line: coefficient, then `a{i}^` / `a{i}` tokens.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (string, c) in &self.terms {
            let _ = write!(s, "{c:+.16e}");
            for i in &string.creates {
                let _ = write!(s, " a{i}^");
            }
            for i in string.annihs.iter().rev() {
                let _ = write!(s, " a{i}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<OperatorExpr, String> {
        let mut out = OperatorExpr::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut toks = line.split_whitespace();
            let c: f64 = toks
                .next()
                .ok_or("empty term")?
                .parse()
                .map_err(|e| format!("bad coefficient: {e}"))?;
            let mut ops = Vec::new();
            for t in toks {
                let (body, kind) = match t.strip_suffix('^') {
                    Some(b) => (b, OpKind::Create),
                    None => (t, OpKind::Annihilate),
                };
                let idx: usize = body
                    .strip_prefix('a')
                    .ok_or_else(|| format!("bad token {t}"))?
                    .parse()
                    .map_err(|e| format!("bad token {t}: {e}"))?;
                ops.push((idx, kind));
            }
            push_normal_ordered(ops, c, &mut out.terms);
        }
        out.prune();
        Ok(out)
    }
}

/// Particle number operator n_p = a_p† a_p (flat index).
pub fn n_op(p: usize) -> OperatorExpr {
    OperatorExpr::from_term(FermionString { creates: vec![p], annihs: vec![p] }, 1.0)
}

/// Hole number operator h_p = a_p a_p† = 1 − n_p.
pub fn h_op(p: usize) -> OperatorExpr {
    OperatorExpr::identity().sub(&n_op(p))
}

/// Anti-Hermitian single excitation A_p^q = a_q† a_p − a_p† a_q (flat indices).
pub fn a_single(p: usize, q: usize) -> OperatorExpr {
    let fwd = normal_order(&[(q, OpKind::Create), (p, OpKind::Annihilate)], 1.0);
    fwd.sub(&fwd.adjoint())
}

/// Anti-Hermitian double excitation
/// A_pq^rs = a_r† a_s† a_q a_p − a_p† a_q† a_s a_r (flat indices).
pub fn a_double(p: usize, q: usize, r: usize, s: usize) -> OperatorExpr {
    let fwd = normal_order(
        &[
            (r, OpKind::Create),
            (s, OpKind::Create),
            (q, OpKind::Annihilate),
            (p, OpKind::Annihilate),
        ],
        1.0,
    );
    fwd.sub(&fwd.adjoint())
}

/// The spin-adapted generator families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// Singlet single (A_{P↑}^{Q↑} + A_{P↓}^{Q↓})/√2 — two spatial indices.
    SaGS,
    /// Perfect-pairing double A_{P↑P↓}^{Q↑Q↓} — two spatial indices.
    PpD,
    /// Paired-origin double (A_{P↑P↓}^{Q↑R↓} − A_{P↑P↓}^{Q↓R↑})/√2 — three indices.
    PpQrD,
    /// Singlet-intermediate double ⁰A_PQ^RS — four spatial indices.
    Int0D,
    /// Triplet-intermediate double ¹A_PQ^RS — four spatial indices.
    Int1D,
}

impl Family {
    pub fn arity(&self) -> usize {
        match self {
            Family::SaGS | Family::PpD => 2,
            Family::PpQrD => 3,
            Family::Int0D | Family::Int1D => 4,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::SaGS => "saGS",
            Family::PpD => "ppD",
            Family::PpQrD => "ppqrD",
            Family::Int0D => "int0D",
            Family::Int1D => "int1D",
        }
    }
}

fn up(p: usize) -> usize {
    2 * p
}

fn dn(p: usize) -> usize {
    2 * p + 1
}

/// Builds a spin-adapted generator from spatial orbital indices.
pub fn build_generator(family: Family, orbs: &[usize]) -> Result<OperatorExpr, AlgebraError> {
    let bad = |detail: String| AlgebraError::InvalidIndexPattern {
        family: family.name().to_string(),
        detail,
    };
    if orbs.len() != family.arity() {
        return Err(bad(format!("expected {} indices, got {}", family.arity(), orbs.len())));
    }
    let distinct = |ix: &[usize]| {
        let mut v = ix.to_vec();
        v.sort_unstable();
        v.dedup();
        v.len() == ix.len()
    };
    if !distinct(orbs) {
        return Err(bad(format!("indices must be distinct, got {orbs:?}")));
    }
    Ok(match family {
        Family::SaGS => {
            let (p, q) = (orbs[0], orbs[1]);
            a_single(up(p), up(q))
                .add(&a_single(dn(p), dn(q)))
                .scale(1.0 / 2f64.sqrt())
        }
        Family::PpD => {
            let (p, q) = (orbs[0], orbs[1]);
            a_double(up(p), dn(p), up(q), dn(q))
        }
        Family::PpQrD => {
            let (p, q, r) = (orbs[0], orbs[1], orbs[2]);
            a_double(up(p), dn(p), up(q), dn(r))
                .sub(&a_double(up(p), dn(p), dn(q), up(r)))
                .scale(1.0 / 2f64.sqrt())
        }
        Family::Int0D => {
            let (p, q, r, s) = (orbs[0], orbs[1], orbs[2], orbs[3]);
            a_double(up(p), dn(q), up(r), dn(s))
                .sub(&a_double(up(p), dn(q), dn(r), up(s)))
                .sub(&a_double(dn(p), up(q), up(r), dn(s)))
                .add(&a_double(dn(p), up(q), dn(r), up(s)))
                .scale(0.5)
        }
        Family::Int1D => {
            let (p, q, r, s) = (orbs[0], orbs[1], orbs[2], orbs[3]);
            let mixed = a_double(up(p), dn(q), up(r), dn(s))
                .add(&a_double(up(p), dn(q), dn(r), up(s)))
                .add(&a_double(dn(p), up(q), up(r), dn(s)))
                .add(&a_double(dn(p), up(q), dn(r), up(s)))
                .scale(0.5);
            a_double(up(p), up(q), up(r), up(s))
                .add(&a_double(dn(p), dn(q), dn(r), dn(s)))
                .add(&mixed)
                .scale(1.0 / 3f64.sqrt())
        }
    })
}

/// Bare spinorbital constituents that seed the Lie closures: the same spin
/// combinations that build the family, without the normalization.
pub fn closure_seeds(family: Family, orbs: &[usize]) -> Result<Vec<OperatorExpr>, AlgebraError> {
    if orbs.len() != family.arity() {
        return Err(AlgebraError::InvalidIndexPattern {
            family: family.name().to_string(),
            detail: format!("expected {} indices, got {}", family.arity(), orbs.len()),
        });
    }
    Ok(match family {
        Family::SaGS => {
            let (p, q) = (orbs[0], orbs[1]);
            vec![a_single(up(p), up(q)), a_single(dn(p), dn(q))]
        }
        Family::PpD => {
            let (p, q) = (orbs[0], orbs[1]);
            vec![a_double(up(p), dn(p), up(q), dn(q))]
        }
        Family::PpQrD => {
            let (p, q, r) = (orbs[0], orbs[1], orbs[2]);
            vec![
                a_double(up(p), dn(p), up(q), dn(r)),
                a_double(up(p), dn(p), dn(q), up(r)),
            ]
        }
        Family::Int0D | Family::Int1D => {
            let (p, q, r, s) = (orbs[0], orbs[1], orbs[2], orbs[3]);
            let mut seeds = vec![
                a_double(up(p), dn(q), up(r), dn(s)),
                a_double(up(p), dn(q), dn(r), up(s)),
                a_double(dn(p), up(q), up(r), dn(s)),
                a_double(dn(p), up(q), dn(r), up(s)),
            ];
            if family == Family::Int1D {
                seeds.push(a_double(up(p), up(q), up(r), up(s)));
                seeds.push(a_double(dn(p), dn(q), dn(r), dn(s)));
            }
            seeds
        }
    })
}

/// An algebra element in factored E = A·N form: anti-Hermitian excitation part
/// times an optional number-operator part (identity when absent).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub excitation: OperatorExpr,
    pub number_part: OperatorExpr,
    pub label: String,
}

impl GeneratorSpec {
    pub fn bare(excitation: OperatorExpr, label: impl Into<String>) -> Self {
        GeneratorSpec {
            excitation,
            number_part: OperatorExpr::identity(),
            label: label.into(),
        }
    }

    pub fn expr(&self) -> OperatorExpr {
        self.excitation.mul(&self.number_part)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CubicViolation {
    pub kind: String,
    pub labels: Vec<String>,
    pub max_coeff: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CubicReport {
    pub violations: Vec<CubicViolation>,
}

impl CubicReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks E³ = −E for `e` and E_j [E_i, E_j] E_j = 0 for every partner pair,
/// with all term coefficients cancelling below `tol` (1e-12 by default users).
pub fn check_cubic_closure(
    e: &GeneratorSpec,
    partners: &[GeneratorSpec],
    tol: f64,
) -> CubicReport {
    let mut report = CubicReport::default();
    let ex = e.expr();
    let cubic = ex.mul(&ex).mul(&ex).add(&ex);
    if cubic.coeff_norm() >= tol {
        report.violations.push(CubicViolation {
            kind: "cubic".into(),
            labels: vec![e.label.clone()],
            max_coeff: cubic.coeff_norm(),
        });
    }
    for p in partners {
        let pj = p.expr();
        let sandwiched = ex.mul(&pj.commutator(&ex)).mul(&ex);
        if sandwiched.coeff_norm() >= tol {
            report.violations.push(CubicViolation {
                kind: "sandwich".into(),
                labels: vec![p.label.clone(), e.label.clone()],
                max_coeff: sandwiched.coeff_norm(),
            });
        }
    }
    report
}
