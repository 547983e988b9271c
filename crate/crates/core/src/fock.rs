//! Dense matrix realization of operator expressions on the full 2^n Fock
//! space. This module is the independent ground truth the symbolic, ODE, and
//! circuit layers are verified against; it trades speed for transparency.
//!
//! Basis convention: basis state with integer index `b` has flat spinorbital
//! `k` occupied iff bit `k` of `b` is set; states are ordered by integer value.
//! Jordan-Wigner signs count occupied spinorbitals below the acted index.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::algebra::{h_op, n_op, normal_order, OpKind, OperatorExpr};

pub const MAX_REGISTER: usize = 14;

#[derive(Debug, Clone, PartialEq)]
pub struct FockMatrix {
    pub dim: usize,
    pub register_size: usize,
    pub data: DMatrix<f64>,
}

#[derive(Debug, Error)]
pub enum FockError {
    #[error("register of {0} spinorbitals exceeds the dense bound of {MAX_REGISTER}")]
    RegisterTooLarge(usize),
    #[error("expression touches index {index} outside register of {register} spinorbitals")]
    IndexOutOfRange { index: usize, register: usize },
    #[error("matrix is not anti-Hermitian: ||M + M^T||_F = {0:.3e}")]
    NotAntiHermitian(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("orbital indices must be distinct: {0:?}")]
    IndexCollision(Vec<usize>),
}

impl FockMatrix {
    pub fn zeros(register_size: usize) -> Self {
        let dim = 1 << register_size;
        FockMatrix { dim, register_size, data: DMatrix::zeros(dim, dim) }
    }

    pub fn identity(register_size: usize) -> Self {
        let dim = 1 << register_size;
        FockMatrix { dim, register_size, data: DMatrix::identity(dim, dim) }
    }

    pub fn from_data(data: DMatrix<f64>, register_size: usize) -> Self {
        FockMatrix { dim: data.nrows(), register_size, data }
    }

    /// Row-major binary dump: 16-byte header (dim, register_size as u64 LE)
    /// followed by the entries as f64 LE.
    pub fn dump(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        w.write_all(&(self.register_size as u64).to_le_bytes())?;
        for r in 0..self.dim {
            for c in 0..self.dim {
                w.write_all(&self.data[(r, c)].to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// Applies one normal-form string to basis state `b`; returns (new state, JW
/// sign) or None when the string annihilates it.
fn apply_string(
    creates: &[usize],
    annihs: &[usize],
    b: usize,
) -> Option<(usize, f64)> {
    let mut state = b;
    let mut sign = 1.0_f64;
    // Written order is creations ascending then annihilations descending, so
    // the ket meets the annihilations first, smallest index innermost.
    for &p in annihs.iter() {
        if state & (1 << p) == 0 {
            return None;
        }
        if ((state & ((1 << p) - 1)) as u32).count_ones() % 2 == 1 {
            sign = -sign;
        }
        state &= !(1 << p);
    }
    for &p in creates.iter().rev() {
        if state & (1 << p) != 0 {
            return None;
        }
        if ((state & ((1 << p) - 1)) as u32).count_ones() % 2 == 1 {
            sign = -sign;
        }
        state |= 1 << p;
    }
    Some((state, sign))
}

/// Exact dense representation of an expression on `n` spinorbitals.
pub fn to_matrix(x: &OperatorExpr, n: usize) -> Result<FockMatrix, FockError> {
    if n > MAX_REGISTER {
        return Err(FockError::RegisterTooLarge(n));
    }
    if let Some(mx) = x.max_index() {
        if mx >= n {
            return Err(FockError::IndexOutOfRange { index: mx, register: n });
        }
    }
    let mut m = FockMatrix::zeros(n);
    for (string, &coeff) in &x.terms {
        for b in 0..m.dim {
            if let Some((b2, sign)) = apply_string(&string.creates, &string.annihs, b) {
                m.data[(b2, b)] += sign * coeff;
            }
        }
    }
    Ok(m)
}

/// Applies an expression to a dense statevector without forming the matrix.
pub fn apply_expr(x: &OperatorExpr, v: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (string, &coeff) in &x.terms {
        for (b, &amp) in v.iter().enumerate() {
            if amp == 0.0 {
                continue;
            }
            if let Some((b2, sign)) = apply_string(&string.creates, &string.annihs, b) {
                out[b2] += sign * coeff * amp;
            }
        }
    }
}

pub fn frobenius_distance(a: &FockMatrix, b: &FockMatrix) -> Result<f64, FockError> {
    if a.dim != b.dim {
        return Err(FockError::DimensionMismatch(a.dim, b.dim));
    }
    Ok((&a.data - &b.data).norm())
}

fn anti_hermiticity_defect(m: &DMatrix<f64>) -> f64 {
    (m + m.transpose()).norm()
}

/// exp(θ m) for anti-Hermitian (real antisymmetric) m, by Padé
/// scaling-and-squaring. Returns an orthogonal matrix.
pub fn expm_antihermitian(m: &FockMatrix, theta: f64) -> Result<FockMatrix, FockError> {
    let defect = anti_hermiticity_defect(&m.data);
    if defect >= 1e-12 {
        return Err(FockError::NotAntiHermitian(defect));
    }
    if theta == 0.0 {
        return Ok(FockMatrix::identity(m.register_size));
    }
    let e = (&m.data * theta).exp();
    Ok(FockMatrix::from_data(e, m.register_size))
}

fn up(p: usize) -> usize {
    2 * p
}

fn dn(p: usize) -> usize {
    2 * p + 1
}

fn num_string(indices: &[usize]) -> OperatorExpr {
    indices.iter().fold(OperatorExpr::identity(), |acc, &i| acc.mul(&n_op(i)))
}

fn hole_string(indices: &[usize]) -> OperatorExpr {
    indices.iter().fold(OperatorExpr::identity(), |acc, &i| acc.mul(&h_op(i)))
}

/// h_{pq..} + n_{pq..} — the particle-hole symmetric projector pair.
fn hn_plus(indices: &[usize]) -> OperatorExpr {
    hole_string(indices).add(&num_string(indices))
}

/// Bare (non-anti-Hermitian) excitation monomial a_r† a_s† a_q a_p.
fn monomial(p: usize, q: usize, r: usize, s: usize) -> OperatorExpr {
    normal_order(
        &[
            (r, OpKind::Create),
            (s, OpKind::Create),
            (q, OpKind::Annihilate),
            (p, OpKind::Annihilate),
        ],
        1.0,
    )
}

fn a_double(p: usize, q: usize, r: usize, s: usize) -> OperatorExpr {
    let fwd = monomial(p, q, r, s);
    fwd.sub(&fwd.adjoint())
}

/// Closed-form evaluation of exp(θ A_PP^QR) as an explicit trigonometric
/// polynomial in number operators and excitations, term by term through
/// `to_matrix`. Serves as an independent oracle against `expm_antihermitian`.
pub fn closed_form_ppqr(
    theta: f64,
    orbitals: (usize, usize, usize),
    n: usize,
) -> Result<FockMatrix, FockError> {
    let (p, q, r) = orbitals;
    if p == q || p == r || q == r {
        return Err(FockError::IndexCollision(vec![p, q, r]));
    }
    let s2 = 2f64.sqrt();
    let sin_ts2 = (theta / s2).sin();
    let cos_ts2 = (theta / s2).cos();

    // {sin(θ/√2) + (sinθ − √2 sin(θ/√2))/√2 · (h+n)_{Q↓R↑}(h+n)_{Q↑R↓}}
    //   × (A_{P↑P↓}^{Q↑R↓} − A_{P↑P↓}^{Q↓R↑})
    let exc = a_double(up(p), dn(p), up(q), dn(r)).sub(&a_double(up(p), dn(p), dn(q), up(r)));
    let gate = hn_plus(&[dn(q), up(r)]).mul(&hn_plus(&[up(q), dn(r)]));
    let term1 = exc
        .scale(sin_ts2)
        .add(&gate.mul(&exc).scale((theta.sin() - s2 * sin_ts2) / s2));

    // sin²(θ/2) (h+n)_{P↑P↓} (F + F†) with F the spin-flip monomial of
    // A_{Q↑R↓}^{Q↓R↑}.
    let flip = monomial(up(q), dn(r), dn(q), up(r));
    let flip_sym = flip.add(&flip.adjoint());
    let term2 = hn_plus(&[up(p), dn(p)])
        .mul(&flip_sym)
        .scale((theta / 2.0).sin().powi(2));

    // [cos(θ/√2) − 1][(h_{Q↑R↓} + h_{Q↓R↑}) n_{P↑P↓} + (n_{Q↑R↓} + n_{Q↓R↑}) h_{P↑P↓}]
    let term3 = hole_string(&[up(q), dn(r)])
        .add(&hole_string(&[dn(q), up(r)]))
        .mul(&num_string(&[up(p), dn(p)]))
        .add(
            &num_string(&[up(q), dn(r)])
                .add(&num_string(&[dn(q), up(r)]))
                .mul(&hole_string(&[up(p), dn(p)])),
        )
        .scale(cos_ts2 - 1.0);

    // [cosθ − 2cos(θ/√2) + 1](h_{P↑P↓} n_{Q↑Q↓R↑R↓} + h_{Q↑Q↓R↑R↓} n_{P↑P↓})
    let c4 = theta.cos() - 2.0 * cos_ts2 + 1.0;
    let all_qr = [up(q), dn(q), up(r), dn(r)];
    let term4 = hole_string(&[up(p), dn(p)])
        .mul(&num_string(&all_qr))
        .add(&hole_string(&all_qr).mul(&num_string(&[up(p), dn(p)])))
        .scale(c4);

    // ½[cosθ − 2cos(θ/√2) + 1](h_{P↑P↓Q↑R↓} n_{Q↓R↑} + h_{P↑P↓Q↓R↑} n_{Q↑R↓}
    //   + h_{Q↓R↑} n_{P↑P↓Q↑R↓} + h_{Q↑R↓} n_{P↑P↓Q↓R↑})
    let term5 = hole_string(&[up(p), dn(p), up(q), dn(r)])
        .mul(&num_string(&[dn(q), up(r)]))
        .add(&hole_string(&[up(p), dn(p), dn(q), up(r)]).mul(&num_string(&[up(q), dn(r)])))
        .add(&hole_string(&[dn(q), up(r)]).mul(&num_string(&[up(p), dn(p), up(q), dn(r)])))
        .add(&hole_string(&[up(q), dn(r)]).mul(&num_string(&[up(p), dn(p), dn(q), up(r)])))
        .scale(0.5 * c4);

    let total = OperatorExpr::identity()
        .add(&term1)
        .add(&term2)
        .add(&term3)
        .add(&term4)
        .add(&term5);
    to_matrix(&total, n)
}

#[derive(Debug, Clone)]
pub struct SymmetryOperators {
    pub n: FockMatrix,
    pub sz: FockMatrix,
    pub s2: FockMatrix,
}

/// N, Sz, and S² = S₋S₊ + Sz(Sz+1) as operator expressions on `register`
/// spinorbitals (alternating ↑/↓, so `register` must be even).
pub fn symmetry_exprs(register: usize) -> (OperatorExpr, OperatorExpr, OperatorExpr) {
    assert!(register % 2 == 0, "register must pair up/down spinorbitals");
    let spatial = register / 2;
    let mut n_expr = OperatorExpr::zero();
    let mut sz_expr = OperatorExpr::zero();
    let mut s_plus = OperatorExpr::zero();
    for p in 0..spatial {
        n_expr = n_expr.add(&n_op(up(p))).add(&n_op(dn(p)));
        sz_expr = sz_expr.add(&n_op(up(p)).sub(&n_op(dn(p))).scale(0.5));
        // S₊ = Σ_P a†_{P↑} a_{P↓}
        s_plus = s_plus.add(&normal_order(
            &[(up(p), OpKind::Create), (dn(p), OpKind::Annihilate)],
            1.0,
        ));
    }
    let s_minus = s_plus.adjoint();
    let s2_expr = s_minus
        .mul(&s_plus)
        .add(&sz_expr.mul(&sz_expr))
        .add(&sz_expr);
    (n_expr, sz_expr, s2_expr)
}

impl SymmetryOperators {
    /// Dense matrices of [`symmetry_exprs`] on `register` spinorbitals.
    pub fn build(register: usize) -> Result<SymmetryOperators, FockError> {
        let (n_expr, sz_expr, s2_expr) = symmetry_exprs(register);
        Ok(SymmetryOperators {
            n: to_matrix(&n_expr, register)?,
            sz: to_matrix(&sz_expr, register)?,
            s2: to_matrix(&s2_expr, register)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SymmetryExpectations {
    pub n: f64,
    pub sz: f64,
    pub s2: f64,
    pub sigma_n: f64,
    pub sigma_sz: f64,
    pub sigma_s2: f64,
}

fn expect_and_sigma(a: &FockMatrix, v: &nalgebra::DVector<f64>) -> (f64, f64) {
    let av = &a.data * v;
    let mean = v.dot(&av);
    let second = av.dot(&av);
    ((mean), (second - mean * mean).max(0.0).sqrt())
}

/// Expectation values (and spreads) of N, Sz, S² in U|reference⟩, with the
/// reference given as an occupation bitstring.
pub fn symmetry_expectations(
    u: &FockMatrix,
    reference: usize,
) -> Result<SymmetryExpectations, FockError> {
    let sym = SymmetryOperators::build(u.register_size)?;
    let mut v = nalgebra::DVector::zeros(u.dim);
    v[reference] = 1.0;
    let state = &u.data * v;
    let (n, sigma_n) = expect_and_sigma(&sym.n, &state);
    let (sz, sigma_sz) = expect_and_sigma(&sym.sz, &state);
    let (s2, sigma_s2) = expect_and_sigma(&sym.s2, &state);
    Ok(SymmetryExpectations { n, sz, s2, sigma_n, sigma_sz, sigma_s2 })
}

/// ‖[a, b]‖_F — used both for commutant checks and contamination witnesses.
pub fn commutator_norm(a: &FockMatrix, b: &FockMatrix) -> Result<f64, FockError> {
    if a.dim != b.dim {
        return Err(FockError::DimensionMismatch(a.dim, b.dim));
    }
    Ok((&a.data * &b.data - &b.data * &a.data).norm())
}
