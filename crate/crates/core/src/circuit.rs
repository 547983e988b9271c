//! Gate-level emission of excitation unitaries.
//!
//! Every double-excitation exponential exp(θ·A·N) is realized in three layers:
//! a CNOT basis change collapsing the two coupled determinants onto a single
//! target qubit, a Gray-code multiplexed-Ry ladder performing the Givens
//! rotation under occupancy controls, and (for the fermionic version) CNOT
//! staircases that accumulate the Jordan–Wigner parity plus CZ conjugations
//! that fold the parity into the rotation angle. Number-operator parts become
//! check CNOTs that pool the allowed occupancy patterns into extra ladder
//! controls; minus-type number parts add a CZ pair that flips the angle with
//! the checked occupancy.
//!
//! The ladder uses the full cyclic Gray sequence of 2^k rungs for k controls.
//! A (2^k − 1)-rung ladder always leaves a conditional flip behind — the XOR
//! of the rung toggles equals the final Gray prefix, which is never zero — and
//! no 3-CNOT basis change can absorb it (exhausted by search over GL(4, F₂)),
//! so the emitted circuits carry one more two-qubit gate per exponential than
//! the tightest published tallies while matching their Ry counts exactly.
//!
//! Everything here is verified against the dense Fock oracle in tests; the
//! statevector simulator below is the verification backend.

use crate::algebra::{GeneratorSpec, OperatorExpr};
use crate::lie::{canonicalize, lie_closure, LieError, DEFAULT_CLOSURE_CAP};
use crate::wn::ParameterTable;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

/// Largest register the statevector simulator will touch (2^14 amplitudes).
pub const MAX_SIM_QUBITS: usize = 14;

/// Parameters below this are dropped from Wei–Norman product circuits.
pub const SKIP_PARAMETER_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum CircuitError {
    #[error("qubit indices must be distinct: {0:?}")]
    DuplicateQubits(Vec<usize>),
    #[error("register has {width} qubits but index {index} was referenced")]
    QubitOutOfRange { index: usize, width: usize },
    #[error("register of {0} qubits exceeds the simulator cap of {MAX_SIM_QUBITS}")]
    WidthOverflow(usize),
    #[error("state has {got} amplitudes, expected {expected}")]
    StateSizeMismatch { got: usize, expected: usize },
    #[error("generator is not an emit-able double excitation: {0}")]
    UnsupportedGenerator(String),
    #[error("θ = {theta} lies outside the tabulated range [{lo}, {hi}]")]
    ThetaOutOfRange { theta: f64, lo: f64, hi: f64 },
    #[error("layout is not a bijection on {0} wires")]
    BadLayout(usize),
    #[error("closure failed while assembling the count report: {0}")]
    Closure(#[from] LieError),
}

/// One hardware-level gate. Multi-controlled rotations never appear here;
/// they are lowered to this set at emission time.
#[derive(Debug, Clone, PartialEq)]
pub enum Gate {
    X(usize),
    H(usize),
    S(usize),
    Sdg(usize),
    Ry { q: usize, angle: f64 },
    Rz { q: usize, angle: f64 },
    Cx { control: usize, target: usize },
    Cz { a: usize, b: usize },
}

impl Gate {
    pub fn qubits(&self) -> Vec<usize> {
        match self {
            Gate::X(q) | Gate::H(q) | Gate::S(q) | Gate::Sdg(q) => vec![*q],
            Gate::Ry { q, .. } | Gate::Rz { q, .. } => vec![*q],
            Gate::Cx { control, target } => vec![*control, *target],
            Gate::Cz { a, b } => vec![*a, *b],
        }
    }

    pub fn is_two_qubit(&self) -> bool {
        matches!(self, Gate::Cx { .. } | Gate::Cz { .. })
    }

    fn kind_name(&self) -> &'static str {
        match self {
            Gate::X(_) => "x",
            Gate::H(_) => "h",
            Gate::S(_) => "s",
            Gate::Sdg(_) => "sdg",
            Gate::Ry { .. } => "ry",
            Gate::Rz { .. } => "rz",
            Gate::Cx { .. } => "cx",
            Gate::Cz { .. } => "cz",
        }
    }

    fn angle(&self) -> Option<f64> {
        match self {
            Gate::Ry { angle, .. } | Gate::Rz { angle, .. } => Some(*angle),
            _ => None,
        }
    }
}

/// Gate totals with CZ counted as CNOT, the convention used throughout.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GateCounts {
    /// Two-qubit gates: CNOT plus CZ.
    pub cnot: usize,
    /// Plain CZ gates (already included in `cnot`).
    pub cz: usize,
    /// All single-qubit gates.
    pub single_qubit: usize,
    /// Ry rotations (included in `single_qubit`).
    pub ry: usize,
}

/// Maps flat spinorbital indices to qubit lines; identity by default, which
/// matches the alternating ↑/↓ register the generators are written in.
#[derive(Debug, Clone)]
pub struct QubitLayout {
    pub wires: Vec<usize>,
}

impl QubitLayout {
    pub fn identity(width: usize) -> Self {
        QubitLayout { wires: (0..width).collect() }
    }

    pub fn width(&self) -> usize {
        self.wires.len()
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        let n = self.wires.len();
        let mut seen = vec![false; n];
        for &w in &self.wires {
            if w >= n || seen[w] {
                return Err(CircuitError::BadLayout(n));
            }
            seen[w] = true;
        }
        Ok(())
    }

    fn wire(&self, flat: usize) -> Result<usize, CircuitError> {
        self.wires
            .get(flat)
            .copied()
            .ok_or(CircuitError::QubitOutOfRange { index: flat, width: self.wires.len() })
    }
}

/// An ordered gate list on a fixed-width register.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Circuit {
    pub width: usize,
    pub gates: Vec<Gate>,
}

impl Circuit {
    pub fn new(width: usize) -> Self {
        Circuit { width, gates: Vec::new() }
    }

    pub fn push(&mut self, g: Gate) {
        debug_assert!(g.qubits().iter().all(|&q| q < self.width));
        self.gates.push(g);
    }

    pub fn extend(&mut self, other: &Circuit) {
        assert_eq!(self.width, other.width, "circuit widths differ");
        self.gates.extend(other.gates.iter().cloned());
    }

    pub fn counts(&self) -> GateCounts {
        let mut c = GateCounts::default();
        for g in &self.gates {
            match g {
                Gate::Cx { .. } => c.cnot += 1,
                Gate::Cz { .. } => {
                    c.cnot += 1;
                    c.cz += 1;
                }
                Gate::Ry { .. } => {
                    c.single_qubit += 1;
                    c.ry += 1;
                }
                _ => c.single_qubit += 1,
            }
        }
        c
    }

    /// Dense unitary of the circuit, column by column through the simulator.
    pub fn unitary(&self) -> Result<DMatrix<Complex64>, CircuitError> {
        if self.width > MAX_SIM_QUBITS {
            return Err(CircuitError::WidthOverflow(self.width));
        }
        let dim = 1usize << self.width;
        let mut u = DMatrix::<Complex64>::zeros(dim, dim);
        let mut col = vec![Complex64::default(); dim];
        for b in 0..dim {
            col.iter_mut().for_each(|z| *z = Complex64::default());
            col[b] = Complex64::new(1.0, 0.0);
            simulate(self, &mut col)?;
            for (r, z) in col.iter().enumerate() {
                u[(r, b)] = *z;
            }
        }
        Ok(u)
    }

    /// Peephole pass: cancels adjacent inverse pairs (allowing slides across
    /// gates on disjoint qubits) and merges consecutive Ry/Rz on one wire.
    /// Counts after this pass are the post-cancellation estimates.
    pub fn cancelled(&self) -> Circuit {
        let mut gates: Vec<Option<Gate>> = self.gates.iter().cloned().map(Some).collect();
        loop {
            let mut changed = false;
            'outer: for i in 0..gates.len() {
                let Some(gi) = gates[i].clone() else { continue };
                let qi = gi.qubits();
                for j in i + 1..gates.len() {
                    let Some(gj) = gates[j].clone() else { continue };
                    let qj = gj.qubits();
                    if qi.iter().all(|q| !qj.contains(q)) {
                        continue; // disjoint: slide past
                    }
                    match (&gi, &gj) {
                        (a, b) if a == b && is_involution(a) => {
                            gates[i] = None;
                            gates[j] = None;
                            changed = true;
                            continue 'outer;
                        }
                        (Gate::S(p), Gate::Sdg(q)) | (Gate::Sdg(p), Gate::S(q)) if p == q => {
                            gates[i] = None;
                            gates[j] = None;
                            changed = true;
                            continue 'outer;
                        }
                        (Gate::Ry { q: p, angle: a }, Gate::Ry { q, angle: b }) if p == q => {
                            let sum = a + b;
                            gates[i] = None;
                            gates[j] = if sum.abs() < 1e-12 {
                                None
                            } else {
                                Some(Gate::Ry { q: *q, angle: sum })
                            };
                            changed = true;
                            continue 'outer;
                        }
                        (Gate::Rz { q: p, angle: a }, Gate::Rz { q, angle: b }) if p == q => {
                            let sum = a + b;
                            gates[i] = None;
                            gates[j] = if sum.abs() < 1e-12 {
                                None
                            } else {
                                Some(Gate::Rz { q: *q, angle: sum })
                            };
                            changed = true;
                            continue 'outer;
                        }
                        _ => break,
                    }
                }
            }
            if !changed {
                break;
            }
        }
        Circuit { width: self.width, gates: gates.into_iter().flatten().collect() }
    }

    /// JSON intermediate representation: {width, gates:[{kind, qubits, angle?}]}.
    pub fn to_json_ir(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct GateIr {
            kind: &'static str,
            qubits: Vec<usize>,
            #[serde(skip_serializing_if = "Option::is_none")]
            angle: Option<f64>,
        }
        let gates: Vec<GateIr> = self
            .gates
            .iter()
            .map(|g| GateIr { kind: g.kind_name(), qubits: g.qubits(), angle: g.angle() })
            .collect();
        serde_json::json!({ "width": self.width, "gates": gates })
    }

    /// OpenQASM 2.0 text using the x/h/s/sdg/cx/cz/ry/rz gate set.
    pub fn to_qasm(&self) -> String {
        let mut out = String::from("OPENQASM 2.0;\ninclude \"qelib1.inc\";\n");
        out.push_str(&format!("qreg q[{}];\n", self.width));
        for g in &self.gates {
            let line = match g {
                Gate::X(q) => format!("x q[{q}];"),
                Gate::H(q) => format!("h q[{q}];"),
                Gate::S(q) => format!("s q[{q}];"),
                Gate::Sdg(q) => format!("sdg q[{q}];"),
                Gate::Ry { q, angle } => format!("ry({angle:.17e}) q[{q}];"),
                Gate::Rz { q, angle } => format!("rz({angle:.17e}) q[{q}];"),
                Gate::Cx { control, target } => format!("cx q[{control}],q[{target}];"),
                Gate::Cz { a, b } => format!("cz q[{a}],q[{b}];"),
            };
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

fn is_involution(g: &Gate) -> bool {
    matches!(g, Gate::X(_) | Gate::H(_) | Gate::Cx { .. } | Gate::Cz { .. })
}

/// Applies the circuit to a statevector in place (bit q of the amplitude
/// index is qubit q, matching the Fock-matrix basis order).
pub fn simulate(c: &Circuit, state: &mut [Complex64]) -> Result<(), CircuitError> {
    if c.width > MAX_SIM_QUBITS {
        return Err(CircuitError::WidthOverflow(c.width));
    }
    let dim = 1usize << c.width;
    if state.len() != dim {
        return Err(CircuitError::StateSizeMismatch { got: state.len(), expected: dim });
    }
    for g in &c.gates {
        match *g {
            Gate::X(q) => {
                let bit = 1 << q;
                for i in 0..dim {
                    if i & bit == 0 {
                        state.swap(i, i | bit);
                    }
                }
            }
            Gate::H(q) => {
                let bit = 1 << q;
                let f = std::f64::consts::FRAC_1_SQRT_2;
                for i in 0..dim {
                    if i & bit == 0 {
                        let (a, b) = (state[i], state[i | bit]);
                        state[i] = (a + b) * f;
                        state[i | bit] = (a - b) * f;
                    }
                }
            }
            Gate::S(q) => {
                let bit = 1 << q;
                let ph = Complex64::new(0.0, 1.0);
                for (i, z) in state.iter_mut().enumerate() {
                    if i & bit != 0 {
                        *z *= ph;
                    }
                }
            }
            Gate::Sdg(q) => {
                let bit = 1 << q;
                let ph = Complex64::new(0.0, -1.0);
                for (i, z) in state.iter_mut().enumerate() {
                    if i & bit != 0 {
                        *z *= ph;
                    }
                }
            }
            Gate::Ry { q, angle } => {
                let bit = 1 << q;
                let (s, co) = (angle / 2.0).sin_cos();
                for i in 0..dim {
                    if i & bit == 0 {
                        let (a, b) = (state[i], state[i | bit]);
                        state[i] = a * co - b * s;
                        state[i | bit] = a * s + b * co;
                    }
                }
            }
            Gate::Rz { q, angle } => {
                let bit = 1 << q;
                let lo = Complex64::from_polar(1.0, -angle / 2.0);
                let hi = Complex64::from_polar(1.0, angle / 2.0);
                for (i, z) in state.iter_mut().enumerate() {
                    *z *= if i & bit == 0 { lo } else { hi };
                }
            }
            Gate::Cx { control, target } => {
                let (cb, tb) = (1 << control, 1 << target);
                for i in 0..dim {
                    if i & cb != 0 && i & tb == 0 {
                        state.swap(i, i | tb);
                    }
                }
            }
            Gate::Cz { a, b } => {
                let (ab, bb) = (1 << a, 1 << b);
                for (i, z) in state.iter_mut().enumerate() {
                    if i & ab != 0 && i & bb != 0 {
                        *z = -*z;
                    }
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Bitstring-level operator evaluation (no 2^n storage)
// ---------------------------------------------------------------------------

/// ⟨to|x|from⟩ for occupation bitstrings, with full Jordan–Wigner signs.
fn matrix_element(x: &OperatorExpr, from: u64, to: u64) -> f64 {
    let mut total = 0.0;
    for (string, &coeff) in &x.terms {
        if let Some((b2, sign)) = string.apply_to_bits(from) {
            if b2 == to {
                total += sign * coeff;
            }
        }
    }
    total
}

// ---------------------------------------------------------------------------
// Emission plans
// ---------------------------------------------------------------------------

/// Everything needed to lay out one excitation exponential; built once per
/// generator, reusable across angles.
#[derive(Debug, Clone)]
struct FebPlan {
    /// Sorted participating spinorbitals; the rotation target is the last.
    target: usize,
    /// Basis-change CNOTs target → context, emitted first and undone last.
    map_contexts: Vec<(usize, bool)>,
    /// Occupancy-check CNOTs (pivot → partner) with resulting control polarity.
    checks: Vec<(usize, usize, bool)>,
    /// Jordan–Wigner string qubits chained by the parity staircase.
    stair: Vec<usize>,
    /// Overall rotation sign (Jordan–Wigner base sign × number-part sign).
    sigma: f64,
    /// Present for minus-type number parts: the qubit whose occupancy flips
    /// the rotation angle, realized as a CZ conjugation pair.
    sign_qubit: Option<usize>,
}

impl FebPlan {
    fn build(spec: &GeneratorSpec) -> Result<FebPlan, CircuitError> {
        let bad = |msg: String| CircuitError::UnsupportedGenerator(msg);

        // The excitation must be a single skeleton: forward string minus its
        // adjoint, two creations and two annihilations.
        let exc = &spec.excitation;
        if exc.terms.len() != 2 {
            return Err(bad(format!(
                "{}: excitation has {} strings, expected a double and its adjoint",
                spec.label,
                exc.terms.len()
            )));
        }
        let mut participants: Vec<usize> = exc
            .terms
            .keys()
            .flat_map(|s| s.creates.iter().chain(&s.annihs))
            .copied()
            .collect();
        participants.sort_unstable();
        participants.dedup();
        if participants.len() != 4 {
            return Err(bad(format!(
                "{}: excitation touches {} spinorbitals, expected 4",
                spec.label,
                participants.len()
            )));
        }
        // Orient so the rotation target starts on the empty side: take the
        // string that creates on the highest participant. The branch-sign
        // matrix elements below absorb the orientation and coefficient signs.
        let target = *participants.last().unwrap();
        let (fwd, &fwd_coeff) = exc
            .terms
            .iter()
            .find(|(s, _)| s.creates.contains(&target))
            .ok_or_else(|| bad(format!("{}: no string creating on {target}", spec.label)))?;
        if fwd.creates.len() != 2 || fwd.annihs.len() != 2 || (fwd_coeff.abs() - 1.0).abs() > 1e-9
        {
            return Err(bad(format!(
                "{}: excitation is not a unit-normalized double",
                spec.label
            )));
        }

        // Occupation patterns of the coupled pair of determinants.
        let bits_from: u64 = fwd.annihs.iter().map(|&p| 1u64 << p).sum();
        let bits_to: u64 = fwd.creates.iter().map(|&p| 1u64 << p).sum();

        // Number part: a diagonal with exactly one allowed occupancy pattern
        // and its bitwise complement, carrying eigenvalues ±1.
        let mut checked: Vec<usize> = spec
            .number_part
            .terms
            .keys()
            .flat_map(|s| s.creates.iter().copied())
            .collect();
        checked.sort_unstable();
        checked.dedup();
        if checked.iter().any(|c| participants.contains(c)) {
            return Err(bad(format!(
                "{}: number part touches the excitation indices",
                spec.label
            )));
        }
        for s in spec.number_part.terms.keys() {
            if !s.is_diagonal() {
                return Err(bad(format!("{}: number part is not diagonal", spec.label)));
            }
        }
        let mut branches: Vec<(u64, f64)> = Vec::new();
        for mask in 0..(1u64 << checked.len()) {
            let bits: u64 = checked
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &q)| 1u64 << q)
                .sum();
            let lambda = matrix_element(&spec.number_part, bits, bits);
            if lambda.abs() > 1e-12 {
                if (lambda.abs() - 1.0).abs() > 1e-9 {
                    return Err(bad(format!(
                        "{}: number-part eigenvalue {lambda} is not ±1",
                        spec.label
                    )));
                }
                branches.push((mask, lambda));
            }
        }
        let (pattern, c_bits): (u64, Vec<u64>) = match branches.len() {
            1 if checked.is_empty() => (0, vec![]),
            2 => {
                let full = (1u64 << checked.len()) - 1;
                if branches[0].0 ^ branches[1].0 != full {
                    return Err(bad(format!(
                        "{}: allowed occupancy patterns are not complementary",
                        spec.label
                    )));
                }
                (branches[0].0, vec![branches[0].0, branches[1].0])
            }
            n => {
                return Err(bad(format!(
                    "{}: number part allows {n} occupancy patterns, expected 2",
                    spec.label
                )))
            }
        };

        // Jordan–Wigner strings: a qubit carries a Z exactly when an odd
        // number of the four excitation indices lie above it, i.e. strictly
        // inside (s1,s2) or (s3,s4) of the sorted participants.
        let [s1, s2, s3, s4] = [participants[0], participants[1], participants[2], participants[3]];
        let in_string = |q: usize| (q > s1 && q < s2) || (q > s3 && q < s4);
        let stair: Vec<usize> = (s1..=s4).filter(|&q| in_string(q) && !checked.contains(&q)).collect();

        // Branch signs: full matrix elements on reference determinants with
        // the checked qubits set to each allowed pattern and every string
        // qubit empty. These absorb the base Jordan–Wigner sign, the
        // number-part eigenvalue, and the parity of checked string qubits.
        let expr = spec.expr();
        let pattern_bits = |mask: u64| -> u64 {
            checked
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &q)| 1u64 << q)
                .sum()
        };
        let branch_sign = |mask: u64| -> Result<f64, CircuitError> {
            let extra = pattern_bits(mask);
            let s = matrix_element(&expr, bits_from | extra, bits_to | extra);
            if (s.abs() - 1.0).abs() > 1e-9 {
                return Err(bad(format!(
                    "{}: coupling amplitude {s} is not ±1",
                    spec.label
                )));
            }
            Ok(s)
        };

        let (sigma, sign_qubit) = if checked.is_empty() {
            (branch_sign(0)?, None)
        } else {
            let s_p = branch_sign(c_bits[0])?;
            let s_q = branch_sign(c_bits[1])?;
            if (s_p - s_q).abs() < 1e-9 {
                (s_p, None)
            } else {
                // Sign flips with the pivot occupancy; σ is the value on the
                // branch where the pivot qubit is empty.
                let pivot = checked[0];
                let pivot_empty_first = pattern & 1 == 0;
                let sigma = if pivot_empty_first { s_p } else { s_q };
                (sigma, Some(pivot))
            }
        };

        // Ladder controls: the three mapped contexts carry the from-side
        // occupations; each non-pivot checked qubit carries its XOR against
        // the pivot, which the check CNOT makes branch-independent.
        let map_contexts: Vec<(usize, bool)> = participants[..3]
            .iter()
            .map(|&d| (d, bits_from & (1 << d) != 0))
            .collect();
        let checks: Vec<(usize, usize, bool)> = if checked.len() >= 2 {
            let pivot = checked[0];
            let pol = |i: usize| (pattern >> i) & 1 != (pattern & 1);
            checked[1..]
                .iter()
                .enumerate()
                .map(|(i, &c)| (pivot, c, pol(i + 1)))
                .collect()
        } else {
            Vec::new()
        };

        Ok(FebPlan {
            target,
            map_contexts,
            checks,
            stair,
            sigma,
            sign_qubit,
        })
    }

    /// Number of ladder controls (contexts + pooled checks).
    fn k(&self) -> usize {
        self.map_contexts.len() + self.checks.len()
    }

    fn ry_count(&self) -> usize {
        1 << self.k()
    }

    fn staircase_cnots(&self) -> usize {
        if self.stair.len() > 1 {
            2 * (self.stair.len() - 1)
        } else {
            0
        }
    }

    fn fixed_cnots(&self) -> usize {
        let parity_cz = if self.stair.is_empty() { 0 } else { 2 };
        let sign_cz = if self.sign_qubit.is_some() { 2 } else { 0 };
        2 * self.map_contexts.len() + 2 * self.checks.len() + (1 << self.k()) + parity_cz + sign_cz
    }

    fn emit(
        &self,
        theta: f64,
        layout: &QubitLayout,
        with_parity: bool,
    ) -> Result<Circuit, CircuitError> {
        layout.validate()?;
        let mut c = Circuit::new(layout.width());
        if theta == 0.0 {
            return Ok(c);
        }
        let w = |q: usize| layout.wire(q);
        let t = w(self.target)?;

        let mut prologue: Vec<Gate> = Vec::new();
        for &(d, _) in &self.map_contexts {
            prologue.push(Gate::Cx { control: t, target: w(d)? });
        }
        for &(pivot, partner, _) in &self.checks {
            prologue.push(Gate::Cx { control: w(pivot)?, target: w(partner)? });
        }
        if with_parity {
            for pair in self.stair.windows(2) {
                prologue.push(Gate::Cx { control: w(pair[0])?, target: w(pair[1])? });
            }
            if let Some(&last) = self.stair.last() {
                prologue.push(Gate::Cz { a: w(last)?, b: t });
            }
        }
        if let Some(sq) = self.sign_qubit {
            prologue.push(Gate::Cz { a: w(sq)?, b: t });
        }

        for g in &prologue {
            c.push(g.clone());
        }

        // Gray-code multiplexed Ry: rotation by 2σθ exactly on the control
        // pattern, identity elsewhere. Slot s carries the Walsh coefficient
        // for character gray(s); rung s toggles control trailing_zeros(s),
        // and the closing rung (top control) makes every rung count even so
        // no conditional flip is left behind.
        let mut controls: Vec<(usize, bool)> = Vec::with_capacity(self.k());
        for &(d, v) in &self.map_contexts {
            controls.push((w(d)?, v));
        }
        for &(_, partner, v) in &self.checks {
            controls.push((w(partner)?, v));
        }
        let k = controls.len();
        let slots = 1usize << k;
        let polmask: usize = controls
            .iter()
            .enumerate()
            .filter(|(_, &(_, v))| v)
            .map(|(i, _)| 1usize << i)
            .sum();
        let base = 2.0 * self.sigma * theta / slots as f64;
        let slot_angle = |s: usize| {
            let gray = s ^ (s >> 1);
            if (gray & polmask).count_ones() % 2 == 0 {
                base
            } else {
                -base
            }
        };
        c.push(Gate::Ry { q: t, angle: slot_angle(0) });
        for s in 1..=slots {
            let ctrl = if s < slots { controls[s.trailing_zeros() as usize].0 } else { controls[k - 1].0 };
            c.push(Gate::Cx { control: ctrl, target: t });
            if s < slots {
                c.push(Gate::Ry { q: t, angle: slot_angle(s) });
            }
        }

        for g in prologue.iter().rev() {
            c.push(g.clone());
        }
        Ok(c)
    }
}

/// Fermionic-excitation circuit for one algebra element: the qubit Givens
/// core wrapped in parity staircases and CZ conjugations so the simulated
/// matrix equals exp(θ·A·N) with full Jordan–Wigner signs.
pub fn emit_feb(
    spec: &GeneratorSpec,
    theta: f64,
    layout: &QubitLayout,
) -> Result<Circuit, CircuitError> {
    FebPlan::build(spec)?.emit(theta, layout, true)
}

/// Qubit-excitation circuit: the Givens rotation of exp(θQ) on the two
/// coupled determinants with parity strings stripped, identity elsewhere.
/// `orbs` lists the two annihilated then the two created spinorbitals.
pub fn emit_qeb_double(
    orbs: [usize; 4],
    theta: f64,
    width: usize,
) -> Result<Circuit, CircuitError> {
    let mut sorted = orbs.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != 4 {
        return Err(CircuitError::DuplicateQubits(orbs.to_vec()));
    }
    if sorted[3] >= width {
        return Err(CircuitError::QubitOutOfRange { index: sorted[3], width });
    }
    let target = sorted[3];
    let bits_from: u64 = (1u64 << orbs[0]) | (1u64 << orbs[1]);
    // The qubit excitation couples |from⟩ → |to⟩ with amplitude +1 (no
    // strings); orient the plan so the target starts on the empty side.
    let from_has_target = bits_from & (1 << target) != 0;
    let eff_sigma = if from_has_target { -1.0 } else { 1.0 };
    let occupied = if from_has_target {
        [orbs[2], orbs[3]]
    } else {
        [orbs[0], orbs[1]]
    };
    let occ_bits: u64 = (1u64 << occupied[0]) | (1u64 << occupied[1]);
    let plan = FebPlan {
        target,
        map_contexts: sorted[..3]
            .iter()
            .map(|&d| (d, occ_bits & (1 << d) != 0))
            .collect(),
        checks: Vec::new(),
        stair: Vec::new(),
        sigma: eff_sigma,
        sign_qubit: None,
    };
    plan.emit(theta, &QubitLayout::identity(width), false)
}

/// Wei–Norman product circuit: one FEB exponential per basis element with
/// parameters linearly interpolated from the table at `theta`; elements with
/// |α| below [`SKIP_PARAMETER_TOL`] are skipped. `elements` must be listed in
/// the same position order as the table columns (the system ordering).
pub fn emit_wn_circuit(
    table: &ParameterTable,
    elements: &[GeneratorSpec],
    theta: f64,
    layout: &QubitLayout,
) -> Result<Circuit, CircuitError> {
    let (lo, hi) = (
        *table.thetas.first().expect("empty parameter table"),
        *table.thetas.last().expect("empty parameter table"),
    );
    if theta < lo - 1e-12 || theta > hi + 1e-12 {
        return Err(CircuitError::ThetaOutOfRange { theta, lo, hi });
    }
    let idx = table
        .thetas
        .partition_point(|&t| t < theta - 1e-12)
        .min(table.thetas.len() - 1);
    let alphas = if (table.thetas[idx] - theta).abs() < 1e-12 || idx == 0 {
        table.alphas[idx].clone()
    } else {
        let (t0, t1) = (table.thetas[idx - 1], table.thetas[idx]);
        let w = (theta - t0) / (t1 - t0);
        &table.alphas[idx - 1] * (1.0 - w) + &table.alphas[idx] * w
    };
    assert_eq!(alphas.len(), elements.len(), "table columns must match basis size");
    // The factorization multiplies exponentials left to right in element
    // order; gates apply to the state in sequence, so emit the rightmost
    // (first-acting) factor first.
    let mut c = Circuit::new(layout.width());
    for (e, &alpha) in elements.iter().zip(alphas.iter()).rev() {
        if alpha.abs() < SKIP_PARAMETER_TOL {
            continue;
        }
        c.extend(&emit_feb(e, alpha, layout)?);
    }
    Ok(c)
}

/// Number of exponentials `emit_wn_circuit` would retain at `theta`.
pub fn wn_exponential_count(table: &ParameterTable, theta: f64) -> usize {
    let idx = table
        .thetas
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - theta).abs().total_cmp(&(b.1 - theta).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    table.alphas[idx].iter().filter(|a| a.abs() >= SKIP_PARAMETER_TOL).count()
}

// ---------------------------------------------------------------------------
// Count reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ElementCounts {
    pub label: String,
    /// CNOTs inside the two parity staircases (2·(string qubits − 1)).
    pub staircase_cnot: usize,
    /// Index-independent CNOTs: basis change, checks, ladder rungs, CZs.
    pub fixed_cnot: usize,
    pub ry: usize,
    /// The staircase contribution with the index arithmetic spelled out.
    pub staircase_formula: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CountReport {
    pub elements: Vec<ElementCounts>,
    /// Number of CNOT staircases across the composite (two per exponential
    /// that needs parity accumulation).
    pub staircases: usize,
    pub staircase_cnot_total: usize,
    pub fixed_cnot_total: usize,
    pub cnot_total: usize,
    pub ry_total: usize,
    /// Totals after the adjacent-cancellation pass on the composed circuit.
    pub post_cancel_cnot: usize,
    pub post_cancel_ry: usize,
}

/// Cost synthesis for the full Wei–Norman composite of a generator family:
/// per-element and aggregate gate counts, plus post-cancellation estimates
/// from the peephole pass on the concatenated circuit.
pub fn count_report(
    family: crate::algebra::Family,
    orbs: &[usize],
    layout: &QubitLayout,
) -> Result<CountReport, CircuitError> {
    let seeds = crate::algebra::closure_seeds(family, orbs)
        .map_err(|e| CircuitError::UnsupportedGenerator(e.to_string()))?;
    let closure = lie_closure(&seeds, DEFAULT_CLOSURE_CAP)?;
    let basis = canonicalize(&closure)?;
    let mut elements = Vec::new();
    let mut composed = Circuit::new(layout.width());
    let mut staircases = 0;
    for e in &basis.elements {
        let plan = FebPlan::build(e)?;
        if !plan.stair.is_empty() {
            staircases += 2;
        }
        let m = plan.stair.len();
        elements.push(ElementCounts {
            label: e.label.clone(),
            staircase_cnot: plan.staircase_cnots(),
            fixed_cnot: plan.fixed_cnots(),
            ry: plan.ry_count(),
            staircase_formula: format!("2*({m} string qubits - 1) = {}", plan.staircase_cnots()),
        });
        // A representative nonzero angle; gate counts are angle-independent.
        composed.extend(&plan.emit(0.7, layout, true)?);
    }
    let totals = composed.counts();
    let cancelled = composed.cancelled().counts();
    Ok(CountReport {
        staircases,
        staircase_cnot_total: elements.iter().map(|e| e.staircase_cnot).sum(),
        fixed_cnot_total: elements.iter().map(|e| e.fixed_cnot).sum(),
        cnot_total: totals.cnot,
        ry_total: totals.ry,
        post_cancel_cnot: cancelled.cnot,
        post_cancel_ry: cancelled.ry,
        elements,
    })
}

/// The eleven elementary double-excitation shapes that cover every factor in
/// the Wei–Norman products: a mixed-spin double (rows 1–6) or a spin-flip
/// double (rows 7–11), dressed with the possible particle–hole number parts.
/// `spatial` gives the four spatial orbitals (P, Q, R, S).
pub fn catalog_generator(row: usize, spatial: [usize; 4]) -> Result<GeneratorSpec, CircuitError> {
    use crate::algebra::{a_double, h_op, n_op};
    let mut sorted = spatial.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != 4 {
        return Err(CircuitError::DuplicateQubits(spatial.to_vec()));
    }
    let [p, q, r, s] = spatial;
    let (up, dn) = (|o: usize| 2 * o, |o: usize| 2 * o + 1);
    let h = |qubits: &[usize]| -> OperatorExpr {
        qubits.iter().fold(OperatorExpr::identity(), |acc, &x| acc.mul(&h_op(x)))
    };
    let n = |qubits: &[usize]| -> OperatorExpr {
        qubits.iter().fold(OperatorExpr::identity(), |acc, &x| acc.mul(&n_op(x)))
    };
    // Mixed-spin double P↑Q↓ → R↑S↓ and spin-flip doubles.
    let mixed = a_double(up(p), dn(q), up(r), dn(s));
    let flip_pq = a_double(up(p), dn(q), dn(p), up(q));
    let flip_qr = a_double(up(q), dn(r), dn(q), up(r));
    let (excitation, number_part) = match row {
        1 => (mixed, OperatorExpr::identity()),
        2 => (mixed, h(&[dn(p), up(q)]).add(&n(&[dn(p), up(q)]))),
        3 => (mixed, n(&[up(q)]).mul(&h(&[up(s)])).add(&h(&[up(q)]).mul(&n(&[up(s)])))),
        4 => (
            mixed,
            h(&[dn(p), up(q)]).mul(&n(&[up(s)])).add(&n(&[dn(p), up(q)]).mul(&h(&[up(s)]))),
        ),
        5 => (
            mixed,
            h(&[dn(p), up(q), dn(r), up(s)]).add(&n(&[dn(p), up(q), dn(r), up(s)])),
        ),
        6 => (
            mixed,
            h(&[dn(p), up(q)])
                .mul(&n(&[dn(r), up(s)]))
                .add(&n(&[dn(p), up(q)]).mul(&h(&[dn(r), up(s)]))),
        ),
        7 => (flip_pq, h(&[up(r), dn(s)]).sub(&n(&[up(r), dn(s)]))),
        8 => (
            flip_qr,
            h(&[up(p)]).mul(&n(&[up(s)])).sub(&n(&[up(p)]).mul(&h(&[up(s)]))),
        ),
        9 => (
            flip_pq,
            h(&[up(r), dn(s)]).mul(&n(&[up(s)])).sub(&n(&[up(r), dn(s)]).mul(&h(&[up(s)]))),
        ),
        10 => (
            flip_pq,
            h(&[up(r), dn(r), up(s), dn(s)]).sub(&n(&[up(r), dn(r), up(s), dn(s)])),
        ),
        11 => (
            flip_pq,
            h(&[up(r), dn(s)])
                .mul(&n(&[dn(r), up(s)]))
                .sub(&n(&[up(r), dn(s)]).mul(&h(&[dn(r), up(s)]))),
        ),
        _ => {
            return Err(CircuitError::UnsupportedGenerator(format!(
                "catalog row {row} (valid rows are 1..=11)"
            )))
        }
    };
    Ok(GeneratorSpec {
        excitation,
        number_part,
        label: format!("row{row}({p},{q},{r},{s})"),
    })
}

/// Planned gate counts for a single generator without emitting gates.
pub fn feb_counts(spec: &GeneratorSpec) -> Result<(usize, usize, usize), CircuitError> {
    let plan = FebPlan::build(spec)?;
    Ok((plan.staircase_cnots(), plan.fixed_cnots(), plan.ry_count()))
}
