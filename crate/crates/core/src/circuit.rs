//! Circuits of nearest-neighbour gates, each followed by one stochastic
//! Pauli channel, and their tensor-network form.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, PI};
use std::fmt;

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Index, Label, Tensor, TensorNetwork};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    H,
    X,
    Y,
    Z,
    T,
    Rx,
    CX,
    CY,
    CZ,
    CH,
    CRx,
}

impl GateKind {
    pub const SINGLE: [GateKind; 6] = [
        GateKind::H,
        GateKind::X,
        GateKind::Y,
        GateKind::Z,
        GateKind::T,
        GateKind::Rx,
    ];
    pub const CONTROLLED: [GateKind; 5] = [
        GateKind::CX,
        GateKind::CY,
        GateKind::CZ,
        GateKind::CH,
        GateKind::CRx,
    ];

    pub fn arity(self) -> usize {
        if Self::SINGLE.contains(&self) {
            1
        } else {
            2
        }
    }

    pub fn takes_angle(self) -> bool {
        matches!(self, GateKind::Rx | GateKind::CRx)
    }

    /// The single-qubit operation applied by this gate (to the target, for
    /// controlled kinds).
    fn base(self, angle: f64) -> [Complex64; 4] {
        let s = Complex64::new(FRAC_1_SQRT_2, 0.0);
        match self {
            GateKind::H | GateKind::CH => [s, s, s, -s],
            GateKind::X | GateKind::CX => Pauli::X.matrix(),
            GateKind::Y | GateKind::CY => Pauli::Y.matrix(),
            GateKind::Z | GateKind::CZ => Pauli::Z.matrix(),
            GateKind::T => [ONE, ZERO, ZERO, Complex64::from_polar(1.0, FRAC_PI_4)],
            GateKind::Rx | GateKind::CRx => {
                let c = Complex64::new((angle / 2.0).cos(), 0.0);
                let s = -I * (angle / 2.0).sin();
                [c, s, s, c]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn matrix(self) -> [Complex64; 4] {
        match self {
            Pauli::I => [ONE, ZERO, ZERO, ONE],
            Pauli::X => [ZERO, ONE, ONE, ZERO],
            Pauli::Y => [ZERO, -I, I, ZERO],
            Pauli::Z => [ONE, ZERO, ZERO, -ONE],
        }
    }
}

/// Kronecker product of two 2x2 row-major matrices, `a` on the more
/// significant qubit.
pub(crate) fn kron2(a: &[Complex64; 4], b: &[Complex64; 4]) -> Vec<Complex64> {
    let mut out = vec![ZERO; 16];
    for ra in 0..2 {
        for rb in 0..2 {
            for ca in 0..2 {
                for cb in 0..2 {
                    out[(2 * ra + rb) * 4 + 2 * ca + cb] = a[2 * ra + ca] * b[2 * rb + cb];
                }
            }
        }
    }
    out
}

/// One realized noise outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorOp {
    Identity,
    One(Pauli),
    Two(Pauli, Pauli),
}

impl ErrorOp {
    pub fn is_identity(self) -> bool {
        matches!(
            self,
            ErrorOp::Identity | ErrorOp::One(Pauli::I) | ErrorOp::Two(Pauli::I, Pauli::I)
        )
    }

    /// Qubit count the operator acts on; `None` for the arity-free identity.
    pub fn arity(self) -> Option<usize> {
        match self {
            ErrorOp::Identity => None,
            ErrorOp::One(_) => Some(1),
            ErrorOp::Two(..) => Some(2),
        }
    }

    /// Row-major matrix of dimension `2^arity`.
    pub fn matrix(self, arity: usize) -> Vec<Complex64> {
        match self {
            ErrorOp::Identity if arity == 1 => Pauli::I.matrix().to_vec(),
            ErrorOp::Identity => kron2(&Pauli::I.matrix(), &Pauli::I.matrix()),
            ErrorOp::One(p) => p.matrix().to_vec(),
            ErrorOp::Two(p, q) => kron2(&p.matrix(), &q.matrix()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoiseKind {
    X,
    Y,
    Z,
    #[serde(rename = "depolarizing")]
    Depolarizing,
}

impl NoiseKind {
    pub fn arity(self) -> usize {
        match self {
            NoiseKind::Depolarizing => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseChannel {
    pub kind: NoiseKind,
    pub p: f64,
}

impl NoiseChannel {
    /// Outcome distribution: identity with `1 - p`, the rest share `p`.
    pub fn outcomes(&self) -> Vec<(ErrorOp, f64)> {
        let mut out = vec![(ErrorOp::Identity, 1.0 - self.p)];
        match self.kind {
            NoiseKind::X => out.push((ErrorOp::One(Pauli::X), self.p)),
            NoiseKind::Y => out.push((ErrorOp::One(Pauli::Y), self.p)),
            NoiseKind::Z => out.push((ErrorOp::One(Pauli::Z), self.p)),
            NoiseKind::Depolarizing => {
                for a in Pauli::ALL {
                    for b in Pauli::ALL {
                        if (a, b) != (Pauli::I, Pauli::I) {
                            out.push((ErrorOp::Two(a, b), self.p / 15.0));
                        }
                    }
                }
            }
        }
        out
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ErrorOp {
        // one uniform per channel keeps streams aligned across kinds
        let u: f64 = rng.random();
        if u >= self.p {
            return ErrorOp::Identity;
        }
        match self.kind {
            NoiseKind::X => ErrorOp::One(Pauli::X),
            NoiseKind::Y => ErrorOp::One(Pauli::Y),
            NoiseKind::Z => ErrorOp::One(Pauli::Z),
            NoiseKind::Depolarizing => {
                let k = ((u / self.p * 15.0) as usize).min(14) + 1;
                ErrorOp::Two(Pauli::ALL[k / 4], Pauli::ALL[k % 4])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub kind: GateKind,
    pub targets: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle: Option<f64>,
    pub noise: NoiseChannel,
}

impl Gate {
    pub fn single(kind: GateKind, q: usize, noise: NoiseChannel) -> Self {
        Self {
            kind,
            targets: vec![q],
            angle: kind.takes_angle().then_some(0.0),
            noise,
        }
    }

    pub fn controlled(kind: GateKind, control: usize, target: usize, noise: NoiseChannel) -> Self {
        Self {
            kind,
            targets: vec![control, target],
            angle: kind.takes_angle().then_some(0.0),
            noise,
        }
    }

    pub fn with_angle(mut self, angle: f64) -> Self {
        self.angle = Some(angle);
        self
    }

    /// Row-major unitary, `2^arity` square. For two-qubit gates the first
    /// target is the control and the more significant bit.
    pub fn unitary(&self) -> Vec<Complex64> {
        let base = self.kind.base(self.angle.unwrap_or(0.0));
        if self.kind.arity() == 1 {
            return base.to_vec();
        }
        let mut u = vec![ZERO; 16];
        u[0] = ONE;
        u[5] = ONE;
        for r in 0..2 {
            for c in 0..2 {
                u[(2 + r) * 4 + 2 + c] = base[2 * r + c];
            }
        }
        u
    }

    fn validate(&self, n: usize, site: usize) -> Result<()> {
        let arity = self.kind.arity();
        let bad = |msg: String| Err(Error::Usage(format!("gate {site}: {msg}")));
        if self.targets.len() != arity {
            return bad(format!("{:?} needs {arity} targets", self.kind));
        }
        if let Some(q) = self.targets.iter().find(|&&q| q >= n) {
            return bad(format!("target {q} out of range for {n} qubits"));
        }
        if arity == 2 && self.targets[0].abs_diff(self.targets[1]) != 1 {
            return bad("two-qubit targets must be nearest neighbours".into());
        }
        if self.kind.takes_angle() != self.angle.is_some() {
            return bad(format!("angle presence does not match {:?}", self.kind));
        }
        if self.noise.kind.arity() != arity {
            return Err(Error::Arity {
                site,
                expected: arity,
                actual: self.noise.kind.arity(),
            });
        }
        if !(0.0..=1.0).contains(&self.noise.p) {
            return bad(format!("noise probability {} outside [0, 1]", self.noise.p));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    pub n: usize,
    pub gates: Vec<Gate>,
}

impl Circuit {
    pub fn new(n: usize, gates: Vec<Gate>) -> Result<Self> {
        let c = Self { n, gates };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Usage("circuit needs at least one qubit".into()));
        }
        for (site, g) in self.gates.iter().enumerate() {
            g.validate(self.n, site)?;
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("circuit serializes")
    }

    pub fn two_qubit_count(&self) -> usize {
        self.gates.iter().filter(|g| g.kind.arity() == 2).count()
    }
}

impl fmt::Display for Circuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "circuit(n={}, g={})", self.n, self.gates.len())
    }
}

/// Unitary of `g` as a tensor with output legs first, then input legs.
/// Legs are labelled `0..arity` (out) and `arity..2*arity` (in).
pub fn gate_matrix(g: &Gate) -> Tensor {
    let a = g.kind.arity() as u32;
    let outs: Vec<Label> = (0..a).map(Label).collect();
    let ins: Vec<Label> = (a..2 * a).map(Label).collect();
    operator_tensor(g.unitary(), &outs, &ins)
}

pub(crate) fn operator_tensor(matrix: Vec<Complex64>, outs: &[Label], ins: &[Label]) -> Tensor {
    let indices = outs.iter().chain(ins).map(|&l| Index::qubit(l)).collect();
    Tensor::new(indices, matrix).expect("operator shape")
}

/// Random circuit with `round(g * two_qubit_fraction)` nearest-neighbour
/// controlled gates at random positions. Single-qubit gates get a uniformly
/// chosen Pauli channel, two-qubit gates a depolarizing channel; every
/// probability is uniform on `p_range`.
pub fn random_circuit<R: Rng + ?Sized>(
    n: usize,
    g: usize,
    two_qubit_fraction: f64,
    p_range: (f64, f64),
    rng: &mut R,
) -> Result<Circuit> {
    if n < 2 || g == 0 || !(0.0..=1.0).contains(&two_qubit_fraction) {
        return Err(Error::Usage(format!(
            "random circuit needs n >= 2, g >= 1 and a fraction in [0, 1] (got {n}, {g}, {two_qubit_fraction})"
        )));
    }
    let (lo, hi) = p_range;
    if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return Err(Error::Usage(format!("bad probability range [{lo}, {hi}]")));
    }
    let two = (g as f64 * two_qubit_fraction).round() as usize;
    let mut is_two = vec![false; g];
    for k in sample(rng, g, two) {
        is_two[k] = true;
    }
    let mut gates = Vec::with_capacity(g);
    for two_qubit in is_two {
        let gate = if two_qubit {
            let kind = GateKind::CONTROLLED[rng.random_range(0..GateKind::CONTROLLED.len())];
            let q = rng.random_range(0..n - 1);
            Gate {
                kind,
                targets: vec![q, q + 1],
                angle: kind.takes_angle().then(|| rng.random_range(0.0..2.0 * PI)),
                noise: NoiseChannel {
                    kind: NoiseKind::Depolarizing,
                    p: rng.random_range(lo..=hi),
                },
            }
        } else {
            let kind = GateKind::SINGLE[rng.random_range(0..GateKind::SINGLE.len())];
            let q = rng.random_range(0..n);
            let angle = kind.takes_angle().then(|| rng.random_range(0.0..2.0 * PI));
            let pauli = [NoiseKind::X, NoiseKind::Y, NoiseKind::Z][rng.random_range(0..3)];
            Gate {
                kind,
                targets: vec![q],
                angle,
                noise: NoiseChannel {
                    kind: pauli,
                    p: rng.random_range(lo..=hi),
                },
            }
        };
        gates.push(gate);
    }
    Circuit::new(n, gates)
}

/// Tensor-network form of a circuit acting on `|0...0>`.
///
/// Operand slots `0..n` hold the initial kets; every following operand is
/// one gate, in circuit order (plus inserted error operands when built with
/// [`build_network_with_errors`]). Open legs are the final qubit legs in
/// qubit order.
#[derive(Debug, Clone)]
pub struct CircuitNetwork {
    pub net: TensorNetwork,
    pub n: usize,
    /// Operand slot holding each gate.
    pub gate_slots: Vec<usize>,
    /// Arity of each gate.
    pub gate_arity: Vec<usize>,
    pub final_labels: Vec<Label>,
}

pub fn build_network(c: &Circuit) -> CircuitNetwork {
    build(c, None).expect("error-free network")
}

/// Network with each non-identity error inserted as its own operand directly
/// after its gate.
pub fn build_network_with_errors(c: &Circuit, realized: &[ErrorOp]) -> Result<CircuitNetwork> {
    if realized.len() != c.gates.len() {
        return Err(Error::Usage(format!(
            "{} realized errors for {} gates",
            realized.len(),
            c.gates.len()
        )));
    }
    build(c, Some(realized))
}

fn build(c: &Circuit, realized: Option<&[ErrorOp]>) -> Result<CircuitNetwork> {
    let mut next = 0u32;
    let mut fresh = || {
        next += 1;
        Label(next - 1)
    };
    let mut wire: Vec<Label> = (0..c.n).map(|_| fresh()).collect();
    let mut operands: Vec<Tensor> = wire.iter().map(|&l| Tensor::basis(l, 0)).collect();
    let mut gate_slots = Vec::with_capacity(c.gates.len());
    let mut gate_arity = Vec::with_capacity(c.gates.len());
    for (site, g) in c.gates.iter().enumerate() {
        let ins: Vec<Label> = g.targets.iter().map(|&q| wire[q]).collect();
        let outs: Vec<Label> = g.targets.iter().map(|_| fresh()).collect();
        gate_slots.push(operands.len());
        gate_arity.push(g.targets.len());
        operands.push(operator_tensor(g.unitary(), &outs, &ins));
        for (&q, &l) in g.targets.iter().zip(&outs) {
            wire[q] = l;
        }
        let Some(err) = realized.map(|r| r[site]) else {
            continue;
        };
        if err.is_identity() {
            continue;
        }
        if err.arity() != Some(g.targets.len()) {
            return Err(Error::Arity {
                site,
                expected: g.targets.len(),
                actual: err.arity().unwrap_or(0),
            });
        }
        let ins = outs;
        let outs: Vec<Label> = g.targets.iter().map(|_| fresh()).collect();
        operands.push(operator_tensor(err.matrix(g.targets.len()), &outs, &ins));
        for (&q, &l) in g.targets.iter().zip(&outs) {
            wire[q] = l;
        }
    }
    let net = TensorNetwork::new(operands, wire.clone())?;
    Ok(CircuitNetwork {
        net,
        n: c.n,
        gate_slots,
        gate_arity,
        final_labels: wire,
    })
}
