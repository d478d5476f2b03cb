//! Exact reference simulators used for verification.
//!
//! Basis index convention: qubit 0 is the most significant bit, matching the
//! row-major order of a network's open legs.

use num_complex::Complex64;

use crate::circuit::{Circuit, ErrorOp};
use crate::error::{Error, Result};

pub const STATEVECTOR_MAX_QUBITS: usize = 20;
pub const DENSITY_MAX_QUBITS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct Statevector {
    pub n: usize,
    pub amps: Vec<Complex64>,
}

impl Statevector {
    pub fn zero(n: usize) -> Self {
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
        amps[0] = Complex64::new(1.0, 0.0);
        Self { n, amps }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn probabilities(&self) -> Distribution {
        Distribution {
            n: self.n,
            probs: self.amps.iter().map(|a| a.norm_sqr()).collect(),
        }
    }
}

/// Measurement distribution over `2^n` outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub n: usize,
    pub probs: Vec<f64>,
}

impl Distribution {
    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn tvd(&self, other: &Distribution) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    /// Bitstring for basis index `k`, qubit 0 first.
    pub fn bitstring(&self, k: usize) -> String {
        (0..self.n)
            .map(|q| if (k >> (self.n - 1 - q)) & 1 == 1 { '1' } else { '0' })
            .collect()
    }
}

/// Apply a 1- or 2-qubit row-major matrix to `qubits` of an `n`-qubit vector.
fn apply(amps: &mut [Complex64], n: usize, qubits: &[usize], m: &[Complex64]) {
    match *qubits {
        [q] => {
            let s = 1usize << (n - 1 - q);
            for base in 0..amps.len() {
                if base & s != 0 {
                    continue;
                }
                let (a0, a1) = (amps[base], amps[base | s]);
                amps[base] = m[0] * a0 + m[1] * a1;
                amps[base | s] = m[2] * a0 + m[3] * a1;
            }
        }
        [q0, q1] => {
            let s0 = 1usize << (n - 1 - q0);
            let s1 = 1usize << (n - 1 - q1);
            for base in 0..amps.len() {
                if base & (s0 | s1) != 0 {
                    continue;
                }
                let idx = [base, base | s1, base | s0, base | s0 | s1];
                let v = idx.map(|i| amps[i]);
                for r in 0..4 {
                    amps[idx[r]] = (0..4).map(|c| m[r * 4 + c] * v[c]).sum();
                }
            }
        }
        _ => unreachable!("gates act on one or two qubits"),
    }
}

/// Evolve `|0...0>` through the circuit with the given realized errors, each
/// applied right after its gate.
pub fn statevector(c: &Circuit, realized: &[ErrorOp]) -> Result<Statevector> {
    if c.n > STATEVECTOR_MAX_QUBITS {
        return Err(Error::Capacity {
            what: "statevector qubits",
            requested: c.n,
            max: STATEVECTOR_MAX_QUBITS,
        });
    }
    if realized.len() != c.gates.len() && !realized.is_empty() {
        return Err(Error::Usage(format!(
            "{} realized errors for {} gates",
            realized.len(),
            c.gates.len()
        )));
    }
    let mut sv = Statevector::zero(c.n);
    for (site, g) in c.gates.iter().enumerate() {
        apply(&mut sv.amps, c.n, &g.targets, &g.unitary());
        if let Some(&e) = realized.get(site) {
            if e.is_identity() {
                continue;
            }
            if e.arity() != Some(g.targets.len()) {
                return Err(Error::Arity {
                    site,
                    expected: g.targets.len(),
                    actual: e.arity().unwrap_or(0),
                });
            }
            apply(&mut sv.amps, c.n, &g.targets, &e.matrix(g.targets.len()));
        }
    }
    Ok(sv)
}

pub fn exact_distribution(c: &Circuit, realized: &[ErrorOp]) -> Result<Distribution> {
    Ok(statevector(c, realized)?.probabilities())
}

/// Channel-averaged outcome distribution from full density-matrix evolution.
pub fn exact_noisy_distribution(c: &Circuit) -> Result<Distribution> {
    let n = c.n;
    if n > DENSITY_MAX_QUBITS {
        return Err(Error::Capacity {
            what: "density-matrix qubits",
            requested: n,
            max: DENSITY_MAX_QUBITS,
        });
    }
    let dim = 1usize << n;
    // rho as a 2n-qubit vector: ket qubits 0..n, bra qubits n..2n
    let mut rho = vec![Complex64::new(0.0, 0.0); dim * dim];
    rho[0] = Complex64::new(1.0, 0.0);
    let conj = |m: &[Complex64]| m.iter().map(|z| z.conj()).collect::<Vec<_>>();
    for g in &c.gates {
        let u = g.unitary();
        let bra: Vec<usize> = g.targets.iter().map(|&q| q + n).collect();
        apply(&mut rho, 2 * n, &g.targets, &u);
        apply(&mut rho, 2 * n, &bra, &conj(&u));
        let before = rho.clone();
        let mut mixed = vec![Complex64::new(0.0, 0.0); rho.len()];
        for (op, w) in g.noise.outcomes() {
            if w == 0.0 {
                continue;
            }
            let mut branch = before.clone();
            if !op.is_identity() {
                let e = op.matrix(g.targets.len());
                apply(&mut branch, 2 * n, &g.targets, &e);
                apply(&mut branch, 2 * n, &bra, &conj(&e));
            }
            for (m, b) in mixed.iter_mut().zip(&branch) {
                *m += b * w;
            }
        }
        rho = mixed;
    }
    Ok(Distribution {
        n,
        probs: (0..dim).map(|k| rho[k * dim + k].re).collect(),
    })
}
