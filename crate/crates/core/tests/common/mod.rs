#![allow(dead_code)]

use std::collections::HashMap;

use num_complex::Complex64;
use rand::Rng;

use ptsbe::circuit::{Circuit, ErrorOp};
use ptsbe::engine::{BatchPlan, ErrorSet};
use ptsbe::oracle::statevector;
use ptsbe::random_circuit;
use ptsbe::{Index, Label, Tensor, TensorNetwork};

pub fn rand_c<R: Rng>(rng: &mut R) -> Complex64 {
    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

/// Random network with `ops` operands: every bond joins two distinct
/// operands, open legs sit on one operand each.
pub fn random_network<R: Rng>(rng: &mut R, ops: usize, bonds: usize, open: usize, max_dim: usize) -> TensorNetwork {
    let mut legs: Vec<Vec<Index>> = vec![Vec::new(); ops];
    let mut label = 0u32;
    for _ in 0..bonds {
        let a = rng.random_range(0..ops);
        let mut b = rng.random_range(0..ops - 1);
        if b >= a {
            b += 1;
        }
        let idx = Index::new(Label(label), rng.random_range(1..=max_dim));
        legs[a].push(idx);
        legs[b].push(idx);
        label += 1;
    }
    let mut open_labels = Vec::new();
    for _ in 0..open {
        let a = rng.random_range(0..ops);
        legs[a].push(Index::new(Label(label), rng.random_range(1..=max_dim)));
        open_labels.push(Label(label));
        label += 1;
    }
    let operands = legs
        .into_iter()
        .map(|ix| {
            let len = ix.iter().map(|i| i.dim).product::<usize>();
            Tensor::new(ix, (0..len).map(|_| rand_c(rng)).collect()).unwrap()
        })
        .collect();
    TensorNetwork::new(operands, open_labels).unwrap()
}

fn offset(t: &Tensor, assign: &HashMap<Label, usize>) -> usize {
    let mut off = 0;
    for idx in t.indices() {
        off = off * idx.dim + assign[&idx.label];
    }
    off
}

/// Naive summation over every label assignment; result in open-leg order.
pub fn brute_force(net: &TensorNetwork) -> Vec<Complex64> {
    let dims = net.dims();
    let mut labels: Vec<Label> = dims.keys().copied().collect();
    labels.sort();
    let open_len: usize = net.open().iter().map(|l| dims[l]).product();
    let mut out = vec![Complex64::new(0.0, 0.0); open_len];
    let mut assign: HashMap<Label, usize> = labels.iter().map(|&l| (l, 0)).collect();
    loop {
        let term: Complex64 = net.operands().iter().map(|t| t.data()[offset(t, &assign)]).product();
        let mut o = 0;
        for l in net.open() {
            o = o * dims[l] + assign[l];
        }
        out[o] += term;
        // odometer
        let mut k = labels.len();
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            let l = labels[k];
            let v = assign.get_mut(&l).unwrap();
            *v += 1;
            if *v < dims[&l] {
                break;
            }
            *v = 0;
        }
    }
}

/// Minimum cost over every sequence of pairwise contractions.
pub fn min_tree_cost(net: &TensorNetwork) -> f64 {
    let dims = net.dims();
    let legs: Vec<Vec<Label>> = net
        .operands()
        .iter()
        .map(|t| t.indices().iter().map(|i| i.label).collect())
        .collect();
    fn rec(legs: Vec<Vec<Label>>, dims: &HashMap<Label, usize>) -> f64 {
        if legs.len() <= 1 {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for i in 0..legs.len() {
            for j in i + 1..legs.len() {
                let mut union = legs[i].clone();
                union.extend(legs[j].iter().filter(|l| !legs[i].contains(l)));
                let step: f64 = union.iter().map(|l| dims[l] as f64).product();
                let merged: Vec<Label> = union
                    .into_iter()
                    .filter(|l| !(legs[i].contains(l) && legs[j].contains(l)))
                    .collect();
                let mut rest: Vec<Vec<Label>> = legs
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != i && *k != j)
                    .map(|(_, l)| l.clone())
                    .collect();
                rest.push(merged);
                best = best.min(step + rec(rest, dims));
            }
        }
        best
    }
    rec(legs, &dims)
}

pub fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn circuit<R: Rng>(rng: &mut R, n: usize, g: usize) -> Circuit {
    random_circuit(n, g, 0.2, (0.02, 0.2), rng).unwrap()
}

/// Random error set with at least one non-identity entry when the circuit
/// allows it.
pub fn error_set<R: Rng>(rng: &mut R, c: &Circuit, id: usize) -> ErrorSet {
    let realized: Vec<ErrorOp> = c
        .gates
        .iter()
        .map(|g| {
            if rng.random_bool(0.3) {
                let outs = g.noise.outcomes();
                outs[rng.random_range(1..outs.len())].0
            } else {
                ErrorOp::Identity
            }
        })
        .collect();
    ErrorSet { id, realized, shots: 1 }
}

/// Exact joint distribution of one trajectory from the statevector.
pub fn joint(c: &Circuit, realized: &[ErrorOp]) -> Vec<f64> {
    statevector(c, realized).unwrap().amps.iter().map(|a| a.norm_sqr()).collect()
}

/// Conditional marginal of `plan` batch `j` given `prefix`, by explicit
/// summation over the joint.
pub fn oracle_conditional(joint: &[f64], n: usize, plan: &BatchPlan, j: usize, prefix: &[u8]) -> Vec<f64> {
    let batch = plan.batch(j);
    let width = batch.len();
    let mut probs = vec![0.0; 1 << width];
    for (k, p) in joint.iter().enumerate() {
        let bit = |q: usize| ((k >> (n - 1 - q)) & 1) as u8;
        if (0..batch.start).any(|q| bit(q) != prefix[q]) {
            continue;
        }
        let mut x = 0;
        for q in batch.clone() {
            x = (x << 1) | bit(q) as usize;
        }
        probs[x] += p;
    }
    let mass: f64 = probs.iter().sum();
    probs.iter().map(|p| p / mass).collect()
}

pub fn bits(s: &str) -> Vec<u8> {
    s.bytes().map(|b| b - b'0').collect()
}

pub fn index_of(s: &str) -> usize {
    usize::from_str_radix(s, 2).unwrap()
}

/// Total variation distance between empirical counts and a distribution.
pub fn tvd_counts(counts: &HashMap<usize, u64>, probs: &[f64]) -> f64 {
    let total: u64 = counts.values().sum();
    0.5 * probs
        .iter()
        .enumerate()
        .map(|(k, p)| (counts.get(&k).copied().unwrap_or(0) as f64 / total as f64 - p).abs())
        .sum::<f64>()
}
