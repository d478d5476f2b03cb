//! Dense complex tensors with labeled legs, networks of them, and pairwise
//! contraction.
//!
//! Entries are stored row-major over the index order, so the last index
//! varies fastest. A [`TensorNetwork`] is a bag of operands in which every
//! bond label appears on exactly two operands and every open label on one.

use std::collections::HashMap;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path::ContractionPath;

/// Opaque leg identifier, unique within one network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Label(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Index {
    pub label: Label,
    pub dim: usize,
}

impl Index {
    pub fn new(label: Label, dim: usize) -> Self {
        Self { label, dim }
    }

    pub fn qubit(label: Label) -> Self {
        Self { label, dim: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    indices: Vec<Index>,
    data: Vec<Complex64>,
}

impl Tensor {
    pub fn new(indices: Vec<Index>, data: Vec<Complex64>) -> Result<Self> {
        for (k, idx) in indices.iter().enumerate() {
            if idx.dim == 0 {
                return Err(Error::ZeroDim(idx.label.0));
            }
            if indices[..k].iter().any(|o| o.label == idx.label) {
                return Err(Error::DuplicateLabel(idx.label.0));
            }
        }
        let expected = indices.iter().map(|i| i.dim).product::<usize>();
        if expected != data.len() {
            return Err(Error::EntryCount {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { indices, data })
    }

    pub fn scalar(value: Complex64) -> Self {
        Self {
            indices: Vec::new(),
            data: vec![value],
        }
    }

    /// Computational basis vector `|bit>` on a single qubit leg.
    pub fn basis(label: Label, bit: u8) -> Self {
        let mut data = vec![Complex64::new(0.0, 0.0); 2];
        data[usize::from(bit & 1)] = Complex64::new(1.0, 0.0);
        Self {
            indices: vec![Index::qubit(label)],
            data,
        }
    }

    pub fn indices(&self) -> &[Index] {
        &self.indices
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn rank(&self) -> usize {
        self.indices.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.indices.iter().map(|i| i.dim).collect()
    }

    pub fn position(&self, label: Label) -> Option<usize> {
        self.indices.iter().position(|i| i.label == label)
    }

    /// Entry at a multi-index given in this tensor's index order.
    pub fn get(&self, at: &[usize]) -> Complex64 {
        debug_assert_eq!(at.len(), self.indices.len());
        let mut off = 0;
        for (i, idx) in at.iter().zip(&self.indices) {
            off = off * idx.dim + i;
        }
        self.data[off]
    }

    pub fn conj(&self) -> Self {
        Self {
            indices: self.indices.clone(),
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            indices: self.indices.clone(),
            data: self.data.iter().map(|z| z * factor).collect(),
        }
    }

    /// Rename legs through `f`; dims are kept.
    pub fn relabeled(&self, mut f: impl FnMut(Label) -> Label) -> Self {
        Self {
            indices: self
                .indices
                .iter()
                .map(|i| Index::new(f(i.label), i.dim))
                .collect(),
            data: self.data.clone(),
        }
    }

    /// Reorder legs so that they follow `order`, which must be a permutation
    /// of this tensor's labels.
    pub fn permuted_to(&self, order: &[Label]) -> Result<Self> {
        if order.len() != self.indices.len() {
            return Err(Error::InvalidNetwork(format!(
                "cannot permute rank-{} tensor to {} labels",
                self.indices.len(),
                order.len()
            )));
        }
        let mut perm = Vec::with_capacity(order.len());
        for l in order {
            let p = self.position(*l).ok_or_else(|| {
                Error::InvalidNetwork(format!("label {} not on tensor", l.0))
            })?;
            perm.push(p);
        }
        let dims = self.shape();
        let data = permute(&self.data, &dims, &perm);
        let indices = perm.iter().map(|&p| self.indices[p]).collect();
        Ok(Self { indices, data })
    }
}

/// Transpose row-major `data` with shape `dims` so that output axis `k` is
/// input axis `perm[k]`.
pub(crate) fn permute(data: &[Complex64], dims: &[usize], perm: &[usize]) -> Vec<Complex64> {
    if perm.iter().enumerate().all(|(k, &p)| k == p) {
        return data.to_vec();
    }
    let rank = dims.len();
    let mut in_strides = vec![1usize; rank];
    for k in (0..rank.saturating_sub(1)).rev() {
        in_strides[k] = in_strides[k + 1] * dims[k + 1];
    }
    // Output axes as (dim, input stride), fusing runs that stay contiguous.
    let mut axes: Vec<(usize, usize)> = Vec::with_capacity(rank);
    for &p in perm {
        if dims[p] == 1 {
            continue;
        }
        let (d, s) = (dims[p], in_strides[p]);
        match axes.last_mut() {
            Some(last) if last.1 == d * s => {
                last.0 *= d;
                last.1 = s;
            }
            _ => axes.push((d, s)),
        }
    }
    let total = data.len();
    let mut out = Vec::with_capacity(total);
    if axes.is_empty() {
        out.extend_from_slice(data);
        return out;
    }
    let (inner_dim, inner_stride) = *axes.last().unwrap();
    let outer = &axes[..axes.len() - 1];
    let mut counter = vec![0usize; outer.len()];
    let mut base = 0usize;
    loop {
        if inner_stride == 1 {
            out.extend_from_slice(&data[base..base + inner_dim]);
        } else {
            out.extend((0..inner_dim).map(|i| data[base + i * inner_stride]));
        }
        // odometer over the outer axes
        let mut k = outer.len();
        loop {
            if k == 0 {
                debug_assert_eq!(out.len(), total);
                return out;
            }
            k -= 1;
            counter[k] += 1;
            base += outer[k].1;
            if counter[k] < outer[k].0 {
                break;
            }
            base -= outer[k].1 * outer[k].0;
            counter[k] = 0;
        }
    }
}

const PAR_THRESHOLD: usize = 1 << 16;

/// `c = a * b` for row-major `a: rows x inner` and `b: inner x cols`.
/// Returns the number of complex multiply-adds performed.
fn matmul(
    a: &[Complex64],
    b: &[Complex64],
    rows: usize,
    inner: usize,
    cols: usize,
    c: &mut [Complex64],
) -> u64 {
    let row_kernel = |i: usize, c_row: &mut [Complex64]| -> u64 {
        let mut n = 0u64;
        let a_row = &a[i * inner..(i + 1) * inner];
        for (k, &aik) in a_row.iter().enumerate() {
            n += cols as u64;
            if aik.re == 0.0 && aik.im == 0.0 {
                continue;
            }
            let b_row = &b[k * cols..(k + 1) * cols];
            for (cij, bkj) in c_row.iter_mut().zip(b_row) {
                *cij += aik * bkj;
            }
        }
        n
    };
    if cols == 0 || rows == 0 {
        return 0;
    }
    if rows * inner * cols >= PAR_THRESHOLD && rows > 1 {
        c.par_chunks_mut(cols)
            .enumerate()
            .map(|(i, c_row)| row_kernel(i, c_row))
            .sum()
    } else {
        c.chunks_mut(cols)
            .enumerate()
            .map(|(i, c_row)| row_kernel(i, c_row))
            .sum()
    }
}

/// Contract two tensors over all labels they share.
///
/// The result keeps `a`'s surviving legs in order followed by `b`'s.
pub fn contract_pair(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    contract_pair_counted(a, b).map(|(t, _)| t)
}

/// Number of entries the contraction of `a` and `b` would produce.
pub(crate) fn pair_output_entries(a: &Tensor, b: &Tensor) -> u128 {
    let mut n: u128 = 1;
    for idx in a.indices.iter() {
        if b.position(idx.label).is_none() {
            n *= idx.dim as u128;
        }
    }
    for idx in b.indices.iter() {
        if a.position(idx.label).is_none() {
            n *= idx.dim as u128;
        }
    }
    n
}

pub(crate) fn contract_pair_counted(a: &Tensor, b: &Tensor) -> Result<(Tensor, u64)> {
    let mut a_shared = Vec::new();
    let mut b_shared = Vec::new();
    for (ia, idx) in a.indices.iter().enumerate() {
        if let Some(ib) = b.position(idx.label) {
            let other = b.indices[ib].dim;
            if other != idx.dim {
                return Err(Error::DimMismatch {
                    label: idx.label.0,
                    left: idx.dim,
                    right: other,
                });
            }
            a_shared.push(ia);
            b_shared.push(ib);
        }
    }
    let a_free: Vec<usize> = (0..a.rank()).filter(|k| !a_shared.contains(k)).collect();
    let b_free: Vec<usize> = (0..b.rank()).filter(|k| !b_shared.contains(k)).collect();

    let rows: usize = a_free.iter().map(|&k| a.indices[k].dim).product();
    let inner: usize = a_shared.iter().map(|&k| a.indices[k].dim).product();
    let cols: usize = b_free.iter().map(|&k| b.indices[k].dim).product();

    let a_perm: Vec<usize> = a_free.iter().chain(&a_shared).copied().collect();
    let b_perm: Vec<usize> = b_shared.iter().chain(&b_free).copied().collect();
    let a_mat = permute(&a.data, &a.shape(), &a_perm);
    let b_mat = permute(&b.data, &b.shape(), &b_perm);

    let mut out = vec![Complex64::new(0.0, 0.0); rows * cols];
    let count = matmul(&a_mat, &b_mat, rows, inner, cols, &mut out);

    let indices = a_free
        .iter()
        .map(|&k| a.indices[k])
        .chain(b_free.iter().map(|&k| b.indices[k]))
        .collect();
    Ok((
        Tensor {
            indices,
            data: out,
        },
        count,
    ))
}

/// Operand list plus the ordered set of legs left open.
#[derive(Debug, Clone)]
pub struct TensorNetwork {
    operands: Vec<Tensor>,
    open: Vec<Label>,
}

impl TensorNetwork {
    pub fn new(operands: Vec<Tensor>, open: Vec<Label>) -> Result<Self> {
        let net = Self { operands, open };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        if self.operands.is_empty() {
            return Err(Error::InvalidNetwork("network has no operands".into()));
        }
        let mut seen: HashMap<Label, (usize, usize)> = HashMap::new();
        for t in &self.operands {
            for idx in &t.indices {
                let e = seen.entry(idx.label).or_insert((0, idx.dim));
                if e.1 != idx.dim {
                    return Err(Error::DimMismatch {
                        label: idx.label.0,
                        left: e.1,
                        right: idx.dim,
                    });
                }
                e.0 += 1;
                if e.0 > 2 {
                    return Err(Error::InvalidNetwork(format!(
                        "label {} appears more than twice",
                        idx.label.0
                    )));
                }
            }
        }
        for (k, l) in self.open.iter().enumerate() {
            if self.open[..k].contains(l) {
                return Err(Error::DuplicateLabel(l.0));
            }
            match seen.get(l) {
                Some((1, _)) => {}
                _ => {
                    return Err(Error::InvalidNetwork(format!(
                        "open label {} must appear exactly once",
                        l.0
                    )))
                }
            }
        }
        for (l, (count, _)) in &seen {
            if *count == 1 && !self.open.contains(l) {
                return Err(Error::InvalidNetwork(format!("dangling bond {}", l.0)));
            }
        }
        Ok(())
    }

    pub fn operands(&self) -> &[Tensor] {
        &self.operands
    }

    pub(crate) fn operands_mut(&mut self) -> &mut [Tensor] {
        &mut self.operands
    }

    pub fn open(&self) -> &[Label] {
        &self.open
    }

    pub fn len(&self) -> usize {
        self.operands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operands.is_empty()
    }

    /// Dimension of every label in the network.
    pub fn dims(&self) -> HashMap<Label, usize> {
        self.operands
            .iter()
            .flat_map(|t| t.indices.iter().map(|i| (i.label, i.dim)))
            .collect()
    }

    /// Largest label value in use, or `None` for a network without legs.
    pub fn max_label(&self) -> Option<Label> {
        self.operands
            .iter()
            .flat_map(|t| t.indices.iter().map(|i| i.label))
            .max()
    }

    pub fn signature(&self) -> NetworkSignature {
        network_signature(self)
    }

    pub fn with_scaled_entries(&self, factor: Complex64) -> Self {
        Self {
            operands: self.operands.iter().map(|t| t.scaled(factor)).collect(),
            open: self.open.clone(),
        }
    }
}

/// Structural fingerprint of a network: operand shapes, which legs are
/// bonded to which, and which legs are open. Invariant under entry values
/// and under renaming of labels.
///
/// Operand slots are part of the key since cached paths address slots.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NetworkSignature {
    pub shapes: Vec<Vec<usize>>,
    /// `(operand, axis, operand, axis)` with the lexicographically smaller
    /// endpoint first, sorted.
    pub bonds: Vec<(u32, u32, u32, u32)>,
    /// `(operand, axis)` of every open leg in open-index order.
    pub open: Vec<(u32, u32)>,
}

pub fn network_signature(net: &TensorNetwork) -> NetworkSignature {
    let mut ends: HashMap<Label, Vec<(u32, u32)>> = HashMap::new();
    for (op, t) in net.operands.iter().enumerate() {
        for (ax, idx) in t.indices.iter().enumerate() {
            ends.entry(idx.label).or_default().push((op as u32, ax as u32));
        }
    }
    let mut bonds: Vec<(u32, u32, u32, u32)> = ends
        .values()
        .filter(|v| v.len() == 2)
        .map(|v| {
            let (x, y) = if v[0] <= v[1] { (v[0], v[1]) } else { (v[1], v[0]) };
            (x.0, x.1, y.0, y.1)
        })
        .collect();
    bonds.sort_unstable();
    let open = net.open.iter().map(|l| ends[l][0]).collect();
    NetworkSignature {
        shapes: net.operands.iter().map(Tensor::shape).collect(),
        bonds,
        open,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ExecOptions {
    /// Largest intermediate tensor allowed, in entries.
    pub max_entries: usize,
    pub deadline: Option<Instant>,
}

pub const DEFAULT_MAX_ENTRIES: usize = 1 << 26;

impl Default for ExecOptions {
    fn default() -> Self {
        Self {
            max_entries: DEFAULT_MAX_ENTRIES,
            deadline: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExecStats {
    pub multiply_adds: u64,
    pub largest_intermediate: usize,
}

/// Replay `path` on `net` and return the single remaining tensor with legs
/// in `net.open()` order.
pub fn execute_path(net: &TensorNetwork, path: &ContractionPath) -> Result<Tensor> {
    execute_path_with(net, path, &ExecOptions::default()).map(|(t, _)| t)
}

pub fn execute_path_with(
    net: &TensorNetwork,
    path: &ContractionPath,
    opts: &ExecOptions,
) -> Result<(Tensor, ExecStats)> {
    let mut slots: Vec<Tensor> = net.operands.clone();
    let mut stats = ExecStats::default();
    for (step, &(i, j)) in path.steps.iter().enumerate() {
        let n = slots.len();
        if i == j || i >= n || j >= n {
            return Err(Error::InvalidStep {
                step,
                slot: if i >= n || i == j { i } else { j },
                operands: n,
            });
        }
        if let Some(deadline) = opts.deadline {
            if Instant::now() >= deadline {
                return Err(Error::Timeout);
            }
        }
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        let entries = pair_output_entries(&slots[lo], &slots[hi]);
        if entries > opts.max_entries as u128 {
            return Err(Error::ResourceLimit {
                entries,
                limit: opts.max_entries,
            });
        }
        let b = slots.remove(hi);
        let (merged, count) = contract_pair_counted(&slots[lo], &b)?;
        stats.multiply_adds += count;
        stats.largest_intermediate = stats.largest_intermediate.max(merged.len());
        slots[lo] = merged;
    }
    if slots.len() != 1 {
        return Err(Error::IncompletePath {
            remaining: slots.len(),
        });
    }
    let result = slots.pop().unwrap();
    let result = if result.indices.iter().map(|i| i.label).eq(net.open.iter().copied()) {
        result
    } else {
        result.permuted_to(&net.open)?
    };
    Ok((result, stats))
}
