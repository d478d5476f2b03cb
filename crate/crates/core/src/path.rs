//! Contraction-order planning.
//!
//! A [`ContractionPath`] is a list of slot pairs. After each step the merged
//! tensor takes the lower slot and the higher slot is removed, shifting later
//! operands down by one. Costs follow the usual einsum flop model: a step
//! costs the product of the dimensions of every leg on either operand.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path as FsPath;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Label, NetworkSignature, TensorNetwork};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionPath {
    pub steps: Vec<(usize, usize)>,
    pub est_cost: f64,
}

impl ContractionPath {
    pub fn new(steps: Vec<(usize, usize)>, est_cost: f64) -> Self {
        Self { steps, est_cost }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), 0.0)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Convert a pairing of SSA ids (inputs are `0..n`, every merge creates
    /// the next id) into slot-renumbered steps.
    pub fn from_ssa(n: usize, ssa: &[(usize, usize)]) -> Vec<(usize, usize)> {
        let mut slots: Vec<usize> = (0..n).collect();
        let mut steps = Vec::with_capacity(ssa.len());
        for (next, &(x, y)) in (n..).zip(ssa) {
            let px = slots.iter().position(|&s| s == x).expect("ssa id live");
            let py = slots.iter().position(|&s| s == y).expect("ssa id live");
            let (lo, hi) = if px < py { (px, py) } else { (py, px) };
            steps.push((lo, hi));
            slots.remove(hi);
            slots[lo] = next;
        }
        steps
    }
}

/// Leg structure of a network, detached from entry values.
#[derive(Debug, Clone)]
struct LegModel {
    /// Sorted labels per operand.
    legs: Vec<Vec<Label>>,
    dims: HashMap<Label, usize>,
}

impl LegModel {
    fn of(net: &TensorNetwork) -> Self {
        let legs = net
            .operands()
            .iter()
            .map(|t| {
                let mut v: Vec<Label> = t.indices().iter().map(|i| i.label).collect();
                v.sort_unstable();
                v
            })
            .collect();
        Self {
            legs,
            dims: net.dims(),
        }
    }

    fn size(&self, legs: &[Label]) -> f64 {
        legs.iter().map(|l| self.dims[l] as f64).product()
    }
}

/// Union and symmetric difference of two sorted label lists.
fn merge_legs(a: &[Label], b: &[Label]) -> (Vec<Label>, Vec<Label>) {
    let mut union = Vec::with_capacity(a.len() + b.len());
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        if j == b.len() || (i < a.len() && a[i] < b[j]) {
            union.push(a[i]);
            out.push(a[i]);
            i += 1;
        } else if i == a.len() || b[j] < a[i] {
            union.push(b[j]);
            out.push(b[j]);
            j += 1;
        } else {
            union.push(a[i]);
            i += 1;
            j += 1;
        }
    }
    (union, out)
}

/// Flop estimate of replaying `path` on `net`.
pub fn path_cost(net: &TensorNetwork, path: &ContractionPath) -> Result<f64> {
    steps_cost(&LegModel::of(net), &path.steps)
}

fn steps_cost(model: &LegModel, steps: &[(usize, usize)]) -> Result<f64> {
    let mut slots = model.legs.clone();
    let mut cost = 0.0;
    for (step, &(i, j)) in steps.iter().enumerate() {
        let n = slots.len();
        if i == j || i >= n || j >= n {
            return Err(Error::InvalidStep {
                step,
                slot: if i >= n || i == j { i } else { j },
                operands: n,
            });
        }
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        let (union, out) = merge_legs(&slots[lo], &slots[hi]);
        cost += model.size(&union);
        slots.remove(hi);
        slots[lo] = out;
    }
    Ok(cost)
}

const BOLTZMANN_TEMPERATURE: f64 = 0.3;

/// Greedy planner with randomized restarts.
///
/// Each step contracts the bonded pair minimizing `step cost - eliminated
/// bond size`. Restart 0 is the plain greedy; the remaining restarts choose
/// among candidates with Boltzmann weights on the score, relative to the
/// best candidate. The cheapest path over all restarts wins.
pub fn find_path_greedy<R: Rng + ?Sized>(
    net: &TensorNetwork,
    hypersamples: usize,
    rng: &mut R,
) -> ContractionPath {
    let model = LegModel::of(net);
    let n = model.legs.len();
    if n <= 1 {
        return ContractionPath::empty();
    }
    let mut best: Option<ContractionPath> = None;
    for restart in 0..hypersamples.max(1) {
        let temperature = if restart == 0 {
            None
        } else {
            Some(BOLTZMANN_TEMPERATURE)
        };
        let ssa = greedy_once(&model, temperature, rng);
        let steps = ContractionPath::from_ssa(n, &ssa);
        let cost = steps_cost(&model, &steps).expect("greedy path is valid");
        if best.as_ref().is_none_or(|b| cost < b.est_cost) {
            best = Some(ContractionPath::new(steps, cost));
        }
    }
    best.unwrap()
}

fn greedy_once<R: Rng + ?Sized>(
    model: &LegModel,
    temperature: Option<f64>,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let n = model.legs.len();
    let mut live: BTreeMap<usize, Vec<Label>> =
        model.legs.iter().cloned().enumerate().collect();
    // label -> ssa ids currently holding it
    let mut holders: HashMap<Label, Vec<usize>> = HashMap::new();
    for (id, legs) in &live {
        for l in legs {
            holders.entry(*l).or_default().push(*id);
        }
    }
    let score = |a: &[Label], b: &[Label]| -> f64 {
        let (union, out) = merge_legs(a, b);
        let step = model.size(&union);
        let kept = model.size(&out);
        // union = out + shared, so the shared-bond size is step / kept
        step - step / kept
    };
    let mut cands: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for ids in holders.values() {
        if let [x, y] = ids[..] {
            let key = (x.min(y), x.max(y));
            cands
                .entry(key)
                .or_insert_with(|| score(&live[&key.0], &live[&key.1]));
        }
    }
    let mut next = n;
    let mut ssa = Vec::with_capacity(n - 1);
    while live.len() > 1 {
        let (x, y) = if cands.is_empty() {
            // disconnected pieces: outer product of the two smallest
            let mut by_size: Vec<(f64, usize)> =
                live.iter().map(|(id, l)| (model.size(l), *id)).collect();
            by_size.sort_by(|p, q| p.partial_cmp(q).unwrap());
            (by_size[0].1, by_size[1].1)
        } else {
            pick_candidate(&cands, temperature, rng)
        };
        let a = live.remove(&x).unwrap();
        let b = live.remove(&y).unwrap();
        let (_, out) = merge_legs(&a, &b);
        cands.retain(|&(p, q), _| p != x && p != y && q != x && q != y);
        for l in a.iter().chain(&b) {
            if let Some(h) = holders.get_mut(l) {
                h.retain(|&id| id != x && id != y);
            }
        }
        for l in &out {
            holders.entry(*l).or_default().push(next);
        }
        let mut neighbours: Vec<usize> = out
            .iter()
            .flat_map(|l| holders[l].iter().copied())
            .filter(|&id| id != next)
            .collect();
        neighbours.sort_unstable();
        neighbours.dedup();
        for nb in neighbours {
            let s = score(&live[&nb], &out);
            cands.insert((nb, next), s);
        }
        live.insert(next, out);
        ssa.push((x, y));
        next += 1;
    }
    ssa
}

fn pick_candidate<R: Rng + ?Sized>(
    cands: &BTreeMap<(usize, usize), f64>,
    temperature: Option<f64>,
    rng: &mut R,
) -> (usize, usize) {
    let (&best_key, &best) = cands
        .iter()
        .min_by(|p, q| p.1.partial_cmp(q.1).unwrap())
        .unwrap();
    let Some(t) = temperature else {
        return best_key;
    };
    let scale = t * best.abs().max(1.0);
    let weights: Vec<f64> = cands
        .values()
        .map(|s| (-(s - best) / scale).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (key, w) in cands.keys().zip(&weights) {
        if u < *w {
            return *key;
        }
        u -= w;
    }
    best_key
}

pub const OPTIMAL_MAX_OPERANDS: usize = 14;

/// Globally cheapest contraction tree by dynamic programming over operand
/// subsets. Outer products are allowed.
pub fn find_path_optimal(net: &TensorNetwork) -> Result<ContractionPath> {
    let model = LegModel::of(net);
    let n = model.legs.len();
    if n > OPTIMAL_MAX_OPERANDS {
        return Err(Error::Capacity {
            what: "optimal planner operand count",
            requested: n,
            max: OPTIMAL_MAX_OPERANDS,
        });
    }
    if n <= 1 {
        return Ok(ContractionPath::empty());
    }
    let mut label_ids: HashMap<Label, usize> = HashMap::new();
    for legs in &model.legs {
        for l in legs {
            let next = label_ids.len();
            label_ids.entry(*l).or_insert(next);
        }
    }
    let words = label_ids.len().div_ceil(64).max(1);
    let mut dim_of = vec![1.0; label_ids.len()];
    for (l, &k) in &label_ids {
        dim_of[k] = model.dims[l] as f64;
    }
    let full = (1usize << n) - 1;
    // external legs of each subset: xor of member leg sets
    let mut ext = vec![0u64; (full + 1) * words];
    for s in 1..=full {
        let low = s.trailing_zeros() as usize;
        let rest = s & (s - 1);
        for w in 0..words {
            ext[s * words + w] = ext[rest * words + w];
        }
        for l in &model.legs[low] {
            let k = label_ids[l];
            ext[s * words + k / 64] ^= 1u64 << (k % 64);
        }
    }
    let union_size = |a: usize, b: usize| -> f64 {
        let mut size = 1.0;
        for w in 0..words {
            let mut bits = ext[a * words + w] | ext[b * words + w];
            while bits != 0 {
                let k = bits.trailing_zeros() as usize;
                size *= dim_of[w * 64 + k];
                bits &= bits - 1;
            }
        }
        size
    };
    let mut best = vec![f64::INFINITY; full + 1];
    let mut split = vec![0usize; full + 1];
    for i in 0..n {
        best[1 << i] = 0.0;
    }
    for s in 1..=full {
        if s.count_ones() < 2 {
            continue;
        }
        let low = s & s.wrapping_neg();
        let rest = s ^ low;
        // enumerate submasks a of s that contain the lowest member
        let mut sub = rest;
        loop {
            let a = sub | low;
            let b = s ^ a;
            if b != 0 {
                let c = best[a] + best[b] + union_size(a, b);
                if c < best[s] {
                    best[s] = c;
                    split[s] = a;
                }
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
    }
    let mut ssa = Vec::with_capacity(n - 1);
    let mut next = n;
    fn emit(
        s: usize,
        split: &[usize],
        ssa: &mut Vec<(usize, usize)>,
        next: &mut usize,
    ) -> usize {
        if s.count_ones() == 1 {
            return s.trailing_zeros() as usize;
        }
        let a = split[s];
        let x = emit(a, split, ssa, next);
        let y = emit(s ^ a, split, ssa, next);
        ssa.push((x, y));
        *next += 1;
        *next - 1
    }
    emit(full, &split, &mut ssa, &mut next);
    let steps = ContractionPath::from_ssa(n, &ssa);
    let cost = steps_cost(&model, &steps)?;
    Ok(ContractionPath::new(steps, cost))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub signature: NetworkSignature,
    pub stage: usize,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: CacheKey,
    path: ContractionPath,
}

/// Paths keyed by network structure and batch stage. Readers share the lock;
/// a miss plans outside the lock and the first inserted path wins.
#[derive(Debug, Default)]
pub struct PathCache {
    paths: RwLock<HashMap<CacheKey, ContractionPath>>,
    plan_events: AtomicU64,
    hits: AtomicU64,
}

impl PathCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.paths.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plan_events(&self) -> u64 {
        self.plan_events.load(Ordering::Relaxed)
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn get(&self, net: &TensorNetwork, stage: usize) -> Option<ContractionPath> {
        let key = CacheKey {
            signature: net.signature(),
            stage,
        };
        self.paths.read().unwrap().get(&key).cloned()
    }

    pub fn cache_lookup_or_plan<R: Rng + ?Sized>(
        &self,
        net: &TensorNetwork,
        stage: usize,
        hypersamples: usize,
        rng: &mut R,
    ) -> Result<(ContractionPath, bool)> {
        let key = CacheKey {
            signature: net.signature(),
            stage,
        };
        if let Some(path) = self.paths.read().unwrap().get(&key).cloned() {
            if path.len() + 1 != net.len() || path_cost(net, &path).is_err() {
                return Err(Error::CacheCorruption);
            }
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok((path, true));
        }
        let planned = find_path_greedy(net, hypersamples, rng);
        self.plan_events.fetch_add(1, Ordering::Relaxed);
        let stored = self
            .paths
            .write()
            .unwrap()
            .entry(key)
            .or_insert(planned)
            .clone();
        Ok((stored, false))
    }

    pub fn save_json(&self, file: impl AsRef<FsPath>) -> Result<()> {
        let map = self.paths.read().unwrap();
        let mut entries: Vec<CacheEntry> = map
            .iter()
            .map(|(k, p)| CacheEntry {
                key: k.clone(),
                path: p.clone(),
            })
            .collect();
        entries.sort_by(|a, b| {
            (a.key.stage, &a.key.signature).cmp(&(b.key.stage, &b.key.signature))
        });
        fs::write(file, serde_json::to_vec(&entries)?)?;
        Ok(())
    }

    pub fn load_json(file: impl AsRef<FsPath>) -> Result<Self> {
        let entries: Vec<CacheEntry> = serde_json::from_slice(&fs::read(file)?)?;
        let cache = Self::new();
        {
            let mut map = cache.paths.write().unwrap();
            for e in entries {
                map.insert(e.key, e.path);
            }
        }
        Ok(cache)
    }
}
