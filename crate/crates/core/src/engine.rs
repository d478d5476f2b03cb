//! Pre-sampled trajectories with shared contraction paths and batched
//! prefix sampling, plus the per-shot baseline and the per-error-set
//! comparison mode.
//!
//! Qubits are measured in contiguous batches. Stage `j` contracts a network
//! whose result holds the (unnormalized) marginal of batch `j` conditioned on
//! the bits already drawn for batches `0..j`. Stages with unmeasured qubits
//! after them use the ket/bra sandwich; the last stage needs only the ket
//! side, since the marginal there is the squared amplitude.

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{build_network, build_network_with_errors, Circuit, CircuitNetwork, ErrorOp};
use crate::error::{Error, Result};
use crate::path::{find_path_greedy, ContractionPath, PathCache};
use crate::tensor::{execute_path_with, ExecOptions, Label, Tensor, TensorNetwork};

/// Diagonal entries down to this value are rounding noise and read as zero.
pub const NEGATIVE_CLAMP: f64 = -1e-12;
/// Below this total mass a prefix is treated as impossible.
pub const MIN_PREFIX_MASS: f64 = 1e-12;

pub const DEFAULT_TAU: f64 = 1e-6;

const DOMAIN_ERRORS: u64 = 0x45_52_52;
const DOMAIN_SAMPLING: u64 = 0x53_41_4d;
const DOMAIN_BASELINE: u64 = 0x42_41_53;
const DOMAIN_PLANNING: u64 = 0x50_4c_4e;

/// Independent generator for lane `index` of `domain` under one root seed.
pub fn stream_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(index);
    rng
}

/// One realization of every channel in a circuit plus its shot allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSet {
    pub id: usize,
    pub realized: Vec<ErrorOp>,
    pub shots: u64,
}

impl ErrorSet {
    pub fn error_count(&self) -> usize {
        self.realized.iter().filter(|e| !e.is_identity()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotRule {
    /// Shots split evenly, remainder to the lowest ids.
    Proportional,
    /// Every error set gets the same user-chosen count.
    Uniform { shots_per_set: u64 },
}

pub fn draw_errors<R: Rng + ?Sized>(c: &Circuit, rng: &mut R) -> Vec<ErrorOp> {
    c.gates.iter().map(|g| g.noise.sample(rng)).collect()
}

/// Draw `e` error sets up front; set `i` uses its own stream of `seed`.
pub fn presample_errors(
    c: &Circuit,
    e: usize,
    rule: ShotRule,
    total_shots: u64,
    seed: u64,
) -> Result<Vec<ErrorSet>> {
    if e == 0 {
        return Err(Error::Usage("need at least one error set".into()));
    }
    if matches!(rule, ShotRule::Proportional) && total_shots < e as u64 {
        return Err(Error::Usage(format!(
            "{total_shots} shots cannot cover {e} error sets"
        )));
    }
    Ok((0..e)
        .map(|i| {
            let mut rng = stream_rng(seed, DOMAIN_ERRORS, i as u64);
            let shots = match rule {
                ShotRule::Proportional => {
                    let base = total_shots / e as u64;
                    base + u64::from((i as u64) < total_shots % e as u64)
                }
                ShotRule::Uniform { shots_per_set } => shots_per_set,
            };
            ErrorSet {
                id: i,
                realized: draw_errors(c, &mut rng),
                shots,
            }
        })
        .collect())
}

/// Fold each non-identity error into the gate operand it follows. The
/// result has the template's exact structure.
pub fn merge_errors(template: &CircuitNetwork, k: &ErrorSet) -> Result<CircuitNetwork> {
    if k.realized.len() != template.gate_slots.len() {
        return Err(Error::Usage(format!(
            "error set has {} entries for {} gates",
            k.realized.len(),
            template.gate_slots.len()
        )));
    }
    let mut out = template.clone();
    for (site, &err) in k.realized.iter().enumerate() {
        if err.is_identity() {
            continue;
        }
        let arity = template.gate_arity[site];
        if err.arity() != Some(arity) {
            return Err(Error::Arity {
                site,
                expected: arity,
                actual: err.arity().unwrap_or(0),
            });
        }
        let e = err.matrix(arity);
        let d = 1usize << arity;
        let gate = &mut out.net.operands_mut()[template.gate_slots[site]];
        let u = gate.data().to_vec();
        let data = gate.data_mut();
        for r in 0..d {
            for c in 0..d {
                data[r * d + c] = (0..d).map(|k| e[r * d + k] * u[k * d + c]).sum();
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FinalMode {
    /// Draw `count` outcomes from the final conditional marginal.
    Direct { count: u64 },
    /// Keep every final outcome with conditional probability at least `tau`.
    Exhaustive { tau: f64 },
}

/// Partition of the qubits into measurement batches, in qubit order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub sizes: Vec<usize>,
    /// Distinct branches kept per prefix at every non-final stage
    /// (non-proportional sampling).
    pub nonfinal_shots: usize,
    pub final_mode: FinalMode,
}

impl BatchPlan {
    pub fn new(sizes: Vec<usize>) -> Self {
        Self {
            sizes,
            nonfinal_shots: 1,
            final_mode: FinalMode::Direct { count: 1 },
        }
    }

    /// Batches of `b` with the remainder `n % b` as a final short batch.
    pub fn uniform(n: usize, b: usize) -> Self {
        let b = b.max(1);
        let mut sizes = vec![b; n / b];
        if !n.is_multiple_of(b) {
            sizes.push(n % b);
        }
        Self::new(sizes)
    }

    /// Non-final batches of `b` (remainder last among them) followed by a
    /// final batch of `min(b_final, n)`.
    pub fn with_final(n: usize, b: usize, b_final: usize) -> Self {
        let fin = b_final.min(n).max(1);
        let mut plan = Self::uniform(n - fin, b);
        plan.sizes.push(fin);
        plan
    }

    pub fn with_final_mode(mut self, mode: FinalMode) -> Self {
        self.final_mode = mode;
        self
    }

    pub fn with_nonfinal_shots(mut self, k: usize) -> Self {
        self.nonfinal_shots = k;
        self
    }

    pub fn stages(&self) -> usize {
        self.sizes.len()
    }

    pub fn batch(&self, j: usize) -> Range<usize> {
        let start: usize = self.sizes[..j].iter().sum();
        start..start + self.sizes[j]
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Usage(m));
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return bad(format!("batch sizes {:?} must be positive", self.sizes));
        }
        if self.sizes.iter().sum::<usize>() != n {
            return bad(format!("batch sizes {:?} do not sum to {n}", self.sizes));
        }
        if self.nonfinal_shots == 0 {
            return bad("non-final shots must be at least 1".into());
        }
        match self.final_mode {
            FinalMode::Direct { count: 0 } => bad("direct count must be at least 1".into()),
            FinalMode::Exhaustive { tau } if tau.is_nan() || tau <= 0.0 => {
                bad(format!("threshold {tau} must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// Sandwich of `ket` (open legs = final qubit legs in qubit order) with its
/// conjugate: prefix qubits projected on the prefix bits, `batch` qubits
/// left open on both sides (ket legs first), later qubits traced.
pub fn marginal_network(ket: &TensorNetwork, batch: Range<usize>, prefix: &[u8]) -> Result<TensorNetwork> {
    let n = ket.open().len();
    check_stage(n, &batch, prefix)?;
    let offset = ket.max_label().map_or(0, |l| l.0 + 1);
    let finals = ket.open();
    let traced = &finals[batch.end..];
    let bra_label = |l: Label| {
        if traced.contains(&l) {
            l
        } else {
            Label(l.0 + offset)
        }
    };
    let mut operands: Vec<Tensor> = ket.operands().to_vec();
    operands.extend(ket.operands().iter().map(|t| t.conj().relabeled(bra_label)));
    for (q, &bit) in prefix.iter().enumerate() {
        operands.push(Tensor::basis(finals[q], bit));
    }
    for (q, &bit) in prefix.iter().enumerate() {
        operands.push(Tensor::basis(bra_label(finals[q]), bit));
    }
    let open = finals[batch.clone()]
        .iter()
        .copied()
        .chain(finals[batch].iter().map(|&l| bra_label(l)))
        .collect();
    TensorNetwork::new(operands, open)
}

/// Ket side only: prefix qubits projected, `batch` open. Valid as a marginal
/// only when no qubits follow the batch.
pub fn amplitude_network(ket: &TensorNetwork, batch: Range<usize>, prefix: &[u8]) -> Result<TensorNetwork> {
    let n = ket.open().len();
    check_stage(n, &batch, prefix)?;
    if batch.end != n {
        return Err(Error::Usage(
            "amplitude form needs the batch to end at the last qubit".into(),
        ));
    }
    let finals = ket.open();
    let mut operands: Vec<Tensor> = ket.operands().to_vec();
    for (q, &bit) in prefix.iter().enumerate() {
        operands.push(Tensor::basis(finals[q], bit));
    }
    TensorNetwork::new(operands, finals[batch].to_vec())
}

fn check_stage(n: usize, batch: &Range<usize>, prefix: &[u8]) -> Result<()> {
    if batch.start >= batch.end || batch.end > n {
        return Err(Error::Usage(format!("batch {batch:?} invalid for {n} qubits")));
    }
    if prefix.len() != batch.start {
        return Err(Error::Usage(format!(
            "prefix has {} bits, batch starts at qubit {}",
            prefix.len(),
            batch.start
        )));
    }
    if prefix.iter().any(|&b| b > 1) {
        return Err(Error::Usage("prefix bits must be 0 or 1".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageForm {
    Sandwich,
    Amplitude,
}

/// Network contracted at stage `j` of `plan`.
pub fn stage_network(
    ket: &TensorNetwork,
    plan: &BatchPlan,
    j: usize,
    prefix: &[u8],
) -> Result<(TensorNetwork, StageForm)> {
    let batch = plan.batch(j);
    if batch.end == ket.open().len() {
        Ok((amplitude_network(ket, batch, prefix)?, StageForm::Amplitude))
    } else {
        Ok((marginal_network(ket, batch, prefix)?, StageForm::Sandwich))
    }
}

/// Unnormalized marginal of the open batch from a contracted stage tensor.
pub fn stage_diagonal(result: &Tensor, form: StageForm) -> Vec<f64> {
    match form {
        StageForm::Amplitude => result.data().iter().map(|a| a.norm_sqr()).collect(),
        StageForm::Sandwich => {
            let dim = (result.len() as f64).sqrt().round() as usize;
            (0..dim).map(|x| result.data()[x * dim + x].re).collect()
        }
    }
}

/// Work counters shared by all lanes of one run.
#[derive(Debug, Default)]
pub struct Counters {
    plan_events: AtomicU64,
    contract_events: AtomicU64,
    plan_nanos: AtomicU64,
    contract_nanos: AtomicU64,
}

impl Counters {
    pub fn plan_events(&self) -> u64 {
        self.plan_events.load(Ordering::Relaxed)
    }

    pub fn contract_events(&self) -> u64 {
        self.contract_events.load(Ordering::Relaxed)
    }

    pub fn plan_time(&self) -> Duration {
        Duration::from_nanos(self.plan_nanos.load(Ordering::Relaxed))
    }

    pub fn contract_time(&self) -> Duration {
        Duration::from_nanos(self.contract_nanos.load(Ordering::Relaxed))
    }

    fn add_plan(&self, t: Duration) {
        self.plan_events.fetch_add(1, Ordering::Relaxed);
        self.plan_nanos.fetch_add(t.as_nanos() as u64, Ordering::Relaxed);
    }

    fn add_contract(&self, t: Duration) {
        self.contract_events.fetch_add(1, Ordering::Relaxed);
        self.contract_nanos.fetch_add(t.as_nanos() as u64, Ordering::Relaxed);
    }
}

/// Where stage paths come from.
#[derive(Debug, Clone, Copy)]
pub enum PathSource<'a> {
    /// Look up by structure and stage, planning on a miss.
    Cached(&'a PathCache),
    /// Plan every contraction from scratch.
    Fresh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    /// Normalized conditional probabilities over `2^b` outcomes.
    pub probs: Vec<f64>,
    /// Mass before normalization, i.e. the probability of the prefix.
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ShotRecord {
    pub bitstring: String,
    pub count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<OrdF64>,
}

/// `f64` with a total order, for sortable records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OrdF64(pub f64);

impl Eq for OrdF64 {}
impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}
impl std::hash::Hash for OrdF64 {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state);
    }
}

fn bits_to_string(bits: &[u8]) -> String {
    bits.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect()
}

fn push_outcome(prefix: &[u8], x: usize, width: usize) -> Vec<u8> {
    let mut v = Vec::with_capacity(prefix.len() + width);
    v.extend_from_slice(prefix);
    v.extend((0..width).map(|k| ((x >> (width - 1 - k)) & 1) as u8));
    v
}

/// Split `n` draws over `probs` by chained binomials.
pub fn multinomial<R: Rng + ?Sized>(rng: &mut R, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut counts = vec![0u64; probs.len()];
    let mut left = n;
    let mut rest: f64 = probs.iter().sum();
    for (k, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if k + 1 == probs.len() || rest <= p {
            counts[k] = left;
            break;
        }
        let q = (p / rest).clamp(0.0, 1.0);
        let draw = if q == 0.0 {
            0
        } else {
            Binomial::new(left, q).expect("valid binomial").sample(rng)
        };
        counts[k] = draw;
        left -= draw;
        rest -= p;
    }
    counts
}

fn categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last = k;
        if u < p {
            return k;
        }
        u -= p;
    }
    last
}

/// Up to `k` distinct positive-probability outcomes, drawn without
/// replacement with probability-proportional weights.
fn distinct_draws<R: Rng + ?Sized>(rng: &mut R, probs: &[f64], k: usize) -> Vec<usize> {
    let mut weights: Vec<f64> = probs.iter().map(|&p| p.max(0.0)).collect();
    let mut picked = Vec::with_capacity(k);
    while picked.len() < k && weights.iter().any(|&w| w > 0.0) {
        let x = categorical(rng, &weights);
        weights[x] = 0.0;
        picked.push(x);
    }
    picked.sort_unstable();
    picked
}

/// Stage contraction and sampling for one network, with instrumentation.
#[derive(Debug, Clone, Copy)]
pub struct Sampler<'a> {
    pub paths: PathSource<'a>,
    pub hypersamples: usize,
    pub exec: ExecOptions,
    pub counters: &'a Counters,
}

impl<'a> Sampler<'a> {
    pub fn new(paths: PathSource<'a>, hypersamples: usize, counters: &'a Counters) -> Self {
        Self {
            paths,
            hypersamples,
            exec: ExecOptions::default(),
            counters,
        }
    }

    pub fn with_exec(mut self, exec: ExecOptions) -> Self {
        self.exec = exec;
        self
    }

    fn path_for<R: Rng + ?Sized>(
        &self,
        net: &TensorNetwork,
        stage: usize,
        rng: &mut R,
    ) -> Result<ContractionPath> {
        let t0 = Instant::now();
        match self.paths {
            PathSource::Cached(cache) => {
                let (path, hit) = cache.cache_lookup_or_plan(net, stage, self.hypersamples, rng)?;
                if !hit {
                    self.counters.add_plan(t0.elapsed());
                }
                Ok(path)
            }
            PathSource::Fresh => {
                let path = find_path_greedy(net, self.hypersamples, rng);
                self.counters.add_plan(t0.elapsed());
                Ok(path)
            }
        }
    }

    /// Conditional marginal of batch `j` given `prefix`: contract the stage
    /// network, read its diagonal, clamp rounding negatives and normalize.
    pub fn conditional_marginal<R: Rng + ?Sized>(
        &self,
        ket: &TensorNetwork,
        plan: &BatchPlan,
        j: usize,
        prefix: &[u8],
        rng: &mut R,
    ) -> Result<Marginal> {
        let (net, form) = stage_network(ket, plan, j, prefix)?;
        let path = self.path_for(&net, j, rng)?;
        let t0 = Instant::now();
        let (result, _) = execute_path_with(&net, &path, &self.exec)?;
        self.counters.add_contract(t0.elapsed());
        let mut probs = stage_diagonal(&result, form);
        for p in probs.iter_mut() {
            if *p < 0.0 {
                if *p < NEGATIVE_CLAMP {
                    return Err(Error::Numerical { value: *p });
                }
                *p = 0.0;
            }
        }
        let mass: f64 = probs.iter().sum();
        if mass.is_nan() || mass < MIN_PREFIX_MASS {
            return Err(Error::ImpossiblePrefix { stage: j, mass });
        }
        probs.iter_mut().for_each(|p| *p /= mass);
        Ok(Marginal { probs, mass })
    }

    /// Born-rule sampling of `shots` bitstrings: every distinct prefix is
    /// contracted once per stage and its multiplicity split multinomially.
    pub fn sample_proportional<R: Rng + ?Sized>(
        &self,
        ket: &TensorNetwork,
        shots: u64,
        plan: &BatchPlan,
        rng: &mut R,
    ) -> Result<Vec<ShotRecord>> {
        plan.validate(ket.open().len())?;
        let mut groups: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
        if shots == 0 {
            return Ok(Vec::new());
        }
        groups.insert(Vec::new(), shots);
        for j in 0..plan.stages() {
            let width = plan.sizes[j];
            let mut next = BTreeMap::new();
            for (prefix, mult) in &groups {
                let m = self.conditional_marginal(ket, plan, j, prefix, rng)?;
                for (x, c) in multinomial(rng, *mult, &m.probs).into_iter().enumerate() {
                    if c > 0 {
                        *next.entry(push_outcome(prefix, x, width)).or_insert(0) += c;
                    }
                }
            }
            groups = next;
        }
        Ok(groups
            .into_iter()
            .map(|(bits, count)| ShotRecord {
                bitstring: bits_to_string(&bits),
                count,
                prob: None,
            })
            .collect())
    }

    /// Data-harvesting sampler: each prefix branches into up to
    /// `plan.nonfinal_shots` distinct children per non-final stage; the final
    /// stage is drawn directly or enumerated above the threshold.
    pub fn sample_nonproportional<R: Rng + ?Sized>(
        &self,
        ket: &TensorNetwork,
        plan: &BatchPlan,
        rng: &mut R,
    ) -> Result<Vec<ShotRecord>> {
        plan.validate(ket.open().len())?;
        let last = plan.stages() - 1;
        let mut prefixes: Vec<Vec<u8>> = vec![Vec::new()];
        for j in 0..last {
            let width = plan.sizes[j];
            let mut next = Vec::new();
            for prefix in &prefixes {
                let m = self.conditional_marginal(ket, plan, j, prefix, rng)?;
                for x in distinct_draws(rng, &m.probs, plan.nonfinal_shots) {
                    next.push(push_outcome(prefix, x, width));
                }
            }
            prefixes = next;
        }
        let width = plan.sizes[last];
        let mut records = Vec::new();
        for prefix in &prefixes {
            let m = self.conditional_marginal(ket, plan, last, prefix, rng)?;
            match plan.final_mode {
                FinalMode::Exhaustive { tau } => {
                    for (x, &p) in m.probs.iter().enumerate() {
                        if p >= tau {
                            records.push(ShotRecord {
                                bitstring: bits_to_string(&push_outcome(prefix, x, width)),
                                count: 1,
                                prob: Some(OrdF64(p)),
                            });
                        }
                    }
                }
                FinalMode::Direct { count } => {
                    for (x, c) in multinomial(rng, count, &m.probs).into_iter().enumerate() {
                        if c > 0 {
                            records.push(ShotRecord {
                                bitstring: bits_to_string(&push_outcome(prefix, x, width)),
                                count: c,
                                prob: None,
                            });
                        }
                    }
                }
            }
        }
        Ok(records)
    }

    /// One shot by the classic loop: every stage contracted for this shot
    /// alone, one outcome drawn per stage.
    pub fn sample_single_shot<R: Rng + ?Sized>(
        &self,
        ket: &TensorNetwork,
        plan: &BatchPlan,
        rng: &mut R,
    ) -> Result<String> {
        let mut bits: Vec<u8> = Vec::with_capacity(ket.open().len());
        for j in 0..plan.stages() {
            let m = self.conditional_marginal(ket, plan, j, &bits, rng)?;
            let x = categorical(rng, &m.probs);
            bits = push_outcome(&bits, x, plan.sizes[j]);
        }
        Ok(bits_to_string(&bits))
    }
}

fn tally(shots: impl IntoIterator<Item = String>) -> Vec<ShotRecord> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for s in shots {
        *counts.entry(s).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .map(|(bitstring, count)| ShotRecord {
            bitstring,
            count,
            prob: None,
        })
        .collect()
}

fn lane_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Usage(format!("worker pool: {e}")))
}

/// Traditional trajectories: each shot draws its own errors, rebuilds the
/// network with inserted error operands, plans every stage from scratch and
/// contracts every stage for that one shot.
#[allow(clippy::too_many_arguments)]
pub fn sample_baseline(
    c: &Circuit,
    shots: u64,
    plan: &BatchPlan,
    hypersamples: usize,
    seed: u64,
    exec: ExecOptions,
    workers: usize,
    counters: &Counters,
) -> Result<Vec<ShotRecord>> {
    plan.validate(c.n)?;
    let sampler = Sampler::new(PathSource::Fresh, hypersamples, counters).with_exec(exec);
    let run = || -> Result<Vec<String>> {
        (0..shots)
            .into_par_iter()
            .map(|s| {
                let mut rng = stream_rng(seed, DOMAIN_BASELINE, s);
                let realized = draw_errors(c, &mut rng);
                let cn = build_network_with_errors(c, &realized)?;
                sampler.sample_single_shot(&cn.net, plan, &mut rng)
            })
            .collect()
    };
    Ok(tally(lane_pool(workers)?.install(run)?))
}

/// Per-error-set comparison mode: each set gets its own network with inserted
/// error operands and its own planned paths, then shots are taken one at a
/// time. Records are labelled by error-set id.
#[allow(clippy::too_many_arguments)]
pub fn sample_unoptimized_ptsbe(
    c: &Circuit,
    sets: &[ErrorSet],
    plan: &BatchPlan,
    hypersamples: usize,
    seed: u64,
    exec: ExecOptions,
    workers: usize,
    counters: &Counters,
) -> Result<Vec<LabeledRecord>> {
    plan.validate(c.n)?;
    let run = || -> Result<Vec<Vec<LabeledRecord>>> {
        sets.par_iter()
            .map(|k| {
                let inner = || -> Result<Vec<LabeledRecord>> {
                    let cn = build_network_with_errors(c, &k.realized)?;
                    let cache = PathCache::new();
                    let sampler = Sampler::new(PathSource::Cached(&cache), hypersamples, counters)
                        .with_exec(exec);
                    let mut rng = stream_rng(seed, DOMAIN_SAMPLING, k.id as u64);
                    let mut shots = Vec::with_capacity(k.shots as usize);
                    for _ in 0..k.shots {
                        shots.push(sampler.sample_single_shot(&cn.net, plan, &mut rng)?);
                    }
                    Ok(label(k.id, tally(shots)))
                };
                inner().map_err(|e| Error::InErrorSet {
                    id: k.id,
                    source: Box::new(e),
                })
            })
            .collect()
    };
    Ok(lane_pool(workers)?.install(run)?.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Proportional,
    Nonproportional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtsbeConfig {
    pub error_sets: usize,
    pub total_shots: u64,
    pub shot_rule: ShotRule,
    pub plan: BatchPlan,
    pub sampling: SamplingMode,
    pub hypersamples: usize,
    pub seed: u64,
    pub max_entries: usize,
    #[serde(default)]
    pub timeout_s: Option<f64>,
    pub workers: usize,
}

impl PtsbeConfig {
    pub fn exec_options(&self, start: Instant) -> ExecOptions {
        ExecOptions {
            max_entries: self.max_entries,
            deadline: self.timeout_s.map(|s| start + Duration::from_secs_f64(s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub error_set: usize,
    #[serde(flatten)]
    pub record: ShotRecord,
}

fn label(id: usize, records: Vec<ShotRecord>) -> Vec<LabeledRecord> {
    records
        .into_iter()
        .map(|record| LabeledRecord {
            error_set: id,
            record,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub generate_s: f64,
    pub plan_s: f64,
    pub loop_s: f64,
    pub aggregate_s: f64,
    /// Summed wall time inside stage contractions, across lanes.
    pub contraction_s: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkCounts {
    pub plan_events: u64,
    pub contract_events: u64,
    pub cache_hits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub mode: String,
    pub n: usize,
    pub gates: usize,
    pub seed: u64,
    pub config: serde_json::Value,
    pub records: Vec<LabeledRecord>,
    /// Distinct (trajectory, bitstring) pairs produced.
    pub unique_shots: u64,
    pub total_shots: u64,
    pub times: PhaseTimes,
    pub counts: WorkCounts,
}

impl RunResult {
    /// Shot counts merged over trajectories.
    pub fn histogram(&self) -> BTreeMap<String, u64> {
        let mut h = BTreeMap::new();
        for r in &self.records {
            *h.entry(r.record.bitstring.clone()).or_insert(0) += r.record.count;
        }
        h
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run result serializes")
    }
}

/// Full pipeline: pre-sample error sets, plan one path per stage on the
/// error-free template, then merge and sample every error set against the
/// shared paths, one independent lane per set.
pub fn run_ptsbe(c: &Circuit, cfg: &PtsbeConfig) -> Result<RunResult> {
    run_ptsbe_with_cache(c, cfg, &PathCache::new())
}

pub fn run_ptsbe_with_cache(c: &Circuit, cfg: &PtsbeConfig, cache: &PathCache) -> Result<RunResult> {
    let start = Instant::now();
    cfg.plan.validate(c.n)?;
    let exec = cfg.exec_options(start);
    let counters = Counters::default();

    let t = Instant::now();
    let sets = presample_errors(c, cfg.error_sets, cfg.shot_rule, cfg.total_shots, cfg.seed)?;
    let template = build_network(c);
    let generate_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let zeros = vec![0u8; c.n];
    for j in 0..cfg.plan.stages() {
        let (net, _) = stage_network(&template.net, &cfg.plan, j, &zeros[..cfg.plan.batch(j).start])?;
        let mut rng = stream_rng(cfg.seed, DOMAIN_PLANNING, j as u64);
        let t_plan = Instant::now();
        let (_, hit) = cache.cache_lookup_or_plan(&net, j, cfg.hypersamples, &mut rng)?;
        if !hit {
            counters.add_plan(t_plan.elapsed());
        }
    }
    let plan_s = t.elapsed().as_secs_f64();
    let hits_before = cache.hits();

    let t = Instant::now();
    let sampler = Sampler::new(PathSource::Cached(cache), cfg.hypersamples, &counters).with_exec(exec);
    let per_set = |k: &ErrorSet| -> Result<Vec<LabeledRecord>> {
        let inner = || -> Result<Vec<ShotRecord>> {
            let merged = merge_errors(&template, k)?;
            let mut rng = stream_rng(cfg.seed, DOMAIN_SAMPLING, k.id as u64);
            match cfg.sampling {
                SamplingMode::Proportional => {
                    sampler.sample_proportional(&merged.net, k.shots, &cfg.plan, &mut rng)
                }
                SamplingMode::Nonproportional => {
                    sampler.sample_nonproportional(&merged.net, &cfg.plan, &mut rng)
                }
            }
        };
        inner().map(|r| label(k.id, r)).map_err(|e| Error::InErrorSet {
            id: k.id,
            source: Box::new(e),
        })
    };
    let nested: Vec<Vec<LabeledRecord>> = lane_pool(cfg.workers)?
        .install(|| sets.par_iter().map(per_set).collect::<Result<_>>())?;
    let loop_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mut records: Vec<LabeledRecord> = nested.into_iter().flatten().collect();
    records.sort();
    let unique_shots = records.len() as u64;
    let total_shots = records.iter().map(|r| r.record.count).sum();
    let aggregate_s = t.elapsed().as_secs_f64();

    let mode = match cfg.sampling {
        SamplingMode::Proportional => "ptsbe-proportional",
        SamplingMode::Nonproportional => "ptsbe-nonproportional",
    };
    Ok(RunResult {
        mode: mode.into(),
        n: c.n,
        gates: c.gates.len(),
        seed: cfg.seed,
        config: serde_json::to_value(cfg)?,
        records,
        unique_shots,
        total_shots,
        times: PhaseTimes {
            generate_s,
            plan_s,
            loop_s,
            aggregate_s,
            contraction_s: counters.contract_time().as_secs_f64(),
        },
        counts: WorkCounts {
            plan_events: counters.plan_events(),
            contract_events: counters.contract_events(),
            cache_hits: cache.hits() - hits_before,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{Gate, GateKind, NoiseChannel, NoiseKind, Pauli};
    use crate::path::find_path_greedy;
    use crate::tensor::execute_path;

    fn ch(kind: NoiseKind, p: f64) -> NoiseChannel {
        NoiseChannel { kind, p }
    }

    fn bell() -> Circuit {
        Circuit::new(
            2,
            vec![
                Gate::single(GateKind::H, 0, ch(NoiseKind::X, 0.0)),
                Gate::controlled(GateKind::CX, 0, 1, ch(NoiseKind::Depolarizing, 0.0)),
            ],
        )
        .unwrap()
    }

    fn ghz3() -> Circuit {
        Circuit::new(
            3,
            vec![
                Gate::single(GateKind::H, 0, ch(NoiseKind::X, 0.0)),
                Gate::controlled(GateKind::CX, 0, 1, ch(NoiseKind::Depolarizing, 0.0)),
                Gate::controlled(GateKind::CX, 1, 2, ch(NoiseKind::Depolarizing, 0.0)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn remainder_spreading() {
        let sets = presample_errors(&bell(), 4, ShotRule::Proportional, 10, 1).unwrap();
        let m: Vec<u64> = sets.iter().map(|s| s.shots).collect();
        assert_eq!(m, vec![3, 3, 2, 2]);
        let u = presample_errors(&bell(), 3, ShotRule::Uniform { shots_per_set: 7 }, 0, 1).unwrap();
        assert!(u.iter().all(|s| s.shots == 7));
        assert!(presample_errors(&bell(), 0, ShotRule::Proportional, 10, 1).is_err());
        assert!(presample_errors(&bell(), 11, ShotRule::Proportional, 10, 1).is_err());
    }

    #[test]
    fn zero_probability_channels_never_fire() {
        let sets = presample_errors(&ghz3(), 50, ShotRule::Proportional, 50, 9).unwrap();
        assert!(sets.iter().all(|k| k.error_count() == 0));
    }

    #[test]
    fn bernoulli_error_fraction() {
        let c = Circuit::new(1, vec![Gate::single(GateKind::H, 0, ch(NoiseKind::Z, 0.5))]).unwrap();
        let sets = presample_errors(&c, 10_000, ShotRule::Proportional, 10_000, 21).unwrap();
        let frac = sets.iter().filter(|k| k.error_count() == 1).count() as f64 / 1e4;
        assert!((frac - 0.5).abs() <= 0.015, "{frac}");
    }

    #[test]
    fn merge_identity_is_noop_and_x_flips() {
        let c = Circuit::new(1, vec![Gate::single(GateKind::Rx, 0, ch(NoiseKind::X, 0.5))]).unwrap();
        let template = build_network(&c);
        let none = ErrorSet {
            id: 0,
            realized: vec![ErrorOp::Identity],
            shots: 1,
        };
        let same = merge_errors(&template, &none).unwrap();
        for (a, b) in same.net.operands().iter().zip(template.net.operands()) {
            assert_eq!(a, b);
        }
        let flip = ErrorSet {
            id: 1,
            realized: vec![ErrorOp::One(Pauli::X)],
            shots: 1,
        };
        let merged = merge_errors(&template, &flip).unwrap();
        assert_eq!(merged.net.signature(), template.net.signature());
        let mut rng = stream_rng(0, 0, 0);
        let path = find_path_greedy(&merged.net, 1, &mut rng);
        let amps = execute_path(&merged.net, &path).unwrap();
        assert!(amps.data()[0].norm() < 1e-15);
        assert!((amps.data()[1].norm() - 1.0).abs() < 1e-15);
        let wrong = ErrorSet {
            id: 2,
            realized: vec![ErrorOp::Two(Pauli::X, Pauli::Z)],
            shots: 1,
        };
        assert!(matches!(merge_errors(&template, &wrong), Err(Error::Arity { .. })));
    }

    #[test]
    fn batch_partitions() {
        assert_eq!(BatchPlan::uniform(50, 24).sizes, vec![24, 24, 2]);
        assert_eq!(BatchPlan::uniform(48, 24).sizes, vec![24, 24]);
        assert_eq!(BatchPlan::with_final(50, 10, 28).sizes, vec![10, 10, 2, 28]);
        assert_eq!(BatchPlan::with_final(16, 10, 28).sizes, vec![16]);
        assert_eq!(BatchPlan::with_final(16, 10, 12).sizes, vec![4, 12]);
        assert!(BatchPlan::new(vec![2, 2]).validate(5).is_err());
        let bad_tau = BatchPlan::new(vec![2]).with_final_mode(FinalMode::Exhaustive { tau: 0.0 });
        assert!(bad_tau.validate(2).is_err());
    }

    #[test]
    fn bell_marginal_is_half_half() {
        let cn = build_network(&bell());
        let counters = Counters::default();
        let cache = PathCache::new();
        let s = Sampler::new(PathSource::Cached(&cache), 4, &counters);
        let plan = BatchPlan::new(vec![1, 1]);
        let mut rng = stream_rng(1, 1, 1);
        let m = s.conditional_marginal(&cn.net, &plan, 0, &[], &mut rng).unwrap();
        assert!((m.probs[0] - 0.5).abs() < 1e-12 && (m.probs[1] - 0.5).abs() < 1e-12);
        let m1 = s.conditional_marginal(&cn.net, &plan, 1, &[1], &mut rng).unwrap();
        assert!((m1.probs[1] - 1.0).abs() < 1e-12);
        assert!((m1.mass - 0.5).abs() < 1e-12);
    }

    #[test]
    fn prefix_length_mismatch_is_usage_error() {
        let cn = build_network(&bell());
        assert!(matches!(
            marginal_network(&cn.net, 1..2, &[]),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            amplitude_network(&cn.net, 0..1, &[]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn impossible_prefix_detected() {
        let cn = build_network(&Circuit::new(2, vec![]).unwrap());
        let counters = Counters::default();
        let s = Sampler::new(PathSource::Fresh, 1, &counters);
        let plan = BatchPlan::new(vec![1, 1]);
        let mut rng = stream_rng(1, 1, 1);
        let r = s.conditional_marginal(&cn.net, &plan, 1, &[1], &mut rng);
        assert!(matches!(r, Err(Error::ImpossiblePrefix { stage: 1, .. })));
    }

    #[test]
    fn ghz_exhaustive_records() {
        let cn = build_network(&ghz3());
        let counters = Counters::default();
        let cache = PathCache::new();
        let s = Sampler::new(PathSource::Cached(&cache), 2, &counters);
        let plan = BatchPlan::new(vec![1, 2])
            .with_nonfinal_shots(2)
            .with_final_mode(FinalMode::Exhaustive { tau: 0.1 });
        let mut rng = stream_rng(4, 4, 4);
        let recs = s.sample_nonproportional(&cn.net, &plan, &mut rng).unwrap();
        let got: Vec<(String, f64)> = recs
            .iter()
            .map(|r| (r.bitstring.clone(), r.prob.unwrap().0))
            .collect();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].0, "000");
        assert_eq!(got[1].0, "111");
        assert!(got.iter().all(|(_, p)| (p - 1.0).abs() < 1e-12));

        let none = plan.with_final_mode(FinalMode::Exhaustive { tau: 1.0 + 1e-9 });
        assert!(s.sample_nonproportional(&cn.net, &none, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn deterministic_circuit_single_record() {
        let c = Circuit::new(
            4,
            (0..4)
                .map(|q| Gate::single(GateKind::X, q, ch(NoiseKind::Y, 0.0)))
                .collect(),
        )
        .unwrap();
        let cn = build_network(&c);
        let counters = Counters::default();
        let cache = PathCache::new();
        let s = Sampler::new(PathSource::Cached(&cache), 2, &counters);
        let plan = BatchPlan::new(vec![2, 2]);
        let mut rng = stream_rng(2, 2, 2);
        let recs = s.sample_proportional(&cn.net, 500, &plan, &mut rng).unwrap();
        assert_eq!(
            recs,
            vec![ShotRecord {
                bitstring: "1111".into(),
                count: 500,
                prob: None
            }]
        );
        let base = sample_baseline(&c, 7, &plan, 1, 3, ExecOptions::default(), 1, &counters)
            .unwrap();
        assert_eq!(base.len(), 1);
        assert_eq!(base[0].count, 7);
    }

    #[test]
    fn multinomial_conserves_total() {
        let mut rng = stream_rng(5, 5, 5);
        for n in [0u64, 1, 17, 100_000] {
            let c = multinomial(&mut rng, n, &[0.1, 0.0, 0.6, 0.3]);
            assert_eq!(c.iter().sum::<u64>(), n);
            assert_eq!(c[1], 0);
        }
    }

    #[test]
    fn distinct_draws_skip_zero_mass() {
        let mut rng = stream_rng(6, 6, 6);
        let d = distinct_draws(&mut rng, &[0.0, 0.5, 0.0, 0.5], 4);
        assert_eq!(d, vec![1, 3]);
    }
}
