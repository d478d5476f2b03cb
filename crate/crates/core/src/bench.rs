//! Benchmark protocol: run configurations for every sampling mode,
//! throughput and speedup metrics, geometric statistics, and CSV sweeps.

use std::fmt;
use std::io;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{random_circuit, Circuit};
use crate::engine::{
    presample_errors, run_ptsbe_with_cache, sample_baseline, sample_unoptimized_ptsbe,
    stage_network, stream_rng, BatchPlan, Counters, FinalMode, LabeledRecord, PhaseTimes,
    PtsbeConfig, RunResult, SamplingMode, ShotRule, WorkCounts, DEFAULT_TAU,
};
use crate::error::{Error, Result};
use crate::path::{find_path_greedy, PathCache};
use crate::tensor::{execute_path_with, ExecOptions, DEFAULT_MAX_ENTRIES};

pub const DEFAULT_NONFINAL_BATCH: usize = 10;
pub const DEFAULT_FINAL_BATCH: usize = 28;
pub const DEFAULT_HYPERSAMPLES: usize = 100;
pub const BASELINE_HYPERSAMPLES: usize = 1;
pub const BASELINE_BATCH: usize = 24;
pub const DEFAULT_TIMEOUT_S: f64 = 120.0;
/// Share of failed instances above which a sweep point is flagged.
pub const FAILED_FLAG_FRACTION: f64 = 0.2;

const DOMAIN_CIRCUITS: u64 = 0x43_49_52;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    PtsbeProportional,
    PtsbeNonproportional,
    UnoptimizedPtsbe,
    Baseline,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::PtsbeProportional,
        Mode::PtsbeNonproportional,
        Mode::UnoptimizedPtsbe,
        Mode::Baseline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::PtsbeProportional => "ptsbe-proportional",
            Mode::PtsbeNonproportional => "ptsbe-nonproportional",
            Mode::UnoptimizedPtsbe => "unoptimized-ptsbe",
            Mode::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinalKind {
    Direct,
    Exhaustive,
}

impl FromStr for FinalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(FinalKind::Direct),
            "exhaustive" => Ok(FinalKind::Exhaustive),
            _ => Err(Error::Usage(format!("unknown final mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n: usize,
    pub g: usize,
    pub two_qubit_fraction: f64,
    pub p_range: (f64, f64),
    pub error_sets: usize,
    pub total_shots: u64,
    pub mode: Mode,
    pub batch_sizes: Vec<usize>,
    /// Fixed batch width of the baseline.
    pub baseline_batch: usize,
    pub hypersamples: usize,
    pub final_kind: FinalKind,
    pub tau: f64,
    pub direct_count: u64,
    pub nonfinal_shots: usize,
    pub seed: u64,
    pub max_entries: usize,
    pub timeout_s: Option<f64>,
    pub workers: usize,
}

impl RunConfig {
    pub fn new(n: usize, g: usize, mode: Mode) -> Self {
        Self {
            n,
            g,
            two_qubit_fraction: 0.2,
            p_range: (0.02, 0.2),
            error_sets: 4,
            total_shots: 100,
            mode,
            batch_sizes: BatchPlan::with_final(n, DEFAULT_NONFINAL_BATCH, DEFAULT_FINAL_BATCH).sizes,
            baseline_batch: BASELINE_BATCH,
            hypersamples: if mode == Mode::Baseline {
                BASELINE_HYPERSAMPLES
            } else {
                DEFAULT_HYPERSAMPLES
            },
            final_kind: if mode == Mode::PtsbeNonproportional {
                FinalKind::Exhaustive
            } else {
                FinalKind::Direct
            },
            tau: DEFAULT_TAU,
            direct_count: 1,
            nonfinal_shots: 1,
            seed: 0,
            max_entries: DEFAULT_MAX_ENTRIES,
            timeout_s: Some(DEFAULT_TIMEOUT_S),
            workers: 1,
        }
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        let mut c = self.clone();
        c.mode = mode;
        if mode == Mode::Baseline {
            c.hypersamples = BASELINE_HYPERSAMPLES;
        }
        c
    }

    /// Batch plan the mode runs with.
    pub fn batch_plan(&self) -> BatchPlan {
        if self.mode == Mode::Baseline {
            return BatchPlan::uniform(self.n, self.baseline_batch.min(self.n));
        }
        let final_mode = match self.final_kind {
            FinalKind::Direct => FinalMode::Direct {
                count: self.direct_count,
            },
            FinalKind::Exhaustive => FinalMode::Exhaustive { tau: self.tau },
        };
        BatchPlan::new(self.batch_sizes.clone())
            .with_nonfinal_shots(self.nonfinal_shots)
            .with_final_mode(final_mode)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.g == 0 || self.error_sets == 0 || self.hypersamples == 0 {
            return Err(Error::Usage("n, g, error sets and hypersamples must be positive".into()));
        }
        if self.total_shots == 0 || self.workers == 0 || self.baseline_batch == 0 {
            return Err(Error::Usage("shots, workers and baseline batch must be positive".into()));
        }
        self.batch_plan().validate(self.n)
    }

    fn ptsbe(&self, sampling: SamplingMode) -> PtsbeConfig {
        PtsbeConfig {
            error_sets: self.error_sets,
            total_shots: self.total_shots.max(self.error_sets as u64),
            shot_rule: ShotRule::Proportional,
            plan: self.batch_plan(),
            sampling,
            hypersamples: self.hypersamples,
            seed: self.seed,
            max_entries: self.max_entries,
            timeout_s: self.timeout_s,
            workers: self.workers,
        }
    }
}

/// Circuit `instance` of a sweep point; regenerable from the row alone.
pub fn instance_circuit(
    n: usize,
    g: usize,
    two_qubit_fraction: f64,
    p_range: (f64, f64),
    circuit_seed: u64,
    instance: usize,
) -> Result<Circuit> {
    let lane = ((n as u64) << 40) ^ ((g as u64) << 20) ^ instance as u64;
    let mut rng = stream_rng(circuit_seed, DOMAIN_CIRCUITS, lane);
    random_circuit(n, g, two_qubit_fraction, p_range, &mut rng)
}

/// Run one circuit under `cfg.mode`.
pub fn run_config(c: &Circuit, cfg: &RunConfig) -> Result<RunResult> {
    run_config_with_cache(c, cfg, &PathCache::new())
}

pub fn run_config_with_cache(c: &Circuit, cfg: &RunConfig, cache: &PathCache) -> Result<RunResult> {
    cfg.validate()?;
    if c.n != cfg.n {
        return Err(Error::Usage(format!("circuit has {} qubits, config {}", c.n, cfg.n)));
    }
    match cfg.mode {
        Mode::PtsbeProportional => run_ptsbe_with_cache(c, &cfg.ptsbe(SamplingMode::Proportional), cache),
        Mode::PtsbeNonproportional => {
            run_ptsbe_with_cache(c, &cfg.ptsbe(SamplingMode::Nonproportional), cache)
        }
        Mode::UnoptimizedPtsbe => run_unoptimized(c, cfg),
        Mode::Baseline => run_baseline(c, cfg),
    }
}

fn run_unoptimized(c: &Circuit, cfg: &RunConfig) -> Result<RunResult> {
    let start = Instant::now();
    let pc = cfg.ptsbe(SamplingMode::Proportional);
    let exec = pc.exec_options(start);
    let counters = Counters::default();
    let t = Instant::now();
    let sets = presample_errors(c, pc.error_sets, pc.shot_rule, pc.total_shots, cfg.seed)?;
    let generate_s = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let records = sample_unoptimized_ptsbe(
        c, &sets, &pc.plan, cfg.hypersamples, cfg.seed, exec, cfg.workers, &counters,
    )?;
    let loop_s = t.elapsed().as_secs_f64();
    Ok(finish(c, cfg, records, generate_s, loop_s, &counters))
}

fn run_baseline(c: &Circuit, cfg: &RunConfig) -> Result<RunResult> {
    let start = Instant::now();
    let exec = ExecOptions {
        max_entries: cfg.max_entries,
        deadline: cfg.timeout_s.map(|s| start + Duration::from_secs_f64(s)),
    };
    let counters = Counters::default();
    let t = Instant::now();
    let records = sample_baseline(
        c,
        cfg.total_shots,
        &cfg.batch_plan(),
        cfg.hypersamples,
        cfg.seed,
        exec,
        cfg.workers,
        &counters,
    )?;
    let loop_s = t.elapsed().as_secs_f64();
    let labeled = records
        .into_iter()
        .map(|record| LabeledRecord {
            error_set: 0,
            record,
        })
        .collect();
    let mut r = finish(c, cfg, labeled, 0.0, loop_s, &counters);
    // every baseline shot is its own trajectory
    r.unique_shots = r.total_shots;
    Ok(r)
}

fn finish(
    c: &Circuit,
    cfg: &RunConfig,
    mut records: Vec<LabeledRecord>,
    generate_s: f64,
    loop_s: f64,
    counters: &Counters,
) -> RunResult {
    records.sort();
    let total_shots = records.iter().map(|r| r.record.count).sum();
    RunResult {
        mode: cfg.mode.to_string(),
        n: c.n,
        gates: c.gates.len(),
        seed: cfg.seed,
        config: serde_json::to_value(cfg).expect("config serializes"),
        unique_shots: records.len() as u64,
        total_shots,
        records,
        times: PhaseTimes {
            generate_s,
            plan_s: counters.plan_time().as_secs_f64(),
            loop_s,
            aggregate_s: 0.0,
            contraction_s: counters.contract_time().as_secs_f64(),
        },
        counts: WorkCounts {
            plan_events: counters.plan_events(),
            contract_events: counters.contract_events(),
            cache_hits: 0,
        },
    }
}

/// Unique labeled bitstrings per second of sampling loop.
pub fn throughput(unique_shots: u64, loop_seconds: f64) -> Result<f64> {
    if loop_seconds.is_nan() || loop_seconds <= 0.0 {
        return Err(Error::Measurement(format!(
            "loop time {loop_seconds} s is not positive"
        )));
    }
    Ok(unique_shots as f64 / loop_seconds)
}

pub fn speedup(throughput: f64, baseline_throughput: f64) -> Result<f64> {
    if baseline_throughput.is_nan() || baseline_throughput <= 0.0 {
        return Err(Error::Measurement(format!(
            "baseline throughput {baseline_throughput} is not positive"
        )));
    }
    Ok(throughput / baseline_throughput)
}

/// Loop time a mode is measured by. Planning runs outside the loop for the
/// cached-path modes; the baseline and the per-set mode plan inside it.
pub fn loop_seconds(r: &RunResult) -> f64 {
    r.times.loop_s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub throughput: f64,
    pub path_time_s: f64,
    pub contraction_time_s: f64,
    pub plan_events: u64,
    pub contract_events: u64,
    pub speedup: Option<f64>,
}

pub fn metrics(r: &RunResult) -> Result<Metrics> {
    Ok(Metrics {
        throughput: throughput(r.unique_shots, loop_seconds(r))?,
        path_time_s: r.times.plan_s,
        contraction_time_s: r.times.contraction_s,
        plan_events: r.counts.plan_events,
        contract_events: r.counts.contract_events,
        speedup: None,
    })
}

/// Geometric mean and geometric standard deviation (population form).
pub fn geo_stats(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Domain("no values".into()));
    }
    if let Some(v) = values.iter().find(|v| v.is_nan() || **v <= 0.0) {
        return Err(Error::Domain(format!("{v} is not positive")));
    }
    let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / logs.len() as f64;
    Ok((mean.exp(), var.sqrt().exp()))
}

/// One CSV row: a single instance, or a point summary when `instance` is
/// empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub g: usize,
    pub two_qubit_fraction: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub circuit_seed: u64,
    pub instance: Option<usize>,
    pub mode: String,
    pub error_sets: usize,
    pub total_shots: u64,
    /// Semicolon-separated.
    pub batch_sizes: String,
    pub baseline_batch: usize,
    pub hypersamples: usize,
    pub final_mode: String,
    pub tau: f64,
    pub direct_count: u64,
    pub nonfinal_shots: usize,
    pub seed: u64,
    pub unique_shots: u64,
    pub path_time_s: f64,
    pub loop_time_s: f64,
    pub contraction_time_s: f64,
    pub throughput: f64,
    pub throughput_gsd: Option<f64>,
    pub speedup: Option<f64>,
    pub speedup_gsd: Option<f64>,
    pub path_contract_ratio: Option<f64>,
    pub plan_events: u64,
    pub contract_events: u64,
    pub failed_fraction: f64,
    pub flagged: bool,
    pub error: Option<String>,
}

impl SweepRow {
    fn echo(cfg: &RunConfig, circuit_seed: u64, instance: Option<usize>) -> Self {
        Self {
            n: cfg.n,
            g: cfg.g,
            two_qubit_fraction: cfg.two_qubit_fraction,
            p_min: cfg.p_range.0,
            p_max: cfg.p_range.1,
            circuit_seed,
            instance,
            mode: cfg.mode.to_string(),
            error_sets: cfg.error_sets,
            total_shots: cfg.total_shots,
            batch_sizes: cfg
                .batch_sizes
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(";"),
            baseline_batch: cfg.baseline_batch,
            hypersamples: cfg.hypersamples,
            final_mode: match cfg.final_kind {
                FinalKind::Direct => "direct".into(),
                FinalKind::Exhaustive => "exhaustive".into(),
            },
            tau: cfg.tau,
            direct_count: cfg.direct_count,
            nonfinal_shots: cfg.nonfinal_shots,
            seed: cfg.seed,
            unique_shots: 0,
            path_time_s: 0.0,
            loop_time_s: 0.0,
            contraction_time_s: 0.0,
            throughput: 0.0,
            throughput_gsd: None,
            speedup: None,
            speedup_gsd: None,
            path_contract_ratio: None,
            plan_events: 0,
            contract_events: 0,
            failed_fraction: 0.0,
            flagged: false,
            error: None,
        }
    }

    /// Rebuild the run configuration this row was produced with.
    pub fn config(&self) -> Result<RunConfig> {
        let mode: Mode = self.mode.parse()?;
        let batch_sizes = self
            .batch_sizes
            .split(';')
            .map(|s| s.parse::<usize>().map_err(|e| Error::Usage(format!("batch sizes: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let mut cfg = RunConfig::new(self.n, self.g, mode);
        cfg.two_qubit_fraction = self.two_qubit_fraction;
        cfg.p_range = (self.p_min, self.p_max);
        cfg.error_sets = self.error_sets;
        cfg.total_shots = self.total_shots;
        cfg.batch_sizes = batch_sizes;
        cfg.baseline_batch = self.baseline_batch;
        cfg.hypersamples = self.hypersamples;
        cfg.final_kind = self.final_mode.parse()?;
        cfg.tau = self.tau;
        cfg.direct_count = self.direct_count;
        cfg.nonfinal_shots = self.nonfinal_shots;
        cfg.seed = self.seed;
        Ok(cfg)
    }

    /// Circuit of an instance row.
    pub fn circuit(&self) -> Result<Circuit> {
        let instance = self
            .instance
            .ok_or_else(|| Error::Usage("summary rows have no circuit".into()))?;
        instance_circuit(
            self.n,
            self.g,
            self.two_qubit_fraction,
            (self.p_min, self.p_max),
            self.circuit_seed,
            instance,
        )
    }
}

/// CSV row for one run. Resource-guard failures become flagged rows; other
/// errors propagate.
pub fn instance_row(
    cfg: &RunConfig,
    circuit_seed: u64,
    instance: usize,
    r: &Result<RunResult>,
) -> Result<SweepRow> {
    let mut row = SweepRow::echo(cfg, circuit_seed, Some(instance));
    match r {
        Ok(res) => {
            let m = metrics(res)?;
            row.unique_shots = res.unique_shots;
            row.path_time_s = m.path_time_s;
            row.loop_time_s = loop_seconds(res);
            row.contraction_time_s = m.contraction_time_s;
            row.throughput = m.throughput;
            row.plan_events = m.plan_events;
            row.contract_events = m.contract_events;
            if m.plan_events > 0 && m.contract_events > 0 && m.contraction_time_s > 0.0 {
                let per_plan = m.path_time_s / m.plan_events as f64;
                let per_contract = m.contraction_time_s / m.contract_events as f64;
                row.path_contract_ratio = Some(per_plan / per_contract);
            }
        }
        Err(e) if e.is_resource_guard() => {
            row.failed_fraction = 1.0;
            row.flagged = true;
            row.error = Some(e.to_string());
        }
        Err(e) => return Err(Error::Usage(format!("{} instance {instance}: {e}", cfg.mode))),
    }
    Ok(row)
}

/// Sweep grid: every `(n, g)` point gets `circuits_per_point` pre-generated
/// circuits shared by all modes.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub ns: Vec<usize>,
    pub gs: Vec<usize>,
    pub modes: Vec<Mode>,
    /// Template for every run; `n`, `g` and `mode` are overridden per point.
    pub base: RunConfig,
    /// Final batch width for the cached-path modes, capped at `n`.
    pub final_batch: usize,
    pub nonfinal_batch: usize,
    pub circuits_per_point: usize,
    pub circuit_seed: u64,
    /// Sweep points processed concurrently.
    pub point_workers: usize,
}

impl SweepSpec {
    pub fn new(ns: Vec<usize>, gs: Vec<usize>, modes: Vec<Mode>) -> Self {
        Self {
            ns,
            gs,
            modes,
            base: RunConfig::new(2, 1, Mode::PtsbeNonproportional),
            final_batch: DEFAULT_FINAL_BATCH,
            nonfinal_batch: DEFAULT_NONFINAL_BATCH,
            circuits_per_point: 10,
            circuit_seed: 0,
            point_workers: 1,
        }
    }

    pub fn point_config(&self, n: usize, g: usize, mode: Mode) -> RunConfig {
        let mut cfg = self.base.clone();
        cfg.n = n;
        cfg.g = g;
        cfg.batch_sizes = BatchPlan::with_final(n, self.nonfinal_batch, self.final_batch).sizes;
        cfg.with_mode(mode)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    pub instances: Vec<SweepRow>,
    pub points: Vec<SweepRow>,
}

pub fn sweep(spec: &SweepSpec) -> Result<SweepOutput> {
    let grid: Vec<(usize, usize)> = spec
        .ns
        .iter()
        .flat_map(|&n| spec.gs.iter().map(move |&g| (n, g)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.point_workers.max(1))
        .build()
        .map_err(|e| Error::Usage(format!("sweep pool: {e}")))?;
    let per_point: Vec<SweepOutput> =
        pool.install(|| grid.par_iter().map(|&(n, g)| sweep_point(spec, n, g)).collect::<Result<_>>())?;
    let mut out = SweepOutput::default();
    for p in per_point {
        out.instances.extend(p.instances);
        out.points.extend(p.points);
    }
    Ok(out)
}

/// The pre-generated circuits of point `(n, g)`, shared by every mode.
pub fn point_circuits(spec: &SweepSpec, n: usize, g: usize) -> Result<Vec<Circuit>> {
    (0..spec.circuits_per_point)
        .map(|i| {
            instance_circuit(n, g, spec.base.two_qubit_fraction, spec.base.p_range, spec.circuit_seed, i)
        })
        .collect()
}

fn sweep_point(spec: &SweepSpec, n: usize, g: usize) -> Result<SweepOutput> {
    let circuits = point_circuits(spec, n, g)?;
    let mut out = SweepOutput::default();
    let mut baseline_tp: Vec<Option<f64>> = vec![None; circuits.len()];
    // baseline first so every other mode can report its speedup
    let mut modes = spec.modes.clone();
    modes.sort_by_key(|m| *m != Mode::Baseline);
    for mode in modes {
        let cfg = spec.point_config(n, g, mode);
        let mut rows = Vec::with_capacity(circuits.len());
        for (i, c) in circuits.iter().enumerate() {
            let r = run_config(c, &cfg);
            let mut row = instance_row(&cfg, spec.circuit_seed, i, &r)?;
            if row.error.is_none() {
                if mode == Mode::Baseline {
                    baseline_tp[i] = Some(row.throughput);
                } else if let Some(b) = baseline_tp[i] {
                    row.speedup = speedup(row.throughput, b).ok();
                }
            }
            rows.push(row);
        }
        out.points.push(summarize(&cfg, spec.circuit_seed, &rows)?);
        out.instances.extend(rows);
    }
    Ok(out)
}

fn summarize(cfg: &RunConfig, circuit_seed: u64, rows: &[SweepRow]) -> Result<SweepRow> {
    let mut p = SweepRow::echo(cfg, circuit_seed, None);
    let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.error.is_none()).collect();
    p.failed_fraction = 1.0 - ok.len() as f64 / rows.len().max(1) as f64;
    p.flagged = p.failed_fraction > FAILED_FLAG_FRACTION;
    let tps: Vec<f64> = ok.iter().map(|r| r.throughput).filter(|t| *t > 0.0).collect();
    if !tps.is_empty() {
        let (m, s) = geo_stats(&tps)?;
        p.throughput = m;
        p.throughput_gsd = Some(s);
    }
    let sps: Vec<f64> = ok.iter().filter_map(|r| r.speedup).filter(|s| *s > 0.0).collect();
    if !sps.is_empty() {
        let (m, s) = geo_stats(&sps)?;
        p.speedup = Some(m);
        p.speedup_gsd = Some(s);
    }
    let mean = |f: fn(&SweepRow) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / ok.len().max(1) as f64;
    p.unique_shots = ok.iter().map(|r| r.unique_shots).sum();
    p.path_time_s = mean(|r| r.path_time_s);
    p.loop_time_s = mean(|r| r.loop_time_s);
    p.contraction_time_s = mean(|r| r.contraction_time_s);
    p.plan_events = ok.iter().map(|r| r.plan_events).sum();
    p.contract_events = ok.iter().map(|r| r.contract_events).sum();
    Ok(p)
}

pub fn write_csv<W: io::Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read, T: for<'de> Deserialize<'de>>(r: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Per-stage contraction cost of a first batch of width `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchCostRow {
    pub n: usize,
    pub g: usize,
    pub b: usize,
    pub stage_time_s: f64,
    pub per_qubit_s: f64,
    pub qubits_per_s: f64,
    pub est_cost: f64,
    pub failed: bool,
}

/// Time the first-stage contraction for each batch width in `widths`,
/// taking the best of `reps` repetitions. Planning is not timed.
pub fn batch_cost_curve(
    c: &Circuit,
    widths: &[usize],
    hypersamples: usize,
    reps: usize,
    max_entries: usize,
    seed: u64,
) -> Result<Vec<BatchCostRow>> {
    let template = crate::circuit::build_network(c);
    let mut rows = Vec::new();
    for &b in widths {
        if b == 0 || b > c.n {
            return Err(Error::Usage(format!("batch width {b} invalid for {} qubits", c.n)));
        }
        let plan = BatchPlan::new(vec![b, c.n - b].into_iter().filter(|&s| s > 0).collect());
        let (net, _) = stage_network(&template.net, &plan, 0, &[])?;
        let mut rng = stream_rng(seed, b as u64, 0);
        let path = find_path_greedy(&net, hypersamples, &mut rng);
        let exec = ExecOptions {
            max_entries,
            deadline: None,
        };
        let mut best = f64::INFINITY;
        let mut failed = false;
        for _ in 0..reps.max(1) {
            let t = Instant::now();
            match execute_path_with(&net, &path, &exec) {
                Ok(_) => best = best.min(t.elapsed().as_secs_f64()),
                Err(e) if e.is_resource_guard() => {
                    failed = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let (stage_time_s, per_qubit_s, qubits_per_s) = if failed {
            (f64::NAN, f64::NAN, 0.0)
        } else {
            (best, best / b as f64, b as f64 / best)
        };
        rows.push(BatchCostRow {
            n: c.n,
            g: c.gates.len(),
            b,
            stage_time_s,
            per_qubit_s,
            qubits_per_s,
            est_cost: path.est_cost,
            failed,
        });
    }
    Ok(rows)
}
