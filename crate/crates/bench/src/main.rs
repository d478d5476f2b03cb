use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ptsbe::bench::{
    batch_cost_curve, instance_circuit, instance_row, point_circuits, run_config_with_cache,
    speedup, sweep, write_csv, FinalKind, Mode, RunConfig, SweepSpec, DEFAULT_FINAL_BATCH,
    DEFAULT_NONFINAL_BATCH,
};
use ptsbe::engine::BatchPlan;
use ptsbe::{Circuit, PathCache};

#[derive(Parser)]
#[command(name = "ptsbe", version, about = "Batched trajectory sampling for noisy circuits")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write random benchmark circuits as JSON.
    Generate(GenerateArgs),
    /// Sample one circuit in one mode.
    Run(RunArgs),
    /// Run every mode over a grid of (n, g) points.
    Sweep(SweepArgs),
    /// Time the first-stage contraction against batch width.
    BatchCurve(CurveArgs),
}

#[derive(Args, Clone)]
struct CircuitArgs {
    #[arg(long, default_value_t = 0.2)]
    two_qubit_fraction: f64,
    #[arg(long, default_value_t = 0.02)]
    p_min: f64,
    #[arg(long, default_value_t = 0.2)]
    p_max: f64,
    /// Seed of the circuit generator.
    #[arg(long, default_value_t = 0)]
    circuit_seed: u64,
}

#[derive(Args, Clone)]
struct SamplingArgs {
    /// Comma-separated batch widths; defaults to 10-qubit batches and a final batch of up to 28.
    #[arg(long, value_delimiter = ',')]
    batch_sizes: Option<Vec<usize>>,
    #[arg(long, default_value_t = DEFAULT_NONFINAL_BATCH)]
    nonfinal_batch: usize,
    #[arg(long, default_value_t = DEFAULT_FINAL_BATCH)]
    final_batch: usize,
    #[arg(long, default_value = "exhaustive")]
    final_mode: String,
    #[arg(long, default_value_t = 1e-6)]
    tau: f64,
    /// Shots per final-stage draw in direct mode.
    #[arg(long, default_value_t = 1)]
    direct_count: u64,
    /// Distinct branches drawn per non-final stage in non-proportional mode.
    #[arg(long, default_value_t = 1)]
    nonfinal_shots: usize,
    /// Greedy restarts per planned path; the baseline defaults to 1.
    #[arg(long)]
    hypersamples: Option<usize>,
    #[arg(long, default_value_t = 24)]
    baseline_batch: usize,
    #[arg(long, default_value_t = 4)]
    error_sets: usize,
    #[arg(long, default_value_t = 100)]
    shots: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = ptsbe::tensor::DEFAULT_MAX_ENTRIES)]
    max_entries: usize,
    /// Per-instance wall-clock limit in seconds; 0 disables it.
    #[arg(long, default_value_t = 120.0)]
    timeout: f64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

impl SamplingArgs {
    fn config(&self, n: usize, g: usize, mode: Mode, circ: &CircuitArgs) -> Result<RunConfig> {
        let mut cfg = RunConfig::new(n, g, mode);
        cfg.two_qubit_fraction = circ.two_qubit_fraction;
        cfg.p_range = (circ.p_min, circ.p_max);
        cfg.batch_sizes = match &self.batch_sizes {
            Some(b) => b.clone(),
            None => BatchPlan::with_final(n, self.nonfinal_batch, self.final_batch).sizes,
        };
        cfg.final_kind = self.final_mode.parse::<FinalKind>()?;
        cfg.tau = self.tau;
        cfg.direct_count = self.direct_count;
        cfg.nonfinal_shots = self.nonfinal_shots;
        if let Some(h) = self.hypersamples {
            cfg.hypersamples = h;
        }
        cfg.baseline_batch = self.baseline_batch;
        cfg.error_sets = self.error_sets;
        cfg.total_shots = self.shots;
        cfg.seed = self.seed;
        cfg.max_entries = self.max_entries;
        cfg.timeout_s = (self.timeout > 0.0).then_some(self.timeout);
        cfg.workers = self.workers;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    g: usize,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[command(flatten)]
    circuit: CircuitArgs,
    /// Output directory.
    #[arg(long)]
    circuits: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    g: Option<usize>,
    #[arg(long, default_value = "ptsbe-nonproportional")]
    mode: Mode,
    /// Load the circuit from a JSON file instead of generating it.
    #[arg(long)]
    circuit_file: Option<PathBuf>,
    /// Generated instance index.
    #[arg(long, default_value_t = 0)]
    instance: usize,
    #[command(flatten)]
    circuit: CircuitArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Also run the baseline on the same circuit and report the speedup.
    #[arg(long)]
    compare_baseline: bool,
    /// Reuse and update a path cache file.
    #[arg(long)]
    path_cache: Option<PathBuf>,
    /// CSV output file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the full result, records included, as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    g: Vec<usize>,
    #[arg(
        long = "mode",
        value_delimiter = ',',
        default_value = "ptsbe-proportional,ptsbe-nonproportional,unoptimized-ptsbe,baseline"
    )]
    modes: Vec<Mode>,
    #[arg(long, default_value_t = 10)]
    circuits_per_point: usize,
    /// Sweep points run concurrently.
    #[arg(long, default_value_t = 1)]
    point_workers: usize,
    #[command(flatten)]
    circuit: CircuitArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Per-instance CSV.
    #[arg(long)]
    out: PathBuf,
    /// Per-point summary CSV; defaults to `<out>` with a `.points.csv` suffix.
    #[arg(long)]
    points: Option<PathBuf>,
    /// Also write the pre-generated circuits here.
    #[arg(long)]
    circuits: Option<PathBuf>,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    g: usize,
    #[arg(long, default_value_t = 4)]
    b_min: usize,
    /// Defaults to min(n, 16).
    #[arg(long)]
    b_max: Option<usize>,
    #[arg(long, default_value_t = 100)]
    hypersamples: usize,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    instance: usize,
    #[arg(long, default_value_t = ptsbe::tensor::DEFAULT_MAX_ENTRIES)]
    max_entries: usize,
    #[command(flatten)]
    circuit: CircuitArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Generate(a) => generate(a),
        Cmd::Run(a) => run(a),
        Cmd::Sweep(a) => run_sweep(a),
        Cmd::BatchCurve(a) => curve(a),
    }
}

fn write_circuits(dir: &Path, n: usize, g: usize, circuits: &[Circuit]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (i, c) in circuits.iter().enumerate() {
        let file = dir.join(format!("n{n}_g{g}_{i:03}.json"));
        fs::write(&file, c.to_json()).with_context(|| format!("writing {}", file.display()))?;
    }
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let c = &a.circuit;
    let circuits = (0..a.count)
        .map(|i| instance_circuit(a.n, a.g, c.two_qubit_fraction, (c.p_min, c.p_max), c.circuit_seed, i))
        .collect::<ptsbe::Result<Vec<_>>>()?;
    write_circuits(&a.circuits, a.n, a.g, &circuits)?;
    println!("wrote {} circuits to {}", circuits.len(), a.circuits.display());
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let circuit = match &a.circuit_file {
        Some(f) => {
            let text = fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
            Circuit::from_json(&text)?
        }
        None => {
            let (Some(n), Some(g)) = (a.n, a.g) else {
                bail!("--n and --g are required without --circuit-file");
            };
            let c = &a.circuit;
            instance_circuit(n, g, c.two_qubit_fraction, (c.p_min, c.p_max), c.circuit_seed, a.instance)?
        }
    };
    let (n, g) = (circuit.n, circuit.gates.len());
    let cfg = a.sampling.config(n, g, a.mode, &a.circuit)?;
    let cache = match &a.path_cache {
        Some(f) if f.exists() => PathCache::load_json(f)?,
        _ => PathCache::new(),
    };
    let result = run_config_with_cache(&circuit, &cfg, &cache);
    let mut row = instance_row(&cfg, a.circuit.circuit_seed, a.instance, &result)?;
    if a.compare_baseline && a.mode != Mode::Baseline && row.error.is_none() {
        let bcfg = cfg.with_mode(Mode::Baseline);
        let b = instance_row(&bcfg, a.circuit.circuit_seed, a.instance, &run_config_with_cache(&circuit, &bcfg, &PathCache::new()))?;
        if b.error.is_none() {
            row.speedup = speedup(row.throughput, b.throughput).ok();
        }
    }
    if let Some(f) = &a.path_cache {
        cache.save_json(f)?;
    }
    if let Some(out) = &a.out {
        write_csv(File::create(out)?, std::slice::from_ref(&row))?;
    }
    match result {
        Ok(r) if a.json => println!("{}", r.to_json()),
        Ok(r) => {
            let mut stdout = io::stdout().lock();
            writeln!(stdout, "mode            {}", r.mode)?;
            writeln!(stdout, "circuit         n={} g={} two-qubit={}", r.n, r.gates, circuit.two_qubit_count())?;
            writeln!(stdout, "batches         {:?}", cfg.batch_plan().sizes)?;
            writeln!(stdout, "shots           {} total, {} unique labeled", r.total_shots, r.unique_shots)?;
            writeln!(stdout, "plan            {:.4} s, {} events", r.times.plan_s, r.counts.plan_events)?;
            writeln!(stdout, "loop            {:.4} s, {} contractions", r.times.loop_s, r.counts.contract_events)?;
            writeln!(stdout, "throughput      {:.3} /s", row.throughput)?;
            if let Some(s) = row.speedup {
                writeln!(stdout, "speedup         {s:.2}x")?;
            }
        }
        Err(e) => println!("failed: {e}"),
    }
    Ok(())
}

fn run_sweep(a: SweepArgs) -> Result<()> {
    let mut spec = SweepSpec::new(a.n.clone(), a.g.clone(), a.modes.clone());
    spec.base = a.sampling.config(a.n[0], a.g[0], a.modes[0], &a.circuit)?;
    spec.nonfinal_batch = a.sampling.nonfinal_batch;
    spec.final_batch = a.sampling.final_batch;
    spec.circuits_per_point = a.circuits_per_point;
    spec.circuit_seed = a.circuit.circuit_seed;
    spec.point_workers = a.point_workers;
    if a.sampling.batch_sizes.is_some() {
        bail!("sweep derives batch sizes per point; use --nonfinal-batch and --final-batch");
    }
    if let Some(dir) = &a.circuits {
        for &n in &spec.ns {
            for &g in &spec.gs {
                write_circuits(dir, n, g, &point_circuits(&spec, n, g)?)?;
            }
        }
    }
    let out = sweep(&spec)?;
    write_csv(File::create(&a.out)?, &out.instances)?;
    let points = a.points.unwrap_or_else(|| a.out.with_extension("points.csv"));
    write_csv(File::create(&points)?, &out.points)?;
    for p in &out.points {
        let sp = p.speedup.map(|s| format!("{s:.2}x")).unwrap_or_else(|| "-".into());
        println!(
            "n={:<3} g={:<4} {:<22} throughput {:>12.3}/s (gsd {:.2})  speedup {:>9}  failed {:.0}%{}",
            p.n,
            p.g,
            p.mode,
            p.throughput,
            p.throughput_gsd.unwrap_or(f64::NAN),
            sp,
            100.0 * p.failed_fraction,
            if p.flagged { "  [flagged]" } else { "" }
        );
    }
    println!("wrote {} and {}", a.out.display(), points.display());
    Ok(())
}

fn curve(a: CurveArgs) -> Result<()> {
    let c = &a.circuit;
    let circuit = instance_circuit(a.n, a.g, c.two_qubit_fraction, (c.p_min, c.p_max), c.circuit_seed, a.instance)?;
    let b_max = a.b_max.unwrap_or(a.n.min(16));
    let widths: Vec<usize> = (a.b_min..=b_max).collect();
    let rows = batch_cost_curve(&circuit, &widths, a.hypersamples, a.reps, a.max_entries, c.circuit_seed)?;
    println!("{:>4} {:>14} {:>14} {:>14}", "b", "stage_s", "per_qubit_s", "qubits/s");
    for r in &rows {
        println!("{:>4} {:>14.6} {:>14.6} {:>14.1}", r.b, r.stage_time_s, r.per_qubit_s, r.qubits_per_s);
    }
    if let Some(out) = &a.out {
        write_csv(File::create(out)?, &rows)?;
    }
    Ok(())
}
