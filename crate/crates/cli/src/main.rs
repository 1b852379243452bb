use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use coded_bai::attackers::{equivocation_curve, AttackerKind, CurveConfig};
use coded_bai::baselines::Algorithm;
use coded_bai::design::{DesignOracle, DesignParams};
use coded_bai::environment::NoiseModel;
use coded_bai::harness::{fit_exponent, monte_carlo, SweepConfig, SweepTable, WORKERS_ENV};
use coded_bai::instance::{generate, hardness, read_instance, GeneratorKind, Instance};
use coded_bai::secure::{self, SecureConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "coded-bai", version, about = "Best-arm identification with coded pulls against a copycat observer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one algorithm once and print its result.
    Run(RunArgs),
    /// Monte Carlo error rates over a budget grid.
    Sweep(SweepArgs),
    /// Equivocation curve of an attacker against an algorithm.
    Attack(AttackArgs),
    /// G-optimal design of an arm set.
    Design(DesignArgs),
    /// Fit the error exponent of one algorithm from a sweep table.
    Fit(FitArgs),
}

#[derive(Args)]
struct InstanceArgs {
    /// Instance JSON; overrides the generator.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Generator: sphere or basis-plus.
    #[arg(long, default_value = "sphere")]
    generator: String,
    #[arg(long, default_value_t = 8)]
    d: usize,
    #[arg(long = "k", default_value_t = 16)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    instance_seed: u64,
    #[arg(long)]
    noise_std: Option<f64>,
}

fn generator(name: &str) -> Result<GeneratorKind> {
    Ok(match name {
        "sphere" => GeneratorKind::Sphere,
        "basis-plus" => GeneratorKind::BasisPlus,
        other => bail!("unknown generator {other:?}"),
    })
}

impl InstanceArgs {
    fn load(&self) -> Result<Instance> {
        let inst = match &self.instance {
            Some(p) => read_instance(p).with_context(|| format!("reading {}", p.display()))?,
            None => generate(&generator(&self.generator)?, self.d, self.k, self.instance_seed)?,
        };
        Ok(match self.noise_std {
            Some(s) => inst.with_noise_std(s),
            None => inst,
        })
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, default_value = "secure")]
    algo: String,
    #[arg(long = "T")]
    t: usize,
    #[arg(long)]
    seed: u64,
    /// Full transcript CSV (with rewards).
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Observer transcript CSV (no rewards).
    #[arg(long)]
    observer: Option<PathBuf>,
    /// Diagnostics JSON (secure algorithm only).
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full table with annotations as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long, default_value = "secure")]
    algo: String,
    #[arg(long, default_value = "decomposition")]
    attacker: String,
    #[arg(long)]
    t_prime: Option<usize>,
    #[arg(long, default_value = "sphere")]
    generator: String,
    #[arg(long, default_value_t = 8)]
    d: usize,
    #[arg(long = "k", default_value_t = 16)]
    k: usize,
    #[arg(long = "T")]
    t: usize,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    noise_std: f64,
    /// Reuse one instance for every trial.
    #[arg(long)]
    fixed_instance: bool,
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    /// Curve CSV: set_size,coverage,ci_lo,ci_hi.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DesignArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, default_value_t = 1e-2)]
    eps: f64,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    algo: String,
    #[arg(long)]
    d: Option<usize>,
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn create(path: &PathBuf) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn run(args: RunArgs) -> Result<()> {
    let inst = args.instance.load()?;
    let algo: Algorithm = args.algo.parse()?;
    let (result, diagnostics) = if algo == Algorithm::Secure {
        let config = SecureConfig::default();
        let oracle = DesignOracle::new(config.design);
        let out = secure::run_with(&inst, args.t, args.seed, &config, &oracle)?;
        (out.result, Some(out.diagnostics))
    } else {
        let oracle = DesignOracle::default();
        (algo.run(&inst, args.t, args.seed, &oracle, NoiseModel::Gaussian)?, None)
    };
    if let Some(p) = &args.transcript {
        result.transcript.write_csv(create(p)?)?;
    }
    if let Some(p) = &args.observer {
        result.transcript.write_observer_csv(create(p)?)?;
    }
    if let Some(p) = &args.diagnostics {
        let diag = diagnostics.context("--diagnostics is only available for the secure algorithm")?;
        serde_json::to_writer_pretty(create(p)?, &diag)?;
    }
    let best = hardness(&inst).best;
    print_json(&json!({
        "result": result,
        "best": best,
        "correct": result.declared_best == best,
    }))
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut config = SweepConfig::read(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    if args.seed.is_some() {
        config.master_seed = args.seed;
    }
    if config.master_seed.is_none() {
        bail!("a seed is required: pass --seed or set master_seed in the config");
    }
    if let Some(t) = args.trials {
        config.trials = t;
    }
    if args.workers.is_some() {
        config.workers = args.workers;
    }
    let table = monte_carlo(&config)?;
    match args.out.as_ref().or(config.output.as_ref()) {
        Some(p) => table.write_csv(create(p)?)?,
        None => table.write_csv(io::stdout().lock())?,
    }
    if let Some(p) = args.json.as_ref().or(config.diagnostics.as_ref()) {
        serde_json::to_writer_pretty(create(p)?, &table)?;
    }
    for row in table.rows.iter().filter(|r| r.failures > 0) {
        eprintln!(
            "warning: {} d={} T={}: {} failed trials ({})",
            row.algo,
            row.d,
            row.t,
            row.failures,
            row.failure.as_deref().unwrap_or("")
        );
    }
    Ok(())
}

fn attack(args: AttackArgs) -> Result<()> {
    let mut attacker = AttackerKind::parse(&args.attacker).with_context(|| format!("unknown attacker {:?}", args.attacker))?;
    if let AttackerKind::Threshold { t_prime } = &mut attacker {
        *t_prime = args.t_prime;
    }
    let config = CurveConfig {
        algorithm: args.algo.parse()?,
        attacker,
        generator: generator(&args.generator)?,
        d: args.d,
        k: args.k,
        t: args.t,
        trials: args.trials,
        seed: args.seed,
        noise_std: args.noise_std,
        fresh_instances: !args.fixed_instance,
    };
    let curve = equivocation_curve(&config, &DesignOracle::default())?;
    if let Some(p) = &args.out {
        curve.write_csv(create(p)?)?;
    }
    print_json(&json!({
        "algorithm": curve.algorithm,
        "attacker": curve.attacker,
        "trials": curve.trials,
        "algorithm_correct": curve.algorithm_correct,
        "default_hits": curve.default_hits,
        "equivocation": curve.equivocation(args.eps),
        "coverage": curve.points.iter().map(|p| (p.size, p.coverage)).collect::<Vec<_>>(),
    }))
}

fn design(args: DesignArgs) -> Result<()> {
    let inst = args.instance.load()?;
    let params = DesignParams {
        eps_kw: args.eps,
        ..DesignParams::default()
    };
    let design = coded_bai::design::g_optimal(inst.arms(), &params)?;
    print_json(&json!({
        "dim": design.dim(),
        "g_value": design.g_value,
        "iterations": design.iterations,
        "support": design.support(),
        "weights": design.weights,
    }))
}

fn fit(args: FitArgs) -> Result<()> {
    let file = File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let table = SweepTable::read_csv(file)?;
    print_json(&fit_exponent(&table, &args.algo, args.d)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Attack(a) => attack(a),
        Command::Design(a) => design(a),
        Command::Fit(a) => fit(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
