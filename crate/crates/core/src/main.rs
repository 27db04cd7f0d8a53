use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use starsieve::classes::{ClassSpec, DensityFamily, StarShapedClass};
use starsieve::density::{GridDensity, DEFAULT_BIG_C};
use starsieve::harness::{emit_report, parse_data, run_experiment, thread_pool, ExperimentConfig, ReportFormat};
use starsieve::packing::{entropy_curve, geometric_grid, greedy_packing, EntropyBudget, Region, TAU_GRID_POINTS};
use starsieve::rng::{stream, streams};
use starsieve::tournament::{estimate, EstimatorConfig, Sample};
use starsieve::verify::run_verify;

#[derive(Parser)]
#[command(name = "starsieve", version, about = "Robust sieve density estimation on bounded grid classes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a density from one dataset.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo risk experiment.
    Experiment(ExperimentArgs),
    /// Print the local entropy curve of a class as CSV.
    Entropy(EntropyArgs),
    /// Dump a greedy packing set as JSON.
    Packing(PackingArgs),
    /// Run the oracle cross-checks; exits nonzero on failure.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// Class spec as inline JSON or a path to a JSON file.
    #[arg(long)]
    class_spec: String,
    /// CSV file with one real per line.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// A positive real, or `none` for the theoretical constant.
    #[arg(long, default_value = "none")]
    c10_override: String,
    #[arg(long)]
    c_local_override: Option<f64>,
    #[arg(long)]
    max_levels: Option<usize>,
    #[arg(long = "C", default_value_t = DEFAULT_BIG_C)]
    big_c: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    format: ReportFormat,
    /// Record wall-clock time per trial (makes reports non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct EntropyArgs {
    #[arg(long)]
    class_spec: String,
    /// Largest radius of the grid; defaults to the class diameter.
    #[arg(long)]
    tau_max: Option<f64>,
    #[arg(long, default_value_t = TAU_GRID_POINTS)]
    points: usize,
    #[arg(long, default_value_t = 2.0 * (DEFAULT_BIG_C + 1.0))]
    c_local: f64,
    #[arg(long, default_value_t = EntropyBudget::default().budget)]
    budget: usize,
    #[arg(long, default_value_t = EntropyBudget::default().n_centers)]
    n_centers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PackingArgs {
    #[arg(long)]
    class_spec: String,
    #[arg(long)]
    delta: f64,
    /// Ball center as a JSON array of bin values; whole class when absent.
    #[arg(long, requires = "radius")]
    center: Option<String>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long, default_value_t = 5_000)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn read_json_arg(arg: &str) -> anyhow::Result<String> {
    if arg.trim_start().starts_with(['{', '[']) {
        return Ok(arg.to_string());
    }
    std::fs::read_to_string(arg).with_context(|| format!("reading {arg}"))
}

fn load_class(arg: &str) -> anyhow::Result<StarShapedClass> {
    let spec: ClassSpec = serde_json::from_str(&read_json_arg(arg)?).context("parsing class spec")?;
    Ok(StarShapedClass::from_spec(&spec)?)
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: serde::Serialize>(value: &T, path: Option<&Path>) -> anyhow::Result<()> {
    let mut out = output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn parse_c10(text: &str) -> anyhow::Result<Option<f64>> {
    if text.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let v: f64 = text.parse().with_context(|| format!("--c10-override: {text:?}"))?;
    if !(v.is_finite() && v > 0.0) {
        bail!("--c10-override must be positive, got {v}");
    }
    Ok(Some(v))
}

fn run_estimate(args: EstimateArgs) -> anyhow::Result<()> {
    let class = load_class(&args.class_spec)?;
    let file = File::open(&args.data).with_context(|| format!("opening {}", args.data.display()))?;
    let sample = Sample::new(parse_data(file)?, args.epsilon)?;
    let config = EstimatorConfig {
        big_c: args.big_c,
        c10_override: parse_c10(&args.c10_override)?,
        c_local_override: args.c_local_override,
        max_levels: args.max_levels,
        seed: args.seed,
        ..EstimatorConfig::default()
    };
    let result = estimate(&class, &sample, &config)?;
    write_json(&result, args.out.as_deref())
}

fn run_experiment_cmd(args: ExperimentArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut config = ExperimentConfig::from_json(&text)?;
    config.record_timing |= args.timing;
    let report = run_experiment(&config)?;
    let mut out = output(args.out.as_deref())?;
    emit_report(&report, args.format, &mut out)?;
    out.flush()?;
    if !report.complete {
        eprintln!("{} of {} trials failed", report.failed.len(), config.trials);
    }
    Ok(())
}

fn run_entropy(args: EntropyArgs) -> anyhow::Result<()> {
    let class = load_class(&args.class_spec)?;
    let tau_max = match args.tau_max {
        Some(t) => t,
        None => {
            let geom = class.diameter(args.budget, &mut stream(args.seed, &[streams::DIAMETER]));
            geom.d_l2
        }
    };
    if !(tau_max.is_finite() && tau_max > 0.0) {
        bail!("the radius grid needs a positive maximum, got {tau_max}");
    }
    let budget = EntropyBudget {
        budget: args.budget,
        n_centers: args.n_centers,
    };
    let curve = entropy_curve(&class, &geometric_grid(tau_max, args.points), args.c_local, budget, args.seed);
    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    w.write_record(["tau", "log_M_loc_raw", "log_M_loc_isotonic", "budget", "n_centers", "seed"])?;
    for i in 0..curve.taus.len() {
        w.write_record([
            curve.taus[i].to_string(),
            curve.log_m_loc_raw[i].to_string(),
            curve.log_m_loc[i].to_string(),
            curve.budget.to_string(),
            curve.n_centers.to_string(),
            curve.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn run_packing(args: PackingArgs) -> anyhow::Result<()> {
    let class = load_class(&args.class_spec)?;
    let region = match (args.center, args.radius) {
        (Some(c), Some(radius)) => {
            let values: Vec<f64> = serde_json::from_str(&read_json_arg(&c)?).context("parsing --center")?;
            let center = GridDensity::from_values(values)?;
            if center.m() != class.m() {
                bail!("--center has {} bins, the class has {}", center.m(), class.m());
            }
            Region::Ball { center, radius }
        }
        _ => Region::Whole,
    };
    let set = greedy_packing(&class, &region, args.delta, args.budget, &mut stream(args.seed, &[]));
    write_json(&set, args.out.as_deref())
}

fn run_verify_cmd(args: VerifyArgs) -> anyhow::Result<bool> {
    let report = run_verify(args.seed)?;
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match thread_pool() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = pool.install(|| match cli.command {
        Command::Estimate(a) => run_estimate(a).map(|_| true),
        Command::Experiment(a) => run_experiment_cmd(a).map(|_| true),
        Command::Entropy(a) => run_entropy(a).map(|_| true),
        Command::Packing(a) => run_packing(a).map(|_| true),
        Command::Verify(a) => run_verify_cmd(a),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
