//! Monte Carlo risk experiments, sampling from grid densities and report
//! emission.

use std::io::{Read, Write};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{corrupt, CorruptionStrategy, StrategyKind, StrategySpec};
use crate::classes::{ClassSpec, DensityFamily, StarShapedClass};
use crate::density::{l2_distance_sq, GridDensity};
use crate::error::{Error, Result};
use crate::oracle::min_distance_estimator;
use crate::rng::{derive_seed, stream, streams};
use crate::tournament::{check_epsilon, Budgets, EstimatorConfig, PreparedSieve, Sample};

/// Environment variable bounding the worker pool.
pub const THREADS_ENV: &str = "STARSIEVE_THREADS";

/// Label attached to every report: the adversaries are a fixed menu, so
/// the measured risk is a lower bound on the worst case.
pub const RISK_LABEL: &str = "risk under implemented adversaries";

/// Inverse-CDF draws from a piecewise-constant density.
///
/// A bin is chosen with probability proportional to its value and the point
/// is placed uniformly inside it.
pub fn sample_from_density<R: Rng + ?Sized>(f: &GridDensity, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    let m = f.m();
    let mut cdf = Vec::with_capacity(m);
    let mut acc = 0.0;
    for v in f.values() {
        acc += v;
        cdf.push(acc);
    }
    if !(acc > 0.0) || !acc.is_finite() {
        return Err(Error::Degenerate("cannot sample from a density with no mass".into()));
    }
    let mf = m as f64;
    Ok((0..n)
        .map(|_| {
            let u = rng.gen::<f64>() * acc;
            let mut b = cdf.partition_point(|&c| c <= u).min(m - 1);
            while f.values()[b] == 0.0 && b + 1 < m {
                b += 1;
            }
            ((b as f64 + rng.gen::<f64>()) / mf).min(1.0)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthKeyword {
    RandomPerTrial,
    StarCenter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrueDensity {
    Keyword(TruthKeyword),
    Member(GridDensity),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSpec {
    /// Must match the class when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(rename = "C", default = "default_big_c")]
    pub big_c: f64,
    #[serde(default = "default_phi")]
    pub phi: f64,
}

fn default_big_c() -> f64 {
    crate::density::DEFAULT_BIG_C
}
fn default_phi() -> f64 {
    crate::density::DEFAULT_PHI
}

impl Default for ConstantsSpec {
    fn default() -> Self {
        Self {
            alpha: None,
            beta: None,
            big_c: default_big_c(),
            phi: default_phi(),
        }
    }
}

fn default_strategy() -> StrategySpec {
    StrategySpec::new(StrategyKind::None)
}

fn default_truth() -> TrueDensity {
    TrueDensity::Keyword(TruthKeyword::RandomPerTrial)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub class: ClassSpec,
    #[serde(default = "default_truth")]
    pub true_density: TrueDensity,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_strategy")]
    pub strategy: StrategySpec,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub constants: ConstantsSpec,
    #[serde(default)]
    pub budgets: Budgets,
    #[serde(default)]
    pub c10_override: Option<f64>,
    #[serde(default)]
    pub c_local_override: Option<f64>,
    #[serde(default)]
    pub max_levels: Option<usize>,
    /// Wall-clock timings make reports differ between runs, so they are opt-in.
    #[serde(default)]
    pub record_timing: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon)?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.n == 0 {
            return Err(Error::Config("N must be at least 1".into()));
        }
        let class = StarShapedClass::from_spec(&self.class)?;
        for (name, given, actual) in [
            ("alpha", self.constants.alpha, class.alpha()),
            ("beta", self.constants.beta, class.beta()),
        ] {
            if let Some(v) = given {
                if v != actual {
                    return Err(Error::Config(format!("constants.{name} = {v} but the class uses {actual}")));
                }
            }
        }
        if let TrueDensity::Member(f) = &self.true_density {
            if !class.contains(f)? {
                return Err(Error::Config("true_density is not a member of the class".into()));
            }
        }
        Ok(())
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        EstimatorConfig {
            big_c: self.constants.big_c,
            phi: self.constants.phi,
            c10_override: self.c10_override,
            c_local_override: self.c_local_override,
            max_levels: self.max_levels,
            budgets: self.budgets,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    /// Squared L2 distance between the estimate and the truth.
    pub loss: f64,
    /// Loss of the ungrouped likelihood maximizer over the deepest tree level.
    pub baseline_loss: f64,
    pub j_bar: usize,
    pub tau_bar: f64,
    pub tree_node_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedTrial {
    pub trial: usize,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
}

impl Aggregate {
    /// Summary statistics; quantiles interpolate linearly between order statistics.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: quantile(&v, 0.5),
            q10: quantile(&v, 0.1),
            q90: quantile(&v, 0.9),
        })
    }
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub label: String,
    pub config: ExperimentConfig,
    pub per_trial: Vec<TrialRecord>,
    #[serde(default)]
    pub failed: Vec<FailedTrial>,
    pub complete: bool,
    pub aggregate: Option<Aggregate>,
    pub baseline_aggregate: Option<Aggregate>,
    /// `max(tau_Jbar^2, eps) ∧ d^2`.
    pub bound_reference: f64,
    pub j_bar: usize,
    pub tau_bar: f64,
    pub j_tilde: usize,
    pub d: f64,
    pub tree_sizes: Vec<usize>,
    pub strategy: Option<CorruptionStrategy>,
}

struct TrialContext<'a> {
    config: &'a ExperimentConfig,
    class: &'a StarShapedClass,
    sieve: &'a PreparedSieve,
    fixed: Option<(GridDensity, CorruptionStrategy)>,
    deepest: Vec<GridDensity>,
}

fn run_trial(ctx: &TrialContext<'_>, trial: usize) -> std::result::Result<TrialRecord, FailedTrial> {
    let config = ctx.config;
    let seed = derive_seed(config.seed, &[streams::TRIAL, trial as u64]);
    let start = Instant::now();
    let fail = |e: Error| FailedTrial {
        trial,
        seed,
        reason: e.to_string(),
    };
    let (truth, strategy) = match &ctx.fixed {
        Some((f, s)) => (f.clone(), s.clone()),
        None => {
            let f = ctx.class.sample_member(&mut stream(seed, &[streams::TRUTH]));
            let s = config
                .strategy
                .resolve(ctx.class, &f, config.epsilon, config.n, &mut stream(seed, &[streams::ADVERSARY]))
                .map_err(fail)?;
            (f, s)
        }
    };
    let points = sample_from_density(&truth, config.n, &mut stream(seed, &[streams::CLEAN])).map_err(fail)?;
    let clean = Sample::new(points, config.epsilon).map_err(fail)?;
    let data = corrupt(&clean, config.epsilon, &strategy, &truth, &mut stream(seed, &[streams::CORRUPT])).map_err(fail)?;
    let est = ctx.sieve.estimate(&data).map_err(fail)?;
    let loss = l2_distance_sq(&est.estimate, &truth).map_err(fail)?;
    let baseline = min_distance_estimator(&ctx.deepest, &data).map_err(fail)?;
    let baseline_loss = l2_distance_sq(&baseline, &truth).map_err(fail)?;
    Ok(TrialRecord {
        trial,
        seed,
        loss,
        baseline_loss,
        j_bar: est.diagnostics.j_bar,
        tau_bar: est.diagnostics.tau_bar,
        tree_node_count: ctx.sieve.tree.len(),
        runtime_ms: config.record_timing.then(|| start.elapsed().as_secs_f64() * 1e3),
    })
}

/// Runs every trial of `config`. The tree is built once; trials run in
/// parallel and are reassembled in index order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RiskReport> {
    config.validate()?;
    let class = StarShapedClass::from_spec(&config.class)?;
    let sieve = PreparedSieve::new(&class, config.n, &config.estimator_config())?;
    let fixed = match &config.true_density {
        TrueDensity::Keyword(TruthKeyword::RandomPerTrial) => None,
        TrueDensity::Keyword(TruthKeyword::StarCenter) => Some(class.star_center().clone()),
        TrueDensity::Member(f) => Some(f.clone()),
    };
    let fixed = match fixed {
        Some(f) => {
            let s = config.strategy.resolve(
                &class,
                &f,
                config.epsilon,
                config.n,
                &mut stream(config.seed, &[streams::ADVERSARY]),
            )?;
            Some((f, s))
        }
        None => None,
    };
    let deepest: Vec<GridDensity> = sieve
        .tree
        .levels
        .last()
        .expect("tree has a root level")
        .iter()
        .map(|&id| sieve.tree.node(id).density())
        .collect();
    let ctx = TrialContext {
        config,
        class: &class,
        sieve: &sieve,
        fixed,
        deepest,
    };
    let outcomes: Vec<_> = (0..config.trials).into_par_iter().map(|t| run_trial(&ctx, t)).collect();
    let mut per_trial = Vec::new();
    let mut failed = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => per_trial.push(r),
            Err(f) => failed.push(f),
        }
    }
    let losses: Vec<f64> = per_trial.iter().map(|r| r.loss).collect();
    let baseline: Vec<f64> = per_trial.iter().map(|r| r.baseline_loss).collect();
    let tau = sieve.tau_bar.tau;
    Ok(RiskReport {
        label: RISK_LABEL.to_string(),
        config: config.clone(),
        complete: failed.is_empty(),
        aggregate: Aggregate::of(&losses),
        baseline_aggregate: Aggregate::of(&baseline),
        bound_reference: (tau * tau).max(config.epsilon).min(sieve.d * sieve.d),
        j_bar: sieve.tau_bar.j_bar,
        tau_bar: tau,
        j_tilde: sieve.tree.depth(),
        d: sieve.d,
        tree_sizes: sieve.tree.level_sizes(),
        strategy: ctx.fixed.map(|(_, s)| s),
        per_trial,
        failed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(Error::Config(format!("unknown report format {other:?}; use json or csv"))),
        }
    }
}

pub const CSV_COLUMNS: [&str; 7] = ["trial", "seed", "loss", "j_bar", "tau_bar", "tree_nodes", "runtime_ms"];

pub fn emit_report<W: Write>(report: &RiskReport, format: ReportFormat, mut out: W) -> Result<()> {
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, report)?;
            out.write_all(b"\n")?;
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(CSV_COLUMNS)?;
            for r in &report.per_trial {
                w.write_record([
                    r.trial.to_string(),
                    r.seed.to_string(),
                    r.loss.to_string(),
                    r.j_bar.to_string(),
                    r.tau_bar.to_string(),
                    r.tree_node_count.to_string(),
                    r.runtime_ms.map(|t| t.to_string()).unwrap_or_default(),
                ])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Parses observations given as one real per line. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_data<R: Read>(input: R) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != 1 {
            return Err(Error::Domain(format!(
                "record {} has {} fields, expected one real per line",
                line + 1,
                record.len()
            )));
        }
        let field = &record[0];
        let x: f64 = field
            .parse()
            .map_err(|_| Error::Domain(format!("record {}: {field:?} is not a real number", line + 1)))?;
        out.push(x);
    }
    Ok(out)
}

/// Worker pool sized by `STARSIEVE_THREADS` (all cores when unset).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))
}
