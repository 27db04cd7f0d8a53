//! Grouped log-likelihood votes, the distance tournament and the sieve
//! traversal. This is the only place where data enters the estimator.

use std::cmp::Ordering;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::classes::{DensityFamily, StarShapedClass};
use crate::density::{bin_index, derive_constants, l2_sq_unchecked, GridDensity, TheoryConstants};
use crate::error::{Error, Result};
use crate::packing::{tau_bar_j, EntropyBudget, TauBar};
use crate::rng::{derive_seed, stream, streams};
use crate::tree::{build_tree, SieveTree, TreeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub points: Vec<f64>,
    pub epsilon: f64,
}

impl Sample {
    pub fn new(points: Vec<f64>, epsilon: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Domain("sample must hold at least one point".into()));
        }
        if let Some((i, x)) = points.iter().enumerate().find(|(_, x)| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Domain(format!("point {i} = {x} lies outside [0, 1]")));
        }
        check_epsilon(epsilon)?;
        Ok(Self { points, epsilon })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(0.0..=1.0 / 3.0).contains(&epsilon) {
        return Err(Error::Domain(format!("epsilon must lie in [0, 1/3], got {epsilon}")));
    }
    Ok(())
}

/// Contiguous index blocks covering `0..N`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPlan {
    pub group_count: usize,
    pub groups: Vec<Range<usize>>,
}

impl GroupPlan {
    /// `group_count` blocks whose sizes differ by at most one, larger blocks first.
    pub fn contiguous(n: usize, group_count: usize) -> Result<Self> {
        if n == 0 || group_count == 0 || group_count > n {
            return Err(Error::Domain(format!("cannot split {n} points into {group_count} groups")));
        }
        let base = n / group_count;
        let extra = n % group_count;
        let mut groups = Vec::with_capacity(group_count);
        let mut start = 0;
        for j in 0..group_count {
            let len = base + usize::from(j < extra);
            groups.push(start..start + len);
            start += len;
        }
        Ok(Self { group_count, groups })
    }

    pub fn n(&self) -> usize {
        self.groups.last().map_or(0, |g| g.end)
    }
}

/// `G = max(1, round(3 eps N))` contiguous groups.
pub fn plan_groups(n: usize, epsilon: f64) -> Result<GroupPlan> {
    check_epsilon(epsilon)?;
    let g = ((3.0 * epsilon * n as f64).round() as usize).clamp(1, n.max(1));
    GroupPlan::contiguous(n, g)
}

/// Per-group bin counts of a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCounts {
    m: usize,
    counts: Vec<u32>,
    group_count: usize,
    /// Populated `(bin, count)` pairs of each group, in bin order.
    populated: Vec<Vec<(usize, u32)>>,
}

/// Per-group log-likelihoods of one density, with what is needed to decide
/// the sign of a difference exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupLikelihoods {
    logs: Vec<f64>,
    /// Float sums `sum_b count_{jb} ln g_b`, accumulated in bin order.
    approx: Vec<f64>,
    /// `sum_b |count_{jb} ln g_b|`, for the rounding error bound.
    magnitude: Vec<f64>,
}

impl GroupCounts {
    pub fn new(sample: &Sample, plan: &GroupPlan, m: usize) -> Result<Self> {
        if plan.n() != sample.len() {
            return Err(Error::Domain(format!(
                "group plan covers {} points but the sample has {}",
                plan.n(),
                sample.len()
            )));
        }
        let mut counts = vec![0u32; plan.group_count * m];
        for (j, range) in plan.groups.iter().enumerate() {
            for &x in &sample.points[range.clone()] {
                counts[j * m + bin_index(x, m)] += 1;
            }
        }
        let populated = counts
            .chunks_exact(m)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, c)| **c > 0)
                    .map(|(b, c)| (b, *c))
                    .collect()
            })
            .collect();
        Ok(Self {
            m,
            counts,
            group_count: plan.group_count,
            populated,
        })
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Count of bin `b` in group `j`.
    pub fn count(&self, j: usize, b: usize) -> u32 {
        self.counts[j * self.m + b]
    }

    /// Per-group log-likelihoods `sum_b count_{jb} ln g_b`.
    ///
    /// Fails when `g` vanishes on a populated bin.
    pub fn likelihoods(&self, g: &[f64]) -> Result<GroupLikelihoods> {
        if g.len() != self.m {
            return Err(Error::Shape {
                expected: self.m,
                found: g.len(),
            });
        }
        let logs: Vec<f64> = g.iter().map(|v| v.ln()).collect();
        let mut approx = Vec::with_capacity(self.group_count);
        let mut magnitude = Vec::with_capacity(self.group_count);
        for row in &self.populated {
            let (mut s, mut a) = (0.0, 0.0);
            for &(b, c) in row {
                if !logs[b].is_finite() {
                    return Err(Error::Domain(format!("density value {} in populated bin {b}", g[b])));
                }
                let t = c as f64 * logs[b];
                s += t;
                a += t.abs();
            }
            approx.push(s);
            magnitude.push(a);
        }
        Ok(GroupLikelihoods { logs, approx, magnitude })
    }

    /// Sign of `l_j(g) - l_j(g')` for the exact sum of the rounded terms
    /// `count * ln(value)`. A float filter settles almost every group; the
    /// rest are summed exactly.
    fn group_sign(&self, j: usize, g: &GroupLikelihoods, g_prime: &GroupLikelihoods) -> Ordering {
        let row = &self.populated[j];
        let d = g.approx[j] - g_prime.approx[j];
        // Recursive summation of k products errs by at most (k + 1) u per
        // unit magnitude on each side; one more rounding for the difference.
        let bound = (row.len() as f64 + 3.0) * f64::EPSILON * (g.magnitude[j] + g_prime.magnitude[j]);
        if d > bound {
            return Ordering::Greater;
        }
        if d < -bound {
            return Ordering::Less;
        }
        let mut acc = ExpansionSum::default();
        for &(b, c) in row {
            let c = c as f64;
            for (log, sign) in [(g.logs[b], 1.0), (g_prime.logs[b], -1.0)] {
                let p = c * log;
                let e = c.mul_add(log, -p);
                acc.add(sign * p);
                acc.add(sign * e);
            }
        }
        acc.sign()
    }
}

/// Exact floating-point summation by non-overlapping partials.
#[derive(Debug, Default)]
struct ExpansionSum {
    partials: Vec<f64>,
}

impl ExpansionSum {
    fn add(&mut self, mut x: f64) {
        let mut kept = 0;
        for i in 0..self.partials.len() {
            let mut y = self.partials[i];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        self.partials.truncate(kept);
        self.partials.push(x);
    }

    /// The partials do not overlap, so the largest one carries the sign.
    fn sign(&self) -> Ordering {
        self.partials
            .iter()
            .rev()
            .find(|p| **p != 0.0)
            .map_or(Ordering::Equal, |p| p.total_cmp(&0.0))
    }
}

/// Vote of `psi(g, g')`: 1 iff at least half of the groups have a strictly
/// positive log-likelihood difference.
pub fn vote(counts: &GroupCounts, g: &GroupLikelihoods, g_prime: &GroupLikelihoods) -> u8 {
    let positive = (0..counts.group_count)
        .filter(|&j| counts.group_sign(j, g, g_prime) == Ordering::Greater)
        .count();
    u8::from(2 * positive >= counts.group_count)
}

/// The grouped likelihood-ratio criterion `psi(g, g')`.
pub fn psi(g: &GridDensity, g_prime: &GridDensity, sample: &Sample, plan: &GroupPlan) -> Result<u8> {
    if g.m() != g_prime.m() {
        return Err(Error::Shape {
            expected: g.m(),
            found: g_prime.m(),
        });
    }
    let counts = GroupCounts::new(sample, plan, g.m())?;
    Ok(vote(&counts, &counts.likelihoods(g.values())?, &counts.likelihoods(g_prime.values())?))
}

/// Tournament outcome over one candidate list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub index: usize,
    /// `T` of the selected candidate.
    pub score: f64,
}

/// The candidate minimizing `T_i`, smallest index on ties.
///
/// `E_i` holds the `j` with `psi(nu_j, nu_i) = 1` and
/// `||nu_i - nu_j|| >= C delta`; `T_i` is the largest such distance, 0 if
/// `E_i` is empty.
pub fn best_density(
    candidates: &[&[f64]],
    counts: &GroupCounts,
    big_c: f64,
    delta: f64,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::Domain("best_density needs at least one candidate".into()));
    }
    let m = counts.m;
    if let Some(bad) = candidates.iter().find(|c| c.len() != m) {
        return Err(Error::Shape {
            expected: m,
            found: bad.len(),
        });
    }
    let ll = candidates
        .iter()
        .map(|c| counts.likelihoods(c))
        .collect::<Result<Vec<_>>>()?;
    let threshold_sq = (big_c * delta).powi(2);
    let mut best = Selection {
        index: 0,
        score: f64::INFINITY,
    };
    for i in 0..candidates.len() {
        let mut t_sq: f64 = 0.0;
        for j in 0..candidates.len() {
            if j == i {
                continue;
            }
            let dist_sq = l2_sq_unchecked(candidates[i], candidates[j]);
            if dist_sq < threshold_sq || dist_sq <= t_sq {
                continue;
            }
            if vote(counts, &ll[j], &ll[i]) == 1 {
                t_sq = dist_sq;
            }
        }
        let t = t_sq.sqrt();
        if t < best.score {
            best = Selection { index: i, score: t };
        }
    }
    Ok(best)
}

/// `delta_j = d / (2^(j-1) (C + 1))` used at stage `j`.
pub fn stage_delta(d: f64, big_c: f64, j: usize) -> f64 {
    d / (2f64.powi(j as i32 - 1) * (big_c + 1.0))
}

/// Walks the tree from the root, picking the tournament winner among the
/// offspring at each stage. Returns the chosen node ids, root first.
pub fn traverse(tree: &SieveTree, counts: &GroupCounts, big_c: f64) -> Result<Vec<usize>> {
    let mut path = vec![0];
    let mut current = 0;
    for j in 2..=tree.depth() {
        let offspring = &tree.node(current).offspring;
        if offspring.is_empty() {
            break;
        }
        let values: Vec<&[f64]> = offspring.iter().map(|&o| tree.node(o).values.as_slice()).collect();
        let pick = best_density(&values, counts, big_c, stage_delta(tree.meta.d, big_c, j))?;
        current = offspring[pick.index];
        path.push(current);
    }
    Ok(path)
}

/// Candidate and entropy budgets of the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budgets {
    /// Per-parent candidate budget for level 2 of the tree.
    #[serde(default = "default_packing")]
    pub packing: usize,
    /// Candidates per ball in local entropy estimates.
    #[serde(default = "default_entropy")]
    pub entropy: usize,
    #[serde(default = "default_centers")]
    pub centers: usize,
    /// Random pairs for the diameter search on non-closed-form classes.
    #[serde(default = "default_diameter")]
    pub diameter: usize,
}

fn default_packing() -> usize {
    crate::packing::DEFAULT_PACKING_BUDGET
}
fn default_entropy() -> usize {
    crate::packing::DEFAULT_PACKING_BUDGET
}
fn default_centers() -> usize {
    crate::packing::DEFAULT_N_CENTERS
}
fn default_diameter() -> usize {
    20_000
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            packing: default_packing(),
            entropy: default_entropy(),
            centers: default_centers(),
            diameter: default_diameter(),
        }
    }
}

impl Budgets {
    pub fn entropy_budget(&self) -> EntropyBudget {
        EntropyBudget {
            budget: self.entropy,
            n_centers: self.centers,
        }
    }
}

/// Everything the estimator needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(rename = "C", default = "default_big_c")]
    pub big_c: f64,
    #[serde(default = "default_phi")]
    pub phi: f64,
    /// Replaces the theoretical `C10` in the stage rule.
    #[serde(default)]
    pub c10_override: Option<f64>,
    /// Replaces the entropy constant `c = 2(C + 1)`; must exceed 2.
    #[serde(default)]
    pub c_local_override: Option<f64>,
    /// Upper bound on the tree depth `J_tilde`.
    #[serde(default)]
    pub max_levels: Option<usize>,
    #[serde(default)]
    pub budgets: Budgets,
    #[serde(default)]
    pub seed: u64,
}

fn default_big_c() -> f64 {
    crate::density::DEFAULT_BIG_C
}
fn default_phi() -> f64 {
    crate::density::DEFAULT_PHI
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            big_c: default_big_c(),
            phi: default_phi(),
            c10_override: None,
            c_local_override: None,
            max_levels: None,
            budgets: Budgets::default(),
            seed: 0,
        }
    }
}

/// The data-free half of the estimator for one class and sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSieve {
    /// Absent for the degenerate `alpha = beta` class.
    pub constants: Option<TheoryConstants>,
    pub big_c: f64,
    pub c_local: f64,
    pub d: f64,
    pub d_exact: bool,
    pub c10: f64,
    pub n: usize,
    pub tau_bar: TauBar,
    pub tree: SieveTree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub j_bar: usize,
    pub tau_bar: f64,
    pub j_tilde: usize,
    pub d: f64,
    pub d_exact: bool,
    pub c10: f64,
    pub c_local: f64,
    pub group_count: usize,
    pub tree_sizes: Vec<usize>,
    /// Chosen node ids, root first.
    pub path: Vec<usize>,
    /// `delta_{J_tilde} / sqrt(epsilon)`, absent when `epsilon = 0`.
    pub delta_over_sqrt_eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: GridDensity,
    pub diagnostics: Diagnostics,
}

impl PreparedSieve {
    /// Derives constants, the diameter, `J_bar` and the tree for samples of size `n`.
    pub fn new(class: &StarShapedClass, n: usize, config: &EstimatorConfig) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("sample size must be positive".into()));
        }
        // alpha = beta leaves a single member and no concentration constants.
        let mut constants = if class.alpha() < class.beta() {
            Some(derive_constants(class.alpha(), class.beta(), config.big_c, config.phi)?)
        } else {
            None
        };
        let mut c_local = constants.map_or(2.0 * (config.big_c + 1.0), |k| k.c_local);
        if let Some(c) = config.c_local_override {
            if !(c > 2.0) {
                return Err(Error::Config(format!("c_local_override must exceed 2, got {c}")));
            }
            c_local = c;
        }
        if let Some(k) = constants.as_mut() {
            k.c_local = c_local;
        }
        let c10 = match config.c10_override {
            Some(v) if v > 0.0 && v.is_finite() => v,
            Some(v) => return Err(Error::Config(format!("c10_override must be positive, got {v}"))),
            None => constants.map_or(0.0, |k| k.c10),
        };
        if config.max_levels == Some(0) {
            return Err(Error::Config("max_levels must be at least 1".into()));
        }
        let geometry = class.diameter(config.budgets.diameter, &mut stream(config.seed, &[streams::DIAMETER]));
        let d = geometry.d_l2;
        let tau_bar = match &constants {
            Some(k) => {
                let entropy_seed = derive_seed(config.seed, &[streams::ENTROPY]);
                tau_bar_j(class, n, d, k, c10, config.budgets.entropy_budget(), entropy_seed)
            }
            None => TauBar {
                j_bar: 1,
                tau: 0.0,
                c10,
                stages: vec![],
            },
        };
        let j_tilde = config.max_levels.map_or(tau_bar.j_bar, |cap| tau_bar.j_bar.min(cap));
        let tree = build_tree(
            class,
            class.star_center(),
            TreeParams {
                j_tilde,
                c_local,
                d,
                budget: config.budgets.packing,
                seed: derive_seed(config.seed, &[streams::TREE]),
            },
        )?;
        Ok(Self {
            constants,
            big_c: config.big_c,
            c_local,
            d,
            d_exact: geometry.exact,
            c10,
            n,
            tau_bar,
            tree,
        })
    }

    pub fn estimate(&self, sample: &Sample) -> Result<Estimate> {
        if sample.len() != self.n {
            return Err(Error::Domain(format!(
                "prepared for {} points, got {}",
                self.n,
                sample.len()
            )));
        }
        let plan = plan_groups(sample.len(), sample.epsilon)?;
        let m = self.tree.root().values.len();
        let counts = GroupCounts::new(sample, &plan, m)?;
        let path = traverse(&self.tree, &counts, self.big_c)?;
        let last = *path.last().expect("path starts at the root");
        let j_tilde = self.tree.depth();
        let delta = stage_delta(self.d, self.big_c, j_tilde);
        Ok(Estimate {
            estimate: self.tree.node(last).density(),
            diagnostics: Diagnostics {
                j_bar: self.tau_bar.j_bar,
                tau_bar: self.tau_bar.tau,
                j_tilde,
                d: self.d,
                d_exact: self.d_exact,
                c10: self.c10,
                c_local: self.c_local,
                group_count: plan.group_count,
                tree_sizes: self.tree.level_sizes(),
                path,
                delta_over_sqrt_eps: (sample.epsilon > 0.0).then(|| delta / sample.epsilon.sqrt()),
            },
        })
    }
}

/// End-to-end estimator: builds the data-free sieve, then traverses it.
pub fn estimate(class: &StarShapedClass, sample: &Sample, config: &EstimatorConfig) -> Result<Estimate> {
    PreparedSieve::new(class, sample.len(), config)?.estimate(sample)
}
