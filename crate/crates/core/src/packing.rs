//! Greedy maximal packings, local metric entropy estimates, and the
//! `tau_star` / `J_bar` solvers built on them.
//!
//! Packings are maximal only with respect to the candidate pool they were
//! drawn from, so every cardinality here is a lower bound on the true
//! packing number. Lower entropy estimates make the sieve stop earlier.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classes::{isotonic_increasing, DensityFamily};
use crate::density::{within_unchecked, GridDensity, TheoryConstants};
use crate::rng::{derive_seed, stream, streams};

pub const DEFAULT_PACKING_BUDGET: usize = 5_000;
pub const DEFAULT_N_CENTERS: usize = 16;
/// Points on the geometric grid used by [`tau_star`].
pub const TAU_GRID_POINTS: usize = 64;
/// Largest stage index scanned by [`tau_bar_j`].
pub const MAX_STAGES: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Region {
    Whole,
    Ball { center: GridDensity, radius: f64 },
}

impl Region {
    pub fn contains(&self, f: &GridDensity) -> bool {
        match self {
            Region::Whole => true,
            Region::Ball { center, radius } => within_unchecked(center.values(), f.values(), *radius),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingSet {
    pub points: Vec<GridDensity>,
    pub delta: f64,
    pub region: Region,
    pub budget_used: usize,
}

impl PackingSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Smallest pairwise distance, or infinity with fewer than two points.
    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                best = best.min(crate::density::l2_sq_unchecked(a.values(), b.values()).sqrt());
            }
        }
        best
    }
}

fn draw<C: DensityFamily, R: Rng + ?Sized>(class: &C, region: &Region, rng: &mut R) -> GridDensity {
    match region {
        Region::Whole => class.sample_member(rng),
        Region::Ball { center, radius } => class.sample_in_ball(center, *radius, rng),
    }
}

/// First-fit packing over `budget` candidates drawn from `region`.
///
/// A candidate is accepted iff it lies strictly farther than `delta` from
/// every accepted point.
pub fn greedy_packing<C: DensityFamily, R: Rng + ?Sized>(
    class: &C,
    region: &Region,
    delta: f64,
    budget: usize,
    rng: &mut R,
) -> PackingSet {
    greedy_packing_with_pool(class, region, delta, budget, rng, false).0
}

/// Same as [`greedy_packing`], optionally returning the candidate pool.
pub fn greedy_packing_with_pool<C: DensityFamily, R: Rng + ?Sized>(
    class: &C,
    region: &Region,
    delta: f64,
    budget: usize,
    rng: &mut R,
    keep_pool: bool,
) -> (PackingSet, Vec<GridDensity>) {
    let m = class.m();
    let mut flat: Vec<f64> = Vec::new();
    let mut points = Vec::new();
    let mut pool = Vec::new();
    for _ in 0..budget.max(1) {
        let cand = draw(class, region, rng);
        let separated = flat
            .chunks_exact(m)
            .all(|p| !within_unchecked(p, cand.values(), delta));
        if separated {
            flat.extend_from_slice(cand.values());
            points.push(cand.clone());
        }
        if keep_pool {
            pool.push(cand);
        }
    }
    (
        PackingSet {
            points,
            delta,
            region: region.clone(),
            budget_used: budget.max(1),
        },
        pool,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyBudget {
    /// Candidates drawn per ball.
    pub budget: usize,
    /// Centers sampled for the supremum over the class.
    pub n_centers: usize,
}

impl Default for EntropyBudget {
    fn default() -> Self {
        Self {
            budget: DEFAULT_PACKING_BUDGET,
            n_centers: DEFAULT_N_CENTERS,
        }
    }
}

/// Largest greedy `tau / c_local` packing found over sampled balls `B(f, tau)`.
///
/// Returns the packing cardinality; the entropy is its logarithm. Center
/// `i` draws from its own stream, so the result does not depend on how the
/// centers are scheduled.
pub fn local_packing_count<C: DensityFamily>(
    class: &C,
    tau: f64,
    c_local: f64,
    budget: EntropyBudget,
    seed: u64,
) -> usize {
    let n_centers = budget.n_centers.max(1);
    (0..n_centers)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[i as u64]);
            let center = class.sample_member(&mut rng);
            let region = Region::Ball { center, radius: tau };
            greedy_packing(class, &region, tau / c_local, budget.budget, &mut rng).len()
        })
        .max()
        .unwrap_or(1)
}

/// Lower-bound estimate of `log M_loc(tau, c_local)`.
pub fn local_entropy<C: DensityFamily, R: Rng + ?Sized>(
    class: &C,
    tau: f64,
    c_local: f64,
    budget: EntropyBudget,
    rng: &mut R,
) -> f64 {
    let seed: u64 = rng.gen();
    (local_packing_count(class, tau, c_local, budget, seed) as f64).ln()
}

/// Entropy estimates on a grid of radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyCurve {
    /// Increasing radii.
    pub taus: Vec<f64>,
    pub log_m_loc_raw: Vec<f64>,
    /// Non-increasing in `tau` after the isotonic pass.
    pub log_m_loc: Vec<f64>,
    pub c_local: f64,
    pub budget: usize,
    pub n_centers: usize,
    pub seed: u64,
}

impl EntropyCurve {
    /// Number of grid points where the raw estimate increased with `tau`.
    pub fn raw_violations(&self) -> usize {
        self.log_m_loc_raw.windows(2).filter(|w| w[1] > w[0]).count()
    }
}

/// Non-increasing least-squares fit of values listed by increasing radius.
fn nonincreasing_fit(raw: &[f64]) -> Vec<f64> {
    crate::classes::isotonic_decreasing(raw)
}

/// Estimates the local entropy at each radius in `taus` (sorted ascending).
pub fn entropy_curve<C: DensityFamily>(
    class: &C,
    taus: &[f64],
    c_local: f64,
    budget: EntropyBudget,
    seed: u64,
) -> EntropyCurve {
    let raw: Vec<f64> = taus
        .iter()
        .enumerate()
        .map(|(i, &tau)| {
            let s = derive_seed(seed, &[streams::ENTROPY, i as u64]);
            (local_packing_count(class, tau, c_local, budget, s) as f64).ln()
        })
        .collect();
    EntropyCurve {
        taus: taus.to_vec(),
        log_m_loc: nonincreasing_fit(&raw),
        log_m_loc_raw: raw,
        c_local,
        budget: budget.budget,
        n_centers: budget.n_centers,
        seed,
    }
}

/// `count` radii spaced geometrically on `[hi / 2^16, hi]`.
pub fn geometric_grid(hi: f64, count: usize) -> Vec<f64> {
    let lo = hi / 65_536.0;
    if count <= 1 {
        return vec![hi];
    }
    (0..count)
        .map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauStar {
    pub tau: f64,
    pub curve: EntropyCurve,
    pub bisection_steps: usize,
}

/// `sup { tau : N tau^2 <= log M_loc(tau, c_local) }` over `(0, d]`.
///
/// The entropy curve is made non-increasing on a geometric grid; the
/// crossing bracket is then refined by bisection to relative width `1e-3`,
/// clamping fresh estimates into the bracket's isotonic values.
pub fn tau_star<C: DensityFamily>(
    class: &C,
    n: usize,
    d: f64,
    c_local: f64,
    budget: EntropyBudget,
    seed: u64,
) -> TauStar {
    let nf = n as f64;
    if !(d > 0.0) {
        let curve = EntropyCurve {
            taus: vec![],
            log_m_loc_raw: vec![],
            log_m_loc: vec![],
            c_local,
            budget: budget.budget,
            n_centers: budget.n_centers,
            seed,
        };
        return TauStar {
            tau: 0.0,
            curve,
            bisection_steps: 0,
        };
    }
    let taus = geometric_grid(d, TAU_GRID_POINTS);
    let curve = entropy_curve(class, &taus, c_local, budget, seed);
    let ok = |tau: f64, h: f64| nf * tau * tau <= h;
    let last_ok = (0..taus.len()).rev().find(|&i| ok(taus[i], curve.log_m_loc[i]));
    let Some(k) = last_ok else {
        return TauStar {
            tau: 0.0,
            curve,
            bisection_steps: 0,
        };
    };
    if k + 1 == taus.len() {
        return TauStar {
            tau: d,
            curve,
            bisection_steps: 0,
        };
    }
    let (mut lo, mut hi) = (taus[k], taus[k + 1]);
    let (mut h_lo, mut h_hi) = (curve.log_m_loc[k], curve.log_m_loc[k + 1]);
    let mut steps = 0;
    while (hi - lo) / lo > 1e-3 {
        let mid = 0.5 * (lo + hi);
        let s = derive_seed(seed, &[streams::ENTROPY, u64::MAX, mid.to_bits()]);
        let h = (local_packing_count(class, mid, c_local, budget, s) as f64)
            .ln()
            .clamp(h_hi, h_lo);
        if ok(mid, h) {
            lo = mid;
            h_lo = h;
        } else {
            hi = mid;
            h_hi = h;
        }
        steps += 1;
    }
    TauStar {
        tau: lo,
        curve,
        bisection_steps: steps,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCheck {
    pub j: usize,
    pub tau: f64,
    /// Radius at which the local entropy is evaluated, `tau_J * c / sqrt(C10)`.
    pub radius: f64,
    pub log_m_raw: Option<f64>,
    pub log_m: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauBar {
    pub j_bar: usize,
    pub tau: f64,
    pub c10: f64,
    pub stages: Vec<StageCheck>,
}

/// `tau_J = sqrt(C10) d / (2^(J-1) (C + 1))`.
pub fn tau_j(c10: f64, d: f64, big_c: f64, j: usize) -> f64 {
    c10.sqrt() * d / (2f64.powi(j as i32 - 1) * (big_c + 1.0))
}

/// Right-hand side of the stopping rule, `2 log(M^2) v log 2`.
pub fn stopping_rhs(log_m: f64) -> f64 {
    (4.0 * log_m).max(std::f64::consts::LN_2)
}

/// Largest stage `J` with `N tau_J^2 > 2 log(M_loc(tau_J c / sqrt(C10), 2c)^2) v log 2`.
///
/// `c10` is passed separately so callers can override the theoretical
/// value. Entropy is estimated only while `N tau_J^2 > log 2`; beyond that
/// point the inequality fails regardless of the entropy. Estimates are made
/// non-decreasing in `J` (the radius shrinks with `J`) before the scan.
pub fn tau_bar_j<C: DensityFamily>(
    class: &C,
    n: usize,
    d: f64,
    constants: &TheoryConstants,
    c10: f64,
    budget: EntropyBudget,
    seed: u64,
) -> TauBar {
    let nf = n as f64;
    let c = constants.c_local;
    if !(d > 0.0) || !(c10 > 0.0) {
        return TauBar {
            j_bar: 1,
            tau: 0.0,
            c10,
            stages: vec![],
        };
    }
    let mut stages: Vec<StageCheck> = Vec::new();
    for j in 1..=MAX_STAGES {
        let tau = tau_j(c10, d, constants.big_c, j);
        let lhs = nf * tau * tau;
        let radius = tau * c / c10.sqrt();
        let needs_entropy = lhs > std::f64::consts::LN_2;
        let log_m_raw = needs_entropy.then(|| {
            let s = derive_seed(seed, &[streams::ENTROPY, j as u64]);
            (local_packing_count(class, radius, 2.0 * c, budget, s) as f64).ln()
        });
        stages.push(StageCheck {
            j,
            tau,
            radius,
            log_m_raw,
            log_m: None,
            lhs,
            rhs: f64::INFINITY,
            satisfied: false,
        });
        if !needs_entropy {
            break;
        }
    }
    let raw: Vec<f64> = stages.iter().filter_map(|s| s.log_m_raw).collect();
    let fitted = isotonic_increasing(&raw);
    for (s, h) in stages.iter_mut().zip(fitted.iter()) {
        s.log_m = Some(*h);
    }
    for s in &mut stages {
        s.rhs = match s.log_m {
            Some(h) => stopping_rhs(h),
            None => std::f64::consts::LN_2,
        };
        s.satisfied = s.lhs > s.rhs;
    }
    let j_bar = stages.iter().rev().find(|s| s.satisfied).map_or(1, |s| s.j);
    TauBar {
        j_bar,
        tau: tau_j(c10, d, constants.big_c, j_bar),
        c10,
        stages,
    }
}
