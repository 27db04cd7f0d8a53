//! Brute-force reference implementations used to cross-check the sieve.
//!
//! These deliberately avoid the helpers of the main pipeline: distances are
//! recomputed from scratch and sums run in point order.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::classes::DensityFamily;
use crate::density::{validate_density, GridDensity};
use crate::error::{Error, Result};
use crate::packing::Region;
use crate::tournament::{GroupPlan, Sample};

/// Largest enumeration the oracles accept.
pub const MAX_MEMBERS: usize = 10_000;
pub const MAX_QUANTIZED_BINS: usize = 6;

/// All densities on `m` bins whose values come from a small level set.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedClass {
    m: usize,
    levels: Vec<f64>,
    members: Vec<GridDensity>,
    center: GridDensity,
}

impl QuantizedClass {
    /// Enumerates every level vector whose mean is 1. The uniform density
    /// must be among them; it serves as the star center.
    pub fn new(m: usize, levels: &[f64]) -> Result<Self> {
        if m == 0 || m > MAX_QUANTIZED_BINS {
            return Err(Error::Size(format!("quantized classes need 1 <= m <= {MAX_QUANTIZED_BINS}, got {m}")));
        }
        let mut levels = levels.to_vec();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        if levels.is_empty() || levels.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Domain("levels must be positive and finite".into()));
        }
        let total = levels.len().checked_pow(m as u32).unwrap_or(usize::MAX);
        if total > 100 * MAX_MEMBERS {
            return Err(Error::Size(format!("{total} level vectors to enumerate")));
        }
        let (alpha, beta) = (levels[0], levels[levels.len() - 1]);
        let mut members = Vec::new();
        let mut digits = vec![0usize; m];
        for _ in 0..total {
            let values: Vec<f64> = digits.iter().map(|&d| levels[d]).collect();
            if let Ok(f) = validate_density(&values, m, alpha, beta) {
                members.push(f);
            }
            for d in digits.iter_mut().rev() {
                *d += 1;
                if *d < levels.len() {
                    break;
                }
                *d = 0;
            }
        }
        if members.len() > MAX_MEMBERS {
            return Err(Error::Size(format!("{} members exceed {MAX_MEMBERS}", members.len())));
        }
        let center = GridDensity::uniform(m);
        if !members.contains(&center) {
            return Err(Error::Domain("the level set must contain 1".into()));
        }
        Ok(Self {
            m,
            levels,
            members,
            center,
        })
    }

    pub fn members(&self) -> &[GridDensity] {
        &self.members
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn members_in(&self, region: &Region) -> Vec<&GridDensity> {
        self.members.iter().filter(|f| in_region(region, f)).collect()
    }
}

fn naive_distance(f: &GridDensity, g: &GridDensity) -> f64 {
    let mut s = 0.0;
    for i in 0..f.m() {
        let d = f.values()[i] - g.values()[i];
        s += d * d / f.m() as f64;
    }
    s.sqrt()
}

fn in_region(region: &Region, f: &GridDensity) -> bool {
    match region {
        Region::Whole => true,
        Region::Ball { center, radius } => naive_distance(center, f) <= *radius,
    }
}

impl DensityFamily for QuantizedClass {
    fn m(&self) -> usize {
        self.m
    }

    fn alpha(&self) -> f64 {
        self.levels[0]
    }

    fn beta(&self) -> f64 {
        self.levels[self.levels.len() - 1]
    }

    fn contains(&self, f: &GridDensity) -> Result<bool> {
        if f.m() != self.m {
            return Err(Error::Shape {
                expected: self.m,
                found: f.m(),
            });
        }
        Ok(self.members.contains(f))
    }

    fn star_center(&self) -> &GridDensity {
        &self.center
    }

    fn sample_member<R: Rng + ?Sized>(&self, rng: &mut R) -> GridDensity {
        self.members.choose(rng).expect("center is a member").clone()
    }

    fn sample_in_ball<R: Rng + ?Sized>(&self, center: &GridDensity, radius: f64, rng: &mut R) -> GridDensity {
        let region = Region::Ball {
            center: center.clone(),
            radius,
        };
        let inside = self.members_in(&region);
        match inside.choose(rng) {
            Some(f) => (*f).clone(),
            None => center.clone(),
        }
    }
}

/// Exact maximum number of members of `region` with pairwise distance
/// strictly greater than `delta`, by branch and bound.
pub fn exhaustive_max_packing(qclass: &QuantizedClass, region: &Region, delta: f64) -> Result<usize> {
    let pts = qclass.members_in(region);
    if pts.len() > MAX_MEMBERS {
        return Err(Error::Size(format!("{} members in region", pts.len())));
    }
    let n = pts.len();
    let conflict: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| i != j && naive_distance(pts[i], pts[j]) <= delta).collect())
        .collect();
    let mut best = 0;
    let all: Vec<usize> = (0..n).collect();
    branch(&conflict, &all, 0, &mut best);
    Ok(best)
}

fn branch(conflict: &[Vec<bool>], candidates: &[usize], size: usize, best: &mut usize) {
    if candidates.is_empty() {
        *best = (*best).max(size);
        return;
    }
    if size + candidates.len() <= *best {
        return;
    }
    let v = candidates[0];
    // Take v: drop its conflicts.
    let with: Vec<usize> = candidates[1..].iter().copied().filter(|&u| !conflict[v][u]).collect();
    branch(conflict, &with, size + 1, best);
    // Skip v.
    branch(conflict, &candidates[1..], size, best);
}

/// The candidate with the largest total log-likelihood over all points,
/// smallest index on ties. No grouping, hence no robustness.
pub fn min_distance_estimator(candidates: &[GridDensity], sample: &Sample) -> Result<GridDensity> {
    let first = candidates
        .first()
        .ok_or_else(|| Error::Domain("min_distance_estimator needs a candidate".into()))?;
    let mut best = (0, f64::NEG_INFINITY);
    for (i, g) in candidates.iter().enumerate() {
        if g.m() != first.m() {
            return Err(Error::Shape {
                expected: first.m(),
                found: g.m(),
            });
        }
        let mut ll = 0.0;
        for &x in &sample.points {
            ll += g.eval(x).ln();
        }
        if ll > best.1 {
            best = (i, ll);
        }
    }
    Ok(candidates[best.0].clone())
}

/// Straight re-implementation of the grouped vote.
///
/// Each point adds `ln g(x)` and subtracts `ln g'(x)` into a fixed-point
/// accumulator wide enough for any finite double, so the sign of each group
/// sum is exact.
pub fn reference_psi(g: &GridDensity, g_prime: &GridDensity, sample: &Sample, plan: &GroupPlan) -> Result<u8> {
    if g.m() != g_prime.m() {
        return Err(Error::Shape {
            expected: g.m(),
            found: g_prime.m(),
        });
    }
    let mut positive = 0;
    let mut groups = 0;
    for range in &plan.groups {
        groups += 1;
        let mut acc = FixedPoint::new();
        for i in range.clone() {
            let x = *sample
                .points
                .get(i)
                .ok_or_else(|| Error::Domain(format!("group index {i} beyond the sample")))?;
            let (a, b) = (g.eval(x).ln(), g_prime.eval(x).ln());
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::Domain(format!("density vanishes at point {x}")));
            }
            acc.add(a);
            acc.add(-b);
        }
        if acc.is_positive() {
            positive += 1;
        }
    }
    Ok(if positive * 2 >= groups { 1 } else { 0 })
}

/// Two's-complement fixed-point number in base 2^32 covering every finite
/// double: bit 0 has weight 2^-1074.
struct FixedPoint {
    limbs: Vec<i64>,
}

impl FixedPoint {
    const LIMBS: usize = 70;

    fn new() -> Self {
        Self {
            limbs: vec![0; Self::LIMBS],
        }
    }

    fn add(&mut self, x: f64) {
        let bits = x.to_bits();
        let negative = bits >> 63 == 1;
        let biased = ((bits >> 52) & 0x7ff) as i64;
        let fraction = bits & ((1u64 << 52) - 1);
        // x = mantissa * 2^(shift - 1074)
        let (mantissa, shift) = if biased == 0 {
            (fraction, 0)
        } else {
            (fraction | (1u64 << 52), biased - 1)
        };
        let word = (mantissa as u128) << (shift % 32);
        let base = (shift / 32) as usize;
        for k in 0..3 {
            let chunk = ((word >> (32 * k)) & 0xffff_ffff) as i64;
            if negative {
                self.limbs[base + k] -= chunk;
            } else {
                self.limbs[base + k] += chunk;
            }
        }
    }

    fn is_positive(&self) -> bool {
        let mut limbs = self.limbs.clone();
        for i in 0..limbs.len() - 1 {
            let carry = limbs[i].div_euclid(1 << 32);
            limbs[i] = limbs[i].rem_euclid(1 << 32);
            limbs[i + 1] += carry;
        }
        let top = limbs[limbs.len() - 1];
        top > 0 || (top == 0 && limbs.iter().any(|&l| l != 0))
    }
}
