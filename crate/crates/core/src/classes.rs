//! Star-shaped subsets of the bounded density class on a fixed grid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::{l2_sq_unchecked, tv_distance, GridDensity, BOUND_SLACK, NORMALIZATION_TOL};
use crate::error::{Error, Result};

/// Slack allowed between consecutive bins of a monotone density.
pub const MONOTONE_SLACK: f64 = 1e-12;

/// Largest grid a class may use.
pub const MAX_BINS: usize = 1 << 20;

/// Sampling access to a set of grid densities.
///
/// Packing, entropy and tree construction only ever touch a class through
/// this trait, so finite toy classes and the built-in star-shaped classes
/// share the same machinery.
pub trait DensityFamily: Sync {
    fn m(&self) -> usize;
    fn alpha(&self) -> f64;
    fn beta(&self) -> f64;
    fn contains(&self, f: &GridDensity) -> Result<bool>;
    fn star_center(&self) -> &GridDensity;
    fn sample_member<R: Rng + ?Sized>(&self, rng: &mut R) -> GridDensity;
    /// A member within L2 distance `radius` of `center`.
    fn sample_in_ball<R: Rng + ?Sized>(&self, center: &GridDensity, radius: f64, rng: &mut R) -> GridDensity;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassKind {
    FullBounded,
    MonotoneDecreasing,
}

/// JSON description of a class: `{"kind", "alpha", "beta", "m"}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub kind: ClassKind,
    pub alpha: f64,
    pub beta: f64,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StarShapedClass {
    kind: ClassKind,
    alpha: f64,
    beta: f64,
    m: usize,
    star_center: GridDensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassGeometry {
    pub d_l2: f64,
    pub d_tv: f64,
    /// False when the values are lower bounds from a budgeted search.
    pub exact: bool,
    pub budget: usize,
}

impl StarShapedClass {
    pub fn new(kind: ClassKind, alpha: f64, beta: f64, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("class needs m >= 1".into()));
        }
        if m > MAX_BINS {
            return Err(Error::Size(format!("{m} bins exceed the limit of {MAX_BINS}")));
        }
        if !(alpha > 0.0 && alpha <= 1.0 && beta >= 1.0 && beta.is_finite()) {
            return Err(Error::Config(format!(
                "class bounds need 0 < alpha <= 1 <= beta, got alpha = {alpha}, beta = {beta}"
            )));
        }
        Ok(Self {
            kind,
            alpha,
            beta,
            m,
            star_center: GridDensity::uniform(m),
        })
    }

    pub fn from_spec(spec: &ClassSpec) -> Result<Self> {
        Self::new(spec.kind, spec.alpha, spec.beta, spec.m)
    }

    pub fn spec(&self) -> ClassSpec {
        ClassSpec {
            kind: self.kind,
            alpha: self.alpha,
            beta: self.beta,
            m: self.m,
        }
    }

    pub fn kind(&self) -> ClassKind {
        self.kind
    }

    /// True when the class has exactly one member (the uniform density).
    pub fn is_singleton(&self) -> bool {
        self.m == 1 || self.alpha == self.beta
    }

    /// Maps an arbitrary vector onto a class member.
    ///
    /// Monotone classes first take the non-increasing isotonic fit; both
    /// kinds then solve for the shift `lambda` with
    /// `mean(clip(u + lambda, alpha, beta)) = 1`.
    pub fn project(&self, raw: &[f64]) -> Result<GridDensity> {
        if raw.len() != self.m {
            return Err(Error::Shape {
                expected: self.m,
                found: raw.len(),
            });
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("cannot project non-finite values".into()));
        }
        let base = match self.kind {
            ClassKind::FullBounded => raw.to_vec(),
            ClassKind::MonotoneDecreasing => isotonic_decreasing(raw),
        };
        Ok(GridDensity::from_values_unchecked(shift_clip(&base, self.alpha, self.beta)))
    }

    /// L2 and TV diameters.
    ///
    /// For the full-bounded kind every vertex of the feasible polytope is a
    /// permutation of the same sorted vector `s` (`k` bins at `beta`, one
    /// fractional bin, the rest at `alpha`), and both distances are
    /// maximized by pairing `s` against its reversal. Other kinds fall back
    /// to a random-pair search refined by pushing the best pair apart; the
    /// result is then only a lower bound.
    pub fn diameter<R: Rng + ?Sized>(&self, budget: usize, rng: &mut R) -> ClassGeometry {
        if self.is_singleton() {
            return ClassGeometry {
                d_l2: 0.0,
                d_tv: 0.0,
                exact: true,
                budget: 0,
            };
        }
        match self.kind {
            ClassKind::FullBounded => {
                let s = self.sorted_vertex();
                let m = self.m as f64;
                let (mut l2, mut l1) = (0.0, 0.0);
                for i in 0..self.m {
                    let diff = s[i] - s[self.m - 1 - i];
                    l2 += diff * diff;
                    l1 += diff.abs();
                }
                ClassGeometry {
                    d_l2: (l2 / m).sqrt(),
                    d_tv: l1 / (2.0 * m),
                    exact: true,
                    budget: 0,
                }
            }
            ClassKind::MonotoneDecreasing => self.search_diameter(budget.max(1), rng),
        }
    }

    /// The vertex with bins sorted in decreasing order.
    fn sorted_vertex(&self) -> Vec<f64> {
        let m = self.m as f64;
        let width = self.beta - self.alpha;
        // Mass above alpha, measured in units of one bin at value 1.
        let excess = (1.0 - self.alpha) * m;
        let full = ((excess / width).floor() as usize).min(self.m);
        let mut s = vec![self.alpha; self.m];
        for v in s.iter_mut().take(full) {
            *v = self.beta;
        }
        if full < self.m {
            s[full] = (self.alpha + excess - full as f64 * width).min(self.beta);
        }
        s
    }

    fn search_diameter<R: Rng + ?Sized>(&self, budget: usize, rng: &mut R) -> ClassGeometry {
        let mut best = (self.star_center.clone(), self.star_center.clone(), 0.0);
        let mut best_tv: f64 = 0.0;
        for _ in 0..budget {
            let f = self.sample_member(rng);
            let g = self.sample_member(rng);
            let d2 = l2_sq_unchecked(f.values(), g.values());
            best_tv = best_tv.max(tv_distance(&f, &g).unwrap_or(0.0));
            if d2 > best.2 {
                best = (f, g, d2);
            }
        }
        let (mut f, mut g, mut d2) = best;
        // Coordinate ascent: push one endpoint away from the other.
        for _ in 0..64 {
            let mut improved = false;
            for side in 0..2 {
                let (moving, fixed) = if side == 0 { (&f, &g) } else { (&g, &f) };
                let mut step = 1.0;
                while step > 1e-4 {
                    let raw: Vec<f64> = moving
                        .values()
                        .iter()
                        .zip(fixed.values())
                        .map(|(a, b)| a + step * (a - b))
                        .collect();
                    if let Ok(cand) = self.project(&raw) {
                        let c2 = l2_sq_unchecked(cand.values(), fixed.values());
                        if c2 > d2 + 1e-15 {
                            d2 = c2;
                            if side == 0 {
                                f = cand;
                            } else {
                                g = cand;
                            }
                            improved = true;
                            break;
                        }
                    }
                    step *= 0.5;
                }
            }
            if !improved {
                break;
            }
        }
        best_tv = best_tv.max(tv_distance(&f, &g).unwrap_or(0.0));
        ClassGeometry {
            d_l2: d2.sqrt(),
            d_tv: best_tv,
            exact: false,
            budget,
        }
    }

    fn raw_bounded_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let width = self.beta - self.alpha;
        if rng.gen_bool(0.5) {
            (0..self.m).map(|_| self.alpha + width * rng.gen::<f64>()).collect()
        } else {
            // Two-level draws reach the polytope's vertices and faces.
            let p: f64 = rng.gen();
            (0..self.m)
                .map(|_| if rng.gen_bool(p) { self.beta } else { self.alpha })
                .collect()
        }
    }
}

impl DensityFamily for StarShapedClass {
    fn m(&self) -> usize {
        self.m
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn beta(&self) -> f64 {
        self.beta
    }

    fn contains(&self, f: &GridDensity) -> Result<bool> {
        if f.m() != self.m {
            return Err(Error::Shape {
                expected: self.m,
                found: f.m(),
            });
        }
        let v = f.values();
        if (f.mean() - 1.0).abs() > NORMALIZATION_TOL {
            return Ok(false);
        }
        if v
            .iter()
            .any(|x| *x < self.alpha - BOUND_SLACK || *x > self.beta + BOUND_SLACK)
        {
            return Ok(false);
        }
        Ok(match self.kind {
            ClassKind::FullBounded => true,
            ClassKind::MonotoneDecreasing => v.windows(2).all(|w| w[1] <= w[0] + MONOTONE_SLACK),
        })
    }

    fn star_center(&self) -> &GridDensity {
        &self.star_center
    }

    fn sample_member<R: Rng + ?Sized>(&self, rng: &mut R) -> GridDensity {
        if self.is_singleton() {
            return self.star_center.clone();
        }
        let mut raw = self.raw_bounded_sample(rng);
        if self.kind == ClassKind::MonotoneDecreasing {
            raw.sort_by(|a, b| b.total_cmp(a));
        }
        GridDensity::from_values_unchecked(shift_clip(&raw, self.alpha, self.beta))
    }

    /// A free draw, shrunk toward `center` when it lies beyond a radius drawn
    /// from the uniform-ball law. Both kinds are convex, so the segment stays
    /// in the class.
    fn sample_in_ball<R: Rng + ?Sized>(&self, center: &GridDensity, radius: f64, rng: &mut R) -> GridDensity {
        if !(radius > 0.0) || self.is_singleton() {
            return center.clone();
        }
        let f = self.sample_member(rng);
        let dist = l2_sq_unchecked(center.values(), f.values()).sqrt();
        // Radial law of a uniform draw from an (m - 1)-dimensional ball,
        // with a relative margin so rounding never leaves the ball.
        let dim = self.m.saturating_sub(1).max(1) as f64;
        let target = radius * (1.0 - 1e-9) * rng.gen::<f64>().powf(1.0 / dim);
        if dist <= target {
            return f;
        }
        let s = target / dist;
        let values = center
            .values()
            .iter()
            .zip(f.values())
            .map(|(c, x)| c + s * (x - c))
            .collect();
        GridDensity::from_values_unchecked(values)
    }
}

/// Finds `lambda` with `mean(clip(u + lambda, lo, hi)) = 1` and applies it.
pub(crate) fn shift_clip(u: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let m = u.len() as f64;
    let mean_at = |lam: f64| u.iter().map(|x| (x + lam).clamp(lo, hi)).sum::<f64>() / m;
    let max_u = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_u = u.iter().cloned().fold(f64::INFINITY, f64::min);
    let (mut a, mut b) = (lo - max_u, hi - min_u);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if mean_at(mid) < 1.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let lam = 0.5 * (a + b);
    // Solve exactly on the active set found by bisection.
    let (mut fixed_sum, mut free_sum, mut n_free) = (0.0, 0.0, 0usize);
    for x in u {
        let y = x + lam;
        if y <= lo {
            fixed_sum += lo;
        } else if y >= hi {
            fixed_sum += hi;
        } else {
            free_sum += x;
            n_free += 1;
        }
    }
    let lam = if n_free > 0 {
        let exact = (m - fixed_sum - free_sum) / n_free as f64;
        if (exact - lam).abs() < 1e-6 {
            exact
        } else {
            lam
        }
    } else {
        lam
    };
    u.iter().map(|x| (x + lam).clamp(lo, hi)).collect()
}

/// Least-squares non-increasing fit (pool adjacent violators).
pub fn isotonic_decreasing(y: &[f64]) -> Vec<f64> {
    // Blocks of (sum, count).
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() >= 2 {
            let n = blocks.len();
            let (s1, c1) = blocks[n - 2];
            let (s2, c2) = blocks[n - 1];
            if s1 / c1 as f64 >= s2 / c2 as f64 {
                break;
            }
            blocks.truncate(n - 2);
            blocks.push((s1 + s2, c1 + c2));
        }
    }
    let mut out = Vec::with_capacity(y.len());
    for (s, c) in blocks {
        out.extend(std::iter::repeat(s / c as f64).take(c));
    }
    out
}

/// Least-squares non-decreasing fit.
pub fn isotonic_increasing(y: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = y.iter().map(|v| -v).collect();
    isotonic_decreasing(&neg).into_iter().map(|v| -v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::l2_distance;
    use crate::rng::stream;

    fn d(v: &[f64]) -> GridDensity {
        GridDensity::from_values(v.to_vec()).unwrap()
    }

    #[test]
    fn membership_examples() {
        let full = StarShapedClass::new(ClassKind::FullBounded, 0.5, 1.5, 4).unwrap();
        let mono = StarShapedClass::new(ClassKind::MonotoneDecreasing, 0.5, 1.5, 4).unwrap();
        let u = GridDensity::uniform(4);
        assert!(full.contains(&u).unwrap());
        assert!(mono.contains(&u).unwrap());
        assert!(mono.contains(&d(&[1.5, 1.0, 1.0, 0.5])).unwrap());
        assert!(!mono.contains(&d(&[0.5, 1.0, 1.0, 1.5])).unwrap());
        assert!(full.contains(&d(&[0.5, 1.0, 1.0, 1.5])).unwrap());
        assert!(matches!(full.contains(&GridDensity::uniform(3)), Err(Error::Shape { .. })));
    }

    #[test]
    fn samplers_stay_in_class() {
        for kind in [ClassKind::FullBounded, ClassKind::MonotoneDecreasing] {
            let class = StarShapedClass::new(kind, 0.5, 1.5, 16).unwrap();
            let mut rng = stream(11, &[kind as u64]);
            for _ in 0..10_000 {
                let f = class.sample_member(&mut rng);
                assert!(class.contains(&f).unwrap(), "{kind:?} sample left the class: {f:?}");
            }
        }
    }

    #[test]
    fn ball_sampler_respects_radius() {
        for kind in [ClassKind::FullBounded, ClassKind::MonotoneDecreasing] {
            let class = StarShapedClass::new(kind, 0.5, 1.5, 8).unwrap();
            let mut rng = stream(5, &[kind as u64]);
            let center = class.sample_member(&mut rng);
            for radius in [0.3, 0.05, 1e-4] {
                for _ in 0..1_000 {
                    let g = class.sample_in_ball(&center, radius, &mut rng);
                    assert!(l2_distance(&center, &g).unwrap() <= radius);
                    assert!(class.contains(&g).unwrap());
                }
            }
            assert_eq!(class.sample_in_ball(&center, 0.0, &mut rng), center);
        }
    }

    #[test]
    fn star_shape_closure() {
        for kind in [ClassKind::FullBounded, ClassKind::MonotoneDecreasing] {
            let class = StarShapedClass::new(kind, 0.5, 1.5, 12).unwrap();
            let mut rng = stream(3, &[kind as u64]);
            for _ in 0..500 {
                let f = class.sample_member(&mut rng);
                let t: f64 = rng.gen();
                let seg = f.lerp(class.star_center(), t).unwrap();
                assert!(class.contains(&seg).unwrap());
            }
        }
    }

    #[test]
    fn full_bounded_diameter_closed_form() {
        let class = StarShapedClass::new(ClassKind::FullBounded, 0.5, 1.5, 8).unwrap();
        let g = class.diameter(1, &mut stream(0, &[]));
        assert!((g.d_l2 - 1.0).abs() < 1e-12);
        assert!((g.d_tv - 0.5).abs() < 1e-12);
        assert!(g.exact);
    }

    #[test]
    fn singleton_classes() {
        let one_bin = StarShapedClass::new(ClassKind::FullBounded, 0.5, 1.5, 1).unwrap();
        let flat = StarShapedClass::new(ClassKind::MonotoneDecreasing, 1.0, 1.0, 6).unwrap();
        for class in [one_bin, flat] {
            let g = class.diameter(10, &mut stream(0, &[]));
            assert_eq!((g.d_l2, g.d_tv), (0.0, 0.0));
            let f = class.sample_member(&mut stream(1, &[]));
            assert_eq!(&f, class.star_center());
        }
    }

    #[test]
    fn monotone_diameter_is_a_lower_bound() {
        let class = StarShapedClass::new(ClassKind::MonotoneDecreasing, 0.5, 1.5, 8).unwrap();
        let g = class.diameter(500, &mut stream(2, &[]));
        assert!(!g.exact);
        // A midpoint step against the uniform density already reaches 0.5.
        assert!(g.d_l2 >= 0.4, "search found only {}", g.d_l2);
        assert!(g.d_l2 * g.d_l2 <= (1.5 - 0.5) * 2.0 * g.d_tv + 1e-12);
    }

    #[test]
    fn projection_lands_in_class() {
        let mono = StarShapedClass::new(ClassKind::MonotoneDecreasing, 0.5, 1.5, 5).unwrap();
        let f = mono.project(&[0.1, 3.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(mono.contains(&f).unwrap());
        let full = StarShapedClass::new(ClassKind::FullBounded, 0.5, 1.5, 5).unwrap();
        let g = full.project(&[10.0, -3.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(full.contains(&g).unwrap());
        assert!((g.mean() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn isotonic_fit() {
        assert_eq!(isotonic_decreasing(&[1.0, 3.0, 2.0]), vec![2.0, 2.0, 2.0]);
        assert_eq!(isotonic_decreasing(&[3.0, 1.0, 2.0]), vec![3.0, 1.5, 1.5]);
        assert_eq!(isotonic_increasing(&[1.0, 0.0, 2.0]), vec![0.5, 0.5, 2.0]);
    }

    #[test]
    fn class_spec_json() {
        let spec: ClassSpec =
            serde_json::from_str(r#"{"kind":"monotone-decreasing","alpha":0.5,"beta":1.5,"m":16}"#).unwrap();
        assert_eq!(spec.kind, ClassKind::MonotoneDecreasing);
        assert!(StarShapedClass::from_spec(&spec).is_ok());
        assert!(serde_json::from_str::<ClassSpec>(r#"{"kind":"convex","alpha":0.5,"beta":1.5,"m":4}"#).is_err());
        let bad = ClassSpec { alpha: 1.2, ..spec };
        assert!(StarShapedClass::from_spec(&bad).is_err());
    }
}
