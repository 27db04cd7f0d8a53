//! Corruption procedures and the two-point confusion functional `xi`.
//!
//! Every strategy replaces exactly `floor(eps N)` points. The block
//! strategy hits a leading index block so the damage lands in as few
//! groups as possible; the others pick a uniformly random subset, taken as
//! a prefix of one permutation so that corrupted sets are nested across
//! `eps` for a fixed stream.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classes::DensityFamily;
use crate::density::{l2_sq_unchecked, tv_distance, GridDensity, BOUND_SLACK};
use crate::error::{Error, Result};
use crate::harness::sample_from_density;
use crate::tournament::{check_epsilon, Sample};

pub const DEFAULT_X0: f64 = 0.5;
/// Coordinate-ascent steps in the `xi` search.
pub const DEFAULT_XI_BUDGET: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    None,
    BlockPointMass,
    LecamMixture,
    ConfusionCluster,
}

/// JSON form `{"kind", "x0"?, "target"?, "epsilon_pp"?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<GridDensity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_pp: Option<f64>,
}

impl StrategySpec {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            x0: None,
            target: None,
            epsilon_pp: None,
        }
    }
}

/// A strategy with every parameter fixed for one truth, `eps` and `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionStrategy {
    pub kind: StrategyKind,
    pub x0: f64,
    pub target: Option<GridDensity>,
    /// Mixture weight consistent with `TV(truth, target)`.
    pub epsilon_pp: f64,
    /// Replacement density; `None` falls back to the truth.
    pub contamination: Option<GridDensity>,
}

/// Default `eps''`: the midpoint of `(3/N, eps/2)`, or `eps/4` when that
/// interval is empty.
pub fn default_epsilon_pp(epsilon: f64, n: usize) -> f64 {
    let lo = 3.0 / n as f64;
    let hi = epsilon / 2.0;
    if lo < hi {
        0.5 * (lo + hi)
    } else {
        hi / 2.0
    }
}

/// Number of corrupted points, `floor(eps N)`.
pub fn corrupted_count(epsilon: f64, n: usize) -> usize {
    // The slack keeps products like 0.07 * 100 from rounding down.
    (((epsilon * n as f64) + 1e-9).floor() as usize).min(n)
}

impl StrategySpec {
    /// Fixes targets and mixture weights against the true density.
    pub fn resolve<C: DensityFamily, R: Rng + ?Sized>(
        &self,
        class: &C,
        truth: &GridDensity,
        epsilon: f64,
        n: usize,
        rng: &mut R,
    ) -> Result<CorruptionStrategy> {
        check_epsilon(epsilon)?;
        let x0 = self.x0.unwrap_or(DEFAULT_X0);
        if !(0.0..=1.0).contains(&x0) {
            return Err(Error::Domain(format!("x0 must lie in [0, 1], got {x0}")));
        }
        if let Some(t) = &self.target {
            if t.m() != truth.m() {
                return Err(Error::Shape {
                    expected: truth.m(),
                    found: t.m(),
                });
            }
        }
        let mut out = CorruptionStrategy {
            kind: self.kind,
            x0,
            target: None,
            epsilon_pp: 0.0,
            contamination: None,
        };
        match self.kind {
            StrategyKind::None | StrategyKind::BlockPointMass => {}
            StrategyKind::LecamMixture | StrategyKind::ConfusionCluster => {
                let eps_pp = self.epsilon_pp.unwrap_or_else(|| default_epsilon_pp(epsilon, n));
                if !(0.0..1.0).contains(&eps_pp) {
                    return Err(Error::Domain(format!("epsilon_pp must lie in [0, 1), got {eps_pp}")));
                }
                let target = match &self.target {
                    Some(t) => t.clone(),
                    None => xi_target(class, truth, eps_pp / (1.0 - eps_pp), DEFAULT_XI_BUDGET, rng)?,
                };
                let tv = tv_distance(truth, &target)?;
                out.epsilon_pp = tv / (1.0 + tv);
                if tv > 0.0 {
                    if self.kind == StrategyKind::LecamMixture {
                        out.contamination = Some(lecam_pair(truth, &target)?.0);
                    } else {
                        let b = (0..truth.m())
                            .max_by(|&a, &b| {
                                let ra = target.values()[a] / truth.values()[a];
                                let rb = target.values()[b] / truth.values()[b];
                                ra.total_cmp(&rb).then(b.cmp(&a))
                            })
                            .unwrap_or(0);
                        out.x0 = (b as f64 + 0.5) / truth.m() as f64;
                    }
                }
                out.target = Some(target);
            }
        }
        Ok(out)
    }
}

/// Replaces `floor(eps N)` points of `clean`; untouched points keep their bits.
pub fn corrupt<R: Rng + ?Sized>(
    clean: &Sample,
    epsilon: f64,
    strategy: &CorruptionStrategy,
    truth: &GridDensity,
    rng: &mut R,
) -> Result<Sample> {
    check_epsilon(epsilon)?;
    let n = clean.len();
    let k = corrupted_count(epsilon, n);
    let mut points = clean.points.clone();
    match strategy.kind {
        StrategyKind::None => {}
        StrategyKind::BlockPointMass => {
            for p in points.iter_mut().take(k) {
                *p = strategy.x0;
            }
        }
        StrategyKind::LecamMixture | StrategyKind::ConfusionCluster => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            let hit = &order[..k];
            match (strategy.kind, &strategy.contamination) {
                (StrategyKind::LecamMixture, Some(q)) => {
                    let draws = sample_from_density(q, k, rng)?;
                    for (&i, x) in hit.iter().zip(draws) {
                        points[i] = x;
                    }
                }
                (StrategyKind::LecamMixture, None) => {
                    let draws = sample_from_density(truth, k, rng)?;
                    for (&i, x) in hit.iter().zip(draws) {
                        points[i] = x;
                    }
                }
                _ => {
                    for &i in hit {
                        points[i] = strategy.x0;
                    }
                }
            }
        }
    }
    Sample::new(points, clean.epsilon)
}

/// Contamination densities `(q1, q2)` with
/// `(1 - e) f1 + e q1 = (1 - e) f2 + e q2` whenever `TV(f1, f2) = e / (1 - e)`.
pub fn lecam_pair(f1: &GridDensity, f2: &GridDensity) -> Result<(GridDensity, GridDensity)> {
    let tv = tv_distance(f1, f2)?;
    if tv == 0.0 {
        return Err(Error::Degenerate("lecam_pair needs f1 != f2".into()));
    }
    let pos = |a: &GridDensity, b: &GridDensity| -> GridDensity {
        let v = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| if x >= y { (x - y) / tv } else { 0.0 })
            .collect();
        GridDensity::from_values_unchecked(v)
    };
    Ok((pos(f2, f1), pos(f1, f2)))
}

/// `eps''` matching a pair: `TV / (1 + TV)`.
pub fn fitted_epsilon_pp(f1: &GridDensity, f2: &GridDensity) -> Result<f64> {
    let tv = tv_distance(f1, f2)?;
    Ok(tv / (1.0 + tv))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiResult {
    /// `max ||f1 - f2||^2` found under the TV budget.
    pub xi: f64,
    /// TV budget `eps' / (1 - eps')`.
    pub tv_budget: f64,
    pub f1: GridDensity,
    pub f2: GridDensity,
    /// `2 t (beta - alpha)`, the continuum value for the full-bounded kind
    /// when the budget fits inside the class.
    pub closed_form: Option<f64>,
}

/// `2 (beta - alpha) t`, an upper bound on `xi` for every class.
pub fn xi_upper_bound(alpha: f64, beta: f64, tv_budget: f64) -> f64 {
    2.0 * (beta - alpha) * tv_budget
}

/// Largest squared distance between class members at TV distance at most
/// `eps' / (1 - eps')`, with `eps' = eps - 1/N`.
///
/// Sampled pairs are shrunk along their segment onto the TV budget, then a
/// deterministic mass-transfer ascent from the star center refines the
/// best pair. The result is a lower bound on the supremum.
pub fn xi_epsilon(
    class: &crate::classes::StarShapedClass,
    epsilon: f64,
    n: usize,
    budget: usize,
    rng: &mut (impl Rng + ?Sized),
) -> Result<XiResult> {
    if n == 0 || epsilon < 1.0 / n as f64 {
        return Err(Error::Domain(format!("xi needs epsilon >= 1/N, got {epsilon} with N = {n}")));
    }
    if epsilon >= 1.0 {
        return Err(Error::Domain(format!("epsilon must be below 1, got {epsilon}")));
    }
    let eps_p = epsilon - 1.0 / n as f64;
    let t = eps_p / (1.0 - eps_p);
    let center = class.star_center().clone();
    let mut best = (center.clone(), center.clone(), 0.0);
    if t > 0.0 {
        for _ in 0..budget {
            let f1 = class.sample_member(rng);
            let f2 = class.sample_member(rng);
            let tv = tv_distance(&f1, &f2)?;
            if tv == 0.0 {
                continue;
            }
            let s = (t / tv).min(1.0);
            let f2 = f1.lerp(&f2, s)?;
            let d2 = l2_sq_unchecked(f1.values(), f2.values());
            if d2 > best.2 {
                best = (f1, f2, d2);
            }
        }
        let (a, b, d2) = transfer_ascent(class, center.clone(), center, true, t, budget);
        if d2 > best.2 {
            best = (a, b, d2);
        }
    }
    let closed_form = match class.kind() {
        crate::classes::ClassKind::FullBounded if !class.is_singleton() => {
            let geometry = class.diameter(0, rng);
            Some(xi_upper_bound(class.alpha(), class.beta(), t.min(geometry.d_tv)))
        }
        _ => None,
    };
    Ok(XiResult {
        xi: best.2,
        tv_budget: t,
        f1: best.0,
        f2: best.1,
        closed_form,
    })
}

/// A member within TV distance `t` of `truth` that is far from it in L2.
pub fn xi_target<C: DensityFamily, R: Rng + ?Sized>(
    class: &C,
    truth: &GridDensity,
    t: f64,
    budget: usize,
    rng: &mut R,
) -> Result<GridDensity> {
    let mut best = (truth.clone(), 0.0);
    if !(t > 0.0) {
        return Ok(best.0);
    }
    for _ in 0..budget / 4 {
        let g = class.sample_member(rng);
        let tv = tv_distance(truth, &g)?;
        if tv == 0.0 {
            continue;
        }
        let g = truth.lerp(&g, (t / tv).min(1.0))?;
        let d2 = l2_sq_unchecked(truth.values(), g.values());
        if d2 > best.1 {
            best = (g, d2);
        }
    }
    let (_, g, d2) = transfer_ascent(class, truth.clone(), truth.clone(), false, t, budget);
    if d2 > best.1 {
        best = (g, d2);
    }
    Ok(best.0)
}

/// Greedy ascent on `||f1 - f2||^2` by moving mass between bins.
///
/// Each move shifts `eta / m` of mass from one bin to another in `f2` (or
/// the mirror move in `f1`), between the four bins where `f2 - f1` is
/// largest and the four where it is smallest. Step sizes halve when no move
/// improves. Moves must keep both densities in the class and the TV within
/// `t`.
fn transfer_ascent<C: DensityFamily>(
    class: &C,
    mut f1: GridDensity,
    mut f2: GridDensity,
    move_f1: bool,
    t: f64,
    budget: usize,
) -> (GridDensity, GridDensity, f64) {
    let m = class.m();
    let mf = m as f64;
    let width = class.beta() - class.alpha();
    let dist = |a: &GridDensity, b: &GridDensity| l2_sq_unchecked(a.values(), b.values());
    let tv = |a: &GridDensity, b: &GridDensity| {
        a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).sum::<f64>() / (2.0 * mf)
    };
    let mut current = dist(&f1, &f2);
    let mut eta = width;
    let mut steps = 0;
    let (lo, hi) = (class.alpha() - BOUND_SLACK, class.beta() + BOUND_SLACK);
    while eta > width * 1e-7 && steps < budget {
        let diff: Vec<f64> = f2.values().iter().zip(f1.values()).map(|(a, b)| a - b).collect();
        // Only bins that can still move by `eta` on either side compete.
        let pick = |ok: &dyn Fn(usize) -> bool, descending: bool| -> Vec<usize> {
            let mut bins: Vec<usize> = (0..m).filter(|&i| ok(i)).collect();
            bins.sort_by(|&a, &b| {
                let o = diff[b].total_cmp(&diff[a]);
                (if descending { o } else { o.reverse() }).then(a.cmp(&b))
            });
            bins.truncate(4);
            bins
        };
        let (v1, v2) = (f1.values(), f2.values());
        let top: Vec<usize> = pick(&|i| v2[i] + eta <= hi || (move_f1 && v1[i] - eta >= lo), true);
        let bottom: Vec<usize> = pick(&|i| v2[i] - eta >= lo || (move_f1 && v1[i] + eta <= hi), false);
        let mut best: Option<(GridDensity, bool, f64)> = None;
        for &up in &top {
            for &down in &bottom {
                if up == down {
                    continue;
                }
                for side in [false, true] {
                    if side && !move_f1 {
                        continue;
                    }
                    let mut v = if side { f1.values().to_vec() } else { f2.values().to_vec() };
                    // f2 gains at `up`, f1 loses there; both widen the gap.
                    let (inc, dec) = if side { (down, up) } else { (up, down) };
                    v[inc] += eta;
                    v[dec] -= eta;
                    let cand = GridDensity::from_values_unchecked(v);
                    if !class.contains(&cand).unwrap_or(false) {
                        continue;
                    }
                    let (a, b) = if side { (&cand, &f2) } else { (&f1, &cand) };
                    if tv(a, b) > t * (1.0 + 1e-12) {
                        continue;
                    }
                    let d = dist(a, b);
                    if d > current + 1e-15 && best.as_ref().map_or(true, |x| d > x.2) {
                        best = Some((cand, side, d));
                    }
                }
            }
        }
        steps += 1;
        match best {
            Some((cand, side, d)) => {
                if side {
                    f1 = cand;
                } else {
                    f2 = cand;
                }
                current = d;
            }
            None => eta /= 2.0,
        }
    }
    (f1, f2, current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::{ClassKind, StarShapedClass};
    use crate::rng::stream;

    fn d(v: &[f64]) -> GridDensity {
        GridDensity::from_values(v.to_vec()).unwrap()
    }

    fn clean(n: usize) -> Sample {
        let pts = (0..n).map(|i| (i as f64 + 0.25) / n as f64).collect();
        Sample::new(pts, 0.0).unwrap()
    }

    fn resolved(kind: StrategyKind, truth: &GridDensity, eps: f64, n: usize) -> CorruptionStrategy {
        let class = StarShapedClass::new(ClassKind::FullBounded, 0.5, 1.5, truth.m()).unwrap();
        StrategySpec::new(kind)
            .resolve(&class, truth, eps, n, &mut stream(1, &[]))
            .unwrap()
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let f = GridDensity::uniform(8);
        let s = clean(50);
        for kind in [
            StrategyKind::None,
            StrategyKind::BlockPointMass,
            StrategyKind::LecamMixture,
            StrategyKind::ConfusionCluster,
        ] {
            let st = resolved(kind, &f, 0.0, 50);
            let out = corrupt(&s, 0.0, &st, &f, &mut stream(2, &[])).unwrap();
            assert_eq!(out, s);
        }
    }

    #[test]
    fn corrupted_counts_are_exact() {
        let f = d(&[1.5, 1.5, 1.0, 1.0, 1.0, 1.0, 0.5, 0.5]);
        let s = clean(100);
        for kind in [StrategyKind::BlockPointMass, StrategyKind::LecamMixture, StrategyKind::ConfusionCluster] {
            let st = resolved(kind, &f, 0.05, 100);
            let out = corrupt(&s, 0.05, &st, &f, &mut stream(3, &[])).unwrap();
            let changed = out
                .points
                .iter()
                .zip(&s.points)
                .filter(|(a, b)| a.to_bits() != b.to_bits())
                .count();
            assert_eq!(changed, 5, "{kind:?}");
        }
        assert_eq!(corrupted_count(0.07, 100), 7);
        assert_eq!(corrupted_count(0.29, 100), 29);
    }

    #[test]
    fn block_point_mass_hits_leading_block() {
        let f = GridDensity::uniform(4);
        let st = resolved(StrategyKind::BlockPointMass, &f, 0.1, 40);
        let out = corrupt(&clean(40), 0.1, &st, &f, &mut stream(0, &[])).unwrap();
        assert!(out.points[..4].iter().all(|&x| x == 0.5));
        assert!(out.points[4] != 0.5);
    }

    #[test]
    fn lecam_pair_step_example() {
        // f2 moves 0.5 of density from (0, 0.05] to (0.95, 1]; TV = 0.025.
        let m = 20;
        let f1 = GridDensity::uniform(m);
        let mut v = vec![1.0; m];
        v[0] = 0.5;
        v[m - 1] = 1.5;
        let f2 = d(&v);
        let (q1, q2) = lecam_pair(&f1, &f2).unwrap();
        assert!((q1.values()[m - 1] - 20.0).abs() < 1e-12);
        assert!(q1.values()[..m - 1].iter().all(|&x| x == 0.0));
        assert!((q1.mean() - 1.0).abs() < 1e-12);
        assert!((q2.mean() - 1.0).abs() < 1e-12);
        let (r1, r2) = lecam_pair(&f2, &f1).unwrap();
        assert_eq!((r1, r2), (q2, q1));
        assert!(matches!(lecam_pair(&f1, &f1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn default_epsilon_pp_choice() {
        assert!((default_epsilon_pp(0.15, 1000) - 0.039).abs() < 1e-12);
        assert!((default_epsilon_pp(0.01, 100) - 0.0025).abs() < 1e-12);
    }

    #[test]
    fn xi_full_bounded_small_example() {
        // t = 0.03. The continuum optimum moves |delta| = beta - alpha on
        // measure t / (beta - alpha), giving 2 t (beta - alpha) = 0.06. An
        // 8-bin grid cannot concentrate that finely: the best it can do is
        // +-2mt = 0.24 in one bin each, i.e. 2 * 0.24^2 / 8 = 0.0144.
        let n = 1000;
        let eps = 0.03 / 1.03 + 1.0 / n as f64;
        let coarse = StarShapedClass::new(ClassKind::FullBounded, 0.5, 1.5, 8).unwrap();
        let r = xi_epsilon(&coarse, eps, n, 2_000, &mut stream(5, &[])).unwrap();
        assert!((r.tv_budget - 0.03).abs() < 1e-12);
        assert!((r.closed_form.unwrap() - 0.06).abs() < 1e-12);
        assert!((r.xi - 0.0144).abs() < 1e-6, "xi = {}", r.xi);
        assert!(coarse.contains(&r.f1).unwrap() && coarse.contains(&r.f2).unwrap());
        assert!(tv_distance(&r.f1, &r.f2).unwrap() <= 0.03 + 1e-12);
        // With m t integral the grid reaches the continuum value.
        let fine = StarShapedClass::new(ClassKind::FullBounded, 0.5, 1.5, 100).unwrap();
        let r = xi_epsilon(&fine, eps, n, 200, &mut stream(5, &[])).unwrap();
        assert!((r.xi - 0.06).abs() < 1e-6, "xi = {}", r.xi);
        assert!(r.xi <= xi_upper_bound(0.5, 1.5, r.tv_budget) + 1e-12);
    }

    #[test]
    fn xi_boundary_cases() {
        let class = StarShapedClass::new(ClassKind::FullBounded, 0.5, 1.5, 8).unwrap();
        let r = xi_epsilon(&class, 0.01, 100, 100, &mut stream(5, &[])).unwrap();
        assert_eq!(r.xi, 0.0);
        assert!(xi_epsilon(&class, 0.005, 100, 100, &mut stream(5, &[])).is_err());
    }

    #[test]
    fn resolved_lecam_target_respects_budget() {
        let class = StarShapedClass::new(ClassKind::MonotoneDecreasing, 0.5, 1.5, 16).unwrap();
        let truth = d(&[1.4, 1.3, 1.2, 1.2, 1.1, 1.1, 1.0, 1.0, 1.0, 1.0, 0.9, 0.9, 0.8, 0.8, 0.7, 0.6]);
        let st = StrategySpec::new(StrategyKind::LecamMixture)
            .resolve(&class, &truth, 0.15, 1000, &mut stream(9, &[]))
            .unwrap();
        let target = st.target.clone().unwrap();
        assert!(class.contains(&target).unwrap());
        let t = default_epsilon_pp(0.15, 1000);
        assert!(tv_distance(&truth, &target).unwrap() <= t / (1.0 - t) + 1e-12);
        assert!(st.epsilon_pp > 0.0);
        let q = st.contamination.unwrap();
        assert!((q.mean() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn strategy_spec_json() {
        let s: StrategySpec = serde_json::from_str(r#"{"kind": "block-point-mass", "x0": 0.9}"#).unwrap();
        assert_eq!(s.kind, StrategyKind::BlockPointMass);
        assert_eq!(s.x0, Some(0.9));
        assert!(serde_json::from_str::<StrategySpec>(r#"{"kind": "nope"}"#).is_err());
        assert!(serde_json::from_str::<StrategySpec>(r#"{"kind": "none", "x": 1}"#).is_err());
    }
}
