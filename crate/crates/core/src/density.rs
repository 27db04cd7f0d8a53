//! Piecewise-constant densities on `[0, 1]` and the exact kernels between them.
//!
//! A [`GridDensity`] with `m` bins stores one value per bin of width `1/m`.
//! Every integral against Lebesgue measure is therefore a finite sum, which
//! makes the metric inequalities checkable to floating-point precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|mean(values) - 1|` for a valid density.
pub const NORMALIZATION_TOL: f64 = 1e-10;

/// Slack applied to the `[alpha, beta]` bound checks.
pub const BOUND_SLACK: f64 = 1e-12;

const RENORMALIZE_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGridDensity", into = "RawGridDensity")]
pub struct GridDensity {
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawGridDensity {
    m: usize,
    values: Vec<f64>,
}

impl TryFrom<RawGridDensity> for GridDensity {
    type Error = Error;

    fn try_from(raw: RawGridDensity) -> Result<Self> {
        if raw.values.len() != raw.m {
            return Err(Error::Shape {
                expected: raw.m,
                found: raw.values.len(),
            });
        }
        GridDensity::from_values(raw.values)
    }
}

impl From<GridDensity> for RawGridDensity {
    fn from(f: GridDensity) -> Self {
        RawGridDensity {
            m: f.values.len(),
            values: f.values,
        }
    }
}

impl GridDensity {
    /// Wraps raw bin values without checking bounds or normalization.
    ///
    /// Values must be finite and non-negative and there must be at least one
    /// bin. Use [`validate_density`] to enforce the class invariants.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("a grid density needs at least one bin".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain(format!(
                "bin {i} holds {} which is not a finite non-negative value",
                values[i]
            )));
        }
        Ok(Self { values })
    }

    pub fn uniform(m: usize) -> Self {
        assert!(m > 0, "uniform density needs m >= 1");
        Self {
            values: vec![1.0; m],
        }
    }

    /// Divide by the mean, clip to `[alpha, beta]`, repeat until normalized.
    pub fn renormalize_clip(raw: Vec<f64>, alpha: f64, beta: f64) -> Result<Self> {
        let mut f = Self::from_values(raw)?;
        for _ in 0..RENORMALIZE_MAX_ITERS {
            let mean = f.mean();
            if mean <= 0.0 {
                return Err(Error::Normalization { mean });
            }
            let in_bounds = f
                .values
                .iter()
                .all(|v| *v >= alpha - BOUND_SLACK && *v <= beta + BOUND_SLACK);
            if (mean - 1.0).abs() <= NORMALIZATION_TOL && in_bounds {
                return Ok(f);
            }
            for v in &mut f.values {
                *v = (*v / mean).clamp(alpha, beta);
            }
        }
        Err(Error::NotConverged {
            iterations: RENORMALIZE_MAX_ITERS,
        })
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.m() as f64
    }

    /// Bin holding `x`; the right endpoint `x = 1` belongs to the last bin.
    #[inline]
    pub fn bin_of(&self, x: f64) -> usize {
        bin_index(x, self.m())
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.values[self.bin_of(x)]
    }

    /// Pointwise `(1 - t) * self + t * other`.
    pub fn lerp(&self, other: &GridDensity, t: f64) -> Result<GridDensity> {
        check_shape(self, other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + t * (b - a))
            .collect();
        Ok(GridDensity { values })
    }

    pub(crate) fn from_values_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        Self { values }
    }
}

#[inline]
pub fn bin_index(x: f64, m: usize) -> usize {
    let b = (x * m as f64).floor();
    if b <= 0.0 {
        0
    } else {
        (b as usize).min(m - 1)
    }
}

fn check_shape(f: &GridDensity, g: &GridDensity) -> Result<()> {
    if f.m() != g.m() {
        return Err(Error::Shape {
            expected: f.m(),
            found: g.m(),
        });
    }
    Ok(())
}

/// Checks normalization first, then the `[alpha, beta]` bounds.
pub fn validate_density(values: &[f64], m: usize, alpha: f64, beta: f64) -> Result<GridDensity> {
    if values.len() != m {
        return Err(Error::Shape {
            expected: m,
            found: values.len(),
        });
    }
    let f = GridDensity::from_values(values.to_vec())?;
    let mean = f.mean();
    if (mean - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Normalization { mean });
    }
    let bins: Vec<usize> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v < alpha - BOUND_SLACK || **v > beta + BOUND_SLACK)
        .map(|(i, _)| i)
        .collect();
    if !bins.is_empty() {
        return Err(Error::Bound { bins, alpha, beta });
    }
    Ok(f)
}

/// Squared L2 distance `(1/m) * sum (f_i - g_i)^2`, without the shape check.
#[inline]
pub(crate) fn l2_sq_unchecked(f: &[f64], g: &[f64]) -> f64 {
    let s: f64 = f.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum();
    s / f.len() as f64
}

/// Returns true when `||f - g||_2 <= radius`, stopping early once exceeded.
#[inline]
pub(crate) fn within_unchecked(f: &[f64], g: &[f64], radius: f64) -> bool {
    let limit = radius * radius * f.len() as f64;
    let mut s = 0.0;
    for (a, b) in f.iter().zip(g) {
        s += (a - b) * (a - b);
        if s > limit {
            return false;
        }
    }
    true
}

pub fn l2_distance_sq(f: &GridDensity, g: &GridDensity) -> Result<f64> {
    check_shape(f, g)?;
    Ok(l2_sq_unchecked(&f.values, &g.values))
}

pub fn l2_distance(f: &GridDensity, g: &GridDensity) -> Result<f64> {
    l2_distance_sq(f, g).map(f64::sqrt)
}

pub fn tv_distance(f: &GridDensity, g: &GridDensity) -> Result<f64> {
    check_shape(f, g)?;
    let s: f64 = f.values.iter().zip(&g.values).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / (2 * f.m()) as f64)
}

/// `d_KL(f || g) = (1/m) * sum f_i log(f_i / g_i)`.
pub fn kl_divergence(f: &GridDensity, g: &GridDensity) -> Result<f64> {
    check_shape(f, g)?;
    if let Some(i) = g.values.iter().position(|v| *v <= 0.0) {
        return Err(Error::Domain(format!(
            "KL divergence needs g > 0 everywhere, bin {i} is {}",
            g.values[i]
        )));
    }
    let s: f64 = f
        .values
        .iter()
        .zip(&g.values)
        .map(|(a, b)| if *a == 0.0 { 0.0 } else { a * (a / b).ln() })
        .sum();
    // Exact zero when the arrays agree.
    Ok((s / f.m() as f64).max(0.0))
}

pub fn hellinger_distance(f: &GridDensity, g: &GridDensity) -> Result<f64> {
    check_shape(f, g)?;
    let s: f64 = f
        .values
        .iter()
        .zip(&g.values)
        .map(|(a, b)| {
            let d = a.sqrt() - b.sqrt();
            d * d
        })
        .sum();
    Ok((s / f.m() as f64).sqrt())
}

/// `h(gamma) = (gamma - 1 - ln gamma) / (gamma - 1)^2`, with `h(1) = 1/2`.
///
/// Within `1e-8` of `gamma = 1` the three-term Taylor expansion is used to
/// avoid the `0/0` cancellation.
pub fn h_gamma(gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Domain(format!("h(gamma) needs gamma > 0, got {gamma}")));
    }
    let u = gamma - 1.0;
    if u.abs() < 1e-8 {
        return Ok(0.5 - u / 3.0 + u * u / 4.0);
    }
    Ok((u - gamma.ln()) / (u * u))
}

/// Constants of the group log-likelihood concentration bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub alpha: f64,
    pub beta: f64,
    /// Separation multiplier `C` in the tournament.
    #[serde(rename = "C")]
    pub big_c: f64,
    /// Entropy constant `c = 2(C + 1)`.
    pub c_local: f64,
    pub phi: f64,
    /// `c(alpha, beta) = h(beta/alpha) / beta`.
    pub c_ab: f64,
    pub k_ab: f64,
    pub l_abc: f64,
    pub c10: f64,
}

pub const DEFAULT_PHI: f64 = 1.2;
pub const DEFAULT_BIG_C: f64 = 5.0;

/// Smallest admissible `C`, i.e. `1 + sqrt(1 / (alpha * c(alpha, beta)))`.
pub fn min_admissible_c(alpha: f64, beta: f64) -> Result<f64> {
    let c_ab = h_gamma(beta / alpha)? / beta;
    Ok(1.0 + (1.0 / (alpha * c_ab)).sqrt())
}

pub fn derive_constants(alpha: f64, beta: f64, big_c: f64, phi: f64) -> Result<TheoryConstants> {
    if !(alpha > 0.0 && beta > alpha && beta.is_finite()) {
        return Err(Error::Domain(format!(
            "constants need 0 < alpha < beta, got alpha = {alpha}, beta = {beta}"
        )));
    }
    if !(phi > 0.0 && phi < 1.5) {
        return Err(Error::Domain(format!("phi must lie in (0, 3/2), got {phi}")));
    }
    let c_ab = h_gamma(beta / alpha)? / beta;
    let min_c = 1.0 + (1.0 / (alpha * c_ab)).sqrt();
    if !(big_c > min_c) {
        return Err(Error::Constraint {
            given: big_c,
            min_c,
        });
    }
    let k_ab = beta / (alpha * alpha * c_ab);
    let gap = c_ab.sqrt() * (big_c - 1.0) - (1.0 / alpha).sqrt();
    let l_abc = gap * gap / (2.0 * (2.0 * k_ab + (2.0 / 3.0) * (beta / alpha).ln()));
    let c10 = l_abc / 4.0 * (0.5 - phi / 3.0);
    Ok(TheoryConstants {
        alpha,
        beta,
        big_c,
        c_local: 2.0 * (big_c + 1.0),
        phi,
        c_ab,
        k_ab,
        l_abc,
        c10,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(v: &[f64]) -> GridDensity {
        GridDensity::from_values(v.to_vec()).unwrap()
    }

    #[test]
    fn h_gamma_values() {
        assert_eq!(h_gamma(1.0).unwrap(), 0.5);
        // (2 - ln 3) / 4
        assert!((h_gamma(3.0).unwrap() - 0.225_346_927_832_972_58).abs() < 1e-15);
        assert!((h_gamma(1.0 + 1e-9).unwrap() - 0.5).abs() < 1e-8);
        assert!(h_gamma(0.0).is_err());
        assert!(h_gamma(-2.0).is_err());
        // Series and closed form agree on both sides of the switch point.
        for u in [2e-8, -2e-8, 5e-8] {
            let g = 1.0 + u;
            let series = 0.5 - u / 3.0 + u * u / 4.0;
            assert!((h_gamma(g).unwrap() - series).abs() < 1e-6);
        }
    }

    #[test]
    fn constants_match_hand_evaluation() {
        let k = derive_constants(0.5, 1.5, 5.0, 1.2).unwrap();
        assert!((k.c_ab - 0.150_231_3).abs() < 1e-7);
        assert!((k.k_ab - 39.938).abs() < 1e-3);
        assert!((k.l_abc - 1.1505e-4).abs() / 1.1505e-4 < 1e-3);
        assert!((k.c10 - 2.876e-6).abs() / 2.876e-6 < 1e-3);
        assert_eq!(k.c_local, 12.0);
    }

    #[test]
    fn constants_reject_small_c() {
        match derive_constants(0.5, 1.5, 4.0, 1.2) {
            Err(Error::Constraint { min_c, .. }) => assert!((min_c - 4.6487).abs() < 1e-3),
            other => panic!("expected constraint error, got {other:?}"),
        }
        assert!(derive_constants(0.5, 1.5, 5.0, 1.5).is_err());
        assert!(derive_constants(1.5, 0.5, 5.0, 1.2).is_err());
    }

    #[test]
    fn constants_near_unit_ratio() {
        let beta = 1.0 + 1e-12;
        let k = derive_constants(1.0, beta, 10.0, 1.2).unwrap();
        assert!((k.c_ab - 0.5 / beta).abs() < 1e-9);
    }

    #[test]
    fn metric_examples() {
        let f = d(&[0.5, 0.5, 1.5, 1.5]);
        let g = GridDensity::uniform(4);
        assert_eq!(l2_distance(&f, &f).unwrap(), 0.0);
        assert!((l2_distance(&f, &g).unwrap() - 0.5).abs() < 1e-15);
        assert!((tv_distance(&f, &g).unwrap() - 0.25).abs() < 1e-15);
        assert!((kl_divergence(&f, &g).unwrap() - 0.130_812).abs() < 1e-6);
        assert_eq!(kl_divergence(&g, &g).unwrap(), 0.0);
        assert_eq!(hellinger_distance(&g, &g).unwrap(), 0.0);
    }

    #[test]
    fn shape_and_domain_errors() {
        let f = GridDensity::uniform(4);
        let g = GridDensity::uniform(3);
        assert!(matches!(l2_distance(&f, &g), Err(Error::Shape { .. })));
        assert!(matches!(tv_distance(&f, &g), Err(Error::Shape { .. })));
        assert!(matches!(hellinger_distance(&f, &g), Err(Error::Shape { .. })));
        let z = d(&[0.0, 2.0]);
        assert!(matches!(kl_divergence(&GridDensity::uniform(2), &z), Err(Error::Domain(_))));
    }

    #[test]
    fn validation_examples() {
        assert!(validate_density(&[1.0; 4], 4, 0.5, 1.5).is_ok());
        match validate_density(&[0.4, 1.0, 1.0, 1.6], 4, 0.5, 1.5) {
            Err(Error::Bound { bins, .. }) => assert_eq!(bins, vec![0, 3]),
            other => panic!("expected bound error, got {other:?}"),
        }
        match validate_density(&[0.5, 0.5, 1.5, 1.6], 4, 0.5, 1.5) {
            Err(Error::Normalization { mean }) => assert!((mean - 1.025).abs() < 1e-12),
            other => panic!("expected normalization error, got {other:?}"),
        }
        assert!(matches!(
            validate_density(&[1.0; 3], 4, 0.5, 1.5),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn renormalize_clip_converges() {
        let f = GridDensity::renormalize_clip(vec![2.0, 2.0, 6.0, 6.0], 0.5, 1.5).unwrap();
        assert!(validate_density(f.values(), 4, 0.5, 1.5).is_ok());
        assert!(GridDensity::renormalize_clip(vec![0.0; 3], 0.5, 1.5).is_err());
    }

    #[test]
    fn bins_cover_closed_interval() {
        assert_eq!(bin_index(0.0, 4), 0);
        assert_eq!(bin_index(0.25, 4), 1);
        assert_eq!(bin_index(0.999_999, 4), 3);
        assert_eq!(bin_index(1.0, 4), 3);
    }

    #[test]
    fn json_round_trip_and_shape_check() {
        let f = d(&[0.5, 1.25, 1.25]);
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(s, r#"{"m":3,"values":[0.5,1.25,1.25]}"#);
        let back: GridDensity = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
        assert!(serde_json::from_str::<GridDensity>(r#"{"m":2,"values":[1.0]}"#).is_err());
        assert!(serde_json::from_str::<GridDensity>(r#"{"m":1,"values":[-1.0]}"#).is_err());
    }
}
