//! Oracle cross-checks and invariant sweeps behind the `verify` command.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{fitted_epsilon_pp, lecam_pair};
use crate::classes::{ClassKind, DensityFamily, StarShapedClass};
use crate::density::{derive_constants, kl_divergence, l2_distance_sq, GridDensity};
use crate::error::Result;
use crate::oracle::{exhaustive_max_packing, reference_psi, QuantizedClass};
use crate::packing::{greedy_packing, Region};
use crate::rng::{stream, SieveRng};
use crate::tournament::{psi, GroupPlan, Sample};
use crate::tree::{build_tree, check_tree_lemmas, ProbeBudget, TreeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// A random `(g, g', sample, plan)` instance for psi cross-checks. Some
/// instances share bins or coincide entirely, which exercises exact ties.
pub fn random_psi_instance(rng: &mut SieveRng) -> (GridDensity, GridDensity, Sample, GroupPlan) {
    let m = rng.gen_range(1..=12);
    let class = StarShapedClass::new(ClassKind::FullBounded, 0.5, 1.5, m).expect("valid class");
    let g = class.sample_member(rng);
    let g_prime = match rng.gen_range(0..4) {
        0 => g.clone(),
        1 => {
            let mut v = g.values().to_vec();
            v.reverse();
            GridDensity::from_values(v).expect("reversal keeps validity")
        }
        _ => class.sample_member(rng),
    };
    let n = rng.gen_range(1..=60);
    let points: Vec<f64> = (0..n)
        .map(|_| match rng.gen_range(0..5) {
            0 => (rng.gen_range(0..=m) as f64 / m as f64).min(1.0),
            _ => rng.gen::<f64>(),
        })
        .collect();
    let groups = rng.gen_range(1..=n);
    let sample = Sample::new(points, 0.0).expect("points lie in [0, 1]");
    let plan = GroupPlan::contiguous(n, groups).expect("1 <= groups <= n");
    (g, g_prime, sample, plan)
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Runs the quick oracle suite. Every check is deterministic in `seed`.
pub fn run_verify(seed: u64) -> Result<VerifyReport> {
    let mut checks = Vec::new();

    let mut rng = stream(seed, &[1]);
    let mut disagreements = 0;
    let instances = 2_000;
    for _ in 0..instances {
        let (g, h, s, plan) = random_psi_instance(&mut rng);
        if psi(&g, &h, &s, &plan)? != reference_psi(&g, &h, &s, &plan)? {
            disagreements += 1;
        }
    }
    checks.push(check(
        "psi-vs-reference",
        disagreements == 0,
        format!("{disagreements}/{instances} disagreements"),
    ));

    let k = derive_constants(0.5, 1.5, crate::density::DEFAULT_BIG_C, crate::density::DEFAULT_PHI)?;
    let class = StarShapedClass::new(ClassKind::FullBounded, 0.5, 1.5, 32)?;
    let mut rng = stream(seed, &[2]);
    let mut violations = 0;
    let pairs = 1_000;
    for _ in 0..pairs {
        let f = class.sample_member(&mut rng);
        let g = class.sample_member(&mut rng);
        let kl = kl_divergence(&f, &g)?;
        let l2 = l2_distance_sq(&f, &g)?;
        if k.c_ab * l2 > kl * (1.0 + 1e-9) + 1e-15 || kl > l2 / class.alpha() * (1.0 + 1e-9) + 1e-15 {
            violations += 1;
        }
    }
    checks.push(check("kl-l2-sandwich", violations == 0, format!("{violations}/{pairs} violations")));

    let mut rng = stream(seed, &[3]);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let f1 = class.sample_member(&mut rng);
        let f2 = class.sample_member(&mut rng);
        let (q1, q2) = lecam_pair(&f1, &f2)?;
        let e = fitted_epsilon_pp(&f1, &f2)?;
        for i in 0..f1.m() {
            let lhs = (1.0 - e) * f1.values()[i] + e * q1.values()[i];
            let rhs = (1.0 - e) * f2.values()[i] + e * q2.values()[i];
            worst = worst.max((lhs - rhs).abs());
        }
        worst = worst.max((q1.mean() - 1.0).abs()).max((q2.mean() - 1.0).abs());
    }
    checks.push(check("mixture-identity", worst <= 1e-12, format!("max deviation {worst:e}")));

    let mut detail = Vec::new();
    let mut ok = true;
    for (i, levels) in [[0.5, 1.0, 1.5], [0.75, 1.0, 1.25], [0.6, 1.0, 1.4]].iter().enumerate() {
        let q = QuantizedClass::new(4, levels)?;
        let delta = 0.3;
        let greedy = greedy_packing(&q, &Region::Whole, delta, 2_000, &mut stream(seed, &[4, i as u64])).len();
        let exact = exhaustive_max_packing(&q, &Region::Whole, delta)?;
        let exact_2 = exhaustive_max_packing(&q, &Region::Whole, 2.0 * delta)?;
        ok &= exact_2 <= greedy && greedy <= exact;
        detail.push(format!("{exact_2} <= {greedy} <= {exact}"));
    }
    checks.push(check("greedy-vs-exhaustive-packing", ok, detail.join("; ")));

    let mono = StarShapedClass::new(ClassKind::MonotoneDecreasing, 0.5, 1.5, 8)?;
    let tree = build_tree(
        &mono,
        mono.star_center(),
        TreeParams {
            j_tilde: 3,
            c_local: 3.0,
            d: 0.5,
            budget: 300,
            seed,
        },
    )?;
    let lemmas = check_tree_lemmas(
        &tree,
        &mono,
        ProbeBudget {
            probes: 200,
            entropy: crate::packing::EntropyBudget {
                budget: 200,
                n_centers: 2,
            },
        },
        seed,
    );
    let (passed, detail) = match lemmas {
        Ok(r) => (
            r.levels.iter().all(|l| l.containment_failures == 0),
            format!("sizes {:?}, covering failures {}", tree.level_sizes(), r.covering_failures()),
        ),
        Err(e) => (false, e.to_string()),
    };
    checks.push(check("tree-lemmas", passed, detail));

    Ok(VerifyReport { checks })
}
