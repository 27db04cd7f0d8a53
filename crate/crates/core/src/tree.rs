//! The data-free pruned sieve tree.
//!
//! Level 1 is the root. Level 2 packs `B(root, d)` at separation `d / c`;
//! each level `j >= 3` packs the balls `B(q, d / 2^(j-2))` of every parent
//! `q` at separation `d / (2^(j-1) c)`, sorts the union and prunes it.
//!
//! Pruning can attach one node to several parents: a dropped candidate's
//! parent gains an edge to the survivor that absorbed it. Each node keeps
//! the parent it was drawn from as `parent`; `offspring` lists every edge.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classes::DensityFamily;
use crate::density::{l2_sq_unchecked, within_unchecked, GridDensity};
use crate::error::{Error, Result};
use crate::packing::{greedy_packing, local_packing_count, EntropyBudget, Region};
use crate::rng::{derive_seed, stream, streams};

/// Smallest per-parent candidate budget below the second level.
pub const MIN_LEVEL_BUDGET: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub level: usize,
    pub parent: Option<usize>,
    pub values: Vec<f64>,
    #[serde(default)]
    pub offspring: Vec<usize>,
}

impl TreeNode {
    pub fn density(&self) -> GridDensity {
        GridDensity::from_values_unchecked(self.values.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeMeta {
    pub c: f64,
    pub d: f64,
    #[serde(rename = "J_tilde")]
    pub j_tilde: usize,
    pub seed: u64,
    /// Per-parent candidate budget for levels `2..=J_tilde`.
    pub budgets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTree")]
pub struct SieveTree {
    pub nodes: Vec<TreeNode>,
    /// `levels[j - 1]` holds the ids of level `j`.
    pub levels: Vec<Vec<usize>>,
    pub meta: TreeMeta,
}

#[derive(Deserialize)]
struct RawTree {
    nodes: Vec<TreeNode>,
    levels: Vec<Vec<usize>>,
    meta: TreeMeta,
}

impl TryFrom<RawTree> for SieveTree {
    type Error = Error;

    fn try_from(raw: RawTree) -> Result<Self> {
        let tree = SieveTree {
            nodes: raw.nodes,
            levels: raw.levels,
            meta: raw.meta,
        };
        tree.check_structure()?;
        Ok(tree)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub j_tilde: usize,
    pub c_local: f64,
    pub d: f64,
    /// Per-parent candidate budget at level 2.
    pub budget: usize,
    pub seed: u64,
}

/// Per-parent candidate budget at level `j >= 2`.
pub fn level_budget(budget: usize, j: usize) -> usize {
    let shrunk = budget >> (j - 2).min(63);
    shrunk.max(MIN_LEVEL_BUDGET).min(budget.max(1))
}

/// Ball radius and packing separation used to build level `j >= 2`.
///
/// Level 2 packs `B(root, d)` at `d / c`; deeper levels pack
/// `B(q, d / 2^(j-2))` at `d / (2^(j-1) c)`.
pub fn level_geometry(d: f64, c: f64, j: usize) -> (f64, f64) {
    if j == 2 {
        (d, d / c)
    } else {
        let r = d / 2f64.powi(j as i32 - 2);
        (r, r / (2.0 * c))
    }
}

/// A candidate of one level before pruning.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub values: Vec<f64>,
    pub parent: usize,
}

/// Lexicographic order on value vectors, ties broken by parent id.
pub fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    for (x, y) in a.values.iter().zip(&b.values) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.values
        .len()
        .cmp(&b.values.len())
        .then(a.parent.cmp(&b.parent))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PruneOutcome {
    /// Candidate positions kept, in queue order.
    pub survivors: Vec<usize>,
    /// `(dropped, survivor)`: the dropped candidate's parent gains an edge
    /// to the survivor.
    pub rewired: Vec<(usize, usize)>,
}

/// Sequential pruning loop over lexicographically ordered candidates.
///
/// The head of the queue survives; every later queued candidate within
/// `delta` of it is dropped and its parent re-wired to the head. Dropped
/// candidates never re-enter the queue. Because the order is lexicographic,
/// the scan for a head stops once the first coordinates differ by more than
/// `delta * sqrt(m)`, which is exact for the normalized L2 metric.
pub fn prune_level(candidates: &[Candidate], delta: f64) -> Result<PruneOutcome> {
    if candidates
        .windows(2)
        .any(|w| candidate_order(&w[0], &w[1]) == Ordering::Greater)
    {
        return Err(Error::Invariant("prune_level needs lexicographically ordered candidates".into()));
    }
    let mut out = PruneOutcome::default();
    let mut removed = vec![false; candidates.len()];
    for head in 0..candidates.len() {
        if removed[head] {
            continue;
        }
        removed[head] = true;
        out.survivors.push(head);
        let h = &candidates[head].values;
        let window = delta * (h.len() as f64).sqrt();
        for k in head + 1..candidates.len() {
            let v = &candidates[k].values;
            if v[0] - h[0] > window {
                break;
            }
            if !removed[k] && within_unchecked(h, v, delta) {
                removed[k] = true;
                out.rewired.push((k, head));
            }
        }
    }
    Ok(out)
}

/// Builds the pruned tree. `root` must belong to `class`.
pub fn build_tree<C: DensityFamily>(class: &C, root: &GridDensity, params: TreeParams) -> Result<SieveTree> {
    if root.m() != class.m() {
        return Err(Error::Shape {
            expected: class.m(),
            found: root.m(),
        });
    }
    if !class.contains(root)? {
        return Err(Error::Domain("root is not a class member".into()));
    }
    if params.j_tilde < 1 {
        return Err(Error::Config("J_tilde must be at least 1".into()));
    }
    if !(params.c_local > 2.0) {
        return Err(Error::Config(format!("c_local must exceed 2, got {}", params.c_local)));
    }
    if !(params.d >= 0.0) || !params.d.is_finite() {
        return Err(Error::Config(format!("diameter must be finite and non-negative, got {}", params.d)));
    }
    let mut tree = SieveTree {
        nodes: vec![TreeNode {
            id: 0,
            level: 1,
            parent: None,
            values: root.values().to_vec(),
            offspring: vec![],
        }],
        levels: vec![vec![0]],
        meta: TreeMeta {
            c: params.c_local,
            d: params.d,
            j_tilde: params.j_tilde,
            seed: params.seed,
            budgets: vec![],
        },
    };
    let d = params.d;
    let c = params.c_local;
    for j in 2..=params.j_tilde {
        let budget = level_budget(params.budget, j);
        let (radius, delta) = level_geometry(d, c, j);
        let parents = tree.levels[j - 2].clone();
        let packs: Vec<Vec<Candidate>> = parents
            .par_iter()
            .enumerate()
            .map(|(pos, &pid)| {
                let center = tree.nodes[pid].density();
                let mut rng = stream(params.seed, &[streams::TREE, j as u64, pos as u64]);
                let region = Region::Ball { center, radius };
                greedy_packing(class, &region, delta, budget, &mut rng)
                    .points
                    .into_iter()
                    .map(|p| Candidate {
                        values: p.into_values(),
                        parent: pid,
                    })
                    .collect()
            })
            .collect();
        let mut candidates: Vec<Candidate> = packs.into_iter().flatten().collect();
        candidates.sort_by(candidate_order);
        let outcome = prune_level(&candidates, delta)?;
        let mut pos_to_id = vec![usize::MAX; candidates.len()];
        let mut level_ids = Vec::with_capacity(outcome.survivors.len());
        for &pos in &outcome.survivors {
            let id = tree.nodes.len();
            pos_to_id[pos] = id;
            let cand = &candidates[pos];
            tree.nodes.push(TreeNode {
                id,
                level: j,
                parent: Some(cand.parent),
                values: cand.values.clone(),
                offspring: vec![],
            });
            level_ids.push(id);
        }
        let mut edges: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); parents.len()];
        let parent_pos = |pid: usize| parents.binary_search(&pid).expect("parent on previous level");
        for &pos in &outcome.survivors {
            edges[parent_pos(candidates[pos].parent)].insert(pos_to_id[pos]);
        }
        for &(dropped, head) in &outcome.rewired {
            edges[parent_pos(candidates[dropped].parent)].insert(pos_to_id[head]);
        }
        for (pid, set) in parents.iter().zip(edges) {
            tree.nodes[*pid].offspring = set.into_iter().collect();
        }
        tree.levels.push(level_ids);
        tree.meta.budgets.push(budget);
    }
    Ok(tree)
}

impl SieveTree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Level sizes, root first.
    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    /// The first `levels` levels of the tree.
    ///
    /// Levels are built from per-level, per-parent streams, so a truncated
    /// tree equals the tree built with `J_tilde = levels` from the same seed.
    pub fn truncated(&self, levels: usize) -> SieveTree {
        let keep = levels.clamp(1, self.depth());
        let mut out = self.clone();
        out.levels.truncate(keep);
        let n = out.levels.iter().map(Vec::len).sum();
        out.nodes.truncate(n);
        for id in &out.levels[keep - 1] {
            out.nodes[*id].offspring.clear();
        }
        out.meta.j_tilde = keep;
        out.meta.budgets.truncate(keep - 1);
        out
    }

    /// Structural consistency: ids, levels, parent links and offspring lists.
    pub fn check_structure(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invariant(msg));
        if self.levels.first().map(Vec::as_slice) != Some(&[0][..]) {
            return bad("level 1 must be the single root 0".into());
        }
        if self.meta.j_tilde != self.levels.len() {
            return bad(format!("J_tilde {} but {} levels", self.meta.j_tilde, self.levels.len()));
        }
        let m = self.nodes.first().map_or(0, |n| n.values.len());
        if m == 0 {
            return bad("empty root".into());
        }
        let mut next = 0;
        for (j, ids) in self.levels.iter().enumerate() {
            for &id in ids {
                if id != next {
                    return bad(format!("node ids must be assigned level by level; expected {next}, found {id}"));
                }
                next += 1;
                let Some(node) = self.nodes.get(id) else {
                    return bad(format!("level {} lists missing node {id}", j + 1));
                };
                if node.id != id || node.level != j + 1 {
                    return bad(format!("node {id} carries id {} level {}", node.id, node.level));
                }
                if node.values.len() != m || node.values.iter().any(|v| !v.is_finite()) {
                    return bad(format!("node {id} has malformed values"));
                }
            }
        }
        if next != self.nodes.len() {
            return bad(format!("{} nodes but levels cover {next}", self.nodes.len()));
        }
        for node in &self.nodes {
            match (node.level, node.parent) {
                (1, None) => {}
                (1, Some(_)) => return bad("root has a parent".into()),
                (_, None) => return bad(format!("node {} has no parent", node.id)),
                (l, Some(p)) => {
                    let Some(parent) = self.nodes.get(p) else {
                        return bad(format!("node {} points to missing parent {p}", node.id));
                    };
                    if parent.level + 1 != l || parent.offspring.binary_search(&node.id).is_err() {
                        return bad(format!("node {} and parent {p} disagree", node.id));
                    }
                }
            }
            if node.offspring.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("offspring of {} not strictly increasing", node.id));
            }
            for &o in &node.offspring {
                match self.nodes.get(o) {
                    Some(child) if child.level == node.level + 1 => {}
                    _ => return bad(format!("node {} lists bad offspring {o}", node.id)),
                }
            }
        }
        let covered: BTreeSet<usize> = self.nodes.iter().flat_map(|n| n.offspring.iter().copied()).collect();
        if covered.len() + 1 != self.nodes.len() {
            return bad("some non-root node is nobody's offspring".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    pub nodes: usize,
    /// Minimum pairwise distance on the level, infinity for one node.
    pub min_separation: f64,
    pub separation: f64,
    pub cover_radius: f64,
    pub probes: usize,
    pub covering_failures: usize,
    /// Largest offspring list among the parents on the previous level.
    pub max_offspring: usize,
    /// Sampled local packing count at `(d / 2^(j-2), 2c)`.
    pub offspring_bound: usize,
    /// Parents whose offspring count exceeds `offspring_bound`.
    pub offspring_excess: usize,
    /// Offspring farther than `radius + separation` from the parent.
    pub containment_failures: usize,
    /// Largest `|L(j-1) ∩ B(f, d / 2^(j-2))|` over the probes.
    pub max_ball_count: usize,
    /// Sampled local packing count at `(d / 2^(j-2), c)`.
    pub ball_count_bound: usize,
    pub ball_count_excess: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub levels: Vec<LevelReport>,
}

impl LemmaReport {
    pub fn covering_failures(&self) -> usize {
        self.levels.iter().map(|l| l.covering_failures).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeBudget {
    pub probes: usize,
    pub entropy: EntropyBudget,
}

fn nearest_sq(points: &[&[f64]], f: &[f64]) -> f64 {
    points
        .iter()
        .map(|p| l2_sq_unchecked(p, f))
        .fold(f64::INFINITY, f64::min)
}

/// Checks the packing, covering and offspring-count lemmas level by level.
///
/// Separation failures are exact and reported as errors; the probabilistic
/// checks are returned as counts.
pub fn check_tree_lemmas<C: DensityFamily>(
    tree: &SieveTree,
    class: &C,
    budget: ProbeBudget,
    seed: u64,
) -> Result<LemmaReport> {
    tree.check_structure()?;
    let d = tree.meta.d;
    let c = tree.meta.c;
    let mut levels = Vec::new();
    for j in 2..=tree.depth() {
        let ids = &tree.levels[j - 1];
        let pts: Vec<&[f64]> = ids.iter().map(|&i| tree.nodes[i].values.as_slice()).collect();
        let separation = d / (2f64.powi(j as i32 - 1) * c);
        let cover_radius = 2.0 * separation;
        let (radius, build_separation) = level_geometry(d, c, j);

        let min_sq = (0..pts.len())
            .into_par_iter()
            .map(|a| nearest_sq(&pts[a + 1..], pts[a]))
            .reduce(|| f64::INFINITY, f64::min);
        let min_separation = min_sq.sqrt();
        if pts.len() > 1 && !(min_separation > separation) {
            return Err(Error::Invariant(format!(
                "level {j}: two nodes only {min_separation} apart, separation {separation}"
            )));
        }

        let parents: Vec<&[f64]> = tree.levels[j - 2]
            .iter()
            .map(|&i| tree.nodes[i].values.as_slice())
            .collect();
        let probe_results: Vec<(bool, usize)> = (0..budget.probes)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(seed, &[streams::PROBE, j as u64, i as u64]);
                let f = class.sample_member(&mut rng);
                let covered = nearest_sq(&pts, f.values()) <= cover_radius * cover_radius;
                let count = parents
                    .iter()
                    .filter(|p| within_unchecked(p, f.values(), radius))
                    .count();
                (covered, count)
            })
            .collect();
        let covering_failures = probe_results.iter().filter(|r| !r.0).count();
        let max_ball_count = probe_results.iter().map(|r| r.1).max().unwrap_or(0);

        let entropy_seed = derive_seed(seed, &[streams::ENTROPY, j as u64]);
        let offspring_bound = local_packing_count(class, radius, 2.0 * c, budget.entropy, entropy_seed);
        let ball_count_bound = local_packing_count(class, radius, c, budget.entropy, entropy_seed ^ 1);
        let mut max_offspring = 0;
        let mut offspring_excess = 0;
        let mut containment_failures = 0;
        for &pid in &tree.levels[j - 2] {
            let parent = &tree.nodes[pid];
            max_offspring = max_offspring.max(parent.offspring.len());
            if parent.offspring.len() > offspring_bound {
                offspring_excess += 1;
            }
            for &o in &parent.offspring {
                let r = radius + build_separation;
                if !within_unchecked(&parent.values, &tree.nodes[o].values, r) {
                    containment_failures += 1;
                }
            }
        }
        let ball_count_excess = probe_results.iter().filter(|r| r.1 > ball_count_bound).count();
        levels.push(LevelReport {
            level: j,
            nodes: ids.len(),
            min_separation,
            separation,
            cover_radius,
            probes: budget.probes,
            covering_failures,
            max_offspring,
            offspring_bound,
            offspring_excess,
            containment_failures,
            max_ball_count,
            ball_count_bound,
            ball_count_excess,
        });
    }
    Ok(LemmaReport { levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::{ClassKind, StarShapedClass};

    fn cand(values: &[f64], parent: usize) -> Candidate {
        Candidate {
            values: values.to_vec(),
            parent,
        }
    }

    fn mono(m: usize) -> StarShapedClass {
        StarShapedClass::new(ClassKind::MonotoneDecreasing, 0.5, 1.5, m).unwrap()
    }

    fn params(j_tilde: usize, c: f64, seed: u64) -> TreeParams {
        TreeParams {
            j_tilde,
            c_local: c,
            d: 0.5,
            budget: 300,
            seed,
        }
    }

    #[test]
    fn single_level_tree_is_the_root() {
        let class = mono(4);
        let tree = build_tree(&class, class.star_center(), params(1, 12.0, 0)).unwrap();
        assert_eq!(tree.len(), 1);
        assert!(tree.root().offspring.is_empty());
        tree.check_structure().unwrap();
    }

    #[test]
    fn rejects_bad_parameters() {
        let class = mono(4);
        let root = class.star_center().clone();
        assert!(matches!(build_tree(&class, &root, params(3, 2.0, 0)), Err(Error::Config(_))));
        assert!(matches!(build_tree(&class, &root, params(0, 3.0, 0)), Err(Error::Config(_))));
        let off = GridDensity::from_values(vec![0.5, 1.5, 1.0, 1.0]).unwrap();
        assert!(matches!(build_tree(&class, &off, params(2, 3.0, 0)), Err(Error::Domain(_))));
    }

    #[test]
    fn singleton_class_gives_singleton_levels() {
        let class = StarShapedClass::new(ClassKind::FullBounded, 1.0, 1.0, 4).unwrap();
        let tree = build_tree(&class, class.star_center(), params(4, 3.0, 1)).unwrap();
        assert_eq!(tree.level_sizes(), vec![1, 1, 1, 1]);
    }

    #[test]
    fn prune_identity_when_separated() {
        let c = vec![cand(&[0.0, 0.0], 0), cand(&[1.0, 0.0], 1), cand(&[2.0, 0.0], 0)];
        let out = prune_level(&c, 0.5).unwrap();
        assert_eq!(out.survivors, vec![0, 1, 2]);
        assert!(out.rewired.is_empty());
    }

    #[test]
    fn prune_rewires_close_candidate() {
        // Distance sqrt((0.01 + 0) / 2) ~ 0.07 between the first two.
        let c = vec![cand(&[0.9, 1.1], 3), cand(&[1.0, 1.1], 5), cand(&[1.4, 0.6], 5)];
        let out = prune_level(&c, 0.1).unwrap();
        assert_eq!(out.survivors, vec![0, 2]);
        assert_eq!(out.rewired, vec![(1, 0)]);
    }

    #[test]
    fn prune_rejects_unsorted_input() {
        let c = vec![cand(&[1.0, 1.0], 0), cand(&[0.5, 1.5], 0)];
        assert!(matches!(prune_level(&c, 0.1), Err(Error::Invariant(_))));
    }

    #[test]
    fn removed_candidates_do_not_absorb() {
        // b is within delta of a and of c; c is not within delta of a.
        // b is dropped by a, so c survives even though b could have absorbed it.
        let c = vec![cand(&[0.0], 0), cand(&[0.8], 1), cand(&[1.6], 2)];
        let out = prune_level(&c, 1.0).unwrap();
        assert_eq!(out.survivors, vec![0, 2]);
    }

    #[test]
    fn tree_is_reproducible_and_consistent() {
        let class = mono(6);
        let a = build_tree(&class, class.star_center(), params(4, 2.5, 7)).unwrap();
        let b = build_tree(&class, class.star_center(), params(4, 2.5, 7)).unwrap();
        assert_eq!(a, b);
        a.check_structure().unwrap();
        let short = build_tree(&class, class.star_center(), params(3, 2.5, 7)).unwrap();
        assert_eq!(a.truncated(3), short);
        let json = serde_json::to_string(&a).unwrap();
        let back: SieveTree = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn lemma_checks_pass_on_small_tree() {
        let class = mono(6);
        let tree = build_tree(&class, class.star_center(), params(3, 2.5, 3)).unwrap();
        let budget = ProbeBudget {
            probes: 200,
            entropy: EntropyBudget {
                budget: 200,
                n_centers: 2,
            },
        };
        let report = check_tree_lemmas(&tree, &class, budget, 11).unwrap();
        for level in &report.levels {
            assert!(level.min_separation > level.separation);
            assert_eq!(level.containment_failures, 0);
        }
    }

    #[test]
    fn corrupted_json_is_rejected() {
        let class = mono(4);
        let tree = build_tree(&class, class.star_center(), params(2, 3.0, 0)).unwrap();
        let mut v = serde_json::to_value(&tree).unwrap();
        v["nodes"][1]["parent"] = serde_json::json!(7);
        assert!(serde_json::from_value::<SieveTree>(v).is_err());
    }
}
