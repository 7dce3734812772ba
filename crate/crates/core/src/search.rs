//! k-NN queries over an [`AngleTree`].
//!
//! [`knn_search`] is a depth-first kd-tree search whose pruning test uses
//! the angle-corrected lower bound `|margin|·cos θ / sin α̂` in place of the
//! perpendicular distance `|margin|`. Also here: the brute-force oracle,
//! single-leaf probes, and the multi-tree probe used to emulate LSH.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::f64::consts::FRAC_PI_2;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{distance_counted, CountedMetric};
use crate::tree::{AngleTree, Node};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchConfig {
    pub k_neighbors: usize,
    /// Error angle; the bound is scaled by `cos θ`.
    pub theta: f64,
    /// Use the classic perpendicular-distance bound (divisor 1).
    pub force_kd_bound: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { k_neighbors: 1, theta: 0.0, force_kd_bound: false }
    }
}

impl SearchConfig {
    pub fn knn(k_neighbors: usize) -> Self {
        Self { k_neighbors, ..Default::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 {
            return Err(Error::InvalidConfig("k_neighbors must be positive".into()));
        }
        if !(0.0..FRAC_PI_2).contains(&self.theta) {
            return Err(Error::InvalidConfig(format!("theta {} outside [0, pi/2)", self.theta)));
        }
        Ok(())
    }
}

/// A query point, optionally excluding one dataset index from the answer
/// (used when the query is itself a dataset point).
#[derive(Clone, Copy, Debug)]
pub struct Query<'a> {
    pub point: &'a [f64],
    pub exclude: Option<usize>,
}

impl<'a> Query<'a> {
    /// Dataset row `i` as a query; `exclude_self` drops `i` from candidacy.
    pub fn from_dataset(data: &'a Dataset, i: usize, exclude_self: bool) -> Self {
        Self { point: data.row(i), exclude: exclude_self.then_some(i) }
    }
}

impl<'a> From<&'a [f64]> for Query<'a> {
    fn from(point: &'a [f64]) -> Self {
        Self { point, exclude: None }
    }
}

impl<'a> From<&'a Vec<f64>> for Query<'a> {
    fn from(point: &'a Vec<f64>) -> Self {
        Self { point, exclude: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub neighbor_ids: Vec<usize>,
    /// Non-decreasing, matching `neighbor_ids`.
    pub distances: Vec<f64>,
    pub stats: CountedMetric,
    /// Fewer than `k_neighbors` candidates existed.
    pub truncated: bool,
}

impl SearchResult {
    pub fn len(&self) -> usize {
        self.neighbor_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbor_ids.is_empty()
    }

    /// Whether this is a correct k-NN answer given the exact answer `truth`.
    /// Ties at the k-th distance count either point as correct.
    pub fn matches(&self, truth: &SearchResult) -> bool {
        self.len() == truth.len()
            && match (self.distances.last(), truth.distances.last()) {
                (Some(a), Some(b)) => a <= b,
                (None, None) => true,
                _ => false,
            }
    }
}

/// Record of where a traced search went.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SearchTrace {
    pub visited_leaves: Vec<usize>,
    pub pruned: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    dist: f64,
    id: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.id.cmp(&other.id))
    }
}

/// Bounded max-heap holding the `k` best candidates seen so far.
struct KBest {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl KBest {
    fn new(k: usize) -> Self {
        Self { k, heap: BinaryHeap::with_capacity(k + 1) }
    }

    fn is_full(&self) -> bool {
        self.heap.len() >= self.k
    }

    /// Current k-th best distance, `∞` until `k` candidates are held.
    fn kth(&self) -> f64 {
        if self.is_full() {
            self.heap.peek().map_or(f64::INFINITY, |c| c.dist)
        } else {
            f64::INFINITY
        }
    }

    fn offer(&mut self, id: usize, dist: f64) {
        if !self.is_full() {
            self.heap.push(Candidate { dist, id });
        } else if dist < self.kth() {
            self.heap.pop();
            self.heap.push(Candidate { dist, id });
        }
    }

    fn finish(self, stats: CountedMetric) -> SearchResult {
        let k = self.k;
        let sorted = self.heap.into_sorted_vec();
        SearchResult {
            truncated: sorted.len() < k,
            neighbor_ids: sorted.iter().map(|c| c.id).collect(),
            distances: sorted.iter().map(|c| c.dist).collect(),
            stats,
        }
    }
}

fn check_query(data: &Dataset, q: &Query<'_>) -> Result<()> {
    if q.point.len() != data.dim() {
        return Err(Error::DimensionMismatch { expected: data.dim(), found: q.point.len() });
    }
    Ok(())
}

fn check_tree(tree: &AngleTree, data: &Dataset) -> Result<()> {
    if tree.dim() != data.dim() || tree.n_points() != data.len() {
        return Err(Error::InvalidConfig(format!(
            "tree built over {}x{} points, dataset is {}x{}",
            tree.n_points(),
            tree.dim(),
            data.len(),
            data.dim()
        )));
    }
    Ok(())
}

struct Search<'a> {
    tree: &'a AngleTree,
    data: &'a Dataset,
    query: Query<'a>,
    cos_theta: f64,
    force_kd_bound: bool,
    best: KBest,
    stats: CountedMetric,
    trace: Option<SearchTrace>,
}

impl Search<'_> {
    fn scan_leaf(&mut self, node: usize, ids: &[usize]) {
        if let Some(t) = self.trace.as_mut() {
            t.visited_leaves.push(node);
        }
        for &id in ids {
            if Some(id) == self.query.exclude {
                continue;
            }
            let d = distance_counted(self.query.point, self.data.row(id), &mut self.stats);
            self.best.offer(id, d);
        }
    }

    fn descend(&mut self, node: usize) {
        let tree = self.tree;
        match tree.node(node) {
            Node::Leaf { ids } => self.scan_leaf(node, ids),
            Node::Internal { splitter, dihedral, neg, pos } => {
                self.stats.projection_evals += 1;
                let margin = splitter.margin(self.query.point);
                let (near, far) = if margin <= 0.0 { (*neg, *pos) } else { (*pos, *neg) };
                self.descend(near);
                let divisor = if self.force_kd_bound { 1.0 } else { dihedral.sin() };
                let bound = margin.abs() * self.cos_theta / divisor;
                if self.best.is_full() && bound >= self.best.kth() {
                    if let Some(t) = self.trace.as_mut() {
                        t.pruned.push(far);
                    }
                } else {
                    self.descend(far);
                }
            }
        }
    }

    fn probe(&mut self) {
        let mut node = 0;
        loop {
            match self.tree.node(node) {
                Node::Leaf { ids } => {
                    self.scan_leaf(node, ids);
                    return;
                }
                Node::Internal { splitter, neg, pos, .. } => {
                    self.stats.projection_evals += 1;
                    node = if splitter.margin(self.query.point) <= 0.0 { *neg } else { *pos };
                }
            }
        }
    }
}

fn run<'a>(
    tree: &'a AngleTree,
    data: &'a Dataset,
    query: Query<'a>,
    cfg: &SearchConfig,
    traced: bool,
) -> Result<(SearchResult, Option<SearchTrace>)> {
    cfg.validate()?;
    check_tree(tree, data)?;
    check_query(data, &query)?;
    let mut s = Search {
        tree,
        data,
        query,
        cos_theta: cfg.theta.cos(),
        force_kd_bound: cfg.force_kd_bound,
        best: KBest::new(cfg.k_neighbors),
        stats: CountedMetric::new(),
        trace: traced.then(SearchTrace::default),
    };
    s.descend(0);
    let trace = s.trace.take();
    Ok((s.best.finish(s.stats), trace))
}

/// Approximate k-NN with the angle-corrected pruning bound.
///
/// Descends depth-first, near child first. After the near child returns,
/// the far child is pruned when
/// `|margin|·cos θ / sin(dihedral) ≥ current k-th best distance`
/// (divisor 1 with `force_kd_bound`). If fewer than `k` candidates exist
/// the result holds all of them and is flagged `truncated`.
pub fn knn_search<'a>(
    tree: &'a AngleTree,
    data: &'a Dataset,
    query: impl Into<Query<'a>>,
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    run(tree, data, query.into(), cfg, false).map(|(r, _)| r)
}

/// [`knn_search`] that also records visited leaves and pruned subtrees.
pub fn knn_search_traced<'a>(
    tree: &'a AngleTree,
    data: &'a Dataset,
    query: impl Into<Query<'a>>,
    cfg: &SearchConfig,
) -> Result<(SearchResult, SearchTrace)> {
    run(tree, data, query.into(), cfg, true).map(|(r, t)| (r, t.unwrap_or_default()))
}

/// Exact k-NN by scanning every point.
pub fn brute_force<'a>(data: &'a Dataset, query: impl Into<Query<'a>>, k_neighbors: usize) -> Result<SearchResult> {
    let query = query.into();
    check_query(data, &query)?;
    if k_neighbors == 0 {
        return Err(Error::InvalidConfig("k_neighbors must be positive".into()));
    }
    let mut best = KBest::new(k_neighbors);
    let mut stats = CountedMetric::new();
    for (id, row) in data.rows().enumerate() {
        if Some(id) == query.exclude {
            continue;
        }
        best.offer(id, distance_counted(query.point, row, &mut stats));
    }
    Ok(best.finish(stats))
}

/// Near-neighbor search: descend to the query's leaf, scan it, stop.
pub fn near_neighbor_probe<'a>(
    tree: &'a AngleTree,
    data: &'a Dataset,
    query: impl Into<Query<'a>>,
    k_neighbors: usize,
) -> Result<SearchResult> {
    multi_tree_probe(std::slice::from_ref(tree), data, query, k_neighbors)
}

/// Probes the query's leaf in every tree and merges the candidates.
/// Statistics are summed over trees; a point found in several leaves is
/// scanned (and counted) once per tree.
pub fn multi_tree_probe<'a>(
    trees: &'a [AngleTree],
    data: &'a Dataset,
    query: impl Into<Query<'a>>,
    k_neighbors: usize,
) -> Result<SearchResult> {
    let query = query.into();
    if trees.is_empty() {
        return Err(Error::InvalidConfig("no trees to probe".into()));
    }
    let cfg = SearchConfig::knn(k_neighbors);
    cfg.validate()?;
    check_query(data, &query)?;
    let mut best = KBest::new(k_neighbors);
    let mut stats = CountedMetric::new();
    let mut seen = HashSet::new();
    for tree in trees {
        check_tree(tree, data)?;
        let mut s = Search {
            tree,
            data,
            query,
            cos_theta: 1.0,
            force_kd_bound: true,
            best: KBest::new(k_neighbors),
            stats: CountedMetric::new(),
            trace: None,
        };
        s.probe();
        stats.merge(&s.stats);
        for c in s.best.heap {
            if seen.insert(c.id) {
                best.offer(c.id, c.dist);
            }
        }
    }
    Ok(best.finish(stats))
}

/// Fraction of the data a random partial scan must cover to match `recall`
/// on all-k correctness: `recall^(1/k)`.
pub fn pbf_equivalent_fraction(recall: f64, k_neighbors: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&recall) {
        return Err(Error::InvalidConfig(format!("recall {recall} outside [0, 1]")));
    }
    if k_neighbors == 0 {
        return Err(Error::InvalidConfig("k_neighbors must be positive".into()));
    }
    if recall == 0.0 {
        return Ok(0.0);
    }
    Ok(recall.powf(1.0 / k_neighbors as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_affine_flat, gen_sphere};
    use crate::tree::{TreeConfig, TreeType};
    use proptest::prelude::*;

    fn line(points: &[f64]) -> Dataset {
        let rows: Vec<Vec<f64>> = points.iter().map(|&x| vec![x]).collect();
        Dataset::from_rows(&rows, "line").unwrap()
    }

    #[test]
    fn brute_force_by_hand() {
        let data = line(&[1.0, -0.5, 0.3, 2.0, 0.45]);
        let q = vec![0.4];
        let r = brute_force(&data, &q, 3).unwrap();
        // |x - 0.4|: 0.6, 0.9, 0.1, 1.6, 0.05
        assert_eq!(r.neighbor_ids, vec![4, 2, 0]);
        assert!((r.distances[0] - 0.05).abs() < 1e-12);
        assert_eq!(r.stats.distance_evals, 5);
        assert!(!r.truncated);
    }

    #[test]
    fn brute_force_finds_query_point_first() {
        let data = gen_sphere(200, 3, 8, 0.0, 1).unwrap();
        let r = brute_force(&data, Query::from_dataset(&data, 17, false), 2).unwrap();
        assert_eq!(r.neighbor_ids[0], 17);
        assert_eq!(r.distances[0], 0.0);
        let r = brute_force(&data, Query::from_dataset(&data, 17, true), 2).unwrap();
        assert!(!r.neighbor_ids.contains(&17));
        assert_eq!(r.stats.distance_evals, 199);
    }

    #[test]
    fn brute_force_agrees_with_sorted_scan() {
        let data = gen_sphere(300, 4, 10, 0.1, 2).unwrap();
        let q = data.row(5).iter().map(|x| x + 0.01).collect::<Vec<_>>();
        let mut all: Vec<(f64, usize)> = data
            .rows()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        let r = brute_force(&data, &q, 10).unwrap();
        for (i, (d, id)) in all.iter().take(10).enumerate() {
            assert_eq!(r.neighbor_ids[i], *id);
            assert!((r.distances[i] - d).abs() < 1e-12);
        }
    }

    #[test]
    fn k_larger_than_n_is_truncated() {
        let data = line(&[0.0, 1.0, 2.0]);
        let tree = AngleTree::build(&data, &TreeConfig::default()).unwrap();
        let q = vec![0.1];
        let r = knn_search(&tree, &data, &q, &SearchConfig::knn(5)).unwrap();
        assert!(r.truncated);
        assert_eq!(r.neighbor_ids, vec![0, 1, 2]);
        assert!(brute_force(&data, &q, 5).unwrap().truncated);
    }

    #[test]
    fn bad_inputs() {
        let data = line(&[0.0, 1.0, 2.0]);
        let tree = AngleTree::build(&data, &TreeConfig::default()).unwrap();
        let q = vec![0.1, 0.2];
        assert!(knn_search(&tree, &data, &q, &SearchConfig::knn(1)).is_err());
        let q = vec![0.1];
        assert!(knn_search(&tree, &data, &q, &SearchConfig::knn(0)).is_err());
        let cfg = SearchConfig { theta: FRAC_PI_2, ..Default::default() };
        assert!(knn_search(&tree, &data, &q, &cfg).is_err());
        assert!(multi_tree_probe(&[], &data, &q, 1).is_err());
        let other = line(&[0.0, 1.0]);
        assert!(knn_search(&tree, &other, &q, &SearchConfig::knn(1)).is_err());
    }

    #[test]
    fn pbf_examples() {
        assert_eq!(pbf_equivalent_fraction(0.9, 1).unwrap(), 0.9);
        assert_eq!(pbf_equivalent_fraction(1.0, 7).unwrap(), 1.0);
        assert!((pbf_equivalent_fraction(0.81, 2).unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(pbf_equivalent_fraction(0.0, 3).unwrap(), 0.0);
        assert!(pbf_equivalent_fraction(1.5, 1).is_err());
    }

    #[test]
    fn single_leaf_probe_is_brute_force() {
        let data = gen_sphere(30, 2, 5, 0.0, 3).unwrap();
        let tree = AngleTree::build(&data, &TreeConfig { min_size: 50, ..Default::default() }).unwrap();
        let q = vec![0.3; 5];
        assert_eq!(near_neighbor_probe(&tree, &data, &q, 3).unwrap(), brute_force(&data, &q, 3).unwrap());
    }

    #[test]
    fn probe_costs_at_most_one_leaf_and_multi_probe_adds_up() {
        let data = gen_sphere(2000, 5, 20, 0.0, 3).unwrap();
        let trees: Vec<AngleTree> = (0..4)
            .map(|s| {
                let cfg = TreeConfig { rng_seed: s, min_size: 40, angle_samples: 0, ..Default::default() };
                AngleTree::build(&data, &cfg).unwrap()
            })
            .collect();
        for i in (0..2000).step_by(97) {
            let q = Query::from_dataset(&data, i, true);
            let mut sum = 0;
            for t in &trees {
                let r = near_neighbor_probe(t, &data, q, 1).unwrap();
                assert!(r.stats.distance_evals <= 40);
                sum += r.stats.distance_evals;
            }
            let multi = multi_tree_probe(&trees, &data, q, 1).unwrap();
            assert_eq!(multi.stats.distance_evals, sum);
            let single = multi_tree_probe(&trees[..1], &data, q, 1).unwrap();
            assert_eq!(single, near_neighbor_probe(&trees[0], &data, q, 1).unwrap());
        }
    }

    #[test]
    fn searching_for_a_dataset_point_finds_it() {
        let data = gen_affine_flat(3000, 3, 30, 0.0, 1).unwrap();
        let tree = AngleTree::build(&data, &TreeConfig::default()).unwrap();
        for i in (0..3000).step_by(131) {
            let r = knn_search(&tree, &data, data.row(i), &SearchConfig::knn(1)).unwrap();
            assert_eq!(r.distances[0], 0.0);
        }
    }

    #[test]
    fn candidate_ordering_is_total() {
        let mut best = KBest::new(2);
        best.offer(3, 1.0);
        best.offer(1, 1.0);
        best.offer(2, 1.0);
        let r = best.finish(CountedMetric::new());
        assert_eq!(r.neighbor_ids, vec![1, 3]);
    }

    fn random_tree(seed: u64) -> (Dataset, AngleTree) {
        let data = gen_sphere(1500, 4, 20, 0.05, seed).unwrap();
        let tree_type = if seed.is_multiple_of(2) { TreeType::Rp } else { TreeType::Kd };
        let cfg =
            TreeConfig { tree_type, min_size: 20, angle_samples: 300, iout: 0.1, rng_seed: seed, ..Default::default() };
        let tree = AngleTree::build(&data, &cfg).unwrap();
        (data, tree)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn results_are_sorted_distinct_and_never_beat_brute_force(seed in 0u64..500, k in 1usize..6, qi in 0usize..1500) {
            let (data, tree) = random_tree(seed);
            let q = Query::from_dataset(&data, qi, true);
            let r = knn_search(&tree, &data, q, &SearchConfig::knn(k)).unwrap();
            let truth = brute_force(&data, q, k).unwrap();
            prop_assert_eq!(r.len(), k);
            prop_assert!(r.distances.windows(2).all(|w| w[0] <= w[1]));
            let ids: HashSet<_> = r.neighbor_ids.iter().collect();
            prop_assert_eq!(ids.len(), k);
            for (got, exact) in r.distances.iter().zip(&truth.distances) {
                prop_assert!(got >= exact);
            }
        }

        #[test]
        fn kd_bound_visits_a_superset_of_leaves(seed in 0u64..500, qi in 0usize..1500, k in 1usize..4) {
            let (data, tree) = random_tree(seed);
            let q = Query::from_dataset(&data, qi, true);
            let (_, angle) = knn_search_traced(&tree, &data, q, &SearchConfig::knn(k)).unwrap();
            let cfg = SearchConfig { force_kd_bound: true, ..SearchConfig::knn(k) };
            let (_, kd) = knn_search_traced(&tree, &data, q, &cfg).unwrap();
            let kd_leaves: HashSet<_> = kd.visited_leaves.iter().collect();
            for leaf in &angle.visited_leaves {
                prop_assert!(kd_leaves.contains(leaf));
            }
        }

        #[test]
        fn angle_bound_dominates_kd_bound(margin in -10.0f64..10.0, alpha in 1e-6f64..FRAC_PI_2, theta in 0.0f64..1.5) {
            let kd = margin.abs() * theta.cos();
            let angle = margin.abs() * theta.cos() / alpha.sin();
            prop_assert!(angle >= kd);
        }
    }
}
