//! Experiment drivers behind the `angle-bench` CLI: build accounting,
//! query benchmarks against brute force, the multi-tree LSH emulation,
//! and parameter grids over the analysis formulas.

use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analysis::{self, GeometryParams};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::search::{
    brute_force, knn_search, multi_tree_probe, near_neighbor_probe, pbf_equivalent_fraction, Query, SearchConfig,
};
use crate::tree::{AngleTree, TreeConfig, TreeType};

/// Picks `n_queries` dataset indices: distinct when possible, otherwise
/// with replacement.
pub fn sample_query_ids(n_points: usize, n_queries: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if n_queries <= n_points {
        sample(&mut rng, n_points, n_queries).into_vec()
    } else {
        (0..n_queries).map(|_| rng.random_range(0..n_points)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuildReport {
    pub n_points: usize,
    pub dim: usize,
    pub nodes: usize,
    pub internal_nodes: usize,
    pub leaves: usize,
    pub depth: usize,
    pub projection_evals: u64,
    pub angle_evals: u64,
    /// Projections plus angle computations.
    pub build_ndc: u64,
    pub wall_time_s: f64,
}

/// Builds a tree and reports its construction cost.
pub fn build_with_report(data: &Dataset, cfg: &TreeConfig) -> Result<(AngleTree, BuildReport)> {
    let start = Instant::now();
    let tree = AngleTree::build(data, cfg)?;
    let wall_time_s = start.elapsed().as_secs_f64();
    let stats = tree.build_stats();
    let report = BuildReport {
        n_points: data.len(),
        dim: data.dim(),
        nodes: tree.nodes().len(),
        internal_nodes: tree.internal_count(),
        leaves: tree.leaf_count(),
        depth: tree.depth(),
        projection_evals: stats.projection_evals,
        angle_evals: stats.angle_evals,
        build_ndc: stats.total(),
        wall_time_s,
    };
    Ok((tree, report))
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryExperiment {
    pub n_queries: usize,
    pub search: SearchConfig,
    /// Drop the query point itself from its own candidates.
    pub exclude_self: bool,
    pub seed: u64,
}

impl Default for QueryExperiment {
    fn default() -> Self {
        Self { n_queries: 200, search: SearchConfig::default(), exclude_self: false, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryRow {
    /// Position in the query sequence.
    pub index: usize,
    /// Dataset row used as the query.
    pub point_id: usize,
    /// All k returned neighbors are true k nearest neighbors.
    pub correct: bool,
    pub distance_evals: u64,
    pub projection_evals: u64,
}

impl QueryRow {
    pub fn total_ndc(&self) -> u64 {
        self.distance_evals + self.projection_evals
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuerySummary {
    pub n_points: usize,
    pub n_queries: usize,
    pub k_neighbors: usize,
    pub recall: f64,
    pub mean_distance_evals: f64,
    pub median_distance_evals: f64,
    pub mean_projection_evals: f64,
    /// Mean of distance plus projection evaluations per query.
    pub mean_total_ndc: f64,
    pub pbf_fraction: f64,
    /// `pbf_fraction · N / mean_total_ndc`.
    pub speedup_over_pbf: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryReport {
    pub rows: Vec<QueryRow>,
    pub summary: QuerySummary,
}

fn median(values: &mut [u64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_unstable();
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m] as f64
    } else {
        (values[m - 1] + values[m]) as f64 / 2.0
    }
}

/// Summarizes per-query rows. Recall is the mean of the correctness
/// indicators.
pub fn summarize(rows: &[QueryRow], n_points: usize, k_neighbors: usize, wall_time_s: f64) -> Result<QuerySummary> {
    if rows.is_empty() {
        return Err(Error::InvalidConfig("no queries to summarize".into()));
    }
    let n = rows.len() as f64;
    let recall = rows.iter().filter(|r| r.correct).count() as f64 / n;
    let mean = |f: fn(&QueryRow) -> u64| rows.iter().map(f).sum::<u64>() as f64 / n;
    let mean_total_ndc = mean(QueryRow::total_ndc);
    let pbf_fraction = pbf_equivalent_fraction(recall, k_neighbors)?;
    let mut dist: Vec<u64> = rows.iter().map(|r| r.distance_evals).collect();
    Ok(QuerySummary {
        n_points,
        n_queries: rows.len(),
        k_neighbors,
        recall,
        mean_distance_evals: mean(|r| r.distance_evals),
        median_distance_evals: median(&mut dist),
        mean_projection_evals: mean(|r| r.projection_evals),
        mean_total_ndc,
        pbf_fraction,
        speedup_over_pbf: if mean_total_ndc > 0.0 {
            pbf_fraction * n_points as f64 / mean_total_ndc
        } else {
            f64::INFINITY
        },
        wall_time_s,
    })
}

/// Runs seeded dataset-point queries through [`knn_search`] and scores
/// each against [`brute_force`]. Rows come back in query order.
pub fn run_queries(tree: &AngleTree, data: &Dataset, exp: &QueryExperiment) -> Result<QueryReport> {
    if exp.n_queries == 0 {
        return Err(Error::InvalidConfig("n_queries must be positive".into()));
    }
    let ids = sample_query_ids(data.len(), exp.n_queries, exp.seed);
    run_queries_on(tree, data, &ids, exp)
}

/// [`run_queries`] over an explicit list of query rows.
pub fn run_queries_on(tree: &AngleTree, data: &Dataset, ids: &[usize], exp: &QueryExperiment) -> Result<QueryReport> {
    let start = Instant::now();
    let k = exp.search.k_neighbors;
    let rows = ids
        .par_iter()
        .enumerate()
        .map(|(index, &point_id)| {
            let q = Query::from_dataset(data, point_id, exp.exclude_self);
            let got = knn_search(tree, data, q, &exp.search)?;
            let truth = brute_force(data, q, k)?;
            Ok(QueryRow {
                index,
                point_id,
                correct: got.matches(&truth),
                distance_evals: got.stats.distance_evals,
                projection_evals: got.stats.projection_evals,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&rows, data.len(), k, start.elapsed().as_secs_f64())?;
    Ok(QueryReport { rows, summary })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LshExperiment {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_size: usize,
    pub n_queries: usize,
    pub k_neighbors: usize,
    pub exclude_self: bool,
    pub seed: u64,
}

impl Default for LshExperiment {
    fn default() -> Self {
        Self {
            n_trees: 3,
            max_depth: Some(10),
            min_size: 1,
            n_queries: 200,
            k_neighbors: 1,
            exclude_self: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LshReport {
    pub n_trees: usize,
    pub n_queries: usize,
    /// Single-tree probe accuracy of each tree.
    pub per_tree_accuracy: Vec<f64>,
    /// Mean single-tree accuracy `p̂`.
    pub p_hat: f64,
    /// `1 − (1 − p̂)^t`.
    pub projected_accuracy: f64,
    /// Accuracy of the merged multi-tree probe.
    pub measured_accuracy: f64,
    /// Mean distance evaluations of one single-tree probe.
    pub single_tree_mean_ndc: f64,
    /// `t ×` the single-tree mean.
    pub avg_over_all_hashes: f64,
    /// Mean distance evaluations of the merged probe.
    pub measured_mean_ndc: f64,
    pub mean_leaf_size: f64,
}

/// Independent plain rp-trees (no angle estimation), one seed per tree.
pub fn build_rp_forest(
    data: &Dataset,
    n_trees: usize,
    max_depth: Option<usize>,
    min_size: usize,
    seed: u64,
) -> Result<Vec<AngleTree>> {
    (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let cfg = TreeConfig {
                tree_type: TreeType::Rp,
                min_size,
                angle_samples: 0,
                max_depth,
                rng_seed: seed.wrapping_add(t as u64),
                ..TreeConfig::default()
            };
            AngleTree::build(data, &cfg)
        })
        .collect()
}

/// Emulates LSH with `t` random-projection trees probed at one leaf each.
pub fn lsh_emulate(data: &Dataset, exp: &LshExperiment) -> Result<LshReport> {
    if exp.n_trees == 0 || exp.n_queries == 0 {
        return Err(Error::InvalidConfig("need at least one tree and one query".into()));
    }
    let trees = build_rp_forest(data, exp.n_trees, exp.max_depth, exp.min_size, exp.seed)?;
    let ids = sample_query_ids(data.len(), exp.n_queries, exp.seed ^ 0x5eed);
    lsh_evaluate(&trees, data, &ids, exp)
}

/// Scores an existing forest on the given query rows.
pub fn lsh_evaluate(trees: &[AngleTree], data: &Dataset, ids: &[usize], exp: &LshExperiment) -> Result<LshReport> {
    let k = exp.k_neighbors;
    let t = trees.len();
    // Per query: single-tree hits and costs, merged hit and cost.
    let per_query = ids
        .par_iter()
        .map(|&i| {
            let q = Query::from_dataset(data, i, exp.exclude_self);
            let truth = brute_force(data, q, k)?;
            let mut hits = Vec::with_capacity(t);
            let mut cost = 0u64;
            for tree in trees {
                let r = near_neighbor_probe(tree, data, q, k)?;
                hits.push(r.matches(&truth));
                cost += r.stats.distance_evals;
            }
            let merged = multi_tree_probe(trees, data, q, k)?;
            Ok((hits, cost, merged.matches(&truth), merged.stats.distance_evals))
        })
        .collect::<Result<Vec<_>>>()?;
    let nq = ids.len() as f64;
    let per_tree_accuracy: Vec<f64> =
        (0..t).map(|j| per_query.iter().filter(|(h, ..)| h[j]).count() as f64 / nq).collect();
    let p_hat = per_tree_accuracy.iter().sum::<f64>() / t as f64;
    let single_tree_mean_ndc = per_query.iter().map(|(_, c, ..)| *c as f64).sum::<f64>() / (nq * t as f64);
    let leaf_sizes: Vec<usize> = trees
        .iter()
        .flat_map(|tr| tr.nodes().iter())
        .filter_map(|n| match n {
            crate::tree::Node::Leaf { ids } => Some(ids.len()),
            _ => None,
        })
        .collect();
    Ok(LshReport {
        n_trees: t,
        n_queries: ids.len(),
        p_hat,
        projected_accuracy: 1.0 - (1.0 - p_hat).powi(t as i32),
        measured_accuracy: per_query.iter().filter(|(_, _, m, _)| *m).count() as f64 / nq,
        single_tree_mean_ndc,
        avg_over_all_hashes: t as f64 * single_tree_mean_ndc,
        measured_mean_ndc: per_query.iter().map(|(.., c)| *c as f64).sum::<f64>() / nq,
        mean_leaf_size: leaf_sizes.iter().sum::<usize>() as f64 / leaf_sizes.len() as f64,
        per_tree_accuracy,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MissRow {
    pub d: usize,
    pub theta_deg: f64,
    pub k: u64,
    pub segment_ratio: f64,
    pub miss_probability: f64,
    /// Monte Carlo `s/S` and its standard error, when requested.
    pub mc: Option<(f64, f64)>,
}

/// `(1 − s/S)^k` over a grid of intrinsic dimensions and error angles.
pub fn miss_grid(dims: &[usize], thetas_deg: &[f64], k: u64, mc: Option<(u64, u64)>) -> Result<Vec<MissRow>> {
    let mut rows = Vec::new();
    for &d in dims {
        for &t in thetas_deg {
            let theta = t.to_radians();
            let mc = match mc {
                Some((samples, seed)) => {
                    let e = analysis::segment_ratio_mc(d, theta, samples, seed)?;
                    Some((e.mean, e.std_err))
                }
                None => None,
            };
            rows.push(MissRow {
                d,
                theta_deg: t,
                k,
                segment_ratio: analysis::segment_ratio(d, theta)?,
                miss_probability: analysis::miss_probability(d, theta, k)?,
                mc,
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorRegionRow {
    pub params: GeometryParams,
    pub ratio: f64,
    /// Monte Carlo ratio and its standard error, when requested.
    pub mc: Option<(f64, f64)>,
}

/// Error-region ratio over every combination of the given parameters.
/// Combinations with `d ≥ D` are skipped.
pub fn error_region_grid(
    dims: &[usize],
    ambients: &[usize],
    epsilons: &[f64],
    alphas_deg: &[f64],
    mc: Option<(u64, u64)>,
) -> Result<Vec<ErrorRegionRow>> {
    let mut rows = Vec::new();
    for &ambient in ambients {
        for &d in dims {
            if d >= ambient {
                continue;
            }
            for &eps in epsilons {
                for &a in alphas_deg {
                    let params = GeometryParams::new(ambient, d, eps, a.to_radians(), 0.5)?;
                    let mc = match mc {
                        Some((samples, seed)) => {
                            let e = analysis::hypercylinder_mc(&params, samples, seed)?;
                            Some((e.ratio, e.std_err))
                        }
                        None => None,
                    };
                    rows.push(ErrorRegionRow { params, ratio: analysis::error_region_ratio(&params)?, mc });
                }
            }
        }
    }
    Ok(rows)
}
