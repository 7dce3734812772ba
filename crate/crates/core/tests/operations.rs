//! Integration checks for operation examples and cross-module invariants.

use angle_tree::analysis::{compute_theta, hypercylinder_mc, miss_probability, GeometryParams, THETA_GRID_STEP};
use angle_tree::data::{gen_hypercylinder, gen_sin3d, gen_sphere};
use angle_tree::experiment::{build_rp_forest, build_with_report, run_queries, sample_query_ids, QueryExperiment};
use angle_tree::{
    brute_force, knn_search, multi_tree_probe, near_neighbor_probe, AngleTree, Dataset, Query, SearchConfig,
    TreeConfig, TreeType,
};

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
fn symmetric_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                let (rp, rq) = (a[p].clone(), a[q].clone());
                for k in 0..n {
                    a[p][k] = c * rp[k] - s * rq[k];
                    a[q][k] = s * rp[k] + c * rq[k];
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

#[test]
fn sphere_is_locally_fourteen_dimensional() {
    let data = gen_sphere(10_000, 14, 15, 0.0, 3).unwrap();
    let center = data.row(0).to_vec();
    // Smallest-radius neighborhood with enough points for a covariance.
    let nn = brute_force(&data, &center, 200).unwrap();
    let pts: Vec<&[f64]> = nn.neighbor_ids.iter().map(|&i| data.row(i)).collect();
    let dim = 15;
    let mean: Vec<f64> = (0..dim).map(|j| pts.iter().map(|p| p[j]).sum::<f64>() / pts.len() as f64).collect();
    let mut cov = vec![vec![0.0; dim]; dim];
    for p in &pts {
        for i in 0..dim {
            for j in 0..dim {
                cov[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]) / pts.len() as f64;
            }
        }
    }
    let ev = symmetric_eigenvalues(cov);
    let total: f64 = ev.iter().sum();
    // Curvature leaves a small residual in the 15th direction.
    assert!(ev[14] / total < 0.01, "residual fraction {}", ev[14] / total);
}

#[test]
fn hypercylinder_box_model_averages() {
    let p = GeometryParams::new(10, 2, 0.05, 0.7, 0.5).unwrap();
    let est = hypercylinder_mc(&p, 400_000, 5).unwrap();
    assert!((est.box_ip_sq - 1.0).abs() < 0.01);
    assert!(est.box_noise_fraction() <= p.epsilon);
    // Same data through the generator: ball model gives a²·d/(d+2).
    let data = gen_hypercylinder(&p, 50_000, 5).unwrap();
    let ip: f64 = data.rows().map(|r| r[0] * r[0] + r[1] * r[1]).sum::<f64>() / data.len() as f64;
    let expected = p.radius_ip().powi(2) * 2.0 / 4.0;
    assert!((ip - expected).abs() < 0.01, "{ip} vs {expected}");
}

#[test]
fn compute_theta_at_ten_dimensions() {
    let t = compute_theta(10, 2000, 0.01).unwrap();
    // Smallest grid angle meeting the miss target.
    assert!(miss_probability(10, t, 2000).unwrap() <= 0.01);
    assert!(miss_probability(10, t - THETA_GRID_STEP, 2000).unwrap() > 0.01);
    assert!((t.to_degrees() - 36.0).abs() < 1e-9, "{}", t.to_degrees());
    assert!(t - compute_theta(10, 20_000, 0.01).unwrap() >= THETA_GRID_STEP);
}

#[test]
fn build_cost_grows_near_linearly() {
    let cfg = TreeConfig { angle_samples: 200, max_depth: Some(8), rng_seed: 1, ..Default::default() };
    let small = gen_sphere(10_000, 6, 30, 0.0, 1).unwrap();
    let large = gen_sphere(20_000, 6, 30, 0.0, 1).unwrap();
    let (_, a) = build_with_report(&small, &cfg).unwrap();
    let (_, b) = build_with_report(&large, &cfg).unwrap();
    assert!((b.build_ndc as f64) < 3.0 * a.build_ndc as f64);
}

#[test]
fn angle_count_doubles_with_k_samples() {
    let data = gen_sphere(8000, 6, 30, 0.0, 2).unwrap();
    let base = TreeConfig { rng_seed: 2, ..Default::default() };
    let (_, a) = build_with_report(&data, &TreeConfig { angle_samples: 1000, ..base.clone() }).unwrap();
    let (_, b) = build_with_report(&data, &TreeConfig { angle_samples: 2000, ..base }).unwrap();
    let ratio = b.angle_evals as f64 / a.angle_evals as f64;
    assert!((ratio - 2.0).abs() <= 0.02);
}

#[test]
fn more_probe_trees_raise_recall() {
    let data = gen_sphere(20_000, 8, 9, 0.0, 4).unwrap();
    let trees = build_rp_forest(&data, 10, None, 50, 4).unwrap();
    let ids = sample_query_ids(data.len(), 300, 4);
    let mut hits_one = 0;
    let mut hits_ten = 0;
    for &i in &ids {
        let q = Query::from_dataset(&data, i, true);
        let truth = brute_force(&data, q, 1).unwrap();
        hits_one += near_neighbor_probe(&trees[0], &data, q, 1).unwrap().matches(&truth) as usize;
        hits_ten += multi_tree_probe(&trees, &data, q, 1).unwrap().matches(&truth) as usize;
    }
    assert!(hits_ten > hits_one, "{hits_one} vs {hits_ten}");
}

#[test]
fn sin3d_is_exact_and_kd_bound_agrees() {
    let data = gen_sin3d(20_000, 5).unwrap();
    let cfg = TreeConfig { tree_type: TreeType::Rp, rng_seed: 5, ..Default::default() };
    let tree = AngleTree::build(&data, &cfg).unwrap();
    let exp = QueryExperiment { n_queries: 200, exclude_self: true, seed: 5, ..Default::default() };
    let angle = run_queries(&tree, &data, &exp).unwrap().summary;
    let kd_exp = QueryExperiment { search: SearchConfig { force_kd_bound: true, ..exp.search }, ..exp.clone() };
    let kd = run_queries(&tree, &data, &kd_exp).unwrap().summary;
    assert_eq!(kd.recall, 1.0);
    assert_eq!(angle.recall, 1.0);
    // In three dimensions sin α̂ is close to one, so costs nearly coincide.
    assert!(angle.mean_total_ndc <= kd.mean_total_ndc);
    assert!(angle.mean_total_ndc >= 0.5 * kd.mean_total_ndc, "{} vs {}", angle.mean_total_ndc, kd.mean_total_ndc);
}

#[test]
fn raising_iout_never_costs_more_per_query() {
    let data = gen_sphere(5000, 6, 50, 0.05, 6).unwrap();
    let cfg = TreeConfig { iout: 0.0, keep_angle_samples: true, rng_seed: 6, min_size: 30, ..Default::default() };
    let mut tree = AngleTree::build(&data, &cfg).unwrap();
    let ids = sample_query_ids(data.len(), 200, 6);
    let mut previous: Option<Vec<u64>> = None;
    let mut per_query_violations = 0;
    let mut totals = Vec::new();
    for iout in [0.0, 0.05, 0.1, 0.2, 0.4] {
        tree.set_iout(iout).unwrap();
        let costs: Vec<u64> = ids
            .iter()
            .map(|&i| {
                knn_search(&tree, &data, Query::from_dataset(&data, i, true), &SearchConfig::knn(1))
                    .unwrap()
                    .stats
                    .distance_evals
            })
            .collect();
        if let Some(prev) = &previous {
            per_query_violations += costs.iter().zip(prev).filter(|(c, p)| c > p).count();
        }
        totals.push(costs.iter().sum::<u64>());
        previous = Some(costs);
    }
    assert!(totals.windows(2).all(|w| w[1] <= w[0]), "{totals:?}");
    assert_eq!(per_query_violations, 0);
}

#[test]
fn dataset_row_access_matches_rows_iter() {
    let data: Dataset = gen_sphere(10, 2, 4, 0.0, 1).unwrap();
    for (i, r) in data.rows().enumerate() {
        assert_eq!(r, data.row(i));
    }
}
