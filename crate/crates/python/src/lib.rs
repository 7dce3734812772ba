//! Python bindings for the Angle Tree.
//!
//! Trees do not hold a reference to their dataset; search functions take
//! both, as in the Rust API.

use std::path::PathBuf;

use angle_tree::analysis::{self, GeometryParams};
use angle_tree::data::{self, FileFormat};
use angle_tree::experiment::{self, QueryExperiment};
use angle_tree::{AngleTree, CenterStat, Dataset, Error, Query, SearchConfig, SearchResult, TreeConfig, TreeType};
use pyo3::exceptions::{PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn format_arg(path: &std::path::Path, format: Option<&str>) -> PyResult<FileFormat> {
    match format {
        Some(f) => f.parse().map_err(to_py),
        None => Ok(FileFormat::from_path(path)),
    }
}

/// Immutable N×D matrix of points.
#[pyclass(name = "Dataset", module = "angletree", frozen)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (rows, name = "data"))]
    fn new(rows: Vec<Vec<f64>>, name: &str) -> PyResult<Self> {
        Ok(Self { inner: Dataset::from_rows(&rows, name).map_err(to_py)? })
    }

    /// Reads a dataset; the format is taken from the extension unless given.
    #[staticmethod]
    #[pyo3(signature = (path, format = None))]
    fn load(path: PathBuf, format: Option<&str>) -> PyResult<Self> {
        let fmt = format_arg(&path, format)?;
        Ok(Self { inner: data::load_dataset(&path, fmt).map_err(to_py)? })
    }

    #[pyo3(signature = (path, format = None))]
    fn save(&self, path: PathBuf, format: Option<&str>) -> PyResult<()> {
        let fmt = format_arg(&path, format)?;
        data::save_dataset(&self.inner, &path, fmt).map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn row(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.inner.len() {
            return Err(PyIndexError::new_err(format!("row {i} out of range")));
        }
        Ok(self.inner.row(i).to_vec())
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        self.inner.rows().map(<[f64]>::to_vec).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(name={:?}, n={}, dim={})", self.inner.name(), self.inner.len(), self.inner.dim())
    }
}

/// Neighbors found by a search, nearest first, with operation counts.
#[pyclass(name = "SearchResult", module = "angletree", frozen, get_all)]
struct PySearchResult {
    neighbor_ids: Vec<usize>,
    distances: Vec<f64>,
    distance_evals: u64,
    projection_evals: u64,
    truncated: bool,
}

impl From<SearchResult> for PySearchResult {
    fn from(r: SearchResult) -> Self {
        Self {
            neighbor_ids: r.neighbor_ids,
            distances: r.distances,
            distance_evals: r.stats.distance_evals,
            projection_evals: r.stats.projection_evals,
            truncated: r.truncated,
        }
    }
}

#[pymethods]
impl PySearchResult {
    fn __len__(&self) -> usize {
        self.neighbor_ids.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "SearchResult(neighbor_ids={:?}, distances={:?}, distance_evals={}, projection_evals={})",
            self.neighbor_ids, self.distances, self.distance_evals, self.projection_evals
        )
    }
}

fn check_query(data: &Dataset, point: &[f64], exclude: Option<usize>) -> PyResult<()> {
    if let Some(i) = exclude {
        if i >= data.len() {
            return Err(PyIndexError::new_err(format!("exclude id {i} out of range")));
        }
    }
    if point.len() != data.dim() {
        return Err(to_py(Error::DimensionMismatch { expected: data.dim(), found: point.len() }));
    }
    Ok(())
}

/// kd- or rp-tree with per-node dihedral-angle estimates.
#[pyclass(name = "AngleTree", module = "angletree")]
struct PyAngleTree {
    inner: AngleTree,
}

#[pymethods]
impl PyAngleTree {
    #[staticmethod]
    #[pyo3(signature = (
        data, tree_type = "rp", min_size = 50, angle_samples = 2000, iout = 0.1, seed = 0,
        max_depth = None, center = "mean", keep_angle_samples = false
    ))]
    #[allow(clippy::too_many_arguments)]
    fn build(
        py: Python<'_>,
        data: PyRef<'_, PyDataset>,
        tree_type: &str,
        min_size: usize,
        angle_samples: usize,
        iout: f64,
        seed: u64,
        max_depth: Option<usize>,
        center: &str,
        keep_angle_samples: bool,
    ) -> PyResult<Self> {
        let center = match center {
            "mean" => CenterStat::Mean,
            "median" => CenterStat::Median,
            other => return Err(PyValueError::new_err(format!("unknown center {other:?}"))),
        };
        let cfg = TreeConfig {
            tree_type: tree_type.parse::<TreeType>().map_err(to_py)?,
            min_size,
            angle_samples,
            iout,
            rng_seed: seed,
            max_depth,
            center,
            keep_angle_samples,
            ..Default::default()
        };
        let dataset = &data.inner;
        let inner = py.detach(|| AngleTree::build(dataset, &cfg)).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: AngleTree::load(&path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    #[staticmethod]
    fn from_bytes(bytes: &[u8]) -> PyResult<Self> {
        Ok(Self { inner: AngleTree::from_bytes(bytes).map_err(to_py)? })
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        Ok(PyBytes::new(py, &self.inner.to_bytes().map_err(to_py)?))
    }

    /// Exact-under-the-bound k-NN search.
    #[pyo3(signature = (data, query, k = 1, theta = 0.0, force_kd_bound = false, exclude = None))]
    fn knn_search(
        &self,
        data: PyRef<'_, PyDataset>,
        query: Vec<f64>,
        k: usize,
        theta: f64,
        force_kd_bound: bool,
        exclude: Option<usize>,
    ) -> PyResult<PySearchResult> {
        check_query(&data.inner, &query, exclude)?;
        let cfg = SearchConfig { k_neighbors: k, theta, force_kd_bound };
        let q = Query { point: &query, exclude };
        angle_tree::knn_search(&self.inner, &data.inner, q, &cfg).map(Into::into).map_err(to_py)
    }

    /// Scans only the leaf the query descends to.
    #[pyo3(signature = (data, query, k = 1, exclude = None))]
    fn probe(
        &self,
        data: PyRef<'_, PyDataset>,
        query: Vec<f64>,
        k: usize,
        exclude: Option<usize>,
    ) -> PyResult<PySearchResult> {
        check_query(&data.inner, &query, exclude)?;
        let q = Query { point: &query, exclude };
        angle_tree::near_neighbor_probe(&self.inner, &data.inner, q, k).map(Into::into).map_err(to_py)
    }

    /// Re-picks every dihedral quantile; needs `keep_angle_samples=True`.
    fn set_iout(&mut self, iout: f64) -> PyResult<()> {
        self.inner.set_iout(iout).map_err(to_py)
    }

    fn build_stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = self.inner.build_stats();
        let d = PyDict::new(py);
        d.set_item("distance_evals", s.distance_evals)?;
        d.set_item("projection_evals", s.projection_evals)?;
        d.set_item("angle_evals", s.angle_evals)?;
        Ok(d)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn n_points(&self) -> usize {
        self.inner.n_points()
    }

    #[getter]
    fn internal_count(&self) -> usize {
        self.inner.internal_count()
    }

    #[getter]
    fn leaf_count(&self) -> usize {
        self.inner.leaf_count()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    fn __repr__(&self) -> String {
        format!(
            "AngleTree(n_points={}, dim={}, internal={}, leaves={}, depth={})",
            self.inner.n_points(),
            self.inner.dim(),
            self.inner.internal_count(),
            self.inner.leaf_count(),
            self.inner.depth()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (data, query, k = 1, exclude = None))]
fn brute_force(
    data: PyRef<'_, PyDataset>,
    query: Vec<f64>,
    k: usize,
    exclude: Option<usize>,
) -> PyResult<PySearchResult> {
    check_query(&data.inner, &query, exclude)?;
    angle_tree::brute_force(&data.inner, Query { point: &query, exclude }, k).map(Into::into).map_err(to_py)
}

/// Several trees probed together, as in multi-table LSH.
#[pyclass(name = "Forest", module = "angletree", frozen)]
struct PyForest {
    trees: Vec<AngleTree>,
}

#[pymethods]
impl PyForest {
    #[new]
    fn new(trees: Vec<PyRef<'_, PyAngleTree>>) -> Self {
        Self { trees: trees.iter().map(|t| t.inner.clone()).collect() }
    }

    /// Depth-limited rp-trees with seeds `seed, seed + 1, ...`.
    #[staticmethod]
    #[pyo3(signature = (data, n_trees, max_depth = Some(10), min_size = 1, seed = 0))]
    fn build_rp(
        py: Python<'_>,
        data: PyRef<'_, PyDataset>,
        n_trees: usize,
        max_depth: Option<usize>,
        min_size: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let dataset = &data.inner;
        let trees =
            py.detach(|| experiment::build_rp_forest(dataset, n_trees, max_depth, min_size, seed)).map_err(to_py)?;
        Ok(Self { trees })
    }

    /// Probes the query's leaf in every tree and merges the candidates.
    #[pyo3(signature = (data, query, k = 1, exclude = None))]
    fn probe(
        &self,
        data: PyRef<'_, PyDataset>,
        query: Vec<f64>,
        k: usize,
        exclude: Option<usize>,
    ) -> PyResult<PySearchResult> {
        check_query(&data.inner, &query, exclude)?;
        angle_tree::multi_tree_probe(&self.trees, &data.inner, Query { point: &query, exclude }, k)
            .map(Into::into)
            .map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.trees.len()
    }
}

/// Runs sampled dataset queries and returns the aggregate report.
#[pyfunction]
#[pyo3(signature = (tree, data, n_queries = 200, k = 1, theta = 0.0, force_kd_bound = false, exclude_self = false, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn run_queries<'py>(
    py: Python<'py>,
    tree: PyRef<'_, PyAngleTree>,
    data: PyRef<'_, PyDataset>,
    n_queries: usize,
    k: usize,
    theta: f64,
    force_kd_bound: bool,
    exclude_self: bool,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let exp = QueryExperiment {
        n_queries,
        search: SearchConfig { k_neighbors: k, theta, force_kd_bound },
        exclude_self,
        seed,
    };
    let (t, d) = (&tree.inner, &data.inner);
    let s = py.detach(|| experiment::run_queries(t, d, &exp)).map_err(to_py)?.summary;
    let out = PyDict::new(py);
    out.set_item("n_points", s.n_points)?;
    out.set_item("n_queries", s.n_queries)?;
    out.set_item("k_neighbors", s.k_neighbors)?;
    out.set_item("recall", s.recall)?;
    out.set_item("mean_distance_evals", s.mean_distance_evals)?;
    out.set_item("median_distance_evals", s.median_distance_evals)?;
    out.set_item("mean_projection_evals", s.mean_projection_evals)?;
    out.set_item("mean_total_ndc", s.mean_total_ndc)?;
    out.set_item("pbf_fraction", s.pbf_fraction)?;
    out.set_item("speedup_over_pbf", s.speedup_over_pbf)?;
    out.set_item("wall_time_s", s.wall_time_s)?;
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (n, d, ambient, noise = 0.0, seed = 0))]
fn gen_sphere(n: usize, d: usize, ambient: usize, noise: f64, seed: u64) -> PyResult<PyDataset> {
    Ok(PyDataset { inner: data::gen_sphere(n, d, ambient, noise, seed).map_err(to_py)? })
}

#[pyfunction]
#[pyo3(signature = (n, d, ambient, noise = 0.0, seed = 0))]
fn gen_affine_flat(n: usize, d: usize, ambient: usize, noise: f64, seed: u64) -> PyResult<PyDataset> {
    Ok(PyDataset { inner: data::gen_affine_flat(n, d, ambient, noise, seed).map_err(to_py)? })
}

#[pyfunction]
#[pyo3(signature = (n, seed = 0))]
fn gen_sin3d(n: usize, seed: u64) -> PyResult<PyDataset> {
    Ok(PyDataset { inner: data::gen_sin3d(n, seed).map_err(to_py)? })
}

#[pyfunction]
#[pyo3(signature = (n, d, ambient, epsilon, alpha = std::f64::consts::FRAC_PI_2, seed = 0))]
fn gen_hypercylinder(n: usize, d: usize, ambient: usize, epsilon: f64, alpha: f64, seed: u64) -> PyResult<PyDataset> {
    let params = GeometryParams::new(ambient, d, epsilon, alpha, 0.5).map_err(to_py)?;
    Ok(PyDataset { inner: data::gen_hypercylinder(&params, n, seed).map_err(to_py)? })
}

#[pyfunction]
fn ball_volume(dim: usize, radius: f64) -> f64 {
    analysis::ball_volume(dim, radius)
}

#[pyfunction]
fn cap_volume(dim: usize, radius: f64, height: f64) -> PyResult<f64> {
    analysis::cap_volume(dim, radius, height).map_err(to_py)
}

/// Fraction of the unit `d`-ball inside the double cone of half-angle `theta`
/// around a fixed axis.
#[pyfunction]
fn segment_ratio(d: usize, theta: f64) -> PyResult<f64> {
    analysis::segment_ratio(d, theta).map_err(to_py)
}

#[pyfunction]
fn miss_probability(d: usize, theta: f64, k: u64) -> PyResult<f64> {
    analysis::miss_probability(d, theta, k).map_err(to_py)
}

#[pyfunction]
fn compute_theta(d: usize, k: u64, target_fail_prob: f64) -> PyResult<f64> {
    analysis::compute_theta(d, k, target_fail_prob).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (ambient, d, epsilon, alpha, theta = 0.5))]
fn error_region_ratio(ambient: usize, d: usize, epsilon: f64, alpha: f64, theta: f64) -> PyResult<f64> {
    let params = GeometryParams::new(ambient, d, epsilon, alpha, theta).map_err(to_py)?;
    analysis::error_region_ratio(&params).map_err(to_py)
}

/// Monte Carlo `(mean, variance, std_err)` of sin α for a random hyperplane.
#[pyfunction]
#[pyo3(signature = (ambient, d, n_samples = 100_000, seed = 0))]
fn sin_alpha_mc(py: Python<'_>, ambient: usize, d: usize, n_samples: u64, seed: u64) -> PyResult<(f64, f64, f64)> {
    let m = py.detach(|| analysis::sin_alpha_mc(ambient, d, n_samples, seed)).map_err(to_py)?;
    Ok((m.mean, m.variance, m.std_err))
}

#[pyfunction]
fn sin_alpha_limit_mean(d: usize, ambient: usize) -> f64 {
    analysis::sin_alpha_limit_mean(d, ambient)
}

#[pyfunction]
fn pbf_equivalent_fraction(recall: f64, k: usize) -> PyResult<f64> {
    angle_tree::pbf_equivalent_fraction(recall, k).map_err(to_py)
}

#[pymodule]
fn angletree(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyAngleTree>()?;
    m.add_class::<PyForest>()?;
    m.add_class::<PySearchResult>()?;
    m.add_function(wrap_pyfunction!(brute_force, m)?)?;
    m.add_function(wrap_pyfunction!(run_queries, m)?)?;
    m.add_function(wrap_pyfunction!(gen_sphere, m)?)?;
    m.add_function(wrap_pyfunction!(gen_affine_flat, m)?)?;
    m.add_function(wrap_pyfunction!(gen_sin3d, m)?)?;
    m.add_function(wrap_pyfunction!(gen_hypercylinder, m)?)?;
    m.add_function(wrap_pyfunction!(ball_volume, m)?)?;
    m.add_function(wrap_pyfunction!(cap_volume, m)?)?;
    m.add_function(wrap_pyfunction!(segment_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(miss_probability, m)?)?;
    m.add_function(wrap_pyfunction!(compute_theta, m)?)?;
    m.add_function(wrap_pyfunction!(error_region_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(sin_alpha_mc, m)?)?;
    m.add_function(wrap_pyfunction!(sin_alpha_limit_mean, m)?)?;
    m.add_function(wrap_pyfunction!(pbf_equivalent_fraction, m)?)?;
    Ok(())
}
