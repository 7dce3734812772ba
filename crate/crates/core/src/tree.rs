//! kd-trees, rp-trees and their Angle Tree augmentation.
//!
//! Construction is the usual recursive median split. The one addition is
//! that every internal node stores an estimate of the dihedral angle
//! between its splitter and the local intrinsic plane of its points. The
//! estimate comes from `k` random vectors `p − center`: each vector's
//! angle to the splitter *plane* is at most the true dihedral angle when
//! the points lie on a flat, so a high quantile of the sampled plane
//! angles approaches it from below. Search divides the perpendicular
//! distance to the splitter by the sine of this angle.

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{gaussian_vec, to_u32, Dataset};
use crate::error::{Error, Result};
use crate::geometry::{angle_to_normal, CountedMetric, Splitter};

/// Smallest dihedral angle a node may carry; keeps `1/sin α` finite.
pub const MIN_DIHEDRAL: f64 = 1e-9;

const TREE_MAGIC: &[u8; 4] = b"ATRE";
const TREE_VERSION: u32 = 1;
const TAG_INTERNAL: u8 = 0;
const TAG_LEAF: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreeType {
    /// Axis-aligned splits on the coordinate of maximum variance.
    Kd,
    /// Splits along a random Gaussian direction.
    Rp,
}

impl std::str::FromStr for TreeType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kd" => Ok(TreeType::Kd),
            "rp" => Ok(TreeType::Rp),
            other => Err(Error::InvalidConfig(format!("unknown tree type {other:?}"))),
        }
    }
}

/// Statistic used as the region center when sampling angle vectors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CenterStat {
    #[default]
    Mean,
    Median,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeConfig {
    pub tree_type: TreeType,
    /// A node with at most this many points becomes a leaf.
    pub min_size: usize,
    /// Random vectors drawn per node for dihedral estimation. Zero disables
    /// estimation and every node gets `π/2` (plain kd/rp-tree).
    pub angle_samples: usize,
    /// Fraction of the largest sampled plane angles ignored as outliers.
    pub iout: f64,
    /// Error angle to use at search time. Stored for reference only.
    pub theta: f64,
    pub rng_seed: u64,
    /// Optional depth cap; a node at this depth becomes a leaf.
    pub max_depth: Option<usize>,
    pub center: CenterStat,
    /// Keep each node's sorted sample angles so the IOut quantile can be
    /// changed later without rebuilding.
    pub keep_angle_samples: bool,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            tree_type: TreeType::Rp,
            min_size: 50,
            angle_samples: 2000,
            iout: 0.1,
            theta: 0.0,
            rng_seed: 0,
            max_depth: None,
            center: CenterStat::Mean,
            keep_angle_samples: false,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_size == 0 {
            return Err(Error::InvalidConfig("min_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.iout) {
            return Err(Error::InvalidConfig(format!("iout {} outside [0, 1)", self.iout)));
        }
        if !(0.0..FRAC_PI_2).contains(&self.theta) {
            return Err(Error::InvalidConfig(format!("theta {} outside [0, pi/2)", self.theta)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Internal {
        splitter: Splitter,
        /// Estimated dihedral angle in `(0, π/2]`.
        dihedral: f64,
        neg: usize,
        pos: usize,
    },
    Leaf {
        ids: Vec<usize>,
    },
}

/// An immutable space-partitioning tree stored as a pre-order arena; the
/// root is node 0.
#[derive(Clone, Debug, PartialEq)]
pub struct AngleTree {
    dim: usize,
    n_points: usize,
    nodes: Vec<Node>,
    /// Sorted plane angles per node (empty for leaves), when kept.
    angle_samples: Option<Vec<Vec<f64>>>,
    build_stats: CountedMetric,
}

/// Chooses a splitter for the points `ids` of `data`.
///
/// kd: the axis of maximum sample variance; rp: a normalized Gaussian
/// direction. The threshold is the lower median projection, so ties go to
/// the negative side; if that leaves the positive side empty the threshold
/// drops to the next distinct projection below.
pub fn gen_splitter<R: Rng>(tree_type: TreeType, data: &Dataset, ids: &[usize], rng: &mut R) -> Result<Splitter> {
    split_points(tree_type, data, ids, rng).map(|(s, _)| s)
}

/// Like [`gen_splitter`], also returning every point's projection.
fn split_points<R: Rng>(
    tree_type: TreeType,
    data: &Dataset,
    ids: &[usize],
    rng: &mut R,
) -> Result<(Splitter, Vec<f64>)> {
    if ids.len() < 2 {
        return Err(Error::Unsplittable);
    }
    let dim = data.dim();
    let normal = match tree_type {
        TreeType::Kd => {
            let n = ids.len() as f64;
            let mut mean = vec![0.0; dim];
            for &i in ids {
                mean.iter_mut().zip(data.row(i)).for_each(|(m, x)| *m += x);
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![0.0; dim];
            for &i in ids {
                for ((v, x), m) in var.iter_mut().zip(data.row(i)).zip(&mean) {
                    *v += (x - m) * (x - m);
                }
            }
            // First axis wins ties.
            let (axis, best) =
                var.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            if best.is_nan() || best <= 0.0 {
                return Err(Error::Unsplittable);
            }
            let mut e = vec![0.0; dim];
            e[axis] = 1.0;
            e
        }
        TreeType::Rp => loop {
            let g = gaussian_vec(rng, dim);
            let n = crate::geometry::norm(&g);
            if n > 0.0 {
                break g.into_iter().map(|x| x / n).collect::<Vec<_>>();
            }
        },
    };
    let proto = Splitter::from_unit(normal, 0.0);
    let projections: Vec<f64> = ids.iter().map(|&i| proto.project(data.row(i))).collect();
    let mut sorted = projections.clone();
    sorted.sort_by(f64::total_cmp);
    let max = *sorted.last().expect("at least two points");
    let mut threshold = sorted[(sorted.len() - 1) / 2];
    if threshold >= max {
        threshold = match sorted.iter().rev().find(|&&p| p < max) {
            Some(&p) => p,
            None => return Err(Error::Unsplittable),
        };
    }
    Ok((Splitter::from_unit(proto.normal().to_vec(), threshold), projections))
}

/// Result of [`estimate_dihedral`].
#[derive(Clone, Debug, PartialEq)]
pub struct DihedralEstimate {
    pub angle: f64,
    /// Plane angles of the non-degenerate samples, ascending.
    pub sorted_samples: Vec<f64>,
}

/// The IOut quantile of ascending plane angles: the element at
/// `⌊len·(1 − iout)⌋`, clamped to the last one. Empty input gives `π/2`.
pub fn quantile_angle(sorted: &[f64], iout: f64) -> f64 {
    if sorted.is_empty() {
        return FRAC_PI_2;
    }
    let idx = ((sorted.len() as f64) * (1.0 - iout)).floor() as usize;
    sorted[idx.min(sorted.len() - 1)].clamp(MIN_DIHEDRAL, FRAC_PI_2)
}

fn region_center(data: &Dataset, ids: &[usize], stat: CenterStat) -> Vec<f64> {
    let dim = data.dim();
    match stat {
        CenterStat::Mean => {
            let mut c = vec![0.0; dim];
            for &i in ids {
                c.iter_mut().zip(data.row(i)).for_each(|(c, x)| *c += x);
            }
            let n = ids.len() as f64;
            c.iter_mut().for_each(|c| *c /= n);
            c
        }
        CenterStat::Median => {
            let mut column = Vec::with_capacity(ids.len());
            (0..dim)
                .map(|j| {
                    column.clear();
                    column.extend(ids.iter().map(|&i| data.row(i)[j]));
                    column.sort_by(f64::total_cmp);
                    column[(column.len() - 1) / 2]
                })
                .collect()
        }
    }
}

/// Estimates the dihedral angle between `splitter` and the intrinsic plane
/// of the points `ids`.
///
/// Draws `cfg.angle_samples` points with replacement, forms `v = p − center`
/// and records `π/2 − angle_to_normal(v, normal)`, the angle between `v`
/// and the splitter plane. Zero vectors are skipped. Returns the IOut
/// quantile of the sorted angles, or `π/2` when nothing usable was drawn.
/// Adds one angle evaluation per draw to `metric`.
pub fn estimate_dihedral<R: Rng>(
    splitter: &Splitter,
    data: &Dataset,
    ids: &[usize],
    cfg: &TreeConfig,
    rng: &mut R,
    metric: &mut CountedMetric,
) -> DihedralEstimate {
    if ids.is_empty() || cfg.angle_samples == 0 {
        return DihedralEstimate { angle: FRAC_PI_2, sorted_samples: Vec::new() };
    }
    let center = region_center(data, ids, cfg.center);
    let mut v = vec![0.0; data.dim()];
    let mut samples = Vec::with_capacity(cfg.angle_samples);
    for _ in 0..cfg.angle_samples {
        let p = data.row(ids[rng.random_range(0..ids.len())]);
        v.iter_mut().zip(p.iter().zip(&center)).for_each(|(v, (p, c))| *v = p - c);
        metric.angle_evals += 1;
        if let Ok(a) = angle_to_normal(&v, splitter.normal()) {
            samples.push(FRAC_PI_2 - a);
        }
    }
    samples.sort_by(f64::total_cmp);
    DihedralEstimate { angle: quantile_angle(&samples, cfg.iout), sorted_samples: samples }
}

struct Builder<'a> {
    data: &'a Dataset,
    cfg: &'a TreeConfig,
    split_rng: ChaCha8Rng,
    angle_rng: ChaCha8Rng,
    nodes: Vec<Node>,
    samples: Vec<Vec<f64>>,
    stats: CountedMetric,
}

impl Builder<'_> {
    fn build(&mut self, ids: Vec<usize>, depth: usize) -> usize {
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf { ids: Vec::new() });
        self.samples.push(Vec::new());
        let at_depth_cap = self.cfg.max_depth.is_some_and(|m| depth >= m);
        if ids.len() <= self.cfg.min_size || at_depth_cap {
            self.nodes[slot] = Node::Leaf { ids };
            return slot;
        }
        let (splitter, projections) = match split_points(self.cfg.tree_type, self.data, &ids, &mut self.split_rng) {
            Ok(s) => s,
            Err(_) => {
                self.nodes[slot] = Node::Leaf { ids };
                return slot;
            }
        };
        self.stats.projection_evals += ids.len() as u64;
        let est = estimate_dihedral(&splitter, self.data, &ids, self.cfg, &mut self.angle_rng, &mut self.stats);
        let threshold = splitter.threshold();
        let (mut neg_ids, mut pos_ids) = (Vec::new(), Vec::new());
        for (&i, &p) in ids.iter().zip(&projections) {
            // Same comparison as `margin <= 0` at search time.
            if p - threshold <= 0.0 {
                neg_ids.push(i);
            } else {
                pos_ids.push(i);
            }
        }
        drop(ids);
        if self.cfg.keep_angle_samples {
            self.samples[slot] = est.sorted_samples;
        }
        let neg = self.build(neg_ids, depth + 1);
        let pos = self.build(pos_ids, depth + 1);
        self.nodes[slot] = Node::Internal { splitter, dihedral: est.angle, neg, pos };
        slot
    }
}

impl AngleTree {
    /// Builds a tree over all points of `data`.
    pub fn build(data: &Dataset, cfg: &TreeConfig) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut split_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        split_rng.set_stream(0);
        let mut angle_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        angle_rng.set_stream(1);
        let mut b = Builder {
            data,
            cfg,
            split_rng,
            angle_rng,
            nodes: Vec::new(),
            samples: Vec::new(),
            stats: CountedMetric::new(),
        };
        b.build((0..data.len()).collect(), 0);
        Ok(Self {
            dim: data.dim(),
            n_points: data.len(),
            nodes: b.nodes,
            angle_samples: cfg.keep_angle_samples.then_some(b.samples),
            build_stats: b.stats,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    /// Projection and angle counts spent during construction.
    pub fn build_stats(&self) -> CountedMetric {
        self.build_stats
    }

    pub fn internal_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Internal { .. })).count()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.len() - self.internal_count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &AngleTree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Internal { neg, pos, .. } => 1 + go(t, *neg).max(go(t, *pos)),
            }
        }
        go(self, 0)
    }

    /// All dataset indices stored under node `i`.
    pub fn subtree_ids(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![i];
        while let Some(j) = stack.pop() {
            match &self.nodes[j] {
                Node::Leaf { ids } => out.extend_from_slice(ids),
                Node::Internal { neg, pos, .. } => {
                    stack.push(*pos);
                    stack.push(*neg);
                }
            }
        }
        out
    }

    /// The sorted sample angles kept for node `i`, if samples were kept.
    pub fn angle_samples(&self, i: usize) -> Option<&[f64]> {
        self.angle_samples.as_ref().map(|s| s[i].as_slice())
    }

    /// Re-derives every node's dihedral from its kept samples with a new
    /// IOut value. The skeleton is unchanged.
    pub fn set_iout(&mut self, iout: f64) -> Result<()> {
        if !(0.0..1.0).contains(&iout) {
            return Err(Error::InvalidConfig(format!("iout {iout} outside [0, 1)")));
        }
        let samples = self
            .angle_samples
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("tree was built without kept angle samples".into()))?;
        for (node, s) in self.nodes.iter_mut().zip(samples) {
            if let Node::Internal { dihedral, .. } = node {
                *dihedral = quantile_angle(s, iout);
            }
        }
        Ok(())
    }

    /// Overwrites every node's dihedral with `angle` (clamped to `(0, π/2]`).
    pub fn set_all_dihedrals(&mut self, angle: f64) {
        let a = angle.clamp(MIN_DIHEDRAL, FRAC_PI_2);
        for node in &mut self.nodes {
            if let Node::Internal { dihedral, .. } = node {
                *dihedral = a;
            }
        }
    }

    /// Serializes the tree: `ATRE`, `u32` version, `u32` D, `u32` N,
    /// `u32` node count, then the nodes in pre-order. An internal node is
    /// tag 0, D `f64` normal, `f64` threshold, `f64` dihedral, `u32` neg,
    /// `u32` pos; a leaf is tag 1, `u32` count, then the `u32` indices.
    /// All little-endian.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Vec::new();
        w.write_all(TREE_MAGIC)?;
        w.write_u32::<LittleEndian>(TREE_VERSION)?;
        w.write_u32::<LittleEndian>(to_u32(self.dim)?)?;
        w.write_u32::<LittleEndian>(to_u32(self.n_points)?)?;
        w.write_u32::<LittleEndian>(to_u32(self.nodes.len())?)?;
        for node in &self.nodes {
            match node {
                Node::Internal { splitter, dihedral, neg, pos } => {
                    w.write_u8(TAG_INTERNAL)?;
                    for &x in splitter.normal() {
                        w.write_f64::<LittleEndian>(x)?;
                    }
                    w.write_f64::<LittleEndian>(splitter.threshold())?;
                    w.write_f64::<LittleEndian>(*dihedral)?;
                    w.write_u32::<LittleEndian>(to_u32(*neg)?)?;
                    w.write_u32::<LittleEndian>(to_u32(*pos)?)?;
                }
                Node::Leaf { ids } => {
                    w.write_u8(TAG_LEAF)?;
                    w.write_u32::<LittleEndian>(to_u32(ids.len())?)?;
                    for &i in ids {
                        w.write_u32::<LittleEndian>(to_u32(i)?)?;
                    }
                }
            }
        }
        Ok(w)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let short = |_| Error::Format("truncated tree blob".into());
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(short)?;
        if &magic != TREE_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected \"ATRE\"")));
        }
        let version = r.read_u32::<LittleEndian>().map_err(short)?;
        if version != TREE_VERSION {
            return Err(Error::Format(format!("unsupported tree version {version}")));
        }
        let dim = r.read_u32::<LittleEndian>().map_err(short)? as usize;
        let n_points = r.read_u32::<LittleEndian>().map_err(short)? as usize;
        let count = r.read_u32::<LittleEndian>().map_err(short)? as usize;
        if dim == 0 || n_points == 0 || count == 0 {
            return Err(Error::Format("empty tree header".into()));
        }
        let mut nodes = Vec::with_capacity(count.min(bytes.len()));
        let mut seen = vec![false; n_points];
        for idx in 0..count {
            let tag = r.read_u8().map_err(short)?;
            match tag {
                TAG_INTERNAL => {
                    let mut normal = vec![0.0; dim];
                    r.read_f64_into::<LittleEndian>(&mut normal).map_err(short)?;
                    let threshold = r.read_f64::<LittleEndian>().map_err(short)?;
                    let dihedral = r.read_f64::<LittleEndian>().map_err(short)?;
                    let neg = r.read_u32::<LittleEndian>().map_err(short)? as usize;
                    let pos = r.read_u32::<LittleEndian>().map_err(short)? as usize;
                    if neg <= idx || pos <= idx || neg >= count || pos >= count {
                        return Err(Error::Format(format!("node {idx}: bad child offsets")));
                    }
                    if !(dihedral > 0.0 && dihedral <= FRAC_PI_2) {
                        return Err(Error::Format(format!("node {idx}: dihedral {dihedral} out of range")));
                    }
                    let n = crate::geometry::norm(&normal);
                    if (n - 1.0).abs() > 1e-9 {
                        return Err(Error::Format(format!("node {idx}: normal is not unit length")));
                    }
                    nodes.push(Node::Internal { splitter: Splitter::from_unit(normal, threshold), dihedral, neg, pos });
                }
                TAG_LEAF => {
                    let len = r.read_u32::<LittleEndian>().map_err(short)? as usize;
                    let mut ids = Vec::with_capacity(len.min(n_points));
                    for _ in 0..len {
                        let i = r.read_u32::<LittleEndian>().map_err(short)? as usize;
                        if i >= n_points || seen[i] {
                            return Err(Error::Format(format!("node {idx}: bad or repeated point index {i}")));
                        }
                        seen[i] = true;
                        ids.push(i);
                    }
                    nodes.push(Node::Leaf { ids });
                }
                t => return Err(Error::Format(format!("node {idx}: unknown tag {t}"))),
            }
        }
        if r.position() as usize != bytes.len() {
            return Err(Error::Format("trailing bytes after tree".into()));
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Format("tree does not cover every point".into()));
        }
        Ok(Self { dim, n_points, nodes, angle_samples: None, build_stats: CountedMetric::new() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
