//! Nearest-neighbor search with Angle Trees.
//!
//! An Angle Tree is a kd-tree or random-projection tree whose internal
//! nodes also carry an estimate of the dihedral angle `α` between the
//! node's splitting hyperplane and the low-dimensional plane the node's
//! points lie near. When the data has low intrinsic dimension, the
//! distance from a query to the far cell *along the data* is about
//! `|margin| / sin α`, which for high ambient dimension is much larger than
//! the perpendicular distance `|margin|` used by a plain kd-tree. Search
//! prunes with that larger bound.
//!
//! ```
//! use angle_tree::{data, AngleTree, SearchConfig, TreeConfig};
//!
//! let points = data::gen_sphere(2_000, 4, 30, 0.0, 7).unwrap();
//! let tree = AngleTree::build(&points, &TreeConfig::default()).unwrap();
//! let hit = angle_tree::knn_search(&tree, &points, points.row(3), &SearchConfig::knn(1)).unwrap();
//! assert_eq!(hit.distances[0], 0.0);
//! ```

pub mod analysis;
pub mod data;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod quadrature;
pub mod search;
pub mod tree;

pub use data::{Dataset, FileFormat};
pub use error::{Error, Result};
pub use geometry::{CountedMetric, Splitter};
pub use search::{
    brute_force, knn_search, knn_search_traced, multi_tree_probe, near_neighbor_probe, pbf_equivalent_fraction, Query,
    SearchConfig, SearchResult, SearchTrace,
};
pub use tree::{AngleTree, CenterStat, Node, TreeConfig, TreeType};
