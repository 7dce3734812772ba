//! `angle-bench`: generate datasets, build Angle Trees, run query and
//! LSH-emulation experiments, and tabulate the analysis formulas.
//!
//! Every command writes CSV. Each row repeats the full configuration
//! (including seeds) so a row can be reproduced on its own.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use angle_tree::analysis::GeometryParams;
use angle_tree::data::{self, FileFormat};
use angle_tree::experiment::{self, LshExperiment, QueryExperiment, QuerySummary};
use angle_tree::{AngleTree, CenterStat, Dataset, SearchConfig, TreeConfig, TreeType};
use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "angle-bench", version, about = "Angle Tree experiment driver")]
#[command(after_help = "Exit status: 0 on success, 2 on usage error, 1 on runtime error.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset file.
    #[command(after_help = GEN_COLUMNS)]
    Gen(GenArgs),
    /// Build a tree from a dataset and report build cost.
    #[command(after_help = BUILD_COLUMNS)]
    Build(BuildArgs),
    /// Run k-NN queries sampled from the dataset against a saved tree.
    #[command(after_help = QUERY_COLUMNS)]
    Query(QueryArgs),
    /// Emulate random-hyperplane LSH with a forest of depth-limited rp-trees.
    #[command(after_help = LSH_COLUMNS)]
    LshEmulate(LshArgs),
    /// Tabulate miss probabilities or error-region ratios over a grid.
    #[command(after_help = ANALYZE_COLUMNS)]
    Analyze(AnalyzeArgs),
}

const GEN_COLUMNS: &str = "\
Output (stdout, one CSV row):
  kind, n, d, D, noise, epsilon, alpha_deg, seed, format, path";

const BUILD_COLUMNS: &str = "\
Output (stdout, one CSV row):
  data, tree_type, min_size, max_depth, k_samples, iout, center, seed   configuration
  n_points, dim, nodes, internal_nodes, leaves, depth                   tree shape
  projection_evals      splitter projections computed during the build
  angle_evals           dihedral-angle samples computed during the build
  build_ndc             projection_evals + angle_evals
  wall_time_s           build time in seconds";

const QUERY_COLUMNS: &str = "\
Aggregate output (stdout, one CSV row):
  data, tree, n_queries, knn, theta_deg, force_kd_bound, exclude_self, seed   configuration
  n_points                 dataset size
  recall                   fraction of queries whose k neighbors are all correct
  mean_distance_evals      mean distance computations per query
  median_distance_evals    median distance computations per query
  mean_projection_evals    mean splitter projections per query
  mean_total_ndc           mean of distance + projection evaluations
  pbf_fraction             recall^(1/knn), the partial brute-force fraction
  speedup_over_pbf         pbf_fraction * n_points / mean_total_ndc
  wall_time_s              time for all queries in seconds
  baseline_knn, ndc_ratio_vs_baseline
                           with --baseline-knn: the second k and mean_total_ndc(knn) / mean_total_ndc(baseline)

Per-query output (--out): the configuration columns followed by
  index, point_id, correct (0/1), distance_evals, projection_evals, total_ndc";

const LSH_COLUMNS: &str = "\
Output (--out or stdout, one CSV row):
  data, trees, max_depth, min_size, n_queries, knn, exclude_self, seed   configuration
  p_hat                  mean single-tree probe accuracy
  projected_accuracy     1 - (1 - p_hat)^trees
  measured_accuracy      accuracy of the merged multi-tree probe
  single_tree_mean_ndc   mean distance evaluations of one single-tree probe
  avg_over_all_hashes    trees * single_tree_mean_ndc
  measured_mean_ndc      mean distance evaluations of the merged probe
  mean_leaf_size         mean points per leaf over the forest
  per_tree_accuracy      semicolon-separated accuracy of each tree";

const ANALYZE_COLUMNS: &str = "\
Output (--out or stdout, one CSV row per grid point).
--grid miss:
  d, theta_deg, k, mc_samples, seed   configuration
  segment_ratio        s/S, the fraction of directions within theta of the subspace
  miss_probability     (1 - s/S)^k
  mc_segment_ratio, mc_std_err        with --mc-check: Monte Carlo s/S and its standard error
--grid error:
  D, d, epsilon, alpha_deg, mc_samples, seed   configuration
  ratio                error-region volume ratio v/V
  mc_ratio, mc_std_err                with --mc-check: Monte Carlo v/V and its standard error";

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Format {
    Csv,
    Bin,
}

impl From<Format> for FileFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => FileFormat::Csv,
            Format::Bin => FileFormat::Bin,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum Kind {
    Sphere,
    Flat,
    Sin3d,
    Hypercylinder,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TreeKind {
    Kd,
    Rp,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Center {
    Mean,
    Median,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Grid {
    Miss,
    Error,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    /// Number of points.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    /// Intrinsic dimension (sin3d: 2).
    #[arg(long, value_name = "d")]
    d: Option<usize>,
    /// Ambient dimension (sin3d: 3).
    #[arg(long = "D", value_name = "D")]
    ambient: Option<usize>,
    /// Gaussian noise sigma per ambient coordinate (sphere, flat).
    #[arg(long)]
    noise: Option<f64>,
    /// Off-plane variance fraction (hypercylinder).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Dihedral angle in degrees (hypercylinder, recorded only).
    #[arg(long)]
    alpha_deg: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset file.
    #[arg(long)]
    out: PathBuf,
    /// Dataset file format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args, Debug)]
struct BuildArgs {
    /// Input dataset file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "rp")]
    tree: TreeKind,
    /// Nodes with fewer points become leaves.
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    min_size: u64,
    /// Maximum depth; unlimited when omitted.
    #[arg(long)]
    max_depth: Option<usize>,
    /// Angle samples per internal node; 0 disables the angle bound.
    #[arg(long, default_value_t = 2000)]
    k_samples: usize,
    /// Outlier fraction discarded when picking the dihedral quantile.
    #[arg(long, default_value_t = 0.1)]
    iout: f64,
    #[arg(long, value_enum, default_value = "mean")]
    center: Center,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output tree file.
    #[arg(long)]
    out: PathBuf,
    /// Input dataset format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args, Debug)]
struct QueryArgs {
    /// Tree file written by `build`.
    #[arg(long)]
    tree: PathBuf,
    /// Dataset the tree was built from.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    n_queries: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    knn: u64,
    /// Error angle added to each node's dihedral, in degrees.
    #[arg(long, default_value_t = 0.0)]
    theta_deg: f64,
    /// Prune with the plain hyperplane distance.
    #[arg(long)]
    force_kd_bound: bool,
    /// Do not return the query point itself.
    #[arg(long)]
    exclude_self: bool,
    /// Also run with this k and report the NDC ratio.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    baseline_knn: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-query CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args, Debug)]
struct LshArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    trees: u64,
    #[arg(long, default_value_t = 10)]
    max_depth: usize,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    min_size: u64,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    n_queries: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    knn: u64,
    /// Allow the query point to match itself.
    #[arg(long)]
    include_self: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long, value_enum, default_value = "miss")]
    grid: Grid,
    /// Intrinsic dimensions.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10,12,15,20,25,30")]
    dims: Vec<usize>,
    /// Error angles in degrees (miss grid).
    #[arg(long, value_delimiter = ',', default_value = "30")]
    thetas_deg: Vec<f64>,
    /// Number of sampled vectors (miss grid).
    #[arg(long, default_value_t = 2000)]
    k: u64,
    /// Ambient dimensions (error grid).
    #[arg(long, value_delimiter = ',', default_value = "10,50,100")]
    ambients: Vec<usize>,
    /// Off-plane variance fractions (error grid).
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.1")]
    epsilons: Vec<f64>,
    /// Dihedral angles in degrees (error grid).
    #[arg(long, value_delimiter = ',', default_value = "15,30,45,60,75,90")]
    alphas_deg: Vec<f64>,
    /// Add Monte Carlo estimates and their standard errors.
    #[arg(long)]
    mc_check: bool,
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    mc_samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Build(a) => build(a),
        Command::Query(a) => query(a),
        Command::LshEmulate(a) => lsh_emulate(a),
        Command::Analyze(a) => analyze(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn usage_error(msg: String) -> ! {
    Cli::command().error(ErrorKind::ArgumentConflict, msg).exit()
}

fn format_for(path: &Path, format: Option<Format>) -> FileFormat {
    format.map(Into::into).unwrap_or_else(|| FileFormat::from_path(path))
}

fn load(path: &Path, format: Option<Format>) -> Result<Dataset> {
    data::load_dataset(path, format_for(path, format)).with_context(|| format!("loading {}", path.display()))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_csv(out: Option<&Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn gen(a: GenArgs) -> Result<()> {
    let n = usize::try_from(a.n)?;
    if a.kind != Kind::Hypercylinder && (a.epsilon.is_some() || a.alpha_deg.is_some()) {
        usage_error("--epsilon and --alpha-deg apply only to --kind hypercylinder".into());
    }
    if matches!(a.kind, Kind::Sin3d | Kind::Hypercylinder) && a.noise.is_some() {
        usage_error("--noise applies only to --kind sphere and --kind flat".into());
    }
    let (d, ambient) = match a.kind {
        Kind::Sin3d => {
            if a.d.is_some_and(|d| d != 2) || a.ambient.is_some_and(|x| x != 3) {
                usage_error("sin3d is a 2-dimensional surface in 3 dimensions".into());
            }
            (2, 3)
        }
        _ => match (a.d, a.ambient) {
            (Some(d), Some(ambient)) => (d, ambient),
            _ => usage_error(format!("--kind {:?} requires --d and --D", a.kind).to_lowercase()),
        },
    };
    let noise = a.noise.unwrap_or(0.0);
    let epsilon = a.epsilon.unwrap_or(0.01);
    let alpha_deg = a.alpha_deg.unwrap_or(90.0);
    let dataset = match a.kind {
        Kind::Sphere => data::gen_sphere(n, d, ambient, noise, a.seed)?,
        Kind::Flat => data::gen_affine_flat(n, d, ambient, noise, a.seed)?,
        Kind::Sin3d => data::gen_sin3d(n, a.seed)?,
        Kind::Hypercylinder => {
            let params = GeometryParams::new(ambient, d, epsilon, alpha_deg.to_radians(), 0.5)?;
            data::gen_hypercylinder(&params, n, a.seed)?
        }
    };
    let format = format_for(&a.out, a.format);
    data::save_dataset(&dataset, &a.out, format).with_context(|| format!("writing {}", a.out.display()))?;
    let kind = format!("{:?}", a.kind).to_lowercase();
    let fmt = if format == FileFormat::Csv { "csv" } else { "bin" };
    let hc = a.kind == Kind::Hypercylinder;
    write_csv(
        None,
        &["kind", "n", "d", "D", "noise", "epsilon", "alpha_deg", "seed", "format", "path"],
        &[vec![
            kind,
            n.to_string(),
            d.to_string(),
            ambient.to_string(),
            noise.to_string(),
            if hc { epsilon.to_string() } else { String::new() },
            if hc { alpha_deg.to_string() } else { String::new() },
            a.seed.to_string(),
            fmt.into(),
            a.out.display().to_string(),
        ]],
    )
}

fn build(a: BuildArgs) -> Result<()> {
    let dataset = load(&a.data, a.format)?;
    let cfg = TreeConfig {
        tree_type: match a.tree {
            TreeKind::Kd => TreeType::Kd,
            TreeKind::Rp => TreeType::Rp,
        },
        min_size: usize::try_from(a.min_size)?,
        angle_samples: a.k_samples,
        iout: a.iout,
        rng_seed: a.seed,
        max_depth: a.max_depth,
        center: match a.center {
            Center::Mean => CenterStat::Mean,
            Center::Median => CenterStat::Median,
        },
        ..Default::default()
    };
    let (tree, report) = experiment::build_with_report(&dataset, &cfg)?;
    tree.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    write_csv(
        None,
        &[
            "data",
            "tree_type",
            "min_size",
            "max_depth",
            "k_samples",
            "iout",
            "center",
            "seed",
            "n_points",
            "dim",
            "nodes",
            "internal_nodes",
            "leaves",
            "depth",
            "projection_evals",
            "angle_evals",
            "build_ndc",
            "wall_time_s",
        ],
        &[vec![
            a.data.display().to_string(),
            format!("{:?}", a.tree).to_lowercase(),
            a.min_size.to_string(),
            opt(a.max_depth),
            a.k_samples.to_string(),
            a.iout.to_string(),
            format!("{:?}", a.center).to_lowercase(),
            a.seed.to_string(),
            report.n_points.to_string(),
            report.dim.to_string(),
            report.nodes.to_string(),
            report.internal_nodes.to_string(),
            report.leaves.to_string(),
            report.depth.to_string(),
            report.projection_evals.to_string(),
            report.angle_evals.to_string(),
            report.build_ndc.to_string(),
            report.wall_time_s.to_string(),
        ]],
    )
}

fn query(a: QueryArgs) -> Result<()> {
    let dataset = load(&a.data, a.format)?;
    let tree = AngleTree::load(&a.tree).with_context(|| format!("loading {}", a.tree.display()))?;
    let experiment_for = |knn: u64| -> Result<QueryExperiment> {
        Ok(QueryExperiment {
            n_queries: usize::try_from(a.n_queries)?,
            search: SearchConfig {
                k_neighbors: usize::try_from(knn)?,
                theta: a.theta_deg.to_radians(),
                force_kd_bound: a.force_kd_bound,
            },
            exclude_self: a.exclude_self,
            seed: a.seed,
        })
    };
    let report = experiment::run_queries(&tree, &dataset, &experiment_for(a.knn)?)?;
    let baseline: Option<(u64, QuerySummary)> = match a.baseline_knn {
        Some(k) => Some((k, experiment::run_queries(&tree, &dataset, &experiment_for(k)?)?.summary)),
        None => None,
    };

    let config_header = ["data", "tree", "n_queries", "knn", "theta_deg", "force_kd_bound", "exclude_self", "seed"];
    let config = vec![
        a.data.display().to_string(),
        a.tree.display().to_string(),
        a.n_queries.to_string(),
        a.knn.to_string(),
        a.theta_deg.to_string(),
        a.force_kd_bound.to_string(),
        a.exclude_self.to_string(),
        a.seed.to_string(),
    ];

    if let Some(out) = &a.out {
        let mut header = config_header.to_vec();
        header.extend(["index", "point_id", "correct", "distance_evals", "projection_evals", "total_ndc"]);
        let rows: Vec<Vec<String>> = report
            .rows
            .iter()
            .map(|r| {
                let mut row = config.clone();
                row.extend([
                    r.index.to_string(),
                    r.point_id.to_string(),
                    u8::from(r.correct).to_string(),
                    r.distance_evals.to_string(),
                    r.projection_evals.to_string(),
                    r.total_ndc().to_string(),
                ]);
                row
            })
            .collect();
        write_csv(Some(out), &header, &rows)?;
    }

    let s = &report.summary;
    let mut header = config_header.to_vec();
    header.extend([
        "n_points",
        "recall",
        "mean_distance_evals",
        "median_distance_evals",
        "mean_projection_evals",
        "mean_total_ndc",
        "pbf_fraction",
        "speedup_over_pbf",
        "wall_time_s",
        "baseline_knn",
        "ndc_ratio_vs_baseline",
    ]);
    let mut row = config;
    row.extend([
        s.n_points.to_string(),
        s.recall.to_string(),
        s.mean_distance_evals.to_string(),
        s.median_distance_evals.to_string(),
        s.mean_projection_evals.to_string(),
        s.mean_total_ndc.to_string(),
        s.pbf_fraction.to_string(),
        s.speedup_over_pbf.to_string(),
        s.wall_time_s.to_string(),
        opt(baseline.as_ref().map(|(k, _)| *k)),
        opt(baseline.as_ref().map(|(_, b)| s.mean_total_ndc / b.mean_total_ndc)),
    ]);
    write_csv(None, &header, &[row])
}

fn lsh_emulate(a: LshArgs) -> Result<()> {
    let dataset = load(&a.data, a.format)?;
    let exp = LshExperiment {
        n_trees: usize::try_from(a.trees)?,
        max_depth: Some(a.max_depth),
        min_size: usize::try_from(a.min_size)?,
        n_queries: usize::try_from(a.n_queries)?,
        k_neighbors: usize::try_from(a.knn)?,
        exclude_self: !a.include_self,
        seed: a.seed,
    };
    let r = experiment::lsh_emulate(&dataset, &exp)?;
    let per_tree: Vec<String> = r.per_tree_accuracy.iter().map(f64::to_string).collect();
    write_csv(
        a.out.as_deref(),
        &[
            "data",
            "trees",
            "max_depth",
            "min_size",
            "n_queries",
            "knn",
            "exclude_self",
            "seed",
            "p_hat",
            "projected_accuracy",
            "measured_accuracy",
            "single_tree_mean_ndc",
            "avg_over_all_hashes",
            "measured_mean_ndc",
            "mean_leaf_size",
            "per_tree_accuracy",
        ],
        &[vec![
            a.data.display().to_string(),
            a.trees.to_string(),
            a.max_depth.to_string(),
            a.min_size.to_string(),
            a.n_queries.to_string(),
            a.knn.to_string(),
            exp.exclude_self.to_string(),
            a.seed.to_string(),
            r.p_hat.to_string(),
            r.projected_accuracy.to_string(),
            r.measured_accuracy.to_string(),
            r.single_tree_mean_ndc.to_string(),
            r.avg_over_all_hashes.to_string(),
            r.measured_mean_ndc.to_string(),
            r.mean_leaf_size.to_string(),
            per_tree.join(";"),
        ]],
    )
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let mc = a.mc_check.then_some((a.mc_samples, a.seed));
    let mc_samples = if a.mc_check { a.mc_samples.to_string() } else { String::new() };
    match a.grid {
        Grid::Miss => {
            let rows = experiment::miss_grid(&a.dims, &a.thetas_deg, a.k, mc)?;
            let mut header = vec!["d", "theta_deg", "k", "mc_samples", "seed", "segment_ratio", "miss_probability"];
            if a.mc_check {
                header.extend(["mc_segment_ratio", "mc_std_err"]);
            }
            let rows: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    let mut row = vec![
                        r.d.to_string(),
                        r.theta_deg.to_string(),
                        r.k.to_string(),
                        mc_samples.clone(),
                        a.seed.to_string(),
                        r.segment_ratio.to_string(),
                        r.miss_probability.to_string(),
                    ];
                    if let Some((v, se)) = r.mc {
                        row.extend([v.to_string(), se.to_string()]);
                    }
                    row
                })
                .collect();
            write_csv(a.out.as_deref(), &header, &rows)
        }
        Grid::Error => {
            let rows = experiment::error_region_grid(&a.dims, &a.ambients, &a.epsilons, &a.alphas_deg, mc)?;
            let mut header = vec!["D", "d", "epsilon", "alpha_deg", "mc_samples", "seed", "ratio"];
            if a.mc_check {
                header.extend(["mc_ratio", "mc_std_err"]);
            }
            let rows: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    let p = &r.params;
                    let mut row = vec![
                        p.ambient_dim.to_string(),
                        p.intrinsic_dim.to_string(),
                        p.epsilon.to_string(),
                        ((p.alpha.to_degrees() * 1e9).round() / 1e9).to_string(),
                        mc_samples.clone(),
                        a.seed.to_string(),
                        r.ratio.to_string(),
                    ];
                    if let Some((v, se)) = r.mc {
                        row.extend([v.to_string(), se.to_string()]);
                    }
                    row
                })
                .collect();
            write_csv(a.out.as_deref(), &header, &rows)
        }
    }
}
