use std::path::Path;
use std::process::{Command, Output};

use angle_tree::data::{load_dataset, FileFormat};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_angle-bench")).args(args).output().expect("spawn angle-bench")
}

fn ok(args: &[&str]) -> String {
    let out = bench(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Parses a single-row CSV report into (header, values).
fn single_row(stdout: &str) -> Vec<(String, String)> {
    let mut r = csv::Reader::from_reader(stdout.as_bytes());
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 1);
    header.into_iter().zip(rows[0].iter().map(String::from)).collect()
}

fn field(row: &[(String, String)], name: &str) -> String {
    row.iter().find(|(k, _)| k == name).unwrap_or_else(|| panic!("no column {name}")).1.clone()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn missing_out_is_usage_error() {
    let out = bench(&["gen", "--kind", "flat", "--d", "3", "--D", "50", "--n", "10000"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_queries_is_usage_error() {
    let out = bench(&["query", "--tree", "t.bin", "--data", "d.bin", "--n-queries", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn conflicting_gen_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("x.bin");
    let out = bench(&["gen", "--kind", "sin3d", "--D", "5", "--n", "10", "--out", p(&f)]);
    assert_eq!(out.status.code(), Some(2));
    let out =
        bench(&["gen", "--kind", "sphere", "--d", "2", "--D", "5", "--epsilon", "0.1", "--n", "10", "--out", p(&f)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bench(&["build", "--data", p(&dir.path().join("absent.bin")), "--out", p(&dir.path().join("t"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gen_sphere_header_has_n_and_d() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("s15.bin");
    ok(&["gen", "--kind", "sphere", "--d", "14", "--D", "15", "--n", "100000", "--seed", "1", "--out", p(&f)]);
    let bytes = std::fs::read(&f).unwrap();
    assert_eq!(&bytes[..4], b"ATDS");
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let data = load_dataset(&f, FileFormat::Bin).unwrap();
    assert_eq!((data.len(), data.dim()), (100_000, 15));
    assert_eq!((n, d), (100_000, 15));
}

#[test]
fn gen_flat_csv_is_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("flat.csv");
    let row = single_row(&ok(&["gen", "--kind", "flat", "--d", "3", "--D", "50", "--n", "10000", "--out", p(&f)]));
    assert_eq!(field(&row, "format"), "csv");
    let data = load_dataset(&f, FileFormat::Csv).unwrap();
    assert_eq!((data.len(), data.dim()), (10_000, 50));
}

#[test]
fn builds_are_byte_identical_and_angle_count_scales_with_k() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("s.bin");
    ok(&["gen", "--kind", "sphere", "--d", "6", "--D", "30", "--n", "5000", "--seed", "3", "--out", p(&data)]);
    let t1 = dir.path().join("a.tree");
    let t2 = dir.path().join("b.tree");
    let t3 = dir.path().join("c.tree");
    let flags = ["--tree", "rp", "--min-size", "40", "--iout", "0.1", "--seed", "9"];
    let mut args = vec!["build", "--data", p(&data), "--k-samples", "2000", "--out", p(&t1)];
    args.extend(flags);
    let r2000 = single_row(&ok(&args));
    args[6] = p(&t2);
    ok(&args);
    assert_eq!(std::fs::read(&t1).unwrap(), std::fs::read(&t2).unwrap());

    args[4] = "1000";
    args[6] = p(&t3);
    let r1000 = single_row(&ok(&args));
    let a2000: f64 = field(&r2000, "angle_evals").parse().unwrap();
    let a1000: f64 = field(&r1000, "angle_evals").parse().unwrap();
    assert!((a2000 / a1000 - 2.0).abs() <= 0.02, "{a2000} / {a1000}");
    assert_eq!(field(&r2000, "seed"), "9");
    assert_eq!(field(&r2000, "k_samples"), "2000");
}

#[test]
fn query_reports_and_kd_bound_on_sin3d() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sin.bin");
    let tree = dir.path().join("sin.tree");
    let per_query = dir.path().join("q.csv");
    ok(&["gen", "--kind", "sin3d", "--n", "20000", "--seed", "2", "--out", p(&data)]);
    ok(&["build", "--data", p(&data), "--seed", "2", "--out", p(&tree)]);
    let base = ["query", "--tree", p(&tree), "--data", p(&data), "--exclude-self", "--seed", "4"];

    let mut args = base.to_vec();
    args.extend(["--out", p(&per_query)]);
    let angle = single_row(&ok(&args));
    let mut args = base.to_vec();
    args.push("--force-kd-bound");
    let kd = single_row(&ok(&args));

    assert_eq!(field(&angle, "recall"), "1");
    assert_eq!(field(&kd, "recall"), "1");
    let ndc_angle: f64 = field(&angle, "mean_total_ndc").parse().unwrap();
    let ndc_kd: f64 = field(&kd, "mean_total_ndc").parse().unwrap();
    assert!(ndc_angle <= ndc_kd && ndc_angle >= 0.5 * ndc_kd, "{ndc_angle} vs {ndc_kd}");

    // Aggregate recall is the mean of per-query indicators.
    let mut r = csv::Reader::from_path(&per_query).unwrap();
    let correct: Vec<f64> = r
        .deserialize::<std::collections::HashMap<String, String>>()
        .map(|row| row.unwrap()["correct"].parse().unwrap())
        .collect();
    assert_eq!(correct.len(), 200);
    let recall: f64 = field(&angle, "recall").parse().unwrap();
    assert_eq!(correct.iter().sum::<f64>() / 200.0, recall);

    let mut args = base.to_vec();
    args.extend(["--knn", "2", "--baseline-knn", "1"]);
    let two = single_row(&ok(&args));
    let ratio: f64 = field(&two, "ndc_ratio_vs_baseline").parse().unwrap();
    assert!(ratio >= 1.0, "{ratio}");
}

#[test]
fn lsh_single_tree_matches_probe_and_hash_total() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("s.bin");
    ok(&["gen", "--kind", "sphere", "--d", "6", "--D", "7", "--n", "8000", "--seed", "5", "--out", p(&data)]);
    let one = single_row(&ok(&["lsh-emulate", "--data", p(&data), "--trees", "1", "--max-depth", "7", "--seed", "5"]));
    assert_eq!(field(&one, "p_hat"), field(&one, "measured_accuracy"));
    let three =
        single_row(&ok(&["lsh-emulate", "--data", p(&data), "--trees", "3", "--max-depth", "7", "--seed", "5"]));
    let single: f64 = field(&three, "single_tree_mean_ndc").parse().unwrap();
    let all: f64 = field(&three, "avg_over_all_hashes").parse().unwrap();
    assert!((all - 3.0 * single).abs() < 1e-9);
    let projected: f64 = field(&three, "projected_accuracy").parse().unwrap();
    let measured: f64 = field(&three, "measured_accuracy").parse().unwrap();
    assert!((projected - measured).abs() <= 0.05, "{projected} vs {measured}");
}

#[test]
fn analyze_right_angle_row_is_zero_and_mc_adds_columns() {
    let out = ok(&[
        "analyze",
        "--grid",
        "error",
        "--dims",
        "2",
        "--ambients",
        "10",
        "--epsilons",
        "0.05",
        "--alphas-deg",
        "90",
        "--mc-check",
        "--mc-samples",
        "1000",
    ]);
    let row = single_row(&out);
    assert_eq!(field(&row, "alpha_deg"), "90");
    assert_eq!(field(&row, "ratio"), "0");
    assert!(row.iter().any(|(k, _)| k == "mc_std_err"));

    let out = ok(&["analyze", "--dims", "30", "--thetas-deg", "30"]);
    let row = single_row(&out);
    let miss: f64 = field(&row, "miss_probability").parse().unwrap();
    assert!(miss > 0.99);
    assert!(!row.iter().any(|(k, _)| k == "mc_std_err"));
}

#[test]
fn help_documents_columns() {
    let out = ok(&["query", "--help"]);
    for col in ["speedup_over_pbf", "pbf_fraction", "total_ndc", "recall"] {
        assert!(out.contains(col), "{col}");
    }
}
