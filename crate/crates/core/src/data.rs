//! Datasets: the indexed point matrix, synthetic generators, and file I/O.
//!
//! Two on-disk formats are supported:
//!
//! * CSV: one point per line, comma-separated decimal reals, with an
//!   optional first line `# D=<int>`.
//! * Binary: little-endian, magic `ATDS`, `u32` version (1), `u32` N,
//!   `u32` D, then N·D `f64` values in row-major order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{dot, norm};

const DATASET_MAGIC: &[u8; 4] = b"ATDS";
const DATASET_VERSION: u32 = 1;

/// Immutable N×D matrix of finite coordinates, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    points: Vec<f64>,
    len: usize,
    dim: usize,
    name: String,
}

impl Dataset {
    pub fn new(points: Vec<f64>, dim: usize, name: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("dimension must be at least 1".into()));
        }
        if points.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if !points.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: points.len() % dim });
        }
        if let Some(i) = points.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { row: i / dim, column: i % dim });
        }
        Ok(Self { len: points.len() / dim, points, dim, name: name.into() })
    }

    pub fn from_rows(rows: &[Vec<f64>], name: impl Into<String>) -> Result<Self> {
        let dim = rows.first().ok_or(Error::EmptyDataset)?.len();
        let mut points = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: row.len() });
            }
            points.extend_from_slice(row);
        }
        Self::new(points, dim, name)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.points
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileFormat {
    Csv,
    Bin,
}

impl FileFormat {
    /// Guesses the format from a file extension; anything but `.csv` is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FileFormat::Csv,
            _ => FileFormat::Bin,
        }
    }
}

impl FromStr for FileFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(FileFormat::Csv),
            "bin" => Ok(FileFormat::Bin),
            other => Err(Error::InvalidConfig(format!("unknown format {other:?}"))),
        }
    }
}

pub fn save_dataset(data: &Dataset, path: &Path, format: FileFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        FileFormat::Csv => write_csv(data, &mut w)?,
        FileFormat::Bin => write_bin(data, &mut w)?,
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path, format: FileFormat) -> Result<Dataset> {
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset").to_string();
    let r = BufReader::new(File::open(path)?);
    let mut data = match format {
        FileFormat::Csv => read_csv(r)?,
        FileFormat::Bin => read_bin(r)?,
    };
    data.name = name;
    Ok(data)
}

pub fn write_csv<W: Write>(data: &Dataset, w: &mut W) -> Result<()> {
    writeln!(w, "# D={}", data.dim())?;
    for row in data.rows() {
        let mut first = true;
        for x in row {
            if !first {
                w.write_all(b",")?;
            }
            first = false;
            // `{:?}` prints the shortest representation that round-trips.
            write!(w, "{x:?}")?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(r: R) -> Result<Dataset> {
    let mut dim: Option<usize> = None;
    let mut points = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            if line_no != 1 {
                return Err(Error::Parse { line: line_no, message: "header must be the first line".into() });
            }
            let value = header
                .trim()
                .strip_prefix("D=")
                .ok_or_else(|| Error::Parse { line: line_no, message: format!("malformed header {line:?}") })?;
            let d: usize = value
                .trim()
                .parse()
                .map_err(|_| Error::Parse { line: line_no, message: format!("malformed header {line:?}") })?;
            if d == 0 {
                return Err(Error::Parse { line: line_no, message: "header declares D=0".into() });
            }
            dim = Some(d);
            continue;
        }
        let mut count = 0;
        for (col, field) in line.split(',').enumerate() {
            let x: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("column {}: cannot parse {:?} as a number", col + 1, field.trim()),
            })?;
            if !x.is_finite() {
                return Err(Error::Parse { line: line_no, message: format!("column {}: non-finite value", col + 1) });
            }
            points.push(x);
            count += 1;
        }
        match dim {
            None => dim = Some(count),
            Some(d) if d != count => {
                return Err(Error::Parse { line: line_no, message: format!("expected {d} columns, found {count}") })
            }
            _ => {}
        }
    }
    match dim {
        Some(d) if !points.is_empty() => Dataset::new(points, d, "csv"),
        _ => Err(Error::EmptyDataset),
    }
}

pub fn write_bin<W: Write>(data: &Dataset, w: &mut W) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    w.write_u32::<LittleEndian>(DATASET_VERSION)?;
    w.write_u32::<LittleEndian>(to_u32(data.len())?)?;
    w.write_u32::<LittleEndian>(to_u32(data.dim())?)?;
    for &x in data.as_slice() {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

pub fn read_bin<R: Read>(mut r: R) -> Result<Dataset> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("file too short for header".into()))?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"ATDS\"")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n = r.read_u32::<LittleEndian>()? as usize;
    let d = r.read_u32::<LittleEndian>()? as usize;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if d == 0 {
        return Err(Error::Format("header declares D=0".into()));
    }
    let mut points = vec![0.0; n * d];
    r.read_f64_into::<LittleEndian>(&mut points)
        .map_err(|_| Error::Format(format!("truncated payload, expected {n}x{d} values")))?;
    if let Some(i) = points.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { row: i / d, column: i % d });
    }
    Dataset::new(points, d, "bin")
}

pub(crate) fn to_u32(x: usize) -> Result<u32> {
    u32::try_from(x).map_err(|_| Error::Format(format!("{x} does not fit in u32")))
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

pub(crate) fn gaussian_vec<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Uniform point in the `dim`-ball of the given radius (Gaussian direction,
/// radius proportional to `U^(1/dim)`).
pub fn sample_in_ball<R: Rng>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    if dim == 0 {
        return Vec::new();
    }
    let mut g = gaussian_vec(rng, dim);
    let n = norm(&g);
    if n == 0.0 {
        return vec![0.0; dim];
    }
    let u: f64 = rng.random();
    let r = radius * u.powf(1.0 / dim as f64);
    g.iter_mut().for_each(|x| *x *= r / n);
    g
}

/// `cols` orthonormal vectors in ℝ^`dim`, by Gram-Schmidt on Gaussian draws.
pub fn random_orthonormal<R: Rng>(rng: &mut R, dim: usize, cols: usize) -> Vec<Vec<f64>> {
    assert!(cols <= dim, "cannot fit {cols} orthonormal vectors in dimension {dim}");
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while basis.len() < cols {
        let mut v = gaussian_vec(rng, dim);
        // Two passes keep the columns orthogonal to ~1e-15.
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let n = norm(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    basis
}

/// Maps intrinsic coordinates through `basis` (list of ambient columns).
fn embed(coords: &[f64], basis: &[Vec<f64>], ambient: usize, out: &mut Vec<f64>) {
    let start = out.len();
    out.resize(start + ambient, 0.0);
    let row = &mut out[start..];
    for (c, col) in coords.iter().zip(basis) {
        for (r, b) in row.iter_mut().zip(col) {
            *r += c * b;
        }
    }
}

fn add_noise<R: Rng>(points: &mut [f64], sigma: f64, rng: &mut R) {
    if sigma > 0.0 {
        for x in points.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *x += sigma * g;
        }
    }
}

fn check_dims(n: usize, intrinsic: usize, ambient: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if intrinsic == 0 || ambient == 0 {
        return Err(Error::InvalidConfig("dimensions must be positive".into()));
    }
    if intrinsic > ambient {
        return Err(Error::InvalidConfig(format!(
            "intrinsic dimension {intrinsic} exceeds ambient dimension {ambient}"
        )));
    }
    Ok(())
}

/// `n` points uniform on the unit `d`-sphere in ℝ^(d+1), embedded in ℝ^`ambient`
/// by a random orthonormal map, plus isotropic Gaussian noise.
pub fn gen_sphere(n: usize, d: usize, ambient: usize, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    check_dims(n, d + 1, ambient)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = random_orthonormal(&mut rng, ambient, d + 1);
    let mut points = Vec::with_capacity(n * ambient);
    for _ in 0..n {
        let mut g = gaussian_vec(&mut rng, d + 1);
        let mut len = norm(&g);
        while len == 0.0 {
            g = gaussian_vec(&mut rng, d + 1);
            len = norm(&g);
        }
        g.iter_mut().for_each(|x| *x /= len);
        embed(&g, &basis, ambient, &mut points);
    }
    add_noise(&mut points, noise_sigma, &mut rng);
    Dataset::new(points, ambient, format!("sphere{d}in{ambient}"))
}

/// The affine `d`-flat a [`gen_affine_flat`] dataset lies on.
#[derive(Clone, Debug)]
pub struct AffineFlat {
    /// Orthonormal directions spanning the flat.
    pub basis: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

impl AffineFlat {
    /// Residual distance from `p` to the flat.
    pub fn distance_to(&self, p: &[f64]) -> f64 {
        let mut r: Vec<f64> = p.iter().zip(&self.offset).map(|(x, o)| x - o).collect();
        for b in &self.basis {
            let c = dot(&r, b);
            r.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        norm(&r)
    }

    /// Dihedral angle between the flat and a hyperplane with the given unit
    /// normal: `π/2` minus the angle between the normal and its projection
    /// onto the flat's direction space.
    pub fn dihedral_with(&self, unit_normal: &[f64]) -> f64 {
        let projected_sq: f64 = self.basis.iter().map(|b| dot(unit_normal, b).powi(2)).sum();
        projected_sq.sqrt().min(1.0).asin()
    }
}

/// Uniform points in `[-1, 1]^d` mapped onto a random affine `d`-flat in
/// ℝ^`ambient`, plus optional Gaussian noise.
pub fn gen_affine_flat(n: usize, d: usize, ambient: usize, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    gen_affine_flat_with_frame(n, d, ambient, noise_sigma, seed).map(|(data, _)| data)
}

pub fn gen_affine_flat_with_frame(
    n: usize,
    d: usize,
    ambient: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<(Dataset, AffineFlat)> {
    check_dims(n, d, ambient)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = random_orthonormal(&mut rng, ambient, d);
    let offset = gaussian_vec(&mut rng, ambient);
    let mut points = Vec::with_capacity(n * ambient);
    for _ in 0..n {
        let coords: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let start = points.len();
        embed(&coords, &basis, ambient, &mut points);
        points[start..].iter_mut().zip(&offset).for_each(|(x, o)| *x += o);
    }
    add_noise(&mut points, noise_sigma, &mut rng);
    let data = Dataset::new(points, ambient, format!("flat{d}in{ambient}"))?;
    Ok((data, AffineFlat { basis, offset }))
}

/// Surface `(x, y, sin x + cos y)` with `(x, y)` uniform on `[0, 2π]²`.
///
/// A reconstruction of the rp-tree `sin3D` example data; the original
/// file is not available.
pub fn gen_sin3d(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = std::f64::consts::TAU;
    let mut points = Vec::with_capacity(n * 3);
    for _ in 0..n {
        let x = rng.random_range(0.0..=tau);
        let y = rng.random_range(0.0..=tau);
        points.extend_from_slice(&[x, y, x.sin() + y.cos()]);
    }
    Dataset::new(points, 3, "sin3d")
}

/// Points `(u, w)` uniform in the hypercylinder: `u` in the `d`-ball of
/// radius `a`, `w` in the `(D−d)`-ball of radius `b`, with `a`, `b` taken
/// from `params`. The first `d` coordinates are the intrinsic plane.
pub fn gen_hypercylinder(params: &crate::analysis::GeometryParams, n: usize, seed: u64) -> Result<Dataset> {
    let d = params.intrinsic_dim;
    let ambient = params.ambient_dim;
    check_dims(n, d, ambient)?;
    if d == ambient {
        return Err(Error::InvalidConfig("hypercylinder needs d < D".into()));
    }
    let (a, b) = (params.radius_ip(), params.radius_noise());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n * ambient);
    for _ in 0..n {
        points.extend(sample_in_ball(&mut rng, d, a));
        if b > 0.0 {
            points.extend(sample_in_ball(&mut rng, ambient - d, b));
        } else {
            points.extend(std::iter::repeat_n(0.0, ambient - d));
        }
    }
    Dataset::new(points, ambient, format!("cylinder{d}in{ambient}"))
}
