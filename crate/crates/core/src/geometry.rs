//! Dense vector primitives with instrumented operation counting.
//!
//! Every distance evaluation and every projection onto a splitter normal
//! goes through a [`CountedMetric`], which is how search and build cost is
//! measured (number of distance calculations, NDC). Vectors are plain
//! `&[f64]` slices.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

/// Operation counters owned by a single query or build.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CountedMetric {
    pub distance_evals: u64,
    pub projection_evals: u64,
    /// Angle computations made while estimating dihedral angles (build only).
    pub angle_evals: u64,
}

impl CountedMetric {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    /// All counted O(D) operations: distances, projections and angles.
    pub fn total(&self) -> u64 {
        self.distance_evals + self.projection_evals + self.angle_evals
    }

    pub fn merge(&mut self, other: &CountedMetric) {
        self.distance_evals += other.distance_evals;
        self.projection_evals += other.projection_evals;
        self.angle_evals += other.angle_evals;
    }
}

/// An affine hyperplane `{x : x·normal = threshold}` with a unit normal.
#[derive(Clone, Debug, PartialEq)]
pub struct Splitter {
    normal: Vec<f64>,
    threshold: f64,
}

impl Splitter {
    /// Builds a splitter, normalizing `normal` to unit length.
    pub fn new(normal: Vec<f64>, threshold: f64) -> Result<Self> {
        let norm = norm(&normal);
        if !norm.is_finite() || norm <= 0.0 {
            return Err(Error::DegenerateVector);
        }
        let normal = normal.into_iter().map(|x| x / norm).collect();
        Ok(Self { normal, threshold })
    }

    /// Builds a splitter from a normal that is already unit length.
    pub(crate) fn from_unit(normal: Vec<f64>, threshold: f64) -> Self {
        debug_assert!((norm(&normal) - 1.0).abs() < 1e-9);
        Self { normal, threshold }
    }

    pub fn normal(&self) -> &[f64] {
        &self.normal
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    /// Raw projection `q·normal`, uncounted.
    #[inline]
    pub(crate) fn project(&self, q: &[f64]) -> f64 {
        dot(q, &self.normal)
    }

    /// `q·normal − threshold`, uncounted. The sign decides the side.
    #[inline]
    pub(crate) fn margin(&self, q: &[f64]) -> f64 {
        self.project(q) - self.threshold
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    Ok(())
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Unchecked counted distance for hot loops; callers guarantee equal lengths.
#[inline]
pub(crate) fn distance_counted(a: &[f64], b: &[f64], metric: &mut CountedMetric) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    metric.distance_evals += 1;
    squared_distance(a, b).sqrt()
}

/// Euclidean distance `‖a − b‖₂`. Increments `distance_evals` by one.
pub fn euclidean_distance(a: &[f64], b: &[f64], metric: &mut CountedMetric) -> Result<f64> {
    check_dims(a, b)?;
    Ok(distance_counted(a, b, metric))
}

/// Angle in `[0, π/2]` between the line spanned by `v` and the normal `n`.
///
/// Uses `|v·n|`, so `v` and `−v` give the same angle.
pub fn angle_to_normal(v: &[f64], n: &[f64]) -> Result<f64> {
    check_dims(v, n)?;
    let nv = norm(v);
    let nn = norm(n);
    if nv.is_nan() || nn.is_nan() || nv <= 0.0 || nn <= 0.0 {
        return Err(Error::DegenerateVector);
    }
    let cos = (dot(v, n).abs() / (nv * nn)).min(1.0);
    Ok(cos.acos().clamp(0.0, FRAC_PI_2))
}

/// Signed offset `q·normal − threshold`; its absolute value is the
/// perpendicular distance from `q` to the splitter. Increments
/// `projection_evals` by one.
pub fn signed_margin(q: &[f64], splitter: &Splitter, metric: &mut CountedMetric) -> Result<f64> {
    check_dims(q, splitter.normal())?;
    metric.projection_evals += 1;
    Ok(splitter.margin(q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_4, PI};

    #[test]
    fn pythagorean_distance_counts_once() {
        let mut m = CountedMetric::new();
        let d = euclidean_distance(&[0.0, 0.0], &[3.0, 4.0], &mut m).unwrap();
        assert_eq!(d, 5.0);
        assert_eq!(m.distance_evals, 1);
        assert_eq!(m.projection_evals, 0);
    }

    #[test]
    fn identical_points_have_zero_distance() {
        let mut m = CountedMetric::new();
        let x = [1.5, -2.0, 7.25];
        assert_eq!(euclidean_distance(&x, &x, &mut m).unwrap(), 0.0);
    }

    #[test]
    fn distance_matches_naive_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
            let b: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mut acc = 0.0;
            for i in 0..10 {
                acc += (a[i] - b[i]) * (a[i] - b[i]);
            }
            let expected = acc.sqrt();
            let got = euclidean_distance(&a, &b, &mut CountedMetric::new()).unwrap();
            assert!(((got - expected) / expected).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut m = CountedMetric::new();
        assert!(matches!(
            euclidean_distance(&[1.0], &[1.0, 2.0], &mut m),
            Err(Error::DimensionMismatch { expected: 1, found: 2 })
        ));
        assert_eq!(m.distance_evals, 0);
        let s = Splitter::new(vec![1.0, 0.0], 0.0).unwrap();
        assert!(signed_margin(&[1.0, 2.0, 3.0], &s, &mut m).is_err());
    }

    #[test]
    fn angle_examples() {
        let a = angle_to_normal(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((a - PI / 2.0).abs() < 1e-15);
        assert_eq!(angle_to_normal(&[-1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        let a = angle_to_normal(&[1.0, 1.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert!((a - FRAC_PI_4).abs() < 1e-12);
        assert!(matches!(angle_to_normal(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::DegenerateVector)));
    }

    #[test]
    fn margin_examples() {
        let mut m = CountedMetric::new();
        let s = Splitter::new(vec![1.0, 0.0], 1.0).unwrap();
        assert_eq!(signed_margin(&[2.0, 0.0], &s, &mut m).unwrap(), 1.0);
        assert_eq!(signed_margin(&[1.0, 5.0], &s, &mut m).unwrap(), 0.0);
        assert_eq!(m.projection_evals, 2);
    }

    #[test]
    fn splitter_normal_is_normalized() {
        let s = Splitter::new(vec![3.0, 4.0], 2.0).unwrap();
        assert!((norm(s.normal()) - 1.0).abs() < 1e-12);
        assert!(Splitter::new(vec![0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn metric_reset_and_total() {
        let mut m = CountedMetric { distance_evals: 3, projection_evals: 4, angle_evals: 5 };
        assert_eq!(m.total(), 12);
        m.reset();
        assert_eq!(m, CountedMetric::default());
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, dim)
    }

    proptest! {
        #[test]
        fn angle_is_symmetric_and_sign_invariant(v in vec_strategy(5), n in vec_strategy(5)) {
            prop_assume!(norm(&v) > 1e-6 && norm(&n) > 1e-6);
            let a = angle_to_normal(&v, &n).unwrap();
            let b = angle_to_normal(&n, &v).unwrap();
            let neg: Vec<f64> = v.iter().map(|x| -x).collect();
            let c = angle_to_normal(&neg, &n).unwrap();
            prop_assert!((0.0..=FRAC_PI_2).contains(&a));
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((a - c).abs() < 1e-12);
        }

        #[test]
        fn margin_matches_explicit_projection(q in vec_strategy(6), n in vec_strategy(6), t in -5.0f64..5.0) {
            prop_assume!(norm(&n) > 1e-3);
            let s = Splitter::new(n, t).unwrap();
            let mut m = CountedMetric::new();
            let margin = signed_margin(&q, &s, &mut m).unwrap();
            // Project q onto the hyperplane, then measure the offset.
            let proj: Vec<f64> = q.iter().zip(s.normal()).map(|(x, u)| x - margin * u).collect();
            prop_assert!(signed_margin(&proj, &s, &mut m).unwrap().abs() < 1e-9);
            let d = euclidean_distance(&q, &proj, &mut m).unwrap();
            prop_assert!((d - margin.abs()).abs() < 1e-9);
        }

        #[test]
        fn hyperplane_distance_is_a_lower_bound(
            q in vec_strategy(4), n in vec_strategy(4), t in -5.0f64..5.0, p in vec_strategy(4),
        ) {
            prop_assume!(norm(&n) > 1e-3);
            let s = Splitter::new(n, t).unwrap();
            let mut m = CountedMetric::new();
            // Move p onto the hyperplane.
            let pm = s.margin(&p);
            let on_plane: Vec<f64> = p.iter().zip(s.normal()).map(|(x, u)| x - pm * u).collect();
            let margin = signed_margin(&q, &s, &mut m).unwrap();
            let d = euclidean_distance(&q, &on_plane, &mut m).unwrap();
            prop_assert!(margin.abs() <= d + 1e-9);
        }
    }
}
