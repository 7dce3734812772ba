//! Closed-form geometry behind the pruning rule, evaluated numerically,
//! together with the Monte Carlo estimators used to validate it.
//!
//! * the distribution of `sin α` between a random splitter and a random
//!   `d`-plane in ℝ^D;
//! * the probability that `k` random vectors all miss the doubled cone of
//!   half-angle `θ` around a fixed direction in a `d`-ball, and the error
//!   angle that keeps that probability below a target;
//! * the volume fraction of the error region of a tilted splitter in the
//!   hypercylinder noise model.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quadrature::integrate;

/// Relative tolerance for one-dimensional quadratures.
pub const QUAD_TOL: f64 = 1e-10;
/// Relative tolerance for the outer integral of the error-region ratio.
pub const NESTED_QUAD_TOL: f64 = 1e-8;

const MC_CHUNKS: u64 = 64;

/// Parameters of the hypercylinder noise model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometryParams {
    pub ambient_dim: usize,
    pub intrinsic_dim: usize,
    /// Fraction of variance off the intrinsic plane, in `[0, 0.1]`.
    pub epsilon: f64,
    /// Dihedral angle between splitter and intrinsic plane, in `(0, π/2]`.
    pub alpha: f64,
    /// Error angle, in `(0, π/2)`.
    pub theta: f64,
    /// Number of sampled vectors used for dihedral estimation.
    pub k: usize,
}

impl GeometryParams {
    pub fn new(ambient_dim: usize, intrinsic_dim: usize, epsilon: f64, alpha: f64, theta: f64) -> Result<Self> {
        let p = Self { ambient_dim, intrinsic_dim, epsilon, alpha, theta, k: 2000 };
        p.validate()?;
        Ok(p)
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.intrinsic_dim == 0 || self.intrinsic_dim > self.ambient_dim {
            return bad(format!("need 1 <= d <= D, got d={} D={}", self.intrinsic_dim, self.ambient_dim));
        }
        if !(0.0..=0.1).contains(&self.epsilon) {
            return bad(format!("epsilon {} outside [0, 0.1]", self.epsilon));
        }
        if !(self.alpha > 0.0 && self.alpha <= FRAC_PI_2) {
            return bad(format!("alpha {} outside (0, pi/2]", self.alpha));
        }
        if !(self.theta > 0.0 && self.theta < FRAC_PI_2) {
            return bad(format!("theta {} outside (0, pi/2)", self.theta));
        }
        Ok(())
    }

    /// Radius `a = √(3/d)` of the intrinsic-plane ball.
    pub fn radius_ip(&self) -> f64 {
        (3.0 / self.intrinsic_dim as f64).sqrt()
    }

    /// Radius `b = √(3ε/(D−d))` of the noise balls; zero when `d = D`.
    pub fn radius_noise(&self) -> f64 {
        let codim = self.ambient_dim - self.intrinsic_dim;
        if codim == 0 {
            0.0
        } else {
            (3.0 * self.epsilon / codim as f64).sqrt()
        }
    }
}

/// Volume of the `dim`-ball of the given radius, `π^(k/2) r^k / Γ(k/2 + 1)`.
pub fn ball_volume(dim: usize, radius: f64) -> f64 {
    // V_k = V_{k-2} · 2π r² / k, seeded with V_0 = 1 and V_1 = 2r.
    let r2 = radius * radius;
    let mut v = if dim.is_multiple_of(2) { 1.0 } else { 2.0 * radius };
    let mut k = if dim.is_multiple_of(2) { 2 } else { 3 };
    while k <= dim {
        v *= 2.0 * PI * r2 / k as f64;
        k += 2;
    }
    v
}

/// Volume of the cap of height `height` cut from the `dim`-ball of the
/// given radius, by quadrature over slab slices.
pub fn cap_volume(dim: usize, radius: f64, height: f64) -> Result<f64> {
    if dim == 0 {
        return Err(Error::InvalidConfig("cap of a 0-ball".into()));
    }
    if !(0.0..=2.0 * radius).contains(&height) {
        return Err(Error::InvalidConfig(format!("cap height {height} outside [0, {}]", 2.0 * radius)));
    }
    if height == 0.0 || radius == 0.0 {
        return Ok(0.0);
    }
    // ∫_{r-h}^{r} B^{dim-1}(√(r²-t²)) dt with t = r cos φ, which removes the
    // square-root endpoint singularity.
    let phi_max = ((radius - height) / radius).clamp(-1.0, 1.0).acos();
    let slice = |phi: f64| {
        let s = radius * phi.sin();
        ball_volume(dim - 1, s) * s
    };
    Ok(integrate(slice, 0.0, phi_max, QUAD_TOL))
}

/// Cap volume as a fraction of the whole ball.
fn cap_fraction(dim: usize, radius: f64, height: f64) -> f64 {
    let h = height.clamp(0.0, 2.0 * radius);
    cap_volume(dim, radius, h).expect("height clamped") / ball_volume(dim, radius)
}

/// Sample moments from a Monte Carlo run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentEstimate {
    pub mean: f64,
    pub variance: f64,
    /// Standard error of the mean.
    pub std_err: f64,
    pub samples: u64,
}

#[derive(Clone, Copy, Default)]
struct Moments {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn merge(mut self, o: Moments) -> Moments {
        self.n += o.n;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
        self
    }

    fn finish(self) -> MomentEstimate {
        let n = self.n as f64;
        let mean = self.sum / n;
        let variance = if self.n > 1 { ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
        MomentEstimate { mean, variance, std_err: (variance / n).sqrt(), samples: self.n }
    }
}

/// Runs `body` over `n` samples split into fixed chunks, each with its own
/// ChaCha stream, so the result does not depend on the thread count.
fn par_mc<A, F, M>(n: u64, seed: u64, body: F, merge: M) -> A
where
    A: Default + Send,
    F: Fn(&mut ChaCha8Rng, u64) -> A + Sync,
    M: Fn(A, A) -> A + Sync + Send,
{
    let chunks = MC_CHUNKS.min(n.max(1));
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let count = n / chunks + u64::from(c < n % chunks);
            body(&mut rng, count)
        })
        .reduce(A::default, merge)
}

/// Large-D limit of the mean of `sin α`: `√((d − ½)/(D − ½))`.
pub fn sin_alpha_limit_mean(d: usize, ambient: usize) -> f64 {
    ((d as f64 - 0.5) / (ambient as f64 - 0.5)).sqrt()
}

/// Large-D, large-d limit of the variance of `sin α`: `1/(2D − 1)`.
pub fn sin_alpha_limit_variance(ambient: usize) -> f64 {
    1.0 / (2.0 * ambient as f64 - 1.0)
}

/// `ln Γ(m/2)` for a positive integer `m`.
fn ln_gamma_half(m: usize) -> f64 {
    let (mut g, mut x) = if m.is_multiple_of(2) { (0.0, 1.0) } else { (0.5 * PI.ln(), 0.5) };
    while x < m as f64 / 2.0 - 1e-9 {
        g += x.ln();
        x += 1.0;
    }
    g
}

/// Exact mean of `sin α`: `sin² α` is `Beta(d/2, (D−d)/2)`, so
/// `E[sin α] = Γ((d+1)/2) Γ(D/2) / (Γ(d/2) Γ((D+1)/2))`.
pub fn sin_alpha_exact_mean(d: usize, ambient: usize) -> f64 {
    (ln_gamma_half(d + 1) + ln_gamma_half(ambient) - ln_gamma_half(d) - ln_gamma_half(ambient + 1)).exp()
}

/// Monte Carlo moments of `sin α` for a Gaussian splitter normal against
/// the plane of the first `d` axes of ℝ^D.
pub fn sin_alpha_mc(ambient: usize, d: usize, n_samples: u64, seed: u64) -> Result<MomentEstimate> {
    if d == 0 || d > ambient {
        return Err(Error::InvalidConfig(format!("need 1 <= d <= D, got d={d} D={ambient}")));
    }
    if n_samples == 0 {
        return Err(Error::InvalidConfig("n_samples must be positive".into()));
    }
    let m = par_mc(
        n_samples,
        seed,
        |rng, count| {
            let mut m = Moments::default();
            for _ in 0..count {
                let (mut inner, mut total) = (0.0, 0.0);
                for i in 0..ambient {
                    let x: f64 = rng.sample(StandardNormal);
                    let x2 = x * x;
                    total += x2;
                    if i < d {
                        inner += x2;
                    }
                }
                if total > 0.0 {
                    m.push((inner / total).sqrt());
                }
            }
            m
        },
        Moments::merge,
    );
    Ok(m.finish())
}

fn check_segment_args(d: usize, theta: f64) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidConfig("intrinsic dimension must be positive".into()));
    }
    if !(theta > 0.0 && theta < FRAC_PI_2) {
        return Err(Error::InvalidConfig(format!("theta {theta} outside (0, pi/2)")));
    }
    Ok(())
}

/// Fraction `s/S` of the unit `d`-ball covered by the doubled segment of
/// half-angle `theta` around a fixed axis (cone plus cap, both directions).
pub fn segment_ratio(d: usize, theta: f64) -> Result<f64> {
    check_segment_args(d, theta)?;
    let (s, c) = theta.sin_cos();
    let cone = ball_volume(d - 1, s) * c / d as f64;
    let cap = cap_volume(d, 1.0, 1.0 - c)?;
    Ok((2.0 * (cone + cap) / ball_volume(d, 1.0)).min(1.0))
}

/// `Γ(m/2)` for a positive integer `m`.
fn gamma_half(m: usize) -> f64 {
    assert!(m > 0);
    let (mut g, mut x) = if m.is_multiple_of(2) { (1.0, 1.0) } else { (PI.sqrt(), 0.5) };
    while x < m as f64 / 2.0 - 1e-9 {
        g *= x;
        x += 1.0;
    }
    g
}

/// `s/S` from the Gamma / ₂F₁ closed form. The hypergeometric series
/// terminates only for odd `d`; even `d` is rejected.
pub fn segment_ratio_series(d: usize, theta: f64) -> Result<f64> {
    check_segment_args(d, theta)?;
    if d.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!("series form needs odd d, got {d}")));
    }
    let (s, c) = theta.sin_cos();
    let x = c * c;
    // ₂F₁(1/2, (1-d)/2; 3/2; x), terminating after (d-1)/2 terms.
    let (a, b, cc) = (0.5, (1.0 - d as f64) / 2.0, 1.5);
    let mut term = 1.0;
    let mut hyp = 1.0;
    for n in 0..(d - 1) / 2 {
        let nf = n as f64;
        term *= (a + nf) * (b + nf) / ((cc + nf) * (nf + 1.0)) * x;
        hyp += term;
    }
    // Γ(1 + d/2) / (√π Γ((d+1)/2)); note Γ(1 + (d-1)/2) = Γ((d+1)/2).
    let g = gamma_half(d + 2) / (PI.sqrt() * gamma_half(d + 1));
    let first = 2.0 * (0.5 - c * g * hyp);
    let second = 2.0 * c * s.powi(d as i32 - 1) * g / d as f64;
    Ok(first + second)
}

/// Monte Carlo `s/S`: fraction of uniform unit-ball points whose direction
/// is within `theta` of `±e₁`.
pub fn segment_ratio_mc(d: usize, theta: f64, n_samples: u64, seed: u64) -> Result<MomentEstimate> {
    check_segment_args(d, theta)?;
    let cos_t = theta.cos();
    let m = par_mc(
        n_samples,
        seed,
        |rng, count| {
            let mut m = Moments::default();
            for _ in 0..count {
                let p = crate::data::sample_in_ball(rng, d, 1.0);
                let n = crate::geometry::norm(&p);
                let hit = n > 0.0 && p[0].abs() / n >= cos_t;
                m.push(if hit { 1.0 } else { 0.0 });
            }
            m
        },
        Moments::merge,
    );
    Ok(m.finish())
}

/// Probability that all `k` random vectors miss the doubled segment,
/// `(1 − s/S)^k`.
pub fn miss_probability(d: usize, theta: f64, k: u64) -> Result<f64> {
    let ratio = segment_ratio(d, theta)?;
    if k == 0 {
        return Ok(1.0);
    }
    Ok((1.0 - ratio).max(0.0).powf(k as f64))
}

/// Grid step used by [`compute_theta`]: half a degree.
pub const THETA_GRID_STEP: f64 = 0.5 * PI / 180.0;

/// Smallest error angle on a 0.5° grid whose miss probability is at most
/// `target_fail_prob`; `π/2` when no grid angle below `π/2` reaches it.
pub fn compute_theta(d: usize, k: u64, target_fail_prob: f64) -> Result<f64> {
    if !(target_fail_prob > 0.0 && target_fail_prob < 1.0) {
        return Err(Error::InvalidConfig(format!("target failure probability {target_fail_prob} outside (0, 1)")));
    }
    // Grid points 0.5°, 1.0°, ..., 89.5°.
    for i in 1..180 {
        let theta = i as f64 * THETA_GRID_STEP;
        if miss_probability(d, theta, k)? <= target_fail_prob {
            return Ok(theta);
        }
    }
    Ok(FRAC_PI_2)
}

/// Fraction `v/V` of the hypercylinder occupied by the error region of a
/// splitter tilted at `params.alpha` to the intrinsic plane.
pub fn error_region_ratio(params: &GeometryParams) -> Result<f64> {
    params.validate()?;
    let (d, ambient) = (params.intrinsic_dim, params.ambient_dim);
    if d >= ambient {
        return Err(Error::InvalidConfig("error region needs d < D".into()));
    }
    if params.alpha >= FRAC_PI_2 || params.epsilon == 0.0 {
        return Ok(0.0);
    }
    let (a, b) = (params.radius_ip(), params.radius_noise());
    let tan_a = params.alpha.tan();
    let codim = ambient - d;
    // Integrate z over [max(-b/tan α, -a), 0] with z = -a sin ψ, so the
    // slice radius √(a² - z²) = a cos ψ stays smooth at z = -a.
    let psi_max = (b / (tan_a * a)).min(1.0).asin();
    let ball_d = ball_volume(d, a);
    let integrand = |psi: f64| {
        let (sp, cp) = psi.sin_cos();
        let slice = ball_volume(d - 1, a * cp) * a * cp / ball_d;
        let height = b - a * sp * tan_a;
        if height <= 0.0 {
            0.0
        } else {
            slice * cap_fraction(codim, b, height)
        }
    };
    Ok(2.0 * integrate(integrand, 0.0, psi_max, NESTED_QUAD_TOL))
}

/// Output of [`hypercylinder_mc`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HypercylinderEstimate {
    /// Doubled fraction of points in the one-sided error region.
    pub ratio: f64,
    pub std_err: f64,
    /// Mean squared distance within the plane, `E‖u‖²`, ball model.
    pub ball_ip_sq: f64,
    /// Mean squared distance from the plane, `E‖w‖²`, ball model.
    pub ball_noise_sq: f64,
    /// Same two quantities with independent uniform coordinates on
    /// `[-a, a]` and `[-b, b]` (box model).
    pub box_ip_sq: f64,
    pub box_noise_sq: f64,
}

impl HypercylinderEstimate {
    /// `(avg dist² from plane) / (avg dist² from mean)` under the box model.
    pub fn box_noise_fraction(&self) -> f64 {
        self.box_noise_sq / (self.box_ip_sq + self.box_noise_sq)
    }

    pub fn ball_noise_fraction(&self) -> f64 {
        self.ball_noise_sq / (self.ball_ip_sq + self.ball_noise_sq)
    }
}

#[derive(Clone, Copy, Default)]
struct CylinderAcc {
    n: u64,
    hits: u64,
    ball_ip: f64,
    ball_noise: f64,
    box_ip: f64,
    box_noise: f64,
}

/// First coordinate and squared norm of a uniform point in the `dim`-ball.
fn ball_first_and_sq<R: Rng>(rng: &mut R, dim: usize, radius: f64) -> (f64, f64) {
    let mut first = 0.0;
    let mut sq = 0.0;
    for i in 0..dim {
        let g: f64 = rng.sample(StandardNormal);
        if i == 0 {
            first = g;
        }
        sq += g * g;
    }
    let u: f64 = rng.random();
    let r = radius * u.powf(1.0 / dim as f64);
    if sq == 0.0 {
        return (0.0, 0.0);
    }
    (first * r / sq.sqrt(), r * r)
}

/// Monte Carlo estimate of the error-region ratio with points uniform in
/// the hypercylinder; also reports the squared-distance averages of both
/// the ball and the box interpretation of the noise model.
pub fn hypercylinder_mc(params: &GeometryParams, n_samples: u64, seed: u64) -> Result<HypercylinderEstimate> {
    params.validate()?;
    let (d, ambient) = (params.intrinsic_dim, params.ambient_dim);
    if d >= ambient {
        return Err(Error::InvalidConfig("hypercylinder needs d < D".into()));
    }
    if n_samples == 0 {
        return Err(Error::InvalidConfig("n_samples must be positive".into()));
    }
    let codim = ambient - d;
    let (a, b) = (params.radius_ip(), params.radius_noise());
    let tan_a = if params.alpha >= FRAC_PI_2 { f64::INFINITY } else { params.alpha.tan() };
    let acc = par_mc(
        n_samples,
        seed,
        |rng, count| {
            let mut acc = CylinderAcc::default();
            for _ in 0..count {
                let (z, u_sq) = ball_first_and_sq(rng, d, a);
                let (w1, w_sq) = ball_first_and_sq(rng, codim, b);
                acc.n += 1;
                if z < 0.0 && w1 > -z * tan_a {
                    acc.hits += 1;
                }
                acc.ball_ip += u_sq;
                acc.ball_noise += w_sq;
                let bx: f64 = (0..d).map(|_| rng.random_range(-a..=a).powi(2)).sum();
                let bn: f64 = (0..codim).map(|_| rng.random_range(-b..=b).powi(2)).sum();
                acc.box_ip += bx;
                acc.box_noise += bn;
            }
            acc
        },
        |x, y| CylinderAcc {
            n: x.n + y.n,
            hits: x.hits + y.hits,
            ball_ip: x.ball_ip + y.ball_ip,
            ball_noise: x.ball_noise + y.ball_noise,
            box_ip: x.box_ip + y.box_ip,
            box_noise: x.box_noise + y.box_noise,
        },
    );
    let n = acc.n as f64;
    let p = acc.hits as f64 / n;
    Ok(HypercylinderEstimate {
        ratio: 2.0 * p,
        std_err: 2.0 * (p * (1.0 - p) / n).sqrt(),
        ball_ip_sq: acc.ball_ip / n,
        ball_noise_sq: acc.ball_noise / n,
        box_ip_sq: acc.box_ip / n,
        box_noise_sq: acc.box_noise / n,
    })
}
