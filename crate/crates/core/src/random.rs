//! Seeded random streams and the distribution samplers used by the Gibbs
//! conditionals.
//!
//! Every Gamma in this module is parameterized by shape and *rate*. Callers
//! translate other conventions before calling in.

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reproducible 64-bit generator stream.
///
/// Substreams are obtained from the master seed by applying the xoshiro256
/// jump function (`2^128` steps) `j + 1` times, so substream `j` never
/// overlaps the master stream or any other substream in practice.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    seed: u64,
    inner: Xoshiro256PlusPlus,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream `j` derived from this stream's seed.
    pub fn substream(&self, j: u64) -> Self {
        let mut inner = Xoshiro256PlusPlus::seed_from_u64(self.seed);
        for _ in 0..=j {
            inner.jump();
        }
        Self { seed: self.seed, inner }
    }

    /// Uniform draw on `(0, 1]`.
    #[inline]
    pub fn open_unit(&mut self) -> f64 {
        1.0 - self.inner.random::<f64>()
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer on `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Parameters of a Gaussian full conditional, in mean/precision form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalParams {
    pub mean: f64,
    pub precision: f64,
}

impl NormalParams {
    pub fn sample(&self, rng: &mut RngStream) -> Result<f64> {
        sample_gaussian(rng, self.mean, self.precision)
    }
}

/// Parameters of a Gamma full conditional (shape, rate).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn sample(&self, rng: &mut RngStream) -> Result<f64> {
        sample_gamma(rng, self.shape, self.rate)
    }
}

/// Draw from `Normal(mean, 1 / precision)`.
pub fn sample_gaussian(rng: &mut RngStream, mean: f64, precision: f64) -> Result<f64> {
    positive("precision", precision)?;
    if !mean.is_finite() {
        return Err(Error::Parameter(format!("mean must be finite, got {mean}")));
    }
    Ok(mean + rng.standard_normal() / precision.sqrt())
}

/// Natural log of a `Gamma(shape, 1)` draw.
///
/// Marsaglia–Tsang squeeze for `shape >= 1`; smaller shapes are boosted as
/// `X_{shape+1} · U^{1/shape}`, carried out in the log domain so that shapes
/// near `1e-6` stay exact instead of underflowing.
pub fn sample_log_gamma(rng: &mut RngStream, shape: f64) -> Result<f64> {
    positive("shape", shape)?;
    if shape < 1.0 {
        let boosted = log_gamma_ge_one(rng, shape + 1.0);
        return Ok(boosted + rng.open_unit().ln() / shape);
    }
    Ok(log_gamma_ge_one(rng, shape))
}

fn log_gamma_ge_one(rng: &mut RngStream, shape: f64) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = rng.standard_normal();
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u = rng.open_unit();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d.ln() + v.ln();
        }
    }
}

/// Draw from `Gamma(shape, rate)` (mean `shape / rate`).
///
/// Draws too small to represent are returned as `f64::MIN_POSITIVE`.
pub fn sample_gamma(rng: &mut RngStream, shape: f64, rate: f64) -> Result<f64> {
    positive("rate", rate)?;
    let log_x = sample_log_gamma(rng, shape)? - rate.ln();
    Ok(log_x.exp().clamp(f64::MIN_POSITIVE, f64::MAX))
}

/// Michael–Schucany–Haas draw from the inverse Gaussian `IG(mean, shape)`.
pub fn sample_inverse_gaussian(rng: &mut RngStream, mean: f64, shape: f64) -> Result<f64> {
    positive("mean", mean)?;
    positive("shape", shape)?;
    let v = rng.standard_normal();
    let y = v * v;
    let my = mean * y;
    // mean - (mean / 2 shape) (sqrt(4 mean shape y + my^2) - my), cancellation-free.
    let root = (my * my + 4.0 * mean * shape * y).sqrt();
    let x = if my + root > 0.0 {
        mean - 2.0 * mean * my / (my + root)
    } else {
        mean
    };
    let x = x.max(f64::MIN_POSITIVE);
    if rng.open_unit() * (mean + x) <= mean {
        Ok(x)
    } else {
        Ok(mean * (mean / x))
    }
}

/// Draw from the generalized inverse Gaussian of order 1/2,
/// density `∝ g^{-1/2} exp(-(b / g + a g) / 2)`.
///
/// The reciprocal of such a draw is inverse Gaussian with mean `sqrt(a / b)`
/// and shape `a`. At `b = 0` the density is `Gamma(1/2, a/2)`; the same draw
/// is used whenever `a·b` is too small to move the `b / g` term.
pub fn sample_gig_half(rng: &mut RngStream, a: f64, b: f64) -> Result<f64> {
    positive("a", a)?;
    if !(b >= 0.0 && b.is_finite()) {
        return Err(Error::Parameter(format!("b must be non-negative and finite, got {b}")));
    }
    if a * b <= 1e-30 {
        return sample_gamma(rng, 0.5, 0.5 * a);
    }
    let inv = sample_inverse_gaussian(rng, (a / b).sqrt(), a)?;
    Ok((1.0 / inv).min(f64::MAX))
}

/// Draw from `Dirichlet(alpha)`.
///
/// Works from log-Gamma draws with a log-sum-exp normalization, so tiny
/// concentrations give exact zeros rather than `0/0`.
pub fn sample_dirichlet(rng: &mut RngStream, alpha: &[f64]) -> Result<Vec<f64>> {
    if alpha.is_empty() {
        return Err(Error::Parameter("Dirichlet needs at least one component".into()));
    }
    let logs = alpha
        .iter()
        .map(|&a| sample_log_gamma(rng, a))
        .collect::<Result<Vec<_>>>()?;
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    Ok(p)
}

/// Draw a component index from the probability vector `pi`.
pub fn sample_categorical(rng: &mut RngStream, pi: &[f64]) -> Result<usize> {
    if pi.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
        return Err(Error::Parameter(format!("probabilities must be non-negative: {pi:?}")));
    }
    let total: f64 = pi.iter().sum();
    if total <= 0.0 || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!("probabilities sum to {total}, not 1")));
    }
    Ok(pick(rng, pi, total))
}

/// Draw a component index from unnormalized log weights. Weights of
/// `-inf` are never chosen; at least one weight must be finite.
pub fn sample_categorical_log(rng: &mut RngStream, log_weights: &[f64], scratch: &mut Vec<f64>) -> usize {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    debug_assert!(max.is_finite(), "no finite log weight");
    scratch.clear();
    scratch.extend(log_weights.iter().map(|l| (l - max).exp()));
    let total: f64 = scratch.iter().sum();
    pick(rng, scratch, total)
}

fn pick(rng: &mut RngStream, weights: &[f64], total: f64) -> usize {
    let target = rng.inner.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (d, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = d;
            if target < acc {
                return d;
            }
        }
    }
    last
}

/// One-hot expansion of a component index.
pub fn one_hot(index: usize, len: usize) -> Vec<u8> {
    (0..len).map(|d| (d == index) as u8).collect()
}
