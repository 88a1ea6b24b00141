//! Synthetic benchmark data: random CP tensors, the five residual regimes,
//! Gaussian observation noise and uniformly random missing masks.
//!
//! Each generator draws from its own substream of the given seed, so the
//! low-rank part, residual, noise and mask stay independent and can be
//! regenerated separately.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::random::RngStream;
use crate::tensor::{CpFactors, DenseTensor, FactorMatrix, ObservationMask, TensorShape};

const LOWRANK_STREAM: u64 = 0;
const RESIDUAL_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const MASK_STREAM: u64 = 3;

/// Variance of the observation noise used throughout the benchmark.
pub const BENCHMARK_NOISE_VARIANCE: f64 = 0.001;

/// CP factors with `N(0, 1)` factor entries and weights uniform on `[-2, 2]`,
/// together with their reconstruction.
pub fn gen_lowrank(dims: &[usize], true_rank: usize, seed: u64) -> Result<(CpFactors, DenseTensor)> {
    let shape = TensorShape::new(dims.to_vec())?;
    let min_dim = *dims.iter().min().unwrap_or(&0);
    if true_rank == 0 || true_rank > min_dim {
        return Err(Error::Parameter(format!(
            "rank {true_rank} must lie in 1..={min_dim} for dims {dims:?}"
        )));
    }
    let mut rng = RngStream::new(seed).substream(LOWRANK_STREAM);
    let factors = shape
        .dims()
        .iter()
        .map(|&n| {
            let data = (0..n * true_rank).map(|_| rng.standard_normal()).collect();
            FactorMatrix::new(n, true_rank, data)
        })
        .collect::<Result<Vec<_>>>()?;
    let lambda = (0..true_rank).map(|_| rng.uniform(-2.0, 2.0)).collect();
    let cp = CpFactors::new(lambda, factors)?;
    let x = cp.reconstruct()?;
    Ok((cp, x))
}

/// Distribution of one residual population.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Population {
    Zero,
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, variance: f64 },
}

impl Population {
    pub fn mean(&self) -> f64 {
        match *self {
            Population::Zero => 0.0,
            Population::Uniform { lo, hi } => 0.5 * (lo + hi),
            Population::Normal { mean, .. } => mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Population::Zero => 0.0,
            Population::Uniform { lo, hi } => (hi - lo) * (hi - lo) / 12.0,
            Population::Normal { variance, .. } => variance,
        }
    }

    /// Reciprocal variance; infinite for the zero population.
    pub fn precision(&self) -> f64 {
        1.0 / self.variance()
    }

    fn draw(&self, rng: &mut RngStream) -> f64 {
        match *self {
            Population::Zero => 0.0,
            Population::Uniform { lo, hi } => rng.uniform(lo, hi),
            Population::Normal { mean, variance } => mean + variance.sqrt() * rng.standard_normal(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualKind {
    Zero,
    Gaussian,
    Sparse,
    MixtureZeroMean,
    MixtureNonzeroMean,
}

impl ResidualKind {
    pub const ALL: [ResidualKind; 5] = [
        ResidualKind::Zero,
        ResidualKind::Gaussian,
        ResidualKind::Sparse,
        ResidualKind::MixtureZeroMean,
        ResidualKind::MixtureNonzeroMean,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ResidualKind::Zero => "zero",
            ResidualKind::Gaussian => "gaussian",
            ResidualKind::Sparse => "sparse",
            ResidualKind::MixtureZeroMean => "mixture_zero",
            ResidualKind::MixtureNonzeroMean => "mixture_nonzero",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "zero" => Some(ResidualKind::Zero),
            "gaussian" => Some(ResidualKind::Gaussian),
            "sparse" => Some(ResidualKind::Sparse),
            "mixture_zero" | "mixture_zero_mean" => Some(ResidualKind::MixtureZeroMean),
            "mixture_nonzero" | "mixture_nonzero_mean" => Some(ResidualKind::MixtureNonzeroMean),
            _ => None,
        }
    }
}

/// Residual populations with their exact fractions of the entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSpec {
    pub kind: ResidualKind,
    pub populations: Vec<(f64, Population)>,
}

impl ResidualSpec {
    /// The benchmark regimes. Second normal parameters are variances.
    pub fn preset(kind: ResidualKind) -> Self {
        use Population::*;
        let populations = match kind {
            ResidualKind::Zero => vec![(1.0, Zero)],
            ResidualKind::Gaussian => vec![(
                1.0,
                Normal {
                    mean: 0.0,
                    variance: 0.01,
                },
            )],
            ResidualKind::Sparse => vec![(0.1, Uniform { lo: -2.0, hi: 2.0 }), (0.9, Zero)],
            ResidualKind::MixtureZeroMean => vec![
                (0.1, Uniform { lo: -2.0, hi: 2.0 }),
                (
                    0.3,
                    Normal {
                        mean: 0.0,
                        variance: 0.1,
                    },
                ),
                (
                    0.6,
                    Normal {
                        mean: 0.0,
                        variance: 0.005,
                    },
                ),
            ],
            ResidualKind::MixtureNonzeroMean => vec![
                (0.1, Uniform { lo: -1.0, hi: 4.0 }),
                (
                    0.2,
                    Normal {
                        mean: 0.1,
                        variance: 0.1,
                    },
                ),
                (
                    0.7,
                    Normal {
                        mean: -0.1,
                        variance: 1.0 / 300.0,
                    },
                ),
            ],
        };
        Self { kind, populations }
    }

    pub fn validate(&self) -> Result<()> {
        if self.populations.is_empty() || self.populations.len() > u8::MAX as usize {
            return Err(Error::Parameter("residual spec needs 1..=255 populations".into()));
        }
        if self.populations.iter().any(|(p, _)| !(*p >= 0.0)) {
            return Err(Error::Parameter("population fractions must be non-negative".into()));
        }
        let total: f64 = self.populations.iter().map(|(p, _)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!("population fractions sum to {total}")));
        }
        Ok(())
    }

    /// Entry counts per population: each rounded to the nearest integer,
    /// with the last population taking the remainder.
    pub fn counts(&self, n: usize) -> Vec<usize> {
        let mut counts: Vec<usize> = self
            .populations
            .iter()
            .map(|(p, _)| (p * n as f64).round() as usize)
            .collect();
        let last = counts.len() - 1;
        let head: usize = counts[..last].iter().sum();
        counts[last] = n.saturating_sub(head);
        counts
    }
}

/// Residual tensor plus the population index of every entry.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedResidual {
    pub tensor: DenseTensor,
    pub assignments: Vec<u8>,
}

pub fn gen_residual(dims: &[usize], spec: &ResidualSpec, seed: u64) -> Result<GeneratedResidual> {
    spec.validate()?;
    let shape = TensorShape::new(dims.to_vec())?;
    let n = shape.len();
    let mut rng = RngStream::new(seed).substream(RESIDUAL_STREAM);
    let mut assignments: Vec<u8> = spec
        .counts(n)
        .iter()
        .enumerate()
        .flat_map(|(p, &c)| std::iter::repeat_n(p as u8, c))
        .collect();
    assignments.shuffle(&mut rng);
    let values = assignments
        .iter()
        .map(|&p| spec.populations[p as usize].1.draw(&mut rng))
        .collect();
    Ok(GeneratedResidual {
        tensor: DenseTensor::new(shape, values)?,
        assignments,
    })
}

/// Flags exactly `round((1 - missing_ratio) n)` of `n` positions as observed,
/// chosen uniformly without replacement.
pub fn sample_observed_flags(n: usize, missing_ratio: f64, rng: &mut RngStream) -> Result<Vec<bool>> {
    if !(0.0..1.0).contains(&missing_ratio) {
        return Err(Error::Precondition(format!(
            "missing ratio {missing_ratio} must lie in [0, 1)"
        )));
    }
    let observed = ((1.0 - missing_ratio) * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let (chosen, _) = order.partial_shuffle(rng, observed);
    let mut flags = vec![false; n];
    for &i in chosen.iter() {
        flags[i] = true;
    }
    Ok(flags)
}

/// Adds `N(0, noise_var)` noise to every entry, then keeps exactly
/// `round((1 - missing_ratio) N)` uniformly chosen entries; the others are
/// set to zero in the returned observation.
pub fn corrupt_and_mask(
    latent: &DenseTensor,
    noise_var: f64,
    missing_ratio: f64,
    seed: u64,
) -> Result<(DenseTensor, ObservationMask)> {
    if !(0.0..1.0).contains(&missing_ratio) {
        return Err(Error::Precondition(format!(
            "missing ratio {missing_ratio} must lie in [0, 1)"
        )));
    }
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return Err(Error::Parameter(format!(
            "noise variance {noise_var} must be non-negative"
        )));
    }
    let n = latent.len();
    let mut noise_rng = RngStream::new(seed).substream(NOISE_STREAM);
    let sd = noise_var.sqrt();
    let mut values: Vec<f64> = latent
        .values()
        .iter()
        .map(|&v| {
            if sd > 0.0 {
                v + sd * noise_rng.standard_normal()
            } else {
                v
            }
        })
        .collect();

    let mut mask_rng = RngStream::new(seed).substream(MASK_STREAM);
    let flags = sample_observed_flags(n, missing_ratio, &mut mask_rng)?;
    for (v, &f) in values.iter_mut().zip(&flags) {
        if !f {
            *v = 0.0;
        }
    }
    Ok((
        DenseTensor::new(latent.shape().clone(), values)?,
        ObservationMask::new(latent.shape().clone(), flags)?,
    ))
}

/// Everything produced for one benchmark instance.
#[derive(Clone, Debug)]
pub struct SyntheticProblem {
    pub cp: CpFactors,
    pub lowrank: DenseTensor,
    pub residual: GeneratedResidual,
    pub spec: ResidualSpec,
    /// `L = X + E`.
    pub latent: DenseTensor,
    pub observed: DenseTensor,
    pub mask: ObservationMask,
}

impl SyntheticProblem {
    pub fn generate(
        dims: &[usize],
        true_rank: usize,
        spec: ResidualSpec,
        noise_var: f64,
        missing_ratio: f64,
        seed: u64,
    ) -> Result<Self> {
        let (cp, lowrank) = gen_lowrank(dims, true_rank, seed)?;
        let residual = gen_residual(dims, &spec, seed)?;
        let latent = lowrank.add(&residual.tensor)?;
        let (observed, mask) = corrupt_and_mask(&latent, noise_var, missing_ratio, seed)?;
        Ok(Self {
            cp,
            lowrank,
            residual,
            spec,
            latent,
            observed,
            mask,
        })
    }

    /// The benchmark instance: `30³`, noise variance 0.001.
    pub fn benchmark(true_rank: usize, kind: ResidualKind, missing_ratio: f64, seed: u64) -> Result<Self> {
        Self::generate(
            &[30, 30, 30],
            true_rank,
            ResidualSpec::preset(kind),
            BENCHMARK_NOISE_VARIANCE,
            missing_ratio,
            seed,
        )
    }
}
