//! Gibbs chain driver: initialization, burn-in with component pruning,
//! sample collection and MMSE aggregation.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowrank::{FactorUpdate, HyperParams, LowRankSampler, LowRankState};
use crate::mixture::{MixtureState, MAX_COMPONENTS};
use crate::observed::ObservedData;
use crate::random::RngStream;
pub use crate::spatial::{build_spatial_weights, SpatialPrior, SpatialWeights};
use crate::tensor::{CpFactors, DenseTensor, FactorMatrix, ObservationMask, TensorShape};

/// How collected samples are turned into a point estimate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Average `λ`, `U` and `E` separately, then reconstruct.
    #[default]
    Factor,
    /// Average the per-sample reconstructions `X_t + E_t`.
    Reconstruction,
}

/// Update schedule of the Gibbs sweep. Both target the same posterior.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerScheme {
    /// Every variable drawn from its full conditional, one scalar at a time:
    /// `λ` and `U` given the current `E`, mixture parameters from all entries.
    Literal,
    /// `λ` and factor rows drawn with `E` integrated out under each entry's
    /// component, factor rows updated jointly across columns, and mixture
    /// parameters drawn from the observed entries with the unobserved
    /// `(z_i, e_i)` integrated out and then redrawn from their prior.
    #[default]
    Blocked,
}

/// Starting values of the factor matrices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorInit {
    /// Every factor entry is one.
    #[default]
    Ones,
    /// Independent standard normal entries from a dedicated substream.
    Random,
}

/// Neighbour prior settings; weights are built from the mask at run time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialSettings {
    pub eta0: f64,
    /// One flag per mode.
    pub modes: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub rank_init: usize,
    pub burn_in: usize,
    pub samples: usize,
    pub hyper: HyperParams,
    /// Dirichlet concentration per mixture component; length `max_components`.
    pub alpha0: Vec<f64>,
    pub max_components: usize,
    pub seed: u64,
    pub rank_threshold: f64,
    pub spatial: Option<SpatialSettings>,
    pub aggregation: Aggregation,
    pub scheme: SamplerScheme,
    #[serde(default)]
    pub factor_init: FactorInit,
    /// Keep reconstruction-space statistics (needed for uncertainty).
    pub collect_reconstructions: bool,
    /// Mixture components below this occupancy are removed during burn-in.
    pub min_component_weight: f64,
    /// Burn-in sweeps between mixture pruning checks.
    pub component_prune_interval: usize,
    /// Consecutive burn-in sweeps a weight must stay below threshold
    /// before its CP column is removed.
    pub column_prune_patience: usize,
    /// During burn-in, columns whose factors are collinear in every mode
    /// (`|cos| ≥` this value) are merged; `None` disables merging.
    #[serde(default = "default_merge_cosine")]
    pub column_merge_cosine: Option<f64>,
    /// First burn-in sweep at which merging is checked (then every
    /// `component_prune_interval` sweeps).
    #[serde(default = "default_merge_start")]
    pub column_merge_start: usize,
}

fn default_merge_cosine() -> Option<f64> {
    Some(0.8)
}

fn default_merge_start() -> usize {
    100
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            rank_init: 20,
            burn_in: 500,
            samples: 100,
            hyper: HyperParams::default(),
            alpha0: vec![1e-6; 6],
            max_components: 6,
            seed: 0,
            rank_threshold: 1e-5,
            spatial: None,
            aggregation: Aggregation::Factor,
            scheme: SamplerScheme::Blocked,
            factor_init: FactorInit::Ones,
            collect_reconstructions: true,
            min_component_weight: 1e-3,
            component_prune_interval: 20,
            column_prune_patience: 50,
            column_merge_cosine: default_merge_cosine(),
            column_merge_start: default_merge_start(),
        }
    }
}

impl GibbsConfig {
    /// Sets `max_components` and a matching uniform `alpha0`.
    pub fn with_components(mut self, max_components: usize, alpha0: f64) -> Self {
        self.max_components = max_components;
        self.alpha0 = vec![alpha0; max_components];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank_init == 0 {
            return Err(Error::Parameter("rank_init must be at least 1".into()));
        }
        if self.samples == 0 {
            return Err(Error::Parameter("samples must be at least 1".into()));
        }
        if self.max_components == 0 || self.max_components > MAX_COMPONENTS {
            return Err(Error::Parameter(format!(
                "max_components {} outside 1..={MAX_COMPONENTS}",
                self.max_components
            )));
        }
        if self.alpha0.len() != self.max_components || !self.alpha0.iter().all(|a| *a > 0.0 && a.is_finite()) {
            return Err(Error::Parameter(format!(
                "alpha0 needs {} positive entries, got {:?}",
                self.max_components, self.alpha0
            )));
        }
        if !(self.rank_threshold > 0.0) {
            return Err(Error::Parameter("rank_threshold must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.min_component_weight) {
            return Err(Error::Parameter("min_component_weight must lie in [0, 1)".into()));
        }
        if self.component_prune_interval == 0 || self.column_prune_patience == 0 {
            return Err(Error::Parameter("pruning intervals must be positive".into()));
        }
        if let Some(c) = self.column_merge_cosine {
            if !(c > 0.0 && c <= 1.0) {
                return Err(Error::Parameter(format!(
                    "column_merge_cosine must lie in (0, 1], got {c}"
                )));
            }
        }
        self.hyper.validate()
    }
}

/// Per-sweep diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    /// RRE of the current sample `X_t + E_t` against a supplied reference.
    pub rre: Option<f64>,
    pub active_rank: usize,
    pub components: usize,
    pub seconds: f64,
}

/// Posterior means of the mixture parameters over the collected samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSummary {
    pub proportions: Vec<f64>,
    pub means: Vec<f64>,
    pub precisions: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct CompletionResult {
    pub completed: DenseTensor,
    pub lowrank_mean: CpFactors,
    pub residual_mean: DenseTensor,
    pub estimated_rank: usize,
    /// Sample standard deviation of `X_t + E_t`; `None` when fewer than two
    /// samples were collected or reconstruction statistics were disabled.
    pub entry_uncertainty: Option<DenseTensor>,
    pub mixture_summary: MixtureSummary,
    pub trace: Vec<TraceRow>,
}

/// Number of weights with `|λ_r| > threshold`.
pub fn estimate_rank(lambda_mean: &[f64], threshold: f64) -> usize {
    lambda_mean.iter().filter(|l| l.abs() > threshold).count()
}

/// One collected draw of the low-rank factors and the residual.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub cp: CpFactors,
    pub residual: DenseTensor,
}

/// Point estimate built from a set of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct MmseEstimate {
    pub lowrank: CpFactors,
    pub residual: DenseTensor,
    pub completed: DenseTensor,
}

/// Running sums for the MMSE estimate and, optionally, Welford statistics
/// of the sampled reconstructions.
#[derive(Clone, Debug)]
pub struct MmseAccumulator {
    count: usize,
    lambda: Vec<f64>,
    factors: Vec<Vec<f64>>,
    rows: Vec<usize>,
    residual: Vec<f64>,
    recon: Option<(Vec<f64>, Vec<f64>)>,
    proportions: Vec<f64>,
    means: Vec<f64>,
    precisions: Vec<f64>,
}

impl MmseAccumulator {
    pub fn new(track_reconstructions: bool) -> Self {
        Self {
            count: 0,
            lambda: Vec::new(),
            factors: Vec::new(),
            rows: Vec::new(),
            residual: Vec::new(),
            recon: track_reconstructions.then(|| (Vec::new(), Vec::new())),
            proportions: Vec::new(),
            means: Vec::new(),
            precisions: Vec::new(),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn add(&mut self, cp: &CpFactors, residual: &DenseTensor) -> Result<()> {
        if self.count == 0 {
            self.lambda = vec![0.0; cp.rank()];
            self.factors = cp.factors().iter().map(|f| vec![0.0; f.data().len()]).collect();
            self.rows = cp.factors().iter().map(FactorMatrix::rows).collect();
            self.residual = vec![0.0; residual.len()];
        } else if cp.rank() != self.lambda.len() || residual.len() != self.residual.len() {
            return Err(Error::Precondition(
                "collected samples must share rank and shape".into(),
            ));
        }
        self.count += 1;
        add_into(&mut self.lambda, cp.lambda());
        for (acc, f) in self.factors.iter_mut().zip(cp.factors()) {
            add_into(acc, f.data());
        }
        add_into(&mut self.residual, residual.values());
        if let Some((mean, m2)) = &mut self.recon {
            let x = cp.reconstruct()?;
            if mean.is_empty() {
                mean.resize(x.len(), 0.0);
                m2.resize(x.len(), 0.0);
            }
            let n = self.count as f64;
            for (((m, s), &xv), &ev) in mean
                .iter_mut()
                .zip(m2.iter_mut())
                .zip(x.values())
                .zip(residual.values())
            {
                let v = xv + ev;
                let delta = v - *m;
                *m += delta / n;
                *s += delta * (v - *m);
            }
        }
        Ok(())
    }

    fn add_mixture(&mut self, mix: &MixtureState) {
        if self.proportions.len() != mix.components() {
            self.proportions = vec![0.0; mix.components()];
            self.means = vec![0.0; mix.components()];
            self.precisions = vec![0.0; mix.components()];
        }
        add_into(&mut self.proportions, &mix.proportions);
        add_into(&mut self.means, &mix.means);
        add_into(&mut self.precisions, &mix.precisions);
    }

    fn mixture_summary(&self) -> MixtureSummary {
        let n = self.count.max(1) as f64;
        let avg = |v: &[f64]| v.iter().map(|x| x / n).collect();
        MixtureSummary {
            proportions: avg(&self.proportions),
            means: avg(&self.means),
            precisions: avg(&self.precisions),
        }
    }

    /// Factor-mean and residual-mean estimate with the completed tensor
    /// chosen by `mode`.
    pub fn estimate(&self, mode: Aggregation) -> Result<MmseEstimate> {
        if self.count == 0 {
            return Err(Error::Precondition("no samples collected".into()));
        }
        let n = self.count as f64;
        let lambda = self.lambda.iter().map(|v| v / n).collect();
        let factors = self
            .factors
            .iter()
            .zip(&self.rows)
            .map(|(acc, &rows)| FactorMatrix::new(rows, self.lambda.len(), acc.iter().map(|v| v / n).collect()))
            .collect::<Result<Vec<_>>>()?;
        let lowrank = CpFactors::new(lambda, factors)?;
        let shape = lowrank.shape()?;
        let residual = DenseTensor::new(shape.clone(), self.residual.iter().map(|v| v / n).collect())?;
        let completed = match mode {
            Aggregation::Factor => lowrank.reconstruct()?.add(&residual)?,
            Aggregation::Reconstruction => match &self.recon {
                Some((mean, _)) => DenseTensor::new(shape, mean.clone())?,
                None => {
                    return Err(Error::Precondition(
                        "reconstruction aggregation needs reconstruction statistics".into(),
                    ))
                }
            },
        };
        Ok(MmseEstimate {
            lowrank,
            residual,
            completed,
        })
    }

    /// Sample standard deviation (divisor `n - 1`) of the reconstructions.
    pub fn uncertainty(&self, shape: &TensorShape) -> Result<DenseTensor> {
        let (_, m2) = self
            .recon
            .as_ref()
            .ok_or_else(|| Error::Precondition("reconstruction statistics were not collected".into()))?;
        if self.count < 2 {
            return Err(Error::Precondition("uncertainty needs at least two samples".into()));
        }
        let d = (self.count - 1) as f64;
        DenseTensor::new(shape.clone(), m2.iter().map(|s| (s / d).max(0.0).sqrt()).collect())
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// Batch form of the MMSE aggregation over stored samples.
pub fn mmse_aggregate(samples: &[Sample], mode: Aggregation) -> Result<MmseEstimate> {
    let mut acc = MmseAccumulator::new(mode == Aggregation::Reconstruction);
    for s in samples {
        acc.add(&s.cp, &s.residual)?;
    }
    acc.estimate(mode)
}

/// Entry-wise sample standard deviation (divisor `n - 1`) of reconstructions.
pub fn per_entry_uncertainty(samples: &[DenseTensor]) -> Result<DenseTensor> {
    if samples.len() < 2 {
        return Err(Error::Precondition("uncertainty needs at least two samples".into()));
    }
    let shape = samples[0].shape().clone();
    if samples.iter().any(|s| s.shape() != &shape) {
        return Err(Error::Shape("samples differ in shape".into()));
    }
    let n = samples.len() as f64;
    let values = (0..shape.len())
        .map(|i| {
            let mean = samples.iter().map(|s| s.values()[i]).sum::<f64>() / n;
            let ss: f64 = samples.iter().map(|s| (s.values()[i] - mean).powi(2)).sum();
            (ss / (n - 1.0)).sqrt()
        })
        .collect();
    DenseTensor::new(shape, values)
}

/// Substream of the run seed used by [`FactorInit::Random`].
const INIT_STREAM: u64 = 0;

/// A single Gibbs chain over fixed observations.
pub struct Chain<'d> {
    data: &'d ObservedData,
    config: GibbsConfig,
    spatial: Option<SpatialPrior>,
    alpha0: Vec<f64>,
    lowrank: LowRankState,
    mixture: MixtureState,
    sampler: LowRankSampler<'d>,
    rng: RngStream,
    iteration: usize,
    below_threshold: Vec<usize>,
    entry_means: Vec<f64>,
    entry_precisions: Vec<f64>,
}

impl<'d> Chain<'d> {
    /// Initializes factors per `factor_init`, weights and precisions to one, means to zero,
    /// `E` to zero, uniform proportions and indicators drawn from them.
    pub fn new(data: &'d ObservedData, config: GibbsConfig) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::Precondition("no observed entries".into()));
        }
        let shape = data.shape().clone();
        let spatial = match &config.spatial {
            Some(s) => {
                let missing = 1.0 - data.len() as f64 / shape.len() as f64;
                Some(SpatialPrior::new(s.eta0, shape.dims(), &s.modes, missing)?)
            }
            None => None,
        };
        let mut rng = RngStream::new(config.seed);
        let mut lowrank = LowRankState::initial(&shape, config.rank_init);
        if config.factor_init == FactorInit::Random {
            let mut init = RngStream::new(config.seed).substream(INIT_STREAM);
            for k in 0..shape.order() {
                for i in 0..shape.dims()[k] {
                    for v in lowrank.cp.factor_mut(k).row_mut(i) {
                        *v = init.standard_normal();
                    }
                }
            }
        }
        let mixture = MixtureState::initial(&shape, config.max_components, &mut rng)?;
        let mut sampler = LowRankSampler::new(data, &lowrank)?;
        sampler.set_factor_update(match config.scheme {
            SamplerScheme::Literal => FactorUpdate::Entry,
            SamplerScheme::Blocked => FactorUpdate::Row,
        });
        Ok(Self {
            data,
            alpha0: config.alpha0.clone(),
            below_threshold: vec![0; config.rank_init],
            config,
            spatial,
            lowrank,
            mixture,
            sampler,
            rng,
            iteration: 0,
            entry_means: Vec::new(),
            entry_precisions: Vec::new(),
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn lowrank(&self) -> &LowRankState {
        &self.lowrank
    }

    pub fn mixture(&self) -> &MixtureState {
        &self.mixture
    }

    pub fn in_burn_in(&self) -> bool {
        self.iteration < self.config.burn_in
    }

    /// Runs one full sweep: the low-rank block, then the mixture block,
    /// then (during burn-in) the column merge and pruning checks.
    pub fn sweep(&mut self) -> Result<()> {
        let hyper = self.config.hyper;
        let burning = self.in_burn_in();
        match self.config.scheme {
            SamplerScheme::Literal => self.sampler.set_residual(self.mixture.residual.values()),
            SamplerScheme::Blocked => {
                let m = &self.mixture;
                self.entry_means.clear();
                self.entry_precisions.clear();
                for &f in self.data.flat() {
                    let z = m.indicators[f] as usize;
                    self.entry_means.push(m.means[z]);
                    self.entry_precisions.push(m.precisions[z]);
                }
                self.sampler
                    .set_marginal_residual(&self.entry_means, &self.entry_precisions, hyper.tau0);
            }
        }
        self.sampler
            .sweep(&mut self.lowrank, &hyper, self.spatial.as_ref(), &mut self.rng)?;
        match self.config.scheme {
            SamplerScheme::Literal => {
                self.mixture
                    .sweep(self.data, self.sampler.fit(), &hyper, &self.alpha0, &mut self.rng)?
            }
            SamplerScheme::Blocked => {
                self.mixture
                    .sweep_observed(self.data, self.sampler.fit(), &hyper, &self.alpha0, &mut self.rng)?
            }
        }
        self.iteration += 1;
        if burning {
            self.merge_columns();
            self.prune_columns();
            if self.iteration % self.config.component_prune_interval == 0 {
                let keep = self
                    .mixture
                    .tune_component_count(self.config.min_component_weight, &mut self.rng)?;
                let mut it = keep.iter();
                self.alpha0.retain(|_| *it.next().unwrap());
            }
        }
        Ok(())
    }

    fn merge_columns(&mut self) {
        let Some(min_cosine) = self.config.column_merge_cosine else {
            return;
        };
        if self.iteration < self.config.column_merge_start || self.iteration % self.config.component_prune_interval != 0
        {
            return;
        }
        if let Some(keep) = self.lowrank.merge_collinear_columns(min_cosine) {
            let mut it = keep.iter();
            self.below_threshold.retain(|_| *it.next().unwrap());
            self.sampler.refresh(&self.lowrank);
        }
    }

    fn prune_columns(&mut self) {
        let threshold = self.config.rank_threshold;
        for (count, l) in self.below_threshold.iter_mut().zip(self.lowrank.cp.lambda()) {
            *count = if l.abs() < threshold { *count + 1 } else { 0 };
        }
        let patience = self.config.column_prune_patience;
        let mut keep: Vec<bool> = self.below_threshold.iter().map(|&c| c < patience).collect();
        if keep.iter().all(|&k| k) {
            return;
        }
        if !keep.iter().any(|&k| k) {
            let lambda = self.lowrank.cp.lambda();
            let best = (0..lambda.len())
                .max_by(|&a, &b| lambda[a].abs().total_cmp(&lambda[b].abs()))
                .unwrap_or(0);
            keep[best] = true;
        }
        self.lowrank.retain_components(&keep);
        let mut it = keep.iter();
        self.below_threshold.retain(|_| *it.next().unwrap());
        self.sampler.refresh(&self.lowrank);
    }

    /// Current sample `X_t + E_t` as a dense tensor.
    pub fn current_reconstruction(&self) -> Result<DenseTensor> {
        self.lowrank.cp.reconstruct()?.add(&self.mixture.residual)
    }

    fn trace_row(&self, start: &Instant, reference: Option<&DenseTensor>) -> Result<TraceRow> {
        let rre = match reference {
            Some(truth) => Some(crate::metrics::rre(truth, &self.current_reconstruction()?)?),
            None => None,
        };
        Ok(TraceRow {
            iter: self.iteration,
            rre,
            active_rank: estimate_rank(self.lowrank.cp.lambda(), self.config.rank_threshold),
            components: self.mixture.components(),
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Runs the full sampler and returns the MMSE completion.
pub fn run(y: &DenseTensor, mask: &ObservationMask, config: &GibbsConfig) -> Result<CompletionResult> {
    run_with_reference(y, mask, config, None)
}

/// As [`run`], additionally recording the RRE of each sweep's sample
/// against `reference` in the trace.
pub fn run_with_reference(
    y: &DenseTensor,
    mask: &ObservationMask,
    config: &GibbsConfig,
    reference: Option<&DenseTensor>,
) -> Result<CompletionResult> {
    if let Some(r) = reference {
        if r.shape() != y.shape() {
            return Err(Error::Shape("reference shape differs from observations".into()));
        }
    }
    let data = ObservedData::new(y, mask)?;
    let mut chain = Chain::new(&data, config.clone())?;
    let start = Instant::now();
    let track = config.collect_reconstructions || config.aggregation == Aggregation::Reconstruction;
    let mut acc = MmseAccumulator::new(track);
    let mut trace = Vec::with_capacity(config.burn_in + config.samples);
    for _ in 0..config.burn_in + config.samples {
        let collecting = !chain.in_burn_in();
        chain.sweep()?;
        if collecting {
            acc.add(&chain.lowrank.cp, &chain.mixture.residual)?;
            acc.add_mixture(&chain.mixture);
        }
        trace.push(chain.trace_row(&start, reference)?);
    }
    let estimate = acc.estimate(config.aggregation)?;
    let entry_uncertainty = if track && acc.count() >= 2 {
        Some(acc.uncertainty(y.shape())?)
    } else {
        None
    };
    Ok(CompletionResult {
        estimated_rank: estimate_rank(estimate.lowrank.lambda(), config.rank_threshold),
        completed: estimate.completed,
        lowrank_mean: estimate.lowrank,
        residual_mean: estimate.residual,
        entry_uncertainty,
        mixture_summary: acc.mixture_summary(),
        trace,
    })
}

/// Writes the trace as CSV with columns `iter,rre,active_rank,D,seconds`.
pub fn write_trace_csv<W: Write>(w: &mut W, trace: &[TraceRow]) -> Result<()> {
    writeln!(w, "iter,rre,active_rank,D,seconds")?;
    for row in trace {
        let rre = row.rre.map(|v| format!("{v:.10e}")).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{:.6}",
            row.iter, rre, row.active_rank, row.components, row.seconds
        )?;
    }
    Ok(())
}
