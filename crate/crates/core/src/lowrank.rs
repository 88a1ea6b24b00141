//! Gibbs conditionals for the CP part of the model: weights `λ`, their
//! reweighted-Laplace hyperparameters `γ`, `κ`, the factor matrices and the
//! Gaussian-Gamma hyperparameters `μ^(k)`, `τ^(k)` of the factor entries.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observed::ObservedData;
use crate::random::{sample_gig_half, GammaParams, NormalParams, RngStream};
use crate::spatial::SpatialPrior;
use crate::tensor::{CpFactors, TensorShape};

/// Floor applied to sampled `γ_r` and `κ_r`.
pub const SCALE_FLOOR: f64 = 1e-12;

/// Prior hyperparameters shared by the low-rank and mixture samplers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub mu0: f64,
    pub beta0: f64,
    pub a0: f64,
    pub b0: f64,
    /// Observation noise precision.
    pub tau0: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            mu0: 0.0,
            beta0: 1e-6,
            a0: 1e-6,
            b0: 1e-6,
            tau0: 1e3,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !self.mu0.is_finite() {
            return Err(Error::Parameter(format!("mu0 must be finite, got {}", self.mu0)));
        }
        for (name, v) in [
            ("beta0", self.beta0),
            ("a0", self.a0),
            ("b0", self.b0),
            ("tau0", self.tau0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Current values of all low-rank latent variables.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankState {
    pub cp: CpFactors,
    /// Prior variances of `λ`.
    pub gamma: Vec<f64>,
    /// Reweighting parameters.
    pub kappa: Vec<f64>,
    /// `μ^(k)`, one per mode.
    pub factor_mean: Vec<f64>,
    /// `τ^(k)`, one per mode.
    pub factor_precision: Vec<f64>,
}

impl LowRankState {
    pub fn new(
        cp: CpFactors,
        gamma: Vec<f64>,
        kappa: Vec<f64>,
        factor_mean: Vec<f64>,
        factor_precision: Vec<f64>,
    ) -> Result<Self> {
        let state = Self {
            cp,
            gamma,
            kappa,
            factor_mean,
            factor_precision,
        };
        state.validate()?;
        Ok(state)
    }

    /// Starting point of a chain: every factor entry, weight, `γ`, `κ` and
    /// `τ^(k)` set to one, `μ^(k)` set to zero.
    pub fn initial(shape: &TensorShape, rank: usize) -> Self {
        let k = shape.order();
        Self {
            cp: CpFactors::filled(shape, rank, 1.0),
            gamma: vec![1.0; rank],
            kappa: vec![1.0; rank],
            factor_mean: vec![0.0; k],
            factor_precision: vec![1.0; k],
        }
    }

    pub fn rank(&self) -> usize {
        self.cp.rank()
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.cp.rank();
        let k = self.cp.order();
        if self.gamma.len() != r || self.kappa.len() != r {
            return Err(Error::Shape(format!(
                "gamma/kappa lengths {}/{} do not match rank {r}",
                self.gamma.len(),
                self.kappa.len()
            )));
        }
        if self.factor_mean.len() != k || self.factor_precision.len() != k {
            return Err(Error::Shape(format!(
                "factor hyperparameter lengths {}/{} do not match order {k}",
                self.factor_mean.len(),
                self.factor_precision.len()
            )));
        }
        let positive = |v: &f64| *v > 0.0 && v.is_finite();
        if !self.gamma.iter().all(positive) || !self.kappa.iter().all(positive) {
            return Err(Error::Precondition("gamma and kappa must be positive".into()));
        }
        if !self.factor_precision.iter().all(positive) {
            return Err(Error::Precondition("factor precisions must be positive".into()));
        }
        Ok(())
    }

    /// Drops CP columns whose `keep` flag is false, together with their
    /// `γ` and `κ`.
    pub fn retain_components(&mut self, keep: &[bool]) {
        self.cp.retain_components(keep);
        let mut it = keep.iter();
        self.gamma.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.kappa.retain(|_| *it.next().unwrap());
    }

    /// Energy `|λ_r| Π_k ‖u^(k)_r‖` of each column.
    pub fn column_energies(&self) -> Vec<f64> {
        (0..self.rank())
            .map(|r| {
                let norms: f64 = self
                    .cp
                    .factors()
                    .iter()
                    .map(|f| f.column(r).map(|u| u * u).sum::<f64>().sqrt())
                    .product();
                self.cp.lambda()[r].abs() * norms
            })
            .collect()
    }

    /// Folds together columns whose factors are collinear in every mode
    /// (`|cos| ≥ min_cosine`). The weaker column is projected onto the
    /// stronger one's rank-one direction and dropped. Returns the keep
    /// flags, or `None` when nothing was merged.
    pub fn merge_collinear_columns(&mut self, min_cosine: f64) -> Option<Vec<bool>> {
        let rank = self.rank();
        let columns: Vec<Vec<Vec<f64>>> = (0..rank)
            .map(|r| self.cp.factors().iter().map(|f| f.column(r).collect()).collect())
            .collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let energies = self.column_energies();
        let mut order: Vec<usize> = (0..rank).collect();
        order.sort_by(|&a, &b| energies[b].total_cmp(&energies[a]));
        let mut keep = vec![true; rank];
        for (pos, &a) in order.iter().enumerate() {
            if !keep[a] {
                continue;
            }
            for &b in &order[pos + 1..] {
                if !keep[b] {
                    continue;
                }
                let mut gain = 1.0;
                let mut collinear = true;
                for (ua, ub) in columns[a].iter().zip(&columns[b]) {
                    let (aa, bb, ab) = (dot(ua, ua), dot(ub, ub), dot(ua, ub));
                    if aa == 0.0 || bb == 0.0 || ab.abs() < min_cosine * (aa * bb).sqrt() {
                        collinear = false;
                        break;
                    }
                    gain *= ab / aa;
                }
                if collinear {
                    let lb = self.cp.lambda()[b];
                    self.cp.lambda_mut()[a] += lb * gain;
                    keep[b] = false;
                }
            }
        }
        if keep.iter().all(|&k| k) {
            return None;
        }
        self.retain_components(&keep);
        Some(keep)
    }
}

/// Conditional of `γ_r`: GIG(1/2) with `a = κ_r`, `b = λ_r²`.
/// Its mean is `|λ_r| / √κ_r + 1 / κ_r`.
pub fn gamma_conditional_mean(lambda: f64, kappa: f64) -> f64 {
    lambda.abs() / kappa.sqrt() + 1.0 / kappa
}

pub fn sample_gamma_entry(state: &mut LowRankState, r: usize, rng: &mut RngStream) -> Result<f64> {
    let lambda = state.cp.lambda()[r];
    let g = sample_gig_half(rng, state.kappa[r], lambda * lambda)?.max(SCALE_FLOOR);
    state.gamma[r] = g;
    Ok(g)
}

/// Conditional of `κ_r`: density `∝ κ exp(-γ_r κ / 2)`.
pub fn kappa_conditional(gamma: f64) -> GammaParams {
    GammaParams {
        shape: 2.0,
        rate: 0.5 * gamma,
    }
}

pub fn sample_kappa_entry(state: &mut LowRankState, r: usize, rng: &mut RngStream) -> Result<f64> {
    let k = kappa_conditional(state.gamma[r]).sample(rng)?.max(SCALE_FLOOR);
    state.kappa[r] = k;
    Ok(k)
}

pub fn factor_mean_conditional(state: &LowRankState, k: usize, hyper: &HyperParams) -> NormalParams {
    let u = state.cp.factor(k);
    let tau = state.factor_precision[k];
    let precision = tau * (hyper.beta0 + u.data().len() as f64);
    let sum: f64 = u.data().iter().sum();
    NormalParams {
        mean: tau * (sum + hyper.beta0 * hyper.mu0) / precision,
        precision,
    }
}

pub fn sample_factor_mean(state: &mut LowRankState, k: usize, hyper: &HyperParams, rng: &mut RngStream) -> Result<f64> {
    let m = factor_mean_conditional(state, k, hyper).sample(rng)?;
    state.factor_mean[k] = m;
    Ok(m)
}

pub fn factor_precision_conditional(state: &LowRankState, k: usize, hyper: &HyperParams) -> GammaParams {
    let u = state.cp.factor(k);
    let mu = state.factor_mean[k];
    let scatter: f64 = u.data().iter().map(|v| (v - mu) * (v - mu)).sum();
    let prior = hyper.beta0 * (mu - hyper.mu0) * (mu - hyper.mu0);
    GammaParams {
        shape: hyper.a0 + (u.data().len() as f64 + 1.0) / 2.0,
        rate: hyper.b0 + (scatter + prior) / 2.0,
    }
}

pub fn sample_factor_precision(
    state: &mut LowRankState,
    k: usize,
    hyper: &HyperParams,
    rng: &mut RngStream,
) -> Result<f64> {
    let t = factor_precision_conditional(state, k, hyper).sample(rng)?;
    state.factor_precision[k] = t;
    Ok(t)
}

/// Draws `x ~ N(P⁻¹ h, P⁻¹)` for a symmetric positive definite `P`.
pub fn sample_canonical_gaussian(
    precision: DMatrix<f64>,
    numerator: &DVector<f64>,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    let n = numerator.len();
    let chol = Cholesky::new(precision).ok_or_else(|| Error::Parameter("precision is not positive definite".into()))?;
    let mut draw = chol.solve(numerator);
    // L Lᵀ = P, so Lᵀ x = z gives x ~ N(0, P⁻¹).
    let mut z = DVector::from_fn(n, |_, _| rng.standard_normal());
    chol.l().tr_solve_lower_triangular_mut(&mut z);
    draw += z;
    if !draw.iter().all(|v| v.is_finite()) {
        return Err(Error::Parameter("non-finite Gaussian draw".into()));
    }
    Ok(draw)
}

/// Data-dependent low-rank updates.
///
/// Keeps `x` (the current CP reconstruction), the regression target and the
/// per-entry likelihood precision at the observed entries, so each `λ_r` or
/// `u^(k)_ir` update touches only the entries it affects and leaves the
/// cache consistent.
///
/// Conditioned on `e`, the target is `y - e` with precision `τ0` everywhere.
/// With `e` integrated out under its current mixture component, the target
/// is `y - μ_z` with precision `τ0 τ_z / (τ0 + τ_z)`.
#[derive(Clone, Debug)]
pub struct LowRankSampler<'d> {
    data: &'d ObservedData,
    fit: Vec<f64>,
    target: Vec<f64>,
    weights: Option<Vec<f64>>,
    factor_update: FactorUpdate,
    scratch: Vec<f64>,
}

/// Granularity of the factor-matrix updates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorUpdate {
    /// One entry `u^(k)_ir` at a time.
    Entry,
    /// One row `u^(k)_i·` at a time, jointly over all columns.
    #[default]
    Row,
}

impl<'d> LowRankSampler<'d> {
    /// Sampler with `e = 0` and the fit taken from `state`.
    pub fn new(data: &'d ObservedData, state: &LowRankState) -> Result<Self> {
        if state.cp.shape()? != *data.shape() {
            return Err(Error::Shape(format!(
                "factor shape {:?} does not match data shape {:?}",
                state.cp.shape()?.dims(),
                data.shape().dims()
            )));
        }
        let mut s = Self {
            data,
            fit: Vec::with_capacity(data.len()),
            target: data.values().to_vec(),
            weights: None,
            factor_update: FactorUpdate::default(),
            scratch: Vec::new(),
        };
        s.refresh(state);
        Ok(s)
    }

    pub fn set_factor_update(&mut self, update: FactorUpdate) {
        self.factor_update = update;
    }

    /// Recomputes the cached CP fit from scratch.
    pub fn refresh(&mut self, state: &LowRankState) {
        self.data.evaluate(&state.cp, &mut self.fit);
    }

    /// Sets the residual tensor `e` (full, row-major) the samplers condition on.
    pub fn set_residual(&mut self, e: &[f64]) {
        let y = self.data.values();
        for ((t, &f), &yv) in self.target.iter_mut().zip(self.data.flat()).zip(y) {
            *t = yv - e[f];
        }
        self.weights = None;
    }

    /// Integrates `e` out: entry `j` of the observed set has residual mean
    /// `means[j]` and precision `precisions[j]` (its component's `μ_z`, `τ_z`).
    pub fn set_marginal_residual(&mut self, means: &[f64], precisions: &[f64], tau0: f64) {
        let y = self.data.values();
        for ((t, &m), &yv) in self.target.iter_mut().zip(means).zip(y) {
            *t = yv - m;
        }
        let w = self.weights.get_or_insert_with(Vec::new);
        w.clear();
        w.extend(precisions.iter().map(|&p| tau0 * p / (tau0 + p)));
    }

    fn weight(&self, e: usize, tau0: f64) -> f64 {
        match &self.weights {
            Some(w) => w[e],
            None => tau0,
        }
    }

    /// CP reconstruction at the observed entries.
    pub fn fit(&self) -> &[f64] {
        &self.fit
    }

    /// Conditional of `λ_r`: precision `1/γ_r + Σ w b²`,
    /// mean `Σ w b ỹ / precision`, with `b` the product of the other
    /// factors' column-`r` entries and `w` the likelihood precision (`τ0`
    /// unless the residual is integrated out).
    pub fn lambda_conditional(&mut self, state: &LowRankState, r: usize, tau0: f64) -> NormalParams {
        let lambda = state.cp.lambda()[r];
        let factors = state.cp.factors();
        self.scratch.clear();
        let mut sbb = 0.0;
        let mut sby = 0.0;
        for e in 0..self.data.len() {
            let b: f64 = self
                .data
                .coords(e)
                .iter()
                .zip(factors)
                .map(|(&i, f)| f.get(i as usize, r))
                .product();
            let ytilde = self.target[e] - self.fit[e] + lambda * b;
            let w = self.weight(e, tau0);
            sbb += w * b * b;
            sby += w * b * ytilde;
            self.scratch.push(b);
        }
        let precision = 1.0 / state.gamma[r] + sbb;
        NormalParams {
            mean: sby / precision,
            precision,
        }
    }

    pub fn sample_lambda_entry(
        &mut self,
        state: &mut LowRankState,
        r: usize,
        tau0: f64,
        rng: &mut RngStream,
    ) -> Result<f64> {
        let cond = self.lambda_conditional(state, r, tau0);
        let new = cond.sample(rng)?;
        let delta = new - state.cp.lambda()[r];
        for (x, b) in self.fit.iter_mut().zip(&self.scratch) {
            *x += delta * b;
        }
        state.cp.lambda_mut()[r] = new;
        Ok(new)
    }

    /// Conditional of `u^(k)_ir`, optionally with the neighbour prior
    /// adding `η0` to the precision and `η0 w_iᵀ u_r` to the mean numerator.
    pub fn factor_conditional(
        &mut self,
        state: &LowRankState,
        k: usize,
        i: usize,
        r: usize,
        tau0: f64,
        spatial: Option<&SpatialPrior>,
    ) -> NormalParams {
        let lambda = state.cp.lambda()[r];
        let factors = state.cp.factors();
        let own = factors[k].get(i, r);
        self.scratch.clear();
        let mut scc = 0.0;
        let mut scy = 0.0;
        for &e in self.data.slice(k, i) {
            let e = e as usize;
            let mut c = lambda;
            for (s, (&idx, f)) in self.data.coords(e).iter().zip(factors).enumerate() {
                if s != k {
                    c *= f.get(idx as usize, r);
                }
            }
            let ytilde = self.target[e] - self.fit[e] + c * own;
            let w = self.weight(e, tau0);
            scc += w * c * c;
            scy += w * c * ytilde;
            self.scratch.push(c);
        }
        let tau_k = state.factor_precision[k];
        let mut precision = tau_k + scc;
        let mut numerator = scy + tau_k * state.factor_mean[k];
        if let Some(prior) = spatial {
            if let Some(w) = prior.mode(k) {
                let neighbours: f64 = w.column(i).iter().zip(factors[k].column(r)).map(|(w, u)| w * u).sum();
                precision += prior.eta0;
                numerator += prior.eta0 * neighbours;
            }
        }
        NormalParams {
            mean: numerator / precision,
            precision,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn sample_factor_entry(
        &mut self,
        state: &mut LowRankState,
        k: usize,
        i: usize,
        r: usize,
        tau0: f64,
        spatial: Option<&SpatialPrior>,
        rng: &mut RngStream,
    ) -> Result<f64> {
        let cond = self.factor_conditional(state, k, i, r, tau0, spatial);
        let new = cond.sample(rng)?;
        let delta = new - state.cp.factor(k).get(i, r);
        for (&e, c) in self.data.slice(k, i).iter().zip(&self.scratch) {
            self.fit[e as usize] += delta * c;
        }
        state.cp.factor_mut(k).set(i, r, new);
        Ok(new)
    }

    /// Joint conditional of the row `u^(k)_i·` across all columns: precision
    /// `τ^(k) I + Σ w c cᵀ` (plus `η0 I` with the neighbour prior), with `c_r`
    /// the product of `λ_r` and the other factors' column-`r` entries.
    pub fn factor_row_conditional(
        &mut self,
        state: &LowRankState,
        k: usize,
        i: usize,
        tau0: f64,
        spatial: Option<&SpatialPrior>,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let rank = state.rank();
        let lambda = state.cp.lambda();
        let factors = state.cp.factors();
        let own = factors[k].row(i);
        let tau_k = state.factor_precision[k];
        let mut precision = DMatrix::from_diagonal_element(rank, rank, tau_k);
        let mut numerator = DVector::from_element(rank, tau_k * state.factor_mean[k]);
        self.scratch.clear();
        for &e in self.data.slice(k, i) {
            let e = e as usize;
            let w = self.weight(e, tau0);
            let start = self.scratch.len();
            self.scratch.extend_from_slice(lambda);
            let c = &mut self.scratch[start..];
            for (s, (&idx, f)) in self.data.coords(e).iter().zip(factors).enumerate() {
                if s != k {
                    for (cr, u) in c.iter_mut().zip(f.row(idx as usize)) {
                        *cr *= u;
                    }
                }
            }
            let current: f64 = c.iter().zip(own).map(|(c, u)| c * u).sum();
            let ytilde = self.target[e] - self.fit[e] + current;
            for a in 0..rank {
                let wca = w * c[a];
                numerator[a] += wca * ytilde;
                for b in 0..=a {
                    precision[(a, b)] += wca * c[b];
                }
            }
        }
        if let Some(prior) = spatial {
            if let Some(wts) = prior.mode(k) {
                for r in 0..rank {
                    let neighbours: f64 = wts.column(i).iter().zip(factors[k].column(r)).map(|(w, u)| w * u).sum();
                    precision[(r, r)] += prior.eta0;
                    numerator[r] += prior.eta0 * neighbours;
                }
            }
        }
        precision.fill_upper_triangle_with_lower_triangle();
        (precision, numerator)
    }

    /// Draws the row `u^(k)_i·` jointly from its Gaussian conditional.
    pub fn sample_factor_row(
        &mut self,
        state: &mut LowRankState,
        k: usize,
        i: usize,
        tau0: f64,
        spatial: Option<&SpatialPrior>,
        rng: &mut RngStream,
    ) -> Result<()> {
        let rank = state.rank();
        let (precision, numerator) = self.factor_row_conditional(state, k, i, tau0, spatial);
        let draw = sample_canonical_gaussian(precision, &numerator, rng)
            .map_err(|e| Error::Parameter(format!("mode {k}, row {i}: {e}")))?;
        let old = state.cp.factor(k).row(i).to_vec();
        for (&e, c) in self.data.slice(k, i).iter().zip(self.scratch.chunks_exact(rank)) {
            let delta: f64 = c.iter().zip(draw.iter().zip(&old)).map(|(c, (n, o))| c * (n - o)).sum();
            self.fit[e as usize] += delta;
        }
        state.cp.factor_mut(k).row_mut(i).copy_from_slice(draw.as_slice());
        Ok(())
    }

    /// One pass over all low-rank variables in the order
    /// `λ`, `γ`, `κ`, `U^(k)` (mode, then column, then row), `μ^(k)`, `τ^(k)`.
    pub fn sweep(
        &mut self,
        state: &mut LowRankState,
        hyper: &HyperParams,
        spatial: Option<&SpatialPrior>,
        rng: &mut RngStream,
    ) -> Result<()> {
        self.refresh(state);
        let rank = state.rank();
        for r in 0..rank {
            self.sample_lambda_entry(state, r, hyper.tau0, rng)?;
        }
        for r in 0..rank {
            sample_gamma_entry(state, r, rng)?;
        }
        for r in 0..rank {
            sample_kappa_entry(state, r, rng)?;
        }
        for k in 0..state.cp.order() {
            let rows = state.cp.factor(k).rows();
            match self.factor_update {
                FactorUpdate::Entry => {
                    for r in 0..rank {
                        for i in 0..rows {
                            self.sample_factor_entry(state, k, i, r, hyper.tau0, spatial, rng)?;
                        }
                    }
                }
                FactorUpdate::Row => {
                    for i in 0..rows {
                        self.sample_factor_row(state, k, i, hyper.tau0, spatial, rng)?;
                    }
                }
            }
        }
        for k in 0..state.cp.order() {
            sample_factor_mean(state, k, hyper, rng)?;
        }
        for k in 0..state.cp.order() {
            sample_factor_precision(state, k, hyper, rng)?;
        }
        Ok(())
    }
}
