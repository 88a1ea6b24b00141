//! Gibbs conditionals for the mixture-of-Gaussians residual `E`: entries,
//! component means and precisions, indicators and mixing proportions.

use crate::error::{Error, Result};
use crate::lowrank::HyperParams;
use crate::observed::ObservedData;
use crate::random::{
    sample_categorical, sample_categorical_log, sample_dirichlet, sample_gaussian, GammaParams, NormalParams, RngStream,
};
use crate::tensor::{DenseTensor, TensorShape};

/// Largest supported number of mixture components.
pub const MAX_COMPONENTS: usize = u8::MAX as usize;

/// Current values of all mixture latent variables.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureState {
    pub means: Vec<f64>,
    pub precisions: Vec<f64>,
    pub proportions: Vec<f64>,
    /// Component label of each tensor entry, row-major.
    pub indicators: Vec<u8>,
    pub residual: DenseTensor,
}

/// Member count and member sum of one component.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ComponentStats {
    pub count: usize,
    pub sum: f64,
}

impl MixtureState {
    /// Starting point of a chain: `D` components with mean 0 and precision 1,
    /// uniform proportions, `E = 0` and indicators drawn from the proportions.
    pub fn initial(shape: &TensorShape, components: usize, rng: &mut RngStream) -> Result<Self> {
        if components == 0 || components > MAX_COMPONENTS {
            return Err(Error::Parameter(format!(
                "component count {components} outside 1..={MAX_COMPONENTS}"
            )));
        }
        let indicators = (0..shape.len()).map(|_| rng.below(components) as u8).collect();
        Ok(Self {
            means: vec![0.0; components],
            precisions: vec![1.0; components],
            proportions: vec![1.0 / components as f64; components],
            indicators,
            residual: DenseTensor::zeros(shape.clone()),
        })
    }

    pub fn components(&self) -> usize {
        self.means.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.components();
        if d == 0 || self.precisions.len() != d || self.proportions.len() != d {
            return Err(Error::Shape(format!(
                "component vectors have lengths {}/{}/{}",
                d,
                self.precisions.len(),
                self.proportions.len()
            )));
        }
        if self.indicators.len() != self.residual.len() {
            return Err(Error::Shape("one indicator per residual entry required".into()));
        }
        if !self.precisions.iter().all(|t| *t > 0.0 && t.is_finite()) {
            return Err(Error::Precondition("component precisions must be positive".into()));
        }
        let total: f64 = self.proportions.iter().sum();
        if self.proportions.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Precondition(format!(
                "proportions {:?} are not a distribution",
                self.proportions
            )));
        }
        if self.indicators.iter().any(|&z| z as usize >= d) {
            return Err(Error::Precondition("indicator out of range".into()));
        }
        Ok(())
    }

    /// Number of entries assigned to each component.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.components()];
        for &z in &self.indicators {
            counts[z as usize] += 1;
        }
        counts
    }

    pub fn component_stats(&self) -> Vec<ComponentStats> {
        let mut stats = vec![ComponentStats::default(); self.components()];
        for (&z, &e) in self.indicators.iter().zip(self.residual.values()) {
            let s = &mut stats[z as usize];
            s.count += 1;
            s.sum += e;
        }
        stats
    }

    fn scatter(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.components()];
        for (&z, &e) in self.indicators.iter().zip(self.residual.values()) {
            let dev = e - self.means[z as usize];
            out[z as usize] += dev * dev;
        }
        out
    }

    /// Conditional of `e_i` given its component; `data_diff` is `y_i - x_i`
    /// for an observed entry and `None` otherwise.
    pub fn residual_conditional(&self, entry: usize, data_diff: Option<f64>, tau0: f64) -> NormalParams {
        let z = self.indicators[entry] as usize;
        let (tau, mu) = (self.precisions[z], self.means[z]);
        match data_diff {
            Some(diff) => {
                let precision = tau0 + tau;
                NormalParams {
                    mean: (tau0 * diff + tau * mu) / precision,
                    precision,
                }
            }
            None => NormalParams {
                mean: mu,
                precision: tau,
            },
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn sample_residual_entry(
        &mut self,
        entry: usize,
        y_entry: f64,
        x_entry: f64,
        observed: bool,
        tau0: f64,
        rng: &mut RngStream,
    ) -> Result<f64> {
        let diff = observed.then_some(y_entry - x_entry);
        let e = self.residual_conditional(entry, diff, tau0).sample(rng)?;
        self.residual.values_mut()[entry] = e;
        Ok(e)
    }

    /// Redraws every entry of `E`; `fit` holds the CP reconstruction at the
    /// observed entries of `data`.
    pub fn sample_residuals(&mut self, data: &ObservedData, fit: &[f64], tau0: f64, rng: &mut RngStream) -> Result<()> {
        let flat = data.flat();
        let y = data.values();
        let mut next = 0;
        for entry in 0..self.residual.len() {
            let diff = if next < flat.len() && flat[next] == entry {
                next += 1;
                Some(y[next - 1] - fit[next - 1])
            } else {
                None
            };
            let e = self.residual_conditional(entry, diff, tau0).sample(rng)?;
            self.residual.values_mut()[entry] = e;
        }
        Ok(())
    }

    fn mean_conditional(&self, d: usize, stats: &ComponentStats, hyper: &HyperParams) -> NormalParams {
        let tau = self.precisions[d];
        let precision = tau * (stats.count as f64 + hyper.beta0);
        NormalParams {
            mean: tau * (stats.sum + hyper.beta0 * hyper.mu0) / precision,
            precision,
        }
    }

    fn precision_conditional(&self, d: usize, count: usize, scatter: f64, hyper: &HyperParams) -> GammaParams {
        let dev = self.means[d] - hyper.mu0;
        GammaParams {
            shape: hyper.a0 + (count as f64 + 1.0) / 2.0,
            rate: hyper.b0 + (scatter + hyper.beta0 * dev * dev) / 2.0,
        }
    }

    pub fn component_mean_conditional(&self, d: usize, hyper: &HyperParams) -> NormalParams {
        self.mean_conditional(d, &self.component_stats()[d], hyper)
    }

    /// Conditional of `τ_d`, using the squared deviations of the members
    /// from the current `μ_d`.
    pub fn component_precision_conditional(&self, d: usize, hyper: &HyperParams) -> GammaParams {
        let count = self.counts()[d];
        self.precision_conditional(d, count, self.scatter()[d], hyper)
    }

    pub fn sample_component_mean(&mut self, d: usize, hyper: &HyperParams, rng: &mut RngStream) -> Result<f64> {
        let m = self.component_mean_conditional(d, hyper).sample(rng)?;
        self.means[d] = m;
        Ok(m)
    }

    pub fn sample_component_precision(&mut self, d: usize, hyper: &HyperParams, rng: &mut RngStream) -> Result<f64> {
        let t = self.component_precision_conditional(d, hyper).sample(rng)?;
        self.precisions[d] = t;
        Ok(t)
    }

    /// Redraws all `μ_d`, then all `τ_d`, with one pass over the entries
    /// for each group.
    pub fn sample_component_params(&mut self, hyper: &HyperParams, rng: &mut RngStream) -> Result<()> {
        let stats = self.component_stats();
        for (d, s) in stats.iter().enumerate() {
            self.means[d] = self.mean_conditional(d, s, hyper).sample(rng)?;
        }
        let scatter = self.scatter();
        for d in 0..self.components() {
            self.precisions[d] = self
                .precision_conditional(d, stats[d].count, scatter[d], hyper)
                .sample(rng)?;
        }
        Ok(())
    }

    /// Unnormalized log responsibilities `ln π_d + ln N(e | μ_d, 1/τ_d)`,
    /// up to the shared `-ln(2π)/2`.
    pub fn log_responsibilities(&self, e: f64, out: &mut Vec<f64>) {
        out.clear();
        for d in 0..self.components() {
            let (pi, mu, tau) = (self.proportions[d], self.means[d], self.precisions[d]);
            let dev = e - mu;
            out.push(pi.ln() + 0.5 * tau.ln() - 0.5 * tau * dev * dev);
        }
    }

    /// Normalized responsibilities of each component for the value `e`.
    pub fn responsibilities(&self, e: f64) -> Vec<f64> {
        let mut logs = Vec::with_capacity(self.components());
        self.log_responsibilities(e, &mut logs);
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        p
    }

    pub fn sample_indicator(&self, e: f64, rng: &mut RngStream, scratch: &mut Vec<f64>) -> usize {
        self.log_responsibilities(e, scratch);
        let mut weights = Vec::with_capacity(scratch.len());
        sample_categorical_log(rng, scratch, &mut weights)
    }

    pub fn sample_indicators(&mut self, rng: &mut RngStream) {
        let mut logs = Vec::with_capacity(self.components());
        let mut weights = Vec::with_capacity(self.components());
        for entry in 0..self.indicators.len() {
            self.log_responsibilities(self.residual.values()[entry], &mut logs);
            self.indicators[entry] = sample_categorical_log(rng, &logs, &mut weights) as u8;
        }
    }

    /// Redraws `π ~ Dirichlet(N_d + α0_d)`.
    pub fn sample_proportions(&mut self, alpha0: &[f64], rng: &mut RngStream) -> Result<&[f64]> {
        if alpha0.len() != self.components() {
            return Err(Error::Parameter(format!(
                "{} concentration values for {} components",
                alpha0.len(),
                self.components()
            )));
        }
        let alpha: Vec<f64> = self.counts().iter().zip(alpha0).map(|(&n, &a)| n as f64 + a).collect();
        self.proportions = sample_dirichlet(rng, &alpha)?;
        Ok(&self.proportions)
    }

    /// Removes components whose occupancy `N_d / N` is below `min_weight`.
    ///
    /// Entries of removed components are reassigned by sampling from the
    /// surviving components' responsibilities, and the surviving proportions
    /// are renormalized. At least the most occupied component is kept.
    /// Returns the keep mask over the old components.
    pub fn tune_component_count(&mut self, min_weight: f64, rng: &mut RngStream) -> Result<Vec<bool>> {
        let d = self.components();
        let counts = self.counts();
        let n = self.indicators.len() as f64;
        let mut keep: Vec<bool> = counts.iter().map(|&c| c as f64 / n >= min_weight).collect();
        if !keep.iter().any(|&k| k) {
            let best = (0..d).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap_or(0);
            keep[best] = true;
        }
        if keep.iter().all(|&k| k) {
            return Ok(keep);
        }

        let mut relabel = vec![u8::MAX; d];
        let mut next = 0u8;
        for j in 0..d {
            if keep[j] {
                relabel[j] = next;
                next += 1;
            }
        }
        let filter = |v: &Vec<f64>| {
            v.iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(x, _)| *x)
                .collect::<Vec<_>>()
        };
        self.means = filter(&self.means);
        self.precisions = filter(&self.precisions);
        let mut props = filter(&self.proportions);
        let total: f64 = props.iter().sum();
        if total > 0.0 {
            props.iter_mut().for_each(|p| *p /= total);
        } else {
            let len = props.len() as f64;
            props.iter_mut().for_each(|p| *p = 1.0 / len);
        }
        self.proportions = props;

        let mut logs = Vec::new();
        let mut weights = Vec::new();
        for entry in 0..self.indicators.len() {
            let old = self.indicators[entry] as usize;
            self.indicators[entry] = if keep[old] {
                relabel[old]
            } else {
                self.log_responsibilities(self.residual.values()[entry], &mut logs);
                sample_categorical_log(rng, &logs, &mut weights) as u8
            };
        }
        Ok(keep)
    }

    /// Like [`sweep`](Self::sweep), but `μ_d`, `τ_d`, `z` and `π` are updated
    /// from the observed entries alone, with the unobserved `(z_i, e_i)`
    /// integrated out; those are then drawn from their prior under the new
    /// parameters.
    pub fn sweep_observed(
        &mut self,
        data: &ObservedData,
        fit: &[f64],
        hyper: &HyperParams,
        alpha0: &[f64],
        rng: &mut RngStream,
    ) -> Result<()> {
        if alpha0.len() != self.components() {
            return Err(Error::Parameter(format!(
                "{} concentration values for {} components",
                alpha0.len(),
                self.components()
            )));
        }
        let flat = data.flat();
        for ((&f, &y), &x) in flat.iter().zip(data.values()).zip(fit) {
            self.sample_residual_entry(f, y, x, true, hyper.tau0, rng)?;
        }
        let d = self.components();
        let mut stats = vec![ComponentStats::default(); d];
        for &f in flat {
            let s = &mut stats[self.indicators[f] as usize];
            s.count += 1;
            s.sum += self.residual.values()[f];
        }
        for (j, s) in stats.iter().enumerate() {
            self.means[j] = self.mean_conditional(j, s, hyper).sample(rng)?;
        }
        let mut scatter = vec![0.0; d];
        for &f in flat {
            let z = self.indicators[f] as usize;
            let dev = self.residual.values()[f] - self.means[z];
            scatter[z] += dev * dev;
        }
        for j in 0..d {
            self.precisions[j] = self
                .precision_conditional(j, stats[j].count, scatter[j], hyper)
                .sample(rng)?;
        }
        let mut logs = Vec::with_capacity(d);
        let mut weights = Vec::with_capacity(d);
        let mut counts = vec![0usize; d];
        for &f in flat {
            self.log_responsibilities(self.residual.values()[f], &mut logs);
            let z = sample_categorical_log(rng, &logs, &mut weights);
            self.indicators[f] = z as u8;
            counts[z] += 1;
        }
        let alpha: Vec<f64> = counts.iter().zip(alpha0).map(|(&n, &a)| n as f64 + a).collect();
        self.proportions = sample_dirichlet(rng, &alpha)?;

        let mut next = 0;
        for entry in 0..self.residual.len() {
            if next < flat.len() && flat[next] == entry {
                next += 1;
                continue;
            }
            let z = sample_categorical(rng, &self.proportions)?;
            self.indicators[entry] = z as u8;
            self.residual.values_mut()[entry] = sample_gaussian(rng, self.means[z], self.precisions[z])?;
        }
        Ok(())
    }

    /// One pass over the mixture variables in the order
    /// `E`, `μ_d`, `τ_d`, `z`, `π`.
    pub fn sweep(
        &mut self,
        data: &ObservedData,
        fit: &[f64],
        hyper: &HyperParams,
        alpha0: &[f64],
        rng: &mut RngStream,
    ) -> Result<()> {
        self.sample_residuals(data, fit, hyper.tau0, rng)?;
        self.sample_component_params(hyper, rng)?;
        self.sample_indicators(rng);
        self.sample_proportions(alpha0, rng)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ObservationMask;

    fn state(values: Vec<f64>, indicators: Vec<u8>, d: usize) -> MixtureState {
        let shape = TensorShape::new(vec![values.len(), 1]).unwrap();
        MixtureState {
            means: vec![0.0; d],
            precisions: vec![1.0; d],
            proportions: vec![1.0 / d as f64; d],
            indicators,
            residual: DenseTensor::new(shape, values).unwrap(),
        }
    }

    fn unit_hyper() -> HyperParams {
        HyperParams {
            mu0: 0.0,
            beta0: 1.0,
            a0: 1.0,
            b0: 1.0,
            tau0: 1.0,
        }
    }

    /// Responsibilities straight from the normalized density products.
    fn direct_responsibilities(mix: &MixtureState, e: f64) -> Vec<f64> {
        let w: Vec<f64> = (0..mix.components())
            .map(|d| {
                let tau = mix.precisions[d];
                let dev = e - mix.means[d];
                mix.proportions[d] * (tau / (2.0 * std::f64::consts::PI)).sqrt() * (-0.5 * tau * dev * dev).exp()
            })
            .collect();
        let total: f64 = w.iter().sum();
        w.iter().map(|v| v / total).collect()
    }

    #[test]
    fn residual_conditionals() {
        let mix = state(vec![0.0, 0.0], vec![0, 0], 1);
        let c = mix.residual_conditional(0, Some(4.0), 1.0);
        assert_eq!(
            c,
            NormalParams {
                mean: 2.0,
                precision: 2.0
            }
        );
        let prior = mix.residual_conditional(1, None, 1.0);
        assert_eq!(
            prior,
            NormalParams {
                mean: 0.0,
                precision: 1.0
            }
        );

        let mut mix = mix;
        let mut rng = RngStream::new(1);
        for _ in 0..1000 {
            let e = mix.sample_residual_entry(0, 5.0, 1.0, true, 1e8, &mut rng).unwrap();
            assert!((e - 4.0).abs() < 1e-3);
        }
    }

    #[test]
    fn component_mean_and_precision_conditionals() {
        let hyper = unit_hyper();
        let mix = state(vec![1.0, 3.0, 9.0], vec![0, 0, 1], 2);
        let m = mix.component_mean_conditional(0, &hyper);
        assert!((m.precision - 3.0).abs() < 1e-12);
        assert!((m.mean - 4.0 / 3.0).abs() < 1e-12);

        let mut mix = state(vec![0.0, 2.0, 9.0], vec![0, 0, 1], 2);
        mix.means[0] = 1.0;
        let p = mix.component_precision_conditional(0, &hyper);
        assert!((p.shape - 2.5).abs() < 1e-12);
        assert!((p.rate - 2.5).abs() < 1e-12);
    }

    #[test]
    fn empty_component_reverts_to_prior() {
        let hyper = HyperParams {
            mu0: 0.5,
            ..unit_hyper()
        };
        let mut mix = state(vec![1.0, 2.0], vec![0, 0], 2);
        mix.precisions[1] = 4.0;
        mix.means[1] = 0.5;
        let m = mix.component_mean_conditional(1, &hyper);
        assert_eq!(
            m,
            NormalParams {
                mean: 0.5,
                precision: 4.0
            }
        );
        let p = mix.component_precision_conditional(1, &hyper);
        assert_eq!((p.shape, p.rate), (1.5, 1.0));
    }

    #[test]
    fn doubling_deviations_quarters_precision_mean() {
        let hyper = HyperParams {
            a0: 1e-6,
            b0: 1e-6,
            beta0: 1e-6,
            ..unit_hyper()
        };
        let narrow = state(vec![-1.0, 1.0, -1.0, 1.0], vec![0; 4], 1);
        let wide = state(vec![-2.0, 2.0, -2.0, 2.0], vec![0; 4], 1);
        let ratio = narrow.component_precision_conditional(0, &hyper).mean()
            / wide.component_precision_conditional(0, &hyper).mean();
        assert!((ratio - 4.0).abs() < 1e-4);
    }

    #[test]
    fn responsibilities_match_direct_evaluation() {
        let mut mix = state(vec![0.0], vec![0], 3);
        mix.means = vec![-1.0, 0.3, 2.0];
        mix.precisions = vec![0.5, 3.0, 10.0];
        mix.proportions = vec![0.2, 0.5, 0.3];
        for e in [-3.0, -0.5, 0.0, 0.7, 1.9, 2.5] {
            let log_path = mix.responsibilities(e);
            let direct = direct_responsibilities(&mix, e);
            let total: f64 = log_path.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            for (a, b) in log_path.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-12, "{log_path:?} vs {direct:?}");
            }
        }
    }

    #[test]
    fn responsibilities_survive_underflow() {
        let mut mix = state(vec![0.0], vec![0], 2);
        mix.means = vec![0.0, 1e3];
        mix.precisions = vec![1e5, 1e5];
        let p = mix.responsibilities(500.1);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!(p[1] > 0.999);
        let mut rng = RngStream::new(1);
        let mut scratch = Vec::new();
        assert_eq!(mix.sample_indicator(500.1, &mut rng, &mut scratch), 1);
    }

    #[test]
    fn indicator_frequencies() {
        let mut rng = RngStream::new(4);
        let mut scratch = Vec::new();
        let mut mix = state(vec![0.0], vec![0], 2);
        mix.precisions = vec![1e6, 1.0];
        mix.means = vec![0.0, 50.0];
        let hits = (0..100_000)
            .filter(|_| mix.sample_indicator(0.0, &mut rng, &mut scratch) == 0)
            .count();
        assert!(hits as f64 / 1e5 > 0.999);

        let same = state(vec![0.0], vec![0], 2);
        let ones = (0..100_000)
            .filter(|_| same.sample_indicator(0.3, &mut rng, &mut scratch) == 1)
            .count();
        assert!((ones as f64 / 1e5 - 0.5).abs() < 0.01);
    }

    #[test]
    fn proportions_follow_dirichlet_counts() {
        let mut mix = state(vec![0.0; 8], vec![0, 0, 0, 1, 1, 1, 1, 1], 2);
        let mut rng = RngStream::new(8);
        let mut sum = [0.0; 2];
        let n = 200_000;
        for _ in 0..n {
            let p = mix.sample_proportions(&[1.0, 1.0], &mut rng).unwrap();
            sum[0] += p[0];
            sum[1] += p[1];
        }
        assert!((sum[0] / n as f64 - 0.4).abs() < 0.004);
        assert!((sum[1] / n as f64 - 0.6).abs() < 0.006);
        assert!(mix.sample_proportions(&[1.0], &mut rng).is_err());
    }

    #[test]
    fn pruning_drops_sparse_components_and_relabels() {
        let n = 2000;
        let mut indicators = vec![0u8; n];
        indicators[..900].fill(2);
        indicators[1999] = 1;
        let mut mix = state(vec![0.1; n], indicators, 3);
        mix.means = vec![0.0, 5.0, 0.2];
        mix.proportions = vec![0.5, 0.1, 0.4];
        let mut rng = RngStream::new(3);
        let keep = mix.tune_component_count(1e-3, &mut rng).unwrap();
        assert_eq!(keep, vec![true, false, true]);
        assert_eq!(mix.components(), 2);
        assert_eq!(mix.means, vec![0.0, 0.2]);
        assert!((mix.proportions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(mix.counts().iter().sum::<usize>(), n);
        assert_eq!(mix.counts()[1], 900);
        mix.validate().unwrap();

        // Nothing to prune: unchanged.
        let before = mix.clone();
        mix.tune_component_count(1e-3, &mut rng).unwrap();
        assert_eq!(mix, before);
    }

    #[test]
    fn single_component_is_never_pruned() {
        let mut mix = state(vec![0.0; 4], vec![0; 4], 1);
        let mut rng = RngStream::new(3);
        let keep = mix.tune_component_count(0.9, &mut rng).unwrap();
        assert_eq!(keep, vec![true]);
        // Even a threshold nothing passes keeps the most occupied component.
        let mut mix = state(vec![0.0; 4], vec![0, 1, 1, 1], 2);
        let keep = mix.tune_component_count(2.0, &mut rng).unwrap();
        assert_eq!(keep, vec![false, true]);
        assert_eq!(mix.indicators, vec![0; 4]);
    }

    #[test]
    fn sweep_preserves_invariants() {
        let shape = TensorShape::new(vec![5, 4, 3]).unwrap();
        let y = DenseTensor::from_fn(shape.clone(), |i| {
            if (i[0] + i[1]) % 7 == 0 {
                3.0
            } else {
                0.01 * i[2] as f64
            }
        })
        .unwrap();
        let flags = (0..60).map(|f| f % 3 != 0).collect();
        let data = ObservedData::new(&y, &ObservationMask::new(shape.clone(), flags).unwrap()).unwrap();
        let fit = vec![0.0; data.len()];
        let mut rng = RngStream::new(6);
        let mut mix = MixtureState::initial(&shape, 4, &mut rng).unwrap();
        let hyper = HyperParams::default();
        for _ in 0..20 {
            mix.sweep(&data, &fit, &hyper, &[1e-6; 4], &mut rng).unwrap();
            mix.validate().unwrap();
        }
        for (&f, &y) in data.flat().iter().zip(data.values()) {
            assert!((mix.residual.values()[f] - y).abs() < 0.5);
        }
    }

    #[test]
    fn observed_sweep_draws_missing_entries_from_prior() {
        let shape = TensorShape::new(vec![40, 30, 20]).unwrap();
        let y = DenseTensor::from_fn(shape.clone(), |i| if (i[0] * 7 + i[1]) % 5 == 0 { 2.0 } else { -0.5 }).unwrap();
        let flags = (0..24_000).map(|f| f % 4 == 0).collect();
        let data = ObservedData::new(&y, &ObservationMask::new(shape.clone(), flags).unwrap()).unwrap();
        let fit = vec![0.0; data.len()];
        let mut rng = RngStream::new(12);
        let mut mix = MixtureState::initial(&shape, 2, &mut rng).unwrap();
        let hyper = HyperParams::default();
        for _ in 0..10 {
            mix.sweep_observed(&data, &fit, &hyper, &[1.0; 2], &mut rng).unwrap();
            mix.validate().unwrap();
        }
        for (&f, &y) in data.flat().iter().zip(data.values()) {
            assert!((mix.residual.values()[f] - y).abs() < 0.5);
        }
        let missing: Vec<usize> = (0..24_000).filter(|f| f % 4 != 0).collect();
        let n = missing.len() as f64;
        let in_first = missing.iter().filter(|&&f| mix.indicators[f] == 0).count() as f64;
        let p0 = mix.proportions[0];
        assert!((in_first / n - p0).abs() < 5.0 * (p0 * (1.0 - p0) / n).sqrt());
        let z: Vec<f64> = missing
            .iter()
            .map(|&f| {
                let d = mix.indicators[f] as usize;
                (mix.residual.values()[f] - mix.means[d]) * mix.precisions[d].sqrt()
            })
            .collect();
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.03, "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }
}
