//! Row-similarity prior that pulls each factor row toward a weighted
//! average of its neighbouring rows.

use crate::error::{Error, Result};

/// Column-normalized `n × n` neighbour weights with a zero diagonal.
/// Column `i` holds the weights `w_ji` used for row `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialWeights {
    n: usize,
    data: Vec<f64>,
}

impl SpatialWeights {
    pub fn rows(&self) -> usize {
        self.n
    }

    /// Weights `w_·i` applied to the other rows when updating row `i`.
    #[inline]
    pub fn column(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// Gaussian weights `w_ji ∝ exp(-2ρ (i - j)²)` with `ρ = 1 - missing_ratio`.
///
/// Returns `None` for a single-row mode, which has no neighbours.
pub fn build_spatial_weights(n: usize, missing_ratio: f64) -> Result<Option<SpatialWeights>> {
    if !(0.0..=1.0).contains(&missing_ratio) {
        return Err(Error::Parameter(format!(
            "missing ratio {missing_ratio} outside [0, 1]"
        )));
    }
    if n == 0 {
        return Err(Error::Parameter("spatial weights need at least one row".into()));
    }
    if n == 1 {
        return Ok(None);
    }
    let rho = 1.0 - missing_ratio;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        let col = &mut data[i * n..(i + 1) * n];
        for (j, w) in col.iter_mut().enumerate() {
            if j != i {
                let d = j as f64 - i as f64;
                *w = (-2.0 * rho * d * d).exp();
            }
        }
        let total: f64 = col.iter().sum();
        col.iter_mut().for_each(|w| *w /= total);
    }
    Ok(Some(SpatialWeights { n, data }))
}

/// Spatial prior settings: strength `eta0` and per-mode weights
/// (`None` disables the prior on that mode).
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialPrior {
    pub eta0: f64,
    pub weights: Vec<Option<SpatialWeights>>,
}

impl SpatialPrior {
    /// Builds weights for every mode flagged in `enabled`.
    pub fn new(eta0: f64, dims: &[usize], enabled: &[bool], missing_ratio: f64) -> Result<Self> {
        if !(eta0 >= 0.0 && eta0.is_finite()) {
            return Err(Error::Parameter(format!("eta0 must be non-negative, got {eta0}")));
        }
        if dims.len() != enabled.len() {
            return Err(Error::Parameter(format!(
                "{} mode flags for {} modes",
                enabled.len(),
                dims.len()
            )));
        }
        let weights = dims
            .iter()
            .zip(enabled)
            .map(|(&n, &on)| {
                if on {
                    build_spatial_weights(n, missing_ratio)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { eta0, weights })
    }

    pub fn mode(&self, k: usize) -> Option<&SpatialWeights> {
        self.weights.get(k).and_then(Option::as_ref)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn middle_row_splits_evenly() {
        let w = build_spatial_weights(3, 0.5).unwrap().unwrap();
        let col = w.column(1);
        assert!((col[0] - 0.5).abs() < 1e-15);
        assert_eq!(col[1], 0.0);
        assert!((col[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fully_missing_gives_uniform_weights() {
        let w = build_spatial_weights(5, 1.0).unwrap().unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expected = if i == j { 0.0 } else { 0.25 };
                assert!((w.get(j, i) - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn distance_ratio_matches_closed_form() {
        for missing in [0.0, 0.3, 0.7] {
            let rho: f64 = 1.0 - missing;
            let w = build_spatial_weights(8, missing).unwrap().unwrap();
            let ratio = w.get(4, 3) / w.get(5, 3);
            assert!((ratio / (6.0 * rho).exp() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_row_disables_prior() {
        assert!(build_spatial_weights(1, 0.2).unwrap().is_none());
        let prior = SpatialPrior::new(1e3, &[4, 1, 3], &[true, true, false], 0.5).unwrap();
        assert!(prior.mode(0).is_some());
        assert!(prior.mode(1).is_none());
        assert!(prior.mode(2).is_none());
    }

    proptest! {
        #[test]
        fn columns_normalized_with_zero_diagonal(n in 2usize..40, missing in 0.0f64..=1.0) {
            let w = build_spatial_weights(n, missing).unwrap().unwrap();
            for i in 0..n {
                prop_assert_eq!(w.get(i, i), 0.0);
                let total: f64 = w.column(i).iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }
}
