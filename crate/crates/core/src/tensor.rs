//! Dense K-mode tensors, observation masks and CP factorizations.
//!
//! All flat storage is row-major over the listed mode order: the last mode
//! varies fastest. Multi-indices are zero-based.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Extents `(n_1, ..., n_K)` of a tensor with `K >= 2`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct TensorShape {
    dims: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl TensorShape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.len() < 2 {
            return Err(Error::Shape(format!(
                "tensors need at least 2 modes, got {}",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero-length mode in {dims:?}")));
        }
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Shape(format!("entry count overflows for {dims:?}")))?;
        let mut strides = vec![1; dims.len()];
        for k in (0..dims.len() - 1).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        Ok(Self { dims, strides, len })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of modes `K`.
    pub fn order(&self) -> usize {
        self.dims.len()
    }

    /// Total entry count `N`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn flat_index(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.dims.len() || index.iter().zip(&self.dims).any(|(&i, &n)| i >= n) {
            return Err(Error::Index {
                index: index.to_vec(),
                dims: self.dims.clone(),
            });
        }
        Ok(index.iter().zip(&self.strides).map(|(i, s)| i * s).sum())
    }

    /// Writes the multi-index of `flat` into `out`.
    pub fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        debug_assert_eq!(out.len(), self.dims.len());
        for (o, &s) in out.iter_mut().zip(&self.strides) {
            *o = flat / s;
            flat %= s;
        }
    }

    /// Iterator over all multi-indices in canonical order.
    pub fn indices(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.len).map(move |f| {
            let mut idx = vec![0; self.order()];
            self.unravel(f, &mut idx);
            idx
        })
    }
}

impl TryFrom<Vec<usize>> for TensorShape {
    type Error = Error;
    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Self::new(dims)
    }
}

impl From<TensorShape> for Vec<usize> {
    fn from(shape: TensorShape) -> Self {
        shape.dims
    }
}

/// Dense tensor of finite `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: TensorShape,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: TensorShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::Shape(format!(
                "{} values for shape {:?} ({} entries)",
                values.len(),
                shape.dims(),
                shape.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite value at flat index {pos}")));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: TensorShape) -> Self {
        let values = vec![0.0; shape.len()];
        Self { shape, values }
    }

    pub fn from_fn(shape: TensorShape, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let mut idx = vec![0; shape.order()];
        let values = (0..shape.len())
            .map(|flat| {
                shape.unravel(flat, &mut idx);
                f(&idx)
            })
            .collect();
        Self::new(shape, values)
    }

    pub fn shape(&self) -> &TensorShape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.values[self.shape.flat_index(index)?])
    }

    /// Mutable access for builder paths. Callers keep values finite.
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Entry-wise `self + other`.
    pub fn add(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.zip_with(other, |a, b| a + b)
    }

    /// Entry-wise `self - other`.
    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, alpha: f64) -> Result<DenseTensor> {
        DenseTensor::new(self.shape.clone(), self.values.iter().map(|v| alpha * v).collect())
    }

    fn zip_with(&self, other: &DenseTensor, f: impl Fn(f64, f64) -> f64) -> Result<DenseTensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "shape mismatch {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        DenseTensor::new(self.shape.clone(), values)
    }
}

/// Indicator tensor `O` marking the observed set `Ω`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObservationMask {
    shape: TensorShape,
    flags: Vec<bool>,
    observed_count: usize,
}

impl ObservationMask {
    pub fn new(shape: TensorShape, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != shape.len() {
            return Err(Error::Shape(format!(
                "{} mask flags for shape {:?}",
                flags.len(),
                shape.dims()
            )));
        }
        let observed_count = flags.iter().filter(|&&f| f).count();
        Ok(Self {
            shape,
            flags,
            observed_count,
        })
    }

    /// Every entry observed.
    pub fn full(shape: TensorShape) -> Self {
        let n = shape.len();
        Self {
            shape,
            flags: vec![true; n],
            observed_count: n,
        }
    }

    pub fn shape(&self) -> &TensorShape {
        &self.shape
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn is_observed(&self, flat: usize) -> bool {
        self.flags[flat]
    }

    /// `N_z`, the number of observed entries.
    pub fn observed_count(&self) -> usize {
        self.observed_count
    }

    /// `N_z / N`.
    pub fn observed_fraction(&self) -> f64 {
        self.observed_count as f64 / self.shape.len() as f64
    }

    /// Flat indices of observed entries in increasing order.
    pub fn observed_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.flags.iter().enumerate().filter_map(|(i, &f)| f.then_some(i))
    }
}

/// Row-major `rows x cols` matrix used for CP factor matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FactorMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} factor matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |i| self.get(i, col))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.data[row * self.cols..(row + 1) * self.cols]
    }

    fn retain_columns(&mut self, keep: &[bool]) {
        let cols = keep.iter().filter(|&&k| k).count();
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend(self.row(i).iter().zip(keep).filter(|(_, &k)| k).map(|(v, _)| *v));
        }
        self.cols = cols;
        self.data = data;
    }
}

/// Weighted CP factorization `[[λ; U^(1), ..., U^(K)]]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpFactors {
    lambda: Vec<f64>,
    factors: Vec<FactorMatrix>,
}

impl CpFactors {
    pub fn new(lambda: Vec<f64>, factors: Vec<FactorMatrix>) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::Shape("CP factorization needs R >= 1".into()));
        }
        if factors.len() < 2 {
            return Err(Error::Shape(format!(
                "CP factorization needs at least 2 factor matrices, got {}",
                factors.len()
            )));
        }
        if let Some(f) = factors.iter().find(|f| f.cols() != lambda.len()) {
            return Err(Error::Shape(format!(
                "factor matrix has {} columns, weight vector has {}",
                f.cols(),
                lambda.len()
            )));
        }
        Ok(Self { lambda, factors })
    }

    /// All weights and factor entries set to `value`.
    pub fn filled(shape: &TensorShape, rank: usize, value: f64) -> Self {
        Self {
            lambda: vec![value; rank],
            factors: shape
                .dims()
                .iter()
                .map(|&n| FactorMatrix::filled(n, rank, value))
                .collect(),
        }
    }

    /// Current component budget `R`.
    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn lambda_mut(&mut self) -> &mut [f64] {
        &mut self.lambda
    }

    pub fn factors(&self) -> &[FactorMatrix] {
        &self.factors
    }

    pub fn factor(&self, k: usize) -> &FactorMatrix {
        &self.factors[k]
    }

    pub fn factor_mut(&mut self, k: usize) -> &mut FactorMatrix {
        &mut self.factors[k]
    }

    pub fn shape(&self) -> Result<TensorShape> {
        TensorShape::new(self.factors.iter().map(|f| f.rows()).collect::<Vec<_>>())
    }

    fn check_index(&self, index: &[usize]) -> Result<()> {
        if index.len() != self.factors.len() || index.iter().zip(&self.factors).any(|(&i, f)| i >= f.rows()) {
            return Err(Error::Index {
                index: index.to_vec(),
                dims: self.factors.iter().map(|f| f.rows()).collect(),
            });
        }
        Ok(())
    }

    /// `Π_k U^(k)[i_k, r]`, without the weight.
    #[inline]
    pub fn column_product(&self, index: &[usize], r: usize) -> f64 {
        self.factors.iter().zip(index).map(|(f, &i)| f.get(i, r)).product()
    }

    /// `Σ_r λ_r Π_k U^(k)[i_k, r]`.
    pub fn entry(&self, index: &[usize]) -> Result<f64> {
        self.check_index(index)?;
        Ok(self.entry_unchecked(index))
    }

    #[inline]
    pub(crate) fn entry_unchecked(&self, index: &[usize]) -> f64 {
        self.lambda
            .iter()
            .enumerate()
            .map(|(r, &l)| l * self.column_product(index, r))
            .sum()
    }

    /// `y - e - Σ_{t≠r} λ_t Π_k U^(k)[i_k, t]`.
    pub fn residual_observation(&self, y: f64, e: f64, index: &[usize], excluded_r: usize) -> Result<f64> {
        self.check_index(index)?;
        if excluded_r >= self.rank() {
            return Err(Error::Index {
                index: vec![excluded_r],
                dims: vec![self.rank()],
            });
        }
        let others: f64 = self
            .lambda
            .iter()
            .enumerate()
            .filter(|&(t, _)| t != excluded_r)
            .map(|(t, &l)| l * self.column_product(index, t))
            .sum();
        Ok(y - e - others)
    }

    /// Dense reconstruction of the factorization.
    pub fn reconstruct(&self) -> Result<DenseTensor> {
        let shape = self.shape()?;
        let mut out = vec![0.0; shape.len()];
        let mut partial = Vec::with_capacity(shape.len());
        let mut next = Vec::with_capacity(shape.len());
        for (r, &weight) in self.lambda.iter().enumerate() {
            partial.clear();
            partial.push(weight);
            for f in &self.factors {
                next.clear();
                for &p in &partial {
                    next.extend(f.column(r).map(|u| p * u));
                }
                std::mem::swap(&mut partial, &mut next);
            }
            for (o, p) in out.iter_mut().zip(&partial) {
                *o += p;
            }
        }
        DenseTensor::new(shape, out)
    }

    /// Drops columns whose `keep` flag is false.
    pub fn retain_components(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.rank());
        self.lambda = self
            .lambda
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(l, _)| *l)
            .collect();
        for f in &mut self.factors {
            f.retain_columns(keep);
        }
    }
}

/// Free-function form of [`CpFactors::entry`].
pub fn cp_entry(factors: &CpFactors, index: &[usize]) -> Result<f64> {
    factors.entry(index)
}

/// Free-function form of [`CpFactors::reconstruct`].
pub fn cp_reconstruct(factors: &CpFactors) -> Result<DenseTensor> {
    factors.reconstruct()
}

/// Free-function form of [`CpFactors::residual_observation`].
pub fn residual_observation(y: f64, e: f64, factors: &CpFactors, index: &[usize], excluded_r: usize) -> Result<f64> {
    factors.residual_observation(y, e, index, excluded_r)
}
