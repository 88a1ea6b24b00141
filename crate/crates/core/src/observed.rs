//! Compact view of the observed entries `Ω` used by the samplers.

use crate::error::{Error, Result};
use crate::tensor::{CpFactors, DenseTensor, ObservationMask, TensorShape};

/// Observed values with their multi-indices and, for every mode, the list
/// of observed entries lying in each slice `i_k = i`.
#[derive(Clone, Debug)]
pub struct ObservedData {
    shape: TensorShape,
    flat: Vec<usize>,
    coords: Vec<u32>,
    values: Vec<f64>,
    slice_offsets: Vec<Vec<usize>>,
    slice_members: Vec<Vec<u32>>,
}

impl ObservedData {
    pub fn new(y: &DenseTensor, mask: &ObservationMask) -> Result<Self> {
        if y.shape() != mask.shape() {
            return Err(Error::Shape(format!(
                "observation shape {:?} does not match mask shape {:?}",
                y.dims(),
                mask.shape().dims()
            )));
        }
        let shape = y.shape().clone();
        let order = shape.order();
        let flat: Vec<usize> = mask.observed_indices().collect();
        let mut coords = Vec::with_capacity(flat.len() * order);
        let mut idx = vec![0; order];
        for &f in &flat {
            shape.unravel(f, &mut idx);
            coords.extend(idx.iter().map(|&i| i as u32));
        }
        let values = flat.iter().map(|&f| y.values()[f]).collect();

        let mut slice_offsets = Vec::with_capacity(order);
        let mut slice_members = Vec::with_capacity(order);
        for k in 0..order {
            let n = shape.dims()[k];
            let mut counts = vec![0usize; n + 1];
            for e in 0..flat.len() {
                counts[coords[e * order + k] as usize + 1] += 1;
            }
            for i in 0..n {
                counts[i + 1] += counts[i];
            }
            let mut fill = counts.clone();
            let mut members = vec![0u32; flat.len()];
            for e in 0..flat.len() {
                let row = coords[e * order + k] as usize;
                members[fill[row]] = e as u32;
                fill[row] += 1;
            }
            slice_offsets.push(counts);
            slice_members.push(members);
        }

        Ok(Self {
            shape,
            flat,
            coords,
            values,
            slice_offsets,
            slice_members,
        })
    }

    pub fn shape(&self) -> &TensorShape {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.order()
    }

    /// Number of observed entries `N_z`.
    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// Flat tensor positions of the observed entries, increasing.
    pub fn flat(&self) -> &[usize] {
        &self.flat
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Multi-index of observed entry `e`.
    #[inline]
    pub fn coords(&self, e: usize) -> &[u32] {
        let k = self.shape.order();
        &self.coords[e * k..(e + 1) * k]
    }

    /// Observed entries whose mode-`k` index equals `row`.
    #[inline]
    pub fn slice(&self, k: usize, row: usize) -> &[u32] {
        let offsets = &self.slice_offsets[k];
        &self.slice_members[k][offsets[row]..offsets[row + 1]]
    }

    /// Gathers `tensor` at the observed positions.
    pub fn gather(&self, tensor: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.flat.iter().map(|&f| tensor[f]));
    }

    /// CP reconstruction evaluated only at the observed entries.
    pub fn evaluate(&self, cp: &CpFactors, out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.len(), 0.0);
        for (r, &weight) in cp.lambda().iter().enumerate() {
            for (e, o) in out.iter_mut().enumerate() {
                let prod: f64 = self
                    .coords(e)
                    .iter()
                    .zip(cp.factors())
                    .map(|(&i, f)| f.get(i as usize, r))
                    .product();
                *o += weight * prod;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slices_partition_observed_entries() {
        let shape = TensorShape::new(vec![3, 2, 2]).unwrap();
        let y = DenseTensor::from_fn(shape.clone(), |i| (i[0] * 4 + i[1] * 2 + i[2]) as f64).unwrap();
        let flags = (0..12).map(|f| f % 3 != 1).collect();
        let mask = ObservationMask::new(shape, flags).unwrap();
        let data = ObservedData::new(&y, &mask).unwrap();
        assert_eq!(data.len(), 8);
        for k in 0..3 {
            let mut seen: Vec<u32> = (0..y.dims()[k]).flat_map(|i| data.slice(k, i).to_vec()).collect();
            seen.sort();
            assert_eq!(seen, (0..8).collect::<Vec<u32>>());
            for i in 0..y.dims()[k] {
                assert!(data
                    .slice(k, i)
                    .iter()
                    .all(|&e| data.coords(e as usize)[k] as usize == i));
            }
        }
        for (e, &f) in data.flat().iter().enumerate() {
            assert_eq!(data.values()[e], f as f64);
        }
    }

    #[test]
    fn evaluate_matches_reconstruction() {
        let shape = TensorShape::new(vec![2, 3]).unwrap();
        let mut cp = CpFactors::filled(&shape, 2, 0.5);
        cp.factor_mut(1).set(2, 1, -3.0);
        let dense = cp.reconstruct().unwrap();
        let mask = ObservationMask::new(shape, vec![true, false, true, true, false, true]).unwrap();
        let data = ObservedData::new(&dense, &mask).unwrap();
        let mut out = Vec::new();
        data.evaluate(&cp, &mut out);
        assert_eq!(out, data.values());
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let y = DenseTensor::zeros(TensorShape::new(vec![2, 2]).unwrap());
        let mask = ObservationMask::full(TensorShape::new(vec![2, 3]).unwrap());
        assert!(ObservedData::new(&y, &mask).is_err());
    }
}
