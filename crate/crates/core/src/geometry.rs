//! Layer geometry and per-layer activity containers.
//!
//! A layer is a row of hypercolumns, each holding the same number of
//! minicolumns (units). Unit `u` lives in hypercolumn `u / M` as its
//! `u % M`-th minicolumn, so unit indices map bijectively onto
//! (hypercolumn, minicolumn) pairs.

use crate::error::{BcpnnError, Result};

/// Tolerance for the per-hypercolumn sum-to-one check on activities.
pub const ACTIVITY_SUM_TOL: f64 = 1e-9;

/// Shape of one layer: `H` hypercolumns of `M` minicolumns each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerGeometry {
    num_hypercolumns: usize,
    minicolumns_per_hypercolumn: usize,
}

impl LayerGeometry {
    pub fn new(num_hypercolumns: usize, minicolumns_per_hypercolumn: usize) -> Result<Self> {
        if num_hypercolumns < 1 {
            return Err(BcpnnError::InvalidParameter(
                "layer needs at least one hypercolumn".into(),
            ));
        }
        if minicolumns_per_hypercolumn < 2 {
            return Err(BcpnnError::InvalidParameter(
                "hypercolumns need at least two minicolumns".into(),
            ));
        }
        Ok(Self {
            num_hypercolumns,
            minicolumns_per_hypercolumn,
        })
    }

    #[inline]
    pub fn num_hypercolumns(&self) -> usize {
        self.num_hypercolumns
    }

    #[inline]
    pub fn minicolumns(&self) -> usize {
        self.minicolumns_per_hypercolumn
    }

    #[inline]
    pub fn total_units(&self) -> usize {
        self.num_hypercolumns * self.minicolumns_per_hypercolumn
    }

    #[inline]
    pub fn hypercolumn_of(&self, unit: usize) -> usize {
        unit / self.minicolumns_per_hypercolumn
    }

    #[inline]
    pub fn minicolumn_of(&self, unit: usize) -> usize {
        unit % self.minicolumns_per_hypercolumn
    }

    #[inline]
    pub fn unit(&self, hypercolumn: usize, minicolumn: usize) -> usize {
        hypercolumn * self.minicolumns_per_hypercolumn + minicolumn
    }

    /// Unit-index range covered by one hypercolumn.
    #[inline]
    pub fn hypercolumn_range(&self, hypercolumn: usize) -> std::ops::Range<usize> {
        let start = hypercolumn * self.minicolumns_per_hypercolumn;
        start..start + self.minicolumns_per_hypercolumn
    }
}

/// Unit activations of one layer; within each hypercolumn the values form a
/// probability distribution (non-negative, summing to one).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityVector {
    geometry: LayerGeometry,
    values: Vec<f64>,
}

impl ActivityVector {
    /// Validates length, finiteness, non-negativity and per-hypercolumn sums.
    pub fn new(geometry: LayerGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.total_units() {
            return Err(BcpnnError::DimensionMismatch(format!(
                "activity has {} values, geometry has {} units",
                values.len(),
                geometry.total_units()
            )));
        }
        for (u, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(BcpnnError::InvalidActivity(format!(
                    "unit {u} has value {v}"
                )));
            }
        }
        for h in 0..geometry.num_hypercolumns() {
            let sum: f64 = values[geometry.hypercolumn_range(h)].iter().sum();
            if (sum - 1.0).abs() > ACTIVITY_SUM_TOL {
                return Err(BcpnnError::InvalidActivity(format!(
                    "hypercolumn {h} sums to {sum}"
                )));
            }
        }
        Ok(Self { geometry, values })
    }

    /// All units of every hypercolumn at `1/M`.
    pub fn uniform(geometry: LayerGeometry) -> Self {
        let v = 1.0 / geometry.minicolumns() as f64;
        Self {
            geometry,
            values: vec![v; geometry.total_units()],
        }
    }

    /// Construction for values already known to satisfy the invariants
    /// (softmax output, container loads).
    pub(crate) fn from_normalized(geometry: LayerGeometry, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), geometry.total_units());
        Self { geometry, values }
    }

    #[inline]
    pub fn geometry(&self) -> LayerGeometry {
        self.geometry
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Largest absolute per-unit difference to another activity.
    pub fn max_abs_diff(&self, other: &ActivityVector) -> f64 {
        debug_assert_eq!(self.geometry, other.geometry);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Pre-softmax total input per unit; unbounded but finite.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportVector {
    geometry: LayerGeometry,
    values: Vec<f64>,
}

impl SupportVector {
    pub fn new(geometry: LayerGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.total_units() {
            return Err(BcpnnError::DimensionMismatch(format!(
                "support has {} values, geometry has {} units",
                values.len(),
                geometry.total_units()
            )));
        }
        if let Some((u, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite())
            .map(|(u, v)| (u, *v))
        {
            return Err(BcpnnError::InvalidActivity(format!(
                "support unit {u} is {v}"
            )));
        }
        Ok(Self { geometry, values })
    }

    pub(crate) fn from_raw(geometry: LayerGeometry, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), geometry.total_units());
        Self { geometry, values }
    }

    #[inline]
    pub fn geometry(&self) -> LayerGeometry {
        self.geometry
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// A stack of activity vectors stored as one row-major matrix
/// (`n_samples` rows of `total_units` values). Training kernels consume
/// batches; rows obey the same invariants as [`ActivityVector`].
#[derive(Debug, Clone)]
pub struct ActivityBatch {
    geometry: LayerGeometry,
    n_samples: usize,
    values: Vec<f64>,
}

impl ActivityBatch {
    pub fn with_capacity(geometry: LayerGeometry, n_samples: usize) -> Self {
        Self {
            geometry,
            n_samples: 0,
            values: Vec::with_capacity(n_samples * geometry.total_units()),
        }
    }

    pub fn push(&mut self, activity: &ActivityVector) {
        debug_assert_eq!(activity.geometry(), self.geometry);
        self.values.extend_from_slice(activity.values());
        self.n_samples += 1;
    }

    pub(crate) fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.geometry.total_units());
        self.values.extend_from_slice(row);
        self.n_samples += 1;
    }

    /// Assembles a batch by computing each row in parallel.
    pub fn from_rows_parallel<F>(geometry: LayerGeometry, n_samples: usize, row_fn: F) -> Self
    where
        F: Fn(usize, &mut [f64]) + Sync,
    {
        use rayon::prelude::*;
        let units = geometry.total_units();
        let mut values = vec![0.0; n_samples * units];
        values
            .par_chunks_mut(units)
            .enumerate()
            .for_each(|(k, row)| row_fn(k, row));
        Self {
            geometry,
            n_samples,
            values,
        }
    }

    #[inline]
    pub fn geometry(&self) -> LayerGeometry {
        self.geometry
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n_samples
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n_samples == 0
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        let units = self.geometry.total_units();
        &self.values[k * units..(k + 1) * units]
    }

    pub fn activity(&self, k: usize) -> ActivityVector {
        ActivityVector::from_normalized(self.geometry, self.row(k).to_vec())
    }
}
