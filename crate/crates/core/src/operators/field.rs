use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;

/// A real function on a unit lattice, stored in flat-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    spec: LatticeSpec,
    values: Vec<f64>,
}

impl Field {
    /// Checks length and finiteness.
    pub fn new(spec: LatticeSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::Argument(format!(
                "field has {} values, lattice has {} points",
                values.len(),
                spec.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite value at index {i}")));
        }
        Ok(Self { spec, values })
    }

    pub(crate) fn from_raw(spec: LatticeSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), spec.len());
        Self { spec, values }
    }

    pub fn zeros(spec: LatticeSpec) -> Self {
        Self::constant(spec, 0.0)
    }

    pub fn constant(spec: LatticeSpec, c: f64) -> Self {
        Self {
            spec,
            values: vec![c; spec.len()],
        }
    }

    pub fn from_fn(spec: LatticeSpec, f: impl FnMut(usize) -> f64) -> Self {
        Self {
            spec,
            values: (0..spec.len()).map(f).collect(),
        }
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn level(&self) -> usize {
        self.spec.n()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_raw(self.spec, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination. Panics if the lattices differ.
    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        assert_eq!(
            self.spec, other.spec,
            "pointwise operation on different lattices"
        );
        Field::from_raw(
            self.spec,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn add(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    pub fn shift(&self, c: f64) -> Field {
        self.map(|v| v + c)
    }

    /// Largest absolute pointwise difference. Panics if the lattices differ.
    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        assert_eq!(self.spec, other.spec, "comparison of different lattices");
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}
