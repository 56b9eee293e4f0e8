//! Named parameter arrays and their initializers.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;

use crate::error::{PgibError, Result};

/// Named real matrices. Vectors are stored as `1 × n` rows; names iterate
/// in sorted order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    arrays: BTreeMap<String, Array2<f64>>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a new array. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) -> Result<()> {
        let name = name.into();
        if self.arrays.contains_key(&name) {
            return Err(PgibError::Argument(format!("duplicate parameter {name}")));
        }
        self.arrays.insert(name, value);
        Ok(())
    }

    /// Replaces an existing array, keeping its shape.
    pub fn replace(&mut self, name: &str, value: Array2<f64>) -> Result<()> {
        let slot = self
            .arrays
            .get_mut(name)
            .ok_or_else(|| PgibError::Argument(format!("unknown parameter {name}")))?;
        if slot.dim() != value.dim() {
            return Err(PgibError::Shape(format!(
                "parameter {name}: shape {:?} cannot become {:?}",
                slot.dim(),
                value.dim()
            )));
        }
        *slot = value;
        Ok(())
    }

    /// Removes and returns a parameter.
    pub fn take(&mut self, name: &str) -> Result<Array2<f64>> {
        self.arrays
            .remove(name)
            .ok_or_else(|| PgibError::Argument(format!("unknown parameter {name}")))
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.arrays.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.arrays.get_mut(name)
    }

    /// Like `get` but panics on a missing name; for internal lookups of
    /// parameters the model itself registered.
    pub fn expect(&self, name: &str) -> &Array2<f64> {
        self.arrays
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not registered"))
    }

    pub fn expect_mut(&mut self, name: &str) -> &mut Array2<f64> {
        self.arrays
            .get_mut(name)
            .unwrap_or_else(|| panic!("parameter {name} not registered"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.arrays.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array2<f64>)> {
        self.arrays.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            arrays: self
                .arrays
                .iter()
                .map(|(k, v)| (k.clone(), Array2::zeros(v.dim())))
                .collect(),
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.arrays.values().map(Array2::len).sum()
    }

    /// Name of the first array holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.arrays
            .iter()
            .find(|(_, v)| v.iter().any(|x| !x.is_finite()))
            .map(|(k, _)| k.as_str())
    }

    /// Checks that `other` has exactly the same names and shapes.
    pub fn check_same_layout(&self, other: &ParameterSet) -> Result<()> {
        if self.arrays.len() != other.arrays.len() {
            return Err(PgibError::Shape(format!(
                "{} arrays vs {}",
                self.arrays.len(),
                other.arrays.len()
            )));
        }
        for ((ka, va), (kb, vb)) in self.arrays.iter().zip(&other.arrays) {
            if ka != kb || va.dim() != vb.dim() {
                return Err(PgibError::Shape(format!(
                    "{ka} {:?} vs {kb} {:?}",
                    va.dim(),
                    vb.dim()
                )));
            }
        }
        Ok(())
    }

    pub fn into_inner(self) -> BTreeMap<String, Array2<f64>> {
        self.arrays
    }
}

impl FromIterator<(String, Array2<f64>)> for ParameterSet {
    fn from_iter<T: IntoIterator<Item = (String, Array2<f64>)>>(iter: T) -> Self {
        Self {
            arrays: iter.into_iter().collect(),
        }
    }
}

/// He-style uniform initialization, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
pub fn he_uniform(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..bound))
}

/// Rows drawn from `U(0, 1)` and scaled to unit L2 norm.
pub fn unit_uniform_rows(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut m: Array2<f64> = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(0.0..1.0));
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt().max(1e-12);
        row /= norm;
    }
    m
}
