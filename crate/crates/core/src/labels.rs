use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Categorical labels `0..num_classes` for `n` samples (Y, S, Ŷ or Ŝ).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelVector {
    values: Vec<usize>,
    num_classes: usize,
}

impl LabelVector {
    pub fn new(values: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidInput(
                "a label vector needs at least one class".into(),
            ));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, &v)| v >= num_classes) {
            return Err(Error::InvalidInput(format!(
                "label {v} at position {i} is outside 0..{num_classes}"
            )));
        }
        Ok(Self {
            values,
            num_classes,
        })
    }

    /// Infers the class count as `max + 1`.
    pub fn from_values(values: Vec<usize>) -> Result<Self> {
        let c = values.iter().copied().max().map_or(1, |m| m + 1);
        Self::new(values, c)
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &v in &self.values {
            counts[v] += 1;
        }
        counts
    }

    pub fn select(&self, rows: &[usize]) -> LabelVector {
        LabelVector {
            values: rows.iter().map(|&i| self.values[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Fraction of positions where both vectors agree.
    pub fn agreement(&self, other: &LabelVector) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "label vectors of length {} and {}",
                self.len(),
                other.len()
            )));
        }
        if self.is_empty() {
            return Ok(1.0);
        }
        let same = self
            .values
            .iter()
            .zip(&other.values)
            .filter(|(a, b)| a == b)
            .count();
        Ok(same as f64 / self.len() as f64)
    }

    /// Stable fingerprint of the label contents.
    pub fn digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.hash(&mut h);
        h.finish()
    }
}
