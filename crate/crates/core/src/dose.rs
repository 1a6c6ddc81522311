use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::scalar::Real;

/// A 1-based dose level, as used in protocols and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DoseLevel(pub usize);

impl DoseLevel {
    pub const LOWEST: DoseLevel = DoseLevel(1);

    pub fn from_index(index: usize) -> Self {
        DoseLevel(index + 1)
    }

    /// 0-based position in the grid.
    pub fn index(self) -> usize {
        self.0 - 1
    }
}

impl fmt::Display for DoseLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}", self.0)
    }
}

/// Ordered dose levels with their dosage amounts and toxicity skeleton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de>"))]
pub struct DoseGrid<T> {
    pub dosage: Vec<T>,
    pub skeleton: Vec<T>,
}

impl<T: Real> DoseGrid<T> {
    pub fn new(dosage: Vec<T>, skeleton: Vec<T>) -> Result<Self> {
        let grid = DoseGrid { dosage, skeleton };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.skeleton.len();
        if j < 2 {
            return Err(CoreError::input("grid.skeleton", "at least two dose levels are required"));
        }
        if self.dosage.len() != j {
            return Err(CoreError::input(
                "grid.dosage",
                format!("expected {j} dosages, got {}", self.dosage.len()),
            ));
        }
        for (i, p) in self.skeleton.iter().enumerate() {
            if !(*p > T::zero() && *p < T::one()) {
                return Err(CoreError::input(format!("grid.skeleton[{i}]"), "must lie in (0,1)"));
            }
        }
        if self.skeleton.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoreError::input("grid.skeleton", "must be strictly increasing"));
        }
        if self.dosage.iter().any(|d| !(*d > T::zero())) {
            return Err(CoreError::input("grid.dosage", "dosages must be positive"));
        }
        if self.dosage.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoreError::input("grid.dosage", "must be strictly increasing"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.skeleton.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skeleton.is_empty()
    }

    pub fn levels(&self) -> impl Iterator<Item = DoseLevel> {
        (0..self.len()).map(DoseLevel::from_index)
    }

    pub fn highest(&self) -> DoseLevel {
        DoseLevel(self.len())
    }

    pub fn contains(&self, level: DoseLevel) -> bool {
        level.0 >= 1 && level.0 <= self.len()
    }
}
