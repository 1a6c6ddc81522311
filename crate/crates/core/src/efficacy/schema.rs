//! Categorical patient characteristics and their dummy coding.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Shape of the non-null part of a covariate's spike-and-slab prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SlabKind {
    #[default]
    Gaussian,
    /// Half-normal on `[0, inf)`: the level is known not to lower efficacy.
    TruncatedPositive,
    /// Half-normal on `(-inf, 0]`.
    TruncatedNegative,
}

impl SlabKind {
    pub fn admits(self, gamma: f64) -> bool {
        match self {
            SlabKind::Gaussian => true,
            SlabKind::TruncatedPositive => gamma >= 0.0,
            SlabKind::TruncatedNegative => gamma <= 0.0,
        }
    }
}

/// Per-level overrides of a characteristic's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelOverride {
    pub slab: Option<SlabKind>,
    pub slab_sd: Option<f64>,
    pub q_level: Option<f64>,
}

fn half() -> f64 {
    0.5
}

fn five() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Characteristic {
    pub name: String,
    pub levels: Vec<String>,
    /// Name of the reference level (absorbed into the intercept).
    pub reference: String,
    #[serde(default)]
    pub slab: SlabKind,
    #[serde(default = "five")]
    pub slab_sd: f64,
    #[serde(default = "half")]
    pub q_group: f64,
    #[serde(default = "half")]
    pub q_level: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, LevelOverride>,
}

impl Characteristic {
    pub fn reference_index(&self) -> usize {
        self.levels.iter().position(|l| *l == self.reference).unwrap_or(0)
    }

    pub fn level_index(&self, name: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == name)
    }
}

/// One dummy-coded regression covariate: a non-reference level of a characteristic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub group: usize,
    pub level: usize,
    pub label: String,
    pub slab: SlabKind,
    pub slab_sd: f64,
    pub q_level: f64,
}

/// Bit set over covariate indices (at most 64 covariates).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CovMask(pub u64);

impl CovMask {
    pub const EMPTY: CovMask = CovMask(0);

    pub fn single(m: usize) -> Self {
        CovMask(1 << m)
    }

    pub fn all(m: usize) -> Self {
        if m >= 64 {
            CovMask(u64::MAX)
        } else {
            CovMask((1u64 << m) - 1)
        }
    }

    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Self {
        CovMask(indices.into_iter().fold(0, |acc, m| acc | (1 << m)))
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        Self::from_indices(bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i))
    }

    #[inline]
    pub fn get(self, m: usize) -> bool {
        self.0 >> m & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, m: usize, on: bool) {
        if on {
            self.0 |= 1 << m;
        } else {
            self.0 &= !(1 << m);
        }
    }

    pub fn and(self, other: CovMask) -> CovMask {
        CovMask(self.0 & other.0)
    }

    pub fn contains_all(self, other: CovMask) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |m| self.get(*m))
    }
}

/// Level index per characteristic, in schema order.
pub type Pattern = Vec<usize>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemaDoc", into = "SchemaDoc")]
pub struct CovariateSchema {
    characteristics: Vec<Characteristic>,
    covariates: Vec<Covariate>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaDoc {
    #[serde(rename = "characteristic", default)]
    characteristics: Vec<Characteristic>,
}

impl TryFrom<SchemaDoc> for CovariateSchema {
    type Error = CoreError;

    fn try_from(doc: SchemaDoc) -> Result<Self> {
        CovariateSchema::new(doc.characteristics)
    }
}

impl From<CovariateSchema> for SchemaDoc {
    fn from(s: CovariateSchema) -> Self {
        SchemaDoc {
            characteristics: s.characteristics,
        }
    }
}

impl CovariateSchema {
    pub fn new(characteristics: Vec<Characteristic>) -> Result<Self> {
        let mut covariates = Vec::new();
        for (h, c) in characteristics.iter().enumerate() {
            let field = |s: &str| format!("characteristic[{h}].{s}");
            if c.levels.len() < 2 {
                return Err(CoreError::input(field("levels"), "a characteristic needs at least two levels"));
            }
            let mut names = c.levels.clone();
            names.sort();
            names.dedup();
            if names.len() != c.levels.len() {
                return Err(CoreError::input(field("levels"), "level names must be unique"));
            }
            if c.level_index(&c.reference).is_none() {
                return Err(CoreError::input(field("reference"), format!("`{}` is not a level", c.reference)));
            }
            for key in c.overrides.keys() {
                if c.level_index(key).is_none() {
                    return Err(CoreError::input(field("overrides"), format!("`{key}` is not a level")));
                }
            }
            check_prob(&field("q_group"), c.q_group)?;
            let r = c.reference_index();
            for (l, name) in c.levels.iter().enumerate() {
                if l == r {
                    continue;
                }
                let o = c.overrides.get(name).cloned().unwrap_or_default();
                let cov = Covariate {
                    group: h,
                    level: l,
                    label: format!("{}={}", c.name, name),
                    slab: o.slab.unwrap_or(c.slab),
                    slab_sd: o.slab_sd.unwrap_or(c.slab_sd),
                    q_level: o.q_level.unwrap_or(c.q_level),
                };
                if !(cov.slab_sd > 0.0 && cov.slab_sd.is_finite()) {
                    return Err(CoreError::input(field("slab_sd"), "must be positive"));
                }
                check_prob(&field("q_level"), cov.q_level)?;
                covariates.push(cov);
            }
        }
        if covariates.len() > 64 {
            return Err(CoreError::input("characteristic", "at most 64 dummy covariates are supported"));
        }
        Ok(CovariateSchema {
            characteristics,
            covariates,
        })
    }

    /// Schema with no characteristics: the efficacy model has dose terms only.
    pub fn empty() -> Self {
        CovariateSchema {
            characteristics: Vec::new(),
            covariates: Vec::new(),
        }
    }

    pub fn characteristics(&self) -> &[Characteristic] {
        &self.characteristics
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    /// Number of dummy covariates, `M`.
    pub fn m(&self) -> usize {
        self.covariates.len()
    }

    /// Number of characteristics, `H`.
    pub fn h(&self) -> usize {
        self.characteristics.len()
    }

    /// Covariates belonging to characteristic `h`.
    pub fn group_mask(&self, h: usize) -> CovMask {
        CovMask::from_indices(self.covariates.iter().enumerate().filter(|(_, c)| c.group == h).map(|(i, _)| i))
    }

    pub fn covariate_index(&self, group: usize, level: usize) -> Option<usize> {
        self.covariates.iter().position(|c| c.group == group && c.level == level)
    }

    pub fn find_characteristic(&self, name: &str) -> Option<usize> {
        self.characteristics.iter().position(|c| c.name == name)
    }

    /// Dummy-codes a pattern.
    pub fn encode(&self, pattern: &[usize]) -> Result<CovMask> {
        self.validate_pattern(pattern)?;
        let mut mask = CovMask::EMPTY;
        for (h, level) in pattern.iter().enumerate() {
            if let Some(m) = self.covariate_index(h, *level) {
                mask.set(m, true);
            }
        }
        Ok(mask)
    }

    pub fn validate_pattern(&self, pattern: &[usize]) -> Result<()> {
        if pattern.len() != self.h() {
            return Err(CoreError::input(
                "covariates",
                format!("expected {} characteristics, got {}", self.h(), pattern.len()),
            ));
        }
        for (h, (level, c)) in pattern.iter().zip(&self.characteristics).enumerate() {
            if *level >= c.levels.len() {
                return Err(CoreError::input(format!("covariates[{h}]"), format!("level {level} out of range")));
            }
        }
        Ok(())
    }

    /// Resolves `{characteristic name: level name}` into a pattern.
    pub fn pattern_from_names<'a>(&self, named: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Pattern> {
        let mut pattern: Vec<Option<usize>> = vec![None; self.h()];
        for (k, v) in named {
            let h = self
                .find_characteristic(k)
                .ok_or_else(|| CoreError::input(format!("covariates.{k}"), "unknown characteristic"))?;
            let l = self.characteristics[h]
                .level_index(v)
                .ok_or_else(|| CoreError::input(format!("covariates.{k}"), format!("unknown level `{v}`")))?;
            pattern[h] = Some(l);
        }
        pattern
            .into_iter()
            .enumerate()
            .map(|(h, l)| {
                l.ok_or_else(|| CoreError::input(format!("covariates.{}", self.characteristics[h].name), "missing"))
            })
            .collect()
    }

    pub fn pattern_names(&self, pattern: &[usize]) -> Vec<(String, String)> {
        pattern
            .iter()
            .zip(&self.characteristics)
            .map(|(l, c)| (c.name.clone(), c.levels[*l].clone()))
            .collect()
    }

    /// True when the mask sets at most one dummy per characteristic.
    pub fn is_valid_mask(&self, mask: CovMask) -> bool {
        (0..self.h()).all(|h| mask.and(self.group_mask(h)).count() <= 1)
    }
}

fn check_prob(field: &str, q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(CoreError::input(field, "prior inclusion probability must lie in (0,1)"))
    }
}
