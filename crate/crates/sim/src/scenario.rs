//! Declarative scenario documents and the ground truth compiled from them.
//!
//! A scenario fixes everything the simulated world knows: the exposure model,
//! the dose grid (through toxicity targets), covariate prevalences and the
//! efficacy table. It never depends on how the design codes covariates, so the
//! same scenario can be run against schemas with different reference levels.

use std::collections::BTreeMap;
use std::path::Path;

use doseopt_core::efficacy::{CovMask, CovariateSchema, Pattern};
use doseopt_core::toxicity::closest_to_target;
use doseopt_core::{DoseGrid, DoseLevel};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::generate::derive_dose_grid;

const PROB_SUM_TOL: f64 = 1e-6;

/// True exposure model: `log CL ~ N(log clearance_mean, omega^2)` and a
/// toxicity whenever `dose / CL > tau_l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PkTruth {
    /// Mean clearance, L/h.
    pub clearance_mean: f64,
    /// Standard deviation of log clearance.
    pub omega: f64,
    /// AUC threshold above which a patient experiences a toxicity.
    pub tau_l: f64,
}

impl Default for PkTruth {
    fn default() -> Self {
        PkTruth {
            clearance_mean: 19.6,
            omega: 0.308,
            tau_l: 46.31,
        }
    }
}

/// Accrual and follow-up, in weeks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Accrual {
    /// Poisson arrival rate per week.
    pub rate: f64,
    pub tox_window: f64,
    pub eff_window: f64,
}

impl Default for Accrual {
    fn default() -> Self {
        Accrual {
            rate: 0.5,
            tox_window: 4.0,
            eff_window: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoseSpec {
    /// True toxicity probability per level; dosages are derived from these.
    pub targets: Vec<f64>,
    /// Prior toxicity skeleton handed to the design.
    pub skeleton: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioCharacteristic {
    pub name: String,
    pub levels: Vec<String>,
    pub prevalence: Vec<f64>,
}

/// Efficacy row for every pattern matching `when`. Rules are tried in order
/// and the first match wins; a rule without `obd` marks its patterns futile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EfficacyRule {
    #[serde(default)]
    pub when: BTreeMap<String, Vec<String>>,
    pub probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obd: Option<usize>,
}

impl EfficacyRule {
    fn matches(&self, chars: &[ScenarioCharacteristic], levels: &[usize]) -> bool {
        self.when.iter().all(|(name, allowed)| {
            let h = chars.iter().position(|c| c.name == *name).expect("validated");
            allowed.iter().any(|l| *l == chars[h].levels[levels[h]])
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub pk: PkTruth,
    #[serde(default)]
    pub accrual: Accrual,
    pub doses: DoseSpec,
    #[serde(default)]
    pub characteristic: Vec<ScenarioCharacteristic>,
    pub efficacy: Vec<EfficacyRule>,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| SimError::Parse {
            path: "scenario".into(),
            detail: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            SimError::Parse { detail, .. } => SimError::Parse {
                path: path.display().to_string(),
                detail,
            },
            other => other,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.doses.targets.len()
    }

    pub fn validate(&self) -> Result<()> {
        let pk = &self.pk;
        if !(pk.clearance_mean > 0.0 && pk.omega > 0.0 && pk.tau_l > 0.0) {
            return Err(SimError::scenario("pk", "clearance_mean, omega and tau_l must be positive"));
        }
        let a = &self.accrual;
        if !(a.rate > 0.0 && a.tox_window > 0.0 && a.eff_window > 0.0) {
            return Err(SimError::scenario("accrual", "rate and windows must be positive"));
        }
        let j = self.n_levels();
        derive_dose_grid(&self.doses.targets, &self.pk)?;
        if self.doses.skeleton.len() != j {
            return Err(SimError::scenario("doses.skeleton", format!("expected {j} values")));
        }
        for (h, c) in self.characteristic.iter().enumerate() {
            let field = format!("characteristic[{h}]");
            if c.levels.len() < 2 || c.levels.len() != c.prevalence.len() {
                return Err(SimError::scenario(field, "need at least two levels, one prevalence each"));
            }
            if self.characteristic[..h].iter().any(|o| o.name == c.name) {
                return Err(SimError::scenario(field, format!("duplicate characteristic `{}`", c.name)));
            }
            if c.prevalence.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(SimError::scenario(field, "prevalences must lie in [0,1]"));
            }
            let total: f64 = c.prevalence.iter().sum();
            if (total - 1.0).abs() > PROB_SUM_TOL {
                return Err(SimError::scenario(field, format!("prevalences sum to {total}, not 1")));
            }
        }
        for (r, rule) in self.efficacy.iter().enumerate() {
            let field = format!("efficacy[{r}]");
            if rule.probs.len() != j || rule.probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(SimError::scenario(field, format!("need {j} probabilities in [0,1]")));
            }
            if let Some(obd) = rule.obd {
                if obd == 0 || obd > j {
                    return Err(SimError::scenario(field, format!("obd {obd} is not a dose level")));
                }
            }
            for (name, levels) in &rule.when {
                let Some(c) = self.characteristic.iter().find(|c| c.name == *name) else {
                    return Err(SimError::scenario(field, format!("unknown characteristic `{name}`")));
                };
                if let Some(l) = levels.iter().find(|l| !c.levels.contains(l)) {
                    return Err(SimError::scenario(field, format!("unknown level `{l}` of `{name}`")));
                }
            }
        }
        for levels in self.all_patterns() {
            if self.rule_for(&levels).is_none() {
                let named: Vec<String> = self.named(&levels).into_iter().map(|(c, l)| format!("{c}={l}")).collect();
                return Err(SimError::scenario("efficacy", format!("no rule covers {}", named.join(", "))));
            }
        }
        Ok(())
    }

    /// Every combination of levels, in mixed-radix order.
    pub fn all_patterns(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new()];
        for c in &self.characteristic {
            out = out
                .into_iter()
                .flat_map(|p| {
                    (0..c.levels.len()).map(move |l| {
                        let mut q = p.clone();
                        q.push(l);
                        q
                    })
                })
                .collect();
        }
        out
    }

    pub fn rule_for(&self, levels: &[usize]) -> Option<&EfficacyRule> {
        self.efficacy.iter().find(|r| r.matches(&self.characteristic, levels))
    }

    pub fn named(&self, levels: &[usize]) -> Vec<(String, String)> {
        self.characteristic
            .iter()
            .zip(levels)
            .map(|(c, &l)| (c.name.clone(), c.levels[l].clone()))
            .collect()
    }

    pub fn prevalence(&self, levels: &[usize]) -> f64 {
        self.characteristic.iter().zip(levels).map(|(c, &l)| c.prevalence[l]).product()
    }

    pub fn dose_grid(&self) -> Result<DoseGrid> {
        let dosage = derive_dose_grid(&self.doses.targets, &self.pk)?;
        Ok(DoseGrid::new(dosage, self.doses.skeleton.clone())?)
    }
}

/// One covariate pattern of the simulated population.
#[derive(Debug, Clone, PartialEq)]
pub struct TruePattern {
    /// Level per scenario characteristic.
    pub levels: Vec<usize>,
    /// The same pattern in the design schema's coding.
    pub pattern: Pattern,
    pub z: CovMask,
    pub prevalence: f64,
    pub eff: Vec<f64>,
    pub obd: Option<DoseLevel>,
}

/// Target patterns sharing one true OBD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueSubgroup {
    pub label: String,
    pub obd: DoseLevel,
    /// Indices into [`Truth::patterns`].
    pub patterns: Vec<usize>,
    /// Share of the whole population.
    pub prevalence: f64,
}

/// Ground truth of a scenario as seen through a particular schema.
#[derive(Debug, Clone)]
pub struct Truth {
    pub scenario: Scenario,
    pub schema: CovariateSchema,
    pub grid: DoseGrid,
    pub patterns: Vec<TruePattern>,
    pub subgroups: Vec<TrueSubgroup>,
    /// Per scenario characteristic: schema characteristic and level map.
    char_map: Vec<(usize, Vec<usize>)>,
}

impl Truth {
    pub fn new(scenario: Scenario, schema: CovariateSchema) -> Result<Self> {
        scenario.validate()?;
        if schema.h() != scenario.characteristic.len() {
            return Err(SimError::scenario(
                "characteristic",
                format!("scenario has {} characteristics, schema {}", scenario.characteristic.len(), schema.h()),
            ));
        }
        let mut char_map = Vec::new();
        for c in &scenario.characteristic {
            let h = schema
                .find_characteristic(&c.name)
                .ok_or_else(|| SimError::scenario("characteristic", format!("`{}` missing from schema", c.name)))?;
            let sc = &schema.characteristics()[h];
            if sc.levels.len() != c.levels.len() {
                return Err(SimError::scenario(&c.name, "schema and scenario disagree on the levels"));
            }
            let map = c
                .levels
                .iter()
                .map(|l| {
                    sc.level_index(l)
                        .ok_or_else(|| SimError::scenario(&c.name, format!("level `{l}` missing from schema")))
                })
                .collect::<Result<Vec<_>>>()?;
            char_map.push((h, map));
        }
        let grid = scenario.dose_grid()?;
        let mut truth = Truth {
            patterns: Vec::new(),
            subgroups: Vec::new(),
            char_map,
            grid,
            schema,
            scenario,
        };
        for levels in truth.scenario.all_patterns() {
            let rule = truth.scenario.rule_for(&levels).expect("validated");
            let pattern = truth.schema_pattern(&levels);
            truth.patterns.push(TruePattern {
                z: truth.schema.encode(&pattern)?,
                pattern,
                prevalence: truth.scenario.prevalence(&levels),
                eff: rule.probs.clone(),
                obd: rule.obd.map(DoseLevel),
                levels,
            });
        }
        let mut obds: Vec<DoseLevel> = truth.patterns.iter().filter_map(|p| p.obd).collect();
        obds.sort();
        obds.dedup();
        for obd in obds {
            let members: Vec<usize> = (0..truth.patterns.len()).filter(|&i| truth.patterns[i].obd == Some(obd)).collect();
            truth.subgroups.push(TrueSubgroup {
                label: truth.label(&members),
                obd,
                prevalence: members.iter().map(|&i| truth.patterns[i].prevalence).sum(),
                patterns: members,
            });
        }
        Ok(truth)
    }

    pub fn schema_pattern(&self, levels: &[usize]) -> Pattern {
        let mut pattern = vec![0; levels.len()];
        for (&l, (h, map)) in levels.iter().zip(&self.char_map) {
            pattern[*h] = map[l];
        }
        pattern
    }

    /// Index into [`Truth::patterns`] of a level vector in scenario order.
    pub fn pattern_index(&self, levels: &[usize]) -> usize {
        levels
            .iter()
            .zip(&self.scenario.characteristic)
            .fold(0, |acc, (&l, c)| acc * c.levels.len() + l)
    }

    /// Index into [`Truth::patterns`] of a pattern in schema coding.
    pub fn index_of_schema_pattern(&self, pattern: &[usize]) -> Option<usize> {
        self.patterns.iter().position(|p| p.pattern == pattern)
    }

    /// Patterns with no effective dose.
    pub fn futile(&self) -> Vec<bool> {
        self.patterns.iter().map(|p| p.obd.is_none()).collect()
    }

    /// True MTD: the level whose toxicity probability is closest to `p_t`.
    pub fn true_mtd(&self, p_t: f64) -> DoseLevel {
        DoseLevel::from_index(closest_to_target(&self.scenario.doses.targets, p_t))
    }

    /// Futile patterns grouped per characteristic: the levels of `h` at which
    /// every pattern is futile. Identifying any one group counts as partial
    /// identification of the target population.
    pub fn futile_components(&self) -> Vec<(usize, Vec<usize>)> {
        let mut out = Vec::new();
        for (h, c) in self.scenario.characteristic.iter().enumerate() {
            let levels: Vec<usize> = (0..c.levels.len())
                .filter(|&l| self.patterns.iter().filter(|p| p.levels[h] == l).all(|p| p.obd.is_none()))
                .collect();
            if !levels.is_empty() && levels.len() < c.levels.len() {
                out.push((h, levels));
            }
        }
        out
    }

    /// Levels to exclude per characteristic when the target population is
    /// taken as known. Exact when the target population is a product set.
    pub fn target_restriction(&self) -> Vec<doseopt_core::design::LevelRestriction> {
        let target: Vec<&TruePattern> = self.patterns.iter().filter(|p| p.obd.is_some()).collect();
        if target.is_empty() {
            return Vec::new();
        }
        let mut out = Vec::new();
        for (h, c) in self.scenario.characteristic.iter().enumerate() {
            let excluded: Vec<String> = (0..c.levels.len())
                .filter(|&l| !target.iter().any(|p| p.levels[h] == l))
                .map(|l| c.levels[l].clone())
                .collect();
            if !excluded.is_empty() {
                out.push(doseopt_core::design::LevelRestriction {
                    characteristic: c.name.clone(),
                    levels: excluded,
                });
            }
        }
        out
    }

    /// Dummy covariates of the schema that separate target patterns with
    /// different true OBDs: switching only that dummy's characteristic between
    /// the dummy's level and the reference changes the OBD.
    pub fn influential(&self) -> CovMask {
        let mut mask = CovMask::EMPTY;
        for (m, cov) in self.schema.covariates().iter().enumerate() {
            let g = cov.group;
            let reference = self.schema.characteristics()[g].reference_index();
            let differs = self.patterns.iter().any(|p| {
                if p.pattern[g] != cov.level || p.obd.is_none() {
                    return false;
                }
                let mut q = p.pattern.clone();
                q[g] = reference;
                let other = &self.patterns[self.index_of_schema_pattern(&q).expect("complete table")];
                other.obd.is_some() && other.obd != p.obd
            });
            mask.set(m, differs);
        }
        mask
    }

    fn label(&self, members: &[usize]) -> String {
        let mut parts = Vec::new();
        for (h, c) in self.scenario.characteristic.iter().enumerate() {
            let mut present: Vec<usize> = members.iter().map(|&i| self.patterns[i].levels[h]).collect();
            present.sort();
            present.dedup();
            if present.len() < c.levels.len() {
                let names: Vec<&str> = present.iter().map(|&l| c.levels[l].as_str()).collect();
                parts.push(format!("{}={}", c.name, names.join("|")));
            }
        }
        if parts.is_empty() {
            "all".into()
        } else {
            parts.join(", ")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TOY: &str = r#"
name = "toy"
[doses]
targets = [0.05, 0.12, 0.25, 0.38]
skeleton = [0.06, 0.14, 0.25, 0.38]

[[characteristic]]
name = "gene"
levels = ["A", "B", "C"]
prevalence = [0.3, 0.3, 0.4]

[[characteristic]]
name = "alt"
levels = ["fusion", "other"]
prevalence = [0.5, 0.5]

[[efficacy]]
when = { alt = ["fusion"], gene = ["A"] }
probs = [0.9, 0.9, 0.9, 0.9]
obd = 1

[[efficacy]]
when = { alt = ["fusion"] }
probs = [0.2, 0.4, 0.7, 0.7]
obd = 3

[[efficacy]]
probs = [0.05, 0.05, 0.05, 0.05]
"#;

    fn schema(gene_ref: &str) -> CovariateSchema {
        let text = format!(
            r#"
[[characteristic]]
name = "gene"
levels = ["A", "B", "C"]
reference = "{gene_ref}"
[[characteristic]]
name = "alt"
levels = ["fusion", "other"]
reference = "other"
"#
        );
        toml::from_str(&text).unwrap()
    }

    #[test]
    fn first_matching_rule_wins() {
        let s = Scenario::from_toml_str(TOY).unwrap();
        assert_eq!(s.rule_for(&[0, 0]).unwrap().obd, Some(1));
        assert_eq!(s.rule_for(&[1, 0]).unwrap().obd, Some(3));
        assert_eq!(s.rule_for(&[0, 1]).unwrap().obd, None);
    }

    #[test]
    fn rejects_uncovered_patterns_and_bad_prevalence() {
        let uncovered = TOY.replace("[[efficacy]]\nprobs = [0.05, 0.05, 0.05, 0.05]\n", "");
        assert!(matches!(Scenario::from_toml_str(&uncovered), Err(SimError::Scenario { .. })));
        let bad = TOY.replace("[0.5, 0.5]", "[0.5, 0.6]");
        assert!(Scenario::from_toml_str(&bad).is_err());
        let bad_obd = TOY.replace("obd = 1", "obd = 5");
        assert!(Scenario::from_toml_str(&bad_obd).is_err());
    }

    #[test]
    fn truth_subgroups_and_influential_dummies() {
        let s = Scenario::from_toml_str(TOY).unwrap();
        let t = Truth::new(s.clone(), schema("C")).unwrap();
        assert_eq!(t.patterns.len(), 6);
        assert_eq!(t.subgroups.len(), 2);
        assert_eq!(t.subgroups[0].label, "gene=A, alt=fusion");
        assert_eq!(t.subgroups[1].label, "gene=B|C, alt=fusion");
        assert!((t.subgroups[1].prevalence - 0.35).abs() < 1e-12);
        // dummies: gene=A, gene=B, alt=fusion
        assert_eq!(t.influential(), CovMask::from_indices([0]));
        let t = Truth::new(s, schema("A")).unwrap();
        // dummies: gene=B, gene=C, alt=fusion
        assert_eq!(t.influential(), CovMask::from_indices([0, 1]));
        assert_eq!(t.futile_components(), vec![(1, vec![1])]);
        assert_eq!(t.target_restriction().len(), 1);
        assert_eq!(t.target_restriction()[0].levels, vec!["other".to_string()]);
    }
}
