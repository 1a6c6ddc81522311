//! Operating characteristics of replicated trials.
//!
//! Every metric is computed from a finished [`TrialState`] and the scenario
//! truth, so metrics recomputed from saved traces equal the online ones.

use std::collections::BTreeMap;

use doseopt_core::design::{Stage, TrialState};
use doseopt_core::pk::adjust_mtd;
use doseopt_core::DoseLevel;
use serde::{Deserialize, Serialize};

use crate::scenario::Truth;
use crate::trial::DesignVariant;

/// What one trial concluded, reduced to the quantities the study averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub replicate: u64,
    /// Assessment that stopped the trial for futility.
    pub stopped_at: Option<u8>,
    /// Estimated futile patterns after assessments 1, 2 and the final analysis.
    pub estimated_futile: [Vec<bool>; 3],
    pub correct: bool,
    /// First assessment from which the estimate stayed equal to the truth.
    pub correct_stage: Option<u8>,
    pub incorrect_subgroup: bool,
    pub partial: bool,
    /// Recommended dose per truth pattern; `None` when excluded or futile.
    pub recommended: Vec<Option<DoseLevel>>,
    /// Prevalence-weighted share of each true subgroup given its OBD.
    pub pcs: Vec<f64>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub allocation: Vec<usize>,
    pub n_enrolled: usize,
    pub n_futile_enrolled: usize,
    pub mtd_tox: Option<DoseLevel>,
    pub mtd_pk: Option<DoseLevel>,
    pub mtd_star: Option<DoseLevel>,
    pub eliminations: Vec<(u8, String)>,
}

pub fn summarize(truth: &Truth, state: &TrialState, replicate: u64) -> ReplicateSummary {
    let n_pat = truth.patterns.len();
    let futile = truth.futile();
    let stopped_at = if state.stage == Stage::TerminatedFutile {
        state.futility.iter().find(|f| f.trial_stop).map(|f| f.assessment_id)
    } else {
        None
    };
    let excluded_by = |k: u8| -> Vec<bool> {
        if stopped_at.is_some_and(|s| s <= k) {
            return vec![true; n_pat];
        }
        truth
            .patterns
            .iter()
            .map(|p| state.exclusions.iter().any(|e| e.assessment <= k && e.covers(&p.pattern)))
            .collect()
    };
    let e1 = excluded_by(1);
    let e2 = excluded_by(2);
    let mut recommended = vec![None; n_pat];
    let e3: Vec<bool> = match (&state.report, stopped_at) {
        (Some(report), None) => truth
            .patterns
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if e2[i] {
                    return true;
                }
                let obd = report.subgroup_for(p.z).and_then(|s| s.obd);
                recommended[i] = obd;
                obd.is_none()
            })
            .collect(),
        _ => vec![true; n_pat],
    };
    let estimated_futile = [e1, e2, e3];
    let correct = estimated_futile[2] == futile;
    let correct_stage = correct
        .then(|| (0..3).find(|&k| estimated_futile[k..].iter().all(|e| *e == futile)).map(|k| k as u8 + 1))
        .flatten();
    let final_set = &estimated_futile[2];
    let incorrect_subgroup = stopped_at.is_none() && final_set.iter().zip(&futile).any(|(e, f)| *e && !*f);
    let partial = stopped_at.is_none()
        && truth.futile_components().iter().any(|(h, levels)| {
            truth
                .patterns
                .iter()
                .zip(final_set)
                .all(|(p, e)| !levels.contains(&p.levels[*h]) || *e)
        });
    let pcs = truth
        .subgroups
        .iter()
        .map(|g| {
            let hit: f64 = g
                .patterns
                .iter()
                .filter(|&&i| recommended[i] == Some(g.obd))
                .map(|&i| truth.patterns[i].prevalence)
                .sum();
            hit / g.prevalence
        })
        .collect();
    let influential = truth.influential();
    let selected = state.report.as_ref().map(|r| r.selected).unwrap_or_default();
    let mut allocation = vec![0; truth.grid.len()];
    let mut n_futile_enrolled = 0;
    for p in &state.patients {
        allocation[p.dose.index()] += 1;
        if truth.index_of_schema_pattern(&p.pattern).is_some_and(|i| futile[i]) {
            n_futile_enrolled += 1;
        }
    }
    let esc = state.escalation.as_ref();
    ReplicateSummary {
        replicate,
        stopped_at,
        correct,
        correct_stage,
        incorrect_subgroup,
        partial,
        recommended,
        pcs,
        true_positives: selected.and(influential).count(),
        false_positives: selected.count() - selected.and(influential).count(),
        allocation,
        n_enrolled: state.patients.len(),
        n_futile_enrolled,
        mtd_tox: esc.map(|e| e.mtd_tox),
        mtd_pk: esc.and_then(|e| e.mtd_pk),
        mtd_star: esc.map(|e| e.mtd_star),
        eliminations: state
            .exclusions
            .iter()
            .filter(|e| e.assessment > 0)
            .map(|e| (e.assessment, e.label.clone()))
            .collect(),
        estimated_futile,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub correct: f64,
    /// Share of replicates correct from assessment 1, 2 and the final analysis.
    pub by_assessment: [f64; 3],
    pub incorrect: f64,
    pub incorrect_subgroup: f64,
    /// Reported only when the futile population has several components.
    pub partial: Option<f64>,
    pub early_stop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupPcs {
    pub label: String,
    pub true_obd: DoseLevel,
    pub prevalence: f64,
    pub pcs: f64,
    /// Prevalence-weighted share recommending each level, then no dose.
    pub recommended: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetAccuracy {
    pub correct: f64,
    /// Set includes a dose above the true MTD.
    pub overdose: f64,
    /// Set misses the true MTD.
    pub missed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptableAccuracy {
    pub true_mtd: DoseLevel,
    /// The set the design actually used.
    pub design: SetAccuracy,
    /// Toxicity model alone.
    pub without_pk: SetAccuracy,
    /// Toxicity model capped by the exposure model.
    pub with_pk: Option<SetAccuracy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub mean_per_dose: Vec<f64>,
    pub share_per_dose: Vec<f64>,
    pub mean_enrolled: f64,
    pub mean_futile_enrolled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FutilityRate {
    pub assessment: u8,
    pub label: String,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyMetrics {
    pub scenario: String,
    pub design: DesignVariant,
    pub n_max: usize,
    pub n_reps: usize,
    pub seed: u64,
    pub identification: Identification,
    pub pcs: Vec<SubgroupPcs>,
    /// `None` when the scenario has no influential covariate.
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub allocation: Allocation,
    pub acceptable: AcceptableAccuracy,
    pub futility: Vec<FutilityRate>,
}

fn set_accuracy(mtds: impl Iterator<Item = DoseLevel>, truth: DoseLevel) -> SetAccuracy {
    let (mut n, mut correct, mut over, mut missed) = (0usize, 0usize, 0usize, 0usize);
    for m in mtds {
        n += 1;
        match m.cmp(&truth) {
            std::cmp::Ordering::Equal => correct += 1,
            std::cmp::Ordering::Greater => over += 1,
            std::cmp::Ordering::Less => missed += 1,
        }
    }
    let d = n.max(1) as f64;
    SetAccuracy {
        correct: correct as f64 / d,
        overdose: over as f64 / d,
        missed: missed as f64 / d,
    }
}

/// Averages replicate summaries. The result does not depend on their order.
pub fn aggregate(
    truth: &Truth,
    design: DesignVariant,
    p_t: f64,
    n_max: usize,
    seed: u64,
    summaries: &[ReplicateSummary],
) -> StudyMetrics {
    let mut reps: Vec<&ReplicateSummary> = summaries.iter().collect();
    reps.sort_by_key(|r| r.replicate);
    let n = reps.len().max(1) as f64;
    let share = |f: &dyn Fn(&ReplicateSummary) -> bool| reps.iter().filter(|r| f(r)).count() as f64 / n;

    let identification = Identification {
        correct: share(&|r| r.correct),
        by_assessment: [1u8, 2, 3].map(|k| share(&|r| r.correct_stage == Some(k))),
        incorrect: share(&|r| !r.correct),
        incorrect_subgroup: share(&|r| r.incorrect_subgroup),
        partial: (truth.futile_components().len() > 1).then(|| share(&|r| r.partial)),
        early_stop: share(&|r| r.stopped_at.is_some()),
    };

    let j = truth.grid.len();
    let pcs = truth
        .subgroups
        .iter()
        .enumerate()
        .map(|(g, sub)| {
            let mut recommended = vec![0.0; j + 1];
            for r in &reps {
                for &i in &sub.patterns {
                    let w = truth.patterns[i].prevalence / sub.prevalence;
                    let slot = r.recommended[i].map_or(j, |d| d.index());
                    recommended[slot] += w / n;
                }
            }
            SubgroupPcs {
                label: sub.label.clone(),
                true_obd: sub.obd,
                prevalence: sub.prevalence,
                pcs: reps.iter().map(|r| r.pcs[g]).sum::<f64>() / n,
                recommended,
            }
        })
        .collect();

    let influential = truth.influential().count();
    let non_influential = truth.schema.m() - influential;
    let tpr = (influential > 0).then(|| reps.iter().map(|r| r.true_positives as f64).sum::<f64>() / (n * influential as f64));
    let fpr = (non_influential > 0)
        .then(|| reps.iter().map(|r| r.false_positives as f64).sum::<f64>() / (n * non_influential as f64));

    let mut mean_per_dose = vec![0.0; j];
    for r in &reps {
        for (m, c) in mean_per_dose.iter_mut().zip(&r.allocation) {
            *m += *c as f64 / n;
        }
    }
    let total: f64 = mean_per_dose.iter().sum();
    let allocation = Allocation {
        share_per_dose: mean_per_dose.iter().map(|m| if total > 0.0 { m / total } else { 0.0 }).collect(),
        mean_per_dose,
        mean_enrolled: reps.iter().map(|r| r.n_enrolled as f64).sum::<f64>() / n,
        mean_futile_enrolled: reps.iter().map(|r| r.n_futile_enrolled as f64).sum::<f64>() / n,
    };

    let true_mtd = truth.true_mtd(p_t);
    let with_pk_all = reps.iter().all(|r| r.mtd_pk.is_some() && r.mtd_tox.is_some());
    let acceptable = AcceptableAccuracy {
        true_mtd,
        design: set_accuracy(reps.iter().filter_map(|r| r.mtd_star), true_mtd),
        without_pk: set_accuracy(reps.iter().filter_map(|r| r.mtd_tox), true_mtd),
        with_pk: (with_pk_all && !reps.is_empty()).then(|| {
            set_accuracy(
                reps.iter().map(|r| adjust_mtd(r.mtd_tox.unwrap(), r.mtd_pk.unwrap())),
                true_mtd,
            )
        }),
    };

    let mut counts: BTreeMap<(u8, String), usize> = BTreeMap::new();
    for r in &reps {
        for (a, label) in &r.eliminations {
            *counts.entry((*a, label.clone())).or_default() += 1;
        }
        if let Some(a) = r.stopped_at {
            *counts.entry((a, "trial stopped".into())).or_default() += 1;
        }
    }
    let futility = counts
        .into_iter()
        .map(|((assessment, label), c)| FutilityRate {
            assessment,
            label,
            proportion: c as f64 / n,
        })
        .collect();

    StudyMetrics {
        scenario: truth.scenario.name.clone(),
        design,
        n_max,
        n_reps: reps.len(),
        seed,
        identification,
        pcs,
        tpr,
        fpr,
        allocation,
        acceptable,
        futility,
    }
}
