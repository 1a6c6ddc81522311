//! The trial state machine: escalation, PK adjustment, futility assessments,
//! dose ranging and the final OBD analysis.
//!
//! Callers drive a trial with [`TrialState::enroll`] and
//! [`TrialState::record_outcome`], each stamped with the trial clock in
//! weeks. Scheduled analyses run lazily: the end-of-escalation and
//! end-of-randomization boundaries fire on the next enrollment or as soon as
//! every outstanding outcome they depend on is in, and the final analysis
//! fires once all patients are fully observed. Analyses only see outcomes
//! reported up to the current clock.

use super::config::DesignConfig;
use super::rules::{admissible_set, optimization_dose, randomization_probs, randomize_dose};
use super::state::*;
use crate::dose::{DoseGrid, DoseLevel};
use crate::efficacy::{
    fit_eff_posterior, select_covariates, CovMask, CovariateSchema, EffModel, EffObservation, EffPosterior,
    Pattern,
};
use crate::error::{CoreError, Result};
use crate::mcmc::SamplerConfig;
use crate::pk::{adjust_mtd, exceed_probs, fit_pk_posterior, mtd_from_exceedance, PkObservation};
use crate::rng::{child_seed, stream, Purpose};
use crate::toxicity::{acceptable_set, fit_tox_posterior, next_dose_tox, ToxObservation};

const FIT_SALT: u64 = 0x00EF_F1C4_C7_5EED;

/// Slack when comparing reported times against windows.
const TIME_EPS: f64 = 1e-9;

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl TrialState {
    pub fn new(config: DesignConfig, grid: DoseGrid<f64>, schema: CovariateSchema, seed: u64) -> Result<Self> {
        config.validate()?;
        grid.validate()?;
        for (i, r) in config.target_restriction.iter().enumerate() {
            let h = schema.find_characteristic(&r.characteristic).ok_or_else(|| {
                CoreError::input(format!("config.target_restriction[{i}].characteristic"), "unknown characteristic")
            })?;
            for l in &r.levels {
                if schema.characteristics()[h].level_index(l).is_none() {
                    return Err(CoreError::input(
                        format!("config.target_restriction[{i}].levels"),
                        format!("unknown level `{l}`"),
                    ));
                }
            }
        }
        let acceptable = grid.levels().collect();
        Ok(TrialState {
            format_version: STATE_FORMAT_VERSION,
            config,
            grid,
            schema,
            seed,
            stage: Stage::Escalation,
            clock: 0.0,
            patients: Vec::new(),
            scaled_dose: None,
            escalation: None,
            acceptable,
            exclusions: Vec::new(),
            futility: Vec::new(),
            report: None,
            stop_reason: None,
            latest_tox: None,
            latest_efficacy: None,
            fits: 0,
            log: Vec::new(),
        })
    }

    pub fn n_enrolled(&self) -> usize {
        self.patients.len()
    }

    /// Patients enrolled after escalation.
    pub fn n_dose_ranging(&self) -> usize {
        self.patients.len().saturating_sub(self.config.n1)
    }

    pub fn highest_tried(&self) -> DoseLevel {
        self.patients.iter().map(|p| p.dose).max().unwrap_or(DoseLevel::LOWEST)
    }

    /// The exclusion that bars `pattern` from enrolling, if any.
    pub fn exclusion_for(&self, pattern: &[usize]) -> Option<&Exclusion> {
        self.exclusions.iter().find(|e| e.covers(pattern))
    }

    pub fn is_eligible(&self, pattern: &[usize]) -> bool {
        self.exclusion_for(pattern).is_none()
    }

    /// Levels of characteristic `h` that may still enroll.
    pub fn allowed_levels(&self, h: usize) -> Vec<usize> {
        let n = self.schema.characteristics()[h].levels.len();
        (0..n)
            .filter(|l| !self.exclusions.iter().any(|e| e.characteristic == h && e.levels.contains(l)))
            .collect()
    }

    /// Covariates that still vary over the eligible population. Empty when
    /// heterogeneity is switched off.
    pub fn active_covariates(&self) -> CovMask {
        if !self.config.heterogeneity_enabled {
            return CovMask::EMPTY;
        }
        let mut mask = CovMask::EMPTY;
        for h in 0..self.schema.h() {
            let allowed = self.allowed_levels(h);
            if allowed.len() < 2 {
                continue;
            }
            for m in self.schema.group_mask(h).iter() {
                if allowed.contains(&self.schema.covariates()[m].level) {
                    mask.set(m, true);
                }
            }
        }
        mask
    }

    fn check_time(&self, time: f64) -> Result<()> {
        if !time.is_finite() || time < self.clock {
            return Err(CoreError::input(
                "time",
                format!("must be finite and not earlier than the trial clock ({})", self.clock),
            ));
        }
        Ok(())
    }

    fn set_stage(&mut self, to: Stage, time: f64) {
        let from = self.stage;
        self.stage = to;
        self.log.push(TraceEvent::Stage { time, from, to });
    }

    fn tox_observations(&self, t: f64, full: bool) -> Vec<ToxObservation<f64>> {
        let w = self.config.tox_window;
        self.patients
            .iter()
            .map(|p| {
                let (y, follow) = match p.tox {
                    Some(ev) if ev.occurred => (true, ev.event_time.unwrap_or(0.0)),
                    Some(_) => (false, w),
                    None if full => (false, w),
                    None => (false, (t - p.enroll_time).clamp(0.0, w)),
                };
                ToxObservation {
                    dose: p.dose,
                    y_tox: y,
                    follow_time: follow,
                    window: w,
                }
            })
            .collect()
    }

    fn eff_observations(&self, t: f64) -> Vec<EffObservation> {
        let w = self.config.eff_window;
        self.patients
            .iter()
            .filter(|p| self.is_eligible(&p.pattern))
            .map(|p| {
                let (y, follow) = match p.eff {
                    Some(ev) if ev.occurred => (true, ev.event_time.unwrap_or(0.0)),
                    Some(_) => (false, w),
                    None => (false, (t - p.enroll_time).clamp(0.0, w)),
                };
                EffObservation {
                    dose: p.dose,
                    z: p.z,
                    y_eff: y,
                    follow_time: follow,
                    window: w,
                }
            })
            .collect()
    }

    fn fit_efficacy(&mut self, t: f64, mcmc: SamplerConfig, scaled: &[f64]) -> Result<EffPosterior> {
        let seed = child_seed(self.seed ^ FIT_SALT, self.fits);
        self.fits += 1;
        let data = self.eff_observations(t);
        let model = EffModel {
            schema: &self.schema,
            active: self.active_covariates(),
            scaled_dose: scaled,
            priors: self.config.eff_priors,
        };
        fit_eff_posterior(&data, &model, &mcmc, seed)
    }

    fn escalation_complete(&self) -> bool {
        self.patients.len() == self.config.n1
            && self
                .patients
                .iter()
                .all(|p| p.tox.is_some() && (!self.config.pk_enabled || p.auc.is_some()))
    }

    fn all_observed(&self) -> bool {
        self.patients.iter().all(PatientRecord::fully_observed)
    }

    /// Runs every scheduled analysis that is due at the current clock.
    fn advance(&mut self, for_enrollment: bool) -> Result<()> {
        loop {
            let t = self.clock;
            let n = self.patients.len();
            let n_max = self.config.n_max();
            match self.stage {
                Stage::Escalation if n == self.config.n1 && (for_enrollment || self.escalation_complete()) => {
                    self.end_escalation(t)?
                }
                Stage::AdaptiveRandomization
                    if self.n_dose_ranging() == self.config.n_randomized()
                        && ((for_enrollment && n < n_max) || self.all_observed()) =>
                {
                    self.end_randomization(t)?
                }
                Stage::AdaptiveRandomization | Stage::Optimization if n == n_max && self.all_observed() => {
                    self.final_analysis(t)?
                }
                _ => return Ok(()),
            }
        }
    }

    /// Moves the clock to `time` and runs any analysis due before the next
    /// patient can be assigned.
    pub fn prepare_enrollment(&mut self, time: f64) -> Result<()> {
        self.check_time(time)?;
        self.clock = time;
        self.advance(true)
    }

    /// Enrolls a patient with the given covariate pattern at `time` and
    /// returns the assigned dose.
    pub fn enroll(&mut self, pattern: Pattern, time: f64) -> Result<Assignment> {
        self.schema.validate_pattern(&pattern)?;
        self.prepare_enrollment(time)?;
        if !self.stage.is_enrolling() {
            return Err(CoreError::State(format!("trial is in stage `{}`; enrollment is closed", self.stage)));
        }
        if self.patients.len() >= self.config.n_max() {
            return Err(CoreError::State("every planned patient has been enrolled".into()));
        }
        if let Some(ex) = self.exclusion_for(&pattern) {
            let why = if ex.assessment == 0 {
                "outside the prespecified target population".to_string()
            } else {
                format!("eliminated as futile at assessment {}", ex.assessment)
            };
            return Err(CoreError::Excluded(format!("subgroup {} {why}", ex.label)));
        }
        let z = self.schema.encode(&pattern)?;
        let assignment = match self.stage {
            Stage::Escalation => self.escalation_dose(time)?,
            _ => self.dose_ranging_dose(z, time)?,
        };
        self.patients.push(PatientRecord {
            id: assignment.patient,
            pattern: pattern.clone(),
            z,
            enroll_time: time,
            dose: assignment.dose,
            stage: self.stage,
            tox: None,
            eff: None,
            auc: None,
        });
        self.log.push(TraceEvent::Enrolled {
            time,
            pattern,
            assignment: assignment.clone(),
        });
        Ok(assignment)
    }

    fn escalation_dose(&mut self, t: f64) -> Result<Assignment> {
        let i = self.patients.len();
        let base = Assignment {
            patient: i,
            dose: DoseLevel::LOWEST,
            stage: Stage::Escalation,
            rule: AssignmentRule::Start,
            est_eff: None,
            admissible: Vec::new(),
            probs: None,
            flags: Vec::new(),
            rationale: "first patient starts at the lowest dose".into(),
        };
        if i == 0 {
            return Ok(base);
        }
        if i % self.config.cohort_size != 0 {
            let dose = self.patients[i - 1].dose;
            return Ok(Assignment {
                dose,
                rule: AssignmentRule::Cohort,
                rationale: format!("completes the current cohort at {dose}"),
                ..base
            });
        }
        let obs = self.tox_observations(t, self.config.full_observation_escalation);
        let post = fit_tox_posterior(&obs, &self.grid, self.config.tox_prior_sd())?;
        let highest = self.highest_tried();
        let dose = next_dose_tox(&post, self.config.p_t, highest);
        let rationale = format!(
            "CRM posterior toxicity {:?}; closest to target {} without skipping above {}",
            post.post_probs
                .iter()
                .map(|p| (p * 1e4).round() / 1e4)
                .collect::<Vec<_>>(),
            self.config.p_t,
            highest
        );
        self.latest_tox = Some(post);
        Ok(Assignment {
            dose,
            rule: AssignmentRule::Crm,
            rationale,
            ..base
        })
    }

    /// Estimated subgroups: every eligible combination of the selected dummies.
    pub fn subgroup_masks(&self, selected: CovMask) -> Vec<(CovMask, String)> {
        let mut out: Vec<(CovMask, Vec<String>)> = vec![(CovMask::EMPTY, Vec::new())];
        for h in 0..self.schema.h() {
            let sel = selected.and(self.schema.group_mask(h));
            if sel.is_empty() {
                continue;
            }
            let ch = &self.schema.characteristics()[h];
            let allowed = self.allowed_levels(h);
            let mut options: Vec<(CovMask, String)> = Vec::new();
            for m in sel.iter() {
                let l = self.schema.covariates()[m].level;
                if allowed.contains(&l) {
                    options.push((CovMask::single(m), format!("{}={}", ch.name, ch.levels[l])));
                }
            }
            let rest: Vec<&str> = allowed
                .iter()
                .filter(|l| !sel.iter().any(|m| self.schema.covariates()[m].level == **l))
                .map(|l| ch.levels[*l].as_str())
                .collect();
            if !rest.is_empty() {
                options.push((CovMask::EMPTY, format!("{}={}", ch.name, rest.join("|"))));
            }
            out = out
                .into_iter()
                .flat_map(|(mask, labels)| {
                    options.iter().map(move |(o, lab)| {
                        let mut l = labels.clone();
                        l.push(lab.clone());
                        (CovMask(mask.0 | o.0), l)
                    })
                })
                .collect();
        }
        out.into_iter()
            .map(|(m, l)| (m, if l.is_empty() { "all".to_string() } else { l.join(", ") }))
            .collect()
    }

    /// Draws to condition on the selected covariates, falling back to all draws.
    fn draws_for(post: &EffPosterior, selected: CovMask) -> Result<(Vec<usize>, bool)> {
        match post.conditional_indices(selected) {
            Ok(v) => Ok(v),
            Err(CoreError::Conditioning(_)) => Ok(((0..post.n_draws()).collect(), true)),
            Err(e) => Err(e),
        }
    }

    fn summarize_efficacy(
        &self,
        t: f64,
        post: &EffPosterior,
        scaled: &[f64],
        selected: CovMask,
        idx: &[usize],
        fell_back: bool,
    ) -> EfficacySummary {
        let curves = self
            .subgroup_masks(selected)
            .into_iter()
            .map(|(mask, label)| {
                let mut m = Vec::with_capacity(scaled.len());
                let mut lo = Vec::with_capacity(scaled.len());
                let mut hi = Vec::with_capacity(scaled.len());
                for p in scaled {
                    let mut v: Vec<f64> = idx.iter().map(|&d| post.prob(d, *p, mask)).collect();
                    m.push(mean(v.iter().copied()));
                    v.sort_by(f64::total_cmp);
                    lo.push(quantile(&v, 0.025));
                    hi.push(quantile(&v, 0.975));
                }
                EfficacyCurve {
                    mask,
                    label,
                    mean: m,
                    lower: lo,
                    upper: hi,
                }
            })
            .collect();
        EfficacySummary {
            time: t,
            n_patients: self.patients.iter().filter(|p| self.is_eligible(&p.pattern)).count(),
            scaled_dose: scaled.to_vec(),
            active: self.active_covariates(),
            inclusion_probs: post.inclusion_probs.clone(),
            selected,
            fell_back,
            curves,
        }
    }

    fn dose_ranging_dose(&mut self, z: CovMask, t: f64) -> Result<Assignment> {
        let scaled = self
            .scaled_dose
            .clone()
            .ok_or_else(|| CoreError::State("scaled doses missing after escalation".into()))?;
        let patient = self.patients.len();
        let k = self.n_dose_ranging() + 1;
        let post = self.fit_efficacy(t, self.config.mcmc_interim, &scaled)?;
        let selected = select_covariates(&post, self.config.psi_e).and(self.active_covariates());
        let (idx, fell_back) = Self::draws_for(&post, selected)?;
        let zs = z.and(selected);
        let est: Vec<f64> = scaled
            .iter()
            .map(|p| mean(idx.iter().map(|&d| post.prob(d, *p, zs))))
            .collect();
        let mut treated = vec![0usize; self.grid.len()];
        for p in &self.patients {
            if p.z.and(selected) == zs && self.is_eligible(&p.pattern) {
                treated[p.dose.index()] += 1;
            }
        }
        let admissible = admissible_set(&self.acceptable, &est, &treated, self.config.kappa, self.config.s_min);
        self.latest_efficacy = Some(self.summarize_efficacy(t, &post, &scaled, selected, &idx, fell_back));

        let mut flags = Vec::new();
        if fell_back {
            flags.push("conditioning_fallback".to_string());
        }
        let stage = self.stage;
        let base = Assignment {
            patient,
            dose: self.acceptable[0],
            stage,
            rule: if stage == Stage::AdaptiveRandomization {
                AssignmentRule::Randomization
            } else {
                AssignmentRule::Optimization
            },
            est_eff: Some(est.clone()),
            admissible: admissible.clone(),
            probs: None,
            flags,
            rationale: String::new(),
        };
        if admissible.is_empty() {
            let mut a = base;
            a.flags.push("empty_admissible_set".into());
            a.rationale = "no admissible dose; lowest acceptable dose assigned".into();
            return Ok(a);
        }
        let eff_adm: Vec<f64> = admissible.iter().map(|d| est[d.index()]).collect();
        if stage == Stage::AdaptiveRandomization {
            let mut rng = stream(self.seed, Purpose::Randomization, patient as u64, 0);
            let probs = randomization_probs(&eff_adm)?;
            let dose = randomize_dose(&admissible, &eff_adm, &mut rng)?;
            Ok(Assignment {
                dose,
                probs: Some(probs),
                rationale: format!("randomized over {} admissible doses in proportion to estimated efficacy", admissible.len()),
                ..base
            })
        } else {
            let alpha = self.config.alpha(k);
            let dose = optimization_dose(&admissible, &eff_adm, alpha)?;
            Ok(Assignment {
                dose,
                rationale: format!("lowest admissible dose within {alpha:.4} of the best estimated efficacy"),
                ..base
            })
        }
    }

    fn end_escalation(&mut self, t: f64) -> Result<()> {
        let n1 = self.config.n1;
        let obs = self.tox_observations(t, false);
        let post = fit_tox_posterior(&obs, &self.grid, self.config.tox_prior_sd())?;
        let mtd_tox = next_dose_tox(&post, self.config.p_t, self.highest_tried());
        let pk_data: Option<Vec<PkObservation>> = self.patients[..n1]
            .iter()
            .map(|p| p.auc.map(|auc| PkObservation { dose: p.dose, auc }))
            .collect();
        let (pk_exceed, mtd_pk) = match pk_data {
            Some(data) => {
                let mut rng = stream(self.seed, Purpose::PkMcmc, 0, 0);
                let pk = fit_pk_posterior(&data, &self.grid, &self.config.pk_prior, &self.config.mcmc_pk, &mut rng)?;
                let probs = exceed_probs(&pk, &self.grid, self.config.pk_threshold);
                let mtd = mtd_from_exceedance(&probs, self.config.p_t);
                (Some(probs), Some(mtd))
            }
            None if self.config.pk_enabled => {
                return Err(CoreError::input("patients.auc", "AUC is missing for escalation patients"));
            }
            None => (None, None),
        };
        self.set_stage(Stage::PkAdjust, t);
        let mtd_star = match (self.config.pk_enabled, mtd_pk) {
            (true, Some(pk)) => adjust_mtd(mtd_tox, pk),
            _ => mtd_tox,
        };
        self.acceptable = acceptable_set(mtd_star, &self.grid);
        self.scaled_dose = Some(post.post_probs.clone());
        let summary = EscalationSummary {
            time: t,
            tox_posterior: post.clone(),
            mtd_tox,
            pk_exceed,
            mtd_pk,
            mtd_star,
            acceptable: self.acceptable.clone(),
            acceptable_without_pk: acceptable_set(mtd_tox, &self.grid),
        };
        self.latest_tox = Some(post);
        self.escalation = Some(summary.clone());
        self.log.push(TraceEvent::Escalation(summary));

        self.set_stage(Stage::Futility1, t);
        for r in self.config.target_restriction.clone() {
            let h = self.schema.find_characteristic(&r.characteristic).expect("validated");
            let ch = &self.schema.characteristics()[h];
            let levels: Vec<usize> = r.levels.iter().filter_map(|l| ch.level_index(l)).collect();
            let ex = Exclusion {
                characteristic: h,
                levels,
                assessment: 0,
                covariate: None,
                value: None,
                label: format!("{}={}", ch.name, r.levels.join("|")),
                time: t,
            };
            self.log.push(TraceEvent::Restriction(ex.clone()));
            self.exclusions.push(ex);
        }
        if self.config.heterogeneity_enabled && self.futility_assessment(1, t)? {
            return Ok(());
        }
        self.set_stage(Stage::AdaptiveRandomization, t);
        Ok(())
    }

    fn end_randomization(&mut self, t: f64) -> Result<()> {
        self.set_stage(Stage::Futility2, t);
        if self.config.heterogeneity_enabled && self.futility_assessment(2, t)? {
            return Ok(());
        }
        self.set_stage(Stage::Optimization, t);
        Ok(())
    }

    /// Runs futility assessment `id`; returns true when the trial stops.
    fn futility_assessment(&mut self, id: u8, t: f64) -> Result<bool> {
        let scaled = self
            .scaled_dose
            .clone()
            .ok_or_else(|| CoreError::State("scaled doses missing after escalation".into()))?;
        let mtd_star = self.escalation.as_ref().map(|e| e.mtd_star).unwrap_or(DoseLevel::LOWEST);
        let post = self.fit_efficacy(t, self.config.mcmc_efficacy, &scaled)?;
        let active = self.active_covariates();
        let incl = post.inclusion_probs.clone();
        let mut influential: Option<usize> = None;
        for m in active.iter() {
            if incl[m] > self.config.psi_f && influential.is_none_or(|b| incl[m] > incl[b]) {
                influential = Some(m);
            }
        }
        let mut out = FutilityOutcome {
            assessment_id: id,
            time: t,
            inclusion_probs: incl,
            influential_covariate: influential,
            tests: Vec::new(),
            eliminated: None,
            trial_stop: false,
            fell_back: false,
        };
        if let Some(m) = influential {
            let (idx, fell_back) = Self::draws_for(&post, CovMask::single(m))?;
            out.fell_back = fell_back;
            let p_star = scaled[mtd_star.index()];
            for value in [false, true] {
                let members: Vec<&PatientRecord> = self
                    .patients
                    .iter()
                    .filter(|p| self.is_eligible(&p.pattern) && p.z.get(m) == value)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let mut groups: Vec<(CovMask, f64)> = Vec::new();
                for p in &members {
                    let key = p.z.and(active);
                    match groups.iter_mut().find(|(k, _)| *k == key) {
                        Some(g) => g.1 += 1.0,
                        None => groups.push((key, 1.0)),
                    }
                }
                let total = members.len() as f64;
                let hits = idx
                    .iter()
                    .filter(|&&d| {
                        let avg: f64 = groups.iter().map(|(k, c)| c * post.prob(d, p_star, *k)).sum::<f64>() / total;
                        avg > self.config.c_f
                    })
                    .count();
                let prob_exceed = hits as f64 / idx.len() as f64;
                let (n_qualifying, needed) = if id == 1 {
                    (
                        members.iter().filter(|p| p.dose == mtd_star).count(),
                        self.config.futility_min_at_mtd,
                    )
                } else {
                    (
                        members.iter().filter(|p| self.acceptable.contains(&p.dose)).count(),
                        self.config.futility_min_across,
                    )
                };
                let criterion_met = prob_exceed < self.config.lambda;
                let enough_patients = n_qualifying >= needed;
                out.tests.push(SubgroupTest {
                    value,
                    n_patients: members.len(),
                    n_qualifying,
                    prob_exceed,
                    criterion_met,
                    enough_patients,
                    futile: criterion_met && enough_patients,
                });
            }
            let futile: Vec<bool> = out.tests.iter().filter(|s| s.futile).map(|s| s.value).collect();
            if futile.len() == 2 {
                out.trial_stop = true;
            } else if let Some(&value) = futile.first() {
                let cov = &self.schema.covariates()[m];
                let ch = &self.schema.characteristics()[cov.group];
                let levels: Vec<usize> = if value {
                    vec![cov.level]
                } else {
                    self.allowed_levels(cov.group).into_iter().filter(|l| *l != cov.level).collect()
                };
                let names: Vec<&str> = levels.iter().map(|l| ch.levels[*l].as_str()).collect();
                out.eliminated = Some(Exclusion {
                    characteristic: cov.group,
                    label: format!("{}={}", ch.name, names.join("|")),
                    levels,
                    assessment: id,
                    covariate: Some(m),
                    value: Some(value),
                    time: t,
                });
            }
        }
        let stop = out.trial_stop;
        if let Some(ex) = &out.eliminated {
            self.exclusions.push(ex.clone());
        }
        self.futility.push(out.clone());
        self.log.push(TraceEvent::Futility(out));
        if stop {
            self.stop_reason = Some(format!(
                "every subgroup of the influential covariate was futile at assessment {id}"
            ));
            self.set_stage(Stage::TerminatedFutile, t);
        }
        Ok(stop)
    }

    fn final_analysis(&mut self, t: f64) -> Result<()> {
        self.set_stage(Stage::FinalAnalysis, t);
        let cfg = self.config.clone();
        let skeleton = self.scaled_dose.clone().unwrap_or_else(|| self.grid.skeleton.clone());
        let grid_final = DoseGrid::new(self.grid.dosage.clone(), skeleton)?;
        let obs = self.tox_observations(t, true);
        let tox = fit_tox_posterior(&obs, &grid_final, cfg.tox_prior_sd())?;
        let mtd_final = next_dose_tox(&tox, cfg.p_t, self.highest_tried());
        let acceptable = acceptable_set(mtd_final, &self.grid);
        let scaled = tox.post_probs.clone();

        let post = self.fit_efficacy(t, cfg.mcmc_efficacy, &scaled)?;
        let active = self.active_covariates();
        let selected = select_covariates(&post, cfg.psi_e).and(active);
        let (idx, fell_back) = Self::draws_for(&post, selected)?;
        let n = idx.len() as f64;
        let top = acceptable.len() - 1;
        let mut subgroups = Vec::new();
        for (mask, label) in self.subgroup_masks(selected) {
            let mut near = vec![0.0; acceptable.len()];
            let mut mean_eff = vec![0.0; acceptable.len()];
            let mut above = 0.0;
            let mut probs = vec![0.0; acceptable.len()];
            for &d in &idx {
                for (j, level) in acceptable.iter().enumerate() {
                    probs[j] = post.prob(d, scaled[level.index()], mask);
                }
                let best = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for j in 0..probs.len() {
                    if probs[j] >= cfg.epsilon * best {
                        near[j] += 1.0;
                    }
                    mean_eff[j] += probs[j];
                }
                if probs[top] >= cfg.c_f {
                    above += 1.0;
                }
            }
            near.iter_mut().for_each(|v| *v /= n);
            mean_eff.iter_mut().for_each(|v| *v /= n);
            let prob_above_cutoff = above / n;
            let mut flags = Vec::new();
            if fell_back {
                flags.push("conditioning_fallback".into());
            }
            let mut obd = match near.iter().position(|p| *p > cfg.psi_obd) {
                Some(j) => Some(acceptable[j]),
                None => {
                    flags.push("no_level_passed_obd_threshold".into());
                    let j = (0..near.len()).fold(0, |b, j| if near[j] > near[b] { j } else { b });
                    Some(acceptable[j])
                }
            };
            if prob_above_cutoff < cfg.delta {
                obd = None;
                flags.push("futile_at_assessment_3".into());
            }
            subgroups.push(SubgroupObd {
                mask,
                label,
                obd,
                prob_near_max: near,
                prob_above_cutoff,
                mean_eff,
                flags,
            });
        }
        self.latest_efficacy = Some(self.summarize_efficacy(t, &post, &scaled, selected, &idx, fell_back));
        let report = ObdReport {
            time: t,
            tox_posterior: tox.clone(),
            mtd_final,
            acceptable,
            active,
            inclusion_probs: post.inclusion_probs.clone(),
            selected,
            fell_back,
            subgroups,
        };
        self.latest_tox = Some(tox);
        self.report = Some(report.clone());
        self.log.push(TraceEvent::Final(report));
        self.set_stage(Stage::Complete, t);
        Ok(())
    }

    /// Records reported outcomes for `patient` at `time` and runs any
    /// analysis that becomes due.
    pub fn record_outcome(&mut self, patient: usize, report: OutcomeReport, time: f64) -> Result<()> {
        self.check_time(time)?;
        if self.stage == Stage::Complete {
            return Err(CoreError::State("trial is complete".into()));
        }
        let p = self
            .patients
            .get(patient)
            .ok_or_else(|| CoreError::NotFound(format!("patient {patient}")))?;
        if report.toxicity.is_none() && report.efficacy.is_none() && report.auc.is_none() {
            return Err(CoreError::input("outcome", "report contains no outcome"));
        }
        let check = |ev: &Option<EventReport>, have: bool, window: f64, field: &str| -> Result<()> {
            let Some(ev) = ev else { return Ok(()) };
            if have {
                return Err(CoreError::State(format!("{field} already recorded for patient {patient}")));
            }
            match (ev.occurred, ev.event_time) {
                (true, Some(e)) => {
                    if !(e > 0.0 && e <= window + TIME_EPS) {
                        return Err(CoreError::input(format!("{field}.event_time"), "must lie in (0, window]"));
                    }
                    if p.enroll_time + e > time + TIME_EPS {
                        return Err(CoreError::input(format!("{field}.event_time"), "event lies in the future"));
                    }
                }
                (true, None) => {
                    return Err(CoreError::input(format!("{field}.event_time"), "required when the event occurred"));
                }
                (false, Some(_)) => {
                    return Err(CoreError::input(format!("{field}.event_time"), "only allowed when the event occurred"));
                }
                (false, None) => {
                    if time + TIME_EPS < p.enroll_time + window {
                        return Err(CoreError::input(field, "observation window has not ended"));
                    }
                }
            }
            Ok(())
        };
        check(&report.toxicity, p.tox.is_some(), self.config.tox_window, "outcome.toxicity")?;
        check(&report.efficacy, p.eff.is_some(), self.config.eff_window, "outcome.efficacy")?;
        if let Some(auc) = report.auc {
            if p.auc.is_some() {
                return Err(CoreError::State(format!("outcome.auc already recorded for patient {patient}")));
            }
            if !(auc > 0.0 && auc.is_finite()) {
                return Err(CoreError::input("outcome.auc", "must be positive"));
            }
        }
        let stamp = |ev: EventReport| RecordedEvent {
            occurred: ev.occurred,
            event_time: ev.event_time,
            recorded_at: time,
        };
        let rec = &mut self.patients[patient];
        if let Some(ev) = report.toxicity {
            rec.tox = Some(stamp(ev));
        }
        if let Some(ev) = report.efficacy {
            rec.eff = Some(stamp(ev));
        }
        if report.auc.is_some() {
            rec.auc = report.auc;
        }
        self.clock = time;
        self.log.push(TraceEvent::Outcome { time, patient, report });
        if self.stage.is_terminal() {
            return Ok(());
        }
        self.advance(false)
    }
}
