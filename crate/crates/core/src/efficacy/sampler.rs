//! Metropolis-within-Gibbs sampler for the plateau model with hierarchical
//! spike-and-slab (sparse group) priors on the covariate effects.
//!
//! One sweep updates, in order:
//! 1. `alpha0` and `alpha1` by random-walk Metropolis;
//! 2. every characteristic indicator `xi_h` by a joint add/delete move: turning
//!    a group on draws its level indicators from their prior and the new
//!    effects from their slabs, turning it off zeroes every effect in it;
//! 3. every level indicator `nu_lh` inside an active group by a birth/death
//!    move whose birth proposal is the slab;
//! 4. every included effect `gamma_lh` by random-walk Metropolis.
//!
//! Proposals drawn from the prior cancel against the prior in the
//! acceptance ratio, leaving the likelihood ratio times the prior odds.
//! Walk scales adapt during burn-in only.
//!
//! Patients are collapsed into cells sharing a covariate pattern and dose;
//! fully observed outcomes are stored as counts.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{eff_weight, EffObservation};
use super::posterior::EffPosterior;
use super::schema::{CovMask, CovariateSchema, SlabKind};
use crate::error::{CoreError, Result};
use crate::mcmc::{RwScale, SamplerConfig};
use crate::rng::{stream, Purpose};

/// Normal priors on the plateau and dose parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffPriors {
    pub alpha0_sd: f64,
    pub alpha1_sd: f64,
}

impl EffPriors {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0_sd > 0.0 && self.alpha1_sd > 0.0) {
            return Err(CoreError::input("eff_priors", "prior standard deviations must be positive"));
        }
        Ok(())
    }
}

impl Default for EffPriors {
    /// Mean 0, variance 5 for both.
    fn default() -> Self {
        EffPriors {
            alpha0_sd: 5f64.sqrt(),
            alpha1_sd: 5f64.sqrt(),
        }
    }
}

/// Everything the sampler needs besides data.
#[derive(Debug, Clone, Copy)]
pub struct EffModel<'a> {
    pub schema: &'a CovariateSchema,
    /// Covariates that may enter the model; the rest are held at zero.
    pub active: CovMask,
    /// Scaled dose per level, each in (0,1).
    pub scaled_dose: &'a [f64],
    pub priors: EffPriors,
}

impl<'a> EffModel<'a> {
    pub fn new(schema: &'a CovariateSchema, scaled_dose: &'a [f64]) -> Self {
        EffModel {
            schema,
            active: CovMask::all(schema.m()),
            scaled_dose,
            priors: EffPriors::default(),
        }
    }

    pub fn with_active(mut self, active: CovMask) -> Self {
        self.active = active;
        self
    }
}

struct Cells {
    mask: Vec<u64>,
    log_p: Vec<f64>,
    k1: Vec<f64>,
    k0: Vec<f64>,
    partial: Vec<Vec<f64>>,
}

impl Cells {
    fn build(data: &[EffObservation], model: &EffModel) -> Result<Self> {
        let mut cells = Cells {
            mask: Vec::new(),
            log_p: Vec::new(),
            k1: Vec::new(),
            k0: Vec::new(),
            partial: Vec::new(),
        };
        let mut level_of: Vec<usize> = Vec::new();
        for (i, obs) in data.iter().enumerate() {
            if obs.dose.0 == 0 || obs.dose.0 > model.scaled_dose.len() {
                return Err(CoreError::input(format!("efficacy[{i}].dose"), "dose level outside grid"));
            }
            let w = eff_weight(obs)?;
            let level = obs.dose.index();
            let mask = obs.z.and(model.active).0;
            let c = match (0..cells.mask.len()).find(|&c| cells.mask[c] == mask && level_of[c] == level) {
                Some(c) => c,
                None => {
                    cells.mask.push(mask);
                    cells.log_p.push(model.scaled_dose[level].ln());
                    cells.k1.push(0.0);
                    cells.k0.push(0.0);
                    cells.partial.push(Vec::new());
                    level_of.push(level);
                    cells.mask.len() - 1
                }
            };
            if obs.y_eff {
                cells.k1[c] += 1.0;
            } else if w >= 1.0 {
                cells.k0[c] += 1.0;
            } else if w > 0.0 {
                cells.partial[c].push(w);
            }
        }
        Ok(cells)
    }

    fn len(&self) -> usize {
        self.mask.len()
    }

    #[inline]
    fn rise(&self, c: usize, slope_term: f64) -> f64 {
        let rate = (slope_term + self.log_p[c]).exp();
        if rate.is_infinite() {
            1.0
        } else {
            -(-rate).exp_m1()
        }
    }

    #[inline]
    fn loglik(&self, c: usize, log_plateau: f64, plateau: f64, rise: f64) -> f64 {
        let pq = plateau * rise;
        let mut ll = 0.0;
        if self.k1[c] > 0.0 {
            ll += self.k1[c] * (log_plateau + rise.ln());
        }
        if self.k0[c] > 0.0 {
            ll += self.k0[c] * (-pq).ln_1p();
        }
        for w in &self.partial[c] {
            ll += (-w * pq).ln_1p();
        }
        ll
    }
}

struct Chain<'a> {
    cells: &'a Cells,
    model: &'a EffModel<'a>,
    alpha0: f64,
    alpha1: f64,
    gamma: Vec<f64>,
    xi: u64,
    nu: u64,
    // Per-cell caches.
    shift: Vec<f64>,
    rise: Vec<f64>,
    ll: Vec<f64>,
    // Scratch for proposals.
    new_shift: Vec<f64>,
    new_rise: Vec<f64>,
    new_ll: Vec<f64>,
    step_a0: RwScale,
    step_a1: RwScale,
    step_gamma: Vec<RwScale>,
}

fn slab_draw<R: Rng + ?Sized>(kind: SlabKind, sd: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    match kind {
        SlabKind::Gaussian => sd * z,
        SlabKind::TruncatedPositive => sd * z.abs(),
        SlabKind::TruncatedNegative => -sd * z.abs(),
    }
}

#[inline]
fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    if log_ratio >= 0.0 {
        return true;
    }
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

impl<'a> Chain<'a> {
    fn new(cells: &'a Cells, model: &'a EffModel<'a>) -> Self {
        let m = model.schema.m();
        let active = model.active.and(CovMask::all(m));
        let mut xi = 0u64;
        for h in 0..model.schema.h() {
            if !model.schema.group_mask(h).and(active).is_empty() {
                xi |= 1 << h;
            }
        }
        let n = cells.len();
        let mut chain = Chain {
            cells,
            model,
            alpha0: 0.0,
            alpha1: 0.0,
            gamma: vec![0.0; m],
            xi,
            nu: active.0,
            shift: vec![0.0; n],
            rise: vec![0.0; n],
            ll: vec![0.0; n],
            new_shift: vec![0.0; n],
            new_rise: vec![0.0; n],
            new_ll: vec![0.0; n],
            step_a0: RwScale::new(0.5),
            step_a1: RwScale::new(0.5),
            step_gamma: vec![RwScale::new(0.7); m],
        };
        let (lp, p) = chain.plateau_terms(chain.alpha0);
        for c in 0..n {
            chain.rise[c] = cells.rise(c, chain.alpha1);
            chain.ll[c] = cells.loglik(c, lp, p, chain.rise[c]);
        }
        chain
    }

    fn plateau_terms(&self, alpha0: f64) -> (f64, f64) {
        let log_plateau = -alpha0.exp();
        (log_plateau, log_plateau.exp())
    }

    fn check_finite(&self, context: &str) -> Result<()> {
        let total: f64 = self.ll.iter().sum();
        if total.is_nan() || !self.alpha0.is_finite() || !self.alpha1.is_finite() || self.gamma.iter().any(|g| !g.is_finite()) {
            return Err(CoreError::numerical(
                "efficacy sampler",
                format!(
                    "non-finite state after {context}: alpha0={}, alpha1={}, gamma={:?}, loglik={total}",
                    self.alpha0, self.alpha1, self.gamma
                ),
            ));
        }
        Ok(())
    }

    fn update_alpha0<R: Rng + ?Sized>(&mut self, rng: &mut R, adapting: bool) {
        let z: f64 = StandardNormal.sample(rng);
        let prop = self.alpha0 + self.step_a0.scale * z;
        let (lp, p) = self.plateau_terms(prop);
        let mut delta = 0.0;
        for c in 0..self.cells.len() {
            self.new_ll[c] = self.cells.loglik(c, lp, p, self.rise[c]);
            delta += self.new_ll[c] - self.ll[c];
        }
        let sd = self.model.priors.alpha0_sd;
        let prior = (self.alpha0 * self.alpha0 - prop * prop) / (2.0 * sd * sd);
        let ok = accept(delta + prior, rng);
        if ok {
            self.alpha0 = prop;
            self.ll.copy_from_slice(&self.new_ll);
        }
        self.step_a0.record(ok, adapting);
    }

    fn update_alpha1<R: Rng + ?Sized>(&mut self, rng: &mut R, adapting: bool) {
        let z: f64 = StandardNormal.sample(rng);
        let prop = self.alpha1 + self.step_a1.scale * z;
        let (lp, p) = self.plateau_terms(self.alpha0);
        let mut delta = 0.0;
        for c in 0..self.cells.len() {
            self.new_rise[c] = self.cells.rise(c, prop + self.shift[c]);
            self.new_ll[c] = self.cells.loglik(c, lp, p, self.new_rise[c]);
            delta += self.new_ll[c] - self.ll[c];
        }
        let sd = self.model.priors.alpha1_sd;
        let prior = (self.alpha1 * self.alpha1 - prop * prop) / (2.0 * sd * sd);
        let ok = accept(delta + prior, rng);
        if ok {
            self.alpha1 = prop;
            self.rise.copy_from_slice(&self.new_rise);
            self.ll.copy_from_slice(&self.new_ll);
        }
        self.step_a1.record(ok, adapting);
    }

    /// Metropolis step for a change of several effects at once. `log_prior`
    /// holds every non-likelihood term of the acceptance ratio.
    fn try_gamma_change<R: Rng + ?Sized>(&mut self, changes: &[(usize, f64)], log_prior: f64, rng: &mut R) -> bool {
        let bits = changes.iter().fold(0u64, |acc, (m, _)| acc | 1 << m);
        let (lp, p) = self.plateau_terms(self.alpha0);
        let mut delta = 0.0;
        for c in 0..self.cells.len() {
            let mask = self.cells.mask[c];
            if mask & bits == 0 {
                continue;
            }
            let mut s = self.shift[c];
            for (m, g) in changes {
                if mask >> m & 1 == 1 {
                    s += g - self.gamma[*m];
                }
            }
            self.new_shift[c] = s;
            self.new_rise[c] = self.cells.rise(c, self.alpha1 + s);
            self.new_ll[c] = self.cells.loglik(c, lp, p, self.new_rise[c]);
            delta += self.new_ll[c] - self.ll[c];
        }
        let ok = accept(delta + log_prior, rng);
        if ok {
            for c in 0..self.cells.len() {
                if self.cells.mask[c] & bits != 0 {
                    self.shift[c] = self.new_shift[c];
                    self.rise[c] = self.new_rise[c];
                    self.ll[c] = self.new_ll[c];
                }
            }
            for (m, g) in changes {
                self.gamma[*m] = *g;
            }
        }
        ok
    }

    fn update_group<R: Rng + ?Sized>(&mut self, h: usize, rng: &mut R) {
        let schema = self.model.schema;
        let group = schema.group_mask(h).and(self.model.active);
        if group.is_empty() {
            return;
        }
        let q_h = schema.characteristics()[h].q_group;
        let mut changes: Vec<(usize, f64)> = Vec::with_capacity(group.count());
        if self.xi >> h & 1 == 1 {
            for m in group.iter() {
                if self.nu >> m & 1 == 1 {
                    changes.push((m, 0.0));
                }
            }
            let log_prior = ((1.0 - q_h) / q_h).ln();
            if self.try_gamma_change(&changes, log_prior, rng) {
                self.xi &= !(1 << h);
                self.nu &= !group.0;
            }
        } else {
            let mut new_nu = 0u64;
            for m in group.iter() {
                let cov = &schema.covariates()[m];
                let on = rng.random::<f64>() < cov.q_level;
                if on {
                    new_nu |= 1 << m;
                    changes.push((m, slab_draw(cov.slab, cov.slab_sd, rng)));
                }
            }
            let log_prior = (q_h / (1.0 - q_h)).ln();
            if self.try_gamma_change(&changes, log_prior, rng) {
                self.xi |= 1 << h;
                self.nu |= new_nu;
            }
        }
    }

    fn update_level<R: Rng + ?Sized>(&mut self, m: usize, rng: &mut R) {
        let cov = &self.model.schema.covariates()[m];
        if self.xi >> cov.group & 1 == 0 {
            return;
        }
        let q = cov.q_level;
        if self.nu >> m & 1 == 1 {
            if self.try_gamma_change(&[(m, 0.0)], ((1.0 - q) / q).ln(), rng) {
                self.nu &= !(1 << m);
            }
        } else {
            let g = slab_draw(cov.slab, cov.slab_sd, rng);
            if self.try_gamma_change(&[(m, g)], (q / (1.0 - q)).ln(), rng) {
                self.nu |= 1 << m;
            }
        }
    }

    fn update_effect<R: Rng + ?Sized>(&mut self, m: usize, rng: &mut R, adapting: bool) {
        let cov = &self.model.schema.covariates()[m];
        let z: f64 = StandardNormal.sample(rng);
        let cur = self.gamma[m];
        let prop = cur + self.step_gamma[m].scale * z;
        let ok = if cov.slab.admits(prop) {
            let tau2 = cov.slab_sd * cov.slab_sd;
            let log_prior = (cur * cur - prop * prop) / (2.0 * tau2);
            self.try_gamma_change(&[(m, prop)], log_prior, rng)
        } else {
            false
        };
        self.step_gamma[m].record(ok, adapting);
    }

    fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R, adapting: bool) {
        self.update_alpha0(rng, adapting);
        self.update_alpha1(rng, adapting);
        for h in 0..self.model.schema.h() {
            self.update_group(h, rng);
        }
        let active = self.model.active.and(CovMask::all(self.model.schema.m()));
        for m in active.iter() {
            self.update_level(m, rng);
        }
        for m in active.iter() {
            if self.nu >> m & 1 == 1 {
                self.update_effect(m, rng, adapting);
            }
        }
    }
}

/// Samples the posterior of the plateau model under sparse group selection.
///
/// Chain `c` uses the counter-based stream `(seed, EfficacyMcmc, c)`.
pub fn fit_eff_posterior(
    data: &[EffObservation],
    model: &EffModel,
    mcmc: &SamplerConfig,
    seed: u64,
) -> Result<EffPosterior> {
    mcmc.validate()?;
    for (j, p) in model.scaled_dose.iter().enumerate() {
        if !(*p > 0.0 && *p < 1.0) {
            return Err(CoreError::input(format!("scaled_dose[{j}]"), "must lie in (0,1)"));
        }
    }
    let m = model.schema.m();
    let h = model.schema.h();
    let cells = Cells::build(data, model)?;
    let mut post = EffPosterior::with_capacity(m, h, mcmc);
    for chain_id in 0..mcmc.chains {
        let mut rng = stream(seed, Purpose::EfficacyMcmc, chain_id as u64, 0);
        let mut chain = Chain::new(&cells, model);
        for it in 0..mcmc.iterations {
            chain.sweep(&mut rng, it < mcmc.burn_in);
            if mcmc.keeps(it) {
                chain.check_finite("sweep")?;
                post.push(chain.alpha0, chain.alpha1, &chain.gamma, chain.xi, chain.nu);
            }
        }
    }
    post.finish();
    Ok(post)
}
