use serde::{Deserialize, Serialize};

use crate::efficacy::EffPriors;
use crate::error::{CoreError, Result};
use crate::mcmc::SamplerConfig;
use crate::pk::{PkPrior, REFERENCE_CLEARANCE};
use crate::toxicity::DEFAULT_PRIOR_VAR;

/// Toxic-exposure AUC threshold of the reference design, mg·L⁻¹·h.
pub const REFERENCE_AUC_THRESHOLD: f64 = 46.31;

/// Patients with any of `levels` of `characteristic` are not eligible after
/// escalation. Used when the target population is taken as known.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelRestriction {
    pub characteristic: String,
    pub levels: Vec<String>,
}

/// Every tunable of the two-stage design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    /// Patients in dose escalation.
    pub n1: usize,
    /// Patients in dose ranging.
    pub n2: usize,
    /// Fraction of `n2` assigned by adaptive randomization.
    pub r: f64,
    pub cohort_size: usize,
    pub p_t: f64,
    pub tox_prior_var: f64,
    pub tox_window: f64,
    pub eff_window: f64,
    /// Treat every escalation patient as fully followed when choosing doses.
    pub full_observation_escalation: bool,
    pub psi_e: f64,
    pub psi_f: f64,
    pub psi_obd: f64,
    pub c_f: f64,
    pub lambda: f64,
    pub delta: f64,
    pub kappa: f64,
    pub s_min: usize,
    pub epsilon: f64,
    pub alpha_base: f64,
    pub alpha_decay: f64,
    /// Subgroup patients needed at MTD* before assessment 1 may eliminate.
    pub futility_min_at_mtd: usize,
    /// Subgroup patients needed across acceptable doses before assessment 2 may eliminate.
    pub futility_min_across: usize,
    pub pk_enabled: bool,
    pub heterogeneity_enabled: bool,
    /// AUC above which exposure is considered toxic.
    pub pk_threshold: f64,
    pub pk_prior: PkPrior,
    pub eff_priors: EffPriors,
    /// Fits at futility assessments and the final analysis.
    pub mcmc_efficacy: SamplerConfig,
    /// Per-patient fits during dose ranging.
    pub mcmc_interim: SamplerConfig,
    pub mcmc_pk: SamplerConfig,
    pub target_restriction: Vec<LevelRestriction>,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            n1: 24,
            n2: 36,
            r: 0.5,
            cohort_size: 1,
            p_t: 0.25,
            tox_prior_var: DEFAULT_PRIOR_VAR,
            tox_window: 4.0,
            eff_window: 8.0,
            full_observation_escalation: false,
            psi_e: 0.5,
            psi_f: 0.65,
            psi_obd: 0.35,
            c_f: 0.40,
            lambda: 0.05,
            delta: 0.05,
            kappa: 0.20,
            s_min: 3,
            epsilon: 0.85,
            alpha_base: 0.40,
            alpha_decay: 0.5,
            futility_min_at_mtd: 6,
            futility_min_across: 10,
            pk_enabled: true,
            heterogeneity_enabled: true,
            pk_threshold: REFERENCE_AUC_THRESHOLD,
            pk_prior: PkPrior::reference(REFERENCE_CLEARANCE),
            eff_priors: EffPriors::default(),
            mcmc_efficacy: SamplerConfig::EFFICACY,
            mcmc_interim: SamplerConfig::EFFICACY,
            mcmc_pk: SamplerConfig::PK,
            target_restriction: Vec::new(),
        }
    }
}

fn open_unit(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(CoreError::input(format!("config.{field}"), "must lie in (0,1)"))
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CoreError::input(format!("config.{field}"), "must be positive"))
    }
}

impl DesignConfig {
    /// Paper defaults with `n2` chosen for the given total sample size.
    pub fn with_n_max(n_max: usize) -> Self {
        let base = DesignConfig::default();
        DesignConfig {
            n2: n_max.saturating_sub(base.n1),
            ..base
        }
    }

    pub fn n_max(&self) -> usize {
        self.n1 + self.n2
    }

    /// Dose-ranging patients assigned by adaptive randomization.
    pub fn n_randomized(&self) -> usize {
        ((self.r * self.n2 as f64).round() as usize).min(self.n2)
    }

    /// Optimization-phase tolerance for the `n`-th dose-ranging patient.
    pub fn alpha(&self, n: usize) -> f64 {
        self.alpha_base * (1.0 - self.alpha_decay * n as f64 / self.n2 as f64)
    }

    pub fn tox_prior_sd(&self) -> f64 {
        self.tox_prior_var.sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 {
            return Err(CoreError::input("config.n1", "must be positive"));
        }
        if self.n2 == 0 {
            return Err(CoreError::input("config.n2", "must be positive"));
        }
        if self.cohort_size == 0 {
            return Err(CoreError::input("config.cohort_size", "must be positive"));
        }
        for (field, v) in [
            ("r", self.r),
            ("p_t", self.p_t),
            ("psi_e", self.psi_e),
            ("psi_f", self.psi_f),
            ("psi_obd", self.psi_obd),
            ("c_f", self.c_f),
            ("lambda", self.lambda),
            ("delta", self.delta),
            ("kappa", self.kappa),
            ("epsilon", self.epsilon),
            ("alpha_base", self.alpha_base),
        ] {
            open_unit(field, v)?;
        }
        if !(0.0..=1.0).contains(&self.alpha_decay) {
            return Err(CoreError::input("config.alpha_decay", "must lie in [0,1]"));
        }
        positive("tox_prior_var", self.tox_prior_var)?;
        positive("tox_window", self.tox_window)?;
        positive("eff_window", self.eff_window)?;
        positive("pk_threshold", self.pk_threshold)?;
        self.pk_prior.validate()?;
        self.eff_priors.validate()?;
        for (field, m) in [
            ("mcmc_efficacy", &self.mcmc_efficacy),
            ("mcmc_interim", &self.mcmc_interim),
            ("mcmc_pk", &self.mcmc_pk),
        ] {
            m.validate().map_err(|e| match e {
                CoreError::InvalidInput { field: f, reason } => CoreError::input(format!("config.{field}.{}", &f[5..]), reason),
                other => other,
            })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = DesignConfig::default();
        c.validate().unwrap();
        assert_eq!(c.n_max(), 60);
        assert_eq!(c.n_randomized(), 18);
        assert_eq!(DesignConfig::with_n_max(80).n2, 56);
        assert_eq!(DesignConfig::with_n_max(80).n_randomized(), 28);
    }

    #[test]
    fn alpha_schedule() {
        let c = DesignConfig::default();
        assert!((c.alpha(0) - 0.40).abs() < 1e-15);
        assert!((c.alpha(c.n2) - 0.20).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_fields() {
        let c = DesignConfig { n1: 0, ..Default::default() };
        assert!(matches!(c.validate(), Err(CoreError::InvalidInput { field, .. }) if field == "config.n1"));
        let c = DesignConfig { psi_f: 1.0, ..Default::default() };
        assert!(matches!(c.validate(), Err(CoreError::InvalidInput { field, .. }) if field == "config.psi_f"));
        let mut c = DesignConfig::default();
        c.mcmc_interim.burn_in = 5000;
        assert!(matches!(c.validate(), Err(CoreError::InvalidInput { field, .. }) if field == "config.mcmc_interim.iterations"));
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c: DesignConfig = serde_json::from_str(r#"{"n2": 56, "pk_enabled": false}"#).unwrap();
        assert_eq!(c.n_max(), 80);
        assert!(!c.pk_enabled);
        assert_eq!(c.kappa, 0.20);
    }
}
