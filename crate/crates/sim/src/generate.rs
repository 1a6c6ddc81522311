//! Data generation: dosages, patients, outcomes and arrival times.
//!
//! Each simulated patient owns one keystream per purpose, indexed by arrival
//! order, so a patient's clearance, efficacy draw and event times are the same
//! whatever dose a design gives them.

use doseopt_core::numerics::{norm_cdf, norm_quantile};
use doseopt_core::rng::{stream, Purpose};
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{Result, SimError};
use crate::scenario::{PkTruth, Scenario};

/// Dosages whose true toxicity probabilities equal `targets`:
/// `D_j = CL * tau_L * exp(omega * Phi^-1(pi_j))`.
pub fn derive_dose_grid(targets: &[f64], pk: &PkTruth) -> Result<Vec<f64>> {
    if targets.len() < 2 {
        return Err(SimError::scenario("doses.targets", "need at least two levels"));
    }
    if targets.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(SimError::scenario("doses.targets", "targets must lie in (0,1)"));
    }
    if targets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SimError::scenario("doses.targets", "targets must be strictly increasing"));
    }
    let base = pk.clearance_mean.ln() + pk.tau_l.ln();
    Ok(targets.iter().map(|&p| (base + pk.omega * norm_quantile(p)).exp()).collect())
}

/// Marginal toxicity probability at `dosage`: `P(dosage / CL > tau_L)`.
pub fn tox_probability(dosage: f64, pk: &PkTruth) -> f64 {
    norm_cdf((dosage.ln() - pk.clearance_mean.ln() - pk.tau_l.ln()) / pk.omega)
}

/// Empiric-model skeleton from an indifference interval
/// `target ± halfwidth`, with the prior MTD at `prior_mtd` (1-based).
pub fn calibrate_skeleton(halfwidth: f64, target: f64, prior_mtd: usize, n_levels: usize) -> Result<Vec<f64>> {
    if !(halfwidth > 0.0 && target - halfwidth > 0.0 && target + halfwidth < 1.0) {
        return Err(SimError::scenario("skeleton", "target ± halfwidth must lie in (0,1)"));
    }
    if prior_mtd == 0 || prior_mtd > n_levels {
        return Err(SimError::scenario("skeleton", "prior MTD must be a dose level"));
    }
    let (lo, hi) = ((target - halfwidth).ln(), (target + halfwidth).ln());
    let mut p = vec![0.0; n_levels];
    let nu = prior_mtd - 1;
    p[nu] = target;
    for k in (1..=nu).rev() {
        let b = hi / p[k].ln();
        p[k - 1] = (lo / b).exp();
    }
    for k in nu..n_levels - 1 {
        let b = lo / p[k].ln();
        p[k + 1] = (hi / b).exp();
    }
    Ok(p)
}

/// Independent categorical draw per characteristic, in scenario level order.
pub fn sample_patient<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Vec<usize> {
    scenario
        .characteristic
        .iter()
        .map(|c| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (l, p) in c.prevalence.iter().enumerate() {
                acc += p;
                if u < acc {
                    return l;
                }
            }
            // Rounding in the prevalences: fall back to the last level with mass.
            c.prevalence.iter().rposition(|p| *p > 0.0).unwrap_or(0)
        })
        .collect()
}

/// Draws a clearance and returns `(toxicity, auc)` at `dosage`.
pub fn simulate_toxicity<R: Rng + ?Sized>(dosage: f64, pk: &PkTruth, rng: &mut R) -> (bool, f64) {
    let z: f64 = StandardNormal.sample(rng);
    let clearance = (pk.clearance_mean.ln() + pk.omega * z).exp();
    let auc = dosage / clearance;
    (auc > pk.tau_l, auc)
}

pub fn simulate_efficacy<R: Rng + ?Sized>(prob: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < prob
}

/// Event time for an outcome that occurred, uniform on `(0, window]`.
pub fn event_time<R: Rng + ?Sized>(occurred: bool, window: f64, rng: &mut R) -> Option<f64> {
    occurred.then(|| (1.0 - rng.random::<f64>()) * window)
}

pub fn inter_arrival<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    Exp::new(rate).expect("positive rate").sample(rng)
}

/// Outcomes of one patient at an assigned dose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatientOutcome {
    pub auc: f64,
    pub tox: bool,
    pub tox_time: Option<f64>,
    pub eff: bool,
    pub eff_time: Option<f64>,
}

/// The arrival-ordered patient population of one replicate.
#[derive(Debug, Clone)]
pub struct PatientStream<'a> {
    scenario: &'a Scenario,
    seed: u64,
    arrivals: Vec<f64>,
}

impl<'a> PatientStream<'a> {
    pub fn new(scenario: &'a Scenario, seed: u64) -> Self {
        PatientStream {
            scenario,
            seed,
            arrivals: Vec::new(),
        }
    }

    /// Arrival time of the `i`-th screened patient; the first arrives at 0.
    pub fn arrival(&mut self, i: usize) -> f64 {
        while self.arrivals.len() <= i {
            let k = self.arrivals.len();
            let t = match self.arrivals.last() {
                None => 0.0,
                Some(&prev) => {
                    let mut rng = stream(self.seed, Purpose::Arrival, k as u64, 0);
                    prev + inter_arrival(self.scenario.accrual.rate, &mut rng)
                }
            };
            self.arrivals.push(t);
        }
        self.arrivals[i]
    }

    pub fn covariates(&self, i: usize) -> Vec<usize> {
        sample_patient(self.scenario, &mut stream(self.seed, Purpose::Covariates, i as u64, 0))
    }

    pub fn outcome(&self, i: usize, dosage: f64, eff_prob: f64) -> PatientOutcome {
        let i = i as u64;
        let a = &self.scenario.accrual;
        let (tox, auc) = simulate_toxicity(dosage, &self.scenario.pk, &mut stream(self.seed, Purpose::Clearance, i, 0));
        let eff = simulate_efficacy(eff_prob, &mut stream(self.seed, Purpose::Efficacy, i, 0));
        PatientOutcome {
            auc,
            tox,
            tox_time: event_time(tox, a.tox_window, &mut stream(self.seed, Purpose::ToxEventTime, i, 0)),
            eff,
            eff_time: event_time(eff, a.eff_window, &mut stream(self.seed, Purpose::EffEventTime, i, 0)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn median_target_gives_clearance_times_threshold() {
        let pk = PkTruth::default();
        let d = derive_dose_grid(&[0.3, 0.5], &pk).unwrap();
        assert!((d[1] - 19.6 * 46.31).abs() < 1e-9);
    }

    #[test]
    fn grid_round_trips_through_the_toxicity_curve() {
        let pk = PkTruth::default();
        let targets = [0.05, 0.12, 0.25, 0.38];
        let d = derive_dose_grid(&targets, &pk).unwrap();
        for (dj, p) in d.iter().zip(targets) {
            assert!((tox_probability(*dj, &pk) - p).abs() < 1e-9);
        }
    }

    #[test]
    fn threshold_rescales_every_dosage_equally() {
        let pk = PkTruth::default();
        let doubled = PkTruth { tau_l: 2.0 * pk.tau_l, ..pk };
        let targets = [0.05, 0.12, 0.25, 0.38];
        let a = derive_dose_grid(&targets, &pk).unwrap();
        let b = derive_dose_grid(&targets, &doubled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((y / x - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_increasing_targets() {
        assert!(derive_dose_grid(&[0.2, 0.2], &PkTruth::default()).is_err());
        assert!(derive_dose_grid(&[0.0, 0.2], &PkTruth::default()).is_err());
    }

    #[test]
    fn skeleton_calibration_matches_reference_values() {
        // Independent evaluation of the indifference-interval recursion.
        let p = calibrate_skeleton(0.06, 0.25, 3, 4).unwrap();
        let expect = [0.0615790030763867, 0.1400496896645594, 0.25, 0.37619626933374656];
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn infinite_threshold_never_toxic() {
        let pk = PkTruth {
            tau_l: f64::INFINITY,
            ..PkTruth::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| !simulate_toxicity(1e6, &pk, &mut rng).0));
    }

    #[test]
    fn event_time_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| event_time(true, 8.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 4.0).abs() < 0.05);
        assert_eq!(event_time(false, 8.0, &mut rng), None);
        let gaps: f64 = (0..n).map(|_| inter_arrival(0.5, &mut rng)).sum::<f64>() / n as f64;
        assert!((gaps - 2.0).abs() < 0.03);
    }

    #[test]
    fn efficacy_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..1000).all(|_| !simulate_efficacy(0.0, &mut rng)));
        assert!((0..1000).all(|_| simulate_efficacy(1.0, &mut rng)));
    }
}
