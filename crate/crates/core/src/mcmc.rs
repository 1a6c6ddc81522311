use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Chain layout for a sampler run. `iterations` counts burn-in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    #[serde(default = "one")]
    pub thin: usize,
}

fn one() -> usize {
    1
}

impl SamplerConfig {
    /// Three chains of 2000 iterations with 1000 burn-in.
    pub const EFFICACY: SamplerConfig = SamplerConfig {
        chains: 3,
        iterations: 2000,
        burn_in: 1000,
        thin: 1,
    };

    /// 4000 retained draws after 1000 burn-in.
    pub const PK: SamplerConfig = SamplerConfig {
        chains: 1,
        iterations: 5000,
        burn_in: 1000,
        thin: 1,
    };

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(CoreError::input("mcmc.chains", "need at least one chain"));
        }
        if self.thin == 0 {
            return Err(CoreError::input("mcmc.thin", "must be positive"));
        }
        if self.iterations <= self.burn_in {
            return Err(CoreError::input("mcmc.iterations", "must exceed burn_in"));
        }
        Ok(())
    }

    pub fn kept_per_chain(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }

    pub fn total_kept(&self) -> usize {
        self.kept_per_chain() * self.chains
    }

    pub fn keeps(&self, iteration: usize) -> bool {
        iteration >= self.burn_in && (iteration - self.burn_in) % self.thin == 0
    }
}

/// Random-walk proposal scale, tuned toward 20–50% acceptance while adapting.
#[derive(Debug, Clone, Copy)]
pub struct RwScale {
    pub scale: f64,
    accepted: u32,
    proposed: u32,
}

impl RwScale {
    const BATCH: u32 = 50;

    pub fn new(scale: f64) -> Self {
        RwScale {
            scale,
            accepted: 0,
            proposed: 0,
        }
    }

    pub fn record(&mut self, accepted: bool, adapting: bool) {
        if !adapting {
            return;
        }
        self.proposed += 1;
        if accepted {
            self.accepted += 1;
        }
        if self.proposed == Self::BATCH {
            let rate = self.accepted as f64 / self.proposed as f64;
            if rate < 0.2 {
                self.scale *= 0.7;
            } else if rate > 0.5 {
                self.scale *= 1.4;
            }
            self.scale = self.scale.clamp(1e-4, 50.0);
            self.accepted = 0;
            self.proposed = 0;
        }
    }
}
