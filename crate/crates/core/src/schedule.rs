//! Teacher-forcing and learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inverse-sigmoid decay `τ / (τ + exp(iter/τ))`.
pub fn teacher_forcing_prob(iter: u64, tau: f64) -> f64 {
    tau / (tau + (iter as f64 / tau).exp())
}

/// Step decay: the rate is divided by `1/decay` once per passed milestone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub decay: f64,
    /// Zero-based epochs at which a decay takes effect.
    pub milestones: Vec<usize>,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base: 0.001,
            decay: 0.2,
            milestones: vec![30, 40, 50],
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.base > 0.0 && self.base.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config("lr decay must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count() as i32;
        self.base / (1.0 / self.decay).powi(passed)
    }
}
