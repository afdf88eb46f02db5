//! Loss stack, Adam and the end-to-end lens optimization loop.

mod adam;
mod gradcheck;
mod loss;
mod target;
mod toah;

pub use adam::Adam;
pub use gradcheck::{gradcheck, GradcheckReport, GRADCHECK_FLOOR};
pub use loss::{loss_acc, loss_balance, loss_energy, loss_terms, loss_with_gradient, LossTerms, LossWeights};
pub use target::TargetSpec;
pub use toah::{initial_design, optimize_toah, optimize_toah_with, LensSetup, ToahOutcome, ToahProblem};

use serde::{Deserialize, Serialize};

use crate::dhla::BetaSchedule;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub lambda_energy: f64,
    pub lambda_balance: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub beta_schedule: BetaSchedule,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 1.0,
            iterations: 200,
            lambda_energy: 0.2,
            lambda_balance: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            beta_schedule: BetaSchedule::default(),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("lambda_energy", self.lambda_energy),
            ("lambda_balance", self.lambda_balance),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidParameter(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        self.beta_schedule.validate()
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            energy: self.lambda_energy,
            balance: self.lambda_balance,
        }
    }

    pub fn adam(&self, dim: (usize, usize)) -> Adam {
        Adam::new(dim, self.learning_rate, self.beta1, self.beta2, self.epsilon)
    }
}

/// Loss history of a run; entry `n` is the loss before update `n`, and the
/// last entry is the loss of the returned parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: Vec<f64>,
    pub acc: Vec<f64>,
    pub energy: Vec<f64>,
    pub balance: Vec<f64>,
}

impl LossReport {
    pub fn push(&mut self, t: LossTerms) {
        self.total.push(t.total);
        self.acc.push(t.acc);
        self.energy.push(t.energy);
        self.balance.push(t.balance);
    }

    pub fn len(&self) -> usize {
        self.total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total.is_empty()
    }

    pub fn get(&self, n: usize) -> Option<LossTerms> {
        (n < self.len()).then(|| LossTerms {
            total: self.total[n],
            acc: self.acc[n],
            energy: self.energy[n],
            balance: self.balance[n],
        })
    }

    pub fn first(&self) -> Option<LossTerms> {
        self.get(0)
    }

    pub fn last(&self) -> Option<LossTerms> {
        self.len().checked_sub(1).and_then(|n| self.get(n))
    }
}

pub(crate) fn check_finite(terms: &LossTerms, iteration: usize) -> Result<()> {
    if terms.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            iteration,
            detail: format!("loss terms {terms:?}"),
        })
    }
}
