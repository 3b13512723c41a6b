//! Hyper-parameters shared by training, filtration and transfer.

use alloc::string::String;

use crate::error::{DebiasError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters {
    /// Additive angular margin for positive pairs, in degrees.
    pub margin_deg: f64,
    pub temperature: f64,
    /// Weight of the per-predicate loss variance penalty.
    pub lambda: f64,
    /// Variance threshold multiplier for flagging.
    pub mu: f64,
    /// Percentage of the flagged set removed.
    pub top_d: f64,
    /// Classes with fewer samples than this are never filtered.
    pub floor: u64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    /// Trailing epochs used for per-sample loss variance.
    pub window: usize,
    pub rep_dim: usize,
    pub seed: u64,
    /// Extra training passes on the filtered corpus before transfer.
    pub retrain_rounds: usize,
    /// Reserved; no effect on any objective.
    pub beta: f64,
    /// Reserved; no effect on any objective.
    pub gamma: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            margin_deg: 10.0,
            temperature: 0.05,
            lambda: 0.3,
            mu: 1.2,
            top_d: 50.0,
            floor: 100,
            learning_rate: 2e-5,
            momentum: 0.0,
            epochs: 10,
            window: 5,
            rep_dim: 64,
            seed: 0,
            retrain_rounds: 0,
            beta: 5e5,
            gamma: 1.5,
        }
    }
}

impl Hyperparameters {
    // negated comparisons so NaN is rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(DebiasError::InvalidConfig(String::from(msg)));
        if !(0.0..90.0).contains(&self.margin_deg) {
            return bad("margin_deg must be in [0, 90)");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        if !(self.mu > 0.0) {
            return bad("mu must be positive");
        }
        if !(0.0..=100.0).contains(&self.top_d) {
            return bad("top_d must be in [0, 100]");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if self.window < 2 {
            return bad("window must be at least 2");
        }
        if self.epochs < self.window {
            return bad("epochs must be at least window");
        }
        if self.rep_dim == 0 {
            return bad("rep_dim must be positive");
        }
        Ok(())
    }
}
