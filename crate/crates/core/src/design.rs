//! The linear-utility reference design: five states with covariate values
//! `0..4`, two actions, sixteen periods, `u_0(x) = alpha0 + alpha1 * s(x)`
//! and `u_1 = 0`, with random uniform transitions.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{EqualityPair, ModelSpec};
use crate::simulation::random_transitions;

/// Transition seed used when none is given.
pub const DEFAULT_TRANSITION_SEED: u64 = 2024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearDesign {
    pub num_states: usize,
    pub horizon: usize,
    pub alpha0: f64,
    pub alpha1: f64,
    pub beta: f64,
    pub delta: f64,
}

impl LinearDesign {
    /// Setting with `delta = 0.9`, `beta = 0.85`.
    pub fn setting_one() -> Self {
        Self {
            num_states: 5,
            horizon: 16,
            alpha0: 0.5,
            alpha1: -0.2,
            beta: 0.85,
            delta: 0.9,
        }
    }

    /// Setting with `delta = 0.75`, `beta = 0.7`.
    pub fn setting_two() -> Self {
        Self {
            beta: 0.7,
            delta: 0.75,
            ..Self::setting_one()
        }
    }

    pub fn state_values(&self) -> Vec<f64> {
        (0..self.num_states).map(|x| x as f64).collect()
    }

    /// The model with the given transitions. The reference action has zero
    /// utility everywhere, recorded as pairs `(1, 1, x, J - 1)`.
    pub fn model_with(&self, transitions: Vec<Vec<Vec<f64>>>) -> Result<ModelSpec> {
        let state_values = self.state_values();
        let j = self.num_states;
        let model = ModelSpec {
            num_states: j,
            num_actions: 2,
            horizon: self.horizon,
            beta: self.beta,
            delta: self.delta,
            utility: vec![
                state_values.iter().map(|s| self.alpha0 + self.alpha1 * s).collect(),
                vec![0.0; j],
            ],
            transitions,
            state_values,
            equality_pairs: (0..j.saturating_sub(1)).map(|x| EqualityPair::new(1, 1, x, j - 1)).collect(),
        };
        model.validate()?;
        Ok(model)
    }

    /// The model with seeded random transitions.
    pub fn model(&self, transition_seed: u64) -> Result<ModelSpec> {
        self.model_with(random_transitions(self.num_states, 2, transition_seed)?)
    }
}
