#![allow(dead_code)]

use hyperdisc::model::{EqualityPair, ModelSpec};
use hyperdisc::simulation::{random_transitions, rng_from_seed};
use rand::Rng;

/// Random model whose first and last actions share utility in every state
/// but the last, giving the `J - 1` same-state pairs `(0, K-1, x, x)`.
pub fn same_state_model(num_states: usize, num_actions: usize, horizon: usize, beta: f64, delta: f64, seed: u64) -> ModelSpec {
    let mut rng = rng_from_seed(seed ^ 0x5eed);
    let mut utility: Vec<Vec<f64>> = (0..num_actions)
        .map(|_| (0..num_states).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    for x in 0..num_states - 1 {
        utility[num_actions - 1][x] = utility[0][x];
    }
    ModelSpec {
        num_states,
        num_actions,
        horizon,
        beta,
        delta,
        utility,
        transitions: random_transitions(num_states, num_actions, seed).unwrap(),
        state_values: (0..num_states).map(|x| x as f64).collect(),
        equality_pairs: (0..num_states - 1)
            .map(|x| EqualityPair::new(0, num_actions - 1, x, x))
            .collect(),
    }
}

/// Draws a model with random size, discounts and utilities from `seed`.
pub fn random_small_model(seed: u64, horizon_extra: usize) -> ModelSpec {
    let mut rng = rng_from_seed(seed);
    let j = rng.gen_range(2..=3);
    let k = rng.gen_range(2..=3);
    let beta = rng.gen_range(0.6..0.95);
    let delta = rng.gen_range(0.6..0.95);
    same_state_model(j, k, 3 * j - 1 + horizon_extra, beta, delta, seed.wrapping_mul(31).wrapping_add(1))
}

/// Standard exponential-discounting backward recursion, written
/// independently of the library: `V_t(x) = log sum_i exp(u_i(x) + delta E V_{t+1})`.
pub fn exponential_oracle(model: &ModelSpec) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let (j, k, t_max) = (model.num_states, model.num_actions, model.horizon);
    let mut values = vec![vec![0.0; j]; t_max + 1];
    let mut ccps = vec![vec![vec![0.0; j]; k]; t_max];
    for t in (0..t_max).rev() {
        for x in 0..j {
            let w: Vec<f64> = (0..k)
                .map(|i| {
                    let ev: f64 = (0..j).map(|y| model.transitions[i][x][y] * values[t + 1][y]).sum();
                    model.utility[i][x] + model.delta * ev
                })
                .collect();
            let m = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = w.iter().map(|v| (v - m).exp()).sum();
            values[t][x] = m + s.ln();
            for i in 0..k {
                ccps[t][i][x] = (w[i] - m).exp() / s;
            }
        }
    }
    values.pop();
    (values, ccps)
}
