mod common;

use common::{exponential_oracle, same_state_model};
use hyperdisc::estimation::{logistic, FixedParameters, ParamTransform, Params};
use hyperdisc::identification::{
    assemble_system, assemble_system_macro, build_pair_system, identify_exact, IdentifyOptions, SolveMode,
};
use hyperdisc::model::{choice_values, solve_backward, solve_backward_in, ModelSpec};
use hyperdisc::numeric::QuadDouble;
use hyperdisc::simulation::{empirical_ccps, random_transitions, simulate_panel};
use proptest::prelude::*;

/// Random model with `J, K` in `2..=4`, `T` in `1..=8`.
fn arb_model() -> impl Strategy<Value = ModelSpec> {
    (2usize..=4, 2usize..=4, 1usize..=8, 0.3f64..=1.0, 0.3f64..0.99, any::<u64>()).prop_flat_map(
        |(j, k, horizon, beta, delta, seed)| {
            prop::collection::vec(prop::collection::vec(-3.0f64..3.0, j), k).prop_map(move |utility| ModelSpec {
                num_states: j,
                num_actions: k,
                horizon,
                beta,
                delta,
                utility,
                transitions: random_transitions(j, k, seed).unwrap(),
                state_values: (0..j).map(|x| x as f64).collect(),
                equality_pairs: vec![],
            })
        },
    )
}

/// Same-state identification design with `T >= 3J - 1`.
fn arb_identifiable() -> impl Strategy<Value = ModelSpec> {
    (2usize..=4, 2usize..=3, 0usize..=3, 0.6f64..=0.99, 0.6f64..=0.99, any::<u64>())
        .prop_map(|(j, k, extra, beta, delta, seed)| same_state_model(j, k, 3 * j - 1 + extra, beta, delta, seed))
}

fn next_values(sol: &hyperdisc::ValueSolution, t: usize, j: usize) -> Vec<f64> {
    if t + 1 < sol.horizon() {
        sol.values[t + 1].clone()
    } else {
        vec![0.0; j]
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ccps_lie_on_the_simplex(model in arb_model()) {
        let sol = solve_backward(&model).unwrap();
        for period in &sol.ccps {
            for x in 0..model.num_states {
                let total: f64 = period.iter().map(|r| r[x]).sum();
                prop_assert!((total - 1.0).abs() <= 1e-12);
                prop_assert!(period.iter().all(|r| r[x] > 0.0));
            }
        }
    }

    #[test]
    fn log_ccp_ratios_equal_choice_value_gaps(model in arb_model()) {
        let sol = solve_backward(&model).unwrap();
        for t in 0..model.horizon {
            for x in 0..model.num_states {
                for a in 0..model.num_actions {
                    for b in 0..model.num_actions {
                        let lhs = (sol.ccps[t][a][x] / sol.ccps[t][b][x]).ln();
                        let rhs = sol.choice_values[t][a][x] - sol.choice_values[t][b][x];
                        prop_assert!((lhs - rhs).abs() <= 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn long_run_and_perceived_choice_values_differ_by_discounted_continuation(model in arb_model()) {
        let sol = solve_backward(&model).unwrap();
        let j = model.num_states;
        for t in 0..model.horizon {
            let v_next = next_values(&sol, t, j);
            let long_run = choice_values(&model.utility, &model.transitions, 1.0, model.delta, &v_next).unwrap();
            let perceived = choice_values(&model.utility, &model.transitions, model.beta, model.delta, &v_next).unwrap();
            for i in 0..model.num_actions {
                for x in 0..j {
                    let ev: f64 = (0..j).map(|y| model.transitions[i][x][y] * v_next[y]).sum();
                    let gap = long_run[i][x] - perceived[i][x];
                    prop_assert!((gap - (1.0 - model.beta) * model.delta * ev).abs() <= 1e-10);
                    prop_assert!((perceived[i][x] - sol.choice_values[t][i][x]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn expected_value_splits_at_the_last_state(model in arb_model()) {
        let sol = solve_backward(&model).unwrap();
        let j = model.num_states;
        for t in 0..model.horizon {
            let v = next_values(&sol, t, j);
            for i in 0..model.num_actions {
                for x in 0..j {
                    let row = &model.transitions[i][x];
                    let direct: f64 = (0..j).map(|y| row[y] * v[y]).sum();
                    let split: f64 = (0..j - 1).map(|y| row[y] * (v[y] - v[j - 1])).sum::<f64>() + v[j - 1];
                    prop_assert!((direct - split).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn unit_present_bias_matches_exponential_oracle(mut model in arb_model()) {
        model.beta = 1.0;
        let sol = solve_backward(&model).unwrap();
        let (values, ccps) = exponential_oracle(&model);
        for t in 0..model.horizon {
            for x in 0..model.num_states {
                prop_assert!((sol.values[t][x] - values[t][x]).abs() <= 1e-10);
                for i in 0..model.num_actions {
                    prop_assert!((sol.ccps[t][i][x] - ccps[t][i][x]).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn terminal_ccps_ignore_a_column_shift(model in arb_model(), x in 0usize..4, c in -5.0f64..5.0) {
        let x = x % model.num_states;
        let base = solve_backward(&model).unwrap();
        let mut shifted = model.clone();
        for row in shifted.utility.iter_mut() {
            row[x] += c;
        }
        let moved = solve_backward(&shifted).unwrap();
        let last = model.horizon - 1;
        for i in 0..model.num_actions {
            prop_assert!((base.ccps[last][i][x] - moved.ccps[last][i][x]).abs() <= 1e-12);
        }
    }

    #[test]
    fn transform_round_trips(theta in prop::collection::vec(-10.0f64..10.0, 0..4), beta in 0.01f64..0.99, delta in 0.01f64..0.99) {
        for fixed in [FixedParameters::default(), FixedParameters { beta: Some(1.0), delta: None }] {
            let transform = ParamTransform { num_theta: theta.len(), fixed };
            let params = Params { theta: theta.clone(), beta: fixed.beta.unwrap_or(beta), delta };
            let raw = transform.to_raw(&params).unwrap();
            prop_assert_eq!(raw.len(), transform.raw_len());
            let back = transform.to_natural(&raw);
            prop_assert_eq!(&back.theta, &params.theta);
            prop_assert!((back.beta - params.beta).abs() <= 1e-12);
            prop_assert!((back.delta - params.delta).abs() <= 1e-12);
        }
    }

    #[test]
    fn logistic_is_monotone_and_interior(a in -30.0f64..30.0, b in -30.0f64..30.0) {
        let (pa, pb) = (logistic(a), logistic(b));
        prop_assert!(pa > 0.0 && pa < 1.0);
        if a < b {
            prop_assert!(pa <= pb);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exact_ccps_recover_discounts_in_both_modes(model in arb_identifiable()) {
        let mut estimates = Vec::new();
        for mode in [SolveMode::PaperRightInverse, SolveMode::ConstrainedLs] {
            match identify_exact(&model, &IdentifyOptions { mode, ..Default::default() }) {
                Ok(r) => {
                    prop_assert!((r.beta_hat - model.beta).abs() < 1e-6, "{:?}: beta {} vs {}", mode, r.beta_hat, model.beta);
                    prop_assert!((r.delta_hat - model.delta).abs() < 1e-6, "{:?}: delta {} vs {}", mode, r.delta_hat, model.delta);
                    let n = model.num_states - 1;
                    let c = &r.coefficient_matrix;
                    for row in 0..n {
                        for col in 0..n {
                            let target = if row == col { 1.0 } else { 0.0 };
                            prop_assert!((c[row][col] - target).abs() < 1e-6);
                            if row != col {
                                prop_assert!(c[row][n + col].abs() < 1e-6);
                                prop_assert!(c[row][2 * n + col].abs() < 1e-6);
                            }
                        }
                    }
                    estimates.push((r.beta_hat, r.delta_hat));
                }
                // the property only covers designs that pass the rank checks
                Err(e) => prop_assume!(e.assumption().is_none(), "{}", e),
            }
        }
        if let [a, b] = estimates[..] {
            prop_assert!((a.0 - b.0).abs() < 1e-6 && (a.1 - b.1).abs() < 1e-6);
        }
    }

    #[test]
    fn one_macro_state_reduces_to_the_plain_system(model in arb_identifiable()) {
        let prims = model.primitives::<QuadDouble>();
        let sol = solve_backward_in(&prims).unwrap();
        let ps = build_pair_system(&prims.transitions, &model.equality_pairs, 1e-40);
        prop_assume!(ps.is_ok());
        let ps = ps.unwrap();
        let plain = assemble_system(&sol.ccps, &ps).unwrap();
        let reduced = assemble_system_macro(&sol.ccps, &ps, &[vec![1.0]]).unwrap();
        prop_assert_eq!(plain.a.to_f64_rows(), reduced.a.to_f64_rows());
        prop_assert_eq!(plain.b.to_f64_rows(), reduced.b.to_f64_rows());
    }

    #[test]
    fn simulation_is_deterministic(model in arb_model(), n in 1usize..200, seed in any::<u64>()) {
        let sol = solve_backward(&model).unwrap();
        let uniform = vec![1.0 / model.num_states as f64; model.num_states];
        let a = simulate_panel(&model, &sol, n, &uniform, seed).unwrap();
        let b = simulate_panel(&model, &sol, n, &uniform, seed).unwrap();
        prop_assert_eq!(a.records(), b.records());
        prop_assert_eq!(a.records().len(), n * model.horizon);
        let est = empirical_ccps(&a, model.num_states, model.num_actions, model.horizon).unwrap();
        for t in 0..model.horizon {
            for x in 0..model.num_states {
                if est.visited[t][x] {
                    let total: f64 = (0..model.num_actions).map(|i| est.p_hat[t][i][x]).sum();
                    prop_assert!((total - 1.0).abs() <= 1e-12);
                }
            }
        }
    }
}
