use hyperdisc::design::{LinearDesign, DEFAULT_TRANSITION_SEED};
use hyperdisc::model::{solve_backward, ModelSpec, ValueSolution};
use hyperdisc::simulation::{empirical_ccps, estimate_transitions, rng_from_seed, simulate_panel, PanelData};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn identity(j: usize) -> Vec<Vec<f64>> {
    (0..j).map(|x| (0..j).map(|y| f64::from(u8::from(x == y))).collect()).collect()
}

fn model(utility: Vec<Vec<f64>>, transitions: Vec<Vec<Vec<f64>>>, horizon: usize) -> ModelSpec {
    let j = utility[0].len();
    ModelSpec {
        num_states: j,
        num_actions: utility.len(),
        horizon,
        beta: 0.8,
        delta: 0.9,
        utility,
        transitions,
        state_values: (0..j).map(|x| x as f64).collect(),
        equality_pairs: vec![],
    }
}

fn solved(m: &ModelSpec) -> ValueSolution {
    solve_backward(m).unwrap()
}

#[test]
fn near_degenerate_ccps_always_pick_the_dominant_action() {
    let m = model(vec![vec![60.0; 3], vec![0.0; 3]], vec![identity(3), identity(3)], 5);
    let sol = solved(&m);
    let panel = simulate_panel(&m, &sol, 1000, &[1.0 / 3.0; 3], 11).unwrap();
    assert!(panel.records().iter().all(|r| r.action == 0));
}

#[test]
fn identity_transitions_keep_every_state_fixed() {
    let m = model(vec![vec![0.2, -0.4, 0.1, 0.0], vec![0.0; 4]], vec![identity(4), identity(4)], 6);
    let sol = solved(&m);
    let panel = simulate_panel(&m, &sol, 500, &[0.25; 4], 3).unwrap();
    for agent in panel.agents() {
        assert!(agent.iter().all(|r| r.state == agent[0].state));
    }
}

#[test]
fn deterministic_transitions_are_recovered_exactly() {
    // action 0 shifts the state up by one (cyclically), action 1 resets it
    let j = 4;
    let shift: Vec<Vec<f64>> = (0..j).map(|x| (0..j).map(|y| f64::from(u8::from(y == (x + 1) % j))).collect()).collect();
    let reset: Vec<Vec<f64>> = (0..j).map(|_| (0..j).map(|y| f64::from(u8::from(y == 0))).collect()).collect();
    let m = model(vec![vec![0.1, 0.3, -0.2, 0.0], vec![0.0; 4]], vec![shift, reset], 8);
    let sol = solved(&m);
    let panel = simulate_panel(&m, &sol, 400, &[0.25; 4], 5).unwrap();
    let est = estimate_transitions(&panel, j, 2).unwrap();
    for i in 0..2 {
        for x in 0..j {
            if est.visited[i][x] {
                assert_eq!(est.f_hat[i][x], m.transitions[i][x], "row ({i}, {x})");
            }
        }
    }
}

#[test]
fn unvisited_transition_rows_are_uniform_and_flagged() {
    let m = model(vec![vec![0.5, 0.5, 0.5], vec![0.0; 3]], vec![identity(3), identity(3)], 3);
    let sol = solved(&m);
    // everyone starts in state 0 and identity transitions keep them there
    let panel = simulate_panel(&m, &sol, 200, &[1.0, 0.0, 0.0], 8).unwrap();
    let est = estimate_transitions(&panel, 3, 2).unwrap();
    for i in 0..2 {
        for x in 1..3 {
            assert!(!est.visited[i][x]);
            assert!(est.f_hat[i][x].iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        }
    }
    assert_eq!(est.unvisited_rows(), 4);
    let ccps = empirical_ccps(&panel, 3, 2, 3).unwrap();
    assert!(ccps.visited.iter().all(|v| v[0] && !v[1] && !v[2]));
}

#[test]
fn panels_do_not_depend_on_worker_count() {
    let m = LinearDesign::setting_one().model(DEFAULT_TRANSITION_SEED).unwrap();
    let sol = solved(&m);
    let run = |threads: usize| -> PanelData {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_panel(&m, &sol, 3000, &[0.2; 5], 17).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    let mut a = Vec::new();
    let mut b = Vec::new();
    one.write_csv(&mut a).unwrap();
    run(3).write_csv(&mut b).unwrap();
    assert_eq!(a, b);
}

fn max_errors(m: &ModelSpec, sol: &ValueSolution, n: usize, seed: u64) -> (f64, f64) {
    let (j, k, horizon) = (m.num_states, m.num_actions, m.horizon);
    let panel = simulate_panel(m, sol, n, &vec![1.0 / j as f64; j], seed).unwrap();
    let ccps = empirical_ccps(&panel, j, k, horizon).unwrap();
    let mut ccp_err = 0.0f64;
    for t in 0..horizon {
        for x in 0..j {
            if ccps.visited[t][x] {
                for i in 0..k {
                    ccp_err = ccp_err.max((ccps.p_hat[t][i][x] - sol.ccps[t][i][x]).abs());
                }
            }
        }
    }
    let f = estimate_transitions(&panel, j, k).unwrap();
    let mut f_err = 0.0f64;
    for i in 0..k {
        for x in 0..j {
            for y in 0..j {
                f_err = f_err.max((f.f_hat[i][x][y] - m.transitions[i][x][y]).abs());
            }
        }
    }
    (ccp_err, f_err)
}

const CONSISTENCY: [(usize, f64); 3] = [(1_000, 0.05), (10_000, 0.02), (100_000, 0.01)];

#[test]
fn transition_frequencies_meet_consistency_thresholds() {
    let m = LinearDesign::setting_one().model(DEFAULT_TRANSITION_SEED).unwrap();
    let sol = solved(&m);
    let mut previous = f64::INFINITY;
    for (n, bound) in CONSISTENCY {
        let (_, f_err) = max_errors(&m, &sol, n, 1);
        assert!(f_err <= bound, "N = {n}: transition error {f_err} > {bound}");
        assert!(f_err < previous, "N = {n}: transition error {f_err} did not shrink");
        previous = f_err;
    }
}

#[test]
fn empirical_ccps_meet_consistency_thresholds() {
    let m = LinearDesign::setting_one().model(DEFAULT_TRANSITION_SEED).unwrap();
    let sol = solved(&m);
    let mut report = Vec::new();
    let mut previous = f64::INFINITY;
    let mut ok = true;
    for (n, bound) in CONSISTENCY {
        let (ccp_err, _) = max_errors(&m, &sol, n, 1);
        ok &= ccp_err <= bound && ccp_err < previous;
        report.push(format!("N = {n}: {ccp_err:.4} (bound {bound})"));
        previous = ccp_err;
    }
    assert!(ok, "max CCP error over visited cells: {}", report.join(", "));
}

#[test]
fn categorical_sampling_matches_gumbel_max_in_distribution() {
    let w = [0.4, -0.3, 1.1, 0.0];
    let draws = 100_000;
    let m = model(w.iter().map(|&u| vec![u]).collect(), vec![vec![vec![1.0]]; 4], 1);
    let sol = solved(&m);
    let panel = simulate_panel(&m, &sol, draws, &[1.0], 21).unwrap();
    let mut categorical = [0u64; 4];
    for r in panel.records() {
        categorical[r.action] += 1;
    }

    let mut rng = rng_from_seed(22);
    let mut gumbel = [0u64; 4];
    for _ in 0..draws {
        let best = (0..4)
            .map(|i| {
                let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                (i, w[i] - (-u.ln()).ln())
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        gumbel[best] += 1;
    }

    // two-sample homogeneity test, 3 degrees of freedom
    let n = draws as f64;
    let stat: f64 = (0..4)
        .map(|i| {
            let pooled = (categorical[i] + gumbel[i]) as f64 / 2.0;
            let (a, b) = (categorical[i] as f64, gumbel[i] as f64);
            (a - pooled).powi(2) / pooled + (b - pooled).powi(2) / pooled
        })
        .sum();
    let chi = ChiSquared::new(3.0).unwrap();
    let p_value = 1.0 - chi.cdf(stat);
    assert!(p_value > 0.001, "stat {stat}, p = {p_value}, {categorical:?} vs {gumbel:?}");

    // and each sample against the logit probabilities themselves
    for counts in [categorical, gumbel] {
        let gof: f64 = (0..4)
            .map(|i| {
                let expected = n * sol.ccps[0][i][0];
                (counts[i] as f64 - expected).powi(2) / expected
            })
            .sum();
        assert!(1.0 - chi.cdf(gof) > 0.001, "goodness of fit {gof} for {counts:?}");
    }
}
