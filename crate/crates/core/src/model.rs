//! Model primitives and the exact forward solution by backward induction.
//!
//! Indices are 0-based throughout: actions `0..K`, states `0..J`, and period
//! index `t` in `0..T` stands for decision period `t + 1`. The reference
//! action is `K - 1` and the reference state is `J - 1`.
//!
//! Shocks are mean-zero type-1 extreme value, so the expected maximum of
//! `W + eps` is exactly `logsumexp(W)` with no Euler constant.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Assumption, Error, Result};
use crate::numeric::Real;

/// Tolerance on transition row sums and on equality-pair utilities.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Asserts `u_k(x1) = u_l(x2)`. Serialised as `[k, l, x1, x2]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 4]", into = "[usize; 4]")]
pub struct EqualityPair {
    pub k: usize,
    pub l: usize,
    pub x1: usize,
    pub x2: usize,
}

impl EqualityPair {
    pub fn new(k: usize, l: usize, x1: usize, x2: usize) -> Self {
        Self { k, l, x1, x2 }
    }

    pub fn is_same_state(&self) -> bool {
        self.x1 == self.x2
    }
}

impl From<[usize; 4]> for EqualityPair {
    fn from([k, l, x1, x2]: [usize; 4]) -> Self {
        Self { k, l, x1, x2 }
    }
}

impl From<EqualityPair> for [usize; 4] {
    fn from(p: EqualityPair) -> Self {
        [p.k, p.l, p.x1, p.x2]
    }
}

/// Full primitive set of a finite-horizon model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub beta: f64,
    pub delta: f64,
    /// `utility[i][x]`, K rows by J columns.
    pub utility: Vec<Vec<f64>>,
    /// `transitions[i][x][x'] = f(x' | x, i)`.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// Covariate value of each state index.
    pub state_values: Vec<f64>,
    #[serde(default)]
    pub equality_pairs: Vec<EqualityPair>,
}

impl ModelSpec {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let model: ModelSpec = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let (j, k) = (self.num_states, self.num_actions);
        if j == 0 {
            return Err(Error::invalid("num_states must be positive"));
        }
        if k < 2 {
            return Err(Error::invalid("num_actions must be at least 2"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be positive"));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::invalid(format!("beta = {} outside (0, 1]", self.beta)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta = {} outside (0, 1)", self.delta)));
        }
        validate_utility(&self.utility, k, j)?;
        validate_transitions(&self.transitions, k, j)?;
        if self.state_values.len() != j {
            return Err(Error::invalid(format!(
                "state_values has {} entries, expected {j}",
                self.state_values.len()
            )));
        }
        for (n, p) in self.equality_pairs.iter().enumerate() {
            if p.k >= k || p.l >= k || p.x1 >= j || p.x2 >= j {
                return Err(Error::invalid(format!(
                    "equality pair {n} [{}, {}, {}, {}] out of range",
                    p.k, p.l, p.x1, p.x2
                )));
            }
            let gap = (self.utility[p.k][p.x1] - self.utility[p.l][p.x2]).abs();
            if gap > STOCHASTIC_TOL {
                return Err(Error::invalid(format!(
                    "equality pair {n} [{}, {}, {}, {}] has utility gap {gap:e}",
                    p.k, p.l, p.x1, p.x2
                )));
            }
        }
        Ok(())
    }

    /// Additionally requires enough equality pairs for identification.
    pub fn validate_for_identification(&self) -> Result<()> {
        self.validate()?;
        let needed = self.num_states - 1;
        if self.equality_pairs.len() < needed {
            return Err(Error::violation(
                Assumption::EqualityPairs,
                format!(
                    "{} equality pairs supplied, at least {needed} required",
                    self.equality_pairs.len()
                ),
            ));
        }
        Ok(())
    }

    /// Primitives promoted to `R`. Each transition row is divided by its sum
    /// in `R`, so rows are stochastic to the working precision.
    pub fn primitives<R: Real>(&self) -> Primitives<R> {
        let transitions = self
            .transitions
            .iter()
            .map(|m| {
                m.iter()
                    .map(|row| {
                        let promoted: Vec<R> = row.iter().map(|&v| R::from_f64(v)).collect();
                        let total: R = promoted.iter().copied().sum();
                        promoted.into_iter().map(|v| v / total).collect()
                    })
                    .collect()
            })
            .collect();
        Primitives {
            utility: crate::numeric::convert2(&self.utility),
            transitions,
            beta: R::from_f64(self.beta),
            delta: R::from_f64(self.delta),
            horizon: self.horizon,
        }
    }
}

pub(crate) fn validate_utility(utility: &[Vec<f64>], k: usize, j: usize) -> Result<()> {
    if utility.len() != k || utility.iter().any(|r| r.len() != j) {
        return Err(Error::invalid(format!("utility must be {k} x {j}")));
    }
    if utility.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("utility entries must be finite"));
    }
    Ok(())
}

pub(crate) fn validate_transitions(transitions: &[Vec<Vec<f64>>], k: usize, j: usize) -> Result<()> {
    if transitions.len() != k {
        return Err(Error::invalid(format!(
            "expected {k} transition matrices, found {}",
            transitions.len()
        )));
    }
    for (i, m) in transitions.iter().enumerate() {
        if m.len() != j || m.iter().any(|r| r.len() != j) {
            return Err(Error::invalid(format!("transition matrix {i} must be {j} x {j}")));
        }
        for (x, row) in m.iter().enumerate() {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::invalid(format!("transition row ({i}, {x}) has a negative entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::invalid(format!(
                    "transition row ({i}, {x}) sums to {total}"
                )));
            }
        }
    }
    Ok(())
}

/// Model primitives in working precision `R`.
#[derive(Clone, Debug)]
pub struct Primitives<R> {
    pub utility: Vec<Vec<R>>,
    pub transitions: Vec<Vec<Vec<R>>>,
    pub beta: R,
    pub delta: R,
    pub horizon: usize,
}

/// Per-period values, choice-specific values and CCPs.
///
/// `values[t][x]`, `choice_values[t][i][x]`, `ccps[t][i][x]`, with `t`
/// the 0-based period index.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValueSolution<R = f64> {
    pub values: Vec<Vec<R>>,
    pub choice_values: Vec<Vec<Vec<R>>>,
    pub ccps: Vec<Vec<Vec<R>>>,
    /// `W - logsumexp(W)`, kept so likelihoods never take the log of an
    /// underflowed probability.
    pub log_ccps: Vec<Vec<Vec<R>>>,
}

impl<R: Real> ValueSolution<R> {
    pub fn horizon(&self) -> usize {
        self.values.len()
    }

    pub fn num_states(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn num_actions(&self) -> usize {
        self.ccps.first().map_or(0, Vec::len)
    }

    pub fn to_f64(&self) -> ValueSolution<f64> {
        use crate::numeric::{to_f64_2, to_f64_3};
        ValueSolution {
            values: to_f64_2(&self.values),
            choice_values: to_f64_3(&self.choice_values),
            ccps: to_f64_3(&self.ccps),
            log_ccps: to_f64_3(&self.log_ccps),
        }
    }
}

/// `log(sum(exp(values)))`, shifted by the maximum so it never overflows.
pub fn logsumexp<R: Real>(values: &[R]) -> Result<R> {
    if values.is_empty() {
        return Err(Error::invalid("logsumexp of an empty list"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("logsumexp input must be finite"));
    }
    let max = values.iter().copied().fold(values[0], R::max);
    let total: R = values.iter().map(|&v| (v - max).exp()).sum();
    Ok(max + total.ln())
}

/// Logit choice probabilities `exp(w_i) / sum_j exp(w_j)`.
pub fn ccp_from_values<R: Real>(w: &[R]) -> Result<Vec<R>> {
    Ok(log_ccp_from_values(w)?.into_iter().map(R::exp).collect())
}

/// `w_i - logsumexp(w)`.
pub fn log_ccp_from_values<R: Real>(w: &[R]) -> Result<Vec<R>> {
    let lse = logsumexp(w)?;
    Ok(w.iter().map(|&v| v - lse).collect())
}

/// `sum_x' v_next(x') f(x' | x, i)` for every action and state, `[i][x]`.
pub fn expected_next_values<R: Real>(transitions: &[Vec<Vec<R>>], v_next: &[R]) -> Result<Vec<Vec<R>>> {
    transitions
        .iter()
        .map(|m| {
            m.iter()
                .map(|row| {
                    if row.len() != v_next.len() {
                        return Err(Error::invalid(format!(
                            "continuation has length {}, transitions have {} states",
                            v_next.len(),
                            row.len()
                        )));
                    }
                    Ok(row.iter().zip(v_next).map(|(&f, &v)| f * v).sum())
                })
                .collect()
        })
        .collect()
}

fn check_shape<R>(utility: &[Vec<R>], transitions: &[Vec<Vec<R>>], v_next: &[R]) -> Result<()> {
    let k = utility.len();
    let j = v_next.len();
    if k == 0 || transitions.len() != k {
        return Err(Error::invalid("utility and transitions disagree on the number of actions"));
    }
    if utility.iter().any(|r| r.len() != j) || transitions.iter().any(|m| m.len() != j) {
        return Err(Error::invalid("utility, transitions and continuation disagree on J"));
    }
    Ok(())
}

/// Current choice-specific values
/// `W_i(x) = u_i(x) + beta * delta * sum_x' v_next(x') f(x' | x, i)`.
///
/// With `beta = 1` this is the long-run choice-specific value `V_i(x)`.
pub fn choice_values<R: Real>(
    utility: &[Vec<R>],
    transitions: &[Vec<Vec<R>>],
    beta: R,
    delta: R,
    v_next: &[R],
) -> Result<Vec<Vec<R>>> {
    check_shape(utility, transitions, v_next)?;
    let ev = expected_next_values(transitions, v_next)?;
    let discount = beta * delta;
    Ok(utility
        .iter()
        .zip(&ev)
        .map(|(u_row, ev_row)| u_row.iter().zip(ev_row).map(|(&u, &e)| u + discount * e).collect())
        .collect())
}

fn check_simplex<R: Real>(p_t: &[Vec<R>], j: usize) -> Result<()> {
    for x in 0..j {
        let mut total = R::zero();
        for row in p_t {
            let p = row[x];
            if !(p > R::zero()) || !p.is_finite() {
                return Err(Error::invalid(format!("CCP column {x} has a non-positive entry")));
            }
            total += p;
        }
        if (total - R::one()).abs().to_f64() > 1e-10 {
            return Err(Error::invalid(format!(
                "CCP column {x} sums to {}",
                total.to_f64()
            )));
        }
    }
    Ok(())
}

fn present_bias_correction<R: Real>(
    p_t: &[Vec<R>],
    ev: &[Vec<R>],
    beta: R,
    delta: R,
    x: usize,
) -> R {
    let weighted: R = p_t.iter().zip(ev).map(|(p, e)| p[x] * e[x]).sum();
    (R::one() - beta) * delta * weighted
}

/// Perceived long-run value
/// `V_t(x) = logsumexp_i W_i(x) + (1 - beta) delta sum_j P_j(x) sum_x' v_next f(x'|x,j)`.
pub fn perceived_value_step<R: Real>(
    w_t: &[Vec<R>],
    p_t: &[Vec<R>],
    transitions: &[Vec<Vec<R>>],
    beta: R,
    delta: R,
    v_next: &[R],
) -> Result<Vec<R>> {
    let j = v_next.len();
    check_shape(w_t, transitions, v_next)?;
    if p_t.len() != w_t.len() || p_t.iter().any(|r| r.len() != j) {
        return Err(Error::invalid("CCPs and choice values differ in shape"));
    }
    check_simplex(p_t, j)?;
    let ev = expected_next_values(transitions, v_next)?;
    let mut out = Vec::with_capacity(j);
    for x in 0..j {
        let column: Vec<R> = w_t.iter().map(|r| r[x]).collect();
        let v = logsumexp(&column)? + present_bias_correction(p_t, &ev, beta, delta, x);
        out.push(v);
    }
    if cfg!(debug_assertions) {
        if let Ok(alt) = perceived_value_reference_form(w_t, p_t, transitions, beta, delta, v_next) {
            for (a, b) in out.iter().zip(&alt) {
                let scale = 1.0 + a.abs().to_f64();
                debug_assert!(
                    (*a - *b).abs().to_f64() <= 1e-10 * scale,
                    "value forms disagree: {a:?} vs {b:?}"
                );
            }
        }
    }
    Ok(out)
}

/// The same value written through the reference action:
/// `-log P_K(x) + W_K(x) + (1 - beta) delta sum_j P_j(x) sum_x' v_next f`.
pub fn perceived_value_reference_form<R: Real>(
    w_t: &[Vec<R>],
    p_t: &[Vec<R>],
    transitions: &[Vec<Vec<R>>],
    beta: R,
    delta: R,
    v_next: &[R],
) -> Result<Vec<R>> {
    let j = v_next.len();
    check_shape(w_t, transitions, v_next)?;
    check_simplex(p_t, j)?;
    let ev = expected_next_values(transitions, v_next)?;
    let reference = w_t.len() - 1;
    Ok((0..j)
        .map(|x| {
            -p_t[reference][x].ln()
                + w_t[reference][x]
                + present_bias_correction(p_t, &ev, beta, delta, x)
        })
        .collect())
}

/// Solves the model by backward induction from a zero terminal continuation.
pub fn solve_backward(model: &ModelSpec) -> Result<ValueSolution<f64>> {
    model.validate()?;
    solve_backward_in(&model.primitives::<f64>())
}

/// Backward induction in working precision `R`.
pub fn solve_backward_in<R: Real>(prims: &Primitives<R>) -> Result<ValueSolution<R>> {
    let horizon = prims.horizon;
    let j = prims.utility.first().map_or(0, Vec::len);
    let mut values = vec![Vec::new(); horizon];
    let mut choice = vec![Vec::new(); horizon];
    let mut ccps = vec![Vec::new(); horizon];
    let mut log_ccps = vec![Vec::new(); horizon];
    let mut v_next = vec![R::zero(); j];
    for t in (0..horizon).rev() {
        let w = choice_values(&prims.utility, &prims.transitions, prims.beta, prims.delta, &v_next)?;
        let (p, log_p) = column_ccps(&w)?;
        let v = perceived_value_step(&w, &p, &prims.transitions, prims.beta, prims.delta, &v_next)?;
        v_next = v.clone();
        values[t] = v;
        choice[t] = w;
        ccps[t] = p;
        log_ccps[t] = log_p;
    }
    Ok(ValueSolution {
        values,
        choice_values: choice,
        ccps,
        log_ccps,
    })
}

/// Column-wise softmax of a `[i][x]` table, returning probabilities and logs.
fn column_ccps<R: Real>(w: &[Vec<R>]) -> Result<(Vec<Vec<R>>, Vec<Vec<R>>)> {
    let k = w.len();
    let j = w.first().map_or(0, Vec::len);
    let mut p = vec![vec![R::zero(); j]; k];
    let mut log_p = vec![vec![R::zero(); j]; k];
    for x in 0..j {
        let column: Vec<R> = w.iter().map(|r| r[x]).collect();
        let logs = log_ccp_from_values(&column)?;
        for (i, lp) in logs.into_iter().enumerate() {
            log_p[i][x] = lp;
            p[i][x] = lp.exp();
        }
    }
    Ok((p, log_p))
}
