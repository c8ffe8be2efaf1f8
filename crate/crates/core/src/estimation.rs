//! Two-step maximum likelihood: transitions by frequencies, then utility
//! parameters and discount factors by maximising the CCP log-likelihood with
//! the backward induction solved inside the objective.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StartRecord};
use crate::model::{solve_backward_in, validate_transitions, Primitives};
use crate::simulation::{empirical_ccps, PanelData, TransitionEstimate};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityForm {
    /// `u_i(x) = a_i + b_i * s(x)` for each non-reference action.
    #[default]
    LinearInState,
    /// One free utility per non-reference action and state.
    FreeTable,
}

/// Maps a parameter vector to a utility table. The reference action's
/// utility is fixed at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub form: UtilityForm,
    pub state_values: Vec<f64>,
    pub num_actions: usize,
    pub reference_action: usize,
}

impl UtilitySpec {
    pub fn new(form: UtilityForm, state_values: Vec<f64>, num_actions: usize, reference_action: usize) -> Result<Self> {
        let spec = Self {
            form,
            state_values,
            num_actions,
            reference_action,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn num_states(&self) -> usize {
        self.state_values.len()
    }

    pub fn num_params(&self) -> usize {
        let free_actions = self.num_actions - 1;
        match self.form {
            UtilityForm::LinearInState => 2 * free_actions,
            UtilityForm::FreeTable => free_actions * self.num_states(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_actions < 2 || self.state_values.is_empty() {
            return Err(Error::invalid("utility spec needs K >= 2 and J >= 1"));
        }
        if self.reference_action >= self.num_actions {
            return Err(Error::invalid("reference action out of range"));
        }
        if self.num_params() >= self.num_actions * self.num_states() {
            return Err(Error::invalid(
                "utility parameterisation has as many parameters as utility cells",
            ));
        }
        Ok(())
    }

    /// Utility table `[i][x]` for parameters `theta`.
    pub fn utility(&self, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
        if theta.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "expected {} utility parameters, got {}",
                self.num_params(),
                theta.len()
            )));
        }
        let j = self.num_states();
        let mut table = vec![vec![0.0; j]; self.num_actions];
        let mut free = 0;
        for (i, row) in table.iter_mut().enumerate() {
            if i == self.reference_action {
                continue;
            }
            match self.form {
                UtilityForm::LinearInState => {
                    let (a, b) = (theta[2 * free], theta[2 * free + 1]);
                    for (cell, s) in row.iter_mut().zip(&self.state_values) {
                        *cell = a + b * s;
                    }
                }
                UtilityForm::FreeTable => row.copy_from_slice(&theta[free * j..(free + 1) * j]),
            }
            free += 1;
        }
        Ok(table)
    }
}

/// Parameters held fixed during estimation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FixedParameters {
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
}

/// Structural parameters in natural units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub theta: Vec<f64>,
    pub beta: f64,
    pub delta: f64,
}

impl Params {
    /// `[theta..., beta, delta]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.theta.clone();
        v.push(self.beta);
        v.push(self.delta);
        v
    }
}

pub fn logistic(raw: f64) -> f64 {
    if raw >= 0.0 {
        1.0 / (1.0 + (-raw).exp())
    } else {
        let e = raw.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("logit needs a value in (0, 1), got {p}")));
    }
    Ok((p / (1.0 - p)).ln())
}

/// Unconstrained parameterisation: identity for `theta`, logistic for the
/// discount factors. Fixed discount factors are left out of the raw vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamTransform {
    pub num_theta: usize,
    pub fixed: FixedParameters,
}

impl ParamTransform {
    pub fn raw_len(&self) -> usize {
        self.num_theta + usize::from(self.fixed.beta.is_none()) + usize::from(self.fixed.delta.is_none())
    }

    pub fn to_natural(&self, raw: &[f64]) -> Params {
        let mut rest = raw[self.num_theta..].iter();
        let beta = self.fixed.beta.unwrap_or_else(|| logistic(*rest.next().expect("beta slot")));
        let delta = self.fixed.delta.unwrap_or_else(|| logistic(*rest.next().expect("delta slot")));
        Params {
            theta: raw[..self.num_theta].to_vec(),
            beta,
            delta,
        }
    }

    pub fn to_raw(&self, params: &Params) -> Result<Vec<f64>> {
        if params.theta.len() != self.num_theta {
            return Err(Error::invalid("parameter vector has the wrong length"));
        }
        let mut raw = params.theta.clone();
        if self.fixed.beta.is_none() {
            raw.push(logit(params.beta)?);
        }
        if self.fixed.delta.is_none() {
            raw.push(logit(params.delta)?);
        }
        Ok(raw)
    }
}

/// Per-period action counts `[t][i][x]`, the sufficient statistic of the
/// CCP block of the likelihood.
#[derive(Clone, Debug, PartialEq)]
pub struct ChoiceCounts {
    pub counts: Vec<Vec<Vec<u64>>>,
}

impl ChoiceCounts {
    pub fn from_panel(panel: &PanelData, num_states: usize, num_actions: usize) -> Result<Self> {
        let est = empirical_ccps(panel, num_states, num_actions, panel.horizon())?;
        Ok(Self { counts: est.counts })
    }
}

fn check_discounts(beta: f64, delta: f64) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!(
            "discount factors beta = {beta}, delta = {delta} out of range"
        )));
    }
    Ok(())
}

/// CCP log-likelihood from aggregated counts. The transition block is left
/// out: it does not depend on the utility or discount parameters.
pub fn log_likelihood_counts(
    counts: &ChoiceCounts,
    spec: &UtilitySpec,
    theta: &[f64],
    beta: f64,
    delta: f64,
    f_hat: &TransitionEstimate,
) -> Result<f64> {
    check_discounts(beta, delta)?;
    let j = spec.num_states();
    validate_transitions(&f_hat.f_hat, spec.num_actions, j)?;
    let prims = Primitives {
        utility: spec.utility(theta)?,
        transitions: f_hat.f_hat.clone(),
        beta,
        delta,
        horizon: counts.counts.len(),
    };
    let solution = solve_backward_in(&prims)?;
    let mut total = 0.0;
    for (period_counts, log_p) in counts.counts.iter().zip(&solution.log_ccps) {
        for (row_counts, row_log_p) in period_counts.iter().zip(log_p) {
            for (&n, &lp) in row_counts.iter().zip(row_log_p) {
                if n > 0 {
                    total += n as f64 * lp;
                }
            }
        }
    }
    Ok(total)
}

/// `sum_n sum_t log P_t(a_nt | x_nt)` at the given parameters.
pub fn log_likelihood(
    panel: &PanelData,
    spec: &UtilitySpec,
    theta: &[f64],
    beta: f64,
    delta: f64,
    f_hat: &TransitionEstimate,
) -> Result<f64> {
    let counts = ChoiceCounts::from_panel(panel, spec.num_states(), spec.num_actions)?;
    log_likelihood_counts(&counts, spec, theta, beta, delta, f_hat)
}

/// Transition block `sum log f(x_{t+1} | x_t, a_t)` of the full likelihood.
pub fn transition_log_likelihood(panel: &PanelData, transitions: &[Vec<Vec<f64>>]) -> f64 {
    panel
        .agents()
        .flat_map(|agent| agent.windows(2))
        .map(|w| transitions[w[0].action][w[0].state][w[1].state].ln())
        .sum()
}

/// Explicit start in natural units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartPoint {
    pub theta: Vec<f64>,
    pub beta: f64,
    pub delta: f64,
}

fn default_discount_grid() -> Vec<f64> {
    vec![0.7, 0.8, 0.9]
}

fn default_param_tol() -> f64 {
    1e-8
}

fn default_objective_tol() -> f64 {
    1e-10
}

fn default_gradient_tol() -> f64 {
    1e-4
}

fn default_max_iterations() -> usize {
    500
}

fn default_theta_scale() -> f64 {
    0.95
}

/// Estimation settings. Missing fields take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    /// Explicit starts; when empty the grid below is used.
    #[serde(default)]
    pub starts: Vec<StartPoint>,
    /// Reference utility parameters; grid starts use `theta_scale` times these.
    #[serde(default)]
    pub reference_theta: Option<Vec<f64>>,
    #[serde(default = "default_theta_scale")]
    pub theta_scale: f64,
    /// Starting values for each free discount factor.
    #[serde(default = "default_discount_grid")]
    pub discount_grid: Vec<f64>,
    #[serde(default = "default_param_tol")]
    pub param_tol: f64,
    #[serde(default = "default_objective_tol")]
    pub objective_tol: f64,
    /// Gradient bound accepted as convergence when no further ascent step is found.
    #[serde(default = "default_gradient_tol")]
    pub gradient_tol: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub utility_form: UtilityForm,
    #[serde(default)]
    pub fixed_parameters: FixedParameters,
    /// Defaults to the last action.
    #[serde(default)]
    pub reference_action: Option<usize>,
    /// Covariate per state; defaults to the state index.
    #[serde(default)]
    pub state_values: Option<Vec<f64>>,
    #[serde(default)]
    pub num_states: Option<usize>,
    #[serde(default)]
    pub num_actions: Option<usize>,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl EstimationConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Utility spec for `num_states` states and `num_actions` actions.
    pub fn utility_spec(&self, num_states: usize, num_actions: usize) -> Result<UtilitySpec> {
        let state_values = match &self.state_values {
            Some(v) if v.len() != num_states => {
                return Err(Error::invalid(format!(
                    "state_values has {} entries, expected {num_states}",
                    v.len()
                )))
            }
            Some(v) => v.clone(),
            None => (0..num_states).map(|x| x as f64).collect(),
        };
        UtilitySpec::new(
            self.utility_form,
            state_values,
            num_actions,
            self.reference_action.unwrap_or(num_actions - 1),
        )
    }

    /// Explicit starts, or the grid of scaled reference utilities crossed
    /// with the discount grid for every free discount factor.
    pub fn start_points(&self, num_theta: usize) -> Result<Vec<StartPoint>> {
        if !self.starts.is_empty() {
            return Ok(self.starts.clone());
        }
        let theta: Vec<f64> = match &self.reference_theta {
            Some(r) if r.len() != num_theta => {
                return Err(Error::invalid(format!(
                    "reference_theta has {} entries, expected {num_theta}",
                    r.len()
                )))
            }
            Some(r) => r.iter().map(|v| v * self.theta_scale).collect(),
            None => vec![0.0; num_theta],
        };
        if self.discount_grid.is_empty() {
            return Err(Error::invalid("discount_grid is empty"));
        }
        let betas: Vec<f64> = match self.fixed_parameters.beta {
            Some(b) => vec![b],
            None => self.discount_grid.clone(),
        };
        let deltas: Vec<f64> = match self.fixed_parameters.delta {
            Some(d) => vec![d],
            None => self.discount_grid.clone(),
        };
        Ok(betas
            .iter()
            .flat_map(|&beta| {
                let theta = theta.clone();
                deltas.iter().map(move |&delta| StartPoint {
                    theta: theta.clone(),
                    beta,
                    delta,
                })
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleResult {
    pub theta_u_hat: Vec<f64>,
    pub beta_hat: f64,
    pub delta_hat: f64,
    pub loglik: f64,
    pub per_start: Vec<StartRecord>,
    pub best_start_index: usize,
}

/// Outcome of one local ascent.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalOptimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Tolerances for [`maximize`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AscentSettings {
    pub param_tol: f64,
    pub objective_tol: f64,
    pub gradient_tol: f64,
    pub max_iterations: usize,
}

/// Central-difference gradient with per-coordinate step `step * max(1, |x_i|)`.
pub fn numerical_gradient<F>(f: &F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = step * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Step used by [`maximize`] for its finite-difference gradients.
pub const GRADIENT_STEP: f64 = 1e-5;

/// Largest raw-parameter move per iteration.
const MAX_STEP: f64 = 5.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BFGS ascent with Armijo backtracking and finite-difference gradients.
///
/// Converged when one iteration moves every coordinate by less than
/// `param_tol` and raises the objective by less than `objective_tol`, or
/// when no ascent step exists and the gradient is below `gradient_tol`.
pub fn maximize<F>(f: &F, x0: &[f64], settings: &AscentSettings) -> Result<LocalOptimum>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x)?;
    if n == 0 {
        return Ok(LocalOptimum {
            x,
            value: fx,
            iterations: 0,
            converged: true,
        });
    }
    let identity = |scale: f64| {
        let mut m = vec![vec![0.0; n]; n];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = scale;
        }
        m
    };
    // inverse Hessian of -f
    let mut h_inv = identity(1.0 / (1.0 + fx.abs()).max(1.0));
    let mut grad = numerical_gradient(f, &x, GRADIENT_STEP)?;
    let mut fresh_start = true;
    for iteration in 1..=settings.max_iterations {
        // ascent direction d = H g
        let mut d: Vec<f64> = h_inv.iter().map(|row| dot(row, &grad)).collect();
        let mut slope = dot(&grad, &d);
        if !(slope > 0.0) {
            h_inv = identity(1.0 / (1.0 + fx.abs()).max(1.0));
            d = h_inv.iter().map(|row| dot(row, &grad)).collect();
            slope = dot(&grad, &d);
            fresh_start = true;
        }
        let longest = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if longest > MAX_STEP {
            let shrink = MAX_STEP / longest;
            d.iter_mut().for_each(|v| *v *= shrink);
            slope *= shrink;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            if let Ok(ft) = f(&trial) {
                if ft.is_finite() && ft >= fx + 1e-4 * alpha * slope {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            if !fresh_start {
                h_inv = identity(1.0 / (1.0 + fx.abs()).max(1.0));
                fresh_start = true;
                continue;
            }
            let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            return Ok(LocalOptimum {
                x,
                value: fx,
                iterations: iteration,
                converged: gmax <= settings.gradient_tol,
            });
        };
        let step_max = x_new.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let improvement = f_new - fx;
        let grad_new = numerical_gradient(f, &x_new, GRADIENT_STEP)?;
        if step_max < settings.param_tol && improvement < settings.objective_tol {
            return Ok(LocalOptimum {
                x: x_new,
                value: f_new,
                iterations: iteration,
                converged: true,
            });
        }
        // BFGS update on the minimisation problem: s = step, y = -(g_new - g)
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad.iter().zip(&grad_new).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh_start {
                let scale = sy / dot(&y, &y);
                h_inv = identity(scale);
            }
            let hy: Vec<f64> = h_inv.iter().map(|row| dot(row, &y)).collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    h_inv[i][j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
            fresh_start = false;
        }
        x = x_new;
        fx = f_new;
        grad = grad_new;
    }
    Ok(LocalOptimum {
        x,
        value: fx,
        iterations: settings.max_iterations,
        converged: false,
    })
}

/// Maximum-likelihood estimates of utility parameters and discount factors
/// given first-stage transition estimates.
///
/// Every start runs to completion; the reported estimate is the highest
/// final log-likelihood over all starts, ties going to the lowest index.
pub fn fit_mle(panel: &PanelData, config: &EstimationConfig, f_hat: &TransitionEstimate) -> Result<MleResult> {
    let k = f_hat.f_hat.len();
    let j = f_hat.f_hat.first().map_or(0, Vec::len);
    let spec = config.utility_spec(j, k)?;
    let counts = ChoiceCounts::from_panel(panel, j, k)?;
    fit_mle_counts(&counts, &spec, config, f_hat)
}

/// [`fit_mle`] on aggregated counts.
pub fn fit_mle_counts(
    counts: &ChoiceCounts,
    spec: &UtilitySpec,
    config: &EstimationConfig,
    f_hat: &TransitionEstimate,
) -> Result<MleResult> {
    let transform = ParamTransform {
        num_theta: spec.num_params(),
        fixed: config.fixed_parameters,
    };
    if let Some(b) = config.fixed_parameters.beta {
        check_discounts(b, 0.5)?;
    }
    if let Some(d) = config.fixed_parameters.delta {
        check_discounts(1.0, d)?;
    }
    let starts = config.start_points(spec.num_params())?;
    if starts.is_empty() {
        return Err(Error::invalid("no start points"));
    }
    let raw_starts = starts
        .iter()
        .map(|s| {
            transform.to_raw(&Params {
                theta: s.theta.clone(),
                beta: s.beta,
                delta: s.delta,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let settings = AscentSettings {
        param_tol: config.param_tol,
        objective_tol: config.objective_tol,
        gradient_tol: config.gradient_tol,
        max_iterations: config.max_iterations,
    };
    let objective = |raw: &[f64]| {
        let p = transform.to_natural(raw);
        log_likelihood_counts(counts, spec, &p.theta, p.beta, p.delta, f_hat)
    };
    let outcomes: Vec<Result<LocalOptimum>> = raw_starts
        .par_iter()
        .map(|x0| maximize(&objective, x0, &settings))
        .collect();

    let mut records = Vec::with_capacity(starts.len());
    let mut best: Option<(usize, f64)> = None;
    for (idx, (start, outcome)) in starts.iter().zip(outcomes).enumerate() {
        let start_vec = Params {
            theta: start.theta.clone(),
            beta: start.beta,
            delta: start.delta,
        }
        .to_vec();
        match outcome {
            Ok(opt) => {
                let natural = transform.to_natural(&opt.x);
                if best.map_or(true, |(_, v)| opt.value > v) {
                    best = Some((idx, opt.value));
                }
                records.push(StartRecord {
                    start: start_vec,
                    converged: opt.converged,
                    final_loglik: opt.value,
                    iterations: opt.iterations,
                    estimate: natural.to_vec(),
                });
            }
            Err(_) => records.push(StartRecord {
                start: start_vec,
                converged: false,
                final_loglik: f64::NEG_INFINITY,
                iterations: 0,
                estimate: Vec::new(),
            }),
        }
    }
    if !records.iter().any(|r| r.converged) {
        return Err(Error::NonConvergence { records });
    }
    let (best_idx, loglik) = best.expect("a converged start exists");
    let estimate = &records[best_idx].estimate;
    let n = spec.num_params();
    Ok(MleResult {
        theta_u_hat: estimate[..n].to_vec(),
        beta_hat: estimate[n],
        delta_hat: estimate[n + 1],
        loglik,
        per_start: records,
        best_start_index: best_idx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_examples() {
        assert_eq!(logistic(0.0), 0.5);
        assert!((logistic(logit(0.85).unwrap()) - 0.85).abs() < 1e-12);
        assert!(logistic(-1.0) < logistic(1.0));
        assert!(logit(0.0).is_err());
        assert!(logit(1.0).is_err());
    }

    #[test]
    fn transform_round_trip_with_fixed_beta() {
        let t = ParamTransform {
            num_theta: 2,
            fixed: FixedParameters {
                beta: Some(1.0),
                delta: None,
            },
        };
        assert_eq!(t.raw_len(), 3);
        let p = Params {
            theta: vec![0.5, -0.2],
            beta: 1.0,
            delta: 0.9,
        };
        let back = t.to_natural(&t.to_raw(&p).unwrap());
        assert_eq!(back.beta, 1.0);
        assert!((back.delta - 0.9).abs() < 1e-12);
    }

    #[test]
    fn linear_utility_table() {
        let spec = UtilitySpec::new(UtilityForm::LinearInState, vec![0.0, 1.0, 2.0], 2, 1).unwrap();
        assert_eq!(spec.utility(&[0.5, -0.25]).unwrap(), vec![vec![0.5, 0.25, 0.0], vec![0.0; 3]]);
        let free = UtilitySpec::new(UtilityForm::FreeTable, vec![0.0, 1.0], 3, 0).unwrap();
        assert_eq!(free.num_params(), 4);
        assert_eq!(
            free.utility(&[1.0, 2.0, 3.0, 4.0]).unwrap(),
            vec![vec![0.0, 0.0], vec![1.0, 2.0], vec![3.0, 4.0]]
        );
        assert!(UtilitySpec::new(UtilityForm::LinearInState, vec![0.0], 2, 1).is_err());
    }

    #[test]
    fn default_grid_has_nine_starts() {
        let config = EstimationConfig {
            reference_theta: Some(vec![0.5, -0.2]),
            ..Default::default()
        };
        let starts = config.start_points(2).unwrap();
        assert_eq!(starts.len(), 9);
        assert!((starts[0].theta[0] - 0.475).abs() < 1e-15);
        assert_eq!((starts[4].beta, starts[4].delta), (0.8, 0.8));
    }

    #[test]
    fn maximize_finds_quadratic_peak() {
        let f = |x: &[f64]| Ok(-(x[0] - 1.0).powi(2) - 3.0 * (x[1] + 2.0).powi(2) - 0.5 * x[0] * x[1]);
        let settings = AscentSettings {
            param_tol: 1e-8,
            objective_tol: 1e-10,
            gradient_tol: 1e-4,
            max_iterations: 200,
        };
        let opt = maximize(&f, &[0.0, 0.0], &settings).unwrap();
        assert!(opt.converged);
        // 2 x0 + 0.5 x1 = 2 and 0.5 x0 + 6 x1 = -12
        let (want0, want1) = (18.0 / 11.75, -25.0 / 11.75);
        assert!((opt.x[0] - want0).abs() < 1e-5, "{:?} vs {want0}", opt.x);
        assert!((opt.x[1] - want1).abs() < 1e-5, "{:?} vs {want1}", opt.x);
    }
}
