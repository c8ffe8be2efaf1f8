//! Monte Carlo replication of the estimator on the linear reference design.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::LinearDesign;
use crate::error::{Error, Result};
use crate::estimation::{fit_mle, EstimationConfig};
use crate::model::{solve_backward, ModelSpec};
use crate::simulation::{derive_seed, estimate_transitions, random_transitions, simulate_panel};

const TRANSITION_STREAM: u64 = 0x7472_616e_7369_7469;
const PANEL_STREAM: u64 = 0x7061_6e65_6c00_0000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionPolicy {
    /// One transition draw shared by every replication and sample size.
    #[default]
    FixedAcrossReps,
    /// A new draw for every replication and sample size.
    FreshPerRep,
}

fn default_sample_sizes() -> Vec<usize> {
    vec![2000]
}

fn default_replications() -> usize {
    100
}

fn default_design() -> LinearDesign {
    LinearDesign::setting_one()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    #[serde(default = "default_design")]
    pub design: LinearDesign,
    #[serde(default = "default_sample_sizes")]
    pub sample_sizes: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Worker threads; all available cores when `None`.
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub transition_policy: TransitionPolicy,
    /// Seed of the shared transition draw; derived from `base_seed` when `None`.
    #[serde(default)]
    pub transition_seed: Option<u64>,
    /// Initial state distribution; uniform when `None`.
    #[serde(default)]
    pub initial_distribution: Option<Vec<f64>>,
    /// `reference_theta` defaults to the design's `(alpha0, alpha1)`.
    #[serde(default)]
    pub estimation: EstimationConfig,
}

impl Default for McConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl McConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let config: McConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::invalid("replications must be at least 1"));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(Error::invalid("sample sizes must be a non-empty list of positive counts"));
        }
        if self.jobs == Some(0) {
            return Err(Error::invalid("jobs must be positive"));
        }
        // builds and validates a model with the design parameters
        self.design.model_with(random_transitions(self.design.num_states, 2, 0)?)?;
        if let Some(d) = &self.initial_distribution {
            if d.len() != self.design.num_states {
                return Err(Error::invalid("initial distribution length differs from num_states"));
            }
        }
        Ok(())
    }

    fn shared_transition_seed(&self) -> u64 {
        self.transition_seed
            .unwrap_or_else(|| derive_seed(self.base_seed, TRANSITION_STREAM))
    }

    /// Seed owned by replication `r` at sample size `n`.
    pub fn replication_seed(&self, replication: usize, sample_size: usize) -> u64 {
        derive_seed(derive_seed(self.base_seed, replication as u64), sample_size as u64)
    }

    fn estimation_config(&self) -> EstimationConfig {
        let mut est = self.estimation.clone();
        if est.reference_theta.is_none() {
            est.reference_theta = Some(vec![self.design.alpha0, self.design.alpha1]);
        }
        if est.state_values.is_none() {
            est.state_values = Some(self.design.state_values());
        }
        est
    }

    /// Names of the reported parameters, in table order.
    pub fn parameter_names() -> [&'static str; 4] {
        ["alpha0", "alpha1", "delta", "beta"]
    }

    pub fn true_values(&self) -> [f64; 4] {
        [self.design.alpha0, self.design.alpha1, self.design.delta, self.design.beta]
    }
}

/// Estimates from one replication, in [`McConfig::parameter_names`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub sample_size: usize,
    pub seed: u64,
    pub estimates: Option<[f64; 4]>,
    pub loglik: Option<f64>,
    pub error: Option<String>,
}

fn run_one(config: &McConfig, shared: Option<&ModelSpec>, replication: usize, sample_size: usize) -> ReplicationRecord {
    let seed = config.replication_seed(replication, sample_size);
    let outcome = (|| -> Result<(f64, [f64; 4])> {
        let fresh;
        let model = match shared {
            Some(m) => m,
            None => {
                let f = random_transitions(config.design.num_states, 2, derive_seed(seed, TRANSITION_STREAM))?;
                fresh = config.design.model_with(f)?;
                &fresh
            }
        };
        let solution = solve_backward(model)?;
        let j = model.num_states;
        let initial = config
            .initial_distribution
            .clone()
            .unwrap_or_else(|| vec![1.0 / j as f64; j]);
        let panel = simulate_panel(model, &solution, sample_size, &initial, derive_seed(seed, PANEL_STREAM))?;
        let f_hat = estimate_transitions(&panel, j, model.num_actions)?;
        let fit = fit_mle(&panel, &config.estimation_config(), &f_hat)?;
        Ok((
            fit.loglik,
            [fit.theta_u_hat[0], fit.theta_u_hat[1], fit.delta_hat, fit.beta_hat],
        ))
    })();
    match outcome {
        Ok((loglik, estimates)) => ReplicationRecord {
            replication,
            sample_size,
            seed,
            estimates: Some(estimates),
            loglik: Some(loglik),
            error: None,
        },
        Err(e) => ReplicationRecord {
            replication,
            sample_size,
            seed,
            estimates: None,
            loglik: None,
            error: Some(e.to_string()),
        },
    }
}

/// Runs every replication at every sample size. Failures are recorded, not
/// fatal. Results are ordered by sample size, then replication, and do not
/// depend on the number of worker threads.
pub fn run_replications(config: &McConfig) -> Result<Vec<ReplicationRecord>> {
    config.validate()?;
    let shared = match config.transition_policy {
        TransitionPolicy::FixedAcrossReps => {
            let f = random_transitions(config.design.num_states, 2, config.shared_transition_seed())?;
            Some(config.design.model_with(f)?)
        }
        TransitionPolicy::FreshPerRep => None,
    };
    let tasks: Vec<(usize, usize)> = config
        .sample_sizes
        .iter()
        .flat_map(|&n| (0..config.replications).map(move |r| (r, n)))
        .collect();
    let run = || {
        tasks
            .par_iter()
            .map(|&(r, n)| run_one(config, shared.as_ref(), r, n))
            .collect()
    };
    match config.jobs {
        Some(jobs) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            Ok(pool.install(run))
        }
        None => Ok(run()),
    }
}

/// Sample mean and standard deviation with divisor `n - 1`; the deviation
/// of a single value is reported as 0.
pub fn mean_sd(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptySummary);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub parameter: String,
    pub sample_size: usize,
    pub true_value: f64,
    pub mean: f64,
    pub sd: f64,
    pub replications: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub rows: Vec<SummaryRow>,
}

/// Means and standard deviations per parameter and sample size.
pub fn summarize(records: &[ReplicationRecord], true_values: [f64; 4]) -> Result<McSummary> {
    let mut sizes: Vec<usize> = records.iter().map(|r| r.sample_size).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.is_empty() {
        return Err(Error::EmptySummary);
    }
    let mut rows = Vec::new();
    for (p, name) in McConfig::parameter_names().iter().enumerate() {
        for &n in &sizes {
            let group: Vec<&ReplicationRecord> = records.iter().filter(|r| r.sample_size == n).collect();
            let values: Vec<f64> = group.iter().filter_map(|r| r.estimates.map(|e| e[p])).collect();
            let (mean, sd) = mean_sd(&values)?;
            rows.push(SummaryRow {
                parameter: name.to_string(),
                sample_size: n,
                true_value: true_values[p],
                mean,
                sd,
                replications: group.len(),
                failures: group.len() - values.len(),
            });
        }
    }
    Ok(McSummary { rows })
}

impl McSummary {
    pub fn get(&self, parameter: &str, sample_size: usize) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.parameter == parameter && r.sample_size == sample_size)
    }

    fn sample_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self.rows.iter().map(|r| r.sample_size).collect();
        sizes.sort_unstable();
        sizes.dedup();
        sizes
    }

    fn parameters(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !names.contains(&r.parameter.as_str()) {
                names.push(&r.parameter);
            }
        }
        names
    }

    /// Parameters down, sample sizes across: a mean row and a parenthesised
    /// standard-deviation row per parameter.
    pub fn render_table(&self) -> String {
        let sizes = self.sample_sizes();
        let mut out = String::new();
        let _ = write!(out, "{:<10}{:>10}", "", "True");
        for n in &sizes {
            let _ = write!(out, "{:>12}", format!("N={n}"));
        }
        out.push('\n');
        for name in self.parameters() {
            let truth = self
                .rows
                .iter()
                .find(|r| r.parameter == name)
                .map_or(f64::NAN, |r| r.true_value);
            let _ = write!(out, "{name:<10}{truth:>10.3}");
            for &n in &sizes {
                let mean = self.get(name, n).map_or(f64::NAN, |r| r.mean);
                let _ = write!(out, "{mean:>12.3}");
            }
            out.push('\n');
            let _ = write!(out, "{:<10}{:>10}", "", "");
            for &n in &sizes {
                let sd = self.get(name, n).map_or(f64::NAN, |r| r.sd);
                let _ = write!(out, "{:>12}", format!("({sd:.3})"));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Per-replication estimates as CSV, for auditing.
pub fn records_to_csv(records: &[ReplicationRecord]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record([
        "replication",
        "sample_size",
        "seed",
        "alpha0",
        "alpha1",
        "delta",
        "beta",
        "loglik",
        "error",
    ])?;
    for r in records {
        let est = |i: usize| r.estimates.map_or(String::new(), |e| e[i].to_string());
        w.write_record([
            r.replication.to_string(),
            r.sample_size.to_string(),
            r.seed.to_string(),
            est(0),
            est(1),
            est(2),
            est(3),
            r.loglik.map_or(String::new(), |v| v.to_string()),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}
