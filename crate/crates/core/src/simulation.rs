//! Random primitives, panel simulation and frequency estimators.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identification::SmoothingReport;
use crate::model::{ModelSpec, ValueSolution};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sub-stream `stream` of `base`:
/// `mix64(base ^ mix64(stream + 0x9E3779B97F4A7C15))`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    mix64(base ^ mix64(stream.wrapping_add(GOLDEN_GAMMA)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `K` random `J x J` transition matrices: uniform draws, rows normalised.
pub fn random_transitions(num_states: usize, num_actions: usize, seed: u64) -> Result<Vec<Vec<Vec<f64>>>> {
    if num_states == 0 || num_actions == 0 {
        return Err(Error::invalid("random_transitions needs positive dimensions"));
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..num_actions)
        .map(|_| {
            (0..num_states)
                .map(|_| {
                    let row: Vec<f64> = (0..num_states).map(|_| rng.gen::<f64>()).collect();
                    let total: f64 = row.iter().sum();
                    row.into_iter().map(|v| v / total).collect()
                })
                .collect()
        })
        .collect())
}

/// One observation. `period` is 1-based, `state` and `action` 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PanelRecord {
    pub agent: u64,
    pub period: usize,
    pub state: usize,
    pub action: usize,
}

/// A balanced panel, sorted by agent then period.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PanelData {
    records: Vec<PanelRecord>,
    horizon: usize,
}

impl PanelData {
    /// Sorts and validates records: every agent observed exactly once in each
    /// period `1..=T`, indices within `num_states` and `num_actions`.
    pub fn new(mut records: Vec<PanelRecord>, num_states: usize, num_actions: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("panel has no records"));
        }
        records.sort_unstable();
        for r in &records {
            if r.state >= num_states || r.action >= num_actions {
                return Err(Error::invalid(format!(
                    "agent {} period {}: state {} / action {} out of range",
                    r.agent, r.period, r.state, r.action
                )));
            }
        }
        let first = records[0].agent;
        let horizon = records.iter().take_while(|r| r.agent == first).count();
        if records.len() % horizon != 0 {
            return Err(Error::invalid("unbalanced panel: agents have different lengths"));
        }
        for chunk in records.chunks(horizon) {
            let agent = chunk[0].agent;
            for (offset, r) in chunk.iter().enumerate() {
                if r.agent != agent || r.period != offset + 1 {
                    return Err(Error::invalid(format!(
                        "unbalanced panel: agent {agent} is not observed in periods 1..={horizon} exactly once"
                    )));
                }
            }
        }
        Ok(Self { records, horizon })
    }

    pub fn records(&self) -> &[PanelRecord] {
        &self.records
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_agents(&self) -> usize {
        self.records.len() / self.horizon
    }

    /// Per-agent record slices in agent order.
    pub fn agents(&self) -> impl Iterator<Item = &[PanelRecord]> {
        self.records.chunks(self.horizon)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv<Rd: Read>(reader: Rd, num_states: usize, num_actions: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["agent", "period", "state", "action"] {
            return Err(Error::Parse(format!(
                "panel header must be agent,period,state,action, found {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let records = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<PanelRecord>, _>>()?;
        Self::new(records, num_states, num_actions)
    }

    pub fn load_csv(path: impl AsRef<Path>, num_states: usize, num_actions: usize) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file), num_states, num_actions)
    }

    /// Largest state and action index seen, plus one.
    pub fn observed_dimensions(&self) -> (usize, usize) {
        let j = self.records.iter().map(|r| r.state).max().unwrap_or(0) + 1;
        let k = self.records.iter().map(|r| r.action).max().unwrap_or(0) + 1;
        (j, k)
    }
}

fn check_simplex(dist: &[f64], what: &str) -> Result<()> {
    if dist.is_empty() || dist.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::invalid(format!("{what} must be a non-negative vector")));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("{what} sums to {total}")));
    }
    Ok(())
}

fn sample_categorical<G: Rng>(rng: &mut G, probs: impl IntoIterator<Item = f64>) -> usize {
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    let mut last = 0;
    for (i, p) in probs.into_iter().enumerate() {
        cumulative += p;
        if p > 0.0 {
            last = i;
        }
        if u < cumulative {
            return i;
        }
    }
    // rounding left u above the total; fall back to the last supported index
    last
}

/// Simulates `n_agents` histories of length `T`.
///
/// Agent `a` draws from its own stream seeded by `derive_seed(seed, a)`, so
/// the panel does not depend on the number of worker threads. Actions are
/// drawn from the CCPs and next states from the transition rows.
pub fn simulate_panel(
    model: &ModelSpec,
    solution: &ValueSolution,
    n_agents: usize,
    initial_dist: &[f64],
    seed: u64,
) -> Result<PanelData> {
    let (j, k, horizon) = (model.num_states, model.num_actions, model.horizon);
    if initial_dist.len() != j {
        return Err(Error::invalid(format!(
            "initial distribution has {} entries, expected {j}",
            initial_dist.len()
        )));
    }
    check_simplex(initial_dist, "initial distribution")?;
    if solution.horizon() != horizon || solution.num_states() != j || solution.num_actions() != k {
        return Err(Error::invalid("solution does not match the model dimensions"));
    }
    if n_agents == 0 {
        return Err(Error::invalid("n_agents must be positive"));
    }
    let records: Vec<PanelRecord> = (0..n_agents as u64)
        .into_par_iter()
        .flat_map_iter(|agent| {
            let mut rng = rng_from_seed(derive_seed(seed, agent));
            let mut state = sample_categorical(&mut rng, initial_dist.iter().copied());
            let mut history = Vec::with_capacity(horizon);
            for t in 0..horizon {
                let ccp = &solution.ccps[t];
                let action = sample_categorical(&mut rng, (0..k).map(|i| ccp[i][state]));
                history.push(PanelRecord {
                    agent,
                    period: t + 1,
                    state,
                    action,
                });
                state = sample_categorical(&mut rng, model.transitions[action][state].iter().copied());
            }
            history
        })
        .collect();
    Ok(PanelData { records, horizon })
}

/// Empirical CCPs by period and state.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CcpEstimate {
    /// `p_hat[t][i][x]`; NaN where `(t, x)` was never visited.
    pub p_hat: Vec<Vec<Vec<f64>>>,
    pub counts: Vec<Vec<Vec<u64>>>,
    pub visited: Vec<Vec<bool>>,
}

impl CcpEstimate {
    /// CCPs safe to take logs of: add-one-half smoothing
    /// `(count + 0.5) / (n + 0.5 K)` in visited cells holding a zero count,
    /// uniform `1 / K` in unvisited cells.
    pub fn smoothed(&self) -> (Vec<Vec<Vec<f64>>>, SmoothingReport) {
        let mut report = SmoothingReport::default();
        let mut out = self.p_hat.clone();
        for (t, period) in self.counts.iter().enumerate() {
            let k = period.len();
            let j = period.first().map_or(0, Vec::len);
            for x in 0..j {
                if !self.visited[t][x] {
                    report.unvisited_cells += 1;
                    for row in out[t].iter_mut() {
                        row[x] = 1.0 / k as f64;
                    }
                    continue;
                }
                if period.iter().any(|r| r[x] == 0) {
                    report.smoothed_cells += 1;
                    let n: u64 = period.iter().map(|r| r[x]).sum();
                    for i in 0..k {
                        out[t][i][x] = (period[i][x] as f64 + 0.5) / (n as f64 + 0.5 * k as f64);
                    }
                }
            }
        }
        (out, report)
    }
}

/// Frequency estimates of `P_t,i(x)`. Unvisited cells are flagged, not errors.
pub fn empirical_ccps(panel: &PanelData, num_states: usize, num_actions: usize, horizon: usize) -> Result<CcpEstimate> {
    if panel.horizon() != horizon {
        return Err(Error::invalid(format!(
            "panel horizon {} differs from {horizon}",
            panel.horizon()
        )));
    }
    let mut counts = vec![vec![vec![0u64; num_states]; num_actions]; horizon];
    for r in panel.records() {
        if r.state >= num_states || r.action >= num_actions {
            return Err(Error::invalid("panel indices exceed the stated dimensions"));
        }
        counts[r.period - 1][r.action][r.state] += 1;
    }
    let mut p_hat = vec![vec![vec![f64::NAN; num_states]; num_actions]; horizon];
    let mut visited = vec![vec![false; num_states]; horizon];
    for t in 0..horizon {
        for x in 0..num_states {
            let n: u64 = (0..num_actions).map(|i| counts[t][i][x]).sum();
            if n > 0 {
                visited[t][x] = true;
                for i in 0..num_actions {
                    p_hat[t][i][x] = counts[t][i][x] as f64 / n as f64;
                }
            }
        }
    }
    Ok(CcpEstimate { p_hat, counts, visited })
}

/// Pooled frequency estimates of `f(x' | x, i)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransitionEstimate {
    /// Rows never visited are uniform `1 / J`.
    pub f_hat: Vec<Vec<Vec<f64>>>,
    pub counts: Vec<Vec<Vec<u64>>>,
    pub visited: Vec<Vec<bool>>,
}

impl TransitionEstimate {
    pub fn unvisited_rows(&self) -> usize {
        self.visited.iter().flatten().filter(|v| !**v).count()
    }
}

/// Transition frequencies pooled over periods; this is the maximum-likelihood
/// estimator for unrestricted Markov cells.
pub fn estimate_transitions(panel: &PanelData, num_states: usize, num_actions: usize) -> Result<TransitionEstimate> {
    if panel.horizon() < 2 {
        return Err(Error::InsufficientData {
            assumption: None,
            detail: "transition estimation needs at least two periods".into(),
        });
    }
    let mut counts = vec![vec![vec![0u64; num_states]; num_states]; num_actions];
    for agent in panel.agents() {
        for pair in agent.windows(2) {
            let (now, next) = (pair[0], pair[1]);
            if now.state >= num_states || next.state >= num_states || now.action >= num_actions {
                return Err(Error::invalid("panel indices exceed the stated dimensions"));
            }
            counts[now.action][now.state][next.state] += 1;
        }
    }
    let mut f_hat = vec![vec![vec![1.0 / num_states as f64; num_states]; num_states]; num_actions];
    let mut visited = vec![vec![false; num_states]; num_actions];
    for i in 0..num_actions {
        for x in 0..num_states {
            let n: u64 = counts[i][x].iter().sum();
            if n > 0 {
                visited[i][x] = true;
                for y in 0..num_states {
                    f_hat[i][x][y] = counts[i][x][y] as f64 / n as f64;
                }
            }
        }
    }
    Ok(TransitionEstimate { f_hat, counts, visited })
}
