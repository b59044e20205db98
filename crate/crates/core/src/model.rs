//! Shared domain types: trajectories, the preference record and run configuration.

use std::collections::BTreeSet;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::env::OracleConfig;
use crate::error::{Error, Result};

/// Where a trajectory came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Pilot,
    PbrlAgent,
}

/// A fixed-length episode. Steps are stored flat, `T * D` values, state
/// elements first then action elements within each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u64,
    pub source: Source,
    pub episode_index: u64,
    pub steps: Vec<f64>,
}

impl Trajectory {
    pub fn step(&self, t: usize, dim: usize) -> &[f64] {
        &self.steps[t * dim..(t + 1) * dim]
    }

    pub fn iter_steps(&self, dim: usize) -> std::slice::ChunksExact<'_, f64> {
        self.steps.chunks_exact(dim)
    }
}

/// Ordered trajectory sequence. Indices are dense and follow generation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStore {
    pub horizon: usize,
    pub state_dims: usize,
    pub action_dims: usize,
    pub dimension_names: Vec<String>,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryStore {
    pub fn new(
        horizon: usize,
        state_dims: usize,
        action_dims: usize,
        dimension_names: Vec<String>,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidTrajectory("horizon must be positive".into()));
        }
        if dimension_names.len() != state_dims + action_dims {
            return Err(Error::InvalidTrajectory(format!(
                "{} dimension names for {} dimensions",
                dimension_names.len(),
                state_dims + action_dims
            )));
        }
        Ok(Self {
            horizon,
            state_dims,
            action_dims,
            dimension_names,
            trajectories: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.state_dims + self.action_dims
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Trajectory> {
        self.trajectories.get(index)
    }

    /// Appends a trajectory and returns its index. The trajectory id is
    /// reassigned to the index so ids stay unique and dense.
    pub fn push(&mut self, source: Source, episode_index: u64, steps: Vec<f64>) -> Result<usize> {
        self.check_steps(&steps)?;
        let index = self.trajectories.len();
        self.trajectories.push(Trajectory {
            id: index as u64,
            source,
            episode_index,
            steps,
        });
        Ok(index)
    }

    pub fn check_steps(&self, steps: &[f64]) -> Result<()> {
        let expected = self.horizon * self.dim();
        if steps.len() != expected {
            return Err(Error::InvalidTrajectory(format!(
                "expected {expected} values (T={} x D={}), got {}",
                self.horizon,
                self.dim(),
                steps.len()
            )));
        }
        if let Some(pos) = steps.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTrajectory(format!(
                "non-finite value at step {}, dim {}",
                pos / self.dim(),
                pos % self.dim()
            )));
        }
        Ok(())
    }

    /// Per-dimension (min, max) over every stored state-action.
    pub fn observed_range(&self) -> Vec<(f64, f64)> {
        let d = self.dim();
        let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); d];
        for traj in &self.trajectories {
            for sa in traj.iter_steps(d) {
                for (r, &v) in ranges.iter_mut().zip(sa) {
                    r.0 = r.0.min(v);
                    r.1 = r.1.max(v);
                }
            }
        }
        ranges
    }
}

/// One elicited comparison. `i` was presented first and carries +1 in the
/// comparison matrix, `j` carries -1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRow {
    pub i: usize,
    pub j: usize,
    pub y: f64,
}

#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    epsilon: f64,
    rows: Vec<PreferenceRow>,
}

/// The comparison record: the set of sampled pairs, and per row the signed
/// indices and label. Rows are append-only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatasetRepr", into = "DatasetRepr")]
pub struct PreferenceDataset {
    epsilon: f64,
    rows: Vec<PreferenceRow>,
    pairs: HashSet<(usize, usize)>,
    labelled: BTreeSet<usize>,
}

impl TryFrom<DatasetRepr> for PreferenceDataset {
    type Error = Error;

    fn try_from(repr: DatasetRepr) -> Result<Self> {
        let mut ds = PreferenceDataset::new(repr.epsilon);
        for row in repr.rows {
            ds.push(row.i, row.j, row.y)?;
        }
        Ok(ds)
    }
}

impl From<PreferenceDataset> for DatasetRepr {
    fn from(ds: PreferenceDataset) -> Self {
        DatasetRepr {
            epsilon: ds.epsilon,
            rows: ds.rows,
        }
    }
}

fn unordered(i: usize, j: usize) -> (usize, usize) {
    (i.min(j), i.max(j))
}

impl PreferenceDataset {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            rows: Vec::new(),
            pairs: HashSet::new(),
            labelled: BTreeSet::new(),
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn rows(&self) -> &[PreferenceRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contains_pair(&self, i: usize, j: usize) -> bool {
        self.pairs.contains(&unordered(i, j))
    }

    pub fn is_labelled(&self, i: usize) -> bool {
        self.labelled.contains(&i)
    }

    /// Indices of every trajectory that appears in at least one row, ascending.
    pub fn labelled(&self) -> impl ExactSizeIterator<Item = usize> + '_ {
        self.labelled.iter().copied()
    }

    pub fn labelled_count(&self) -> usize {
        self.labelled.len()
    }

    /// Appends `(i, j, y)` exactly as presented. `y` must already lie in
    /// `[epsilon, 1 - epsilon]`.
    pub fn push(&mut self, i: usize, j: usize, y: f64) -> Result<()> {
        if i == j {
            return Err(Error::InvalidLabel(format!("self-comparison of {i}")));
        }
        let tol = 1e-12;
        if !(y.is_finite() && y >= self.epsilon - tol && y <= 1.0 - self.epsilon + tol) {
            return Err(Error::InvalidLabel(format!(
                "y = {y} outside [{}, {}]",
                self.epsilon,
                1.0 - self.epsilon
            )));
        }
        if !self.pairs.insert(unordered(i, j)) {
            return Err(Error::DuplicatePair(i, j));
        }
        self.labelled.insert(i);
        self.labelled.insert(j);
        self.rows.push(PreferenceRow { i, j, y });
        Ok(())
    }

    /// A copy holding only the first `k` rows.
    pub fn prefix(&self, k: usize) -> Self {
        let mut ds = Self::new(self.epsilon);
        for row in &self.rows[..k.min(self.rows.len())] {
            ds.push(row.i, row.j, row.y).expect("prefix of a valid dataset is valid");
        }
        ds
    }
}

/// Clamp a raw label into `[epsilon, 1 - epsilon]`.
pub fn clamp_label(y: f64, epsilon: f64) -> f64 {
    y.clamp(epsilon, 1.0 - epsilon)
}

/// How candidate split thresholds are generated along each dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// Midpoints between consecutive distinct values inside the leaf.
    #[default]
    Midpoints,
    /// Values observed anywhere in the labelled trajectories.
    Observed,
}

fn default_epsilon() -> f64 {
    0.1
}
fn default_lambda() -> f64 {
    1.0
}
fn default_m_max() -> usize {
    16
}
fn default_f_l() -> usize {
    10
}
fn default_f_u() -> usize {
    10
}
fn default_k_max() -> usize {
    600
}
fn default_n_max() -> usize {
    200
}
fn default_variance_floor() -> f64 {
    1e-8
}
fn default_pbrl_episodes() -> usize {
    600
}

/// Every free hyperparameter of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub epsilon: f64,
    /// Standard deviations added to the mean in the optimistic fitness.
    pub lambda: f64,
    /// Complexity weight per leaf. `None` selects `0.05 * L1 / m_max`, where
    /// `L1` is the single-leaf labelling loss at the time of the update.
    pub alpha: Option<f64>,
    pub m_max: usize,
    /// Trajectories per online labelling interval.
    pub f_l: usize,
    /// Labels per model update.
    pub f_u: usize,
    pub k_max: usize,
    pub n_max: usize,
    /// Episodes trained after the reward is frozen (online). `None` is `3 * n_max`.
    pub n_post_fix: Option<usize>,
    /// Episodes the PbRL agent trains on the final reward (offline).
    pub pbrl_episodes: usize,
    pub seed: u64,
    pub oracle: OracleConfig,
    pub variance_floor: f64,
    pub thresholds: ThresholdMode,
    pub regrow_from_scratch: bool,
    pub agent: AgentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            lambda: default_lambda(),
            alpha: None,
            m_max: default_m_max(),
            f_l: default_f_l(),
            f_u: default_f_u(),
            k_max: default_k_max(),
            n_max: default_n_max(),
            n_post_fix: None,
            pbrl_episodes: default_pbrl_episodes(),
            seed: 0,
            oracle: OracleConfig::default(),
            variance_floor: default_variance_floor(),
            thresholds: ThresholdMode::default(),
            regrow_from_scratch: false,
            agent: AgentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn n_post_fix(&self) -> usize {
        self.n_post_fix.unwrap_or(3 * self.n_max)
    }

    /// Number of online labelling batches.
    pub fn batches(&self) -> usize {
        self.n_max / self.f_l.max(1)
    }
}

/// Returns every violated constraint; an empty list means the config is valid.
pub fn validate_config(config: &RunConfig) -> Vec<String> {
    let mut errors = Vec::new();
    if !(config.epsilon > 0.0 && config.epsilon <= 0.5) {
        errors.push("epsilon out of (0, 0.5]".to_string());
    }
    if !(config.lambda >= 0.0) {
        errors.push("lambda must be >= 0".to_string());
    }
    if let Some(alpha) = config.alpha {
        if !(alpha >= 0.0) {
            errors.push("alpha must be >= 0".to_string());
        }
    }
    if config.m_max == 0 {
        errors.push("m_max must be >= 1".to_string());
    }
    if config.f_u == 0 {
        errors.push("f_u must be >= 1".to_string());
    }
    if config.f_l == 0 {
        errors.push("f_l must be >= 1".to_string());
    } else if config.n_max % config.f_l != 0 {
        errors.push("f_l must divide n_max".to_string());
    }
    if config.n_max < 2 {
        errors.push("n_max must be >= 2".to_string());
    }
    if !(config.variance_floor > 0.0) {
        errors.push("variance_floor must be > 0".to_string());
    }
    if !(config.oracle.scale > 0.0) {
        errors.push("oracle scale must be > 0".to_string());
    }
    errors.extend(config.agent.validate());
    errors
}

pub fn check_config(config: &RunConfig) -> Result<()> {
    let errors = validate_config(config);
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(errors))
    }
}
