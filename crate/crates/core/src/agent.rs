//! Tabular epsilon-greedy Q-learning over a uniform discretisation of the
//! state space and a grid of action levels.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::EnvSpec;
use crate::tree::RewardTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Bins per state dimension.
    pub bins: usize,
    /// Levels per action dimension.
    pub action_levels: usize,
    pub learning_rate: f64,
    /// 1.0 is the undiscounted fixed-horizon objective.
    pub discount: f64,
    pub explore_start: f64,
    pub explore_end: f64,
    /// Fraction of the training episodes over which exploration decays linearly.
    pub explore_decay: f64,
    /// Initial value of every action-value entry.
    pub initial_value: f64,
    /// Steps an exploratory random action is repeated for.
    pub explore_hold: usize,
    /// Apply the episode's updates in reverse order once it ends, instead of
    /// after every step.
    pub backward_updates: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            bins: 20,
            action_levels: 3,
            learning_rate: 0.1,
            discount: 1.0,
            explore_start: 1.0,
            explore_end: 0.05,
            explore_decay: 0.5,
            initial_value: 0.0,
            explore_hold: 10,
            backward_updates: true,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if self.bins == 0 {
            errors.push("agent bins must be >= 1".to_string());
        }
        if self.action_levels == 0 {
            errors.push("agent action_levels must be >= 1".to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            errors.push("agent learning_rate out of (0, 1]".to_string());
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            errors.push("agent discount out of (0, 1]".to_string());
        }
        for (name, v) in [("explore_start", self.explore_start), ("explore_end", self.explore_end)] {
            if !(0.0..=1.0).contains(&v) {
                errors.push(format!("agent {name} out of [0, 1]"));
            }
        }
        if !(self.explore_decay > 0.0 && self.explore_decay <= 1.0) {
            errors.push("agent explore_decay out of (0, 1]".to_string());
        }
        if !self.initial_value.is_finite() {
            errors.push("agent initial_value must be finite".to_string());
        }
        errors
    }

    /// Exploration rate for `episode` out of `total`.
    pub fn exploration(&self, episode: usize, total: usize) -> f64 {
        let span = (self.explore_decay * total as f64).max(1.0);
        let frac = (episode as f64 / span).min(1.0);
        self.explore_start + (self.explore_end - self.explore_start) * frac
    }
}

/// Where per-step rewards come from. Trees are shared so the orchestrator
/// can swap in a new version between episodes.
#[derive(Debug, Clone)]
pub enum RewardSource {
    GroundTruth,
    Tree(Arc<RewardTree>),
}

impl RewardSource {
    pub fn reward(&self, spec: &EnvSpec, sa: &[f64]) -> f64 {
        match self {
            RewardSource::GroundTruth => spec.dynamics().reward(sa),
            RewardSource::Tree(tree) => tree.predict_reward(sa).0,
        }
    }
}

/// Per-episode learning-curve record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub episode: usize,
    pub return_learnt: f64,
    pub return_ground_truth: f64,
    pub steps_per_component: Vec<u32>,
    /// Tree version in force while the episode ran.
    pub tree_version: u64,
}

impl EpisodeTrace {
    pub fn new(episode: usize, steps: &[f64], spec: &EnvSpec, tree: &RewardTree, tree_version: u64) -> Self {
        let mut counts = vec![0u32; tree.leaf_count()];
        for sa in steps.chunks_exact(tree.dim()) {
            counts[tree.assign_leaf(sa)] += 1;
        }
        let means = tree.means();
        Self {
            episode,
            return_learnt: counts.iter().zip(&means).map(|(&n, r)| n as f64 * r).sum(),
            return_ground_truth: spec.ground_truth_fitness(steps),
            steps_per_component: counts,
            tree_version,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl ReturnStats {
    pub fn from_returns(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        Self {
            mean: values.iter().sum::<f64>() / n,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Greedy rollout statistics scored under both reward sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub ground_truth: ReturnStats,
    pub learnt: Option<ReturnStats>,
    pub ground_truth_returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAgent {
    config: AgentConfig,
    ranges: Vec<(f64, f64)>,
    actions: Vec<Vec<f64>>,
    values: Vec<f64>,
}

impl QAgent {
    pub fn new(spec: &EnvSpec, config: AgentConfig) -> Self {
        let d = spec.dynamics();
        let ranges = d.ranges()[..d.state_dims()].to_vec();
        let mut actions: Vec<Vec<f64>> = vec![Vec::new()];
        for levels in d.action_levels(config.action_levels) {
            actions = actions
                .into_iter()
                .flat_map(|prefix| {
                    levels.iter().map(move |&v| {
                        let mut a = prefix.clone();
                        a.push(v);
                        a
                    })
                })
                .collect();
        }
        let states = config.bins.pow(ranges.len() as u32);
        let values = vec![config.initial_value; states * actions.len()];
        Self {
            config,
            ranges,
            actions,
            values,
        }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Discrete state index of an observed state.
    pub fn state_index(&self, obs: &[f64]) -> usize {
        let bins = self.config.bins;
        let mut index = 0;
        for (v, &(lo, hi)) in obs.iter().zip(&self.ranges) {
            let b = if hi > lo {
                (((v - lo) / (hi - lo)) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize
            } else {
                0
            };
            index = index * bins + b;
        }
        index
    }

    fn row(&self, state: usize) -> &[f64] {
        let a = self.actions.len();
        &self.values[state * a..(state + 1) * a]
    }

    /// Highest-valued action, lowest index on ties.
    pub fn greedy(&self, state: usize) -> usize {
        let row = self.row(state);
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        best
    }

    fn greedy_random_ties<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        let row = self.row(state);
        let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ties: Vec<usize> = (0..row.len()).filter(|&k| row[k] == top).collect();
        ties[rng.random_range(0..ties.len())]
    }

    /// Runs one episode and returns its flat state-action steps. With
    /// `explore` the agent acts epsilon-greedily and updates its table;
    /// otherwise it acts greedily and leaves the table untouched.
    pub fn run_episode<R: Rng + ?Sized>(
        &mut self,
        spec: &EnvSpec,
        reward: &RewardSource,
        episode: usize,
        total: usize,
        explore: bool,
        rng: &mut R,
    ) -> Vec<f64> {
        let d = spec.dynamics();
        let horizon = d.horizon();
        let dim = d.state_dims() + d.action_dims();
        let eps = self.config.exploration(episode, total);
        let n_actions = self.actions.len();
        let mut steps = Vec::with_capacity(horizon * dim);
        let mut transitions = Vec::with_capacity(horizon);
        let mut held = (0, 0);
        let mut state = d.reset(&mut RngAdapter(rng));
        let mut obs = d.observe(&state);
        let mut s = self.state_index(&obs);
        for _ in 0..horizon {
            let a = if !explore {
                self.greedy(s)
            } else if held.1 > 0 {
                held.1 -= 1;
                held.0
            } else if rng.random::<f64>() < eps {
                held = (rng.random_range(0..n_actions), self.config.explore_hold.max(1) - 1);
                held.0
            } else {
                self.greedy_random_ties(s, rng)
            };
            let action = &self.actions[a];
            let start = steps.len();
            steps.extend_from_slice(&obs);
            steps.extend_from_slice(action);
            let r = reward.reward(spec, &steps[start..]);
            let next = d.step(&state, action, &mut RngAdapter(rng));
            let next_obs = d.observe(&next);
            let s_next = self.state_index(&next_obs);
            if explore && !self.config.backward_updates {
                self.update(s, a, r, s_next, transitions.len() + 1 == horizon);
            }
            transitions.push((s, a, r, s_next));
            state = next;
            obs = next_obs;
            s = s_next;
        }
        if explore && self.config.backward_updates {
            for (t, &(s, a, r, s_next)) in transitions.iter().enumerate().rev() {
                self.update(s, a, r, s_next, t + 1 == horizon);
            }
        }
        steps
    }

    fn update(&mut self, s: usize, a: usize, r: f64, s_next: usize, terminal: bool) {
        let target = if terminal {
            r
        } else {
            let best = self.row(s_next).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            r + self.config.discount * best
        };
        let q = &mut self.values[s * self.actions.len() + a];
        *q += self.config.learning_rate * (target - *q);
    }

    /// Trains for `episodes` episodes, returning every trajectory.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        spec: &EnvSpec,
        reward: &RewardSource,
        episodes: usize,
        rng: &mut R,
    ) -> Vec<Vec<f64>> {
        (0..episodes)
            .map(|e| self.run_episode(spec, reward, e, episodes, true, rng))
            .collect()
    }

    /// Greedy rollouts scored under ground truth and, when given, a tree.
    pub fn evaluate<R: Rng + ?Sized>(
        &mut self,
        spec: &EnvSpec,
        tree: Option<&RewardTree>,
        episodes: usize,
        rng: &mut R,
    ) -> Evaluation {
        let mut gt = Vec::with_capacity(episodes);
        let mut learnt = Vec::with_capacity(episodes);
        for e in 0..episodes {
            let steps = self.run_episode(spec, &RewardSource::GroundTruth, e, episodes, false, rng);
            gt.push(spec.ground_truth_fitness(&steps));
            if let Some(tree) = tree {
                learnt.push(tree.trajectory_return(&steps));
            }
        }
        Evaluation {
            ground_truth: ReturnStats::from_returns(&gt),
            learnt: tree.map(|_| ReturnStats::from_returns(&learnt)),
            ground_truth_returns: gt,
        }
    }
}

/// Lets a generic `Rng` be passed where the environment expects `dyn RngCore`.
struct RngAdapter<'a, R: Rng + ?Sized>(&'a mut R);

impl<R: Rng + ?Sized> rand::RngCore for RngAdapter<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
