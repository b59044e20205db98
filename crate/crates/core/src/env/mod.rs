//! Desk-scale fixed-horizon environments with hand-engineered ground-truth
//! rewards, the synthetic preference oracle, and pilot dataset generation.

mod foodlava;
mod oracle;
mod pendulum;
mod robocar;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{AgentConfig, QAgent, RewardSource};
use crate::error::{Error, Result};
use crate::model::{Source, TrajectoryStore};
use crate::storage::EnvTag;

pub use foodlava::{FoodLava, Rect};
pub use oracle::{oracle_label, OracleConfig, OracleMode};
pub use pendulum::Pendulum;
pub use robocar::RoboCar;

/// Internal environment state. For some environments this is richer than
/// the observed state vector.
pub type EnvState = Vec<f64>;

/// Behaviour shared by every environment.
pub trait Dynamics {
    fn state_dims(&self) -> usize;
    fn action_dims(&self) -> usize;
    fn horizon(&self) -> usize;
    fn dimension_names(&self) -> Vec<String>;
    /// Declared `(min, max)` per state-action dimension.
    fn ranges(&self) -> Vec<(f64, f64)>;
    /// Per action dimension, the discrete levels a tabular agent may choose.
    fn action_levels(&self, levels: usize) -> Vec<Vec<f64>>;
    fn reset(&self, rng: &mut dyn rand::RngCore) -> EnvState;
    fn observe(&self, state: &EnvState) -> Vec<f64>;
    fn step(&self, state: &EnvState, action: &[f64], rng: &mut dyn rand::RngCore) -> EnvState;
    /// Ground-truth reward of one state-action vector.
    fn reward(&self, sa: &[f64]) -> f64;
}

/// Every numeric parameter of an environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvSpec {
    FoodLava(FoodLava),
    Pendulum(Pendulum),
    RoboCar(RoboCar),
}

impl EnvSpec {
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "foodlava" | "food-lava" => Ok(EnvSpec::FoodLava(FoodLava::default())),
            "pendulum" => Ok(EnvSpec::Pendulum(Pendulum::default())),
            "robocar" | "robo-car" => Ok(EnvSpec::RoboCar(RoboCar::default())),
            other => Err(Error::NotFound(format!("environment {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvSpec::FoodLava(_) => "foodlava",
            EnvSpec::Pendulum(_) => "pendulum",
            EnvSpec::RoboCar(_) => "robocar",
        }
    }

    pub fn dynamics(&self) -> &dyn Dynamics {
        match self {
            EnvSpec::FoodLava(e) => e,
            EnvSpec::Pendulum(e) => e,
            EnvSpec::RoboCar(e) => e,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn spec_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("env spec serialises");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn tag(&self) -> EnvTag {
        EnvTag {
            name: self.name().to_string(),
            spec_hash: self.spec_hash(),
        }
    }

    /// Refuses to proceed when `tag` was produced by a different spec.
    pub fn check_tag(&self, tag: &EnvTag) -> Result<()> {
        let found = self.spec_hash();
        if tag.spec_hash != found {
            return Err(Error::SpecMismatch {
                expected: tag.spec_hash.clone(),
                found,
            });
        }
        Ok(())
    }

    pub fn empty_store(&self) -> TrajectoryStore {
        let d = self.dynamics();
        TrajectoryStore::new(d.horizon(), d.state_dims(), d.action_dims(), d.dimension_names())
            .expect("builtin dimensions are consistent")
    }

    pub fn reset(&self, rng: &mut dyn rand::RngCore) -> EnvState {
        self.dynamics().reset(rng)
    }

    pub fn step(&self, state: &EnvState, action: &[f64], rng: &mut dyn rand::RngCore) -> EnvState {
        self.dynamics().step(state, action, rng)
    }

    /// Sum of per-step ground-truth rewards over a flat trajectory.
    pub fn ground_truth_fitness(&self, steps: &[f64]) -> f64 {
        let d = self.dynamics();
        let dim = d.state_dims() + d.action_dims();
        steps.chunks_exact(dim).map(|sa| d.reward(sa)).sum()
    }
}

pub(crate) fn uniform(rng: &mut dyn rand::RngCore, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub(crate) fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Evenly spaced levels across `[lo, hi]`.
pub(crate) fn levels(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..count)
        .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
        .collect()
}

/// Trains a tabular agent on the ground-truth reward for `episodes`
/// episodes and keeps every episode in generation order.
pub fn generate_pilot_dataset(
    spec: &EnvSpec,
    agent: &AgentConfig,
    episodes: usize,
    rng: &mut impl Rng,
) -> (TrajectoryStore, QAgent) {
    let mut store = spec.empty_store();
    let mut learner = QAgent::new(spec, agent.clone());
    let reward = RewardSource::GroundTruth;
    for episode in 0..episodes {
        let steps = learner.run_episode(spec, &reward, episode, episodes, true, rng);
        store
            .push(Source::Pilot, episode as u64, steps)
            .expect("environment emits well-formed steps");
    }
    (store, learner)
}
