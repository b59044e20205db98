//! Wire documents of the `/v1/` HTTP interface.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::env::EnvSpec;
use crate::model::{RunConfig, Trajectory};
use crate::orchestrator::{Mode, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    /// Labels arrive through `POST /label`.
    #[default]
    Human,
    /// The service labels every pair itself from ground-truth fitness.
    Oracle,
}

/// Body of `POST /v1/runs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CreateRun {
    pub mode: Mode,
    /// Builtin environment name, used when `env_spec` is absent.
    pub env: String,
    pub env_spec: Option<EnvSpec>,
    /// Trajectory store directory for offline runs.
    pub store: Option<PathBuf>,
    pub config: RunConfig,
    pub labeler: LabelSource,
}

impl Default for CreateRun {
    fn default() -> Self {
        Self {
            mode: Mode::Online,
            env: "foodlava".into(),
            env_spec: None,
            store: None,
            config: RunConfig::default(),
            labeler: LabelSource::Human,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunState {
    AwaitingLabel,
    /// A model update or agent training is in progress.
    Paused,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub id: String,
    pub mode: Mode,
    pub state: RunState,
    pub phase: Phase,
    pub labeler: LabelSource,
    pub labels_spent: usize,
    pub k_max: usize,
    /// 1-based batch index.
    pub batch: usize,
    pub batches: usize,
    pub batch_remaining: usize,
    pub tree_version: u64,
    pub leaf_count: usize,
    pub run_dir: Option<PathBuf>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvInfo {
    pub name: String,
    pub dimension_names: Vec<String>,
    pub state_dims: usize,
    pub horizon: usize,
    pub spec: Option<EnvSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPayload {
    pub nonce: String,
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub batch: usize,
    pub trajectory_i: Trajectory,
    pub trajectory_j: Trajectory,
    pub env: EnvInfo,
}

/// Body of `GET /v1/runs/{id}/pair`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum PairResponse {
    Pair(Box<PairPayload>),
    Paused,
    Exhausted,
}

/// Body of `POST /v1/runs/{id}/label`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub nonce: String,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAccepted {
    pub k: usize,
    pub stored_y: f64,
    pub labels_spent: usize,
    /// Tree version installed by an update this label triggered.
    pub updated: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
