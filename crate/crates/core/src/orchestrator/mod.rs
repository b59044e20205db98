//! The elicitation loop: batches of actively sampled pairs, model updates
//! every `f_u` labels, offline and online flows, and the bookkeeping behind
//! the interpretability exports.

mod report;
mod rundir;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{EpisodeTrace, Evaluation, QAgent, RewardSource};
use crate::env::{oracle_label, EnvSpec};
use crate::error::{Error, Result};
use crate::model::{check_config, clamp_label, PreferenceDataset, RunConfig, Source, TrajectoryStore};
use crate::sampler::{batch_schedule, offline_weights, online_weights, sample_pair, ucb_fitness, Sampling};
use crate::solver::{solve_fitness, FitnessEstimate};
use crate::storage::{now_millis, LabelRecord};
use crate::tree::{feature_counts, grow, prune_sweep_with, Component, PrunePoint, RewardTree};

pub use report::{report_card, ReportCard, ReportEntry};
pub use rundir::{
    replay, replay_run, resume, run_offline, run_online, update_points, RunDir, RunManifest, RunOutcome,
    RunStatus, TimelineExport, RUN_FORMAT_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Offline,
    Online,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// Online: the agent must generate the next `f_l` episodes.
    Episodes,
    Labelling,
    /// Labelling is over; the agent trains on the final reward.
    Training,
    Done,
}

/// The pair currently presented to the labeler.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingPair {
    pub nonce: String,
    pub i: usize,
    pub j: usize,
    /// 1-based index the label will receive.
    pub k: usize,
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Poll {
    Pair(PendingPair),
    Done,
}

/// Overlap between a leaf of the previous tree and a leaf of the next one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineageEdge {
    pub from: usize,
    pub to: usize,
    /// Timesteps of the visible trajectories falling in both leaves; zero
    /// when the edge comes from region geometry alone.
    pub mass: f64,
}

/// One model update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineRecord {
    pub version: u64,
    pub batch: usize,
    /// Scheduled labels of the batch.
    pub k_b: usize,
    /// Labels in the dataset when the update ran.
    pub labels: usize,
    pub alpha: f64,
    pub curve: Vec<PrunePoint>,
    pub chosen_m: usize,
    pub components: Vec<Component>,
    pub lineage: Vec<LineageEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub batch: usize,
    pub k_b: usize,
    pub collected: usize,
    pub labels_total: usize,
    pub tree_version: u64,
    pub leaf_count: usize,
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub k: usize,
    pub stored_y: f64,
    /// New tree version if the label triggered an update.
    pub updated: Option<u64>,
}

/// Result of one model update, independent of run bookkeeping.
#[derive(Debug, Clone)]
pub struct ModelUpdate {
    pub tree: RewardTree,
    pub fitness: FitnessEstimate,
    pub alpha: f64,
    pub curve: Vec<PrunePoint>,
}

/// Solve, grow, prune. Deterministic in its inputs.
pub fn model_update(
    config: &RunConfig,
    store: &TrajectoryStore,
    dataset: &PreferenceDataset,
    current: &RewardTree,
) -> Result<ModelUpdate> {
    let fitness = solve_fitness(dataset)?;
    let base = if config.regrow_from_scratch {
        RewardTree::single_leaf(current.dim())
    } else {
        current.clone()
    };
    let grown = grow(&base, store, &fitness, config.m_max, config.thresholds);
    let m_max = config.m_max as f64;
    let fixed = config.alpha;
    let pruned = prune_sweep_with(
        &grown,
        store,
        dataset,
        &fitness,
        |curve| fixed.unwrap_or(0.05 * curve[0].loss / m_max),
        config.variance_floor,
    );
    Ok(ModelUpdate {
        tree: pruned.tree,
        fitness,
        alpha: pruned.alpha,
        curve: pruned.curve,
    })
}

/// Edges from each leaf of `old` to the leaves of `new` sharing timesteps
/// of `trajectories`; a new leaf no timestep reaches is linked to every old
/// leaf whose region it intersects.
pub fn lineage_edges<'a>(
    old: &RewardTree,
    new: &RewardTree,
    trajectories: impl IntoIterator<Item = &'a [f64]>,
) -> Vec<LineageEdge> {
    let (mo, mn) = (old.leaf_count(), new.leaf_count());
    let mut mass = vec![0.0; mo * mn];
    for steps in trajectories {
        for sa in steps.chunks_exact(old.dim()) {
            mass[old.assign_leaf(sa) * mn + new.assign_leaf(sa)] += 1.0;
        }
    }
    let old_regions = old.leaf_regions();
    let new_regions = new.leaf_regions();
    let mut edges = Vec::new();
    for to in 0..mn {
        let reached = (0..mo).any(|from| mass[from * mn + to] > 0.0);
        for from in 0..mo {
            let w = mass[from * mn + to];
            let overlaps = || {
                old_regions[from].iter().zip(&new_regions[to]).all(|(a, b)| {
                    let lo = match (a.lo, b.lo) {
                        (Some(x), Some(y)) => x.max(y),
                        (x, y) => x.or(y).unwrap_or(f64::NEG_INFINITY),
                    };
                    let hi = match (a.hi, b.hi) {
                        (Some(x), Some(y)) => x.min(y),
                        (x, y) => x.or(y).unwrap_or(f64::INFINITY),
                    };
                    lo < hi
                })
            };
            if w > 0.0 || (!reached && overlaps()) {
                edges.push(LineageEdge { from, to, mass: w });
            }
        }
    }
    edges.sort_by_key(|e| (e.from, e.to));
    edges
}

fn oracle_stream(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Single-writer run state. Every mutation goes through `poll` and
/// `submit`, so the same state machine serves batch runs and the service.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Session {
    config: RunConfig,
    mode: Mode,
    spec: Option<EnvSpec>,
    store: TrajectoryStore,
    dataset: PreferenceDataset,
    /// Every installed tree; the index is the version.
    trees: Vec<RewardTree>,
    fitness: FitnessEstimate,
    optimistic: Vec<f64>,
    schedule: Vec<usize>,
    batch: usize,
    batch_remaining: usize,
    batch_collected: usize,
    labels_since_update: usize,
    phase: Phase,
    pending: Option<PendingPair>,
    rng: ChaCha8Rng,
    oracle_rng: ChaCha8Rng,
    timeline: Vec<TimelineRecord>,
    batches: Vec<BatchRecord>,
    records: Vec<LabelRecord>,
    agent: Option<QAgent>,
    traces: Vec<EpisodeTrace>,
    episodes_run: usize,
    update_failures: Vec<String>,
}

impl Session {
    /// Offline run over a fixed store; `f_l` and `n_max` become `|store|`.
    /// Without `spec` there is no oracle and no final agent training.
    pub fn offline(config: RunConfig, store: TrajectoryStore, spec: Option<EnvSpec>) -> Result<Self> {
        let config = RunConfig {
            f_l: store.len(),
            n_max: store.len(),
            ..config
        };
        check_config(&config)?;
        if let Some(spec) = &spec {
            let d = spec.dynamics();
            if d.horizon() != store.horizon || d.state_dims() + d.action_dims() != store.dim() {
                return Err(Error::InvalidTrajectory(format!(
                    "store shape (T = {}, D = {}) does not match environment {}",
                    store.horizon,
                    store.dim(),
                    spec.name()
                )));
            }
        }
        let k_max = config.k_max;
        let mut session = Self::blank(config, Mode::Offline, spec, store);
        session.schedule = vec![k_max];
        session.batch = 1;
        session.batch_remaining = k_max;
        session.phase = Phase::Labelling;
        session.refresh_optimistic();
        Ok(session)
    }

    /// Online run: the agent generates trajectories on the live reward.
    pub fn online(config: RunConfig, spec: EnvSpec) -> Result<Self> {
        check_config(&config)?;
        let store = spec.empty_store();
        let agent = QAgent::new(&spec, config.agent.clone());
        let schedule = batch_schedule(config.f_l, config.n_max, config.k_max);
        let mut session = Self::blank(config, Mode::Online, Some(spec), store);
        session.schedule = schedule;
        session.batch = 1;
        session.batch_remaining = session.schedule[0];
        session.agent = Some(agent);
        session.phase = Phase::Episodes;
        Ok(session)
    }

    fn blank(config: RunConfig, mode: Mode, spec: Option<EnvSpec>, store: TrajectoryStore) -> Self {
        let seed = config.seed;
        Self {
            dataset: PreferenceDataset::new(config.epsilon),
            trees: vec![RewardTree::single_leaf(store.dim())],
            fitness: FitnessEstimate::default(),
            optimistic: Vec::new(),
            schedule: Vec::new(),
            batch: 0,
            batch_remaining: 0,
            batch_collected: 0,
            labels_since_update: 0,
            phase: Phase::Done,
            pending: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            oracle_rng: oracle_stream(seed),
            timeline: Vec::new(),
            batches: Vec::new(),
            records: Vec::new(),
            agent: None,
            traces: Vec::new(),
            episodes_run: 0,
            update_failures: Vec::new(),
            config,
            mode,
            spec,
            store,
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn spec(&self) -> Option<&EnvSpec> {
        self.spec.as_ref()
    }

    pub fn store(&self) -> &TrajectoryStore {
        &self.store
    }

    pub fn dataset(&self) -> &PreferenceDataset {
        &self.dataset
    }

    pub fn tree(&self) -> &RewardTree {
        self.trees.last().expect("a tree is always installed")
    }

    pub fn version(&self) -> u64 {
        (self.trees.len() - 1) as u64
    }

    pub fn tree_version(&self, version: u64) -> Option<&RewardTree> {
        self.trees.get(version as usize)
    }

    pub fn trees(&self) -> &[RewardTree] {
        &self.trees
    }

    pub fn fitness(&self) -> &FitnessEstimate {
        &self.fitness
    }

    pub fn optimistic_fitness(&self) -> &[f64] {
        &self.optimistic
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn pending(&self) -> Option<&PendingPair> {
        self.pending.as_ref()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn batch_remaining(&self) -> usize {
        self.batch_remaining
    }

    pub fn schedule(&self) -> &[usize] {
        &self.schedule
    }

    pub fn labels_spent(&self) -> usize {
        self.dataset.len()
    }

    pub fn timeline(&self) -> &[TimelineRecord] {
        &self.timeline
    }

    pub fn batches(&self) -> &[BatchRecord] {
        &self.batches
    }

    pub fn records(&self) -> &[LabelRecord] {
        &self.records
    }

    pub fn traces(&self) -> &[EpisodeTrace] {
        &self.traces
    }

    pub fn agent(&self) -> Option<&QAgent> {
        self.agent.as_ref()
    }

    pub fn update_failures(&self) -> &[String] {
        &self.update_failures
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    /// Trajectories eligible for sampling in the current batch.
    pub fn visible(&self) -> usize {
        match self.mode {
            Mode::Offline => self.store.len(),
            Mode::Online => (self.config.f_l * self.batch).min(self.store.len()),
        }
    }

    /// Advances until a pair awaits a label or the run is over. Repeated
    /// calls return the same pending pair.
    pub fn poll(&mut self) -> Result<Poll> {
        loop {
            if let Some(p) = &self.pending {
                return Ok(Poll::Pair(p.clone()));
            }
            match self.phase {
                Phase::Done => return Ok(Poll::Done),
                Phase::Episodes => {
                    self.run_interval();
                    self.phase = Phase::Labelling;
                }
                Phase::Labelling => {
                    if self.batch_remaining == 0 || self.labels_spent() >= self.config.k_max {
                        self.end_batch(false)?;
                        continue;
                    }
                    let n = self.visible();
                    let psi = match self.mode {
                        Mode::Offline => offline_weights(&self.optimistic, &self.dataset, n),
                        Mode::Online => {
                            online_weights(&self.optimistic, &self.dataset, n, self.batch, self.config.f_l)
                        }
                    };
                    match psi {
                        Sampling::Exhausted => self.end_batch(true)?,
                        Sampling::Ready(m) => {
                            let (i, j) = sample_pair(&m, &mut self.rng);
                            let k = self.labels_spent() + 1;
                            self.pending = Some(PendingPair {
                                nonce: format!("{:x}-{k}-{i}-{j}", self.config.seed),
                                i,
                                j,
                                k,
                                batch: self.batch,
                            });
                        }
                    }
                }
                Phase::Training => {
                    self.train_final();
                    self.phase = Phase::Done;
                }
            }
        }
    }

    /// Records a label for the pending pair. `y` is clamped into
    /// `[epsilon, 1 - epsilon]`; values outside `[0, 1]` are rejected.
    pub fn submit(&mut self, nonce: &str, y: f64, source: &str) -> Result<SubmitOutcome> {
        let pending = match &self.pending {
            Some(p) if p.nonce == nonce => p.clone(),
            _ => return Err(Error::StaleNonce(nonce.to_string())),
        };
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::InvalidLabel(format!("{y} is outside [0, 1]")));
        }
        if source.is_empty() || source.contains(char::is_whitespace) {
            return Err(Error::InvalidLabel(format!("bad label source {source:?}")));
        }
        let stored_y = clamp_label(y, self.config.epsilon);
        self.dataset.push(pending.i, pending.j, stored_y)?;
        self.records.push(LabelRecord {
            k: pending.k,
            i: pending.i,
            j: pending.j,
            y: stored_y,
            timestamp: now_millis(),
            source: format!("{source}/{}", pending.nonce),
        });
        self.pending = None;
        self.batch_remaining -= 1;
        self.batch_collected += 1;
        self.labels_since_update += 1;
        let updated = if self.labels_since_update >= self.config.f_u {
            self.update()?
        } else {
            None
        };
        Ok(SubmitOutcome {
            k: pending.k,
            stored_y,
            updated,
        })
    }

    /// Synthetic label for the pending pair from ground-truth fitness.
    pub fn oracle_label(&mut self, pair: &PendingPair) -> Result<f64> {
        let spec = self
            .spec
            .as_ref()
            .ok_or_else(|| Error::InvalidState("oracle labels need an environment spec".into()))?;
        let fi = spec.ground_truth_fitness(&self.store.trajectories[pair.i].steps);
        let fj = spec.ground_truth_fitness(&self.store.trajectories[pair.j].steps);
        Ok(oracle_label(fi, fj, &self.config.oracle, self.config.epsilon, &mut self.oracle_rng))
    }

    /// Runs a model update on the current dataset. Returns the new version,
    /// or `None` when the comparison graph is disconnected and the previous
    /// model is kept.
    pub fn update(&mut self) -> Result<Option<u64>> {
        self.labels_since_update = 0;
        let outcome = match model_update(&self.config, &self.store, &self.dataset, self.tree()) {
            Ok(u) => u,
            Err(Error::Disconnected { components }) => {
                let msg = format!(
                    "update at {} labels skipped: {} disconnected components",
                    self.labels_spent(),
                    components.len()
                );
                tracing::warn!("{msg}");
                self.update_failures.push(msg);
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        let n = self.visible();
        let lineage = lineage_edges(
            self.tree(),
            &outcome.tree,
            self.store.trajectories[..n].iter().map(|t| t.steps.as_slice()),
        );
        let chosen_m = outcome.tree.leaf_count();
        self.trees.push(outcome.tree);
        self.fitness = outcome.fitness;
        let version = self.version();
        self.timeline.push(TimelineRecord {
            version,
            batch: self.batch,
            k_b: self.schedule.get(self.batch.saturating_sub(1)).copied().unwrap_or(0),
            labels: self.labels_spent(),
            alpha: outcome.alpha,
            curve: outcome.curve,
            chosen_m,
            components: self.tree().components().to_vec(),
            lineage,
        });
        self.refresh_optimistic();
        tracing::debug!(version, chosen_m, labels = self.labels_spent(), "model updated");
        Ok(Some(version))
    }

    fn refresh_optimistic(&mut self) {
        let tree = self.tree();
        let counts = feature_counts(tree, &self.store, 0..self.store.len());
        self.optimistic = ucb_fitness(&counts, &tree.means(), &tree.variances(), self.config.lambda);
    }

    fn end_batch(&mut self, exhausted: bool) -> Result<()> {
        if self.labels_since_update > 0 {
            self.update()?;
        }
        self.batches.push(BatchRecord {
            batch: self.batch,
            k_b: self.schedule[self.batch - 1],
            collected: self.batch_collected,
            labels_total: self.labels_spent(),
            tree_version: self.version(),
            leaf_count: self.tree().leaf_count(),
            exhausted,
        });
        self.batch_collected = 0;
        if self.mode == Mode::Online && self.batch < self.schedule.len() {
            let carry = self.batch_remaining;
            self.batch += 1;
            self.batch_remaining = self.schedule[self.batch - 1] + carry;
            self.phase = Phase::Episodes;
        } else {
            self.phase = Phase::Training;
        }
        Ok(())
    }

    fn total_episodes(&self) -> usize {
        match self.mode {
            Mode::Offline => self.config.pbrl_episodes,
            Mode::Online => self.config.n_max + self.config.n_post_fix(),
        }
    }

    fn run_episodes(&mut self, count: usize, keep: bool) {
        let Some(spec) = self.spec.clone() else {
            return;
        };
        let total = self.total_episodes();
        let mut agent = self
            .agent
            .take()
            .unwrap_or_else(|| QAgent::new(&spec, self.config.agent.clone()));
        let tree = Arc::new(self.tree().clone());
        let version = self.version();
        let reward = RewardSource::Tree(tree.clone());
        for _ in 0..count {
            let episode = self.episodes_run;
            let steps = agent.run_episode(&spec, &reward, episode, total, true, &mut self.rng);
            self.traces.push(EpisodeTrace::new(episode, &steps, &spec, &tree, version));
            if keep {
                self.store
                    .push(Source::PbrlAgent, episode as u64, steps)
                    .expect("environment emits well-formed steps");
            }
            self.episodes_run += 1;
        }
        self.agent = Some(agent);
    }

    fn run_interval(&mut self) {
        let count = self.config.f_l;
        self.run_episodes(count, true);
        self.refresh_optimistic();
    }

    fn train_final(&mut self) {
        let count = match self.mode {
            Mode::Offline => self.config.pbrl_episodes,
            Mode::Online => self.config.n_post_fix(),
        };
        self.run_episodes(count, false);
    }

    /// Greedy evaluation of the PbRL agent, scored under ground truth and
    /// the current tree. Uses its own random stream.
    pub fn evaluate_agent(&self, episodes: usize) -> Option<Evaluation> {
        let spec = self.spec.as_ref()?;
        let mut agent = self.agent.clone()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(2);
        Some(agent.evaluate(spec, Some(self.tree()), episodes, &mut rng))
    }
}

/// Where labels come from during a batch run.
pub trait Labeler {
    /// Tag recorded in the label log.
    fn source(&self) -> &str;
    /// `None` means the labeler timed out; the run pauses.
    fn label(&mut self, session: &mut Session, pair: &PendingPair) -> Result<Option<f64>>;
}

/// Labels from ground-truth fitness.
pub struct OracleLabeler;

impl Labeler for OracleLabeler {
    fn source(&self) -> &str {
        "oracle"
    }

    fn label(&mut self, session: &mut Session, pair: &PendingPair) -> Result<Option<f64>> {
        session.oracle_label(pair).map(Some)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriveStatus {
    Completed,
    Paused,
}

/// Runs the session with `labeler` until completion or a labeler timeout.
pub fn drive(session: &mut Session, labeler: &mut dyn Labeler) -> Result<DriveStatus> {
    loop {
        match session.poll()? {
            Poll::Done => return Ok(DriveStatus::Completed),
            Poll::Pair(pair) => match labeler.label(session, &pair)? {
                Some(y) => {
                    let source = labeler.source().to_string();
                    session.submit(&pair.nonce, y, &source)?;
                }
                None => return Ok(DriveStatus::Paused),
            },
        }
    }
}
