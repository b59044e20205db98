//! The single writer behind each run. A dedicated thread owns the session
//! and its run directory; handlers talk to it over a channel and read the
//! snapshots it publishes.

use std::path::PathBuf;
use std::sync::Arc;

use tokio::sync::{mpsc, oneshot, watch};
use tracing::{info, warn};

use rewardtree_core::agent::EpisodeTrace;
use rewardtree_core::api::{EnvInfo, LabelAccepted, LabelSource, PairPayload, PairResponse, RunState, RunSummary};
use rewardtree_core::env::EnvSpec;
use rewardtree_core::model::TrajectoryStore;
use rewardtree_core::orchestrator::{Poll, RunDir, RunStatus, Session, TimelineExport};
use rewardtree_core::tree::{RewardTree, TreeExport};
use rewardtree_core::{Error, Result};

/// Everything the read endpoints serve. Large parts are shared between
/// consecutive snapshots and only rebuilt when they change.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub summary: RunSummary,
    pub pair: PairResponse,
    pub trees: Arc<Vec<RewardTree>>,
    pub tree_exports: Arc<Vec<TreeExport>>,
    pub timeline: Arc<TimelineExport>,
    pub traces: Arc<Vec<EpisodeTrace>>,
    pub store: Arc<TrajectoryStore>,
    pub spec: Option<Arc<EnvSpec>>,
}

pub enum Command {
    Label {
        nonce: String,
        y: f64,
        reply: oneshot::Sender<Result<LabelAccepted>>,
    },
}

pub struct Worker {
    id: String,
    session: Session,
    dir: Option<RunDir>,
    labeler: LabelSource,
    tx: watch::Sender<Arc<Snapshot>>,
    error: Option<String>,
}

impl Worker {
    /// Starts the worker thread and returns its command channel and
    /// snapshot feed.
    pub fn spawn(
        id: String,
        session: Session,
        out: Option<PathBuf>,
        labeler: LabelSource,
    ) -> Result<(mpsc::Sender<Command>, watch::Receiver<Arc<Snapshot>>)> {
        let dir = out.as_deref().map(RunDir::create).transpose()?;
        let first = Arc::new(build(&id, &session, dir.as_ref(), labeler, None, RunState::Paused, None));
        let (tx, rx) = watch::channel(first);
        let (cmd_tx, cmd_rx) = mpsc::channel(64);
        let mut worker = Worker {
            id,
            session,
            dir,
            labeler,
            tx,
            error: None,
        };
        std::thread::Builder::new()
            .name(format!("run-{}", worker.id))
            .spawn(move || worker.run(cmd_rx))
            .map_err(|e| Error::io("worker thread", e))?;
        Ok((cmd_tx, rx))
    }

    fn publish(&self, state: RunState) {
        let prev = self.tx.borrow().clone();
        let snap = build(
            &self.id,
            &self.session,
            self.dir.as_ref(),
            self.labeler,
            Some(&prev),
            state,
            self.error.clone(),
        );
        self.tx.send_replace(Arc::new(snap));
    }

    fn fail(&mut self, e: Error) {
        warn!(run = %self.id, "run failed: {e}");
        self.error = Some(e.to_string());
        self.publish(RunState::Failed);
    }

    /// Advances to the next pending pair, or to completion.
    fn advance(&mut self) -> Result<()> {
        loop {
            match self.session.poll()? {
                Poll::Done => {
                    if let Some(dir) = &mut self.dir {
                        dir.write(&self.session, RunStatus::Completed)?;
                    }
                    info!(run = %self.id, labels = self.session.labels_spent(), "run completed");
                    self.publish(RunState::Completed);
                    return Ok(());
                }
                Poll::Pair(pair) => {
                    if self.labeler == LabelSource::Human {
                        self.publish(RunState::AwaitingLabel);
                        return Ok(());
                    }
                    let y = self.session.oracle_label(&pair)?;
                    let before = self.session.version();
                    self.session.submit(&pair.nonce, y, "oracle")?;
                    self.persist(before)?;
                }
            }
        }
    }

    /// Appends new labels and checkpoints; refreshes every artifact when
    /// the tree changed.
    fn persist(&mut self, version_before: u64) -> Result<()> {
        if let Some(dir) = &mut self.dir {
            dir.sync(&self.session)?;
            if self.session.version() != version_before {
                dir.write(&self.session, RunStatus::Running)?;
            }
        }
        Ok(())
    }

    fn label(&mut self, nonce: &str, y: f64) -> Result<LabelAccepted> {
        if self.labeler != LabelSource::Human {
            return Err(Error::InvalidState("this run is labelled by the oracle".into()));
        }
        match self.session.pending() {
            Some(p) if p.nonce == nonce => {}
            _ => return Err(Error::StaleNonce(nonce.to_string())),
        }
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::InvalidLabel(format!("{y} is outside [0, 1]")));
        }
        self.publish(RunState::Paused);
        let before = self.session.version();
        let outcome = self.session.submit(nonce, y, "human")?;
        self.persist(before)?;
        Ok(LabelAccepted {
            k: outcome.k,
            stored_y: outcome.stored_y,
            labels_spent: self.session.labels_spent(),
            updated: outcome.updated,
        })
    }

    fn run(&mut self, mut rx: mpsc::Receiver<Command>) {
        if let Err(e) = self.advance() {
            self.fail(e);
        }
        while let Some(cmd) = rx.blocking_recv() {
            match cmd {
                Command::Label { nonce, y, reply } => {
                    if self.error.is_some() {
                        let _ = reply.send(Err(Error::InvalidState("run has failed".into())));
                        continue;
                    }
                    match self.label(&nonce, y) {
                        Ok(accepted) => {
                            let _ = reply.send(Ok(accepted));
                            if let Err(e) = self.advance() {
                                self.fail(e);
                            }
                        }
                        Err(e @ (Error::StaleNonce(_) | Error::InvalidLabel(_) | Error::InvalidState(_))) => {
                            let _ = reply.send(Err(e));
                        }
                        Err(e) => {
                            let msg = e.to_string();
                            self.fail(e);
                            let _ = reply.send(Err(Error::InvalidState(msg)));
                        }
                    }
                }
            }
        }
    }
}

fn env_info(session: &Session) -> EnvInfo {
    let store = session.store();
    EnvInfo {
        name: session.spec().map_or("custom", |s| s.name()).to_string(),
        dimension_names: store.dimension_names.clone(),
        state_dims: store.state_dims,
        horizon: store.horizon,
        spec: session.spec().cloned(),
    }
}

fn build(
    id: &str,
    session: &Session,
    dir: Option<&RunDir>,
    labeler: LabelSource,
    prev: Option<&Snapshot>,
    state: RunState,
    error: Option<String>,
) -> Snapshot {
    let summary = RunSummary {
        id: id.to_string(),
        mode: session.mode(),
        state,
        phase: session.phase(),
        labeler,
        labels_spent: session.labels_spent(),
        k_max: session.config().k_max,
        batch: session.batch(),
        batches: session.schedule().len(),
        batch_remaining: session.batch_remaining(),
        tree_version: session.version(),
        leaf_count: session.tree().leaf_count(),
        run_dir: dir.map(|d| d.root().to_path_buf()),
        error,
    };
    let pair = match (state, session.pending()) {
        (RunState::AwaitingLabel, Some(p)) => PairResponse::Pair(Box::new(PairPayload {
            nonce: p.nonce.clone(),
            i: p.i,
            j: p.j,
            k: p.k,
            batch: p.batch,
            trajectory_i: session.store().trajectories[p.i].clone(),
            trajectory_j: session.store().trajectories[p.j].clone(),
            env: env_info(session),
        })),
        (RunState::Completed, _) => PairResponse::Exhausted,
        _ => PairResponse::Paused,
    };
    let reuse = |len: usize, prev_len: Option<usize>| prev_len == Some(len);
    let names = &session.store().dimension_names;
    let trees_len = session.trees().len();
    let (trees, tree_exports) = match prev {
        Some(p) if reuse(trees_len, Some(p.trees.len())) => (p.trees.clone(), p.tree_exports.clone()),
        _ => (
            Arc::new(session.trees().to_vec()),
            Arc::new(
                session
                    .trees()
                    .iter()
                    .enumerate()
                    .map(|(v, t)| TreeExport::new(t, v as u64, names))
                    .collect(),
            ),
        ),
    };
    let timeline = match prev {
        Some(p)
            if p.timeline.updates.len() == session.timeline().len()
                && p.timeline.batches.len() == session.batches().len() =>
        {
            p.timeline.clone()
        }
        _ => Arc::new(TimelineExport::new(session)),
    };
    let traces = match prev {
        Some(p) if p.traces.len() == session.traces().len() => p.traces.clone(),
        _ => Arc::new(session.traces().to_vec()),
    };
    let store = match prev {
        Some(p) if p.store.len() == session.store().len() => p.store.clone(),
        _ => Arc::new(session.store().clone()),
    };
    let spec = match prev {
        Some(p) => p.spec.clone(),
        None => session.spec().cloned().map(Arc::new),
    };
    Snapshot {
        summary,
        pair,
        trees,
        tree_exports,
        timeline,
        traces,
        store,
        spec,
    }
}
