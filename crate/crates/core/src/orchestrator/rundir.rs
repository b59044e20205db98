use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::model::{RunConfig, TrajectoryStore};
use crate::storage::{dataset_from_records, read_label_log, read_store, write_store, EnvTag, LabelLogWriter, LabelRecord};
use crate::tree::{RewardTree, TreeExport};

use super::{
    drive, model_update, report_card, BatchRecord, DriveStatus, Labeler, Mode, Session, TimelineRecord,
};

pub const RUN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Running,
    Paused,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub mode: Mode,
    pub status: RunStatus,
    /// Effective configuration after file values and overrides.
    pub config: RunConfig,
    pub env: Option<EnvTag>,
    pub env_spec: Option<EnvSpec>,
    pub labels: usize,
    pub tree_version: u64,
    pub leaf_count: usize,
    pub update_failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineExport {
    pub format_version: u32,
    pub schedule: Vec<usize>,
    pub updates: Vec<TimelineRecord>,
    pub batches: Vec<BatchRecord>,
}

impl TimelineExport {
    pub fn new(session: &Session) -> Self {
        Self {
            format_version: RUN_FORMAT_VERSION,
            schedule: session.schedule().to_vec(),
            updates: session.timeline().to_vec(),
            batches: session.batches().to_vec(),
        }
    }
}

/// A run directory: `manifest.json`, `trajectories/`, `labels.log`,
/// `checkpoints/tree-v{N}.json`, `timeline.json`, `traces.csv`, `reports/`.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    labels_written: usize,
    checkpoints_written: usize,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        for sub in ["", "checkpoints", "reports"] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let log = root.join("labels.log");
        if log.exists() {
            return Err(Error::InvalidState(format!("{} already holds a run", root.display())));
        }
        Ok(Self {
            root: root.to_path_buf(),
            labels_written: 0,
            checkpoints_written: 0,
        })
    }

    /// Opens an existing run directory for appending.
    pub fn open(root: &Path) -> Result<Self> {
        let labels_written = match read_label_log(&root.join("labels.log")) {
            Ok(records) => records.len(),
            Err(Error::Io { .. }) => 0,
            Err(e) => return Err(e),
        };
        let mut checkpoints_written = 0;
        while root.join(format!("checkpoints/tree-v{checkpoints_written}.json")).exists() {
            checkpoints_written += 1;
        }
        Ok(Self {
            root: root.to_path_buf(),
            labels_written,
            checkpoints_written,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn labels_path(&self) -> PathBuf {
        self.root.join("labels.log")
    }

    pub fn trajectories_path(&self) -> PathBuf {
        self.root.join("trajectories")
    }

    pub fn checkpoint_path(&self, version: u64) -> PathBuf {
        self.root.join(format!("checkpoints/tree-v{version}.json"))
    }

    pub fn timeline_path(&self) -> PathBuf {
        self.root.join("timeline.json")
    }

    pub fn traces_path(&self) -> PathBuf {
        self.root.join("traces.csv")
    }

    pub fn session_path(&self) -> PathBuf {
        self.root.join("session.json")
    }

    pub fn read_manifest(&self) -> Result<RunManifest> {
        read_json(&self.manifest_path())
    }

    pub fn read_checkpoint(&self, version: u64) -> Result<TreeExport> {
        read_json(&self.checkpoint_path(version))
    }

    pub fn read_timeline(&self) -> Result<TimelineExport> {
        read_json(&self.timeline_path())
    }

    /// Appends new label records and writes new tree checkpoints.
    pub fn sync(&mut self, session: &Session) -> Result<()> {
        let records = session.records();
        if records.len() > self.labels_written {
            let mut log = LabelLogWriter::open(&self.labels_path())?;
            for r in &records[self.labels_written..] {
                log.append(r)?;
            }
            self.labels_written = records.len();
        }
        let names = &session.store().dimension_names;
        for (v, tree) in session.trees().iter().enumerate().skip(self.checkpoints_written) {
            write_json(&self.checkpoint_path(v as u64), &TreeExport::new(tree, v as u64, names))?;
        }
        self.checkpoints_written = session.trees().len();
        Ok(())
    }

    /// Writes every artifact; a paused run also persists its session.
    pub fn write(&mut self, session: &Session, status: RunStatus) -> Result<()> {
        self.sync(session)?;
        if !session.store().is_empty() {
            write_store(&self.trajectories_path(), session.store(), session.spec().map(|s| s.tag()).as_ref())?;
        }
        write_json(&self.timeline_path(), &TimelineExport::new(session))?;
        self.write_traces(session)?;
        if let Some(last) = session.store().len().checked_sub(1) {
            let card = report_card(session.tree(), session.version(), session.store(), last, session.spec())?;
            write_json(&self.root.join(format!("reports/episode-{last}.json")), &card)?;
            let txt = self.root.join(format!("reports/episode-{last}.txt"));
            fs::write(&txt, &card.text).map_err(|e| Error::io(&txt, e))?;
        }
        if status == RunStatus::Paused {
            write_json(&self.session_path(), session)?;
        } else if self.session_path().exists() {
            fs::remove_file(self.session_path()).map_err(|e| Error::io(self.session_path(), e))?;
        }
        let manifest = RunManifest {
            format_version: RUN_FORMAT_VERSION,
            mode: session.mode(),
            status,
            config: session.config().clone(),
            env: session.spec().map(|s| s.tag()),
            env_spec: session.spec().cloned(),
            labels: session.labels_spent(),
            tree_version: session.version(),
            leaf_count: session.tree().leaf_count(),
            update_failures: session.update_failures().to_vec(),
        };
        write_json(&self.manifest_path(), &manifest)
    }

    fn write_traces(&self, session: &Session) -> Result<()> {
        let path = self.traces_path();
        let width = session
            .traces()
            .iter()
            .map(|t| t.steps_per_component.len())
            .max()
            .unwrap_or(0);
        let mut w = csv::WriterBuilder::new()
            .flexible(true)
            .from_path(&path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let mut header = vec![
            "episode".to_string(),
            "tree_version".into(),
            "return_learnt".into(),
            "return_ground_truth".into(),
        ];
        header.extend((0..width).map(|x| format!("steps_c{x}")));
        let csv_err = |e: csv::Error| Error::Parse(format!("{}: {e}", path.display()));
        w.write_record(&header).map_err(csv_err)?;
        for t in session.traces() {
            let mut row = vec![
                t.episode.to_string(),
                t.tree_version.to_string(),
                t.return_learnt.to_string(),
                t.return_ground_truth.to_string(),
            ];
            row.extend(t.steps_per_component.iter().map(|n| n.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn load_session(&self) -> Result<Session> {
        read_json(&self.session_path())
    }
}

pub struct RunOutcome {
    pub session: Session,
    pub status: DriveStatus,
}

fn finish(session: Session, status: DriveStatus, dir: Option<&mut RunDir>) -> Result<RunOutcome> {
    if let Some(dir) = dir {
        let s = match status {
            DriveStatus::Completed => RunStatus::Completed,
            DriveStatus::Paused => RunStatus::Paused,
        };
        dir.write(&session, s)?;
    }
    Ok(RunOutcome { session, status })
}

/// Offline protocol over a fixed store. `tag` is the environment the store
/// was generated in; a spec with a different hash is refused.
pub fn run_offline(
    config: RunConfig,
    store: TrajectoryStore,
    spec: Option<EnvSpec>,
    tag: Option<&EnvTag>,
    labeler: &mut dyn Labeler,
    out: Option<&Path>,
) -> Result<RunOutcome> {
    if let (Some(spec), Some(tag)) = (&spec, tag) {
        spec.check_tag(tag)?;
    }
    let mut session = Session::offline(config, store, spec)?;
    let mut dir = out.map(RunDir::create).transpose()?;
    let status = drive(&mut session, labeler)?;
    finish(session, status, dir.as_mut())
}

/// Online protocol: the agent trains on the live reward while labels are
/// collected in batches.
pub fn run_online(
    config: RunConfig,
    spec: EnvSpec,
    labeler: &mut dyn Labeler,
    out: Option<&Path>,
) -> Result<RunOutcome> {
    let mut session = Session::online(config, spec)?;
    let mut dir = out.map(RunDir::create).transpose()?;
    let status = drive(&mut session, labeler)?;
    finish(session, status, dir.as_mut())
}

/// Continues a paused run from its persisted session.
pub fn resume(root: &Path, labeler: &mut dyn Labeler) -> Result<RunOutcome> {
    let mut dir = RunDir::open(root)?;
    let mut session = dir.load_session()?;
    let status = drive(&mut session, labeler)?;
    finish(session, status, Some(&mut dir))
}

/// Label counts at which updates run when nothing interrupts the cadence:
/// every `f_u` labels and once more at the end.
pub fn update_points(f_u: usize, labels: usize) -> Vec<usize> {
    let mut points: Vec<usize> = (1..=labels / f_u).map(|q| q * f_u).collect();
    if labels % f_u != 0 {
        points.push(labels);
    }
    points
}

/// Rebuilds the tree from a label log by running the model update at each
/// of `points` on the matching dataset prefix.
pub fn replay(
    config: &RunConfig,
    store: &TrajectoryStore,
    records: &[LabelRecord],
    points: &[usize],
) -> Result<RewardTree> {
    let dataset = dataset_from_records(records, config.epsilon)?;
    let mut tree = RewardTree::single_leaf(store.dim());
    for &k in points {
        if k > dataset.len() {
            return Err(Error::InvalidState(format!(
                "update at {k} labels but the log holds {}",
                dataset.len()
            )));
        }
        match model_update(config, store, &dataset.prefix(k), &tree) {
            Ok(update) => tree = update.tree,
            Err(Error::Disconnected { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(tree)
}

/// Replays a completed run directory. Returns the replayed tree and the
/// run's final checkpoint.
pub fn replay_run(root: &Path) -> Result<(TreeExport, TreeExport)> {
    let dir = RunDir::open(root)?;
    let manifest = dir.read_manifest()?;
    let (store, _) = read_store(&dir.trajectories_path())?;
    let records = read_label_log(&dir.labels_path())?;
    let timeline = dir.read_timeline()?;
    let points: Vec<usize> = timeline.updates.iter().map(|u| u.labels).collect();
    let tree = replay(&manifest.config, &store, &records, &points)?;
    let names = &store.dimension_names;
    let replayed = TreeExport::new(&tree, manifest.tree_version, names);
    let recorded = dir.read_checkpoint(manifest.tree_version)?;
    Ok((replayed, recorded))
}
