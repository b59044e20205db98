//! On-disk formats: the flat trajectory matrix with its manifest, and the
//! append-only preference log.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PreferenceDataset, Source, Trajectory, TrajectoryStore};

pub const STORE_FORMAT_VERSION: u32 = 1;
const STEPS_FILE: &str = "steps.f64le";
const MANIFEST_FILE: &str = "manifest.json";

/// Identifies the environment a store was generated in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvTag {
    pub name: String,
    pub spec_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrajectoryEntry {
    id: u64,
    source: Source,
    episode_index: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoreManifest {
    format_version: u32,
    n: usize,
    horizon: usize,
    state_dims: usize,
    action_dims: usize,
    dimension_names: Vec<String>,
    /// Row-major `(n * T) x D` little-endian f64 matrix.
    steps_file: String,
    trajectories: Vec<TrajectoryEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    env: Option<EnvTag>,
}

pub fn write_store(dir: &Path, store: &TrajectoryStore, env: Option<&EnvTag>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = StoreManifest {
        format_version: STORE_FORMAT_VERSION,
        n: store.len(),
        horizon: store.horizon,
        state_dims: store.state_dims,
        action_dims: store.action_dims,
        dimension_names: store.dimension_names.clone(),
        steps_file: STEPS_FILE.to_string(),
        trajectories: store
            .trajectories
            .iter()
            .map(|t| TrajectoryEntry {
                id: t.id,
                source: t.source,
                episode_index: t.episode_index,
            })
            .collect(),
        env: env.cloned(),
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;

    let path = dir.join(STEPS_FILE);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = BufWriter::new(file);
    for traj in &store.trajectories {
        for v in &traj.steps {
            out.write_all(&v.to_le_bytes()).map_err(|e| Error::io(&path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn read_store(dir: &Path) -> Result<(TrajectoryStore, Option<EnvTag>)> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: StoreManifest = serde_json::from_str(&text)?;
    if manifest.format_version != STORE_FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported store format version {}",
            manifest.format_version
        )));
    }
    if manifest.trajectories.len() != manifest.n {
        return Err(Error::Parse("manifest trajectory count mismatch".into()));
    }
    let mut store = TrajectoryStore::new(
        manifest.horizon,
        manifest.state_dims,
        manifest.action_dims,
        manifest.dimension_names,
    )?;

    let path = dir.join(&manifest.steps_file);
    let mut bytes = Vec::new();
    File::open(&path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(&path, e))?;
    let per_traj = store.horizon * store.dim();
    if bytes.len() != manifest.n * per_traj * 8 {
        return Err(Error::Parse(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            manifest.n * per_traj * 8
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    for (entry, chunk) in manifest.trajectories.iter().zip(values.chunks_exact(per_traj.max(1))) {
        store.check_steps(chunk)?;
        store.trajectories.push(Trajectory {
            id: entry.id,
            source: entry.source,
            episode_index: entry.episode_index,
            steps: chunk.to_vec(),
        });
    }
    Ok((store, manifest.env))
}

/// One line of the preference log: `k i j y timestamp source`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub k: usize,
    pub i: usize,
    pub j: usize,
    pub y: f64,
    /// Milliseconds since the unix epoch.
    pub timestamp: u64,
    /// `oracle/<nonce>` or `human/<nonce>`.
    pub source: String,
}

impl LabelRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {} {} {}",
            self.k, self.i, self.j, self.y, self.timestamp, self.source
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::Parse(format!("expected 6 fields in label record: {line:?}")));
        }
        let num = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Parse(format!("bad integer {s:?} in {line:?}")))
        };
        Ok(Self {
            k: num(fields[0])?,
            i: num(fields[1])?,
            j: num(fields[2])?,
            y: fields[3]
                .parse()
                .map_err(|_| Error::Parse(format!("bad label {:?} in {line:?}", fields[3])))?,
            timestamp: fields[4]
                .parse()
                .map_err(|_| Error::Parse(format!("bad timestamp {:?} in {line:?}", fields[4])))?,
            source: fields[5].to_string(),
        })
    }
}

pub fn now_millis() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Appends one record per call; never rewrites existing lines.
pub struct LabelLogWriter {
    file: File,
    path: std::path::PathBuf,
}

impl LabelLogWriter {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, record: &LabelRecord) -> Result<()> {
        writeln!(self.file, "{}", record.to_line()).map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_label_log(path: &Path) -> Result<Vec<LabelRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        records.push(LabelRecord::parse_line(&line)?);
    }
    Ok(records)
}

pub fn dataset_from_records(records: &[LabelRecord], epsilon: f64) -> Result<PreferenceDataset> {
    let mut ds = PreferenceDataset::new(epsilon);
    for r in records {
        ds.push(r.i, r.j, r.y)?;
    }
    Ok(ds)
}
