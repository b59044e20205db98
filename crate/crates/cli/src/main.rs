mod config;
mod labeler;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use rewardtree_client::{Client, ClientError};
use rewardtree_core::api::{CreateRun, LabelSource};
use rewardtree_core::env::{generate_pilot_dataset, EnvSpec};
use rewardtree_core::model::{RunConfig, TrajectoryStore};
use rewardtree_core::orchestrator::{
    replay, replay_run, report_card, resume, run_offline, run_online, update_points, DriveStatus, Labeler, Mode,
    OracleLabeler, RunDir, RunOutcome,
};
use rewardtree_core::storage::{read_label_log, read_store, write_store, EnvTag};
use rewardtree_core::tree::{rectangle_projection, TreeExport};
use rewardtree_core::Error;

use config::Overrides;

/// Spec file written next to a generated store.
const ENV_FILE: &str = "env.json";

#[derive(Debug, Parser)]
#[command(name = "rewardtree", version, about = "Preference-based reward trees")]
struct Cli {
    /// TOML file mirroring the run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or file, for exports).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Independent repeats with seeds seed, seed+1, ...; run concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    repeats: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LabelerArg {
    Oracle,
    /// Prompt on the terminal; an empty line pauses the run.
    Stdin,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a tabular agent on the true reward and store every episode.
    GenPilot {
        #[arg(long, default_value = "foodlava")]
        env: String,
        /// JSON environment spec replacing the builtin parameters.
        #[arg(long)]
        env_spec: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
    },
    /// Learn a reward from labels over a fixed trajectory store.
    RunOffline {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        env_spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "oracle")]
        labeler: LabelerArg,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Learn a reward while an agent trains on it.
    RunOnline {
        #[arg(long, default_value = "foodlava")]
        env: String,
        #[arg(long)]
        env_spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "oracle")]
        labeler: LabelerArg,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Continue a paused run directory.
    Resume {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value = "oracle")]
        labeler: LabelerArg,
    },
    /// Write one document from a run directory.
    Export {
        #[arg(long)]
        run: PathBuf,
        /// dnf, tree, rectangles, timeline or report:EPISODE
        #[arg(long)]
        what: What,
        /// Tree version; the final one by default.
        #[arg(long)]
        version: Option<u64>,
        /// Projection dimensions for rectangles, by index or name.
        #[arg(long, default_value = "0,1")]
        dims: String,
    },
    /// Rebuild the final tree from a label log.
    Replay {
        /// Run directory; the replayed tree is checked against its final checkpoint.
        #[arg(long, conflicts_with_all = ["labels", "store"])]
        run: Option<PathBuf>,
        #[arg(long, requires = "store")]
        labels: Option<PathBuf>,
        #[arg(long, requires = "labels")]
        store: Option<PathBuf>,
        /// Timeline whose update points are replayed; `f_u` cadence otherwise.
        #[arg(long)]
        timeline: Option<PathBuf>,
    },
    /// Start the HTTP service. With --config or --start, an online run is created.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        start: bool,
        #[arg(long, default_value = "foodlava")]
        env: String,
        #[arg(long)]
        oracle_labels: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Talk to a running service.
    Remote {
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        url: String,
        #[command(subcommand)]
        action: Remote,
    },
}

#[derive(Debug, Subcommand)]
enum Remote {
    Runs,
    Create {
        #[arg(long, default_value = "foodlava")]
        env: String,
        #[arg(long)]
        offline_store: Option<PathBuf>,
        #[arg(long)]
        oracle_labels: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    Status { id: String },
    Pair { id: String },
    Label { id: String, nonce: String, y: f64 },
    Tree {
        id: String,
        #[arg(long)]
        version: Option<u64>,
    },
    Timeline { id: String },
    Traces { id: String },
    Rectangles { id: String, d1: String, d2: String },
    Report { id: String, episode: usize },
}

#[derive(Debug, Clone)]
enum What {
    Dnf,
    Tree,
    Rectangles,
    Timeline,
    Report(usize),
}

impl FromStr for What {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dnf" => Ok(What::Dnf),
            "tree" => Ok(What::Tree),
            "rectangles" => Ok(What::Rectangles),
            "timeline" => Ok(What::Timeline),
            _ => s
                .strip_prefix("report:")
                .and_then(|ep| ep.parse().ok())
                .map(What::Report)
                .ok_or_else(|| format!("unknown export {s:?}")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("{0} paused before completion")]
    Paused(String),
    #[error("replayed tree differs from the recorded checkpoint")]
    Mismatch,
    #[error("{0}")]
    Usage(String),
    #[error("cannot start run: {0}")]
    Start(String),
}

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
enum Exit {
    Ok = 0,
    Internal = 1,
    Usage = 2,
    Config = 3,
    Io = 4,
    Input = 5,
    Paused = 6,
    Mismatch = 7,
    Remote = 8,
}

impl CliError {
    fn exit(&self) -> Exit {
        match self {
            CliError::Core(e) => match e {
                Error::Config(_) => Exit::Config,
                Error::Io { .. } => Exit::Io,
                Error::Json(_)
                | Error::Parse(_)
                | Error::InvalidTrajectory(_)
                | Error::InvalidLabel(_)
                | Error::SpecMismatch { .. }
                | Error::NotFound(_) => Exit::Input,
                _ => Exit::Internal,
            },
            CliError::Client(_) => Exit::Remote,
            CliError::Paused(_) => Exit::Paused,
            CliError::Mismatch => Exit::Mismatch,
            CliError::Usage(_) => Exit::Usage,
            CliError::Start(_) => Exit::Input,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn print_json(value: &impl Serialize, out: Option<&Path>) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?,
        None => write_stdout(&text)?,
    }
    Ok(())
}

fn write_stdout(text: &str) -> CliResult {
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("stdout", e).into()),
        _ => Ok(()),
    }
}

fn require_out(cli: &Cli) -> CliResult<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| CliError::Usage("--out is required".into()))
}

fn load_spec(env: &str, file: Option<&Path>) -> CliResult<EnvSpec> {
    Ok(match file {
        Some(path) => EnvSpec::load(path)?,
        None => EnvSpec::builtin(env)?,
    })
}

fn make_labeler(arg: LabelerArg) -> Box<dyn Labeler> {
    match arg {
        LabelerArg::Oracle => Box::new(OracleLabeler),
        LabelerArg::Stdin => Box::new(labeler::StdinLabeler::new()),
    }
}

#[derive(Serialize)]
struct RunLine<'a> {
    out: &'a Path,
    seed: u64,
    status: DriveStatus,
    labels: usize,
    tree_version: u64,
    leaf_count: usize,
}

fn report_outcome(out: &Path, outcome: &RunOutcome) -> CliResult {
    let s = &outcome.session;
    let line = RunLine {
        out,
        seed: s.config().seed,
        status: outcome.status,
        labels: s.labels_spent(),
        tree_version: s.version(),
        leaf_count: s.tree().leaf_count(),
    };
    write_stdout(&serde_json::to_string(&line).map_err(Error::from)?)?;
    match outcome.status {
        DriveStatus::Completed => Ok(()),
        DriveStatus::Paused => Err(CliError::Paused(out.display().to_string())),
    }
}

/// Runs `job` once per repeat, each with its own seed and output directory.
fn repeated(cli: &Cli, base: &RunConfig, job: impl Fn(RunConfig, &Path) -> CliResult + Sync) -> CliResult {
    let out = require_out(cli)?;
    if cli.repeats <= 1 {
        return job(base.clone(), out);
    }
    let results: Vec<CliResult> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cli.repeats)
            .map(|r| {
                let mut config = base.clone();
                config.seed = base.seed.wrapping_add(r);
                let dir = out.join(format!("repeat-{r:02}"));
                let job = &job;
                scope.spawn(move || job(config, &dir))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("repeat panicked")).collect()
    });
    results.into_iter().collect()
}

fn gen_pilot(cli: &Cli, env: &str, env_spec: Option<&Path>, episodes: usize) -> CliResult {
    let config = config::effective(cli.config.as_deref(), cli.seed, &Overrides::default())?;
    let spec = load_spec(env, env_spec)?;
    repeated(cli, &config, |config, out| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (store, _) = generate_pilot_dataset(&spec, &config.agent, episodes, &mut rng);
        write_store(out, &store, Some(&spec.tag()))?;
        spec.save(&out.join(ENV_FILE))?;
        write_stdout(&serde_json::json!({ "out": out, "seed": config.seed, "episodes": store.len() }).to_string())?;
        Ok(())
    })
}

/// The spec a store was generated with: an explicit file, the file saved
/// beside the store, or the builtin named by its tag.
fn store_spec(store: &Path, explicit: Option<&Path>, tag: Option<&EnvTag>) -> CliResult<Option<EnvSpec>> {
    if let Some(path) = explicit {
        return Ok(Some(EnvSpec::load(path)?));
    }
    let saved = store.join(ENV_FILE);
    if saved.exists() {
        return Ok(Some(EnvSpec::load(&saved)?));
    }
    Ok(tag.map(|t| EnvSpec::builtin(&t.name)).transpose()?)
}

fn load_store(path: &Path) -> CliResult<(TrajectoryStore, Option<EnvTag>)> {
    Ok(read_store(path)?)
}

fn cmd_offline(cli: &Cli, store_dir: &Path, env_spec: Option<&Path>, labeler: LabelerArg, over: &Overrides) -> CliResult {
    let config = config::effective(cli.config.as_deref(), cli.seed, over)?;
    let (store, tag) = load_store(store_dir)?;
    let spec = store_spec(store_dir, env_spec, tag.as_ref())?;
    repeated(cli, &config, |config, out| {
        let mut labeler = make_labeler(labeler);
        let outcome = run_offline(
            config,
            store.clone(),
            spec.clone(),
            tag.as_ref(),
            labeler.as_mut(),
            Some(out),
        )?;
        report_outcome(out, &outcome)
    })
}

fn cmd_online(cli: &Cli, env: &str, env_spec: Option<&Path>, labeler: LabelerArg, over: &Overrides) -> CliResult {
    let config = config::effective(cli.config.as_deref(), cli.seed, over)?;
    let spec = load_spec(env, env_spec)?;
    repeated(cli, &config, |config, out| {
        let mut labeler = make_labeler(labeler);
        let outcome = run_online(config, spec.clone(), labeler.as_mut(), Some(out))?;
        report_outcome(out, &outcome)
    })
}

fn cmd_resume(run: &Path, labeler: LabelerArg) -> CliResult {
    let mut labeler = make_labeler(labeler);
    let outcome = resume(run, labeler.as_mut())?;
    report_outcome(run, &outcome)
}

fn resolve_dim(names: &[String], key: &str) -> CliResult<usize> {
    key.trim()
        .parse::<usize>()
        .ok()
        .or_else(|| names.iter().position(|n| n == key.trim()))
        .filter(|&d| d < names.len())
        .ok_or_else(|| CliError::Usage(format!("unknown dimension {key:?}")))
}

fn cmd_export(cli: &Cli, run: &Path, what: &What, version: Option<u64>, dims: &str) -> CliResult {
    let dir = RunDir::open(run)?;
    let manifest = dir.read_manifest()?;
    let version = version.unwrap_or(manifest.tree_version);
    let out = cli.out.as_deref();
    match what {
        What::Timeline => print_json(&dir.read_timeline()?, out),
        What::Tree => print_json(&dir.read_checkpoint(version)?, out),
        What::Dnf => print_json(&dir.read_checkpoint(version)?.dnf, out),
        What::Rectangles | What::Report(_) => {
            let tree = dir.read_checkpoint(version)?.to_tree()?;
            let (store, _) = read_store(&dir.trajectories_path())?;
            if let What::Report(ep) = what {
                let card = report_card(&tree, version, &store, *ep, manifest.env_spec.as_ref())?;
                return print_json(&card, out);
            }
            let (d1, d2) = dims
                .split_once(',')
                .ok_or_else(|| CliError::Usage(format!("--dims expects two comma-separated dimensions, got {dims:?}")))?;
            let names = &store.dimension_names;
            let dims = (resolve_dim(names, d1)?, resolve_dim(names, d2)?);
            print_json(&rectangle_projection(&tree, dims, &store)?, out)
        }
    }
}

fn cmd_replay(
    cli: &Cli,
    run: Option<&Path>,
    labels: Option<&Path>,
    store: Option<&Path>,
    timeline: Option<&Path>,
) -> CliResult {
    let out = cli.out.as_deref();
    if let Some(run) = run {
        let (replayed, recorded) = replay_run(run)?;
        print_json(&replayed, out)?;
        return if replayed == recorded { Ok(()) } else { Err(CliError::Mismatch) };
    }
    let (Some(labels), Some(store)) = (labels, store) else {
        return Err(CliError::Usage("replay needs --run or both --labels and --store".into()));
    };
    let config = config::effective(cli.config.as_deref(), cli.seed, &Overrides::default())?;
    let (store, _) = read_store(store)?;
    let records = read_label_log(labels)?;
    let points = match timeline {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let t: rewardtree_core::orchestrator::TimelineExport = serde_json::from_str(&text).map_err(Error::from)?;
            t.updates.iter().map(|u| u.labels).collect()
        }
        None => update_points(config.f_u, records.len()),
    };
    let tree = replay(&config, &store, &records, &points)?;
    print_json(&TreeExport::new(&tree, points.len() as u64, &store.dimension_names), out)
}

fn cmd_serve(cli: &Cli, host: &str, port: u16, start: bool, env: &str, oracle: bool, over: &Overrides) -> CliResult {
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).try_init();
    let config = config::effective(cli.config.as_deref(), cli.seed, over)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
    runtime.block_on(async {
        let addr = format!("{host}:{port}");
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| Error::io(&addr, e))?;
        let local = listener.local_addr().map_err(|e| Error::io(&addr, e))?;
        let state = rewardtree_service::AppState::new(cli.out.clone());
        if start || cli.config.is_some() {
            let req = CreateRun {
                mode: Mode::Online,
                env: env.to_string(),
                config,
                labeler: if oracle { LabelSource::Oracle } else { LabelSource::Human },
                ..CreateRun::default()
            };
            let run = state.start_run(req).await.map_err(|e| CliError::Start(e.to_string()))?;
            println!("started {}", run.id);
        }
        println!("listening on http://{local}");
        let _ = std::io::stdout().flush();
        rewardtree_service::serve(listener, state)
            .await
            .map_err(|e| Error::io(&addr, e))?;
        Ok(())
    })
}

fn cmd_remote(cli: &Cli, url: &str, action: &Remote) -> CliResult {
    let client = Client::new(url)?;
    let out = cli.out.as_deref();
    match action {
        Remote::Runs => print_json(&client.runs()?, out),
        Remote::Create {
            env,
            offline_store,
            oracle_labels,
            overrides,
        } => {
            let config = config::effective(cli.config.as_deref(), cli.seed, overrides)?;
            let req = CreateRun {
                mode: if offline_store.is_some() { Mode::Offline } else { Mode::Online },
                env: env.clone(),
                store: offline_store.clone(),
                config,
                labeler: if *oracle_labels { LabelSource::Oracle } else { LabelSource::Human },
                ..CreateRun::default()
            };
            print_json(&client.create_run(&req)?, out)
        }
        Remote::Status { id } => print_json(&client.run(id)?, out),
        Remote::Pair { id } => print_json(&client.pair(id)?, out),
        Remote::Label { id, nonce, y } => print_json(&client.label(id, nonce, *y)?, out),
        Remote::Tree { id, version } => print_json(&client.tree(id, *version)?, out),
        Remote::Timeline { id } => print_json(&client.timeline(id)?, out),
        Remote::Traces { id } => print_json(&client.traces(id)?, out),
        Remote::Rectangles { id, d1, d2 } => print_json(&client.rectangles(id, d1, d2)?, out),
        Remote::Report { id, episode } => print_json(&client.report(id, *episode)?, out),
    }
}

fn dispatch(cli: &Cli) -> CliResult {
    if cli.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    match &cli.command {
        Command::GenPilot { env, env_spec, episodes } => gen_pilot(cli, env, env_spec.as_deref(), *episodes),
        Command::RunOffline {
            store,
            env_spec,
            labeler,
            overrides,
        } => cmd_offline(cli, store, env_spec.as_deref(), *labeler, overrides),
        Command::RunOnline {
            env,
            env_spec,
            labeler,
            overrides,
        } => cmd_online(cli, env, env_spec.as_deref(), *labeler, overrides),
        Command::Resume { run, labeler } => cmd_resume(run, *labeler),
        Command::Export {
            run,
            what,
            version,
            dims,
        } => cmd_export(cli, run, what, *version, dims),
        Command::Replay {
            run,
            labels,
            store,
            timeline,
        } => cmd_replay(cli, run.as_deref(), labels.as_deref(), store.as_deref(), timeline.as_deref()),
        Command::Serve {
            host,
            port,
            start,
            env,
            oracle_labels,
            overrides,
        } => cmd_serve(cli, host, *port, *start, env, *oracle_labels, overrides),
        Command::Remote { url, action } => cmd_remote(cli, url, action),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::from(Exit::Ok as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit() as u8)
        }
    }
}
