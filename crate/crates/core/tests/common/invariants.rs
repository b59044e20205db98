//! Structural invariants, each checked on one random instance drawn from a
//! seed. Shared by the property tests and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rewardtree_core::env::{oracle_label, EnvSpec, OracleConfig, OracleMode};
use rewardtree_core::model::{PreferenceDataset, RunConfig, ThresholdMode, TrajectoryStore};
use rewardtree_core::normal::{inv_std_normal_cdf, labelling_loss, preference_prob, std_normal_cdf, GaussianFitnessPair};
use rewardtree_core::orchestrator::{replay_run, run_offline, Labeler, PendingPair, Poll, Session};
use rewardtree_core::solver::{comparison_graph_connected, solve_fitness, FitnessEstimate};
use rewardtree_core::tree::{feature_counts, grow, prune_sweep, to_dnf, RewardTree};

use super::{random_connected_dataset, random_store};

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub struct Instance {
    pub store: TrajectoryStore,
    pub dataset: PreferenceDataset,
    pub fitness: FitnessEstimate,
    pub tree: RewardTree,
}

/// Random store, connected dataset over all of it, and a tree grown on the
/// solved fitness.
pub fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=7);
    let horizon = rng.random_range(2..=12);
    let dim = rng.random_range(1..=3);
    let store = random_store(&mut rng, n, horizon, dim);
    let k = rng.random_range(n - 1..=n * (n - 1) / 2);
    let dataset = random_connected_dataset(&mut rng, n, k, 0.1);
    let fitness = solve_fitness(&dataset).unwrap();
    let mode = if rng.random::<bool>() { ThresholdMode::Observed } else { ThresholdMode::Midpoints };
    let tree = grow(&RewardTree::single_leaf(dim), &store, &fitness, 8, mode);
    Instance { store, dataset, fitness, tree }
}

fn probe_points(inst: &Instance, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let dim = inst.store.dim();
    let mut points: Vec<Vec<f64>> = inst
        .store
        .trajectories
        .iter()
        .flat_map(|t| t.steps.chunks_exact(dim).map(<[f64]>::to_vec))
        .collect();
    // Exact thresholds are the interesting boundary points.
    for split in &inst.tree.history().splits {
        let mut p: Vec<f64> = (0..dim).map(|_| rng.random_range(-6.0..6.0)).collect();
        p[split.dim] = split.threshold;
        points.push(p);
    }
    points.extend((0..50).map(|_| (0..dim).map(|_| rng.random_range(-6.0..6.0)).collect()));
    points
}

pub fn partition_one_hot(seed: u64) -> Check {
    let inst = instance(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let names = inst.store.dimension_names.clone();
    let rules = to_dnf(&inst.tree, &names);
    for p in probe_points(&inst, &mut rng) {
        let accepting: Vec<usize> = rules.iter().filter(|r| r.accepts(&p)).map(|r| r.leaf).collect();
        ensure!(accepting.len() == 1, "{p:?} accepted by {accepting:?}");
        ensure!(accepting[0] == inst.tree.assign_leaf(&p), "{p:?}: rule and routing disagree");
    }
    Ok(())
}

pub fn column_sums(seed: u64) -> Check {
    let inst = instance(seed);
    for m in 1..=inst.tree.leaf_count() {
        let counts = feature_counts(&inst.tree.prefix(m), &inst.store, 0..inst.store.len());
        for (i, col) in counts.columns() {
            let total: u32 = col.iter().sum();
            ensure!(total as usize == inst.store.horizon, "m={m} column {i} sums to {total}");
        }
    }
    Ok(())
}

pub fn split_conservation(seed: u64) -> Check {
    let inst = instance(seed);
    let splits = &inst.tree.history().splits;
    for m in 1..inst.tree.leaf_count() {
        let s = splits[m - 1].leaf;
        let before = feature_counts(&inst.tree.prefix(m), &inst.store, 0..inst.store.len());
        let after = feature_counts(&inst.tree.prefix(m + 1), &inst.store, 0..inst.store.len());
        for ((i, b), (_, a)) in before.columns().zip(after.columns()) {
            for x in 0..m {
                let expect = match x.cmp(&s) {
                    std::cmp::Ordering::Less => a[x],
                    std::cmp::Ordering::Equal => a[s] + a[s + 1],
                    std::cmp::Ordering::Greater => a[x + 1],
                };
                ensure!(b[x] == expect, "m={m} traj {i} leaf {x}: {} vs {expect}", b[x]);
            }
        }
        let cb = inst.tree.prefix(m).components()[s].mass;
        let next = inst.tree.prefix(m + 1);
        let ca = &next.components()[s..s + 2];
        ensure!(cb == ca[0].mass + ca[1].mass, "m={m}: mass {cb} split into {:?}", ca);
    }
    Ok(())
}

/// Residual sum of the per-timestep targets around their leaf means,
/// computed directly from the samples.
fn direct_rss(tree: &RewardTree, inst: &Instance) -> f64 {
    let dim = inst.store.dim();
    let t = inst.store.horizon as f64;
    let m = tree.leaf_count();
    let mut groups = vec![Vec::new(); m];
    for (i, mu) in inst.fitness.iter() {
        for sa in inst.store.trajectories[i].steps.chunks_exact(dim) {
            groups[tree.assign_leaf(sa)].push(mu / t);
        }
    }
    groups
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| {
            let mean = g.iter().sum::<f64>() / g.len() as f64;
            g.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
        })
        .sum()
}

pub fn rss_monotone(seed: u64) -> Check {
    let inst = instance(seed);
    let mut last = f64::INFINITY;
    for m in 1..=inst.tree.leaf_count() {
        let rss = direct_rss(&inst.tree.prefix(m), &inst);
        ensure!(rss <= last + 1e-12 * last.abs().max(1.0), "RSS rose at m={m}: {last} -> {rss}");
        if m > 1 {
            let gain = inst.tree.history().splits[m - 2].gain;
            ensure!(
                (last - rss - gain).abs() <= 1e-9 * gain.abs().max(1e-9),
                "m={m}: recorded gain {gain} but RSS fell by {}",
                last - rss
            );
        }
        last = rss;
    }
    Ok(())
}

pub fn prune_argmin(seed: u64) -> Check {
    let inst = instance(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa1fa);
    let alpha = if rng.random::<bool>() { 0.0 } else { rng.random_range(0.0..2.0) };
    let res = prune_sweep(&inst.tree, &inst.store, &inst.dataset, &inst.fitness, alpha, 1e-8);
    ensure!(res.curve.len() == inst.tree.leaf_count(), "curve length {}", res.curve.len());
    let mut best = &res.curve[0];
    for p in &res.curve {
        ensure!(
            (p.regularised - (p.loss + alpha * p.m as f64)).abs() <= 1e-12 * p.regularised.abs().max(1.0),
            "m={} regularised {} != {} + {alpha}*m",
            p.m,
            p.regularised,
            p.loss
        );
        if p.regularised < best.regularised {
            best = p;
        }
    }
    ensure!(res.best_m == best.m, "best_m {} but argmin is {}", res.best_m, best.m);
    ensure!(res.tree.leaf_count() == res.best_m, "returned tree has {} leaves", res.tree.leaf_count());
    Ok(())
}

pub fn loss_orientation(seed: u64) -> Check {
    let inst = instance(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0e1e);
    let mut flipped = PreferenceDataset::new(inst.dataset.epsilon());
    for row in inst.dataset.rows() {
        if rng.random::<bool>() {
            flipped.push(row.j, row.i, 1.0 - row.y).unwrap();
        } else {
            flipped.push(row.i, row.j, row.y).unwrap();
        }
    }
    let counts = feature_counts(&inst.tree, &inst.store, inst.dataset.labelled());
    let means = inst.tree.means();
    let vars = inst.tree.variances();
    let a = labelling_loss(&inst.dataset, &counts, &means, &vars, 1e-8);
    let b = labelling_loss(&flipped, &counts, &means, &vars, 1e-8);
    ensure!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "loss {a} vs flipped {b}");
    Ok(())
}

pub fn preference_symmetry(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..50 {
        let (mu_i, mu_j) = (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        let var_diff = rng.random_range(1e-6..20.0);
        let p = preference_prob(GaussianFitnessPair { mu_i, mu_j, var_diff }).unwrap();
        let q = preference_prob(GaussianFitnessPair { mu_i: mu_j, mu_j: mu_i, var_diff }).unwrap();
        ensure!((p + q - 1.0).abs() <= 1e-12, "p={p} q={q}");
    }
    Ok(())
}

pub fn oracle_symmetry(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for mode in [OracleMode::Hard, OracleMode::Thurstone] {
        let cfg = OracleConfig { mode, scale: rng.random_range(0.1..5.0), stochastic: false };
        for _ in 0..50 {
            let (a, b) = (rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0));
            let p = oracle_label(a, b, &cfg, 0.1, &mut rng);
            let q = oracle_label(b, a, &cfg, 0.1, &mut rng);
            ensure!((p + q - 1.0).abs() <= 1e-12, "{mode:?}: {p} + {q} != 1");
            ensure!((0.1..=0.9).contains(&p), "{mode:?}: {p} outside the label range");
        }
    }
    Ok(())
}

pub fn phi_roundtrip(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..200 {
        let p: f64 = rng.random_range(1e-6..1.0 - 1e-6);
        let back = std_normal_cdf(inv_std_normal_cdf(p).unwrap());
        ensure!((back - p).abs() <= 1e-8 * p.min(1.0 - p), "p={p} -> {back}");
        let z: f64 = rng.random_range(-5.0..5.0);
        let back = inv_std_normal_cdf(std_normal_cdf(z)).unwrap();
        ensure!((back - z).abs() <= 1e-8, "z={z} -> {back}");
    }
    Ok(())
}

/// Random labels in `[0, 1]`, drawn from the labeler's own stream.
pub struct RandomLabeler(pub ChaCha8Rng);

impl Labeler for RandomLabeler {
    fn source(&self) -> &str {
        "random"
    }

    fn label(&mut self, _: &mut Session, _: &PendingPair) -> rewardtree_core::Result<Option<f64>> {
        Ok(Some(self.0.random()))
    }
}

pub fn budget_connectivity(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=8);
    let (horizon, dim) = (rng.random_range(1..=6), rng.random_range(1..=3));
    let store = random_store(&mut rng, n, horizon, dim);
    let config = RunConfig {
        k_max: rng.random_range(0..=30),
        f_u: rng.random_range(1..=5),
        m_max: rng.random_range(1..=6),
        seed,
        ..RunConfig::default()
    };
    let k_max = config.k_max;
    let mut session = Session::offline(config, store, None).map_err(|e| e.to_string())?;
    let mut labeler = RandomLabeler(ChaCha8Rng::seed_from_u64(seed ^ 0x1abe1));
    loop {
        match session.poll().map_err(|e| e.to_string())? {
            Poll::Done => break,
            Poll::Pair(pair) => {
                ensure!(!session.dataset().contains_pair(pair.i, pair.j), "pair {pair:?} repeated");
                let y = labeler.label(&mut session, &pair).unwrap().unwrap();
                session.submit(&pair.nonce, y, "random").map_err(|e| e.to_string())?;
                ensure!(session.labels_spent() <= k_max, "spent {} > {k_max}", session.labels_spent());
                ensure!(comparison_graph_connected(session.dataset()), "graph disconnected at k={}", pair.k);
            }
        }
    }
    let expect = k_max.min(n * (n - 1) / 2);
    ensure!(session.labels_spent() == expect, "spent {} of {expect}", session.labels_spent());
    ensure!(session.update_failures().is_empty(), "{:?}", session.update_failures());
    Ok(())
}

pub fn replay_determinism(seed: u64) -> Check {
    let spec = EnvSpec::builtin("foodlava").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (store, _) = rewardtree_core::env::generate_pilot_dataset(
        &spec,
        &rewardtree_core::agent::AgentConfig::default(),
        rng.random_range(8..=20),
        &mut rng,
    );
    let config = RunConfig {
        k_max: rng.random_range(5..=40),
        f_u: rng.random_range(1..=7),
        pbrl_episodes: 0,
        seed,
        ..RunConfig::default()
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut labeler = RandomLabeler(ChaCha8Rng::seed_from_u64(seed ^ 0x1abe1));
    run_offline(config, store, Some(spec), None, &mut labeler, Some(dir.path())).map_err(|e| e.to_string())?;
    let (replayed, recorded) = replay_run(dir.path()).map_err(|e| e.to_string())?;
    let a = serde_json::to_string(&replayed).unwrap();
    let b = serde_json::to_string(&recorded).unwrap();
    ensure!(a == b, "replayed tree differs from the final checkpoint");
    Ok(())
}

pub const ALL: &[(&str, fn(u64) -> Check)] = &[
    ("partition/one-hot", partition_one_hot),
    ("column-sum = T", column_sums),
    ("split conservation", split_conservation),
    ("RSS monotonicity", rss_monotone),
    ("prune argmin", prune_argmin),
    ("loss row-orientation invariance", loss_orientation),
    ("preference_prob symmetry", preference_symmetry),
    ("oracle label symmetry", oracle_symmetry),
    ("Phi round-trip", phi_roundtrip),
    ("budget and connectivity", budget_connectivity),
    ("replay determinism", replay_determinism),
];
