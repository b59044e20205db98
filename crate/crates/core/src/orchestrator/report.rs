use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::model::TrajectoryStore;
use crate::tree::{to_dnf, RewardTree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub leaf: usize,
    pub rule: String,
    pub mean: f64,
    pub steps: u32,
    /// Fraction of the episode spent in the leaf.
    pub share: f64,
    /// `steps * mean`.
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCard {
    pub episode: usize,
    pub tree_version: u64,
    pub learnt_return: f64,
    pub ground_truth: Option<f64>,
    /// Visited leaves, most time first.
    pub entries: Vec<ReportEntry>,
    pub text: String,
}

/// Breaks an episode's learnt return down by the components it visited.
pub fn report_card(
    tree: &RewardTree,
    tree_version: u64,
    store: &TrajectoryStore,
    episode: usize,
    spec: Option<&EnvSpec>,
) -> Result<ReportCard> {
    let traj = store
        .get(episode)
        .ok_or_else(|| Error::NotFound(format!("episode {episode}")))?;
    let mut counts = vec![0u32; tree.leaf_count()];
    for sa in traj.iter_steps(store.dim()) {
        counts[tree.assign_leaf(sa)] += 1;
    }
    let rules = to_dnf(tree, &store.dimension_names);
    let horizon = store.horizon as f64;
    let mut entries: Vec<ReportEntry> = counts
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(leaf, &n)| {
            let mean = tree.components()[leaf].mean;
            ReportEntry {
                leaf,
                rule: rules[leaf].text.clone(),
                mean,
                steps: n,
                share: n as f64 / horizon,
                contribution: n as f64 * mean,
            }
        })
        .collect();
    entries.sort_by(|a, b| b.steps.cmp(&a.steps).then(a.leaf.cmp(&b.leaf)));
    let learnt_return = tree.trajectory_return(&traj.steps);
    let ground_truth = spec.map(|s| s.ground_truth_fitness(&traj.steps));

    let mut text = format!("Episode {episode} (tree v{tree_version})\n");
    let _ = writeln!(text, "learnt return: {learnt_return:.6}");
    if let Some(f) = ground_truth {
        let _ = writeln!(text, "ground-truth fitness: {f:.6}");
    }
    for e in &entries {
        let _ = writeln!(
            text,
            "  leaf {:>2}  {:>5.1}% ({:>4} steps)  r = {:+.6}  contribution {:+.6}  if {}",
            e.leaf,
            100.0 * e.share,
            e.steps,
            e.mean,
            e.contribution,
            e.rule
        );
    }
    Ok(ReportCard {
        episode,
        tree_version,
        learnt_return,
        ground_truth,
        entries,
        text,
    })
}
