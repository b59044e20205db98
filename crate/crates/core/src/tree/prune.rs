use serde::{Deserialize, Serialize};

use crate::model::{PreferenceDataset, TrajectoryStore};
use crate::normal::labelling_loss;
use crate::solver::FitnessEstimate;

use super::{feature_counts, fit_components, RewardTree};

/// Labelling loss of the `m`-leaf prefix, with and without the size penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrunePoint {
    pub m: usize,
    pub loss: f64,
    pub regularised: f64,
}

#[derive(Debug, Clone)]
pub struct PruneResult {
    pub best_m: usize,
    pub alpha: f64,
    pub tree: RewardTree,
    /// One entry per size, ordered `m = 1..=grown size`.
    pub curve: Vec<PrunePoint>,
}

/// Walks the growth history back to a single leaf, refitting components at
/// every size, and keeps the size minimising `loss + alpha * m` (ties go to
/// the smaller tree).
pub fn prune_sweep(
    grown: &RewardTree,
    store: &TrajectoryStore,
    dataset: &PreferenceDataset,
    fitness: &FitnessEstimate,
    alpha: f64,
    variance_floor: f64,
) -> PruneResult {
    prune_sweep_with(grown, store, dataset, fitness, |_| alpha, variance_floor)
}

/// As [`prune_sweep`], with `alpha` chosen from the unregularised curve.
pub fn prune_sweep_with(
    grown: &RewardTree,
    store: &TrajectoryStore,
    dataset: &PreferenceDataset,
    fitness: &FitnessEstimate,
    alpha: impl FnOnce(&[PrunePoint]) -> f64,
    variance_floor: f64,
) -> PruneResult {
    let size = grown.leaf_count();
    let mut curve = Vec::with_capacity(size);
    let mut fits = Vec::with_capacity(size);
    for m in (1..=size).rev() {
        let prefix = grown.prefix(m);
        let counts = feature_counts(&prefix, store, dataset.labelled());
        let comps = fit_components(&counts, fitness, store.horizon);
        let means: Vec<f64> = comps.iter().map(|c| c.mean).collect();
        let vars: Vec<f64> = comps.iter().map(|c| c.variance).collect();
        let loss = labelling_loss(dataset, &counts, &means, &vars, variance_floor);
        curve.push(PrunePoint {
            m,
            loss,
            regularised: loss,
        });
        fits.push(comps);
    }
    curve.reverse();
    fits.reverse();
    let alpha = alpha(&curve);
    for point in &mut curve {
        point.regularised = point.loss + alpha * point.m as f64;
    }

    let mut best = 0;
    for (pos, point) in curve.iter().enumerate() {
        if point.regularised < curve[best].regularised {
            best = pos;
        }
    }
    let best_m = curve[best].m;
    let mut tree = grown.prefix(best_m);
    for (m, comps) in fits.iter().enumerate().take(best_m) {
        tree.history.snapshots[m] = comps.clone();
    }
    tree.components = fits[best].clone();
    PruneResult {
        best_m,
        alpha,
        tree,
        curve,
    }
}
