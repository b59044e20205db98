//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

pub mod invariants;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use rewardtree_core::model::{PreferenceDataset, Source, ThresholdMode, TrajectoryStore};
use rewardtree_core::normal::inv_std_normal_cdf;
use rewardtree_core::solver::FitnessEstimate;
use rewardtree_core::tree::{RewardTree, GAIN_TIE_RTOL, MIN_GAIN_RTOL};

/// Random connected comparison graph over `n` trajectories with `k` rows.
/// A random spanning tree is laid down first, then extra distinct pairs.
pub fn random_connected_dataset<R: Rng>(rng: &mut R, n: usize, k: usize, epsilon: f64) -> PreferenceDataset {
    assert!(k >= n - 1 && k <= n * (n - 1) / 2);
    let mut ds = PreferenceDataset::new(epsilon);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let push = |ds: &mut PreferenceDataset, a: usize, b: usize, rng: &mut R| {
        let (i, j) = if rng.random::<bool>() { (a, b) } else { (b, a) };
        let y = rng.random_range(epsilon..=1.0 - epsilon);
        ds.push(i, j, y).unwrap();
    };
    for w in 1..n {
        let parent = order[rng.random_range(0..w)];
        push(&mut ds, order[w], parent, rng);
    }
    let mut rest: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .filter(|&(a, b)| !ds.contains_pair(a, b))
        .collect();
    rest.shuffle(rng);
    for &(a, b) in rest.iter().take(k - (n - 1)) {
        push(&mut ds, a, b, rng);
    }
    ds
}

/// Minimum-norm least squares `A^+ b` with the pseudoinverse built from the
/// eigendecomposition of `A^T A`, discarding null-space directions.
pub fn pinv_fitness(ds: &PreferenceDataset) -> Vec<f64> {
    let labelled: Vec<usize> = ds.labelled().collect();
    let col = |i: usize| labelled.binary_search(&i).unwrap();
    let mut a = DMatrix::zeros(ds.len(), labelled.len());
    let mut b = DVector::zeros(ds.len());
    for (r, row) in ds.rows().iter().enumerate() {
        a[(r, col(row.i))] = 1.0;
        a[(r, col(row.j))] = -1.0;
        b[r] = inv_std_normal_cdf(row.y).unwrap();
    }
    let eig = (a.transpose() * &a).symmetric_eigen();
    let atb = a.transpose() * b;
    let mut x = DVector::zeros(labelled.len());
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > 1e-9 {
            let v = eig.eigenvectors.column(k);
            x += v * (v.dot(&atb) / lambda);
        }
    }
    x.iter().copied().collect()
}

pub fn random_store<R: Rng>(rng: &mut R, n: usize, horizon: usize, dim: usize) -> TrajectoryStore {
    let names = (0..dim).map(|d| format!("s{d}")).collect();
    let mut store = TrajectoryStore::new(horizon, dim, 0, names).unwrap();
    for e in 0..n {
        // Coarse grid so that repeated coordinates and tied gains occur.
        let steps = (0..horizon * dim)
            .map(|_| (rng.random_range(-20..=20) as f64) / 4.0)
            .collect();
        store.push(Source::Pilot, e as u64, steps).unwrap();
    }
    store
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BruteSplit {
    pub leaf: usize,
    pub dim: usize,
    pub threshold: f64,
    pub gain: f64,
}

fn rss(targets: &[f64]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    targets.iter().map(|t| (t - mean).powi(2)).sum()
}

/// Exhaustive search for the next split of `tree`: every leaf, every
/// dimension, every admissible threshold, gain computed as the direct
/// difference of residual sums. Ties go to the lowest (leaf, dim, threshold).
pub fn brute_force_split(
    tree: &RewardTree,
    store: &TrajectoryStore,
    fitness: &FitnessEstimate,
    mode: ThresholdMode,
) -> Option<BruteSplit> {
    let dim = store.dim();
    let t = store.horizon as f64;
    let mut samples: Vec<(&[f64], f64)> = Vec::new();
    for (i, mu) in fitness.iter() {
        for sa in store.trajectories[i].steps.chunks_exact(dim) {
            samples.push((sa, mu / t));
        }
    }
    let total_sq: f64 = samples.iter().map(|s| s.1 * s.1).sum();
    let mut observed: Vec<Vec<f64>> = (0..dim)
        .map(|d| samples.iter().map(|s| s.0[d]).collect())
        .collect();
    for v in &mut observed {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    let mut best: Option<BruteSplit> = None;
    for leaf in 0..tree.leaf_count() {
        let members: Vec<&(&[f64], f64)> = samples.iter().filter(|s| tree.assign_leaf(s.0) == leaf).collect();
        let parent: Vec<f64> = members.iter().map(|s| s.1).collect();
        let parent_rss = rss(&parent);
        for d in 0..dim {
            let mut local: Vec<f64> = members.iter().map(|s| s.0[d]).collect();
            local.sort_by(f64::total_cmp);
            local.dedup();
            let candidates: Vec<f64> = match mode {
                ThresholdMode::Observed => observed[d].clone(),
                ThresholdMode::Midpoints => local
                    .windows(2)
                    .map(|w| {
                        let mid = 0.5 * (w[0] + w[1]);
                        if mid > w[0] { mid } else { w[1] }
                    })
                    .collect(),
            };
            for c in candidates {
                let (l, r): (Vec<&&(&[f64], f64)>, Vec<_>) = members.iter().partition(|s| s.0[d] < c);
                if l.is_empty() || r.is_empty() {
                    continue;
                }
                let lt: Vec<f64> = l.iter().map(|s| s.1).collect();
                let rt: Vec<f64> = r.iter().map(|s| s.1).collect();
                let gain = parent_rss - rss(&lt) - rss(&rt);
                let better = match best {
                    None => true,
                    Some(b) => gain > b.gain + GAIN_TIE_RTOL * gain.abs().max(b.gain.abs()),
                };
                if better {
                    best = Some(BruteSplit { leaf, dim: d, threshold: c, gain });
                }
            }
        }
    }
    best.filter(|b| b.gain > MIN_GAIN_RTOL * total_sq)
}
