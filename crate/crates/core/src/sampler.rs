//! Active pair selection: optimistic fitness, offline and online weighting
//! matrices, and the online batch schedule.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::PreferenceDataset;
use crate::tree::FeatureCounts;

/// Optimistic trajectory fitness `N^T r + lambda * sqrt(diag(N^T Sigma N))`,
/// in the column order of `counts`. `Sigma` is diagonal.
pub fn ucb_fitness(counts: &FeatureCounts, means: &[f64], variances: &[f64], lambda: f64) -> Vec<f64> {
    counts
        .columns()
        .map(|(_, col)| {
            let mut mean = 0.0;
            let mut var = 0.0;
            for x in 0..means.len() {
                let n = col[x] as f64;
                mean += n * means[x];
                var += n * n * variances[x];
            }
            if lambda == 0.0 {
                mean
            } else {
                mean + lambda * var.max(0.0).sqrt()
            }
        })
        .collect()
}

/// Normalised pair-sampling weights over `n` trajectories, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingMatrix {
    n: usize,
    weights: Vec<f64>,
}

impl SamplingMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn positive_pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(k, &w)| (k / self.n, k % self.n, w))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sampling {
    Ready(SamplingMatrix),
    /// Every pair is excluded; elicitation must stop.
    Exhausted,
}

impl Sampling {
    pub fn matrix(&self) -> Option<&SamplingMatrix> {
        match self {
            Sampling::Ready(m) => Some(m),
            Sampling::Exhausted => None,
        }
    }
}

fn build_weights(u: &[f64], dataset: &PreferenceDataset, n: usize, old_cutoff: usize) -> Sampling {
    assert!(u.len() >= n, "optimistic fitness needs {n} entries");
    let any_labelled = !dataset.is_empty();
    let eligible = |i: usize, j: usize| {
        i != j
            && !(any_labelled && !dataset.is_labelled(i))
            && !(i < old_cutoff && j < old_cutoff)
            && !dataset.contains_pair(i, j)
    };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            if eligible(i, j) {
                let raw = u[i] + u[j];
                lo = lo.min(raw);
                hi = hi.max(raw);
            }
        }
    }
    if lo > hi {
        return Sampling::Exhausted;
    }
    let flat = lo == hi;
    let mut weights = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if eligible(i, j) {
                let w = if flat { 1.0 } else { u[i] + u[j] - lo };
                weights[i * n + j] = w;
                total += w;
            }
        }
    }
    weights.iter_mut().for_each(|w| *w /= total);
    Sampling::Ready(SamplingMatrix { n, weights })
}

/// Offline weighting: excludes self-pairs, already-sampled pairs and, once
/// anything is labelled, rows whose trajectory is unlabelled. Eligible raw
/// weights are shifted so the smallest becomes zero (or all set to one when
/// they are equal) and normalised.
pub fn offline_weights(u: &[f64], dataset: &PreferenceDataset, n: usize) -> Sampling {
    build_weights(u, dataset, n, 0)
}

/// Online weighting for batch `b` (1-based): additionally excludes pairs
/// where both trajectories predate the most recent `f_l`.
pub fn online_weights(u: &[f64], dataset: &PreferenceDataset, n: usize, b: usize, f_l: usize) -> Sampling {
    assert!(b >= 1, "batches are 1-based");
    build_weights(u, dataset, n, f_l * (b - 1))
}

/// Integer numerator of the batch-size fraction, `f_l^2 (2b - 1) - f_l`.
pub fn batch_numerator(b: usize, f_l: usize) -> u64 {
    let (b, f) = (b as u64, f_l as u64);
    f * f * (2 * b - 1) - f
}

/// Unrounded batch size for batch `b`.
pub fn batch_size_exact(b: usize, f_l: usize, n_max: usize, k_max: usize) -> f64 {
    k_max as f64 * batch_numerator(b, f_l) as f64 / (n_max as f64 * (n_max as f64 - 1.0))
}

/// Labels to collect in batch `b`, rounded half away from zero.
pub fn batch_size(b: usize, f_l: usize, n_max: usize, k_max: usize) -> usize {
    batch_size_exact(b, f_l, n_max, k_max).round() as usize
}

/// Sizes of every batch, with rounding drift settled in the final batch so
/// the total equals `k_max`.
pub fn batch_schedule(f_l: usize, n_max: usize, k_max: usize) -> Vec<usize> {
    let batches = n_max / f_l;
    let mut sizes: Vec<usize> = (1..=batches).map(|b| batch_size(b, f_l, n_max, k_max)).collect();
    if let Some((last, earlier)) = sizes.split_last_mut() {
        let spent: usize = earlier.iter().sum();
        *last = k_max.saturating_sub(spent);
    }
    sizes
}

/// Draws `(i, j)` with probability `Psi_ij`; `i` is presented first.
pub fn sample_pair<R: Rng + ?Sized>(psi: &SamplingMatrix, rng: &mut R) -> (usize, usize) {
    let target: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    let mut last_positive = None;
    for (k, &w) in psi.weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last_positive = Some(k);
        if target < acc {
            return (k / psi.n, k % psi.n);
        }
    }
    // Rounding left the cumulative sum just below one.
    let k = last_positive.expect("sampling matrix has a positive entry");
    (k / psi.n, k % psi.n)
}
