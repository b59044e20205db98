//! Greedy tree growth by residual-sum-of-squares reduction.
//!
//! Every timestep of every labelled trajectory becomes a unit-weight sample
//! whose target is the trajectory's fitness divided by the horizon. Leaf
//! means and RSS over these samples are exactly the component fits, so the
//! split criterion is ordinary regression-tree variance reduction.

use crate::model::{ThresholdMode, TrajectoryStore};
use crate::solver::FitnessEstimate;

use super::{Component, RewardTree, SplitRecord};

/// Gains within this relative distance are ties, broken by lowest
/// `(leaf, dim, threshold)`.
pub const GAIN_TIE_RTOL: f64 = 1e-10;
/// A split is accepted only if its gain exceeds this fraction of the total
/// sum of squared targets.
pub const MIN_GAIN_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dim: usize,
    threshold: f64,
    gain: f64,
}

/// `a` beats `b` only if it is larger by more than the tie tolerance.
pub(crate) fn strictly_better(a: f64, b: f64) -> bool {
    a > b + GAIN_TIE_RTOL * a.abs().max(b.abs())
}

struct Leaf {
    /// Sample ids sorted by value, one list per dimension.
    members: Vec<Vec<u32>>,
    sum: f64,
    best: Option<Candidate>,
}

/// Sorted-scan split search over exploded samples.
pub struct SplitSearch {
    dim: usize,
    values: Vec<f64>,
    targets: Vec<f64>,
    /// Distinct observed values per dimension, ascending.
    distinct: Vec<Vec<f64>>,
    mode: ThresholdMode,
    min_gain: f64,
    leaves: Vec<Leaf>,
}

impl SplitSearch {
    pub fn new(
        tree: &RewardTree,
        store: &TrajectoryStore,
        fitness: &FitnessEstimate,
        mode: ThresholdMode,
    ) -> Self {
        let dim = store.dim();
        let horizon = store.horizon as f64;
        let mut values = Vec::with_capacity(fitness.len() * store.horizon * dim);
        let mut targets = Vec::with_capacity(fitness.len() * store.horizon);
        for (index, mu) in fitness.iter() {
            let traj = &store.trajectories[index];
            values.extend_from_slice(&traj.steps);
            targets.extend(std::iter::repeat_n(mu / horizon, store.horizon));
        }
        let n = targets.len();
        let total_sq: f64 = targets.iter().map(|t| t * t).sum();

        let assigned: Vec<usize> = (0..n)
            .map(|s| tree.assign_leaf(&values[s * dim..(s + 1) * dim]))
            .collect();
        let mut leaves: Vec<Leaf> = (0..tree.leaf_count())
            .map(|_| Leaf {
                members: vec![Vec::new(); dim],
                sum: 0.0,
                best: None,
            })
            .collect();
        let mut distinct = Vec::with_capacity(dim);
        for d in 0..dim {
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.sort_by(|&a, &b| {
                values[a as usize * dim + d]
                    .total_cmp(&values[b as usize * dim + d])
                    .then(a.cmp(&b))
            });
            let mut uniq: Vec<f64> = Vec::new();
            for &s in &order {
                let v = values[s as usize * dim + d];
                if uniq.last() != Some(&v) {
                    uniq.push(v);
                }
                leaves[assigned[s as usize]].members[d].push(s);
            }
            distinct.push(uniq);
        }
        for leaf in &mut leaves {
            if let Some(first) = leaf.members.first() {
                leaf.sum = first.iter().map(|&s| targets[s as usize]).sum();
            }
        }
        let mut search = Self {
            dim,
            values,
            targets,
            distinct,
            mode,
            min_gain: MIN_GAIN_RTOL * total_sq,
            leaves,
        };
        for x in 0..search.leaves.len() {
            search.leaves[x].best = search.best_for_leaf(x);
        }
        search
    }

    fn value(&self, sample: u32, d: usize) -> f64 {
        self.values[sample as usize * self.dim + d]
    }

    fn threshold_between(&self, d: usize, lower: f64, upper: f64) -> f64 {
        match self.mode {
            ThresholdMode::Midpoints => {
                let mid = 0.5 * (lower + upper);
                if mid > lower {
                    mid
                } else {
                    upper
                }
            }
            ThresholdMode::Observed => {
                // Smallest observed value above `lower`; it is at most `upper`.
                let values = &self.distinct[d];
                let pos = values.partition_point(|&v| v <= lower);
                values[pos]
            }
        }
    }

    fn best_for_leaf(&self, x: usize) -> Option<Candidate> {
        let leaf = &self.leaves[x];
        let n = leaf.members.first().map_or(0, Vec::len);
        if n < 2 {
            return None;
        }
        let total = n as f64;
        let mut best: Option<Candidate> = None;
        for d in 0..self.dim {
            let members = &leaf.members[d];
            let mut left_sum = 0.0;
            for k in 1..n {
                left_sum += self.targets[members[k - 1] as usize];
                let lower = self.value(members[k - 1], d);
                let upper = self.value(members[k], d);
                if upper <= lower {
                    continue;
                }
                let wl = k as f64;
                let wr = total - wl;
                let diff = left_sum / wl - (leaf.sum - left_sum) / wr;
                let gain = wl * wr / total * diff * diff;
                if best.is_none_or(|b| strictly_better(gain, b.gain)) {
                    best = Some(Candidate {
                        dim: d,
                        threshold: self.threshold_between(d, lower, upper),
                        gain,
                    });
                }
            }
        }
        best
    }

    /// Best `(leaf, candidate)` over all leaves, if its gain is large enough.
    fn best_split(&self) -> Option<(usize, Candidate)> {
        let mut best: Option<(usize, Candidate)> = None;
        for (x, leaf) in self.leaves.iter().enumerate() {
            if let Some(c) = leaf.best {
                if best.is_none_or(|(_, b)| strictly_better(c.gain, b.gain)) {
                    best = Some((x, c));
                }
            }
        }
        best.filter(|(_, c)| c.gain > self.min_gain)
    }

    fn component(&self, x: usize) -> Component {
        let members = &self.leaves[x].members[0];
        if members.is_empty() {
            return Component::default();
        }
        let w = members.len() as f64;
        let mean = self.leaves[x].sum / w;
        let rss: f64 = members
            .iter()
            .map(|&s| (self.targets[s as usize] - mean).powi(2))
            .sum();
        Component {
            mean,
            variance: rss / w,
            mass: w,
        }
    }

    fn split_leaf(&mut self, x: usize, cand: Candidate) {
        let leaf = self.leaves.remove(x);
        let mut left = Leaf {
            members: Vec::with_capacity(self.dim),
            sum: 0.0,
            best: None,
        };
        let mut right = Leaf {
            members: Vec::with_capacity(self.dim),
            sum: 0.0,
            best: None,
        };
        for list in leaf.members {
            let (l, r): (Vec<u32>, Vec<u32>) = list
                .into_iter()
                .partition(|&s| self.value(s, cand.dim) < cand.threshold);
            left.members.push(l);
            right.members.push(r);
        }
        left.sum = left.members[0].iter().map(|&s| self.targets[s as usize]).sum();
        right.sum = right.members[0].iter().map(|&s| self.targets[s as usize]).sum();
        self.leaves.insert(x, right);
        self.leaves.insert(x, left);
        self.leaves[x].best = self.best_for_leaf(x);
        self.leaves[x + 1].best = self.best_for_leaf(x + 1);
    }
}

/// Grows `tree` by greedy RSS-reducing splits until it has `m_max` leaves
/// or no split has positive gain. The existing structure is kept and its
/// components are refitted to `fitness`; every accepted split is appended
/// to the growth history.
pub fn grow(
    tree: &RewardTree,
    store: &TrajectoryStore,
    fitness: &FitnessEstimate,
    m_max: usize,
    mode: ThresholdMode,
) -> RewardTree {
    let mut grown = tree.clone();
    let mut search = SplitSearch::new(tree, store, fitness, mode);
    let comps = (0..grown.leaf_count()).map(|x| search.component(x)).collect();
    grown.set_components(comps);
    while grown.leaf_count() < m_max {
        let Some((x, cand)) = search.best_split() else {
            break;
        };
        search.split_leaf(x, cand);
        grown.apply_split(SplitRecord {
            leaf: x,
            dim: cand.dim,
            threshold: cand.threshold,
            gain: cand.gain,
        });
        let comps = (0..grown.leaf_count()).map(|x| search.component(x)).collect();
        grown.set_components(comps);
    }
    grown
}
