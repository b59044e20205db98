//! Tree-structured reward functions: axis-aligned threshold tests with one
//! Gaussian reward component per leaf.

mod export;
mod grow;
mod prune;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::model::TrajectoryStore;
use crate::solver::FitnessEstimate;

pub use export::{
    feature_importance, rectangle_projection, to_dnf, DnfRule, Interval, OverlapCell,
    ProjectedRectangle, RectangleProjection, TreeExport, TREE_FORMAT_VERSION,
};
pub use grow::{grow, GAIN_TIE_RTOL, MIN_GAIN_RTOL};
pub use prune::{prune_sweep, prune_sweep_with, PrunePoint, PruneResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Node {
    /// Routes right when `sa[dim] >= threshold`, else left.
    Split {
        dim: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { leaf: usize },
}

/// Gaussian reward component attached to a leaf.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Component {
    pub mean: f64,
    pub variance: f64,
    /// Labelled timesteps that fell in the leaf when it was fitted.
    pub mass: f64,
}

/// One accepted split, identified by the leaf index at the time it was made.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub leaf: usize,
    pub dim: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Ordered splits from the single-leaf root, plus the components fitted at
/// each size. `snapshots[m - 1]` holds the components of the `m`-leaf tree.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GrowthHistory {
    pub splits: Vec<SplitRecord>,
    pub snapshots: Vec<Vec<Component>>,
}

/// A binary reward tree. Leaves are indexed densely in left-to-right order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTree {
    dim: usize,
    nodes: Vec<Node>,
    leaf_nodes: Vec<usize>,
    components: Vec<Component>,
    history: GrowthHistory,
}

impl RewardTree {
    /// The initial model: one leaf with zero mean and variance.
    pub fn single_leaf(dim: usize) -> Self {
        Self {
            dim,
            nodes: vec![Node::Leaf { leaf: 0 }],
            leaf_nodes: vec![0],
            components: vec![Component::default()],
            history: GrowthHistory {
                splits: Vec::new(),
                snapshots: vec![vec![Component::default()]],
            },
        }
    }

    /// Rebuilds a tree by replaying splits from the root. Components are zero.
    pub fn from_splits(dim: usize, splits: &[SplitRecord]) -> Self {
        let mut tree = Self::single_leaf(dim);
        for s in splits {
            tree.apply_split(*s);
        }
        tree.components = vec![Component::default(); tree.leaf_count()];
        tree.history.snapshots = vec![Vec::new(); tree.leaf_count()];
        tree
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn means(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.mean).collect()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.variance).collect()
    }

    pub fn history(&self) -> &GrowthHistory {
        &self.history
    }

    pub fn set_components(&mut self, components: Vec<Component>) {
        assert_eq!(components.len(), self.leaf_count());
        if let Some(slot) = self.history.snapshots.get_mut(self.leaf_nodes.len() - 1) {
            *slot = components.clone();
        }
        self.components = components;
    }

    /// Leaf index whose conjunction of tests `sa` satisfies.
    pub fn assign_leaf(&self, sa: &[f64]) -> usize {
        let mut node = 0;
        loop {
            match self.nodes[node] {
                Node::Leaf { leaf } => return leaf,
                Node::Split {
                    dim,
                    threshold,
                    left,
                    right,
                } => node = if sa[dim] >= threshold { right } else { left },
            }
        }
    }

    /// `(mean, variance)` of the component `sa` falls in.
    pub fn predict_reward(&self, sa: &[f64]) -> (f64, f64) {
        let c = self.components[self.assign_leaf(sa)];
        (c.mean, c.variance)
    }

    /// Sum of predicted means over every step of a flat trajectory.
    pub fn trajectory_return(&self, steps: &[f64]) -> f64 {
        steps
            .chunks_exact(self.dim)
            .map(|sa| self.predict_reward(sa).0)
            .sum()
    }

    /// Splits `leaf` into `(left, right)`, which take indices `leaf` and
    /// `leaf + 1`; later leaves shift up by one.
    pub(crate) fn apply_split(&mut self, split: SplitRecord) {
        let node_id = self.leaf_nodes[split.leaf];
        let left = self.nodes.len();
        let right = left + 1;
        self.nodes.push(Node::Leaf { leaf: split.leaf });
        self.nodes.push(Node::Leaf {
            leaf: split.leaf + 1,
        });
        self.nodes[node_id] = Node::Split {
            dim: split.dim,
            threshold: split.threshold,
            left,
            right,
        };
        for (id, node) in self.nodes.iter_mut().enumerate() {
            if let Node::Leaf { leaf } = node {
                if id != left && id != right && *leaf > split.leaf {
                    *leaf += 1;
                }
            }
        }
        self.leaf_nodes.insert(split.leaf + 1, right);
        self.leaf_nodes[split.leaf] = left;
        let parent = self.components[split.leaf];
        self.components.insert(split.leaf + 1, parent);
        self.history.splits.push(split);
        self.history.snapshots.push(self.components.clone());
    }

    /// The tree after its first `m - 1` recorded splits, carrying the
    /// component snapshot recorded for that size.
    pub fn prefix(&self, m: usize) -> RewardTree {
        assert!(m >= 1 && m <= self.leaf_count());
        let mut tree = RewardTree::from_splits(self.dim, &self.history.splits[..m - 1]);
        tree.history.snapshots = self.history.snapshots[..m].to_vec();
        let snap = &self.history.snapshots[m - 1];
        tree.components = if snap.len() == m {
            snap.clone()
        } else {
            vec![Component::default(); m]
        };
        tree
    }

    /// Per-leaf axis-aligned region: for each dimension, `[lo, hi)` bounds,
    /// `None` meaning unbounded.
    pub fn leaf_regions(&self) -> Vec<Vec<Interval>> {
        let mut regions = vec![Vec::new(); self.leaf_count()];
        let mut stack = vec![(0usize, vec![Interval::default(); self.dim])];
        while let Some((node, bounds)) = stack.pop() {
            match self.nodes[node] {
                Node::Leaf { leaf } => regions[leaf] = bounds,
                Node::Split {
                    dim,
                    threshold,
                    left,
                    right,
                } => {
                    let mut lb = bounds.clone();
                    lb[dim].hi = Some(lb[dim].hi.map_or(threshold, |h| h.min(threshold)));
                    let mut rb = bounds;
                    rb[dim].lo = Some(rb[dim].lo.map_or(threshold, |l| l.max(threshold)));
                    stack.push((left, lb));
                    stack.push((right, rb));
                }
            }
        }
        regions
    }
}

/// Per-trajectory leaf occupancy: column `i` counts the timesteps trajectory
/// `i` spent in each leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCounts {
    m: usize,
    indices: Vec<usize>,
    /// Column-major, `m` entries per column.
    counts: Vec<u32>,
    position: HashMap<usize, usize>,
}

impl FeatureCounts {
    pub fn from_columns(m: usize, columns: Vec<(usize, Vec<u32>)>) -> Self {
        let mut indices = Vec::with_capacity(columns.len());
        let mut counts = Vec::with_capacity(columns.len() * m);
        let mut position = HashMap::with_capacity(columns.len());
        for (pos, (index, column)) in columns.into_iter().enumerate() {
            assert_eq!(column.len(), m);
            indices.push(index);
            counts.extend(column);
            position.insert(index, pos);
        }
        Self {
            m,
            indices,
            counts,
            position,
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.m
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn column(&self, index: usize) -> Option<&[u32]> {
        self.position
            .get(&index)
            .map(|&pos| &self.counts[pos * self.m..(pos + 1) * self.m])
    }

    pub fn columns(&self) -> impl Iterator<Item = (usize, &[u32])> {
        self.indices.iter().copied().zip(self.counts.chunks_exact(self.m))
    }

    /// Learnt trajectory return `r . n_i`.
    pub fn learnt_return(&self, index: usize, means: &[f64]) -> Option<f64> {
        self.column(index)
            .map(|col| col.iter().zip(means).map(|(&n, &r)| n as f64 * r).sum())
    }
}

/// Counts leaf visits for the trajectories at `indices`.
pub fn feature_counts(
    tree: &RewardTree,
    store: &TrajectoryStore,
    indices: impl IntoIterator<Item = usize>,
) -> FeatureCounts {
    let m = tree.leaf_count();
    let d = store.dim();
    let columns = indices
        .into_iter()
        .map(|i| {
            let mut col = vec![0u32; m];
            for sa in store.trajectories[i].iter_steps(d) {
                col[tree.assign_leaf(sa)] += 1;
            }
            (i, col)
        })
        .collect();
    FeatureCounts::from_columns(m, columns)
}

/// Fits each leaf's mean and variance under a uniform temporal prior: every
/// timestep of a labelled trajectory carries `mu_i / T`. Leaves that no
/// labelled trajectory visits get a zero component.
pub fn fit_components(counts: &FeatureCounts, fitness: &FitnessEstimate, horizon: usize) -> Vec<Component> {
    let m = counts.leaf_count();
    let t = horizon as f64;
    let mut mass = vec![0.0; m];
    let mut weighted = vec![0.0; m];
    for (index, mu) in fitness.iter() {
        let col = counts.column(index).expect("counts cover labelled trajectories");
        for x in 0..m {
            mass[x] += col[x] as f64;
            weighted[x] += col[x] as f64 * (mu / t);
        }
    }
    let means: Vec<f64> = (0..m)
        .map(|x| if mass[x] > 0.0 { weighted[x] / mass[x] } else { 0.0 })
        .collect();
    let mut rss = vec![0.0; m];
    for (index, mu) in fitness.iter() {
        let col = counts.column(index).expect("counts cover labelled trajectories");
        for x in 0..m {
            if col[x] > 0 {
                rss[x] += col[x] as f64 * (mu / t - means[x]).powi(2);
            }
        }
    }
    (0..m)
        .map(|x| Component {
            mean: means[x],
            variance: if mass[x] > 0.0 { rss[x] / mass[x] } else { 0.0 },
            mass: mass[x],
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::Source;

    /// Figure-1 style topology over D = 2: root tests dim 0 >= 0; the right
    /// side further tests dim 1 >= 0.5.
    pub(crate) fn three_leaf_tree() -> RewardTree {
        let mut tree = RewardTree::single_leaf(2);
        tree.apply_split(SplitRecord {
            leaf: 0,
            dim: 0,
            threshold: 0.0,
            gain: 1.0,
        });
        tree.apply_split(SplitRecord {
            leaf: 1,
            dim: 1,
            threshold: 0.5,
            gain: 0.5,
        });
        tree
    }

    #[test]
    fn single_leaf_assigns_everything_to_zero() {
        let tree = RewardTree::single_leaf(3);
        assert_eq!(tree.assign_leaf(&[1.0, -4.0, 9.0]), 0);
        assert_eq!(tree.predict_reward(&[0.0, 0.0, 0.0]), (0.0, 0.0));
    }

    #[test]
    fn threshold_is_inclusive_on_the_right() {
        let mut tree = RewardTree::single_leaf(1);
        tree.apply_split(SplitRecord {
            leaf: 0,
            dim: 0,
            threshold: 0.0,
            gain: 1.0,
        });
        assert_eq!(tree.assign_leaf(&[0.0]), 1);
        assert_eq!(tree.assign_leaf(&[-1e-300]), 0);
    }

    #[test]
    fn three_leaf_regions() {
        let tree = three_leaf_tree();
        assert_eq!(tree.assign_leaf(&[-1.0, 3.0]), 0);
        assert_eq!(tree.assign_leaf(&[1.0, 0.0]), 1);
        assert_eq!(tree.assign_leaf(&[1.0, 0.7]), 2);
        let regions = tree.leaf_regions();
        assert_eq!(regions[0][0].hi, Some(0.0));
        assert_eq!(regions[2][1].lo, Some(0.5));
        assert_eq!(regions[1][1].hi, Some(0.5));
    }

    #[test]
    fn splitting_earlier_leaf_shifts_later_indices() {
        let mut tree = three_leaf_tree();
        tree.apply_split(SplitRecord {
            leaf: 0,
            dim: 1,
            threshold: 0.0,
            gain: 0.1,
        });
        assert_eq!(tree.assign_leaf(&[-1.0, -1.0]), 0);
        assert_eq!(tree.assign_leaf(&[-1.0, 1.0]), 1);
        assert_eq!(tree.assign_leaf(&[1.0, 0.0]), 2);
        assert_eq!(tree.assign_leaf(&[1.0, 0.7]), 3);
    }

    #[test]
    fn replay_reproduces_structure() {
        let tree = three_leaf_tree();
        let replayed = RewardTree::from_splits(2, &tree.history().splits);
        assert_eq!(replayed.nodes(), tree.nodes());
        assert_eq!(tree.prefix(2).leaf_count(), 2);
    }

    fn store_1d(trajs: &[&[f64]]) -> TrajectoryStore {
        let t = trajs[0].len();
        let mut store = TrajectoryStore::new(t, 1, 0, vec!["x".into()]).unwrap();
        for traj in trajs {
            store.push(Source::Pilot, 0, traj.to_vec()).unwrap();
        }
        store
    }

    #[test]
    fn counts_partition_each_trajectory() {
        let store = store_1d(&[&[-1.0, -1.0, 2.0], &[3.0, 3.0, 3.0]]);
        let mut tree = RewardTree::single_leaf(1);
        let counts = feature_counts(&tree, &store, 0..2);
        assert_eq!(counts.column(0), Some(&[3u32][..]));
        tree.apply_split(SplitRecord {
            leaf: 0,
            dim: 0,
            threshold: 0.0,
            gain: 1.0,
        });
        let counts = feature_counts(&tree, &store, 0..2);
        assert_eq!(counts.column(0), Some(&[2u32, 1][..]));
        assert_eq!(counts.column(1), Some(&[0u32, 3][..]));
    }

    #[test]
    fn fit_single_trajectory_in_one_leaf() {
        let counts = FeatureCounts::from_columns(2, vec![(4, vec![10, 0])]);
        let fitness = FitnessEstimate {
            indices: vec![4],
            values: vec![3.0],
        };
        let comps = fit_components(&counts, &fitness, 10);
        assert!((comps[0].mean - 0.3).abs() < 1e-15);
        assert_eq!(comps[0].variance, 0.0);
        assert_eq!(comps[1], Component::default());
    }

    #[test]
    fn fit_two_trajectories_equal_counts() {
        let (v1, v2, t) = (4.0, -2.0, 8usize);
        let counts = FeatureCounts::from_columns(1, vec![(0, vec![8]), (1, vec![8])]);
        let fitness = FitnessEstimate {
            indices: vec![0, 1],
            values: vec![v1, v2],
        };
        let comps = fit_components(&counts, &fitness, t);
        let tf = t as f64;
        assert!((comps[0].mean - (v1 + v2) / (2.0 * tf)).abs() < 1e-15);
        assert!((comps[0].variance - ((v1 - v2) / (2.0 * tf)).powi(2)).abs() < 1e-15);
        assert_eq!(fit_components(&counts, &fitness, t), comps);
    }
}
