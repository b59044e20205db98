//! Trajectory-level fitness estimation by unit-variance least squares over
//! the comparison graph.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PreferenceDataset;
use crate::normal::inv_std_normal_cdf;

/// Mean fitness per labelled trajectory, zero-sum over the labelled set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitnessEstimate {
    /// Labelled trajectory indices, ascending.
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl FitnessEstimate {
    pub fn get(&self, index: usize) -> Option<f64> {
        self.indices
            .binary_search(&index)
            .ok()
            .map(|pos| self.values[pos])
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Connected components of the comparison graph, each as ascending
/// trajectory indices, ordered by smallest member.
pub fn comparison_components(dataset: &PreferenceDataset) -> Vec<Vec<usize>> {
    let labelled: Vec<usize> = dataset.labelled().collect();
    let local = |i: usize| labelled.binary_search(&i).expect("labelled index");
    let mut sets = DisjointSet::new(labelled.len());
    for row in dataset.rows() {
        sets.union(local(row.i), local(row.j));
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_group = vec![usize::MAX; labelled.len()];
    for (pos, &index) in labelled.iter().enumerate() {
        let root = sets.find(pos);
        if root_group[root] == usize::MAX {
            root_group[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_group[root]].push(index);
    }
    groups
}

/// True iff the undirected graph of labelled trajectories is connected.
/// An empty dataset is vacuously connected.
pub fn comparison_graph_connected(dataset: &PreferenceDataset) -> bool {
    comparison_components(dataset).len() <= 1
}

/// Minimum-norm least-squares fitness `argmin |probit(y) - A mu|^2` over the
/// labelled trajectories.
///
/// `A^T A` is the Laplacian of the comparison graph and is singular; adding
/// the all-ones matrix makes it positive definite on a connected graph while
/// forcing the solution to sum to zero, which is the minimum-norm solution.
pub fn solve_fitness(dataset: &PreferenceDataset) -> Result<FitnessEstimate> {
    if dataset.is_empty() {
        return Ok(FitnessEstimate::default());
    }
    let components = comparison_components(dataset);
    if components.len() > 1 {
        return Err(Error::Disconnected { components });
    }
    let indices: Vec<usize> = dataset.labelled().collect();
    let n = indices.len();
    let local = |i: usize| indices.binary_search(&i).expect("labelled index");

    let mut normal = DMatrix::from_element(n, n, 1.0);
    let mut rhs = DVector::zeros(n);
    for row in dataset.rows() {
        let (a, b) = (local(row.i), local(row.j));
        let target = inv_std_normal_cdf(row.y)?;
        normal[(a, a)] += 1.0;
        normal[(b, b)] += 1.0;
        normal[(a, b)] -= 1.0;
        normal[(b, a)] -= 1.0;
        rhs[a] += target;
        rhs[b] -= target;
    }
    let chol = normal
        .cholesky()
        .expect("augmented Laplacian of a connected graph is positive definite");
    let solution = chol.solve(&rhs);
    Ok(FitnessEstimate {
        indices,
        values: solution.iter().copied().collect(),
    })
}
