//! Interpretability exports: rule lists, feature importance, two-dimensional
//! rectangle projections and the versioned tree document.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TrajectoryStore;

use super::{Component, GrowthHistory, Node, RewardTree};

pub const TREE_FORMAT_VERSION: u32 = 1;

/// `lo <= v < hi`; a missing side is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Interval {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lo.is_none_or(|lo| v >= lo) && self.hi.is_none_or(|hi| v < hi)
    }

    pub fn is_unbounded(&self) -> bool {
        self.lo.is_none() && self.hi.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimConstraint {
    pub dim: usize,
    #[serde(flatten)]
    pub interval: Interval,
}

/// One conjunction per leaf; together the rules partition the space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnfRule {
    pub leaf: usize,
    pub constraints: Vec<DimConstraint>,
    pub mean: f64,
    pub variance: f64,
    pub text: String,
}

impl DnfRule {
    pub fn accepts(&self, sa: &[f64]) -> bool {
        self.constraints.iter().all(|c| c.interval.contains(sa[c.dim]))
    }
}

fn dim_name(names: &[String], d: usize) -> String {
    names.get(d).cloned().unwrap_or_else(|| format!("d{d}"))
}

/// Rule list in disjunctive normal form. Repeated tests of one dimension
/// along a path are merged into a single interval.
pub fn to_dnf(tree: &RewardTree, names: &[String]) -> Vec<DnfRule> {
    tree.leaf_regions()
        .into_iter()
        .enumerate()
        .map(|(leaf, region)| {
            let constraints: Vec<DimConstraint> = region
                .iter()
                .enumerate()
                .filter(|(_, iv)| !iv.is_unbounded())
                .map(|(dim, iv)| DimConstraint { dim, interval: *iv })
                .collect();
            let text = if constraints.is_empty() {
                "always".to_string()
            } else {
                constraints
                    .iter()
                    .map(|c| {
                        let name = dim_name(names, c.dim);
                        match (c.interval.lo, c.interval.hi) {
                            (Some(lo), Some(hi)) => format!("{lo} <= {name} < {hi}"),
                            (Some(lo), None) => format!("{name} >= {lo}"),
                            (None, Some(hi)) => format!("{name} < {hi}"),
                            (None, None) => unreachable!(),
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(" AND ")
            };
            let c = tree.components()[leaf];
            DnfRule {
                leaf,
                constraints,
                mean: c.mean,
                variance: c.variance,
                text,
            }
        })
        .collect()
}

/// Share of the recorded RSS reduction attributable to each dimension, over
/// the splits present in the tree. All zeros for a single leaf.
pub fn feature_importance(tree: &RewardTree) -> Vec<f64> {
    let mut weights = vec![0.0; tree.dim()];
    for split in &tree.history().splits[..tree.leaf_count() - 1] {
        weights[split.dim] += split.gain.max(0.0);
    }
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.iter_mut().for_each(|w| *w /= total);
    }
    weights
}

/// A leaf's region projected onto two dimensions, clipped to the data range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedRectangle {
    pub leaf: usize,
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub mean: f64,
    /// Store samples falling in the leaf.
    pub mass: f64,
    /// Mean of every leaf whose projection intersects this rectangle, weighted
    /// by that leaf's samples projected inside it.
    pub blended_mean: f64,
}

/// A cell of the projected arrangement covered by two or more rectangles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapCell {
    pub x: (f64, f64),
    pub y: (f64, f64),
    /// `(leaf, samples of that leaf projecting into the cell)`.
    pub members: Vec<(usize, f64)>,
    pub blended_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectangleProjection {
    pub dims: (usize, usize),
    pub names: (String, String),
    pub range: ((f64, f64), (f64, f64)),
    pub rectangles: Vec<ProjectedRectangle>,
    pub overlaps: Vec<OverlapCell>,
}

fn clip(iv: Interval, (lo, hi): (f64, f64)) -> (f64, f64) {
    let a = iv.lo.map_or(lo, |v| v.max(lo));
    let b = iv.hi.map_or(hi, |v| v.min(hi));
    (a.min(b), b.max(a))
}

fn weighted_mean(parts: &[(f64, f64)]) -> f64 {
    let mass: f64 = parts.iter().map(|p| p.1).sum();
    if mass > 0.0 {
        parts.iter().map(|(m, w)| m * w).sum::<f64>() / mass
    } else {
        parts.iter().map(|p| p.0).sum::<f64>() / parts.len().max(1) as f64
    }
}

/// Index of the cell containing `v` given ascending breakpoints.
fn cell_of(breaks: &[f64], v: f64) -> usize {
    let pos = breaks.partition_point(|&b| b <= v);
    pos.saturating_sub(1).min(breaks.len().saturating_sub(2))
}

pub fn rectangle_projection(
    tree: &RewardTree,
    dims: (usize, usize),
    store: &TrajectoryStore,
) -> Result<RectangleProjection> {
    let d = store.dim();
    let (d1, d2) = dims;
    if d1 == d2 || d1 >= d || d2 >= d {
        return Err(Error::Parse(format!(
            "projection dims must be distinct and below {d}, got ({d1}, {d2})"
        )));
    }
    let ranges = store.observed_range();
    let fix = |r: (f64, f64)| if r.0 <= r.1 { r } else { (0.0, 0.0) };
    let (rx, ry) = (fix(ranges[d1]), fix(ranges[d2]));
    let regions = tree.leaf_regions();
    let m = tree.leaf_count();
    let rects: Vec<((f64, f64), (f64, f64))> = regions
        .iter()
        .map(|r| (clip(r[d1], rx), clip(r[d2], ry)))
        .collect();

    let mut xb: Vec<f64> = rects.iter().flat_map(|r| [r.0 .0, r.0 .1]).collect();
    let mut yb: Vec<f64> = rects.iter().flat_map(|r| [r.1 .0, r.1 .1]).collect();
    for b in [&mut xb, &mut yb] {
        b.sort_by(f64::total_cmp);
        b.dedup();
    }
    let (nx, ny) = (xb.len().saturating_sub(1).max(1), yb.len().saturating_sub(1).max(1));

    // Samples per (leaf, cell).
    let mut leaf_mass = vec![0.0; m];
    let mut cell_mass = vec![0.0; m * nx * ny];
    for traj in &store.trajectories {
        for sa in traj.iter_steps(d) {
            let leaf = tree.assign_leaf(sa);
            leaf_mass[leaf] += 1.0;
            let (cx, cy) = (cell_of(&xb, sa[d1]), cell_of(&yb, sa[d2]));
            cell_mass[(leaf * nx + cx) * ny + cy] += 1.0;
        }
    }
    let cell_bounds = |cx: usize, cy: usize| {
        let x = (xb[cx], *xb.get(cx + 1).unwrap_or(&xb[cx]));
        let y = (yb[cy], *yb.get(cy + 1).unwrap_or(&yb[cy]));
        (x, y)
    };
    let covers = |leaf: usize, cx: usize, cy: usize| {
        let ((x0, x1), (y0, y1)) = cell_bounds(cx, cy);
        let (rx, ry) = rects[leaf];
        rx.0 <= x0 && x1 <= rx.1 && ry.0 <= y0 && y1 <= ry.1
    };

    let comps = tree.components();
    let mut overlaps = Vec::new();
    for cx in 0..nx {
        for cy in 0..ny {
            let members: Vec<usize> = (0..m).filter(|&l| covers(l, cx, cy)).collect();
            if members.len() < 2 {
                continue;
            }
            let parts: Vec<(usize, f64)> = members
                .iter()
                .map(|&l| (l, cell_mass[(l * nx + cx) * ny + cy]))
                .collect();
            let blend: Vec<(f64, f64)> = parts.iter().map(|&(l, w)| (comps[l].mean, w)).collect();
            let (x, y) = cell_bounds(cx, cy);
            overlaps.push(OverlapCell {
                x,
                y,
                members: parts,
                blended_mean: weighted_mean(&blend),
            });
        }
    }

    let rectangles = (0..m)
        .map(|leaf| {
            // Every leaf's samples projecting into cells this rectangle covers.
            let mut parts = Vec::new();
            for other in 0..m {
                let mut w = 0.0;
                let mut touches = false;
                for cx in 0..nx {
                    for cy in 0..ny {
                        if covers(leaf, cx, cy) && covers(other, cx, cy) {
                            touches = true;
                            w += cell_mass[(other * nx + cx) * ny + cy];
                        }
                    }
                }
                if touches {
                    parts.push((comps[other].mean, w));
                }
            }
            let (x, y) = rects[leaf];
            ProjectedRectangle {
                leaf,
                x,
                y,
                mean: comps[leaf].mean,
                mass: leaf_mass[leaf],
                blended_mean: if parts.is_empty() {
                    comps[leaf].mean
                } else {
                    weighted_mean(&parts)
                },
            }
        })
        .collect();

    Ok(RectangleProjection {
        dims,
        names: (
            dim_name(&store.dimension_names, d1),
            dim_name(&store.dimension_names, d2),
        ),
        range: (rx, ry),
        rectangles,
        overlaps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafExport {
    pub index: usize,
    pub mean: f64,
    pub variance: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceExport {
    /// Definition of the weights: normalised RSS reduction per dimension.
    pub metric: String,
    pub weights: Vec<f64>,
}

/// Versioned, self-describing tree document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeExport {
    pub format_version: u32,
    /// Model version within a run (0 is the initial single leaf).
    pub version: u64,
    pub dimension_names: Vec<String>,
    pub nodes: Vec<Node>,
    pub leaves: Vec<LeafExport>,
    pub dnf: Vec<DnfRule>,
    pub history: GrowthHistory,
    pub feature_importance: ImportanceExport,
}

impl TreeExport {
    pub fn new(tree: &RewardTree, version: u64, names: &[String]) -> Self {
        Self {
            format_version: TREE_FORMAT_VERSION,
            version,
            dimension_names: names.to_vec(),
            nodes: tree.nodes().to_vec(),
            leaves: tree
                .components()
                .iter()
                .enumerate()
                .map(|(index, c)| LeafExport {
                    index,
                    mean: c.mean,
                    variance: c.variance,
                    mass: c.mass,
                })
                .collect(),
            dnf: to_dnf(tree, names),
            history: tree.history().clone(),
            feature_importance: ImportanceExport {
                metric: "rss-reduction".to_string(),
                weights: feature_importance(tree),
            },
        }
    }

    /// Rebuilds the tree by replaying the recorded splits, checking the
    /// result against the exported node list.
    pub fn to_tree(&self) -> Result<RewardTree> {
        if self.format_version != TREE_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported tree format version {}",
                self.format_version
            )));
        }
        let m = self.leaves.len();
        if m == 0 || self.history.splits.len() < m - 1 {
            return Err(Error::Parse("tree history shorter than leaf count".into()));
        }
        let mut tree = RewardTree::from_splits(self.dimension_names.len(), &self.history.splits[..m - 1]);
        if tree.nodes() != self.nodes.as_slice() {
            return Err(Error::Parse("node list does not match growth history".into()));
        }
        tree.history.snapshots = self.history.snapshots.clone();
        tree.components = self
            .leaves
            .iter()
            .map(|l| Component {
                mean: l.mean,
                variance: l.variance,
                mass: l.mass,
            })
            .collect();
        Ok(tree)
    }
}
