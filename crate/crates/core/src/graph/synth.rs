use crate::error::{Error, Result};
use crate::rng::{normals, seeded};
use crate::tensor::Tensor;

use super::{ClassSplit, GraphDataset};

pub const MAX_TREE_NODES: usize = 50_000;

/// Parameters of the balanced-tree generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeConfig {
    pub branching: usize,
    pub depth: usize,
    pub feature_dim: usize,
    pub noise: f64,
    pub seed: u64,
    /// Depth whose subtrees define the classes; 1 gives `branching` classes.
    pub class_depth: usize,
}

impl TreeConfig {
    pub fn new(branching: usize, depth: usize, feature_dim: usize, noise: f64, seed: u64) -> Self {
        Self { branching, depth, feature_dim, noise, seed, class_depth: 1 }
    }

    /// Node count `(b^(h+1) - 1)/(b - 1)`, `None` on overflow.
    pub fn node_count(&self) -> Option<usize> {
        let mut total: usize = 1;
        let mut level: usize = 1;
        for _ in 0..self.depth {
            level = level.checked_mul(self.branching)?;
            total = total.checked_add(level)?;
        }
        Some(total)
    }
}

/// Balanced `b`-ary tree of depth `h` with nodes numbered breadth-first.
///
/// Each subtree rooted at depth `class_depth` is one class (numbered in
/// breadth-first order); nodes above that depth take the class of their
/// leftmost descendant. Every node on the way down from the root to a class
/// root contributes an independent `N(0, I)` offset, and a class anchor is the
/// sum of the offsets on its path, so sibling classes share a common prefix.
/// A node's features are its class anchor plus `noise · (depth/h) · N(0, I)`.
/// Classes go to train / val / test round-robin.
pub fn generate_tree_dataset(cfg: &TreeConfig) -> Result<GraphDataset> {
    let TreeConfig { branching: b, depth: h, feature_dim: d, noise, seed, class_depth } = *cfg;
    if b < 2 || h < 2 || d < 4 {
        return Err(Error::Param(format!("tree needs b >= 2, h >= 2, d >= 4 (got {b}, {h}, {d})")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Param(format!("noise {noise}")));
    }
    if class_depth == 0 || class_depth > h {
        return Err(Error::Param(format!("class depth {class_depth} outside 1..={h}")));
    }
    let n = cfg
        .node_count()
        .filter(|&n| n <= MAX_TREE_NODES)
        .ok_or_else(|| Error::Size(format!("tree with b={b}, h={h} exceeds {MAX_TREE_NODES} nodes")))?;

    // First breadth-first id at each depth.
    let mut level_start = vec![0usize; h + 2];
    let mut width = 1;
    for t in 0..=h {
        level_start[t + 1] = level_start[t] + width;
        width *= b;
    }
    let depth_of = |v: usize| (0..=h).find(|&t| v < level_start[t + 1]).expect("v < n");

    let mut rng = seeded(seed);
    let offset_nodes = level_start[class_depth + 1] - 1;
    let offsets = normals(&mut rng, offset_nodes * d);
    let mut anchors = vec![0.0; offset_nodes * d + d];
    // anchors[v] for v in 1..=last class root; root keeps zeros at index 0.
    for v in 1..level_start[class_depth + 1] {
        let parent = (v - 1) / b;
        for j in 0..d {
            anchors[v * d + j] = anchors[parent * d + j] + offsets[(v - 1) * d + j];
        }
    }

    let mut labels = Vec::with_capacity(n);
    let mut class_root = Vec::with_capacity(n);
    for v in 0..n {
        let t = depth_of(v);
        let mut r = v;
        if t >= class_depth {
            for _ in class_depth..t {
                r = (r - 1) / b;
            }
        } else {
            for _ in t..class_depth {
                r = r * b + 1;
            }
        }
        class_root.push(r);
        labels.push(r - level_start[class_depth]);
    }

    let noise_draws = normals(&mut rng, n * d);
    let mut features = Vec::with_capacity(n * d);
    for v in 0..n {
        let scale = noise * depth_of(v) as f64 / h as f64;
        let r = class_root[v];
        for j in 0..d {
            features.push(anchors[r * d + j] + scale * noise_draws[v * d + j]);
        }
    }

    let edges: Vec<(usize, usize)> = (1..n).map(|v| ((v - 1) / b, v)).collect();
    let n_classes = level_start[class_depth + 1] - level_start[class_depth];
    let mut split = ClassSplit::default();
    for c in 0..n_classes {
        match c % 3 {
            0 => split.train.push(c),
            1 => split.val.push(c),
            _ => split.test.push(c),
        }
    }
    let features = Tensor::from_vec(&[n, d], features)?;
    let (ds, _) = GraphDataset::new(format!("tree-b{b}-h{h}"), features, &edges, labels, split)?;
    Ok(ds)
}
