//! Graph datasets: storage, validation, adjacency normalization, file
//! formats, a synthetic hierarchy generator and episode sampling.

mod episode;
mod io;
mod synth;

pub use episode::{sample_episode, EpisodeTask};
pub use io::{
    ingest_planetoid, load_dataset, load_dataset_dir, parse_split, write_dataset_dir, LoadStats,
};
pub use synth::{generate_tree_dataset, TreeConfig, MAX_TREE_NODES};

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Largest graph accepted by the dense adjacency normalization.
pub const MAX_DENSE_NODES: usize = 25_000;

/// Which class split an episode draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitKind::Train),
            "val" => Ok(SplitKind::Val),
            "test" => Ok(SplitKind::Test),
            other => Err(Error::Param(format!("unknown split {other:?}"))),
        }
    }
}

/// Disjoint train / validation / test class-id sets.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl ClassSplit {
    pub fn classes(&self, kind: SplitKind) -> &[usize] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Val => &self.val,
            SplitKind::Test => &self.test,
        }
    }

    /// Splits `classes` (taken in ascending order) into consecutive blocks of
    /// the given sizes.
    pub fn contiguous(classes: &[usize], train: usize, val: usize, test: usize) -> Result<Self> {
        let mut sorted = classes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if train + val + test != sorted.len() {
            return Err(Error::Split(format!(
                "{train}+{val}+{test} classes requested, {} available",
                sorted.len()
            )));
        }
        Ok(Self {
            train: sorted[..train].to_vec(),
            val: sorted[train..train + val].to_vec(),
            test: sorted[train + val..].to_vec(),
        })
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (name, set) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &c in set {
                if !seen.insert(c) {
                    return Err(Error::Split(format!("class {c} listed twice (again in {name})")));
                }
            }
        }
        Ok(())
    }
}

/// How ingestion assigns classes to splits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SplitSource {
    Explicit(ClassSplit),
    /// Train / val / test class counts over the ascending class ids.
    Counts(usize, usize, usize),
}

/// An undirected attributed graph with class labels and a class split.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphDataset {
    name: String,
    features: Tensor<f64>,
    edges: Vec<(usize, usize)>,
    labels: Vec<usize>,
    split: ClassSplit,
}

impl GraphDataset {
    /// Validates and assembles a dataset. Edges are stored as `(min, max)`
    /// pairs; self-loops and duplicate undirected edges are dropped and
    /// counted in the returned [`LoadStats`].
    pub fn new(
        name: impl Into<String>,
        features: Tensor<f64>,
        edges: &[(usize, usize)],
        labels: Vec<usize>,
        split: ClassSplit,
    ) -> Result<(Self, LoadStats)> {
        if features.shape().len() != 2 {
            return Err(Error::InvalidShape(format!("features must be a matrix, got {:?}", features.shape())));
        }
        let n = features.rows();
        if labels.len() != n {
            return Err(Error::ShapeMismatch(format!("{} labels for {n} nodes", labels.len())));
        }
        split.validate()?;
        let listed: HashSet<usize> =
            split.train.iter().chain(&split.val).chain(&split.test).copied().collect();
        if let Some(c) = labels.iter().find(|c| !listed.contains(c)) {
            return Err(Error::Split(format!("class {c} is in no split")));
        }

        let mut stats = LoadStats::default();
        let mut seen = HashSet::with_capacity(edges.len());
        let mut kept = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            for id in [a, b] {
                if id >= n {
                    return Err(Error::Range { id, n });
                }
            }
            if a == b {
                stats.self_loops += 1;
                continue;
            }
            let e = (a.min(b), a.max(b));
            if seen.insert(e) {
                kept.push(e);
            } else {
                stats.duplicates += 1;
            }
        }
        let ds = Self { name: name.into(), features, edges: kept, labels, split };
        Ok((ds, stats))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor<f64> {
        &self.features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn split(&self) -> &ClassSplit {
        &self.split
    }

    /// Distinct class ids in ascending order.
    pub fn classes(&self) -> Vec<usize> {
        self.labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Nodes whose class belongs to `kind`, in ascending id order.
    pub fn nodes_in_split(&self, kind: SplitKind) -> Vec<usize> {
        let set: HashSet<usize> = self.split.classes(kind).iter().copied().collect();
        (0..self.n_nodes()).filter(|&i| set.contains(&self.labels[i])).collect()
    }

    /// Nodes of one class in ascending id order.
    pub fn nodes_of_class(&self, class: usize) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| self.labels[i] == class).collect()
    }

    /// Dense symmetric 0/1 adjacency without self-loops, row-major.
    pub fn dense_adjacency(&self) -> Result<Vec<f64>> {
        let n = self.n_nodes();
        if n > MAX_DENSE_NODES {
            return Err(Error::Size(format!(
                "{n} nodes exceeds the dense limit of {MAX_DENSE_NODES}"
            )));
        }
        let mut a = vec![0.0; n * n];
        for &(i, j) in &self.edges {
            a[i * n + j] = 1.0;
            a[j * n + i] = 1.0;
        }
        Ok(a)
    }

    /// Replaces the feature matrix (same node count).
    pub fn with_features(mut self, features: Tensor<f64>) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != self.n_nodes() {
            return Err(Error::ShapeMismatch(format!(
                "features {:?} for {} nodes",
                features.shape(),
                self.n_nodes()
            )));
        }
        self.features = features;
        Ok(self)
    }
}

/// `D̃^{-1/2}(A + I)D̃^{-1/2}` as a dense `n×n` tensor.
pub fn normalize_adjacency<T: Scalar>(dataset: &GraphDataset) -> Result<Tensor<T>> {
    let n = dataset.n_nodes();
    let mut a = dataset.dense_adjacency()?;
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    let deg: Vec<f64> = a.chunks(n).map(|r| r.iter().sum()).collect();
    let data = a
        .iter()
        .enumerate()
        .map(|(k, &v)| if v == 0.0 { T::zero() } else { T::of(v / (deg[k / n] * deg[k % n]).sqrt()) })
        .collect();
    Tensor::from_vec(&[n, n], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy(n: usize, edges: &[(usize, usize)]) -> GraphDataset {
        let f = Tensor::zeros(&[n, 4]).unwrap();
        let split = ClassSplit { train: vec![], val: vec![], test: vec![0] };
        GraphDataset::new("toy", f, edges, vec![0; n], split).unwrap().0
    }

    #[test]
    fn single_isolated_node() {
        let a: Tensor<f64> = normalize_adjacency(&toy(1, &[])).unwrap();
        assert_eq!(a.data(), &[1.0]);
    }

    #[test]
    fn two_nodes_one_edge() {
        let a: Tensor<f64> = normalize_adjacency(&toy(2, &[(0, 1)])).unwrap();
        assert_eq!(a.data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn path_graph_entries() {
        // degrees with self-loops: 2, 3, 2
        let a: Tensor<f64> = normalize_adjacency(&toy(3, &[(0, 1), (1, 2)])).unwrap();
        let r6 = 1.0 / 6f64.sqrt();
        let want = [0.5, r6, 0.0, r6, 1.0 / 3.0, r6, 0.0, r6, 0.5];
        for (x, y) in a.data().iter().zip(want) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn self_loops_and_duplicates_dropped() {
        let f = Tensor::zeros(&[3, 4]).unwrap();
        let split = ClassSplit { train: vec![0], val: vec![], test: vec![] };
        let (ds, stats) =
            GraphDataset::new("t", f, &[(0, 0), (0, 1), (1, 0), (2, 1)], vec![0; 3], split).unwrap();
        assert_eq!(ds.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(stats.self_loops, 1);
        assert_eq!(stats.duplicates, 1);
    }

    #[test]
    fn invalid_datasets_rejected() {
        let f = Tensor::zeros(&[2, 4]).unwrap();
        let split = ClassSplit { train: vec![0], val: vec![], test: vec![] };
        let e = GraphDataset::new("t", f.clone(), &[(0, 5)], vec![0, 0], split.clone());
        assert!(matches!(e, Err(Error::Range { id: 5, n: 2 })));
        let e = GraphDataset::new("t", f.clone(), &[], vec![0, 1], split);
        assert!(matches!(e, Err(Error::Split(_))));
        let dup = ClassSplit { train: vec![0], val: vec![0], test: vec![] };
        assert!(matches!(GraphDataset::new("t", f, &[], vec![0, 0], dup), Err(Error::Split(_))));
    }

    #[test]
    fn contiguous_split() {
        let s = ClassSplit::contiguous(&[6, 0, 1, 2, 3, 4, 5], 3, 2, 2).unwrap();
        assert_eq!(s.train, vec![0, 1, 2]);
        assert_eq!(s.val, vec![3, 4]);
        assert_eq!(s.test, vec![5, 6]);
        assert!(ClassSplit::contiguous(&[0, 1], 1, 1, 1).is_err());
    }
}
