use std::collections::HashSet;

use impress_core::graph::*;
use impress_core::tensor::Tensor;
use impress_core::Error;
use proptest::prelude::*;

fn dataset(n: usize, edges: &[(usize, usize)], labels: Vec<usize>, split: ClassSplit) -> GraphDataset {
    let features = Tensor::zeros(&[n, 2]).unwrap();
    GraphDataset::new("prop", features, edges, labels, split).unwrap().0
}

fn graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1usize..40).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 0..120)))
}

/// Six classes of 6..16 nodes each, split 2/2/2 in a random order.
fn labelled() -> impl Strategy<Value = (Vec<usize>, ClassSplit)> {
    (prop::collection::vec(6usize..16, 6), Just((0..6).collect::<Vec<usize>>()).prop_shuffle()).prop_map(
        |(sizes, order)| {
            let labels = sizes.iter().enumerate().flat_map(|(c, &s)| std::iter::repeat_n(c, s)).collect();
            let split = ClassSplit { train: order[..2].to_vec(), val: order[2..4].to_vec(), test: order[4..].to_vec() };
            (labels, split)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn normalized_adjacency_is_symmetric((n, edges) in graph()) {
        let ds = dataset(n, &edges, vec![0; n], ClassSplit { train: vec![0], val: vec![], test: vec![] });
        let a = normalize_adjacency::<f64>(&ds).unwrap();
        for i in 0..n {
            prop_assert!(a.at(i, i) > 0.0);
            for j in 0..n {
                prop_assert_eq!(a.at(i, j), a.at(j, i));
            }
        }
    }

    #[test]
    fn episodes_are_disjoint_and_in_split(
        (labels, split) in labelled(),
        way in 2usize..3,
        shot in 1usize..4,
        query in 1usize..4,
        seed in any::<u64>(),
    ) {
        let n = labels.len();
        let ds = dataset(n, &[], labels.clone(), split.clone());
        for kind in [SplitKind::Train, SplitKind::Val, SplitKind::Test] {
            let task = sample_episode(&ds, kind, way, shot, query, seed).unwrap();
            let allowed = split.classes(kind);
            prop_assert!(task.class_ids.iter().all(|c| allowed.contains(c)));
            prop_assert_eq!(task.support.len(), way * shot);
            prop_assert_eq!(task.query.len(), way * query);
            let support: HashSet<usize> = task.support_nodes().into_iter().collect();
            prop_assert_eq!(support.len(), way * shot);
            for &(v, ci) in task.support.iter().chain(&task.query) {
                prop_assert_eq!(labels[v], task.class_ids[ci]);
            }
            prop_assert!(task.query.iter().all(|(v, _)| !support.contains(v)));
        }
    }

    #[test]
    fn overlapping_splits_are_rejected((labels, split) in labelled(), from in 0usize..3, to in 0usize..3) {
        prop_assume!(from != to);
        let mut parts = [split.train.clone(), split.val.clone(), split.test.clone()];
        let moved = parts[from][0];
        parts[to].push(moved);
        let [train, val, test] = parts;
        let bad = ClassSplit { train, val, test };
        let features = Tensor::zeros(&[labels.len(), 2]).unwrap();
        let r = GraphDataset::new("overlap", features, &[], labels, bad);
        prop_assert!(matches!(r, Err(Error::Split(_))));
    }
}

#[test]
fn tree_splits_are_disjoint() {
    let cfg = TreeConfig { class_depth: 2, ..TreeConfig::new(3, 4, 8, 0.1, 2) };
    let ds = generate_tree_dataset(&cfg).unwrap();
    let s = ds.split();
    let sets: Vec<HashSet<usize>> = [&s.train, &s.val, &s.test].iter().map(|v| v.iter().copied().collect()).collect();
    assert!(sets[0].is_disjoint(&sets[1]) && sets[0].is_disjoint(&sets[2]) && sets[1].is_disjoint(&sets[2]));
    assert_eq!(sets.iter().map(HashSet::len).sum::<usize>(), ds.classes().len());
}
