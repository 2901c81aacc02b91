use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::seeded;

use super::{GraphDataset, SplitKind};

/// One N-way M-shot task. Class indices in `support` and `query` point into
/// `class_ids`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EpisodeTask {
    pub way: usize,
    pub shot: usize,
    pub query_per_class: usize,
    pub class_ids: Vec<usize>,
    pub support: Vec<(usize, usize)>,
    pub query: Vec<(usize, usize)>,
}

impl EpisodeTask {
    pub fn support_nodes(&self) -> Vec<usize> {
        self.support.iter().map(|&(v, _)| v).collect()
    }

    pub fn query_nodes(&self) -> Vec<usize> {
        self.query.iter().map(|&(v, _)| v).collect()
    }
}

/// Samples `way` classes of `split` without replacement, then `shot + query`
/// distinct nodes from each.
pub fn sample_episode(
    dataset: &GraphDataset,
    split: SplitKind,
    way: usize,
    shot: usize,
    query: usize,
    seed: u64,
) -> Result<EpisodeTask> {
    if way < 2 || shot < 1 || query < 1 {
        return Err(Error::Param(format!("episode needs N >= 2, M >= 1, Q >= 1 (got {way}, {shot}, {query})")));
    }
    let mut pool = dataset.split().classes(split).to_vec();
    pool.sort_unstable();
    if pool.len() < way {
        return Err(Error::EpisodeInfeasible(format!(
            "{way}-way episode from {} {split:?} classes",
            pool.len()
        )));
    }
    let mut rng = seeded(seed);
    let (chosen, _) = pool.partial_shuffle(&mut rng, way);
    let class_ids = chosen.to_vec();

    let mut support = Vec::with_capacity(way * shot);
    let mut query_set = Vec::with_capacity(way * query);
    for (ci, &c) in class_ids.iter().enumerate() {
        let mut nodes = dataset.nodes_of_class(c);
        if nodes.len() < shot + query {
            return Err(Error::EpisodeInfeasible(format!(
                "class {c} has {} nodes, needs {}",
                nodes.len(),
                shot + query
            )));
        }
        let (picked, _) = nodes.partial_shuffle(&mut rng, shot + query);
        support.extend(picked[..shot].iter().map(|&v| (v, ci)));
        query_set.extend(picked[shot..].iter().map(|&v| (v, ci)));
    }
    Ok(EpisodeTask { way, shot, query_per_class: query, class_ids, support, query: query_set })
}
