use std::collections::{BTreeSet, VecDeque};

use serde::Serialize;

use crate::diffusion::{PrototypeSet, PrototypeSource};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Noise label used by [`dbscan`].
pub const NOISE: i64 = -1;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterAssignment {
    pub labels: Vec<i64>,
    pub eps: f64,
    pub min_pts: usize,
}

impl ClusterAssignment {
    pub fn n_clusters(&self) -> usize {
        self.labels.iter().filter(|&&l| l >= 0).collect::<BTreeSet<_>>().len()
    }

    pub fn n_noise(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_rows(points: &[Vec<f64>]) -> Result<usize> {
    let d = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::ShapeMismatch("ragged point set".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("point set".into()));
    }
    Ok(d)
}

/// DBSCAN with Euclidean distance.
///
/// A point's neighborhood is every point within `eps`, itself included; a
/// point is core when its neighborhood holds at least `min_pts` points.
/// Points are visited in index order and each new core point seeds the next
/// cluster id, so a border point joins the first cluster that reaches it.
pub fn dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Result<ClusterAssignment> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Param(format!("eps must be positive, got {eps}")));
    }
    if min_pts == 0 {
        return Err(Error::Param("min_pts must be at least 1".into()));
    }
    if points.len() < min_pts {
        return Err(Error::Param(format!("{} points for min_pts {min_pts}", points.len())));
    }
    check_rows(points)?;
    let n = points.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| euclidean(&points[i], &points[j]) <= eps).collect())
        .collect();

    let mut labels: Vec<Option<i64>> = vec![None; n];
    let mut next = 0i64;
    for i in 0..n {
        if labels[i].is_some() {
            continue;
        }
        if neighbors[i].len() < min_pts {
            labels[i] = Some(NOISE);
            continue;
        }
        let c = next;
        next += 1;
        labels[i] = Some(c);
        let mut queue: VecDeque<usize> = neighbors[i].iter().copied().collect();
        while let Some(q) = queue.pop_front() {
            match labels[q] {
                Some(NOISE) => labels[q] = Some(c),
                None => {
                    labels[q] = Some(c);
                    if neighbors[q].len() >= min_pts {
                        queue.extend(neighbors[q].iter().copied());
                    }
                }
                Some(_) => {}
            }
        }
    }
    Ok(ClusterAssignment {
        labels: labels.into_iter().map(|l| l.unwrap_or(NOISE)).collect(),
        eps,
        min_pts,
    })
}

/// Sorted distances from each point to its `k`-th nearest point, the point
/// itself counting as the first.
pub fn k_distances(points: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    check_rows(points)?;
    if k == 0 || k > points.len() {
        return Err(Error::Param(format!("k = {k} for {} points", points.len())));
    }
    let mut out: Vec<f64> = points
        .iter()
        .map(|p| {
            let mut d: Vec<f64> = points.iter().map(|q| euclidean(p, q)).collect();
            d.sort_by(f64::total_cmp);
            d[k - 1]
        })
        .collect();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// `eps` at the knee of the sorted k-distance curve: the point of maximum
/// second difference (first such point on ties). Falls back to the smallest
/// positive k-distance when the knee sits at zero.
pub fn knee_eps(points: &[Vec<f64>], k: usize) -> Result<f64> {
    let d = k_distances(points, k)?;
    let eps = if d.len() < 3 {
        d[d.len() - 1]
    } else {
        let mut best = 1;
        let mut best_val = f64::NEG_INFINITY;
        for i in 1..d.len() - 1 {
            let v = d[i + 1] - 2.0 * d[i] + d[i - 1];
            if v > best_val {
                best_val = v;
                best = i;
            }
        }
        d[best]
    };
    if eps > 0.0 {
        return Ok(eps);
    }
    Ok(d.iter().copied().find(|&v| v > 0.0).unwrap_or(1e-12))
}

/// DBSCAN pseudo-labels with `eps` from [`knee_eps`] unless overridden.
pub fn cluster_pseudo_labels(points: &[Vec<f64>], eps: Option<f64>, min_pts: usize) -> Result<ClusterAssignment> {
    let eps = match eps {
        Some(e) => e,
        None => knee_eps(points, min_pts)?,
    };
    dbscan(points, eps, min_pts)
}

/// Mean embedding of each class in `classes` (sorted ascending first);
/// `labels[i]` is the class of row `i`.
pub fn compute_prototypes<T: Scalar>(
    z: &[Vec<f64>],
    labels: &[i64],
    classes: &[i64],
    source: PrototypeSource,
) -> Result<PrototypeSet<T>> {
    let d = check_rows(z)?;
    if labels.len() != z.len() {
        return Err(Error::ShapeMismatch(format!("{} labels for {} rows", labels.len(), z.len())));
    }
    let classes: Vec<i64> = classes.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.is_empty() {
        return Err(Error::EmptyClass("no classes".into()));
    }
    let mut rows = Vec::with_capacity(classes.len());
    for &c in &classes {
        let members: Vec<&Vec<f64>> = z.iter().zip(labels).filter(|(_, &l)| l == c).map(|(r, _)| r).collect();
        if members.is_empty() {
            return Err(Error::EmptyClass(format!("class {c} has no members")));
        }
        let mut mean = vec![0.0; d];
        for r in &members {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        let count = members.len() as f64;
        rows.push(mean.into_iter().map(|v| T::of(v / count)).collect::<Vec<T>>());
    }
    PrototypeSet::new(Tensor::from_rows(&rows)?, classes, source)
}

/// Prototypes of every non-noise cluster.
pub fn cluster_prototypes<T: Scalar>(z: &[Vec<f64>], assignment: &ClusterAssignment) -> Result<PrototypeSet<T>> {
    let classes: Vec<i64> = assignment.labels.iter().copied().filter(|&l| l >= 0).collect();
    if classes.is_empty() {
        return Err(Error::EmptyClass(format!(
            "clustering with eps {} and min_pts {} found no clusters; set an explicit eps",
            assignment.eps, assignment.min_pts
        )));
    }
    compute_prototypes(z, &assignment.labels, &classes, PrototypeSource::Pseudo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_points_form_one_cluster() {
        let pts = vec![vec![1.0, 1.0]; 6];
        let a = cluster_pseudo_labels(&pts, None, 3).unwrap();
        assert_eq!(a.labels, vec![0; 6]);
    }

    #[test]
    fn far_outlier_is_noise() {
        let mut pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 0.1, 0.0]).collect();
        pts.push(vec![50.0, 50.0]);
        let a = dbscan(&pts, 0.5, 3).unwrap();
        assert_eq!(a.labels, vec![0, 0, 0, 0, 0, NOISE]);
        assert_eq!(a.n_noise(), 1);
    }

    #[test]
    fn border_point_joins_first_cluster() {
        // 1.0 reaches one core point on each side but is not core itself.
        let pts: Vec<Vec<f64>> = [0.0, 0.1, 0.2, 0.3, 1.0, 1.7, 1.8, 1.9, 2.0].iter().map(|&v| vec![v]).collect();
        let a = dbscan(&pts, 0.75, 4).unwrap();
        assert_eq!(a.labels, vec![0, 0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn invalid_parameters() {
        let pts = vec![vec![0.0]; 4];
        assert!(matches!(dbscan(&pts, 0.0, 2), Err(Error::Param(_))));
        assert!(matches!(dbscan(&pts, -1.0, 2), Err(Error::Param(_))));
        assert!(matches!(dbscan(&pts, 1.0, 5), Err(Error::Param(_))));
    }

    #[test]
    fn knee_on_a_step_curve() {
        // Ten tight points and two far ones: the k-distance curve jumps at the end.
        let mut pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 0.01]).collect();
        pts.push(vec![5.0]);
        pts.push(vec![9.0]);
        let eps = knee_eps(&pts, 2).unwrap();
        assert!((eps - 0.01).abs() < 1e-12, "{eps}");
    }

    #[test]
    fn prototype_examples() {
        let z = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![4.0, 4.0]];
        let p = compute_prototypes::<f64>(&z, &[0, 0, 7], &[7, 0], PrototypeSource::Labeled).unwrap();
        assert_eq!(p.ids, vec![0, 7]);
        assert_eq!(p.prototypes.row(0), &[0.5, 0.5]);
        assert_eq!(p.prototypes.row(1), &[4.0, 4.0]);
        assert!(matches!(
            compute_prototypes::<f64>(&z, &[0, 0, 7], &[3], PrototypeSource::Labeled),
            Err(Error::EmptyClass(_))
        ));
    }
}
