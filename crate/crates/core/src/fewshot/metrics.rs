use serde::{Deserialize, Serialize};

use super::cluster::euclidean;
use crate::error::{Error, Result};
use crate::geometry::{self, BallPoint, Curvature};

/// Flat clustering into `k` groups by average-linkage agglomeration.
///
/// Merges come from the nearest-neighbor chain and are applied in ascending
/// height order until `k` groups remain. Cluster ids are assigned by the
/// smallest member index.
pub fn agglomerative_average(points: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if k < 1 || k > n {
        return Err(Error::Param(format!("cannot cut {n} points into {k} clusters")));
    }
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = euclidean(&points[i], &points[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut remaining = n;
    let mut merges: Vec<(usize, usize, f64)> = Vec::with_capacity(n.saturating_sub(1));
    let mut chain: Vec<usize> = Vec::new();

    while remaining > 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).expect("an active cluster"));
        }
        let a = *chain.last().unwrap();
        let prev = if chain.len() >= 2 { Some(chain[chain.len() - 2]) } else { None };
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for j in 0..n {
            if j == a || !active[j] {
                continue;
            }
            let d = dist[a * n + j];
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        if let Some(p) = prev {
            if dist[a * n + p] <= best_d {
                best = p;
            }
        }
        if Some(best) != prev {
            chain.push(best);
            continue;
        }
        chain.pop();
        chain.pop();
        let (keep, drop) = (a.min(best), a.max(best));
        let h = dist[a * n + best];
        merges.push((keep, drop, h));
        let (sk, sd) = (size[keep] as f64, size[drop] as f64);
        for j in 0..n {
            if active[j] && j != keep && j != drop {
                let d = (sk * dist[keep * n + j] + sd * dist[drop * n + j]) / (sk + sd);
                dist[keep * n + j] = d;
                dist[j * n + keep] = d;
            }
        }
        size[keep] += size[drop];
        active[drop] = false;
        remaining -= 1;
    }

    merges.sort_by(|x, y| x.2.total_cmp(&y.2));
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(a, b, _) in merges.iter().take(n - k) {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        parent[ra.max(rb)] = ra.min(rb);
    }
    let mut ids = vec![usize::MAX; n];
    let mut labels = vec![0usize; n];
    let mut next = 0;
    for i in 0..n {
        let r = find(&mut parent, i);
        if ids[r] == usize::MAX {
            ids[r] = next;
            next += 1;
        }
        labels[i] = ids[r];
    }
    Ok(labels)
}

fn cluster_count(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}

/// Mean silhouette; singletons score 0, as do points with a = b = 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let n = points.len();
    let k = cluster_count(labels);
    if labels.len() != n || k < 2 {
        return Err(Error::Param("silhouette needs at least two labelled clusters".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += euclidean(&points[i], &points[j]);
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 && b.is_finite() {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// Davies-Bouldin index. Returns `(score, degenerate)`; coincident
/// centroids make the index undefined and yield `(0, true)`.
pub fn davies_bouldin(points: &[Vec<f64>], labels: &[usize]) -> Result<(f64, bool)> {
    let n = points.len();
    let k = cluster_count(labels);
    if labels.len() != n || k < 2 {
        return Err(Error::Param("davies-bouldin needs at least two labelled clusters".into()));
    }
    let d = points[0].len();
    let mut centroids = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (c, v) in centroids[l].iter_mut().zip(p) {
            *c += v;
        }
    }
    for (c, &m) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= m.max(1) as f64);
    }
    let mut scatter = vec![0.0; k];
    for (p, &l) in points.iter().zip(labels) {
        scatter[l] += euclidean(p, &centroids[l]);
    }
    for (s, &m) in scatter.iter_mut().zip(&counts) {
        *s /= m.max(1) as f64;
    }
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = 0.0f64;
        for j in 0..k {
            if i == j {
                continue;
            }
            let sep = euclidean(&centroids[i], &centroids[j]);
            if sep == 0.0 {
                return Ok((0.0, true));
            }
            worst = worst.max((scatter[i] + scatter[j]) / sep);
        }
        total += worst;
    }
    Ok((total / k as f64, false))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HierarchyMetrics {
    pub silhouette: f64,
    pub davies_bouldin: f64,
    pub degenerate: bool,
    pub k_clusters: usize,
}

/// Average-linkage clustering into `k` groups scored by SC and DB, all in
/// Euclidean latent space.
pub fn hierarchy_metrics(points: &[Vec<f64>], k: usize) -> Result<HierarchyMetrics> {
    if k < 2 || points.len() <= k {
        return Err(Error::Param(format!("need n > k >= 2, got n = {}, k = {k}", points.len())));
    }
    let labels = agglomerative_average(points, k)?;
    if cluster_count(&labels) < 2 {
        return Ok(HierarchyMetrics { silhouette: 0.0, davies_bouldin: 0.0, degenerate: true, k_clusters: k });
    }
    let silhouette = silhouette(points, &labels)?;
    let (davies_bouldin, degenerate) = davies_bouldin(points, &labels)?;
    Ok(HierarchyMetrics { silhouette, davies_bouldin, degenerate, k_clusters: k })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundDiagnostics {
    pub sigma2: f64,
    pub delta: f64,
    pub ratio: f64,
}

/// Spread of support points around their prototypes against prototype
/// separation, measured after mapping latent vectors onto the ball.
/// `curvature = None` measures Euclidean distances in latent space.
pub fn bound_diagnostics(
    support: &[Vec<f64>],
    labels: &[usize],
    prototypes: &[Vec<f64>],
    curvature: Option<Curvature>,
) -> Result<BoundDiagnostics> {
    if prototypes.len() < 2 {
        return Err(Error::DiagnosticUnavailable("fewer than two classes".into()));
    }
    if support.len() != labels.len() || support.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} points for {} labels", support.len(), labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= prototypes.len()) {
        return Err(Error::Label(format!("label {bad} without a prototype")));
    }
    let distance: Box<dyn Fn(&[f64], &[f64]) -> Result<f64>> = match curvature {
        None => Box::new(|a: &[f64], b: &[f64]| Ok(euclidean(a, b))),
        Some(c) => Box::new(move |a: &[f64], b: &[f64]| {
            let pa: BallPoint<f64> = geometry::exp_map0(a, c)?;
            let pb: BallPoint<f64> = geometry::exp_map0(b, c)?;
            geometry::hyperbolic_distance(&pa, &pb)
        }),
    };
    let mut sigma2 = 0.0;
    for (z, &l) in support.iter().zip(labels) {
        let d = distance(z, &prototypes[l])?;
        sigma2 += d * d;
    }
    sigma2 /= support.len() as f64;
    let mut delta = f64::INFINITY;
    for i in 0..prototypes.len() {
        for j in i + 1..prototypes.len() {
            delta = delta.min(distance(&prototypes[i], &prototypes[j])?);
        }
    }
    if delta == 0.0 {
        return Err(Error::DiagnosticUnavailable("coincident prototypes".into()));
    }
    Ok(BoundDiagnostics { sigma2, delta, ratio: sigma2 / (delta * delta) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prototype_separation_example() {
        let c = Curvature::new(1.0).unwrap();
        // Latent vectors whose images are the origin and (0.5, 0).
        let v = 0.5f64.atanh();
        let protos = vec![vec![0.0, 0.0], vec![v, 0.0]];
        let b = bound_diagnostics(&[vec![0.0, 0.0], vec![v, 0.0]], &[0, 1], &protos, Some(c)).unwrap();
        assert!((b.delta - 1.0986122886681098).abs() < 1e-9, "{}", b.delta);
        assert_eq!(b.sigma2, 0.0);
        assert_eq!(b.ratio, 0.0);
    }

    #[test]
    fn single_class_is_unavailable() {
        let r = bound_diagnostics(&[vec![0.0]], &[0], &[vec![0.0]], None);
        assert!(matches!(r, Err(Error::DiagnosticUnavailable(_))));
    }

    #[test]
    fn identical_points_are_degenerate() {
        let pts = vec![vec![0.3, 0.3]; 8];
        let m = hierarchy_metrics(&pts, 2).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.davies_bouldin, 0.0);
    }

    #[test]
    fn cut_two_pairs() {
        let pts = vec![vec![0.0], vec![10.0], vec![0.1], vec![10.2]];
        assert_eq!(agglomerative_average(&pts, 2).unwrap(), vec![0, 1, 0, 1]);
        assert_eq!(agglomerative_average(&pts, 4).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(agglomerative_average(&pts, 1).unwrap(), vec![0; 4]);
    }
}
