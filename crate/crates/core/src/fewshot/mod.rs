//! Pseudo-labels, prototypes, support augmentation, the episode classifier
//! and benchmark reports.

mod cluster;
mod metrics;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cluster::{
    cluster_prototypes, cluster_pseudo_labels, compute_prototypes, dbscan, k_distances, knee_eps, ClusterAssignment,
    NOISE,
};
pub use metrics::{
    agglomerative_average, bound_diagnostics, davies_bouldin, hierarchy_metrics, silhouette, BoundDiagnostics,
    HierarchyMetrics,
};

use crate::diffusion::{generate_samples, DiffusionModel, PrototypeSource};
use crate::error::{Error, Result};
use crate::geometry::Curvature;
use crate::graph::{sample_episode, EpisodeTask, GraphDataset, SplitKind};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};
use crate::vgae::{embed_all, VgaeModel};

pub const DEFAULT_MIN_PTS: usize = 5;

/// Labelled rows fed to the episode classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Appends `generated[c]` to the support set, tagged with class `c`.
/// Classes are `0..generated.len()`; an empty block adds nothing.
pub fn augment_support(support: &[Vec<f64>], labels: &[usize], generated: &[Vec<Vec<f64>>]) -> Result<LabeledSet> {
    if support.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} rows for {} labels", support.len(), labels.len())));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    if generated.len() != n_classes {
        return Err(Error::Label(format!("{} generated blocks for {n_classes} classes", generated.len())));
    }
    if let Some(c) = (0..n_classes).find(|c| !labels.contains(c)) {
        return Err(Error::Label(format!("class {c} has no support rows")));
    }
    let width = support.first().map_or(0, Vec::len);
    if support.iter().chain(generated.iter().flatten()).any(|r| r.len() != width) {
        return Err(Error::ShapeMismatch("generated rows differ in width from the support set".into()));
    }
    let mut rows = support.to_vec();
    let mut out_labels = labels.to_vec();
    for (c, block) in generated.iter().enumerate() {
        rows.extend(block.iter().cloned());
        out_labels.extend(std::iter::repeat_n(c, block.len()));
    }
    Ok(LabeledSet { rows, labels: out_labels })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { epochs: 500, lr: 0.1, l2: 1e-3, seed: 0 }
    }
}

/// Multinomial logistic regression on standardized features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    /// `[latent, N]`.
    pub weights: Tensor<f64>,
    /// `[N]`.
    pub bias: Tensor<f64>,
    pub classes: Vec<usize>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl LinearClassifier {
    fn standardize(&self, rows: &[Vec<f64>]) -> Result<Tensor<f64>> {
        let d = self.mean.len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::ShapeMismatch(format!("row of width {} for a {d}-wide classifier", r.len())));
            }
            data.extend(r.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s));
        }
        Tensor::from_vec(&[rows.len(), d], data)
    }

    pub fn logits(&self, rows: &[Vec<f64>]) -> Result<Tensor<f64>> {
        let x = self.standardize(rows)?;
        let n = self.classes.len();
        let xw = crate::tensor::matmul(&x, &self.weights)?;
        let data = xw.data().chunks(n).flat_map(|r| r.iter().zip(self.bias.data()).map(|(a, b)| a + b)).collect();
        Tensor::from_vec(&[rows.len(), n], data)
    }

    /// Class index (into `classes`) of the largest logit; ties go to the lower index.
    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<usize>> {
        let logits = self.logits(rows)?;
        let n = self.classes.len();
        Ok(logits
            .data()
            .chunks(n)
            .map(|r| {
                let mut best = 0;
                for j in 1..n {
                    if r[j] > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}

/// Full-batch gradient descent on mean cross-entropy with an L2 penalty
/// `l2/2 · ‖W‖²` on the weights. The penalty step is applied in closed form
/// (`W ← (W − lr·∇) / (1 + lr·l2)`), which keeps large penalties stable.
/// Weights start at zero, so the result does not depend on `cfg.seed`.
pub fn train_classifier(set: &LabeledSet, n_classes: usize, cfg: &ClassifierConfig) -> Result<LinearClassifier> {
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) || !(cfg.l2 >= 0.0 && cfg.l2.is_finite()) || cfg.epochs == 0 {
        return Err(Error::Param(format!("classifier lr {} l2 {} epochs {}", cfg.lr, cfg.l2, cfg.epochs)));
    }
    if n_classes < 2 {
        return Err(Error::Param("classifier needs at least two classes".into()));
    }
    if set.is_empty() || set.rows.len() != set.labels.len() {
        return Err(Error::ShapeMismatch("empty or mislabelled training set".into()));
    }
    if let Some(&bad) = set.labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Label(format!("label {bad} with {n_classes} classes")));
    }
    if let Some(c) = (0..n_classes).find(|c| !set.labels.contains(c)) {
        return Err(Error::EmptyClass(format!("class {c} has no training rows")));
    }
    let d = set.rows[0].len();
    let m = set.len() as f64;
    let mut mean = vec![0.0; d];
    for r in &set.rows {
        if r.len() != d {
            return Err(Error::ShapeMismatch("ragged training rows".into()));
        }
        mean.iter_mut().zip(r).for_each(|(a, v)| *a += v);
    }
    mean.iter_mut().for_each(|a| *a /= m);
    let mut scale = vec![0.0; d];
    for r in &set.rows {
        scale.iter_mut().zip(r).zip(&mean).for_each(|((s, v), mu)| *s += (v - mu) * (v - mu));
    }
    scale.iter_mut().for_each(|s| {
        let sd = (*s / m).sqrt();
        *s = if sd > 1e-12 { sd } else { 1.0 };
    });

    let mut clf = LinearClassifier {
        weights: Tensor::zeros(&[d, n_classes])?,
        bias: Tensor::zeros(&[n_classes])?,
        classes: (0..n_classes).collect(),
        mean,
        scale,
    };
    let x = clf.standardize(&set.rows)?;
    let shrink = 1.0 / (1.0 + cfg.lr * cfg.l2);
    for _ in 0..cfg.epochs {
        let mut tape = Tape::<f64>::new();
        let xv = tape.leaf(&x);
        let w = tape.param(&clf.weights);
        let b = tape.param(&clf.bias);
        let xw = tape.matmul(xv, w)?;
        let logits = tape.add(xw, b)?;
        let loss = tape.cross_entropy(logits, &set.labels)?;
        tape.backward(loss)?;
        let gw = tape.grad(w).ok_or(Error::MissingGradient(w.index()))?.to_vec();
        let gb = tape.grad(b).ok_or(Error::MissingGradient(b.index()))?.to_vec();
        for (p, g) in clf.weights.data_mut().iter_mut().zip(&gw) {
            *p = (*p - cfg.lr * g) * shrink;
        }
        for (p, g) in clf.bias.data_mut().iter_mut().zip(&gb) {
            *p -= cfg.lr * g;
        }
    }
    Ok(clf)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Generated embeddings per class; 0 disables augmentation.
    pub d_gen: usize,
    pub classifier: ClassifierConfig,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig { d_gen: 50, classifier: ClassifierConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeOutcome {
    pub accuracy: f64,
    pub diagnostics: Option<BoundDiagnostics>,
}

/// One episode on precomputed embeddings (`z_all` row `v` embeds node `v`).
///
/// Generation for class `c` uses seed `derive_seed(seed, c)`. With
/// `d_gen = 0` the diffusion model is never touched. Diagnostics are
/// measured on the ball of `curvature`, or in latent space when `None`, and
/// are absent when prototypes coincide.
pub fn evaluate_episode_embeddings<T: Scalar>(
    z_all: &Tensor<T>,
    diffusion: Option<&DiffusionModel<T>>,
    task: &EpisodeTask,
    cfg: &EpisodeConfig,
    curvature: Option<Curvature>,
    seed: u64,
) -> Result<EpisodeOutcome> {
    let way = task.class_ids.len();
    let support = z_all.select_rows(&task.support_nodes())?;
    let support_rows = support.to_rows_f64();
    let support_labels: Vec<usize> = task.support.iter().map(|&(_, c)| c).collect();
    let label_ids: Vec<i64> = support_labels.iter().map(|&c| c as i64).collect();
    let class_idx: Vec<i64> = (0..way as i64).collect();
    let prototypes = compute_prototypes::<T>(&support_rows, &label_ids, &class_idx, PrototypeSource::Labeled)?;

    let mut generated = vec![Vec::new(); way];
    if cfg.d_gen > 0 {
        let dm = diffusion.ok_or(Error::ModelNotTrained)?;
        for (c, block) in generated.iter_mut().enumerate() {
            let z = generate_samples(dm, &prototypes.single(c)?, cfg.d_gen, derive_seed(seed, c as u64))?;
            *block = z.to_rows_f64();
        }
    }
    let set = augment_support(&support_rows, &support_labels, &generated)?;
    let clf = train_classifier(&set, way, &cfg.classifier)?;

    let query_rows = z_all.select_rows(&task.query_nodes())?.to_rows_f64();
    let predicted = clf.predict(&query_rows)?;
    let correct = predicted.iter().zip(&task.query).filter(|(p, q)| **p == q.1).count();
    let accuracy = correct as f64 / task.query.len() as f64;

    let proto_rows = prototypes.prototypes.to_rows_f64();
    let diagnostics = match bound_diagnostics(&support_rows, &support_labels, &proto_rows, curvature) {
        Ok(d) => Some(d),
        Err(Error::DiagnosticUnavailable(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EpisodeOutcome { accuracy, diagnostics })
}

/// One episode from the trained encoder: embeds every node, then defers to
/// [`evaluate_episode_embeddings`].
pub fn evaluate_episode<T: Scalar>(
    vgae: &VgaeModel<T>,
    diffusion: Option<&DiffusionModel<T>>,
    dataset: &GraphDataset,
    task: &EpisodeTask,
    cfg: &EpisodeConfig,
    seed: u64,
) -> Result<EpisodeOutcome> {
    let z = embed_all(vgae, dataset)?;
    evaluate_episode_embeddings(&z, diffusion, task, cfg, vgae.curvature, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub way: usize,
    pub shot: usize,
    pub query: usize,
    pub episodes: usize,
    pub master_seed: u64,
    pub split: SplitKind,
    pub episode: EpisodeConfig,
}

impl BenchmarkConfig {
    /// Seed of episode `i`; its task is sampled with `derive_seed(s, 0)` and
    /// evaluated with `derive_seed(s, 1)`.
    pub fn episode_seed(&self, i: usize) -> u64 {
        derive_seed(self.master_seed, i as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub index: usize,
    pub seed: u64,
    pub classes: Vec<usize>,
    pub accuracy: f64,
    pub diagnostics: Option<BoundDiagnostics>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub episodes_measured: usize,
    pub mean_sigma2: Option<f64>,
    pub mean_delta: Option<f64>,
    pub mean_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub config: BTreeMap<String, String>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over episodes.
    pub std_over_episodes: f64,
    pub diagnostics: DiagnosticsSummary,
    pub episodes: Vec<EpisodeRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

impl EpisodeReport {
    pub fn from_records(config: BTreeMap<String, String>, episodes: Vec<EpisodeRecord>) -> Self {
        let accuracies: Vec<f64> = episodes.iter().map(|e| e.accuracy).collect();
        let (mean, std) = mean_std(&accuracies);
        let measured: Vec<&BoundDiagnostics> = episodes.iter().filter_map(|e| e.diagnostics.as_ref()).collect();
        let avg = |f: fn(&BoundDiagnostics) -> f64| {
            (!measured.is_empty()).then(|| measured.iter().map(|d| f(d)).sum::<f64>() / measured.len() as f64)
        };
        let diagnostics = DiagnosticsSummary {
            episodes_measured: measured.len(),
            mean_sigma2: avg(|d| d.sigma2),
            mean_delta: avg(|d| d.delta),
            mean_ratio: avg(|d| d.ratio),
        };
        EpisodeReport { config, accuracies, mean, std_over_episodes: std, diagnostics, episodes, wall_clock_seconds: None }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Arithmetic mean and population standard deviation; `(0, 0)` when empty.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Episodes over precomputed embeddings, fanned out over `threads` workers.
/// The report does not depend on `threads`.
pub fn run_benchmark_embeddings<T: Scalar>(
    z_all: &Tensor<T>,
    diffusion: Option<&DiffusionModel<T>>,
    dataset: &GraphDataset,
    curvature: Option<Curvature>,
    cfg: &BenchmarkConfig,
    threads: usize,
    fingerprint: BTreeMap<String, String>,
) -> Result<EpisodeReport> {
    if cfg.episodes == 0 {
        return Err(Error::Param("episodes must be positive".into()));
    }
    if z_all.rows() != dataset.n_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "{} embeddings for {} nodes",
            z_all.rows(),
            dataset.n_nodes()
        )));
    }
    let run = |i: usize| -> Result<EpisodeRecord> {
        let seed = cfg.episode_seed(i);
        let task = sample_episode(dataset, cfg.split, cfg.way, cfg.shot, cfg.query, derive_seed(seed, 0))?;
        let out = evaluate_episode_embeddings(z_all, diffusion, &task, &cfg.episode, curvature, derive_seed(seed, 1))?;
        Ok(EpisodeRecord {
            index: i,
            seed,
            classes: task.class_ids.clone(),
            accuracy: out.accuracy,
            diagnostics: out.diagnostics,
        })
    };
    let records: Vec<EpisodeRecord> = if threads <= 1 {
        (0..cfg.episodes).map(run).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Param(format!("thread pool: {e}")))?;
        pool.install(|| (0..cfg.episodes).into_par_iter().map(run).collect::<Result<_>>())?
    };
    Ok(EpisodeReport::from_records(fingerprint, records))
}

/// [`run_benchmark_embeddings`] on the encoder's latent means.
pub fn run_benchmark<T: Scalar>(
    vgae: &VgaeModel<T>,
    diffusion: Option<&DiffusionModel<T>>,
    dataset: &GraphDataset,
    cfg: &BenchmarkConfig,
    threads: usize,
    fingerprint: BTreeMap<String, String>,
) -> Result<EpisodeReport> {
    let z = embed_all(vgae, dataset)?;
    run_benchmark_embeddings(&z, diffusion, dataset, vgae.curvature, cfg, threads, fingerprint)
}
