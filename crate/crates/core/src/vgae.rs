//! Hyperbolic variational graph auto-encoder.
//!
//! Features are lifted onto the ball with `exp_o([0, x])`, mapped back to the
//! origin tangent space, propagated through GCN layers `ReLU(Â h W)`,
//! projected onto the ball again and read out as a diagonal Gaussian latent:
//!
//! ```text
//! Z′ = ReLU(Â log_o(X^ℍ) Θ′)    μ = Â Z′ Θ_μ    log σ² = clamp(Â Z′ Θ_σ, −10, 10)
//! ```
//!
//! Edges are decoded as `sigmoid(z_iᵀ z_j)`. Training minimizes
//! `(1/n)·Σ_ij wBCE(Z Zᵀ, A + I) + (1/n)·KL(𝒩(μ, σ²) ‖ 𝒩(0, I))`, with
//! positives weighted by `#negatives / #positives`.
//!
//! A curvature of `None` selects the Euclidean variant, in which every map
//! between ball and tangent space is the identity.

use crate::error::{Error, Result};
use crate::geometry::Curvature;
use crate::graph::{normalize_adjacency, GraphDataset};
use crate::rng::{derive_seed, normals, seeded};
use crate::scalar::Scalar;
use crate::tensor::{AdamState, Tape, Tensor, Var};

/// Bounds applied to the log-variance head.
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct VgaeConfig {
    /// Curvature magnitude; `0` selects the Euclidean variant.
    pub curvature: f64,
    pub hidden: usize,
    pub latent: usize,
    pub layers: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for VgaeConfig {
    fn default() -> Self {
        Self { curvature: 1.0, hidden: 256, latent: 64, layers: 2, epochs: 200, lr: 0.001, seed: 0 }
    }
}

impl VgaeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.curvature >= 0.0 && self.curvature.is_finite()) {
            return Err(Error::InvalidCurvature(self.curvature));
        }
        if self.hidden == 0 || self.latent == 0 || self.layers == 0 {
            return Err(Error::Param("hidden, latent and layers must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Param("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Param(format!("learning rate {}", self.lr)));
        }
        Ok(())
    }

    pub fn curvature(&self) -> Result<Option<Curvature>> {
        if self.curvature == 0.0 {
            Ok(None)
        } else {
            Curvature::new(self.curvature).map(Some)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VgaeModel<T> {
    pub curvature: Option<Curvature>,
    pub gcn_weights: Vec<Tensor<T>>,
    pub theta_prime: Tensor<T>,
    pub theta_mu: Tensor<T>,
    pub theta_sigma: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentDistribution<T> {
    pub mu: Tensor<T>,
    pub log_var: Tensor<T>,
}

impl<T: Scalar> VgaeModel<T> {
    /// Glorot-initialized model for `feature_dim`-dimensional node features.
    pub fn new(feature_dim: usize, cfg: &VgaeConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = |i: u64| derive_seed(cfg.seed, i);
        let mut gcn_weights = Vec::with_capacity(cfg.layers);
        let mut fan_in = feature_dim + 1;
        for t in 0..cfg.layers {
            gcn_weights.push(Tensor::glorot(fan_in, cfg.hidden, seed(t as u64))?);
            fan_in = cfg.hidden;
        }
        let base = cfg.layers as u64;
        Ok(Self {
            curvature: cfg.curvature()?,
            gcn_weights,
            theta_prime: Tensor::glorot(cfg.hidden, cfg.hidden, seed(base))?,
            theta_mu: Tensor::glorot(cfg.hidden, cfg.latent, seed(base + 1))?,
            theta_sigma: Tensor::glorot(cfg.hidden, cfg.latent, seed(base + 2))?,
        })
    }

    /// Assembles a model from explicit tensors, checking that shapes chain.
    pub fn from_parts(
        curvature: Option<Curvature>,
        gcn_weights: Vec<Tensor<T>>,
        theta_prime: Tensor<T>,
        theta_mu: Tensor<T>,
        theta_sigma: Tensor<T>,
    ) -> Result<Self> {
        let m = Self { curvature, gcn_weights, theta_prime, theta_mu, theta_sigma };
        m.check_shapes()?;
        Ok(m)
    }

    fn check_shapes(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::ShapeMismatch(format!("vgae {what}")));
        if self.gcn_weights.is_empty() {
            return bad("needs at least one GCN layer");
        }
        for w in self.params() {
            if w.shape().len() != 2 {
                return bad("weights must be matrices");
            }
        }
        let hidden = self.gcn_weights[0].cols();
        for w in &self.gcn_weights[1..] {
            if w.shape() != [hidden, hidden] {
                return bad("GCN weights do not chain");
            }
        }
        if self.theta_prime.shape() != [hidden, hidden]
            || self.theta_mu.rows() != hidden
            || self.theta_sigma.shape() != self.theta_mu.shape()
        {
            return bad("latent heads do not match the hidden size");
        }
        Ok(())
    }

    /// Lifted input width `d + 1`.
    pub fn input_dim(&self) -> usize {
        self.gcn_weights[0].rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.gcn_weights[0].cols()
    }

    pub fn latent_dim(&self) -> usize {
        self.theta_mu.cols()
    }

    /// Parameters in a fixed order: GCN weights, Θ′, Θ_μ, Θ_σ.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut p: Vec<&Tensor<T>> = self.gcn_weights.iter().collect();
        p.extend([&self.theta_prime, &self.theta_mu, &self.theta_sigma]);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p: Vec<&mut Tensor<T>> = self.gcn_weights.iter_mut().collect();
        p.extend([&mut self.theta_prime, &mut self.theta_mu, &mut self.theta_sigma]);
        p
    }

    fn curvature_value(&self) -> Option<f64> {
        self.curvature.map(Curvature::magnitude)
    }
}

fn check_matrix<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<()> {
    if t.shape().len() != 2 {
        return Err(Error::ShapeMismatch(format!("{what} must be a matrix, got {:?}", t.shape())));
    }
    Ok(())
}

fn to_ball<T: Scalar>(tape: &mut Tape<T>, v: Var, c: Option<f64>) -> Result<Var> {
    match c {
        Some(c) => tape.expmap0_rows(v, c),
        None => Ok(v),
    }
}

fn to_tangent<T: Scalar>(tape: &mut Tape<T>, v: Var, c: Option<f64>) -> Result<Var> {
    match c {
        Some(c) => tape.logmap0_rows(v, c),
        None => Ok(v),
    }
}

/// Prepends a zero coordinate to every row and maps it onto the ball.
pub fn lift_features<T: Scalar>(x: &Tensor<T>, curvature: Option<Curvature>) -> Result<Tensor<T>> {
    check_matrix(x, "features")?;
    let (n, d) = (x.rows(), x.cols());
    let mut data = Vec::with_capacity(n * (d + 1));
    for i in 0..n {
        data.push(T::zero());
        data.extend_from_slice(x.row(i));
    }
    let padded = Tensor::from_vec(&[n, d + 1], data)?;
    let mut tape = Tape::new();
    let v = tape.leaf(&padded);
    let out = to_ball(&mut tape, v, curvature.map(Curvature::magnitude))?;
    Ok(tape.to_tensor(out))
}

fn check_adjacency<T: Scalar>(a_hat: &Tensor<T>, n: usize) -> Result<()> {
    if a_hat.shape() != [n, n] {
        return Err(Error::ShapeMismatch(format!("adjacency {:?} for {n} rows", a_hat.shape())));
    }
    Ok(())
}

/// Records `ReLU(Â · h · W)`.
fn gcn<T: Scalar>(tape: &mut Tape<T>, a: Var, h: Var, w: Var) -> Result<Var> {
    let hw = tape.matmul(h, w)?;
    let ahw = tape.matmul(a, hw)?;
    tape.relu(ahw)
}

/// Forward pass from lifted features to `(μ, log σ²)`; `params` follow
/// [`VgaeModel::params`].
fn record_forward<T: Scalar>(
    tape: &mut Tape<T>,
    params: &[Var],
    curvature: Option<f64>,
    a: Var,
    x0: Var,
) -> Result<(Var, Var)> {
    let layers = params.len() - 3;
    let mut h = to_tangent(tape, x0, curvature)?;
    for &w in &params[..layers] {
        h = gcn(tape, a, h, w)?;
    }
    let ball = to_ball(tape, h, curvature)?;
    let t = to_tangent(tape, ball, curvature)?;
    let z1 = gcn(tape, a, t, params[layers])?;
    let zm = tape.matmul(z1, params[layers + 1])?;
    let mu = tape.matmul(a, zm)?;
    let zs = tape.matmul(z1, params[layers + 2])?;
    let zs = tape.matmul(a, zs)?;
    let log_var = tape.clamp(zs, LOG_VAR_MIN, LOG_VAR_MAX)?;
    Ok((mu, log_var))
}

/// Runs the GCN stack: returns the final tangent embedding and its image on
/// the ball.
pub fn encode<T: Scalar>(
    model: &VgaeModel<T>,
    a_hat: &Tensor<T>,
    x0: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_matrix(x0, "lifted features")?;
    check_adjacency(a_hat, x0.rows())?;
    if x0.cols() != model.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "lifted width {} vs model input {}",
            x0.cols(),
            model.input_dim()
        )));
    }
    let c = model.curvature_value();
    let mut tape = Tape::new();
    let a = tape.leaf(a_hat);
    let mut h = tape.leaf(x0);
    h = to_tangent(&mut tape, h, c)?;
    for w in &model.gcn_weights {
        let w = tape.leaf(w);
        h = gcn(&mut tape, a, h, w)?;
    }
    let ball = to_ball(&mut tape, h, c)?;
    Ok((tape.to_tensor(h), tape.to_tensor(ball)))
}

/// Gaussian latent parameters from the encoder's ball embedding.
pub fn latent_params<T: Scalar>(
    model: &VgaeModel<T>,
    a_hat: &Tensor<T>,
    xh: &Tensor<T>,
) -> Result<LatentDistribution<T>> {
    check_matrix(xh, "ball embedding")?;
    check_adjacency(a_hat, xh.rows())?;
    if xh.cols() != model.hidden_dim() {
        return Err(Error::ShapeMismatch(format!(
            "embedding width {} vs hidden {}",
            xh.cols(),
            model.hidden_dim()
        )));
    }
    let c = model.curvature_value();
    let mut tape = Tape::new();
    let a = tape.leaf(a_hat);
    let x = tape.leaf(xh);
    let t = to_tangent(&mut tape, x, c)?;
    let tp = tape.leaf(&model.theta_prime);
    let z1 = gcn(&mut tape, a, t, tp)?;
    let head = |tape: &mut Tape<T>, w: &Tensor<T>| -> Result<Var> {
        let w = tape.leaf(w);
        let zw = tape.matmul(z1, w)?;
        tape.matmul(a, zw)
    };
    let mu = head(&mut tape, &model.theta_mu)?;
    let s = head(&mut tape, &model.theta_sigma)?;
    let log_var = tape.clamp(s, LOG_VAR_MIN, LOG_VAR_MAX)?;
    Ok(LatentDistribution { mu: tape.to_tensor(mu), log_var: tape.to_tensor(log_var) })
}

/// `μ + exp(½ log σ²) ⊙ ε` for a given noise matrix.
pub fn sample_latent_with<T: Scalar>(dist: &LatentDistribution<T>, eps: &Tensor<T>) -> Result<Tensor<T>> {
    if eps.shape() != dist.mu.shape() || dist.log_var.shape() != dist.mu.shape() {
        return Err(Error::ShapeMismatch("latent noise shape".into()));
    }
    let half = T::of(0.5);
    let data = dist
        .mu
        .data()
        .iter()
        .zip(dist.log_var.data())
        .zip(eps.data())
        .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
        .collect();
    Tensor::from_vec(dist.mu.shape(), data)
}

/// Reparameterized draw with `ε ~ 𝒩(0, I)` from `seed`.
pub fn sample_latent<T: Scalar>(dist: &LatentDistribution<T>, seed: u64) -> Result<Tensor<T>> {
    let eps = standard_normal_tensor(dist.mu.shape(), seed)?;
    sample_latent_with(dist, &eps)
}

pub(crate) fn standard_normal_tensor<T: Scalar>(shape: &[usize], seed: u64) -> Result<Tensor<T>> {
    let len = shape.iter().product();
    let draws = normals(&mut seeded(seed), len);
    Tensor::from_vec(shape, draws.into_iter().map(T::of).collect())
}

/// Edge probabilities `sigmoid(Z Zᵀ)`.
pub fn decode_edges<T: Scalar>(z: &Tensor<T>) -> Result<Tensor<T>> {
    check_matrix(z, "latent")?;
    let mut tape = Tape::new();
    let v = tape.leaf(z);
    let logits = tape.matmul_nt(v, v)?;
    let p = tape.sigmoid(logits)?;
    Ok(tape.to_tensor(p))
}

/// Reconstruction targets `A + I` and the positive-class weight.
pub fn reconstruction_target<T: Scalar>(adjacency: &[f64], n: usize) -> Result<(Vec<T>, f64)> {
    if adjacency.len() != n * n {
        return Err(Error::ShapeMismatch(format!("adjacency of {} entries for {n} nodes", adjacency.len())));
    }
    let mut target: Vec<T> = adjacency.iter().map(|&a| T::of(a)).collect();
    for i in 0..n {
        target[i * n + i] = T::one();
    }
    let pos = target.iter().filter(|&&v| v > T::zero()).count() as f64;
    let neg = (n * n) as f64 - pos;
    Ok((target, (neg / pos).max(f64::MIN_POSITIVE)))
}

/// KL divergence `½ Σ (σ² + μ² − 1 − log σ²)`, unscaled.
pub fn kl_divergence<T: Scalar>(dist: &LatentDistribution<T>) -> f64 {
    dist.mu
        .data()
        .iter()
        .zip(dist.log_var.data())
        .map(|(&m, &lv)| {
            let (m, lv) = (m.as_f64(), lv.as_f64());
            0.5 * (lv.exp() + m * m - 1.0 - lv)
        })
        .sum()
}

/// Loss from edge probabilities `p`, the 0/1 adjacency `A` (without
/// self-loops; the diagonal target is set to one) and the latent
/// distribution. Both terms are divided by the node count.
pub fn elbo_loss<T: Scalar>(
    p: &Tensor<T>,
    adjacency: &Tensor<T>,
    dist: &LatentDistribution<T>,
) -> Result<f64> {
    let n = p.rows();
    if p.shape() != [n, n] || adjacency.shape() != p.shape() || dist.mu.rows() != n {
        return Err(Error::ShapeMismatch("elbo inputs".into()));
    }
    let (target, w) = reconstruction_target::<f64>(&adjacency.to_f64_vec(), n)?;
    let tiny = f64::MIN_POSITIVE;
    let recon: f64 = p
        .data()
        .iter()
        .zip(&target)
        .map(|(&p, &y)| {
            let p = p.as_f64();
            let pos = if y > 0.0 { -w * y * p.max(tiny).ln() } else { 0.0 };
            let neg = if y < 1.0 { -(1.0 - y) * (1.0 - p).max(tiny).ln() } else { 0.0 };
            pos + neg
        })
        .sum();
    Ok((recon + kl_divergence(dist)) / n as f64)
}

/// Precomputed training inputs for one graph.
#[derive(Clone, Debug)]
pub struct VgaeInputs<T> {
    pub a_hat: Tensor<T>,
    pub lifted: Tensor<T>,
    pub target: Vec<T>,
    pub pos_weight: f64,
}

impl<T: Scalar> VgaeInputs<T> {
    pub fn new(dataset: &GraphDataset, curvature: Option<Curvature>) -> Result<Self> {
        let a_hat = normalize_adjacency(dataset)?;
        let lifted = lift_features(&dataset.features().cast::<T>(), curvature)?;
        let (target, pos_weight) = reconstruction_target(&dataset.dense_adjacency()?, dataset.n_nodes())?;
        Ok(Self { a_hat, lifted, target, pos_weight })
    }

    pub fn n_nodes(&self) -> usize {
        self.a_hat.rows()
    }
}

/// Records the training loss for `params` (ordered as
/// [`VgaeModel::params`]) with reparameterization noise `eps`.
pub fn record_elbo<T: Scalar>(
    tape: &mut Tape<T>,
    params: &[Var],
    curvature: Option<Curvature>,
    inputs: &VgaeInputs<T>,
    eps: &Tensor<T>,
) -> Result<Var> {
    if params.len() < 4 {
        return Err(Error::Param("vgae needs at least one GCN layer and three heads".into()));
    }
    let n = inputs.n_nodes();
    let a = tape.leaf(&inputs.a_hat);
    let x0 = tape.leaf(&inputs.lifted);
    let (mu, log_var) = record_forward(tape, params, curvature.map(Curvature::magnitude), a, x0)?;

    let half = tape.scale(log_var, 0.5)?;
    let std = tape.exp(half)?;
    let e = tape.leaf(eps);
    let noise = tape.mul(std, e)?;
    let z = tape.add(mu, noise)?;
    let logits = tape.matmul_nt(z, z)?;
    let recon = tape.bce_with_logits_sum(logits, &inputs.target, inputs.pos_weight)?;

    // KL = ½ Σ (exp(lv) + μ² − lv) − ½·n·latent
    let var = tape.exp(log_var)?;
    let mu2 = tape.mul(mu, mu)?;
    let s = tape.add(var, mu2)?;
    let s = tape.sub(s, log_var)?;
    let s = tape.sum(s)?;
    let count = tape.shape(mu).iter().product::<usize>() as f64;
    let offset = tape.constant(&[1], vec![T::of(count)])?;
    let kl = tape.sub(s, offset)?;
    let kl = tape.scale(kl, 0.5)?;

    let total = tape.add(recon, kl)?;
    tape.scale(total, 1.0 / n as f64)
}

/// Per-epoch losses of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainTrace {
    pub losses: Vec<f64>,
}

/// Full-graph, label-free training with Adam.
pub fn train_vgae<T: Scalar>(dataset: &GraphDataset, cfg: &VgaeConfig) -> Result<(VgaeModel<T>, TrainTrace)> {
    cfg.validate()?;
    let mut model = VgaeModel::<T>::new(dataset.feature_dim(), cfg)?;
    let inputs = VgaeInputs::<T>::new(dataset, model.curvature)?;
    let n = dataset.n_nodes();
    let latent = model.latent_dim();
    let mut adam = AdamState::new(&model.params(), cfg.lr)?;
    let mut losses = Vec::with_capacity(cfg.epochs);
    let noise_master = derive_seed(cfg.seed, u64::MAX);
    for epoch in 0..cfg.epochs {
        let eps = standard_normal_tensor(&[n, latent], derive_seed(noise_master, epoch as u64))?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = model.params().into_iter().map(|p| tape.param(p)).collect();
        let diverged = |_| Error::TrainingDiverged { epoch };
        let loss = record_elbo(&mut tape, &vars, model.curvature, &inputs, &eps).map_err(|e| match e {
            Error::NonFinite(_) => diverged(()),
            other => other,
        })?;
        let value = tape.scalar(loss).as_f64();
        if !value.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        losses.push(value);
        tape.backward(loss)?;
        for (p, v) in model.params_mut().into_iter().zip(&vars) {
            if let Some(g) = tape.grad(*v) {
                p.accumulate_grad(g)?;
            } else {
                p.accumulate_grad(&vec![T::zero(); p.len()])?;
            }
        }
        adam.step(&mut model.params_mut()).map_err(|e| match e {
            Error::NonFinite(_) => Error::TrainingDiverged { epoch },
            other => other,
        })?;
        if model.params().iter().any(|p| p.data().iter().any(|v| !v.is_finite())) {
            return Err(Error::TrainingDiverged { epoch });
        }
    }
    Ok((model, TrainTrace { losses }))
}

/// Latent means for every node.
pub fn embed_all<T: Scalar>(model: &VgaeModel<T>, dataset: &GraphDataset) -> Result<Tensor<T>> {
    if dataset.feature_dim() + 1 != model.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "dataset has {} features, model expects {}",
            dataset.feature_dim(),
            model.input_dim() - 1
        )));
    }
    let a_hat = normalize_adjacency::<T>(dataset)?;
    let x0 = lift_features(&dataset.features().cast::<T>(), model.curvature)?;
    let (_, xh) = encode(model, &a_hat, &x0)?;
    Ok(latent_params(model, &a_hat, &xh)?.mu)
}

/// Latent means for the requested nodes.
pub fn embed_nodes<T: Scalar>(
    model: &VgaeModel<T>,
    dataset: &GraphDataset,
    node_ids: &[usize],
) -> Result<Tensor<T>> {
    let n = dataset.n_nodes();
    if let Some(&id) = node_ids.iter().find(|&&id| id >= n) {
        return Err(Error::Range { id, n });
    }
    embed_all(model, dataset)?.select_rows(node_ids)
}

/// Area under the ROC curve of `z_iᵀ z_j` separating edges from non-edges
/// over all unordered pairs `i < j`. Ties count one half.
pub fn reconstruction_auc<T: Scalar>(z: &Tensor<T>, dataset: &GraphDataset) -> Result<f64> {
    let n = dataset.n_nodes();
    if z.rows() != n {
        return Err(Error::ShapeMismatch(format!("{} embeddings for {n} nodes", z.rows())));
    }
    let adj = dataset.dense_adjacency()?;
    let mut scored = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = z.row(i).iter().zip(z.row(j)).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
            scored.push((s, adj[i * n + j] > 0.0));
        }
    }
    auc(&mut scored)
}

fn auc(scored: &mut [(f64, bool)]) -> Result<f64> {
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let pos = scored.iter().filter(|s| s.1).count() as f64;
    let neg = scored.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::Param("AUC needs both edges and non-edges".into()));
    }
    // Mann–Whitney U with average ranks over ties.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        while j < scored.len() && scored[j].0 == scored[i].0 {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        rank_sum += avg * scored[i..j].iter().filter(|s| s.1).count() as f64;
        i = j;
    }
    Ok((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg))
}
