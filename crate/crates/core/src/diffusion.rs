//! Prototype-conditioned denoising diffusion over latent embeddings.
//!
//! The forward process is `Z_k = √ᾱ_k Z_0 + √(1 − ᾱ_k) ε` under a linear β
//! schedule. The denoiser predicts `Ẑ_0` from `(Z_k, k, 𝒫)` with three
//! residual blocks, each
//!
//! ```text
//! h ← h + ReLU((h + τ(k)) W + b)
//! h ← h + softmax((h W_Q)(𝒫 W_K)ᵀ / √d) (𝒫 W_V) W_O
//! ```
//!
//! followed by a linear read-out. `τ(k)` is a learned projection of a
//! sinusoidal step embedding. Sampling is ancestral: `Ẑ_0` is turned into the
//! Gaussian posterior mean of `Z_{k−1}` given `Z_k`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, normals, seeded};
use crate::scalar::Scalar;
use crate::tensor::{AdamState, Tape, Tensor, Var};

pub const DENOISER_BLOCKS: usize = 3;

/// Linear β schedule with cumulative products. Step indices are 1-based;
/// `alpha_bar(0) = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    beta_start: f64,
    beta_end: f64,
}

/// `K` linearly spaced β values from `beta_start` to `beta_end`.
pub fn build_schedule(k: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if k == 0 {
        return Err(Error::Schedule("K must be at least 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Schedule(format!("need 0 < {beta_start} <= {beta_end} < 1")));
    }
    let betas: Vec<f64> = (0..k)
        .map(|i| {
            if k == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (k - 1) as f64
            }
        })
        .collect();
    let mut alpha_bars = Vec::with_capacity(k + 1);
    alpha_bars.push(1.0);
    for &b in &betas {
        let prev = *alpha_bars.last().expect("non-empty");
        alpha_bars.push(prev * (1.0 - b));
    }
    Ok(NoiseSchedule { betas, alpha_bars, beta_start, beta_end })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta_range(&self) -> (f64, f64) {
        (self.beta_start, self.beta_end)
    }

    fn check(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.steps() {
            return Err(Error::Step { step: k, max: self.steps() });
        }
        Ok(())
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        1.0 - self.betas[k - 1]
    }

    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bars[k]
    }

    /// `σ_k² = β_k (1 − ᾱ_{k−1}) / (1 − ᾱ_k)`.
    pub fn posterior_variance(&self, k: usize) -> f64 {
        self.beta(k) * (1.0 - self.alpha_bar(k - 1)) / (1.0 - self.alpha_bar(k))
    }

    /// Coefficients `(a, b)` of the posterior mean `a·Ẑ_0 + b·Z_k`.
    pub fn posterior_coefficients(&self, k: usize) -> (f64, f64) {
        let denom = 1.0 - self.alpha_bar(k);
        (
            self.alpha_bar(k - 1).sqrt() * self.beta(k) / denom,
            self.alpha(k).sqrt() * (1.0 - self.alpha_bar(k - 1)) / denom,
        )
    }
}

/// `Z_k` for explicit noise `ε`.
pub fn forward_diffuse_with<T: Scalar>(
    z0: &Tensor<T>,
    k: usize,
    schedule: &NoiseSchedule,
    eps: &Tensor<T>,
) -> Result<Tensor<T>> {
    schedule.check(k)?;
    if eps.shape() != z0.shape() {
        return Err(Error::ShapeMismatch(format!("noise {:?} for {:?}", eps.shape(), z0.shape())));
    }
    let a = T::of(schedule.alpha_bar(k).sqrt());
    let b = T::of((1.0 - schedule.alpha_bar(k)).sqrt());
    let data = z0.data().iter().zip(eps.data()).map(|(&z, &e)| a * z + b * e).collect();
    Tensor::from_vec(z0.shape(), data)
}

/// Noises `z0` to step `k` with `ε ~ 𝒩(0, I)` from `seed`; returns `(Z_k, ε)`.
pub fn forward_diffuse<T: Scalar>(
    z0: &Tensor<T>,
    k: usize,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    schedule.check(k)?;
    let draws = normals(&mut seeded(seed), z0.len());
    let eps = Tensor::from_vec(z0.shape(), draws.into_iter().map(T::of).collect())?;
    let zk = forward_diffuse_with(z0, k, schedule, &eps)?;
    Ok((zk, eps))
}

/// Where the conditioning prototypes came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrototypeSource {
    Pseudo,
    Labeled,
}

/// Prototypes (one per row) with their cluster or class ids.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet<T> {
    pub prototypes: Tensor<T>,
    pub ids: Vec<i64>,
    pub source: PrototypeSource,
}

impl<T: Scalar> PrototypeSet<T> {
    pub fn new(prototypes: Tensor<T>, ids: Vec<i64>, source: PrototypeSource) -> Result<Self> {
        if prototypes.shape().len() != 2 || prototypes.rows() != ids.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} ids for prototypes {:?}",
                ids.len(),
                prototypes.shape()
            )));
        }
        Ok(Self { prototypes, ids, source })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Single-row set holding prototype `i`.
    pub fn single(&self, i: usize) -> Result<Self> {
        Ok(Self {
            prototypes: self.prototypes.select_rows(&[i])?,
            ids: vec![self.ids[i]],
            source: self.source,
        })
    }
}

/// How denoiser rows attend to prototypes.
#[derive(Clone, Copy, Debug)]
pub enum Conditioning<'a, T> {
    /// Every row attends over all rows of the set (`p×latent`).
    Shared(&'a Tensor<T>),
    /// Row `i` attends to row `i` of the matrix alone (`m×latent`).
    PerRow(&'a Tensor<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Attention width; `0` uses the latent dimension.
    pub attn_dim: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self { steps: 1000, beta_start: 1e-4, beta_end: 0.02, epochs: 100, batch: 64, lr: 0.001, seed: 0, attn_dim: 0 }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        build_schedule(self.steps, self.beta_start, self.beta_end)?;
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Param("diffusion epochs and batch must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Param(format!("learning rate {}", self.lr)));
        }
        Ok(())
    }
}

/// One denoiser block.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserBlock<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub w_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub w_o: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionModel<T> {
    pub schedule: NoiseSchedule,
    pub time_weight: Tensor<T>,
    pub time_bias: Tensor<T>,
    pub blocks: Vec<DenoiserBlock<T>>,
    pub out_weight: Tensor<T>,
    pub out_bias: Tensor<T>,
    pub trained: bool,
}

impl<T: Scalar> DiffusionModel<T> {
    /// Freshly initialized, untrained model.
    pub fn new(latent: usize, cfg: &DiffusionConfig) -> Result<Self> {
        cfg.validate()?;
        if latent == 0 {
            return Err(Error::Param("latent dimension must be positive".into()));
        }
        let d = if cfg.attn_dim == 0 { latent } else { cfg.attn_dim };
        let mut next = 0u64;
        let mut glorot = |r: usize, c: usize| {
            next += 1;
            Tensor::glorot(r, c, derive_seed(cfg.seed, next))
        };
        let zeros = |c: usize| Tensor::zeros(&[1, c]).map(Tensor::with_grad);
        let time_weight = glorot(latent, latent)?;
        let mut blocks = Vec::with_capacity(DENOISER_BLOCKS);
        for _ in 0..DENOISER_BLOCKS {
            blocks.push(DenoiserBlock {
                weight: glorot(latent, latent)?,
                bias: zeros(latent)?,
                w_q: glorot(latent, d)?,
                w_k: glorot(latent, d)?,
                w_v: glorot(latent, d)?,
                w_o: glorot(d, latent)?,
            });
        }
        Ok(Self {
            schedule: build_schedule(cfg.steps, cfg.beta_start, cfg.beta_end)?,
            time_weight,
            time_bias: zeros(latent)?,
            blocks,
            out_weight: glorot(latent, latent)?,
            out_bias: zeros(latent)?,
            trained: false,
        })
    }

    /// Assembles a model from explicit tensors, checking every shape against
    /// the latent width of `time_weight`.
    pub fn from_parts(
        schedule: NoiseSchedule,
        time_weight: Tensor<T>,
        time_bias: Tensor<T>,
        blocks: Vec<DenoiserBlock<T>>,
        out_weight: Tensor<T>,
        out_bias: Tensor<T>,
        trained: bool,
    ) -> Result<Self> {
        let l = time_weight.shape().first().copied().unwrap_or(0);
        let bad = |what: &str| Err(Error::ShapeMismatch(format!("denoiser {what}")));
        if blocks.len() != DENOISER_BLOCKS {
            return bad("block count");
        }
        let row = [1, l];
        if time_weight.shape() != [l, l] || time_bias.shape() != row || out_weight.shape() != [l, l] || out_bias.shape() != row {
            return bad("time or read-out shapes");
        }
        let d = blocks[0].w_q.shape().get(1).copied().unwrap_or(0);
        for b in &blocks {
            if b.weight.shape() != [l, l]
                || b.bias.shape() != row
                || b.w_q.shape() != [l, d]
                || b.w_k.shape() != [l, d]
                || b.w_v.shape() != [l, d]
                || b.w_o.shape() != [d, l]
            {
                return bad("block shapes");
            }
        }
        Ok(Self { schedule, time_weight, time_bias, blocks, out_weight, out_bias, trained })
    }

    pub fn latent_dim(&self) -> usize {
        self.time_weight.rows()
    }

    pub fn attn_dim(&self) -> usize {
        self.blocks[0].w_q.cols()
    }

    /// Parameters in a fixed order: time projection, blocks, read-out.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut p = vec![&self.time_weight, &self.time_bias];
        for b in &self.blocks {
            p.extend([&b.weight, &b.bias, &b.w_q, &b.w_k, &b.w_v, &b.w_o]);
        }
        p.extend([&self.out_weight, &self.out_bias]);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = vec![&mut self.time_weight, &mut self.time_bias];
        for b in &mut self.blocks {
            p.extend([&mut b.weight, &mut b.bias, &mut b.w_q, &mut b.w_k, &mut b.w_v, &mut b.w_o]);
        }
        p.extend([&mut self.out_weight, &mut self.out_bias]);
        p
    }

    /// Softmax attention weights of `block` for queries `h` against a shared
    /// prototype set.
    pub fn attention_weights(&self, block: usize, h: &Tensor<T>, prototypes: &Tensor<T>) -> Result<Tensor<T>> {
        let b = self.blocks.get(block).ok_or_else(|| Error::Param(format!("block {block}")))?;
        let mut tape = Tape::new();
        let hv = tape.leaf(h);
        let pv = tape.leaf(prototypes);
        let (wq, wk) = (tape.leaf(&b.w_q), tape.leaf(&b.w_k));
        let q = tape.matmul(hv, wq)?;
        let k = tape.matmul(pv, wk)?;
        let s = tape.matmul_nt(q, k)?;
        let s = tape.scale(s, 1.0 / (self.attn_dim() as f64).sqrt())?;
        let w = tape.softmax_rows(s)?;
        Ok(tape.to_tensor(w))
    }
}

/// Sinusoidal embedding of each step: `sin(k ω_i)` then `cos(k ω_i)` with
/// `ω_i = 10000^{−i/half}`; an odd trailing column stays zero.
pub fn step_embedding<T: Scalar>(steps: &[usize], dim: usize) -> Result<Tensor<T>> {
    let half = dim / 2;
    let mut data = vec![T::zero(); steps.len() * dim];
    for (row, &k) in data.chunks_mut(dim).zip(steps) {
        for i in 0..half {
            let w = (-(10000f64.ln()) * i as f64 / half.max(1) as f64).exp();
            row[i] = T::of((k as f64 * w).sin());
            row[half + i] = T::of((k as f64 * w).cos());
        }
    }
    Tensor::from_vec(&[steps.len(), dim], data)
}

/// Records the denoiser on `tape`. `params` follow
/// [`DiffusionModel::params`]; `steps` has one entry or one per row.
pub fn record_denoiser<T: Scalar>(
    tape: &mut Tape<T>,
    params: &[Var],
    zk: Var,
    steps: &[usize],
    cond: Conditioning<'_, T>,
) -> Result<Var> {
    if params.len() != 4 + 6 * DENOISER_BLOCKS {
        return Err(Error::Param(format!("denoiser expects {} tensors", 4 + 6 * DENOISER_BLOCKS)));
    }
    let (m, latent) = match tape.shape(zk) {
        &[m, l] => (m, l),
        s => return Err(Error::ShapeMismatch(format!("Z_k must be a matrix, got {s:?}"))),
    };
    if tape.shape(params[0]) != [latent, latent] {
        return Err(Error::ShapeMismatch(format!(
            "latent width {latent} vs model {:?}",
            tape.shape(params[0])
        )));
    }
    if steps.len() != 1 && steps.len() != m {
        return Err(Error::ShapeMismatch(format!("{} steps for {m} rows", steps.len())));
    }
    let (p, per_row) = match cond {
        Conditioning::Shared(p) => (p, false),
        Conditioning::PerRow(p) => (p, true),
    };
    if p.shape().len() != 2 || p.cols() != latent || (per_row && p.rows() != m) {
        return Err(Error::ShapeMismatch(format!("conditioning {:?} for {m}×{latent}", p.shape())));
    }
    let pv = tape.leaf(p);

    let emb = step_embedding::<T>(steps, latent)?;
    let emb = tape.leaf(&emb);
    let temb = tape.matmul(emb, params[0])?;
    let temb = tape.add(temb, params[1])?;

    let mut h = zk;
    for blk in params[2..2 + 6 * DENOISER_BLOCKS].chunks(6) {
        let (w, b, wq, wk, wv, wo) = (blk[0], blk[1], blk[2], blk[3], blk[4], blk[5]);
        let d = tape.shape(wq)[1] as f64;
        let x = tape.add(h, temb)?;
        let x = tape.matmul(x, w)?;
        let x = tape.add(x, b)?;
        let x = tape.relu(x)?;
        h = tape.add(h, x)?;

        let q = tape.matmul(h, wq)?;
        let k = tape.matmul(pv, wk)?;
        let v = tape.matmul(pv, wv)?;
        let s = if per_row {
            let qk = tape.mul(q, k)?;
            let s = tape.row_sum(qk)?;
            let s = tape.scale(s, 1.0 / d.sqrt())?;
            let a = tape.softmax_rows(s)?;
            tape.mul(a, v)?
        } else {
            let s = tape.matmul_nt(q, k)?;
            let s = tape.scale(s, 1.0 / d.sqrt())?;
            let a = tape.softmax_rows(s)?;
            tape.matmul(a, v)?
        };
        let o = tape.matmul(s, wo)?;
        h = tape.add(h, o)?;
    }
    let n = params.len();
    let out = tape.matmul(h, params[n - 2])?;
    tape.add(out, params[n - 1])
}

/// Predicts `Ẑ_0` for `Z_k` at step `k` (shared by all rows).
pub fn denoise_forward<T: Scalar>(
    model: &DiffusionModel<T>,
    zk: &Tensor<T>,
    k: usize,
    cond: &PrototypeSet<T>,
) -> Result<Tensor<T>> {
    model.schedule.check(k)?;
    if cond.is_empty() {
        return Err(Error::Param("empty prototype set".into()));
    }
    predict(model, zk, &[k], Conditioning::Shared(&cond.prototypes))
}

fn predict<T: Scalar>(
    model: &DiffusionModel<T>,
    zk: &Tensor<T>,
    steps: &[usize],
    cond: Conditioning<'_, T>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let params: Vec<Var> = model.params().into_iter().map(|p| tape.leaf(p)).collect();
    let z = tape.leaf(zk);
    let out = record_denoiser(&mut tape, &params, z, steps, cond)?;
    Ok(tape.to_tensor(out))
}

/// Per-row steps `k ~ U{1..K}`, noise and the noised batch.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisedBatch<T> {
    pub steps: Vec<usize>,
    pub eps: Tensor<T>,
    pub zk: Tensor<T>,
}

pub fn noise_batch<T: Scalar>(z0: &Tensor<T>, schedule: &NoiseSchedule, seed: u64) -> Result<NoisedBatch<T>> {
    let (m, l) = (z0.rows(), z0.cols());
    let mut rng = seeded(seed);
    let steps: Vec<usize> = (0..m).map(|_| rng.random_range(1..=schedule.steps())).collect();
    let eps: Vec<T> = normals(&mut rng, m * l).into_iter().map(T::of).collect();
    let mut zk = Vec::with_capacity(m * l);
    for (i, &k) in steps.iter().enumerate() {
        let a = schedule.alpha_bar(k).sqrt();
        let b = (1.0 - schedule.alpha_bar(k)).sqrt();
        for j in 0..l {
            zk.push(T::of(a) * z0.at(i, j) + T::of(b) * eps[i * l + j]);
        }
    }
    Ok(NoisedBatch {
        steps,
        eps: Tensor::from_vec(&[m, l], eps)?,
        zk: Tensor::from_vec(&[m, l], zk)?,
    })
}

/// `(1/m) Σ_i ‖Ẑ_0,i − Z_0,i‖²` with the prediction supplied by `predictor`,
/// which receives `Z_k` and the per-row steps.
pub fn diffusion_loss_with<T, F>(z0: &Tensor<T>, schedule: &NoiseSchedule, seed: u64, predictor: F) -> Result<f64>
where
    T: Scalar,
    F: FnOnce(&Tensor<T>, &[usize]) -> Result<Tensor<T>>,
{
    let batch = noise_batch(z0, schedule, seed)?;
    let pred = predictor(&batch.zk, &batch.steps)?;
    if pred.shape() != z0.shape() {
        return Err(Error::ShapeMismatch(format!("prediction {:?} for {:?}", pred.shape(), z0.shape())));
    }
    let sq: f64 = pred.data().iter().zip(z0.data()).map(|(&a, &b)| (a - b).as_f64().powi(2)).sum();
    Ok(sq / z0.rows() as f64)
}

/// Denoising loss of `model`; row `i` is conditioned on row `i` of `cond`.
pub fn diffusion_loss<T: Scalar>(
    model: &DiffusionModel<T>,
    z0: &Tensor<T>,
    cond: &Tensor<T>,
    seed: u64,
) -> Result<f64> {
    diffusion_loss_with(z0, &model.schedule, seed, |zk, steps| {
        predict(model, zk, steps, Conditioning::PerRow(cond))
    })
}

/// Records the denoising loss for a prepared batch.
pub fn record_diffusion_loss<T: Scalar>(
    tape: &mut Tape<T>,
    params: &[Var],
    z0: &Tensor<T>,
    cond: Conditioning<'_, T>,
    batch: &NoisedBatch<T>,
) -> Result<Var> {
    let zk = tape.leaf(&batch.zk);
    let pred = record_denoiser(tape, params, zk, &batch.steps, cond)?;
    let target = tape.leaf(z0);
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq)?;
    tape.scale(total, 1.0 / z0.rows() as f64)
}

/// Per-epoch mean batch losses.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionTrace {
    pub losses: Vec<f64>,
}

/// Minibatch Adam training. Row `i` of `z` is conditioned on the prototype
/// whose id equals `labels[i]`; rows labelled `-1` are skipped.
pub fn train_diffusion<T: Scalar>(
    z: &Tensor<T>,
    labels: &[i64],
    prototypes: &PrototypeSet<T>,
    cfg: &DiffusionConfig,
) -> Result<(DiffusionModel<T>, DiffusionTrace)> {
    cfg.validate()?;
    if z.shape().len() != 2 || labels.len() != z.rows() {
        return Err(Error::ShapeMismatch(format!("{} labels for embeddings {:?}", labels.len(), z.shape())));
    }
    if prototypes.is_empty() {
        return Err(Error::Param("at least one prototype is required".into()));
    }
    if prototypes.prototypes.cols() != z.cols() {
        return Err(Error::ShapeMismatch("prototype width differs from embeddings".into()));
    }
    let mut rows = Vec::new();
    let mut proto_of = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l < 0 {
            continue;
        }
        let p = prototypes
            .ids
            .iter()
            .position(|&id| id == l)
            .ok_or_else(|| Error::Label(format!("no prototype for cluster {l}")))?;
        rows.push(i);
        proto_of.push(p);
    }
    if rows.is_empty() {
        return Err(Error::Param("every embedding is labelled as noise".into()));
    }

    let mut model = DiffusionModel::<T>::new(z.cols(), cfg)?;
    let mut adam = AdamState::new(&model.params(), cfg.lr)?;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let epoch_seed = derive_seed(cfg.seed ^ 0xD1FF, epoch as u64);
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut seeded(epoch_seed));
        let mut total = 0.0;
        let mut batches = 0;
        for (bi, chunk) in order.chunks(cfg.batch).enumerate() {
            let idx: Vec<usize> = chunk.iter().map(|&o| rows[o]).collect();
            let pidx: Vec<usize> = chunk.iter().map(|&o| proto_of[o]).collect();
            let z0 = z.select_rows(&idx)?;
            let cond = prototypes.prototypes.select_rows(&pidx)?;
            let batch = noise_batch(&z0, &model.schedule, derive_seed(epoch_seed, bi as u64))?;

            let mut tape = Tape::new();
            let vars: Vec<Var> = model.params().into_iter().map(|p| tape.param(p)).collect();
            let loss = record_diffusion_loss(&mut tape, &vars, &z0, Conditioning::PerRow(&cond), &batch)
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::TrainingDiverged { epoch },
                    other => other,
                })?;
            let value = tape.scalar(loss).as_f64();
            if !value.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            tape.backward(loss)?;
            for (p, v) in model.params_mut().into_iter().zip(&vars) {
                match tape.grad(*v) {
                    Some(g) => p.accumulate_grad(g)?,
                    None => p.accumulate_grad(&vec![T::zero(); p.len()])?,
                }
            }
            adam.step(&mut model.params_mut())?;
            total += value;
            batches += 1;
        }
        if model.params().iter().any(|p| p.data().iter().any(|v| !v.is_finite())) {
            return Err(Error::TrainingDiverged { epoch });
        }
        losses.push(total / batches as f64);
    }
    model.trained = true;
    Ok((model, DiffusionTrace { losses }))
}

/// Ancestral sampling of `count` embeddings conditioned on every row of
/// `cond` (normally a single target prototype).
pub fn generate_samples<T: Scalar>(
    model: &DiffusionModel<T>,
    cond: &PrototypeSet<T>,
    count: usize,
    seed: u64,
) -> Result<Tensor<T>> {
    if !model.trained {
        return Err(Error::ModelNotTrained);
    }
    if count == 0 {
        return Err(Error::Param("sample count must be positive".into()));
    }
    if cond.is_empty() {
        return Err(Error::Param("empty prototype set".into()));
    }
    let l = model.latent_dim();
    let s = &model.schedule;
    let mut rng = seeded(seed);
    let mut z: Vec<T> = normals(&mut rng, count * l).into_iter().map(T::of).collect();
    for k in (1..=s.steps()).rev() {
        let zk = Tensor::from_vec(&[count, l], z)?;
        let x0 = predict(model, &zk, &[k], Conditioning::Shared(&cond.prototypes))?;
        let (a, b) = s.posterior_coefficients(k);
        let (a, b) = (T::of(a), T::of(b));
        z = x0.data().iter().zip(zk.data()).map(|(&x, &zk)| a * x + b * zk).collect();
        if k > 1 {
            let sigma = T::of(s.posterior_variance(k).sqrt());
            for (v, e) in z.iter_mut().zip(normals(&mut rng, count * l)) {
                *v += sigma * T::of(e);
            }
        }
    }
    Tensor::from_vec(&[count, l], z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_schedule() {
        let s = build_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar(1), 0.5);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn standard_schedule_terminal_value() {
        let s = build_schedule(1000, 1e-4, 0.02).unwrap();
        // Independent oracle: sum of logs instead of the running product.
        let log: f64 = (0..1000).map(|i| (1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0)).ln()).sum();
        assert!((s.alpha_bar(1000) - log.exp()).abs() < 1e-15);
        assert!((s.alpha_bar(1000) - 4.04e-5).abs() < 0.01e-5);
        for k in 1..=1000 {
            assert!(s.alpha_bar(k) < s.alpha_bar(k - 1));
        }
    }

    #[test]
    fn schedule_rejects_bad_ranges() {
        assert!(matches!(build_schedule(0, 0.1, 0.2), Err(Error::Schedule(_))));
        assert!(matches!(build_schedule(10, 0.2, 0.1), Err(Error::Schedule(_))));
        assert!(matches!(build_schedule(10, 0.0, 0.1), Err(Error::Schedule(_))));
        assert!(matches!(build_schedule(10, 0.1, 1.0), Err(Error::Schedule(_))));
    }

    #[test]
    fn noiseless_forward_and_step_range() {
        let s = build_schedule(10, 0.01, 0.2).unwrap();
        let z0 = Tensor::<f64>::from_vec(&[1, 2], vec![1.0, -2.0]).unwrap();
        let zero = Tensor::zeros(&[1, 2]).unwrap();
        let zk = forward_diffuse_with(&z0, 4, &s, &zero).unwrap();
        let a = s.alpha_bar(4).sqrt();
        assert_eq!(zk.data(), &[a, -2.0 * a]);
        assert!(matches!(forward_diffuse(&z0, 0, &s, 1), Err(Error::Step { step: 0, max: 10 })));
        assert!(matches!(forward_diffuse(&z0, 11, &s, 1), Err(Error::Step { step: 11, .. })));
    }

    #[test]
    fn step_embedding_layout() {
        let e = step_embedding::<f64>(&[0, 3], 5).unwrap();
        assert_eq!(e.row(0), &[0.0, 0.0, 1.0, 1.0, 0.0]);
        assert!((e.at(1, 0) - 3f64.sin()).abs() < 1e-15);
        assert!((e.at(1, 3) - (3.0 * 0.01f64).cos()).abs() < 1e-15);
    }

    #[test]
    fn untrained_model_cannot_sample() {
        let cfg = DiffusionConfig { steps: 5, ..Default::default() };
        let m = DiffusionModel::<f64>::new(2, &cfg).unwrap();
        let p = PrototypeSet::new(Tensor::zeros(&[1, 2]).unwrap(), vec![0], PrototypeSource::Labeled).unwrap();
        assert!(matches!(generate_samples(&m, &p, 3, 0), Err(Error::ModelNotTrained)));
    }
}
