use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use impress_core::diffusion::DiffusionConfig;
use impress_core::fewshot::{BenchmarkConfig, ClassifierConfig, EpisodeConfig, DEFAULT_MIN_PTS};
use impress_core::graph::{SplitKind, TreeConfig, MAX_TREE_NODES};
use impress_core::vgae::VgaeConfig;
use impress_core::{Error, Precision, Result};

#[derive(Debug, Parser)]
#[command(name = "impress", version, about = "Hyperbolic graph embeddings with diffusion-augmented few-shot node classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Convert Planetoid-style `.content`/`.cites` files into a dataset directory.
    Ingest(IngestArgs),
    /// Generate a balanced tree dataset with hierarchical class structure.
    SynthTree(SynthTreeArgs),
    /// Train the variational graph autoencoder.
    TrainVgae(TrainVgaeArgs),
    /// Pseudo-label embeddings and train the conditional diffusion model.
    TrainDiffusion(TrainDiffusionArgs),
    /// Run few-shot episodes and write a report.
    Eval(EvalArgs),
    /// Clustering quality and prototype diagnostics of learned embeddings.
    Metrics(MetricsArgs),
    /// Run the randomized property suites.
    Selftest(SelftestArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::SynthTree(_) => "synth-tree",
            Command::TrainVgae(_) => "train-vgae",
            Command::TrainDiffusion(_) => "train-diffusion",
            Command::Eval(_) => "eval",
            Command::Metrics(_) => "metrics",
            Command::Selftest(_) => "selftest",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub content: PathBuf,
    #[arg(long)]
    pub cites: PathBuf,
    /// Split file with `train:`, `val:` and `test:` class lists.
    #[arg(long, conflicts_with = "split_counts")]
    pub split_file: Option<PathBuf>,
    /// Train,val,test class counts over ascending class ids.
    #[arg(long)]
    pub split_counts: Option<String>,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthTreeArgs {
    #[arg(long)]
    pub branching: usize,
    #[arg(long)]
    pub depth: usize,
    #[arg(long)]
    pub feature_dim: usize,
    #[arg(long)]
    pub noise: f64,
    #[arg(long)]
    pub seed: u64,
    /// Depth whose subtrees become classes.
    #[arg(long, default_value_t = 1)]
    pub class_depth: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct VgaeArgs {
    /// Curvature magnitude; 0 selects the Euclidean variant.
    #[arg(long, default_value_t = 1.0)]
    pub curvature: f64,
    #[arg(long, default_value_t = 256)]
    pub hidden: usize,
    #[arg(long, default_value_t = 64)]
    pub latent: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainVgaeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub vgae: VgaeArgs,
    #[arg(long, default_value = "f32")]
    pub precision: Precision,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainDiffusionArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub vgae: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Diffusion steps K.
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub beta_start: f64,
    #[arg(long, default_value_t = 0.02)]
    pub beta_end: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Attention width; 0 uses the latent dimension.
    #[arg(long, default_value_t = 0)]
    pub attn_dim: usize,
    /// DBSCAN radius; chosen at the k-distance knee when omitted.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MIN_PTS)]
    pub min_pts: usize,
    /// Nodes whose embeddings train the model.
    #[arg(long, default_value = "train")]
    pub split: SplitKind,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub vgae: PathBuf,
    /// Required when --d-gen is positive.
    #[arg(long)]
    pub diffusion: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub n_way: usize,
    #[arg(long, default_value_t = 5)]
    pub m_shot: usize,
    /// Query nodes per class.
    #[arg(long, default_value_t = 10)]
    pub q: usize,
    /// Generated embeddings per class; 0 disables augmentation.
    #[arg(long, default_value_t = 50)]
    pub d_gen: usize,
    #[arg(long, default_value_t = 50)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "test")]
    pub split: SplitKind,
    #[arg(long, default_value_t = 500)]
    pub clf_epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub clf_lr: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub clf_l2: f64,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Record wall-clock time in the report.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct MetricsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub vgae: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: SplitKind,
    /// Cluster count; defaults to the number of classes in the split.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SelftestArgs {
    /// Random cases per property.
    #[arg(long, default_value_t = 1000)]
    pub cases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// A parsed command with every setting validated, plus the environment
/// thread cap.
#[derive(Debug)]
pub struct RunConfig {
    pub command: Command,
    pub threads: usize,
}

fn param(msg: impl Into<String>) -> Error {
    Error::Param(msg.into())
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(param(format!("--{name} must be positive")));
    }
    Ok(())
}

impl RunConfig {
    pub fn new(command: Command, threads_env: Option<&str>) -> Result<Self> {
        let threads = match threads_env {
            None => 1,
            Some(raw) => match raw.trim().parse::<usize>() {
                Ok(t) if t > 0 => t,
                _ => return Err(param(format!("IMPRESS_THREADS must be a positive integer, got '{raw}'"))),
            },
        };
        let cfg = RunConfig { command, threads };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.command {
            Command::Ingest(a) => {
                if a.split_counts.is_some() {
                    parse_counts(a.split_counts.as_deref().unwrap_or_default())?;
                }
                Ok(())
            }
            Command::SynthTree(a) => {
                let cfg = tree_config(a);
                if cfg.branching < 2 || cfg.depth < 2 || cfg.feature_dim < 4 {
                    return Err(param("synth-tree needs --branching >= 2, --depth >= 2, --feature-dim >= 4"));
                }
                if !(a.noise >= 0.0 && a.noise.is_finite()) {
                    return Err(param(format!("--noise {}", a.noise)));
                }
                if a.class_depth == 0 || a.class_depth > a.depth {
                    return Err(param(format!("--class-depth must be in 1..={}", a.depth)));
                }
                match cfg.node_count() {
                    Some(n) if n <= MAX_TREE_NODES => Ok(()),
                    _ => Err(Error::Size(format!("tree exceeds {MAX_TREE_NODES} nodes"))),
                }
            }
            Command::TrainVgae(a) => vgae_config(&a.vgae).validate(),
            Command::TrainDiffusion(a) => {
                diffusion_config(a).validate()?;
                positive("min-pts", a.min_pts)?;
                if let Some(e) = a.eps {
                    if !(e > 0.0 && e.is_finite()) {
                        return Err(param(format!("--eps must be positive, got {e}")));
                    }
                }
                Ok(())
            }
            Command::Eval(a) => {
                if a.n_way < 2 {
                    return Err(param("--n-way must be at least 2"));
                }
                positive("m-shot", a.m_shot)?;
                positive("q", a.q)?;
                positive("episodes", a.episodes)?;
                positive("clf-epochs", a.clf_epochs)?;
                if !(a.clf_lr > 0.0 && a.clf_lr.is_finite()) || !(a.clf_l2 >= 0.0 && a.clf_l2.is_finite()) {
                    return Err(param("--clf-lr must be positive and --clf-l2 non-negative"));
                }
                if a.d_gen > 0 && a.diffusion.is_none() {
                    return Err(param("--d-gen > 0 needs a --diffusion checkpoint"));
                }
                Ok(())
            }
            Command::Metrics(a) => match a.k {
                Some(k) if k < 2 => Err(param("--k must be at least 2")),
                _ => Ok(()),
            },
            Command::Selftest(a) => positive("cases", a.cases),
        }
    }

    /// Every flag of the command, defaults included, keyed by flag name.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        out.insert("command".to_string(), self.command.name().to_string());
        if let Ok(serde_json::Value::Object(outer)) = serde_json::to_value(&self.command) {
            for (_, inner) in outer {
                if let serde_json::Value::Object(fields) = inner {
                    for (k, v) in fields {
                        let text = match v {
                            serde_json::Value::String(s) => s,
                            serde_json::Value::Null => "none".to_string(),
                            other => other.to_string(),
                        };
                        out.insert(k.replace('_', "-"), text);
                    }
                }
            }
        }
        out
    }
}

pub fn parse_counts(raw: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<usize> = raw
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| param(format!("--split-counts expects three integers, got '{raw}'")))?;
    match parts[..] {
        [a, b, c] if a > 0 && c > 0 => Ok((a, b, c)),
        _ => Err(param(format!("--split-counts expects train,val,test with train and test positive, got '{raw}'"))),
    }
}

pub fn tree_config(a: &SynthTreeArgs) -> TreeConfig {
    let mut cfg = TreeConfig::new(a.branching, a.depth, a.feature_dim, a.noise, a.seed);
    cfg.class_depth = a.class_depth;
    cfg
}

pub fn vgae_config(a: &VgaeArgs) -> VgaeConfig {
    VgaeConfig {
        curvature: a.curvature,
        hidden: a.hidden,
        latent: a.latent,
        layers: a.layers,
        epochs: a.epochs,
        lr: a.lr,
        seed: a.seed,
    }
}

pub fn diffusion_config(a: &TrainDiffusionArgs) -> DiffusionConfig {
    DiffusionConfig {
        steps: a.steps,
        beta_start: a.beta_start,
        beta_end: a.beta_end,
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        seed: a.seed,
        attn_dim: a.attn_dim,
    }
}

pub fn benchmark_config(a: &EvalArgs) -> BenchmarkConfig {
    BenchmarkConfig {
        way: a.n_way,
        shot: a.m_shot,
        query: a.q,
        episodes: a.episodes,
        master_seed: a.seed,
        split: a.split,
        episode: EpisodeConfig {
            d_gen: a.d_gen,
            classifier: ClassifierConfig { epochs: a.clf_epochs, lr: a.clf_lr, l2: a.clf_l2, seed: a.seed },
        },
    }
}
