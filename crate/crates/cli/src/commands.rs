use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use serde_json::json;

use impress_core::diffusion::{train_diffusion, DiffusionModel, PrototypeSource};
use impress_core::fewshot::{
    bound_diagnostics, cluster_prototypes, cluster_pseudo_labels, compute_prototypes, hierarchy_metrics,
    run_benchmark_embeddings,
};
use impress_core::graph::{
    generate_tree_dataset, ingest_planetoid, load_dataset_dir, parse_split, write_dataset_dir, GraphDataset, LoadStats,
    SplitSource,
};
use impress_core::vgae::{embed_all, train_vgae};
use impress_core::{Error, Precision, Result, Scalar};

use crate::args::*;
use crate::checkpoint::{
    diffusion_checkpoint, diffusion_from_checkpoint, vgae_checkpoint, vgae_from_checkpoint, Checkpoint,
};
use crate::selftest::run_suite;

/// Result of a successful command: a JSON summary for stdout and whether
/// every check passed (only `selftest` can fail here).
pub struct Outcome {
    pub summary: serde_json::Value,
    pub ok: bool,
}

fn done(summary: serde_json::Value) -> Result<Outcome> {
    Ok(Outcome { summary, ok: true })
}

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    let echo = cfg.echo();
    match &cfg.command {
        Command::Ingest(a) => ingest(a),
        Command::SynthTree(a) => synth_tree(a),
        Command::TrainVgae(a) => match a.precision {
            Precision::F32 => train_vgae_cmd::<f32>(a, &echo),
            Precision::F64 => train_vgae_cmd::<f64>(a, &echo),
        },
        Command::TrainDiffusion(a) => {
            let ck = Checkpoint::load(&a.vgae)?;
            match checkpoint_precision(&ck)? {
                Precision::F32 => train_diffusion_cmd::<f32>(a, &ck, &echo),
                Precision::F64 => train_diffusion_cmd::<f64>(a, &ck, &echo),
            }
        }
        Command::Eval(a) => {
            let ck = Checkpoint::load(&a.vgae)?;
            match checkpoint_precision(&ck)? {
                Precision::F32 => eval_cmd::<f32>(a, &ck, cfg.threads, echo),
                Precision::F64 => eval_cmd::<f64>(a, &ck, cfg.threads, echo),
            }
        }
        Command::Metrics(a) => {
            let ck = Checkpoint::load(&a.vgae)?;
            match checkpoint_precision(&ck)? {
                Precision::F32 => metrics_cmd::<f32>(a, &ck, echo),
                Precision::F64 => metrics_cmd::<f64>(a, &ck, echo),
            }
        }
        Command::Selftest(a) => {
            let results = run_suite(a.cases, a.seed);
            let ok = results.iter().all(|r| r.passed);
            Ok(Outcome { summary: json!({ "command": "selftest", "passed": ok, "properties": results }), ok })
        }
    }
}

fn checkpoint_precision(ck: &Checkpoint) -> Result<Precision> {
    ck.value("precision")?.parse().map_err(Error::Format)
}

fn stats_json(stats: &LoadStats) -> serde_json::Value {
    json!({
        "self_loops_dropped": stats.self_loops,
        "duplicate_edges_dropped": stats.duplicates,
        "unknown_ids_dropped": stats.unknown_ids,
    })
}

fn dataset_json(ds: &GraphDataset) -> serde_json::Value {
    json!({
        "name": ds.name(),
        "nodes": ds.n_nodes(),
        "edges": ds.edges().len(),
        "feature_dim": ds.feature_dim(),
        "classes": ds.classes().len(),
        "split": { "train": ds.split().train, "val": ds.split().val, "test": ds.split().test },
    })
}

/// Default train/val/test class counts: two sevenths each for val and test
/// (at least one val and two test classes), the rest for training.
pub fn default_split_counts(classes: usize) -> Result<(usize, usize, usize)> {
    let part = ((2 * classes) as f64 / 7.0).round() as usize;
    let test = part.max(2);
    let val = part.max(1);
    if classes < test + val + 1 {
        return Err(Error::Split(format!("{classes} classes are too few for a default split; pass --split-counts")));
    }
    Ok((classes - test - val, val, test))
}

fn ingest(a: &IngestArgs) -> Result<Outcome> {
    let source = match (&a.split_file, &a.split_counts) {
        (Some(path), _) => SplitSource::Explicit(parse_split(path)?),
        (None, Some(raw)) => {
            let (tr, va, te) = parse_counts(raw)?;
            SplitSource::Counts(tr, va, te)
        }
        (None, None) => {
            let (tr, va, te) = default_split_counts(count_classes(&a.content)?)?;
            SplitSource::Counts(tr, va, te)
        }
    };
    let (ds, stats) = ingest_planetoid(&a.content, &a.cites, source)?;
    write_dataset_dir(&ds, &a.out)?;
    done(json!({ "command": "ingest", "out": a.out, "dataset": dataset_json(&ds), "load": stats_json(&stats) }))
}

fn count_classes(content: &Path) -> Result<usize> {
    let text = std::fs::read_to_string(content).map_err(|e| Error::io(content, e))?;
    let labels: BTreeSet<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_whitespace().last())
        .collect();
    Ok(labels.len())
}

fn synth_tree(a: &SynthTreeArgs) -> Result<Outcome> {
    let ds = generate_tree_dataset(&tree_config(a))?;
    write_dataset_dir(&ds, &a.out)?;
    done(json!({ "command": "synth-tree", "out": a.out, "dataset": dataset_json(&ds) }))
}

fn load(path: &Path) -> Result<GraphDataset> {
    Ok(load_dataset_dir(path)?.0)
}

fn train_vgae_cmd<T: Scalar>(a: &TrainVgaeArgs, echo: &BTreeMap<String, String>) -> Result<Outcome> {
    let ds = load(&a.dataset)?;
    let (model, trace) = train_vgae::<T>(&ds, &vgae_config(&a.vgae))?;
    vgae_checkpoint(&model, echo).save(&a.out)?;
    done(json!({
        "command": "train-vgae",
        "out": a.out,
        "epochs": trace.losses.len(),
        "first_loss": trace.losses.first(),
        "final_loss": trace.losses.last(),
    }))
}

fn train_diffusion_cmd<T: Scalar>(
    a: &TrainDiffusionArgs,
    vgae_ck: &Checkpoint,
    echo: &BTreeMap<String, String>,
) -> Result<Outcome> {
    let ds = load(&a.dataset)?;
    let vgae = vgae_from_checkpoint::<T>(vgae_ck)?;
    let nodes = ds.nodes_in_split(a.split);
    let z = embed_all(&vgae, &ds)?.select_rows(&nodes)?;
    let rows = z.to_rows_f64();
    let assignment = cluster_pseudo_labels(&rows, a.eps, a.min_pts)?;
    let prototypes = cluster_prototypes::<T>(&rows, &assignment)?;
    let (model, trace) = train_diffusion(&z, &assignment.labels, &prototypes, &diffusion_config(a))?;

    let mut echo = echo.clone();
    echo.insert("precision".into(), T::PRECISION.as_str().into());
    echo.insert("cluster.eps-used".into(), format!("{:?}", assignment.eps));
    echo.insert("cluster.count".into(), assignment.n_clusters().to_string());
    echo.insert("cluster.noise".into(), assignment.n_noise().to_string());
    diffusion_checkpoint(&model, &echo).save(&a.out)?;
    done(json!({
        "command": "train-diffusion",
        "out": a.out,
        "embedded_nodes": nodes.len(),
        "eps": assignment.eps,
        "clusters": assignment.n_clusters(),
        "noise": assignment.n_noise(),
        "first_loss": trace.losses.first(),
        "final_loss": trace.losses.last(),
    }))
}

fn eval_cmd<T: Scalar>(
    a: &EvalArgs,
    vgae_ck: &Checkpoint,
    threads: usize,
    echo: BTreeMap<String, String>,
) -> Result<Outcome> {
    let start = Instant::now();
    let ds = load(&a.dataset)?;
    let vgae = vgae_from_checkpoint::<T>(vgae_ck)?;
    let diffusion: Option<DiffusionModel<T>> = match (&a.diffusion, a.d_gen) {
        (Some(path), d) if d > 0 => Some(diffusion_from_checkpoint(&Checkpoint::load(path)?)?),
        _ => None,
    };
    if let Some(dm) = &diffusion {
        if dm.latent_dim() != vgae.latent_dim() {
            return Err(Error::ShapeMismatch(format!(
                "diffusion latent {} differs from encoder latent {}",
                dm.latent_dim(),
                vgae.latent_dim()
            )));
        }
    }
    let z = embed_all(&vgae, &ds)?;
    let cfg = benchmark_config(a);
    let mut report = run_benchmark_embeddings(&z, diffusion.as_ref(), &ds, vgae.curvature, &cfg, threads, echo)?;
    if a.timing {
        report.wall_clock_seconds = Some(start.elapsed().as_secs_f64());
    }
    let text = report.to_json()? + "\n";
    match &a.report {
        Some(path) => std::fs::write(path, &text).map_err(|e| Error::io(path, e))?,
        None => print!("{text}"),
    }
    done(json!({
        "command": "eval",
        "report": a.report,
        "episodes": report.accuracies.len(),
        "mean": report.mean,
        "std_over_episodes": report.std_over_episodes,
    }))
}

fn metrics_cmd<T: Scalar>(a: &MetricsArgs, vgae_ck: &Checkpoint, echo: BTreeMap<String, String>) -> Result<Outcome> {
    let ds = load(&a.dataset)?;
    let vgae = vgae_from_checkpoint::<T>(vgae_ck)?;
    let nodes = ds.nodes_in_split(a.split);
    let classes = ds.split().classes(a.split).to_vec();
    let k = a.k.unwrap_or(classes.len());
    let rows = embed_all(&vgae, &ds)?.select_rows(&nodes)?.to_rows_f64();
    let hierarchy = hierarchy_metrics(&rows, k)?;

    let mut sorted = classes.clone();
    sorted.sort_unstable();
    let class_index = |c: usize| sorted.binary_search(&c).expect("node class belongs to the split");
    let labels: Vec<usize> = nodes.iter().map(|&v| class_index(ds.labels()[v])).collect();
    let ids: Vec<i64> = labels.iter().map(|&l| l as i64).collect();
    let all: Vec<i64> = (0..sorted.len() as i64).collect();
    let prototypes = compute_prototypes::<f64>(&rows, &ids, &all, PrototypeSource::Labeled)?.prototypes.to_rows_f64();
    let diagnostics = match bound_diagnostics(&rows, &labels, &prototypes, vgae.curvature) {
        Ok(d) => json!(d),
        Err(Error::DiagnosticUnavailable(msg)) => json!({ "unavailable": msg }),
        Err(e) => return Err(e),
    };
    let summary = json!({
        "config": echo,
        "split": a.split,
        "nodes": nodes.len(),
        "hierarchy": hierarchy,
        "bound_diagnostics": diagnostics,
    });
    if let Some(path) = &a.out {
        let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Format(e.to_string()))? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    done(summary)
}
