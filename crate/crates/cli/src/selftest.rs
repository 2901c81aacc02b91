//! Randomized property checks runnable from the command line.

use impress_core::fewshot::{compute_prototypes, dbscan, silhouette, NOISE};
use impress_core::diffusion::PrototypeSource;
use impress_core::geometry::{
    clamp_to_ball, exp_map, exp_map0, hyperbolic_distance, log_map, mobius_add, BallPoint, Curvature,
};
use impress_core::graph::{ClassSplit, GraphDataset};
use impress_core::tensor::gradcheck::check_gradients;
use impress_core::tensor::{Init, Tensor};
use impress_core::vgae::{record_elbo, VgaeConfig, VgaeInputs, VgaeModel};
use impress_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct PropertyOutcome {
    pub name: &'static str,
    pub cases: usize,
    pub passed: bool,
    pub worst: f64,
    pub tolerance: f64,
}

type Check = fn(&mut ChaCha8Rng) -> Result<f64>;

fn vector(rng: &mut ChaCha8Rng, dim: usize, max_norm: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    let target = rng.random_range(0.0..max_norm);
    v.into_iter().map(|x| x * target / norm).collect()
}

fn curvature(rng: &mut ChaCha8Rng) -> Curvature {
    Curvature::new(rng.random_range(0.1..2.0)).expect("positive")
}

fn point(rng: &mut ChaCha8Rng, dim: usize, c: Curvature, frac: f64) -> Result<BallPoint<f64>> {
    BallPoint::new(vector(rng, dim, frac * c.radius()), c)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn exp_log_inversion(rng: &mut ChaCha8Rng) -> Result<f64> {
    let c = curvature(rng);
    let dim = rng.random_range(1..8);
    let base = point(rng, dim, c, 0.7)?;
    let v = vector(rng, dim, 3.0);
    let u = exp_map(&v, &base)?;
    let back = log_map(&u, &base)?;
    Ok(max_abs_diff(back.coords(), &v))
}

fn mobius_identities(rng: &mut ChaCha8Rng) -> Result<f64> {
    let c = curvature(rng);
    let dim = rng.random_range(1..8);
    let x = point(rng, dim, c, 0.99)?;
    let zero = BallPoint::origin(dim, c);
    let right = mobius_add(&x, &zero)?;
    let inverse = mobius_add(&x.negate(), &x)?;
    Ok(max_abs_diff(right.coords(), x.coords()).max(inverse.norm()))
}

fn distance_axioms(rng: &mut ChaCha8Rng) -> Result<f64> {
    let c = curvature(rng);
    let dim = rng.random_range(1..6);
    let x = point(rng, dim, c, 0.9)?;
    let y = point(rng, dim, c, 0.9)?;
    let z = point(rng, dim, c, 0.9)?;
    let (xy, yx) = (hyperbolic_distance(&x, &y)?, hyperbolic_distance(&y, &x)?);
    let (xz, zy) = (hyperbolic_distance(&x, &z)?, hyperbolic_distance(&z, &y)?);
    let xx = hyperbolic_distance(&x, &x)?;
    Ok((xy - yx).abs().max((xy - xz - zy).max(0.0)).max(xx).max((-xy).max(0.0)))
}

fn ball_invariant(rng: &mut ChaCha8Rng) -> Result<f64> {
    let c = curvature(rng);
    let dim = rng.random_range(1..6);
    let bound = c.max_norm();
    let far = exp_map0(&vector(rng, dim, 60.0), c)?;
    let clamped = clamp_to_ball(&vector(rng, dim, 5.0 * c.radius()), c)?;
    let base = point(rng, dim, c, 0.99)?;
    let moved = exp_map(&vector(rng, dim, 40.0), &base)?;
    let sum = mobius_add(&base, &moved)?;
    let excess = [far.norm(), clamped.norm(), moved.norm(), sum.norm()]
        .iter()
        .map(|n| (n - bound).max(0.0))
        .fold(0.0, f64::max);
    Ok(excess)
}

fn dbscan_rules(rng: &mut ChaCha8Rng) -> Result<f64> {
    let n = rng.random_range(5..60);
    let pts: Vec<Vec<f64>> = (0..n).map(|_| vector(rng, 2, 3.0)).collect();
    let eps = rng.random_range(0.1..1.5);
    let min_pts = rng.random_range(1..6);
    let a = dbscan(&pts, eps, min_pts)?;
    let d = |i: usize, j: usize| pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let mut violations = 0.0;
    for i in 0..n {
        let nb: Vec<usize> = (0..n).filter(|&j| d(i, j) <= eps).collect();
        let core = nb.len() >= min_pts;
        if core && a.labels[i] == NOISE {
            violations += 1.0;
        }
        if core && nb.iter().any(|&j| d(i, j) <= eps && a.labels[j] == NOISE) {
            violations += 1.0;
        }
    }
    Ok(violations)
}

fn prototype_means(rng: &mut ChaCha8Rng) -> Result<f64> {
    let n = rng.random_range(2..50);
    let pts: Vec<Vec<f64>> = (0..n).map(|_| vector(rng, 3, 10.0)).collect();
    let labels: Vec<i64> = (0..n).map(|i| if i < 2 { i as i64 } else { rng.random_range(0..2) }).collect();
    let p = compute_prototypes::<f64>(&pts, &labels, &[0, 1], PrototypeSource::Labeled)?;
    let mut worst = 0.0f64;
    for g in 0..2 {
        let idx: Vec<usize> = (0..n).filter(|&i| labels[i] == g as i64).collect();
        for c in 0..3 {
            let mean = idx.iter().map(|&i| pts[i][c]).sum::<f64>() / idx.len() as f64;
            worst = worst.max((p.prototypes.at(g, c) - mean).abs());
        }
    }
    Ok(worst)
}

fn silhouette_range(rng: &mut ChaCha8Rng) -> Result<f64> {
    let n = rng.random_range(3..40);
    let pts: Vec<Vec<f64>> = (0..n).map(|_| vector(rng, 2, 4.0)).collect();
    let labels: Vec<usize> = (0..n).map(|i| if i < 2 { i } else { rng.random_range(0..2) }).collect();
    let s = silhouette(&pts, &labels)?;
    Ok((s.abs() - 1.0).max(0.0))
}

fn elbo_gradient(rng: &mut ChaCha8Rng) -> Result<f64> {
    let n = 8;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < 0.3 {
                edges.push((i, j));
            }
        }
    }
    let seed = rng.random();
    let features = Tensor::create(&[n, 4], Init::Normal { mean: 0.0, std: 0.5, seed })?;
    let split = ClassSplit { train: vec![0], val: vec![], test: vec![] };
    let (ds, _) = GraphDataset::new("selftest", features, &edges, vec![0; n], split)?;
    let cfg = VgaeConfig { hidden: 5, latent: 3, seed, ..VgaeConfig::default() };
    let model = VgaeModel::<f64>::new(4, &cfg)?;
    let inputs = VgaeInputs::<f64>::new(&ds, model.curvature)?;
    let eps = Tensor::create(&[n, 3], Init::Normal { mean: 0.0, std: 1.0, seed: seed ^ 1 })?;
    let curvature = model.curvature;
    let mut params: Vec<Tensor<f64>> = model.params().into_iter().cloned().collect();
    let errors = check_gradients(&mut params, 1e-6, |tape, vars| record_elbo(tape, vars, curvature, &inputs, &eps))?;
    Ok(errors.into_iter().fold(0.0, f64::max))
}

/// `(name, check, tolerance, case divisor)`; expensive checks run
/// `cases / divisor` times.
const SUITE: &[(&str, Check, f64, usize)] = &[
    ("exp-log inversion", exp_log_inversion, 1e-6, 1),
    ("mobius identities", mobius_identities, 1e-9, 1),
    ("distance axioms", distance_axioms, 1e-7, 1),
    ("open-ball invariant", ball_invariant, 0.0, 1),
    ("dbscan core and border rules", dbscan_rules, 0.0, 10),
    ("prototype means", prototype_means, 1e-9, 10),
    ("silhouette range", silhouette_range, 0.0, 10),
    ("elbo gradient", elbo_gradient, 1e-4, 200),
];

pub fn run_suite(cases: usize, seed: u64) -> Vec<PropertyOutcome> {
    run_selected(cases, seed, |_| true)
}

/// Runs the properties whose name passes `keep`; seeds match [`run_suite`].
pub fn run_selected(cases: usize, seed: u64, keep: impl Fn(&str) -> bool) -> Vec<PropertyOutcome> {
    SUITE
        .iter()
        .enumerate()
        .filter(|(_, p)| keep(p.0))
        .map(|(i, &(name, check, tolerance, divisor))| {
            let mut rng = ChaCha8Rng::seed_from_u64(impress_core::rng::derive_seed(seed, i as u64));
            let runs = (cases / divisor).max(1);
            let mut worst = 0.0f64;
            let mut passed = true;
            for _ in 0..runs {
                match check(&mut rng) {
                    Ok(v) if v <= tolerance => worst = worst.max(v),
                    Ok(v) => {
                        worst = worst.max(v);
                        passed = false;
                    }
                    Err(_) => {
                        worst = f64::INFINITY;
                        passed = false;
                    }
                }
            }
            PropertyOutcome { name, cases: runs, passed, worst, tolerance }
        })
        .collect()
}
