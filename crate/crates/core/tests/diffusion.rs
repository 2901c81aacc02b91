use impress_core::diffusion::*;
use impress_core::rng::{normals, seeded};
use impress_core::tensor::gradcheck::check_gradients;
use impress_core::tensor::{Init, Tensor};
use impress_core::Error;

fn mat(rows: &[&[f64]]) -> Tensor<f64> {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn mm(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|r| (0..b[0].len()).map(|j| r.iter().zip(b).map(|(x, br)| x * br[j]).sum()).collect())
        .collect()
}

fn add(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

fn tiny_model(steps: usize) -> DiffusionModel<f64> {
    let cfg = DiffusionConfig { steps, beta_start: 0.1, beta_end: 0.3, attn_dim: 2, seed: 4, ..Default::default() };
    let mut m = DiffusionModel::<f64>::new(2, &cfg).unwrap();
    let vals = [
        [0.3, -0.2, 0.5, 0.1],
        [0.1, 0.4, -0.3, 0.2],
        [-0.5, 0.2, 0.6, 0.3],
        [0.7, 0.1, -0.2, 0.4],
        [0.2, -0.6, 0.3, 0.5],
        [-0.1, 0.3, 0.2, -0.4],
    ];
    let mut i = 0;
    let mut next = |t: &mut Tensor<f64>| {
        let v = vals[i % vals.len()];
        i += 1;
        let data: Vec<f64> = (0..t.len()).map(|j| v[j % 4] * (1.0 + 0.1 * i as f64)).collect();
        *t = Tensor::from_vec(t.shape(), data).unwrap();
    };
    for p in m.params_mut() {
        next(p);
    }
    m
}

/// Independent evaluation of the denoiser with plain loops.
fn oracle(m: &DiffusionModel<f64>, zk: &[Vec<f64>], k: usize, p: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let rows = |t: &Tensor<f64>| t.to_rows_f64();
    let l = m.latent_dim();
    let half = l / 2;
    let mut emb = vec![0.0; l];
    for i in 0..half {
        let w = 10000f64.powf(-(i as f64) / half as f64);
        emb[i] = (k as f64 * w).sin();
        emb[half + i] = (k as f64 * w).cos();
    }
    let temb = add(&mm(&[emb], &rows(&m.time_weight)), &rows(&m.time_bias))[0].clone();
    let mut h = zk.to_vec();
    for b in &m.blocks {
        let x: Vec<Vec<f64>> = h.iter().map(|r| r.iter().zip(&temb).map(|(a, t)| a + t).collect()).collect();
        let x = mm(&x, &rows(&b.weight));
        let bias = rows(&b.bias)[0].clone();
        let x: Vec<Vec<f64>> =
            x.iter().map(|r| r.iter().zip(&bias).map(|(a, c)| (a + c).max(0.0)).collect()).collect();
        h = add(&h, &x);
        let q = mm(&h, &rows(&b.w_q));
        let kk = mm(p, &rows(&b.w_k));
        let v = mm(p, &rows(&b.w_v));
        let d = b.w_q.cols() as f64;
        let mut s = Vec::new();
        for qi in &q {
            let scores: Vec<f64> =
                kk.iter().map(|kj| qi.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>() / d.sqrt()).collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|x| (x - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            let mut row = vec![0.0; v[0].len()];
            for (w, vj) in e.iter().zip(&v) {
                for (r, x) in row.iter_mut().zip(vj) {
                    *r += w / z * x;
                }
            }
            s.push(row);
        }
        h = add(&h, &mm(&s, &rows(&b.w_o)));
    }
    let out = mm(&h, &rows(&m.out_weight));
    let ob = rows(&m.out_bias)[0].clone();
    out.iter().map(|r| r.iter().zip(&ob).map(|(a, c)| a + c).collect()).collect()
}

#[test]
fn denoiser_matches_hand_chain() {
    let m = tiny_model(10);
    let zk = vec![vec![0.5, -1.0], vec![1.5, 0.25], vec![-0.3, 0.8]];
    let p = vec![vec![1.0, 0.0], vec![-0.5, 2.0]];
    let cond = PrototypeSet::new(Tensor::from_rows(&p).unwrap(), vec![0, 1], PrototypeSource::Labeled).unwrap();
    let got = denoise_forward(&m, &Tensor::from_rows(&zk).unwrap(), 7, &cond).unwrap();
    let want = oracle(&m, &zk, 7, &p);
    for (i, row) in want.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            assert!((got.at(i, j) - v).abs() < 1e-12, "({i},{j}) {} vs {v}", got.at(i, j));
        }
    }
}

#[test]
fn attention_rows_are_distributions() {
    let m = DiffusionModel::<f64>::new(6, &DiffusionConfig { steps: 5, seed: 1, ..Default::default() }).unwrap();
    for seed in 0..50 {
        let h = Tensor::create(&[7, 6], Init::Normal { mean: 0.0, std: 3.0, seed }).unwrap();
        let p = Tensor::create(&[4, 6], Init::Normal { mean: 0.0, std: 3.0, seed: seed + 100 }).unwrap();
        let w = m.attention_weights((seed % 3) as usize, &h, &p).unwrap();
        for i in 0..7 {
            assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
        let single = m.attention_weights(0, &h, &p.select_rows(&[2]).unwrap()).unwrap();
        assert!(single.data().iter().all(|&v| v == 1.0));
    }
}

#[test]
fn single_prototype_attention_is_query_independent() {
    // With one key the attention output is 𝒫 W_V for every query, so the
    // first block's attention contribution is the same on every row.
    let mut m = tiny_model(4);
    for b in &mut m.blocks {
        b.weight = Tensor::zeros(&[2, 2]).unwrap();
        b.bias = Tensor::zeros(&[1, 2]).unwrap();
    }
    m.out_weight = mat(&[&[1.0, 0.0], &[0.0, 1.0]]);
    m.out_bias = Tensor::zeros(&[1, 2]).unwrap();
    let p = mat(&[&[0.4, -0.9]]);
    let cond = PrototypeSet::new(p.clone(), vec![3], PrototypeSource::Labeled).unwrap();
    let zk = mat(&[&[0.0, 0.0], &[5.0, -2.0], &[-1.0, 7.0]]);
    let out = denoise_forward(&m, &zk, 2, &cond).unwrap();
    let shift: Vec<f64> = (0..3).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| out.at(i, j) - zk.at(i, j)).collect();
    for i in 1..3 {
        for j in 0..2 {
            assert!((shift[i * 2 + j] - shift[j]).abs() < 1e-12);
        }
    }
    let mut expected = [0.0; 2];
    for b in &m.blocks {
        let pv = impress_core::tensor::matmul(&p, &b.w_v).unwrap();
        let o = impress_core::tensor::matmul(&pv, &b.w_o).unwrap();
        expected[0] += o.data()[0];
        expected[1] += o.data()[1];
    }
    assert!((shift[0] - expected[0]).abs() < 1e-12);
    assert!((shift[1] - expected[1]).abs() < 1e-12);
}

#[test]
fn dimension_mismatch_rejected() {
    let m = tiny_model(4);
    let cond = PrototypeSet::new(mat(&[&[1.0, 2.0]]), vec![0], PrototypeSource::Labeled).unwrap();
    let bad = mat(&[&[1.0, 2.0, 3.0]]);
    assert!(matches!(denoise_forward(&m, &bad, 1, &cond), Err(Error::ShapeMismatch(_))));
    let bad_cond = PrototypeSet::new(mat(&[&[1.0, 2.0, 3.0]]), vec![0], PrototypeSource::Labeled).unwrap();
    assert!(matches!(denoise_forward(&m, &mat(&[&[1.0, 2.0]]), 1, &bad_cond), Err(Error::ShapeMismatch(_))));
}

#[test]
fn terminal_step_is_almost_pure_noise() {
    let s = build_schedule(1000, 1e-4, 0.02).unwrap();
    let z0 = mat(&[&[3.0, -1.0, 0.5]]);
    let (zk, eps) = forward_diffuse(&z0, 1000, &s, 8).unwrap();
    let ab = s.alpha_bar(1000);
    let bound = ab.sqrt() * 3.0;
    for (a, b) in zk.data().iter().zip(eps.data()) {
        // Z_K − ε = √ᾱ_K Z_0 − (1 − √(1 − ᾱ_K)) ε; the second term is O(ᾱ_K).
        assert!((a - b).abs() <= bound + (1.0 - (1.0 - ab).sqrt()) * b.abs() + 1e-15);
    }
}

fn moments(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Checks a sample against `N(mean, var)` within five standard errors for
/// both the mean and the variance.
fn assert_moments(samples: &[f64], mean: f64, var: f64) {
    let n = samples.len() as f64;
    let (m, v) = moments(samples);
    let se_mean = (var / n).sqrt();
    let se_var = var * (2.0 / (n - 1.0)).sqrt();
    assert!((m - mean).abs() <= 5.0 * se_mean, "mean {m} vs {mean}");
    assert!((v - var).abs() <= 5.0 * se_var, "var {v} vs {var}");
}

#[test]
fn forward_moments() {
    let s = build_schedule(1000, 1e-4, 0.02).unwrap();
    let z0 = mat(&[&[1.2, -0.7]]);
    for k in [1, 500, 1000] {
        let draws: Vec<Tensor<f64>> = (0..10_000).map(|t| forward_diffuse(&z0, k, &s, t).unwrap().0).collect();
        for j in 0..2 {
            let col: Vec<f64> = draws.iter().map(|d| d.data()[j]).collect();
            assert_moments(&col, s.alpha_bar(k).sqrt() * z0.data()[j], 1.0 - s.alpha_bar(k));
        }
    }
}

#[test]
fn iterated_noising_matches_closed_form() {
    let s = build_schedule(1000, 1e-4, 0.02).unwrap();
    let x0 = 1.3;
    for k in [1, 500, 1000] {
        let mut rng = seeded(k as u64);
        let mut samples = Vec::with_capacity(10_000);
        for _ in 0..10_000 {
            let noise = normals(&mut rng, k);
            let mut x = x0;
            for (r, e) in noise.iter().enumerate() {
                let b = s.beta(r + 1);
                x = (1.0 - b).sqrt() * x + b.sqrt() * e;
            }
            samples.push(x);
        }
        assert_moments(&samples, s.alpha_bar(k).sqrt() * x0, 1.0 - s.alpha_bar(k));
    }
}

#[test]
fn loss_with_oracle_stubs() {
    let s = build_schedule(50, 1e-3, 0.05).unwrap();
    let z0 = Tensor::<f64>::create(&[6, 3], Init::Normal { mean: 0.0, std: 1.0, seed: 2 }).unwrap();
    let perfect = diffusion_loss_with(&z0, &s, 1, |_, _| Ok(z0.clone())).unwrap();
    assert_eq!(perfect, 0.0);
    let zero = diffusion_loss_with(&z0, &s, 1, |zk, _| Tensor::zeros(zk.shape())).unwrap();
    let want = z0.data().iter().map(|v| v * v).sum::<f64>() / 6.0;
    assert!((zero - want).abs() < 1e-12);
}

#[test]
fn loss_gradients_match_finite_differences() {
    let model = DiffusionModel::<f64>::new(
        3,
        &DiffusionConfig { steps: 20, beta_start: 0.01, beta_end: 0.2, attn_dim: 2, seed: 6, ..Default::default() },
    )
    .unwrap();
    // Nonzero biases so their gradients are exercised away from init.
    let mut params: Vec<Tensor<f64>> = model
        .params()
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let noise = Tensor::<f64>::create(p.shape(), Init::Normal { mean: 0.0, std: 0.1, seed: 50 + i as u64 }).unwrap();
            let data = p.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect();
            Tensor::from_vec(p.shape(), data).unwrap()
        })
        .collect();
    let z0 = Tensor::create(&[5, 3], Init::Normal { mean: 0.0, std: 1.0, seed: 3 }).unwrap();
    let batch = noise_batch(&z0, &model.schedule, 12).unwrap();
    for shared in [false, true] {
        let per_row = Tensor::create(&[5, 3], Init::Normal { mean: 0.0, std: 1.0, seed: 4 }).unwrap();
        let set = Tensor::create(&[2, 3], Init::Normal { mean: 0.0, std: 1.0, seed: 5 }).unwrap();
        let errors = check_gradients(&mut params, 1e-6, |tape, vars| {
            let cond = if shared { Conditioning::Shared(&set) } else { Conditioning::PerRow(&per_row) };
            record_diffusion_loss(tape, vars, &z0, cond, &batch)
        })
        .unwrap();
        for (i, e) in errors.iter().enumerate() {
            assert!(*e <= 1e-4, "shared={shared} parameter {i}: {e}");
        }
    }
}

fn two_clusters(per: usize) -> (Tensor<f64>, Vec<i64>, PrototypeSet<f64>) {
    let a = Tensor::<f64>::create(&[per, 4], Init::Normal { mean: 0.0, std: 0.3, seed: 1 }).unwrap();
    let b = Tensor::<f64>::create(&[per, 4], Init::Normal { mean: 0.0, std: 0.3, seed: 2 }).unwrap();
    let ca = [2.0, 2.0, 0.0, -1.0];
    let cb = [-2.0, -1.0, 1.0, 1.0];
    let mut rows = Vec::new();
    for i in 0..per {
        rows.push(a.row(i).iter().zip(ca).map(|(x, c)| x + c).collect::<Vec<f64>>());
    }
    for i in 0..per {
        rows.push(b.row(i).iter().zip(cb).map(|(x, c)| x + c).collect::<Vec<f64>>());
    }
    let z = Tensor::from_rows(&rows).unwrap();
    let labels: Vec<i64> = (0..2 * per).map(|i| (i / per) as i64).collect();
    let means: Vec<Vec<f64>> = (0..2)
        .map(|c| (0..4).map(|j| (0..per).map(|i| rows[c * per + i][j]).sum::<f64>() / per as f64).collect())
        .collect();
    let protos = PrototypeSet::new(Tensor::from_rows(&means).unwrap(), vec![0, 1], PrototypeSource::Pseudo).unwrap();
    (z, labels, protos)
}

#[test]
fn one_epoch_smoke() {
    let (z, labels, protos) = two_clusters(5);
    let cfg = DiffusionConfig { epochs: 1, batch: 4, ..Default::default() };
    let (m, trace) = train_diffusion(&z, &labels, &protos, &cfg).unwrap();
    assert!(m.trained);
    assert_eq!(trace.losses.len(), 1);
    assert!(trace.losses[0].is_finite());
}

#[test]
fn noise_labels_are_skipped() {
    let (z, mut labels, protos) = two_clusters(5);
    labels[0] = -1;
    let cfg = DiffusionConfig { epochs: 1, batch: 4, ..Default::default() };
    assert!(train_diffusion(&z, &labels, &protos, &cfg).is_ok());
    let all_noise = vec![-1; 10];
    assert!(train_diffusion(&z, &all_noise, &protos, &cfg).is_err());
}

#[test]
fn training_and_sampling_are_deterministic() {
    let (z, labels, protos) = two_clusters(8);
    let cfg = DiffusionConfig { steps: 50, epochs: 3, batch: 5, seed: 9, ..Default::default() };
    let (a, ta) = train_diffusion(&z, &labels, &protos, &cfg).unwrap();
    let (b, tb) = train_diffusion(&z, &labels, &protos, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    let cond = protos.single(0).unwrap();
    let s1 = generate_samples(&a, &cond, 4, 3).unwrap();
    assert_eq!(s1, generate_samples(&a, &cond, 4, 3).unwrap());
    assert_eq!(s1.shape(), &[4, 4]);
    assert!(s1.data().iter().all(|v| v.is_finite()));
}

#[test]
fn single_step_sampling_is_the_posterior_mean() {
    let mut m = tiny_model(1);
    m.trained = true;
    let p = mat(&[&[0.3, -0.4]]);
    let cond = PrototypeSet::new(p.clone(), vec![0], PrototypeSource::Labeled).unwrap();
    let got = generate_samples(&m, &cond, 1, 21).unwrap();
    // K = 1: Z_1 is the first draw of the seeded stream; ᾱ_0 = 1, so the
    // posterior mean weights are β_1/(1 − ᾱ_1) = 1 on Ẑ_0 and 0 on Z_1.
    let z1 = normals(&mut seeded(21), 2);
    let x0 = oracle(&m, std::slice::from_ref(&z1), 1, &p.to_rows_f64());
    let s = &m.schedule;
    let a = s.alpha_bar(0).sqrt() * s.beta(1) / (1.0 - s.alpha_bar(1));
    let b = s.alpha(1).sqrt() * (1.0 - s.alpha_bar(0)) / (1.0 - s.alpha_bar(1));
    for j in 0..2 {
        let want = a * x0[0][j] + b * z1[j];
        assert!((got.data()[j] - want).abs() < 1e-12);
    }
}

#[test]
fn conditioned_samples_land_near_their_cluster() {
    let (z, labels, protos) = two_clusters(60);
    let cfg = DiffusionConfig { epochs: 300, batch: 40, lr: 0.005, seed: 2, ..Default::default() };
    let (m, trace) = train_diffusion(&z, &labels, &protos, &cfg).unwrap();
    assert!(trace.losses.last().unwrap() < &trace.losses[0]);
    let samples = generate_samples(&m, &protos.single(0).unwrap(), 200, 77).unwrap();
    let dist = |x: &[f64], c: &[f64]| x.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let hits = (0..200)
        .filter(|&i| dist(samples.row(i), protos.prototypes.row(0)) < dist(samples.row(i), protos.prototypes.row(1)))
        .count();
    assert!(hits >= 180, "{hits}/200 samples closer to the target cluster");
}
