use impress_core::geometry::*;
use proptest::prelude::*;

const CASES: u32 = 1000;

fn curvature() -> impl Strategy<Value = Curvature> {
    (0.1f64..2.0).prop_map(|m| Curvature::new(m).unwrap())
}

/// Vector with a uniformly drawn direction and norm in `[0, max)`.
fn scaled(dim: usize, max: f64) -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(-1.0f64..1.0, dim), 0.0..max).prop_map(|(v, r)| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-9 {
            vec![0.0; v.len()]
        } else {
            v.iter().map(|x| x * r / n).collect()
        }
    })
}

fn point(v: Vec<f64>, c: Curvature) -> BallPoint<f64> {
    BallPoint::new(v, c).unwrap()
}

/// `(c, dim, x)` with `x` at most `frac` of the radius from the origin.
fn ball(frac: f64) -> impl Strategy<Value = (Curvature, usize, Vec<f64>)> {
    (curvature(), 1usize..8).prop_flat_map(move |(c, d)| (Just(c), Just(d), scaled(d, frac * c.radius())))
}

fn inf_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: CASES,
        rng_seed: prop::test_runner::RngSeed::Fixed(0x1A2B),
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn log_inverts_exp(
        (c, b, v) in ball(0.7).prop_flat_map(|(c, d, b)| (Just(c), Just(b), scaled(d, 3.0)))
    ) {
        let base = point(b, c);
        let u = exp_map(&v, &base).unwrap();
        let back = log_map(&u, &base).unwrap();
        let err = inf_norm_diff(back.coords(), &v);
        prop_assert!(
            err <= 1e-6,
            "error {err:e} at c {}, |base|/radius {}, |exp|/max_norm {}",
            c.magnitude(),
            base.norm() / c.radius(),
            u.norm() / c.max_norm()
        );
    }

    #[test]
    fn mobius_identities((c, _d, x) in ball(0.999)) {
        let x = point(x, c);
        let right = mobius_add(&x, &BallPoint::origin(x.dim(), c)).unwrap();
        prop_assert!(inf_norm_diff(right.coords(), x.coords()) <= 1e-9);
        let inverse = mobius_add(&x.negate(), &x).unwrap();
        prop_assert!(inverse.coords().iter().all(|a| a.abs() <= 1e-9));
    }

    #[test]
    fn distance_axioms(
        (c, x, y, z) in (curvature(), 1usize..6).prop_flat_map(|(c, d)| {
            let r = 0.95 * c.radius();
            (Just(c), scaled(d, r), scaled(d, r), scaled(d, r))
        })
    ) {
        let (x, y, z) = (point(x, c), point(y, c), point(z, c));
        let xy = hyperbolic_distance(&x, &y).unwrap();
        prop_assert!(xy >= 0.0);
        prop_assert!((xy - hyperbolic_distance(&y, &x).unwrap()).abs() <= 1e-7);
        prop_assert!(hyperbolic_distance(&x, &x).unwrap() <= 1e-7);
        let via = hyperbolic_distance(&x, &z).unwrap() + hyperbolic_distance(&z, &y).unwrap();
        prop_assert!(xy <= via + 1e-7, "{xy} > {via}");
    }

    #[test]
    fn every_result_stays_in_the_ball(
        (c, d, b) in ball(0.999),
        big in 0.0f64..100.0,
        far in prop::collection::vec(-50.0f64..50.0, 7),
    ) {
        let bound = c.max_norm();
        let base = point(b, c);
        let v: Vec<f64> = far[..d].to_vec();
        let scaled_v: Vec<f64> = v.iter().map(|x| x * big).collect();
        let results = [
            exp_map0(&scaled_v, c).unwrap(),
            exp_map(&v, &base).unwrap(),
            clamp_to_ball(&scaled_v, c).unwrap(),
            mobius_add(&base, &exp_map0(&v, c).unwrap()).unwrap(),
        ];
        for r in &results {
            prop_assert!(r.norm() <= bound, "{} > {bound}", r.norm());
        }
    }

    #[test]
    fn f32_results_stay_in_the_ball(c in curvature(), v in prop::collection::vec(-50.0f32..50.0, 1..6)) {
        let p = exp_map0(&v, c).unwrap();
        prop_assert!(p.norm() <= c.max_norm());
    }
}

#[test]
fn limit_of_vanishing_curvature() {
    let c = Curvature::new(1e-6).unwrap();
    let v = [0.5f64, -1.2, 2.0, 0.1];
    let y = exp_map0(&v, c).unwrap();
    for (a, b) in y.coords().iter().zip(v) {
        assert!(((a - b) / b).abs() <= 1e-3);
    }
}

#[test]
fn saturated_exp_is_clamped() {
    let c = Curvature::new(1.0).unwrap();
    let y = exp_map0(&[50.0f64, 0.0], c).unwrap();
    assert!(y.norm() < c.radius());
    assert!(y.norm() <= c.max_norm());
}

#[test]
fn worked_distances() {
    let c = Curvature::new(1.0).unwrap();
    let o = BallPoint::origin(2, c);
    let y = point(vec![0.5, 0.0], c);
    let expected = 2.0 * 0.5f64.atanh();
    assert!((hyperbolic_distance(&o, &y).unwrap() - expected).abs() < 1e-12);
    let s = mobius_add(&point(vec![0.3, 0.0], c), &point(vec![0.4, 0.0], c)).unwrap();
    let closed = (0.3f64.atanh() + 0.4f64.atanh()).tanh();
    assert!((s.coords()[0] - closed).abs() < 1e-12);
    let l = log_map0(&y).unwrap();
    assert!((l.coords()[0] - 0.5f64.atanh()).abs() < 1e-12);
}
