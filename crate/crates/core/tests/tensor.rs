use impress_core::tensor::gradcheck::check_gradients;
use impress_core::tensor::{softmax_rows, Init, Tape, Tensor, Unary, Var};
use impress_core::Result;
use proptest::prelude::*;

#[derive(Clone, Copy, Debug)]
enum Op {
    Matmul,
    MatmulNt,
    AddRow,
    Sub,
    Mul,
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    Neg,
    Scale,
    Clamp,
    Softmax,
    Sum,
    Mean,
    RowSum,
    ExpMap,
    LogMap,
    Bce,
    CrossEntropy,
}

const OPS: [Op; 20] = [
    Op::Matmul,
    Op::MatmulNt,
    Op::AddRow,
    Op::Sub,
    Op::Mul,
    Op::Relu,
    Op::Sigmoid,
    Op::Tanh,
    Op::Exp,
    Op::Neg,
    Op::Scale,
    Op::Clamp,
    Op::Softmax,
    Op::Sum,
    Op::Mean,
    Op::RowSum,
    Op::ExpMap,
    Op::LogMap,
    Op::Bce,
    Op::CrossEntropy,
];

/// Reduces any output to a scalar through fixed random weights so every
/// output entry contributes a distinct gradient.
fn weighted(tape: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(v).to_vec();
    let w = Tensor::<f64>::create(&shape, Init::Uniform { low: 0.5, high: 1.5, seed })?;
    let w = tape.leaf(&w);
    let p = tape.mul(v, w)?;
    tape.sum(p)
}

fn record(op: Op, tape: &mut Tape<f64>, p: &[Var], rows: usize, seed: u64) -> Result<Var> {
    let (a, b, c) = (p[0], p[1], p[2]);
    let out = match op {
        Op::Matmul => tape.matmul(a, b)?,
        Op::MatmulNt => tape.matmul_nt(a, a)?,
        Op::AddRow => tape.add(a, c)?,
        Op::Sub => tape.sub(a, a)?,
        Op::Mul => {
            let t = tape.map(a, Unary::Tanh)?;
            tape.mul(a, t)?
        }
        Op::Relu => tape.relu(a)?,
        Op::Sigmoid => tape.sigmoid(a)?,
        Op::Tanh => tape.map(a, Unary::Tanh)?,
        Op::Exp => tape.exp(a)?,
        Op::Neg => tape.map(a, Unary::Neg)?,
        Op::Scale => tape.scale(a, -1.7)?,
        Op::Clamp => tape.clamp(a, -0.4, 0.6)?,
        Op::Softmax => tape.softmax_rows(a)?,
        Op::Sum => return tape.sum(a),
        Op::Mean => return tape.mean(a),
        Op::RowSum => tape.row_sum(a)?,
        Op::ExpMap => tape.expmap0_rows(a, 0.8)?,
        Op::LogMap => {
            let e = tape.expmap0_rows(a, 1.3)?;
            tape.logmap0_rows(e, 1.3)?
        }
        Op::Bce => {
            let target: Vec<f64> = (0..tape.value(a).len()).map(|i| (i as u64 ^ seed).is_multiple_of(3) as u8 as f64).collect();
            return tape.bce_with_logits_sum(a, &target, 3.0);
        }
        Op::CrossEntropy => {
            let cols = tape.shape(a)[1];
            let targets: Vec<usize> = (0..rows).map(|i| (i + seed as usize) % cols).collect();
            return tape.cross_entropy(a, &targets);
        }
    };
    weighted(tape, out, seed ^ 0xABCD)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn every_op_matches_finite_differences(
        op in proptest::sample::select(OPS.to_vec()),
        rows in 1usize..5,
        cols in 1usize..5,
        inner in 1usize..5,
        seed in any::<u64>(),
    ) {
        let init = |s: u64| Init::Normal { mean: 0.0, std: 0.8, seed: seed.wrapping_add(s) };
        let mut params = vec![
            Tensor::<f64>::create(&[rows, cols], init(1)).unwrap(),
            Tensor::<f64>::create(&[cols, inner], init(2)).unwrap(),
            Tensor::<f64>::create(&[cols], init(3)).unwrap(),
        ];
        let kink = |x: f64| [0.0, -0.4, 0.6].iter().any(|k| (x - k).abs() < 1e-4);
        prop_assume!(!params[0].data().iter().any(|&x| kink(x)));
        let errors = check_gradients(&mut params, 1e-6, |tape, p| record(op, tape, p, rows, seed)).unwrap();
        for (i, e) in errors.iter().enumerate() {
            prop_assert!(*e <= 1e-4, "{op:?} parameter {i}: relative error {e}");
        }
    }

    #[test]
    fn softmax_rows_are_distributions_and_shift_invariant(
        rows in 1usize..6,
        cols in 1usize..8,
        seed in any::<u64>(),
        shift in -50.0f64..50.0,
    ) {
        let x = Tensor::<f64>::create(&[rows, cols], Init::Normal { mean: 0.0, std: 5.0, seed }).unwrap();
        let s = softmax_rows(&x).unwrap();
        for r in 0..rows {
            let total: f64 = (0..cols).map(|c| s.at(r, c)).sum();
            prop_assert!((total - 1.0).abs() <= 1e-6);
        }
        let shifted = Tensor::from_vec(&[rows, cols], x.data().iter().map(|v| v + shift).collect()).unwrap();
        let t = softmax_rows(&shifted).unwrap();
        for (a, b) in s.data().iter().zip(t.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn seeded_creation_is_bit_identical(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
        let a = Tensor::<f32>::create(&[rows, cols], Init::Normal { mean: 0.0, std: 1.0, seed }).unwrap();
        let b = Tensor::<f32>::create(&[rows, cols], Init::Normal { mean: 0.0, std: 1.0, seed }).unwrap();
        prop_assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
