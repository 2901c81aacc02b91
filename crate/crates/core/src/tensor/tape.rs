use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::ops::{
    broadcast_shape, for_each_broadcast, gemm, radial_rows, sigmoid, softmax_rows_into, softplus,
    Radial, RadialRow, Unary,
};
use super::{check_shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Binary { a: Var, b: Var, kind: Binary },
    Unary { a: Var, f: Unary },
    Clamp { a: Var, lo: T, hi: T },
    SoftmaxRows { a: Var },
    Sum { a: Var },
    Mean { a: Var },
    RowSum { a: Var },
    Radial { a: Var, rows: Vec<RadialRow<T>> },
    BceLogits { logits: Var, target: Vec<T>, pos_weight: T },
    CrossEntropy { logits: Var, targets: Vec<usize> },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a computation for one reverse pass.
///
/// Nodes are appended in evaluation order, so reverse insertion order is a
/// valid topological order for backpropagation. Every recorded value is
/// checked for finiteness. Leaf gradients accumulate across calls to
/// [`Tape::backward`] until [`Tape::zero_grad`].
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), leaf_grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        if let Some(i) = value.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{} output element {i}",
                op_name(&op)
            )));
        }
        self.nodes.push(Node { shape, value, op, requires_grad });
        self.leaf_grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a tensor; it participates in differentiation when the
    /// tensor has `requires_grad` set.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            op: Op::Leaf,
            requires_grad: t.requires_grad(),
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Records a tensor as a differentiable parameter regardless of its flag.
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        let v = self.leaf(t);
        self.nodes[v.0].requires_grad = true;
        v
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::ShapeMismatch(format!("{shape:?} with {} values", data.len())));
        }
        self.push(shape.to_vec(), data, Op::Leaf, false)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::from_parts(n.shape.clone(), n.value.clone())
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.leaf_grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    fn matrix_dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.nodes[v.0].shape.as_slice() {
            &[r, c] => Ok((r, c)),
            s => Err(Error::ShapeMismatch(format!("{what} expects a matrix, got {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let bd = self.matrix_dims(b, "matmul")?;
        let (k2, n) = if trans_b { (bd.1, bd.0) } else { bd };
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul {:?} x {:?}{}",
                self.shape(a),
                self.shape(b),
                if trans_b { "ᵀ" } else { "" }
            )));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(self.value(a), (m, k), false, self.value(b), bd, trans_b, &mut out, false);
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        self.push(vec![m, n], out, Op::MatMul { a, b, trans_b }, rg)
    }

    fn binary(&mut self, a: Var, b: Var, kind: Binary) -> Result<Var> {
        let sa = self.nodes[a.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        let shape = broadcast_shape(&sa, &sb)?;
        let total: usize = shape.iter().product();
        let mut out = vec![T::zero(); total];
        {
            let va = &self.nodes[a.0].value;
            let vb = &self.nodes[b.0].value;
            for_each_broadcast(&shape, &sa, &sb, |o, ia, ib| {
                out[o] = match kind {
                    Binary::Add => va[ia] + vb[ib],
                    Binary::Sub => va[ia] - vb[ib],
                    Binary::Mul => va[ia] * vb[ib],
                }
            });
        }
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        self.push(shape, out, Op::Binary { a, b, kind }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn map(&mut self, a: Var, f: Unary) -> Result<Var> {
        let out = self.nodes[a.0].value.iter().map(|&x| f.apply(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(shape, out, Op::Unary { a, f }, rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Unary::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, Unary::Sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map(a, Unary::Exp)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, Unary::Scale(c))
    }

    /// Elementwise clamp; the gradient passes only inside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let (lo, hi) = (T::of(lo), T::of(hi));
        let out = self.nodes[a.0].value.iter().map(|&x| x.max(lo).min(hi)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(shape, out, Op::Clamp { a, lo, hi }, rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (_, cols) = self.matrix_dims(a, "softmax_rows")?;
        let mut out = vec![T::zero(); self.nodes[a.0].value.len()];
        softmax_rows_into(&self.nodes[a.0].value, cols, &mut out);
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(shape, out, Op::SoftmaxRows { a }, rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].value.iter().copied().sum();
        let rg = self.nodes[a.0].requires_grad;
        self.push(vec![1], vec![s], Op::Sum { a }, rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        let s = v.iter().copied().sum::<T>() / T::of(v.len() as f64);
        let rg = self.nodes[a.0].requires_grad;
        self.push(vec![1], vec![s], Op::Mean { a }, rg)
    }

    /// Sums each row of a matrix into an `m×1` column.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let (m, cols) = self.matrix_dims(a, "row_sum")?;
        let out = self.nodes[a.0].value.chunks(cols).map(|r| r.iter().copied().sum()).collect();
        let rg = self.nodes[a.0].requires_grad;
        self.push(vec![m, 1], out, Op::RowSum { a }, rg)
    }

    fn radial(&mut self, a: Var, sqrt_c: f64, kind: Radial) -> Result<Var> {
        let (_, cols) = self.matrix_dims(a, "origin map")?;
        let mut out = vec![T::zero(); self.nodes[a.0].value.len()];
        let rows = radial_rows(&self.nodes[a.0].value, cols, sqrt_c, kind, &mut out);
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(shape, out, Op::Radial { a, rows }, rg)
    }

    /// Row-wise exponential map at the origin, clamped into the ball.
    pub fn expmap0_rows(&mut self, a: Var, curvature: f64) -> Result<Var> {
        self.radial(a, curvature.sqrt(), Radial::Exp)
    }

    /// Row-wise logarithmic map at the origin.
    pub fn logmap0_rows(&mut self, a: Var, curvature: f64) -> Result<Var> {
        self.radial(a, curvature.sqrt(), Radial::Log)
    }

    /// Sum over all entries of the weighted binary cross-entropy between
    /// `sigmoid(logits)` and `target`; positives are weighted by `pos_weight`.
    pub fn bce_with_logits_sum(&mut self, logits: Var, target: &[T], pos_weight: f64) -> Result<Var> {
        let x = &self.nodes[logits.0].value;
        if x.len() != target.len() {
            return Err(Error::ShapeMismatch(format!(
                "bce logits {} vs target {}",
                x.len(),
                target.len()
            )));
        }
        let w = T::of(pos_weight);
        let loss = x
            .iter()
            .zip(target)
            .map(|(&x, &y)| w * y * softplus(-x) + (T::one() - y) * softplus(x))
            .sum();
        let rg = self.nodes[logits.0].requires_grad;
        self.push(
            vec![1],
            vec![loss],
            Op::BceLogits { logits, target: target.to_vec(), pos_weight: w },
            rg,
        )
    }

    /// Mean softmax cross-entropy of row logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, n) = self.matrix_dims(logits, "cross_entropy")?;
        if targets.len() != m {
            return Err(Error::ShapeMismatch(format!("{} targets for {m} rows", targets.len())));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= n) {
            return Err(Error::Label(format!("target class {t} with {n} logits")));
        }
        let x = &self.nodes[logits.0].value;
        let mut loss = T::zero();
        for (row, &t) in x.chunks(n).zip(targets) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            loss += lse - row[t];
        }
        loss /= T::of(m as f64);
        let rg = self.nodes[logits.0].requires_grad;
        self.push(vec![1], vec![loss], Op::CrossEntropy { logits, targets: targets.to_vec() }, rg)
    }

    /// Reverse pass from a scalar node; adds into the leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::InvalidShape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    match &mut self.leaf_grads[i] {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &v)| *a += v),
                        slot @ None => *slot = Some(g),
                    }
                    continue;
                }
                Op::MatMul { a, b, trans_b } => {
                    let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let bd = (self.nodes[b.0].shape[0], self.nodes[b.0].shape[1]);
                    let n = node.shape[1];
                    if self.nodes[a.0].requires_grad {
                        // dA = G · op(B)ᵀ
                        let ga = slot(&mut grads, *a, m * k);
                        gemm(&g, (m, n), false, &self.nodes[b.0].value, bd, !trans_b, ga, true);
                    }
                    if self.nodes[b.0].requires_grad {
                        let gb = slot(&mut grads, *b, bd.0 * bd.1);
                        if *trans_b {
                            // B is n×k: dB = Gᵀ · A
                            gemm(&g, (m, n), true, &self.nodes[a.0].value, (m, k), false, gb, true);
                        } else {
                            // dB = Aᵀ · G
                            gemm(&self.nodes[a.0].value, (m, k), true, &g, (m, n), false, gb, true);
                        }
                    }
                }
                Op::Binary { a, b, kind } => {
                    let (a, b, kind) = (*a, *b, *kind);
                    let sa = self.nodes[a.0].shape.clone();
                    let sb = self.nodes[b.0].shape.clone();
                    let (ra, rb) = (self.nodes[a.0].requires_grad, self.nodes[b.0].requires_grad);
                    let la = self.nodes[a.0].value.len();
                    let lb = self.nodes[b.0].value.len();
                    let mut ga = if ra { Some(vec![T::zero(); la]) } else { None };
                    let mut gb = if rb { Some(vec![T::zero(); lb]) } else { None };
                    {
                        let va = &self.nodes[a.0].value;
                        let vb = &self.nodes[b.0].value;
                        for_each_broadcast(&node.shape, &sa, &sb, |o, ia, ib| {
                            let go = g[o];
                            let (da, db) = match kind {
                                Binary::Add => (go, go),
                                Binary::Sub => (go, -go),
                                Binary::Mul => (go * vb[ib], go * va[ia]),
                            };
                            if let Some(ga) = ga.as_mut() {
                                ga[ia] += da;
                            }
                            if let Some(gb) = gb.as_mut() {
                                gb[ib] += db;
                            }
                        });
                    }
                    if let Some(ga) = ga {
                        add_into(slot(&mut grads, a, la), &ga);
                    }
                    if let Some(gb) = gb {
                        add_into(slot(&mut grads, b, lb), &gb);
                    }
                }
                Op::Unary { a, f } => {
                    if self.nodes[a.0].requires_grad {
                        let x = &self.nodes[a.0].value;
                        let y = &node.value;
                        let ga = slot(&mut grads, *a, x.len());
                        for j in 0..x.len() {
                            ga[j] += g[j] * f.derivative(x[j], y[j]);
                        }
                    }
                }
                Op::Clamp { a, lo, hi } => {
                    if self.nodes[a.0].requires_grad {
                        let x = &self.nodes[a.0].value;
                        let ga = slot(&mut grads, *a, x.len());
                        for j in 0..x.len() {
                            if x[j] >= *lo && x[j] <= *hi {
                                ga[j] += g[j];
                            }
                        }
                    }
                }
                Op::SoftmaxRows { a } => {
                    if self.nodes[a.0].requires_grad {
                        let cols = node.shape[1];
                        let y = &node.value;
                        let ga = slot(&mut grads, *a, y.len());
                        for ((yr, gr), gar) in y.chunks(cols).zip(g.chunks(cols)).zip(ga.chunks_mut(cols)) {
                            let dot: T = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                            for j in 0..cols {
                                gar[j] += yr[j] * (gr[j] - dot);
                            }
                        }
                    }
                }
                Op::Sum { a } => {
                    if self.nodes[a.0].requires_grad {
                        let len = self.nodes[a.0].value.len();
                        slot(&mut grads, *a, len).iter_mut().for_each(|v| *v += g[0]);
                    }
                }
                Op::Mean { a } => {
                    if self.nodes[a.0].requires_grad {
                        let len = self.nodes[a.0].value.len();
                        let share = g[0] / T::of(len as f64);
                        slot(&mut grads, *a, len).iter_mut().for_each(|v| *v += share);
                    }
                }
                Op::RowSum { a } => {
                    if self.nodes[a.0].requires_grad {
                        let cols = self.nodes[a.0].shape[1];
                        let len = self.nodes[a.0].value.len();
                        let ga = slot(&mut grads, *a, len);
                        for (r, gar) in ga.chunks_mut(cols).enumerate() {
                            gar.iter_mut().for_each(|v| *v += g[r]);
                        }
                    }
                }
                Op::Radial { a, rows } => {
                    if self.nodes[a.0].requires_grad {
                        let cols = node.shape[1];
                        let x = &self.nodes[a.0].value;
                        let ga = slot(&mut grads, *a, x.len());
                        for (((xr, gr), gar), rc) in x
                            .chunks(cols)
                            .zip(g.chunks(cols))
                            .zip(ga.chunks_mut(cols))
                            .zip(rows)
                        {
                            let dot: T = xr.iter().zip(gr).map(|(&x, &g)| x * g).sum();
                            for j in 0..cols {
                                gar[j] += rc.scale * gr[j] + rc.coef * dot * xr[j];
                            }
                        }
                    }
                }
                Op::BceLogits { logits, target, pos_weight } => {
                    if self.nodes[logits.0].requires_grad {
                        let x = &self.nodes[logits.0].value;
                        let gl = slot(&mut grads, *logits, x.len());
                        for j in 0..x.len() {
                            let p = sigmoid(x[j]);
                            let y = target[j];
                            gl[j] += g[0] * (*pos_weight * y * (p - T::one()) + (T::one() - y) * p);
                        }
                    }
                }
                Op::CrossEntropy { logits, targets } => {
                    if self.nodes[logits.0].requires_grad {
                        let n = self.nodes[logits.0].shape[1];
                        let x = &self.nodes[logits.0].value;
                        let m = targets.len();
                        let mut probs = vec![T::zero(); x.len()];
                        softmax_rows_into(x, n, &mut probs);
                        let share = g[0] / T::of(m as f64);
                        let gl = slot(&mut grads, *logits, x.len());
                        for (r, &t) in targets.iter().enumerate() {
                            for j in 0..n {
                                let onehot = if j == t { T::one() } else { T::zero() };
                                gl[r * n + j] += share * (probs[r * n + j] - onehot);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul { .. } => "matmul",
        Op::Binary { .. } => "elementwise",
        Op::Unary { .. } => "map",
        Op::Clamp { .. } => "clamp",
        Op::SoftmaxRows { .. } => "softmax_rows",
        Op::Sum { .. } => "sum",
        Op::Mean { .. } => "mean",
        Op::RowSum { .. } => "row_sum",
        Op::Radial { .. } => "origin map",
        Op::BceLogits { .. } => "bce",
        Op::CrossEntropy { .. } => "cross_entropy",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::check_gradients;
    use crate::tensor::Init;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap().with_grad()
    }

    #[test]
    fn gradient_of_sum_is_ones() {
        let x = t(&[3], &[1.0, -2.0, 5.0]);
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let s = tape.sum(v).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(v).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn gradient_of_square() {
        let x = t(&[1], &[2.0]);
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let sq = tape.mul(v, v).unwrap();
        let s = tape.sum(sq).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(v).unwrap(), &[4.0]);
        // a second pass accumulates
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(v).unwrap(), &[8.0]);
        tape.zero_grad();
        assert!(tape.grad(v).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let x = t(&[2], &[1.0, 2.0]);
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        assert!(matches!(tape.backward(v), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn broadcasting_add_reduces_gradient() {
        let x = t(&[2, 3], &[1.0; 6]);
        let b = t(&[3], &[0.5, 0.5, 0.5]);
        let mut tape = Tape::new();
        let (vx, vb) = (tape.leaf(&x), tape.leaf(&b));
        let y = tape.add(vx, vb).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(vb).unwrap(), &[2.0, 2.0, 2.0]);
        let bad = tape.leaf(&t(&[2], &[0.0, 0.0]));
        assert!(matches!(tape.add(vx, bad), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn non_finite_outputs_are_errors() {
        let x = t(&[1], &[1000.0]);
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        assert!(matches!(tape.exp(v), Err(Error::NonFinite(_))));
    }

    #[test]
    fn composite_gradients_match_finite_differences() {
        let init = |seed| Init::Normal { mean: 0.0, std: 0.7, seed };
        let mut params = vec![
            Tensor::<f64>::create(&[4, 3], init(1)).unwrap(),
            Tensor::<f64>::create(&[3, 5], init(2)).unwrap(),
            Tensor::<f64>::create(&[5], init(3)).unwrap(),
            Tensor::<f64>::create(&[2, 5], init(4)).unwrap(),
        ];
        let target: Vec<f64> = (0..16).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let report = check_gradients(&mut params, 1e-5, |tape, p| {
            let h = tape.matmul(p[0], p[1])?;
            let h = tape.add(h, p[2])?;
            let h = tape.map(h, Unary::Tanh)?;
            let e = tape.expmap0_rows(h, 0.7)?;
            let l = tape.logmap0_rows(e, 0.7)?;
            let s = tape.sigmoid(l)?;
            let a = tape.matmul_nt(s, p[3])?;
            let a = tape.softmax_rows(a)?;
            let k = tape.matmul(a, p[3])?;
            let k = tape.relu(k)?;
            let logits = tape.matmul_nt(k, k)?;
            let bce = tape.bce_with_logits_sum(logits, &target, 2.5)?;
            let ce = tape.cross_entropy(k, &[0, 1, 4, 2])?;
            let rs = tape.row_sum(k)?;
            let rs = tape.clamp(rs, -100.0, 100.0)?;
            let rs = tape.mean(rs)?;
            let t1 = tape.add(bce, ce)?;
            let e2 = tape.exp(rs)?;
            let t2 = tape.sub(t1, e2)?;
            tape.scale(t2, 0.3)
        })
        .unwrap();
        for (i, r) in report.iter().enumerate() {
            assert!(*r <= 1e-6, "param {i}: relative error {r}");
        }
    }
}
