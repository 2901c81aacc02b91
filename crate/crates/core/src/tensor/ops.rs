//! Kernels shared by the tape and by gradient-free callers.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// Elementwise maps available on the tape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    Neg,
    Scale(f64),
}

impl Unary {
    #[inline]
    pub(crate) fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Unary::Relu => x.max(T::zero()),
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Exp => x.exp(),
            Unary::Neg => -x,
            Unary::Scale(c) => x * T::of(c),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    #[inline]
    pub(crate) fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Unary::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Unary::Sigmoid => y * (T::one() - y),
            Unary::Tanh => T::one() - y * y,
            Unary::Exp => y,
            Unary::Neg => -T::one(),
            Unary::Scale(c) => T::of(c),
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `out (+)= op(a) * op(b)` for row-major matrices; `op` optionally transposes.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    a: &[T],
    a_dims: (usize, usize),
    a_t: bool,
    b: &[T],
    b_dims: (usize, usize),
    b_t: bool,
    out: &mut [T],
    accumulate: bool,
) {
    let (m, k) = if a_t { (a_dims.1, a_dims.0) } else { a_dims };
    let (k2, n) = if b_t { (b_dims.1, b_dims.0) } else { b_dims };
    assert_eq!(k, k2, "gemm inner dimensions");
    assert_eq!(out.len(), m * n, "gemm output size");
    assert_eq!(a.len(), a_dims.0 * a_dims.1);
    assert_eq!(b.len(), b_dims.0 * b_dims.1);
    let (rsa, csa) = if a_t { (1, a_dims.1 as isize) } else { (a_dims.1 as isize, 1) };
    let (rsb, csb) = if b_t { (1, b_dims.1 as isize) } else { (b_dims.1 as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above pin every buffer to the extents implied by
    // (m, k, n) and the strides; `out` is a distinct mutable borrow.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Shape of `a ∘ b` under trailing-dimension alignment with size-1 expansion.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::ShapeMismatch(format!("cannot broadcast {a:?} with {b:?}")));
            }
        };
    }
    Ok(out)
}

/// Per-output-dimension strides into an operand of `shape` (0 where expanded).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - shape.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visits every output index with the flat offsets of both operands.
pub(crate) fn for_each_broadcast(
    out_shape: &[usize],
    a_shape: &[usize],
    b_shape: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total: usize = out_shape.iter().product();
    if a_shape == out_shape && b_shape == out_shape {
        for i in 0..total {
            f(i, i, i);
        }
        return;
    }
    let sa = broadcast_strides(a_shape, out_shape);
    let sb = broadcast_strides(b_shape, out_shape);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..total {
        f(o, ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            ia -= sa[d] * out_shape[d];
            ib -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

/// Standalone matrix product of two 2-D tensors.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::ShapeMismatch(format!(
            "matmul {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![T::zero(); m * n];
    gemm(a.data(), (m, k), false, b.data(), (k, n), false, &mut out, false);
    Ok(Tensor::from_parts(vec![m, n], out))
}

pub(crate) fn softmax_rows_into<T: Scalar>(x: &[T], cols: usize, out: &mut [T]) {
    for (row, orow) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
}

/// Row-wise softmax of a matrix, computed with max-subtraction.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape().len() != 2 {
        return Err(Error::InvalidShape(format!("softmax_rows needs a matrix, got {:?}", x.shape())));
    }
    let mut out = vec![T::zero(); x.len()];
    softmax_rows_into(x.data(), x.cols(), &mut out);
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Which origin map a [`radial_rows`] pass applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Radial {
    Exp,
    Log,
}

/// Per-row coefficients of a map `y = g(‖x‖)·x`: the scale `g` and
/// `(f'(r) − g)/r²` with `f(r) = r·g(r)`, which is what the Jacobian needs.
#[derive(Clone, Copy, Debug)]
pub(crate) struct RadialRow<T> {
    pub scale: T,
    pub coef: T,
}

/// Origin exponential / logarithmic maps applied to every row, with the
/// ball clamp folded in. `sqrt_c` is `√|c|`.
pub(crate) fn radial_rows<T: Scalar>(
    x: &[T],
    cols: usize,
    sqrt_c: f64,
    kind: Radial,
    out: &mut [T],
) -> Vec<RadialRow<T>> {
    let limit = 1.0 - crate::geometry::BOUNDARY_EPS;
    let s = sqrt_c;
    let mut cache = Vec::with_capacity(x.len() / cols.max(1));
    for (row, orow) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let r = row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
        let u = s * r;
        let (scale, coef) = if u < 1e-4 {
            // Series around r = 0 (the removable singularity).
            match kind {
                Radial::Exp => (1.0 - u * u / 3.0, -2.0 * s * s / 3.0),
                Radial::Log => (1.0 + u * u / 3.0, 2.0 * s * s / 3.0),
            }
        } else {
            let (f, df) = match kind {
                Radial::Exp => {
                    let t = u.tanh();
                    if t >= limit {
                        (limit / s, 0.0)
                    } else {
                        (t / s, 1.0 - t * t)
                    }
                }
                Radial::Log => {
                    if u >= limit {
                        (limit.atanh() / s, 0.0)
                    } else {
                        (u.atanh() / s, 1.0 / (1.0 - u * u))
                    }
                }
            };
            let g = f / r;
            (g, (df - g) / (r * r))
        };
        let scale_t = T::of(scale);
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = v * scale_t;
        }
        cache.push(RadialRow { scale: scale_t, coef: T::of(coef) });
    }
    cache
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_matrix() {
        let eye = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul(&eye, &m).unwrap().data(), m.data());
    }

    #[test]
    fn hand_product() {
        let a = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f64>::from_vec(&[2, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn inner_dimension_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 3]).unwrap();
        let b = Tensor::<f64>::zeros(&[4, 2]).unwrap();
        assert!(matches!(matmul(&a, &b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn transposed_gemm() {
        // [[1,2],[3,4]] · [[1,2],[3,4]]ᵀ = [[5,11],[11,25]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let mut out = [0.0; 4];
        gemm(&a, (2, 2), false, &a, (2, 2), true, &mut out, false);
        assert_eq!(out, [5.0, 11.0, 11.0, 25.0]);
        gemm(&a, (2, 2), true, &a, (2, 2), false, &mut out, false);
        assert_eq!(out, [10.0, 14.0, 14.0, 20.0]);
    }

    #[test]
    fn broadcasting_rules() {
        assert_eq!(broadcast_shape(&[3, 4], &[4]).unwrap(), vec![3, 4]);
        assert_eq!(broadcast_shape(&[3, 1], &[1, 4]).unwrap(), vec![3, 4]);
        assert_eq!(broadcast_shape(&[2, 3], &[2, 3]).unwrap(), vec![2, 3]);
        assert!(broadcast_shape(&[3, 4], &[3]).is_err());

        let mut seen = Vec::new();
        for_each_broadcast(&[2, 3], &[2, 3], &[3], |o, a, b| seen.push((o, a, b)));
        assert_eq!(seen[4], (4, 4, 1));
        let mut seen = Vec::new();
        for_each_broadcast(&[2, 3], &[2, 1], &[1, 3], |o, a, b| seen.push((o, a, b)));
        assert_eq!(seen, vec![(0, 0, 0), (1, 0, 1), (2, 0, 2), (3, 1, 0), (4, 1, 1), (5, 1, 2)]);
    }

    #[test]
    fn softmax_examples() {
        let x = Tensor::<f64>::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap();
        assert_eq!(softmax_rows(&x).unwrap().data(), &[0.5, 0.5]);
        let x = Tensor::<f64>::from_vec(&[1, 2], vec![1000.0, 1000.0]).unwrap();
        assert_eq!(softmax_rows(&x).unwrap().data(), &[0.5, 0.5]);
        let x = Tensor::<f64>::from_vec(&[1, 2], vec![std::f64::consts::LN_2, 0.0]).unwrap();
        let y = softmax_rows(&x).unwrap();
        assert!((y.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((y.data()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn unary_values() {
        assert_eq!(
            [-1.0, 0.0, 2.0].map(|v: f64| Unary::Relu.apply(v)),
            [0.0, 0.0, 2.0]
        );
        assert_eq!(Unary::Sigmoid.apply(0.0f64), 0.5);
        // tanh(0.5) from the series/continued fraction at 30 digits: 0.462117157260009758502318483643
        assert!((Unary::Tanh.apply(0.5f64) - 0.462_117_157_260_009_76).abs() < 1e-16);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(1000.0f64) - 1000.0).abs() < 1e-12);
        assert!(softplus(-1000.0f64) >= 0.0);
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
