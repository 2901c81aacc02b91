//! Dense row-major tensors, a reverse-mode differentiation tape and Adam.
//!
//! Parameters live in [`Tensor`]s owned by the models. A training step binds
//! them into a fresh [`Tape`], records the forward computation, runs
//! [`Tape::backward`] and copies the leaf gradients back with
//! [`Tensor::accumulate_grad`]. [`AdamState::step`] then consumes them.

mod adam;
pub mod gradcheck;
mod ops;
mod tape;

pub use adam::AdamState;
pub use ops::{broadcast_shape, matmul, softmax_rows, Unary};
pub use tape::{Tape, Var};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Initializer for [`Tensor::create`]. Stochastic variants are fully
/// determined by their seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    Uniform { low: f64, high: f64, seed: u64 },
    Normal { mean: f64, std: f64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Ok(1);
    }
    if let Some(bad) = shape.iter().find(|&&d| d == 0) {
        return Err(Error::InvalidShape(format!("dimension {bad} in {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn create(shape: &[usize], init: Init) -> Result<Self> {
        let len = check_shape(shape)?;
        let data = match init {
            Init::Zeros => vec![T::zero(); len],
            Init::Constant(v) => vec![T::of(v); len],
            Init::Uniform { low, high, seed } => {
                if !(low < high) || !low.is_finite() || !high.is_finite() {
                    return Err(Error::Param(format!("uniform range [{low}, {high})")));
                }
                let dist = Uniform::new(low, high).map_err(|e| Error::Param(e.to_string()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..len).map(|_| T::of(dist.sample(&mut rng))).collect()
            }
            Init::Normal { mean, std, seed } => {
                if !(std >= 0.0) || !mean.is_finite() || !std.is_finite() {
                    return Err(Error::Param(format!("normal std {std}")));
                }
                let dist = Normal::new(mean, std).map_err(|e| Error::Param(e.to_string()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..len).map(|_| T::of(dist.sample(&mut rng))).collect()
            }
        };
        Ok(Self { shape: shape.to_vec(), data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::create(shape, Init::Zeros)
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor element {i}")));
        }
        Ok(Self { shape: shape.to_vec(), data, requires_grad: false, grad: None })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Self::from_vec(&[n, d], rows.concat())
    }

    /// Xavier/Glorot-uniform weight matrix.
    pub fn glorot(rows: usize, cols: usize, seed: u64) -> Result<Self> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let mut t = Self::create(&[rows, cols], Init::Uniform { low: -bound, high: bound, seed })?;
        t.requires_grad = true;
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row count of a matrix (first dimension).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Column count of a matrix (product of trailing dimensions).
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if !on {
            self.grad = None;
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the stored gradient, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[T]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient of length {} for tensor {:?}",
                g.len(),
                self.shape
            )));
        }
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, &v)| *b += v),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub(crate) fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    /// Selects rows by index into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let c = self.cols();
        let n = self.rows();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= n {
                return Err(Error::Range { id: i, n });
            }
            out.extend_from_slice(self.row(i));
        }
        if idx.is_empty() {
            return Err(Error::InvalidShape("selecting zero rows".into()));
        }
        Self::from_vec(&[idx.len(), c], out)
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::ShapeMismatch(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        self.grad = None;
        Ok(self)
    }

    /// Converts to another element type (values rounded when narrowing).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Row-wise vectors as `f64`, the layout the clustering code consumes.
    pub fn to_rows_f64(&self) -> Vec<Vec<f64>> {
        (0..self.rows()).map(|i| self.row(i).iter().map(|v| v.as_f64()).collect()).collect()
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>().max(1), data.len().max(1));
        Self { shape, data, requires_grad: false, grad: None }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_and_constant() {
        let z = Tensor::<f64>::create(&[2, 2], Init::Zeros).unwrap();
        assert_eq!(z.data(), &[0.0; 4]);
        let c = Tensor::<f64>::create(&[3], Init::Constant(1.5)).unwrap();
        assert_eq!(c.data(), &[1.5, 1.5, 1.5]);
    }

    #[test]
    fn seeded_normal_is_reproducible() {
        let init = Init::Normal { mean: 0.0, std: 1.0, seed: 7 };
        let a = Tensor::<f64>::create(&[4], init).unwrap();
        let b = Tensor::<f64>::create(&[4], init).unwrap();
        let bytes = |t: &Tensor<f64>| t.data().iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<_>>();
        assert_eq!(bytes(&a), bytes(&b));
        let other = Tensor::<f64>::create(&[4], Init::Normal { mean: 0.0, std: 1.0, seed: 8 }).unwrap();
        assert_ne!(a.data(), other.data());
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(matches!(Tensor::<f32>::zeros(&[2, 0]), Err(Error::InvalidShape(_))));
        assert!(matches!(
            Tensor::<f32>::create(&[1], Init::Normal { mean: 0.0, std: -1.0, seed: 0 }),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn grads_accumulate() {
        let mut t = Tensor::<f64>::zeros(&[2]).unwrap().with_grad();
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        assert_eq!(t.grad(), Some(&[2.0, 4.0][..]));
        t.zero_grad();
        assert!(t.grad().is_none());
    }
}
