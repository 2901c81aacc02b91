//! Poincaré-ball geometry with curvature `-|c|`.
//!
//! Points live in the open ball of radius `1/√|c|`. Every returned
//! [`BallPoint`] is clamped to norm at most `(1 − BOUNDARY_EPS)·radius`.
//! Möbius addition uses the gyrovector form
//!
//! ```text
//! x ⊕ y = ((1 + 2κ⟨x,y⟩ + κ‖y‖²) x + (1 − κ‖x‖²) y) / (1 + 2κ⟨x,y⟩ + κ²‖x‖²‖y‖²)
//! ```
//!
//! with `κ = |c|`, and the conformal factor is `λ_x = 2 / (1 − κ‖x‖²)`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative margin kept between any stored point and the ball boundary.
pub const BOUNDARY_EPS: f64 = 1e-5;

/// Tangent vectors shorter than this map to the base point exactly.
const ZERO_NORM: f64 = 1e-12;

/// Curvature magnitude `|c| > 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Curvature {
    magnitude: f64,
}

impl Curvature {
    pub fn new(magnitude: f64) -> Result<Self> {
        if magnitude > 0.0 && magnitude.is_finite() {
            Ok(Self { magnitude })
        } else {
            Err(Error::InvalidCurvature(magnitude))
        }
    }

    pub fn magnitude(self) -> f64 {
        self.magnitude
    }

    pub fn sqrt(self) -> f64 {
        self.magnitude.sqrt()
    }

    pub fn radius(self) -> f64 {
        1.0 / self.magnitude.sqrt()
    }

    /// Largest norm a stored point may have.
    pub fn max_norm(self) -> f64 {
        (1.0 - BOUNDARY_EPS) * self.radius()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BallPoint<T> {
    coords: Vec<T>,
    curvature: Curvature,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector<T> {
    coords: Vec<T>,
    base: BallPoint<T>,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum()
}

fn norm<T: Scalar>(a: &[T]) -> f64 {
    dot(a, a).sqrt()
}

impl<T: Scalar> BallPoint<T> {
    /// Accepts `coords` if they already satisfy the clamped-ball bound.
    pub fn new(coords: Vec<T>, curvature: Curvature) -> Result<Self> {
        check_finite(&coords)?;
        let n = norm(&coords);
        // Allow rounding slack of the element type at the clamp radius.
        let slack = curvature.max_norm() * 8.0 * f64::from(f32::EPSILON).min(T::epsilon().as_f64());
        if n > curvature.max_norm() + slack {
            return Err(Error::BoundaryPoint { norm: n, radius: curvature.radius() });
        }
        Ok(Self { coords, curvature })
    }

    pub fn origin(dim: usize, curvature: Curvature) -> Self {
        Self { coords: vec![T::zero(); dim], curvature }
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<T> {
        self.coords
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.coords)
    }

    /// The additive inverse `−x`, itself a ball point.
    pub fn negate(&self) -> Self {
        Self { coords: self.coords.iter().map(|&v| -v).collect(), curvature: self.curvature }
    }

    /// Conformal factor `λ_x = 2 / (1 − |c|‖x‖²)`.
    pub fn conformal_factor(&self) -> f64 {
        2.0 / (1.0 - self.curvature.magnitude * dot(&self.coords, &self.coords))
    }
}

impl<T: Scalar> TangentVector<T> {
    pub fn new(coords: Vec<T>, base: BallPoint<T>) -> Result<Self> {
        check_finite(&coords)?;
        if coords.len() != base.dim() {
            return Err(Error::GeometryMismatch(format!(
                "tangent of dimension {} at a base of dimension {}",
                coords.len(),
                base.dim()
            )));
        }
        Ok(Self { coords, base })
    }

    pub fn at_origin(coords: Vec<T>, curvature: Curvature) -> Result<Self> {
        let base = BallPoint::origin(coords.len(), curvature);
        Self::new(coords, base)
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<T> {
        self.coords
    }

    pub fn base(&self) -> &BallPoint<T> {
        &self.base
    }
}

fn check_finite<T: Scalar>(v: &[T]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("coordinate {i}"))),
        None => Ok(()),
    }
}

fn check_pair<T: Scalar>(x: &BallPoint<T>, y: &BallPoint<T>) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::GeometryMismatch(format!("dimensions {} and {}", x.dim(), y.dim())));
    }
    if x.curvature != y.curvature {
        return Err(Error::GeometryMismatch(format!(
            "curvatures {} and {}",
            x.curvature.magnitude, y.curvature.magnitude
        )));
    }
    Ok(())
}

/// Rescales `v` onto the clamp radius when it reaches or exceeds it.
pub fn clamp_to_ball<T: Scalar>(v: &[T], curvature: Curvature) -> Result<BallPoint<T>> {
    check_finite(v)?;
    Ok(BallPoint { coords: clamp_coords(v, curvature), curvature })
}

fn clamp_coords<T: Scalar>(v: &[T], curvature: Curvature) -> Vec<T> {
    let n = norm(v);
    let max = curvature.max_norm();
    if n >= max {
        let mut s = max / n;
        loop {
            let out: Vec<T> = v.iter().map(|&x| T::of(x.as_f64() * s)).collect();
            let over = norm(&out) / max - 1.0;
            if over <= 0.0 {
                return out;
            }
            s *= 1.0 - 2.0 * over.max(f64::EPSILON);
        }
    } else {
        v.to_vec()
    }
}

fn mobius_add_raw(x: &[f64], y: &[f64], k: f64) -> Vec<f64> {
    let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let x2: f64 = x.iter().map(|a| a * a).sum();
    let y2: f64 = y.iter().map(|a| a * a).sum();
    let cx = 1.0 + 2.0 * k * xy + k * y2;
    let cy = 1.0 - k * x2;
    let den = 1.0 + 2.0 * k * xy + k * k * x2 * y2;
    x.iter().zip(y).map(|(a, b)| (cx * a + cy * b) / den).collect()
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn from_f64<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::of(x)).collect()
}

/// Möbius addition `x ⊕ y`.
pub fn mobius_add<T: Scalar>(x: &BallPoint<T>, y: &BallPoint<T>) -> Result<BallPoint<T>> {
    check_pair(x, y)?;
    let k = x.curvature.magnitude;
    let sum = mobius_add_raw(&to_f64(&x.coords), &to_f64(&y.coords), k);
    clamp_to_ball(&from_f64::<T>(&sum), x.curvature)
}

/// Exponential map of `v` at `base`.
pub fn exp_map<T: Scalar>(v: &[T], base: &BallPoint<T>) -> Result<BallPoint<T>> {
    check_finite(v)?;
    if v.len() != base.dim() {
        return Err(Error::GeometryMismatch(format!(
            "tangent of dimension {} at a base of dimension {}",
            v.len(),
            base.dim()
        )));
    }
    let c = base.curvature;
    let s = c.sqrt();
    let vn = norm(v);
    if vn < ZERO_NORM {
        return Ok(base.clone());
    }
    let lambda = base.conformal_factor();
    let t = (s * lambda * vn / 2.0).tanh();
    let step: Vec<f64> = v.iter().map(|&x| t * x.as_f64() / (s * vn)).collect();
    let step = clamp_coords(&step, c);
    let sum = mobius_add_raw(&to_f64(&base.coords), &step, c.magnitude);
    clamp_to_ball(&from_f64::<T>(&sum), c)
}

/// Exponential map at the origin: `tanh(√|c|‖v‖)·v/(√|c|‖v‖)`.
pub fn exp_map0<T: Scalar>(v: &[T], curvature: Curvature) -> Result<BallPoint<T>> {
    exp_map(v, &BallPoint::origin(v.len(), curvature))
}

/// Logarithmic map of `u` at `base`; inverse of [`exp_map`].
pub fn log_map<T: Scalar>(u: &BallPoint<T>, base: &BallPoint<T>) -> Result<TangentVector<T>> {
    check_pair(u, base)?;
    let c = base.curvature;
    for p in [u, base] {
        let n = p.norm();
        if n > c.max_norm() * (1.0 + 1e-9) {
            return Err(Error::BoundaryPoint { norm: n, radius: c.radius() });
        }
    }
    let s = c.sqrt();
    let w = mobius_add_raw(
        &to_f64(&base.negate().coords),
        &to_f64(&u.coords),
        c.magnitude,
    );
    let wn = w.iter().map(|a| a * a).sum::<f64>().sqrt();
    if wn < ZERO_NORM {
        return TangentVector::new(vec![T::zero(); u.dim()], base.clone());
    }
    let lambda = base.conformal_factor();
    let arg = (s * wn).min(1.0 - BOUNDARY_EPS);
    let scale = 2.0 * arg.atanh() / (s * lambda * wn);
    TangentVector::new(w.iter().map(|&a| T::of(a * scale)).collect(), base.clone())
}

/// Logarithmic map at the origin: `artanh(√|c|‖u‖)·u/(√|c|‖u‖)`.
pub fn log_map0<T: Scalar>(u: &BallPoint<T>) -> Result<TangentVector<T>> {
    log_map(u, &BallPoint::origin(u.dim(), u.curvature))
}

/// Geodesic distance `(2/√|c|)·artanh(√|c|‖(−x) ⊕ y‖)`.
pub fn hyperbolic_distance<T: Scalar>(x: &BallPoint<T>, y: &BallPoint<T>) -> Result<f64> {
    check_pair(x, y)?;
    let c = x.curvature;
    let s = c.sqrt();
    let w = mobius_add_raw(&to_f64(&x.negate().coords), &to_f64(&y.coords), c.magnitude);
    let wn = w.iter().map(|a| a * a).sum::<f64>().sqrt();
    Ok(2.0 / s * (s * wn).min(1.0 - BOUNDARY_EPS).atanh())
}
