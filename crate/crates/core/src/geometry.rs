//! Planar vectors and the small amount of 2×2 matrix algebra the estimator needs.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

/// Symmetric 2×2 matrices (covariance and information matrices).
pub type Mat2 = Matrix2<f64>;

/// A 2-D position or displacement in meters, global frame unless stated otherwise.
///
/// Serialized as a two-element array `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct PlanarVector {
    pub x: f64,
    pub y: f64,
}

impl PlanarVector {
    pub const ZERO: Self = Self { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Outer product `v vᵀ`.
    pub fn outer(self) -> Mat2 {
        Mat2::new(
            self.x * self.x,
            self.x * self.y,
            self.y * self.x,
            self.y * self.y,
        )
    }

    /// Unsigned angle between two vectors in `[0, π]`. Zero vectors give 0.
    pub fn angle_to(self, other: Self) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            return 0.0;
        }
        // atan2 of cross and dot stays accurate near 0 and π
        let cross = self.x * other.y - self.y * other.x;
        cross.abs().atan2(self.dot(other))
    }

    pub fn to_na(self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn from_na(v: Vector2<f64>) -> Self {
        Self::new(v[0], v[1])
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(f(self.x), f(self.y))
    }
}

impl From<[f64; 2]> for PlanarVector {
    fn from(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

impl From<PlanarVector> for [f64; 2] {
    fn from(v: PlanarVector) -> Self {
        [v.x, v.y]
    }
}

impl fmt::Display for PlanarVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

impl Add for PlanarVector {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for PlanarVector {
    fn add_assign(&mut self, rhs: Self) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for PlanarVector {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl SubAssign for PlanarVector {
    fn sub_assign(&mut self, rhs: Self) {
        self.x -= rhs.x;
        self.y -= rhs.y;
    }
}

impl Neg for PlanarVector {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

impl Mul<PlanarVector> for f64 {
    type Output = PlanarVector;
    fn mul(self, rhs: PlanarVector) -> PlanarVector {
        PlanarVector::new(self * rhs.x, self * rhs.y)
    }
}

impl Mul<f64> for PlanarVector {
    type Output = PlanarVector;
    fn mul(self, rhs: f64) -> PlanarVector {
        rhs * self
    }
}

impl Mul<PlanarVector> for Mat2 {
    type Output = PlanarVector;
    fn mul(self, rhs: PlanarVector) -> PlanarVector {
        PlanarVector::new(
            self[(0, 0)] * rhs.x + self[(0, 1)] * rhs.y,
            self[(1, 0)] * rhs.x + self[(1, 1)] * rhs.y,
        )
    }
}

/// Quadratic form `vᵀ M v`.
pub fn quad_form(m: &Mat2, v: PlanarVector) -> f64 {
    v.dot(*m * v)
}

/// Eigenvalues `(min, max)` of a symmetric 2×2 matrix, closed form.
pub fn sym_eigenvalues(m: &Mat2) -> (f64, f64) {
    let a = m[(0, 0)];
    let d = m[(1, 1)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let mean = 0.5 * (a + d);
    let half_diff = 0.5 * (a - d);
    let radius = half_diff.hypot(b);
    (mean - radius, mean + radius)
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &Mat2) -> Mat2 {
    0.5 * (m + m.transpose())
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &Mat2, b: &Mat2) -> f64 {
    (a - b).iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut t = theta % TAU;
    if t <= -PI {
        t += TAU;
    } else if t > PI {
        t -= TAU;
    }
    t
}
