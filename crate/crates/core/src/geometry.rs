//! Points of the plane, read as complex numbers `x + iy`.
//!
//! The same type carries positions and velocities. Only the handful of
//! complex operations the vortex kernels need are provided.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanePoint {
    pub x: f64,
    pub y: f64,
}

impl PlanePoint {
    pub const ZERO: PlanePoint = PlanePoint { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm_sqr(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn conj(self) -> Self {
        Self::new(self.x, -self.y)
    }

    /// Complex product.
    pub fn cmul(self, other: Self) -> Self {
        Self::new(
            self.x * other.x - self.y * other.y,
            self.x * other.y + self.y * other.x,
        )
    }

    /// Complex reciprocal. Not guarded against zero.
    pub fn recip(self) -> Self {
        let r2 = self.norm_sqr();
        Self::new(self.x / r2, -self.y / r2)
    }

    /// Multiplication by `i`, i.e. a quarter turn counter-clockwise.
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        self.cmul(Self::new(c, s))
    }
}

impl Add for PlanePoint {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for PlanePoint {
    fn add_assign(&mut self, rhs: Self) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for PlanePoint {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl SubAssign for PlanePoint {
    fn sub_assign(&mut self, rhs: Self) {
        self.x -= rhs.x;
        self.y -= rhs.y;
    }
}

impl Mul<f64> for PlanePoint {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        Self::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for PlanePoint {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

impl From<(f64, f64)> for PlanePoint {
    fn from((x, y): (f64, f64)) -> Self {
        Self::new(x, y)
    }
}

/// Euclidean norm of a list of points taken as one flat coordinate vector.
pub fn stacked_norm(points: &[PlanePoint]) -> f64 {
    points.iter().map(|p| p.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_ops() {
        let a = PlanePoint::new(1.0, 2.0);
        let b = PlanePoint::new(-3.0, 0.5);
        assert_eq!(a.cmul(b), PlanePoint::new(-4.0, -5.5));
        let r = a.cmul(a.recip());
        assert!((r.x - 1.0).abs() < 1e-15 && r.y.abs() < 1e-15);
        assert_eq!(a.perp(), a.cmul(PlanePoint::new(0.0, 1.0)));
        let q = PlanePoint::new(1.0, 0.0).rotate(std::f64::consts::FRAC_PI_2);
        assert!(q.x.abs() < 1e-15 && (q.y - 1.0).abs() < 1e-15);
    }
}
