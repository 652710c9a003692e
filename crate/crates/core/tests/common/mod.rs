#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use pvrecon::PlanePoint;

pub type Q = BigRational;

/// Exact rational from a dyadic or otherwise exactly representable value.
pub fn q(v: f64) -> Q {
    Q::from_float(v).expect("finite")
}

pub fn qi(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

#[derive(Clone, Debug)]
pub struct Cq {
    pub re: Q,
    pub im: Q,
}

impl Cq {
    pub fn of(z: PlanePoint) -> Self {
        Self { re: q(z.x), im: q(z.y) }
    }

    pub fn zero() -> Self {
        Self { re: Q::zero(), im: Q::zero() }
    }

    pub fn sub(&self, o: &Cq) -> Cq {
        Cq { re: &self.re - &o.re, im: &self.im - &o.im }
    }

    pub fn norm_sqr(&self) -> Q {
        &self.re * &self.re + &self.im * &self.im
    }

    pub fn to_f64(&self) -> (f64, f64) {
        (self.re.to_f64().unwrap(), self.im.to_f64().unwrap())
    }
}

/// `Σ_s Γ_s / (z - z_s)` over the given sources, skipping `skip`, in exact
/// arithmetic.
pub fn cauchy_sum(z: &Cq, sources: &[(Q, Cq)], skip: Option<usize>) -> Cq {
    let mut acc = Cq::zero();
    for (s, (gamma, zs)) in sources.iter().enumerate() {
        if Some(s) == skip {
            continue;
        }
        let w = z.sub(zs);
        let n = w.norm_sqr();
        acc.re += gamma * &w.re / &n;
        acc.im -= gamma * &w.im / &n;
    }
    acc
}

/// Velocity whose conjugate is `sum / (2πi)`: `(Im sum, Re sum) / 2π`.
pub fn velocity_from_sum(sum: &Cq) -> PlanePoint {
    let (re, im) = sum.to_f64();
    PlanePoint::new(im, re) * (1.0 / (2.0 * std::f64::consts::PI))
}

pub fn sources(circulations: &[f64], positions: &[PlanePoint]) -> Vec<(Q, Cq)> {
    circulations.iter().zip(positions).map(|(&g, &z)| (q(g), Cq::of(z))).collect()
}

pub fn table1() -> (Vec<f64>, Vec<PlanePoint>) {
    let p = PlanePoint::new;
    (vec![1.0, 2.0, 3.0, 4.0], vec![p(2.0, 0.0), p(-1.0, -1.0), p(0.5, 0.5), p(-2.0, 3.0)])
}

pub fn close(a: PlanePoint, b: PlanePoint, tol: f64) -> bool {
    (a - b).norm() <= tol
}
