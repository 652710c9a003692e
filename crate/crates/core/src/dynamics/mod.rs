//! Point-vortex and passive-tracer kinematics.
//!
//! A vortex of circulation `Γ` at `z_v` induces at `z` the velocity
//! `Γ / (2π |w|²) · i·w` with `w = z - z_v`, which is the conjugate of
//! `Γ / (2πi w)`. Vortices feel every other vortex; tracers feel all vortices
//! and act on nothing.

mod integrator;
mod lyapunov;

pub use integrator::{integrate, Propagator, SimulationRecord};
pub use lyapunov::{lyapunov_max, lyapunov_max_with, LyapunovOptions};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PlanePoint;

/// Closest approach allowed between two vortices or a tracer and a vortex.
pub const COLLISION_TOLERANCE: f64 = 1e-6;

const TOL_SQR: f64 = COLLISION_TOLERANCE * COLLISION_TOLERANCE;

/// Circulations and current positions of a set of point vortices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VortexSystem {
    circulations: Vec<f64>,
    positions: Vec<PlanePoint>,
}

impl VortexSystem {
    pub fn new(circulations: Vec<f64>, positions: Vec<PlanePoint>) -> Result<Self> {
        if circulations.is_empty() {
            return Err(Error::InvalidInput("a vortex system needs at least one vortex".into()));
        }
        if circulations.len() != positions.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} circulations for {} positions",
                circulations.len(),
                positions.len()
            )));
        }
        if let Some(v) = circulations.iter().position(|g| !g.is_finite() || *g == 0.0) {
            return Err(Error::InvalidInput(format!(
                "circulation of vortex {v} must be finite and nonzero"
            )));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("vortex positions must be finite".into()));
        }
        check_separation(&positions)?;
        Ok(Self { circulations, positions })
    }

    pub fn len(&self) -> usize {
        self.circulations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.circulations.is_empty()
    }

    pub fn circulations(&self) -> &[f64] {
        &self.circulations
    }

    pub fn positions(&self) -> &[PlanePoint] {
        &self.positions
    }

    /// Same circulations at new positions.
    pub fn with_positions(&self, positions: Vec<PlanePoint>) -> Result<Self> {
        Self::new(self.circulations.clone(), positions)
    }
}

/// Positions of passive tracers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracerSet {
    positions: Vec<PlanePoint>,
}

impl TracerSet {
    pub fn new(positions: Vec<PlanePoint>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidInput("a tracer set needs at least one tracer".into()));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("tracer positions must be finite".into()));
        }
        Ok(Self { positions })
    }

    /// No tracers at all, for vortex-only runs.
    pub fn none() -> Self {
        Self { positions: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[PlanePoint] {
        &self.positions
    }
}

/// Uniform sampling `t_k = t0 + h·k`, `k = 0..nt`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub h: f64,
    pub nt: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, h: f64, nt: usize) -> Result<Self> {
        if !t0.is_finite() || !h.is_finite() || h <= 0.0 {
            return Err(Error::InvalidInput(format!("invalid grid: t0 = {t0}, h = {h}")));
        }
        if nt == 0 {
            return Err(Error::InvalidInput("grid needs at least one sample".into()));
        }
        Ok(Self { t0, h, nt })
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + self.h * k as f64
    }

    pub fn t_final(&self) -> f64 {
        self.time(self.nt - 1)
    }

    pub fn horizon(&self) -> f64 {
        self.h * (self.nt - 1) as f64
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.nt).map(|k| self.time(k))
    }
}

fn check_separation(positions: &[PlanePoint]) -> Result<()> {
    for (v, &a) in positions.iter().enumerate() {
        for (s, &b) in positions.iter().enumerate().skip(v + 1) {
            if (a - b).norm_sqr() <= TOL_SQR {
                return Err(Error::singular(format!("vortices {v} and {s} coincide")));
            }
        }
    }
    Ok(())
}

/// Velocity induced at offset `w` from a vortex of circulation `gamma`.
#[inline]
pub(crate) fn induced_velocity(gamma: f64, w: PlanePoint) -> PlanePoint {
    w.perp() * (gamma / (2.0 * PI * w.norm_sqr()))
}

/// Writes the velocity of every vortex into `out`. The self-term is excluded.
pub fn vortex_velocities_into(
    circulations: &[f64],
    positions: &[PlanePoint],
    out: &mut [PlanePoint],
) -> Result<()> {
    debug_assert_eq!(circulations.len(), positions.len());
    debug_assert_eq!(positions.len(), out.len());
    out.fill(PlanePoint::ZERO);
    for v in 0..positions.len() {
        for s in v + 1..positions.len() {
            let w = positions[v] - positions[s];
            let r2 = w.norm_sqr();
            if r2 <= TOL_SQR {
                return Err(Error::singular(format!("vortices {v} and {s} coincide")));
            }
            let k = w.perp() * (1.0 / (2.0 * PI * r2));
            out[v] += k * circulations[s];
            out[s] -= k * circulations[v];
        }
    }
    Ok(())
}

/// Writes the velocity of every tracer into `out`.
pub fn tracer_velocities_into(
    circulations: &[f64],
    vortices: &[PlanePoint],
    tracers: &[PlanePoint],
    out: &mut [PlanePoint],
) -> Result<()> {
    debug_assert_eq!(tracers.len(), out.len());
    for (p, (&zp, slot)) in tracers.iter().zip(out.iter_mut()).enumerate() {
        let mut acc = PlanePoint::ZERO;
        for (v, (&zv, &gamma)) in vortices.iter().zip(circulations).enumerate() {
            let w = zp - zv;
            if w.norm_sqr() <= TOL_SQR {
                return Err(Error::singular(format!("tracer {p} coincides with vortex {v}")));
            }
            acc += induced_velocity(gamma, w);
        }
        *slot = acc;
    }
    Ok(())
}

pub fn vortex_velocities(vs: &VortexSystem) -> Result<Vec<PlanePoint>> {
    let mut out = vec![PlanePoint::ZERO; vs.len()];
    vortex_velocities_into(&vs.circulations, &vs.positions, &mut out)?;
    Ok(out)
}

pub fn tracer_velocities(vs: &VortexSystem, ts: &TracerSet) -> Result<Vec<PlanePoint>> {
    let mut out = vec![PlanePoint::ZERO; ts.len()];
    tracer_velocities_into(&vs.circulations, &vs.positions, &ts.positions, &mut out)?;
    Ok(out)
}

/// First integrals of the vortex motion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConservedQuantities {
    /// Hamiltonian (interaction energy).
    pub hamiltonian: f64,
    /// Linear impulse, `Σ Γ x`.
    pub impulse_x: f64,
    /// Linear impulse, `Σ Γ y`.
    pub impulse_y: f64,
    /// Angular impulse, `Σ Γ |z|²`.
    pub angular_impulse: f64,
}

pub fn conserved_quantities(vs: &VortexSystem) -> Result<ConservedQuantities> {
    conserved_quantities_of(&vs.circulations, &vs.positions)
}

pub(crate) fn conserved_quantities_of(
    circulations: &[f64],
    positions: &[PlanePoint],
) -> Result<ConservedQuantities> {
    check_separation(positions)?;
    let mut pair_sum = 0.0;
    for v in 0..positions.len() {
        for s in v + 1..positions.len() {
            let d2 = (positions[v] - positions[s]).norm_sqr();
            pair_sum += circulations[v] * circulations[s] * 0.5 * d2.ln();
        }
    }
    let mut q = ConservedQuantities {
        // ordered pairs count each unordered pair twice
        hamiltonian: -pair_sum / (2.0 * PI),
        impulse_x: 0.0,
        impulse_y: 0.0,
        angular_impulse: 0.0,
    };
    for (&g, &z) in circulations.iter().zip(positions) {
        q.impulse_x += g * z.x;
        q.impulse_y += g * z.y;
        q.angular_impulse += g * z.norm_sqr();
    }
    Ok(q)
}
