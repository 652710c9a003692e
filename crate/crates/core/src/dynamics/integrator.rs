//! Fixed-step Runge–Kutta–Fehlberg 4(5).
//!
//! The fifth-order solution advances the state. The embedded fourth-order
//! solution only feeds the local error estimate, which is reported but never
//! used to adapt the step, so every output lands exactly on the sample grid.

use serde::{Deserialize, Serialize};

use super::{tracer_velocities_into, vortex_velocities_into, TimeGrid, TracerSet, VortexSystem};
use crate::error::{Error, Result};
use crate::geometry::PlanePoint;

const STAGES: usize = 6;

const A: [[f64; 5]; STAGES] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 4.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
    [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
    [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
    [-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0],
];

const B5: [f64; STAGES] = [
    16.0 / 135.0,
    0.0,
    6656.0 / 12825.0,
    28561.0 / 56430.0,
    -9.0 / 50.0,
    2.0 / 55.0,
];

const B4: [f64; STAGES] = [
    25.0 / 216.0,
    0.0,
    1408.0 / 2565.0,
    2197.0 / 4104.0,
    -1.0 / 5.0,
    0.0,
];

/// Joint vortex + tracer state advanced by RKF45 steps.
///
/// At each stage the vortex slopes are evaluated first and the tracer slopes
/// read the same stage vortex positions; tracers never enter the vortex
/// update.
#[derive(Clone, Debug)]
pub struct Propagator {
    circulations: Vec<f64>,
    vortices: Vec<PlanePoint>,
    tracers: Vec<PlanePoint>,
    time: f64,
    kv: [Vec<PlanePoint>; STAGES],
    kt: [Vec<PlanePoint>; STAGES],
    stage_v: Vec<PlanePoint>,
    stage_t: Vec<PlanePoint>,
}

impl Propagator {
    pub fn new(vs: &VortexSystem, ts: &TracerSet, t0: f64) -> Self {
        Self::from_parts(vs.circulations().to_vec(), vs.positions().to_vec(), ts.positions().to_vec(), t0)
    }

    /// Unvalidated constructor; singular states surface on the first step.
    pub fn from_parts(
        circulations: Vec<f64>,
        vortices: Vec<PlanePoint>,
        tracers: Vec<PlanePoint>,
        t0: f64,
    ) -> Self {
        let nv = vortices.len();
        let np = tracers.len();
        Self {
            circulations,
            time: t0,
            kv: std::array::from_fn(|_| vec![PlanePoint::ZERO; nv]),
            kt: std::array::from_fn(|_| vec![PlanePoint::ZERO; np]),
            stage_v: vec![PlanePoint::ZERO; nv],
            stage_t: vec![PlanePoint::ZERO; np],
            vortices,
            tracers,
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn vortices(&self) -> &[PlanePoint] {
        &self.vortices
    }

    pub fn tracers(&self) -> &[PlanePoint] {
        &self.tracers
    }

    pub fn circulations(&self) -> &[f64] {
        &self.circulations
    }

    pub fn vortices_mut(&mut self) -> &mut [PlanePoint] {
        &mut self.vortices
    }

    /// Advances by `h` (negative steps integrate backwards). Returns the
    /// embedded local error estimate, the max-norm of the 5th/4th order gap.
    pub fn step(&mut self, h: f64) -> Result<f64> {
        for s in 0..STAGES {
            stage_positions(&self.vortices, &self.kv, &A[s][..s], h, &mut self.stage_v);
            stage_positions(&self.tracers, &self.kt, &A[s][..s], h, &mut self.stage_t);
            vortex_velocities_into(&self.circulations, &self.stage_v, &mut self.kv[s])
                .map_err(|e| e.with_time(self.time))?;
            if !self.tracers.is_empty() {
                tracer_velocities_into(&self.circulations, &self.stage_v, &self.stage_t, &mut self.kt[s])
                    .map_err(|e| e.with_time(self.time))?;
            }
        }
        let err_v = advance(&mut self.vortices, &self.kv, h);
        let err_t = advance(&mut self.tracers, &self.kt, h);
        self.time += h;
        if !self.vortices.iter().chain(&self.tracers).all(|p| p.is_finite()) {
            return Err(Error::NonFiniteState { time: self.time });
        }
        Ok(err_v.max(err_t))
    }
}

fn stage_positions(
    base: &[PlanePoint],
    slopes: &[Vec<PlanePoint>; STAGES],
    coeffs: &[f64],
    h: f64,
    out: &mut [PlanePoint],
) {
    for (i, slot) in out.iter_mut().enumerate() {
        let mut z = base[i];
        for (j, &a) in coeffs.iter().enumerate() {
            if a != 0.0 {
                z += slopes[j][i] * (h * a);
            }
        }
        *slot = z;
    }
}

fn advance(state: &mut [PlanePoint], slopes: &[Vec<PlanePoint>; STAGES], h: f64) -> f64 {
    let mut err = 0.0f64;
    for (i, z) in state.iter_mut().enumerate() {
        let mut hi = PlanePoint::ZERO;
        let mut lo = PlanePoint::ZERO;
        for s in 0..STAGES {
            hi += slopes[s][i] * B5[s];
            lo += slopes[s][i] * B4[s];
        }
        let gap = (hi - lo) * h;
        err = err.max(gap.x.abs()).max(gap.y.abs());
        *z += hi * h;
    }
    err
}

/// Sampled solution of a joint vortex/tracer run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub grid: TimeGrid,
    pub circulations: Vec<f64>,
    /// `nt` rows of vortex positions.
    pub vortex_history: Vec<Vec<PlanePoint>>,
    /// `nt` rows of tracer positions.
    pub tracer_history: Vec<Vec<PlanePoint>>,
    /// Largest embedded error estimate over all steps.
    pub max_local_error: f64,
}

impl SimulationRecord {
    pub fn n_vortices(&self) -> usize {
        self.circulations.len()
    }

    pub fn n_tracers(&self) -> usize {
        self.tracer_history.first().map_or(0, Vec::len)
    }
}

/// Integrates vortices and tracers jointly, one step per grid spacing.
pub fn integrate(vs: &VortexSystem, ts: &TracerSet, grid: &TimeGrid) -> Result<SimulationRecord> {
    let mut prop = Propagator::new(vs, ts, grid.t0);
    let mut vortex_history = Vec::with_capacity(grid.nt);
    let mut tracer_history = Vec::with_capacity(grid.nt);
    vortex_history.push(prop.vortices().to_vec());
    tracer_history.push(prop.tracers().to_vec());
    let mut max_local_error = 0.0f64;
    for k in 1..grid.nt {
        let err = prop.step(grid.h).map_err(|e| e.with_time(grid.time(k - 1)))?;
        max_local_error = max_local_error.max(err);
        vortex_history.push(prop.vortices().to_vec());
        tracer_history.push(prop.tracers().to_vec());
    }
    Ok(SimulationRecord {
        grid: *grid,
        circulations: vs.circulations().to_vec(),
        vortex_history,
        tracer_history,
        max_local_error,
    })
}
