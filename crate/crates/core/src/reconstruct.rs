//! Vortex trajectory reconstruction with circulations held fixed.
//!
//! The horizon is cut into intervals one decorrelation time long. On each
//! interval the tracers restart from their measured positions, and the
//! vortex positions at the interval start are fitted so that the integrated
//! tracer paths match the measurements over the interval. Intervals are
//! solved in order, each seeded with the end state of the previous fit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circulation::circulation_order;
use crate::dynamics::{Propagator, SimulationRecord, TimeGrid};
use crate::error::{Error, Result};
use crate::geometry::{stacked_norm, PlanePoint};
use crate::lsq::{self, LeastSquaresProblem, LmSettings, Termination};
use crate::signal::{decorrelation_time, TrajectoryEnsemble};

/// Objective reported when the integration inside an interval hits a collision.
pub const SINGULAR_PENALTY: f64 = 1e12;

/// Finite-difference step on start coordinates.
pub const FD_STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub index: usize,
    /// First sample (inclusive).
    pub start: usize,
    /// Last sample (inclusive).
    pub end: usize,
    pub t_start: f64,
    pub t_end: f64,
}

impl Interval {
    pub fn steps(&self) -> usize {
        self.end - self.start
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    /// Decorrelation time snapped down to a whole number of grid steps.
    pub tau: f64,
    pub steps_per_interval: usize,
    pub intervals: Vec<Interval>,
}

impl PartitionPlan {
    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Sample index at which each interval after the first begins.
    pub fn boundaries(&self) -> Vec<usize> {
        self.intervals.iter().skip(1).map(|i| i.start).collect()
    }
}

pub fn build_partition(grid: &TimeGrid, tau: f64) -> Result<PartitionPlan> {
    let horizon = grid.horizon();
    if !(tau > 0.0 && tau.is_finite()) || tau > horizon * (1.0 + 1e-12) {
        return Err(Error::InvalidInput(format!("tau = {tau} must lie in (0, {horizon}]")));
    }
    // the small slack keeps exact multiples like 39.89 / 0.01 from flooring to 3988
    let steps = (tau / grid.h + 1e-9).floor() as usize;
    if steps == 0 {
        return Err(Error::IntervalTooShort(format!("tau = {tau} is shorter than the grid step {}", grid.h)));
    }
    let total = grid.nt - 1;
    let n = total.div_ceil(steps);
    let intervals = (0..n)
        .map(|j| {
            let start = j * steps;
            let end = ((j + 1) * steps).min(total);
            Interval { index: j, start, end, t_start: grid.time(start), t_end: grid.time(end) }
        })
        .collect::<Vec<_>>();
    if let Some(bad) = intervals.iter().find(|i| i.end <= i.start) {
        return Err(Error::IntervalTooShort(format!("interval {} holds fewer than 2 samples", bad.index)));
    }
    Ok(PartitionPlan { tau: steps as f64 * grid.h, steps_per_interval: steps, intervals })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructionConfig {
    /// Autocorrelation cutoff defining the decorrelation time.
    pub alpha: f64,
    /// Largest autocorrelation lag examined, in samples. `None` uses every
    /// lag the series supports.
    pub max_lag: Option<usize>,
    pub max_iterations: usize,
    pub step_tolerance: f64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self { alpha: 0.2, max_lag: None, max_iterations: 50, step_tolerance: 1e-10 }
    }
}

impl ReconstructionConfig {
    pub fn max_lag_for(&self, nt: usize) -> usize {
        self.max_lag.unwrap_or(nt).min(nt.saturating_sub(1))
    }

    fn lm_settings(&self) -> LmSettings {
        LmSettings {
            max_iterations: self.max_iterations,
            residual_tolerance: 1e-14,
            step_tolerance: self.step_tolerance,
            gradient_tolerance: 1e-18,
        }
    }
}

/// Tracer misfit over one interval as a function of the vortex start positions.
struct IntervalProblem<'a> {
    circulations: &'a [f64],
    /// Measured tracer rows `start..=end`.
    rows: &'a [Vec<PlanePoint>],
    h: f64,
}

impl IntervalProblem<'_> {
    fn n_tracers(&self) -> usize {
        self.rows[0].len()
    }
}

impl LeastSquaresProblem for IntervalProblem<'_> {
    fn n_params(&self) -> usize {
        2 * self.circulations.len()
    }

    fn n_residuals(&self) -> usize {
        // the start sample matches by construction
        2 * self.n_tracers() * (self.rows.len() - 1)
    }

    fn residuals(&self, x: &[f64], out: &mut [f64]) -> bool {
        let mut prop = Propagator::from_parts(
            self.circulations.to_vec(),
            to_points(x),
            self.rows[0].clone(),
            0.0,
        );
        let width = 2 * self.n_tracers();
        for (row, chunk) in self.rows[1..].iter().zip(out.chunks_exact_mut(width)) {
            if prop.step(self.h).is_err() {
                return false;
            }
            for ((z, measured), pair) in prop.tracers().iter().zip(row).zip(chunk.chunks_exact_mut(2)) {
                pair[0] = z.x - measured.x;
                pair[1] = z.y - measured.y;
            }
        }
        true
    }

    fn jacobian(&self, x: &[f64], r: &[f64], jac: &mut [f64]) -> bool {
        let n = x.len();
        let m = self.n_residuals();
        let columns: Vec<Option<Vec<f64>>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut plus = vec![0.0; m];
                let mut minus = vec![0.0; m];
                let mut xp = x.to_vec();
                xp[j] = x[j] + FD_STEP;
                let ok_p = self.residuals(&xp, &mut plus);
                xp[j] = x[j] - FD_STEP;
                let ok_m = self.residuals(&xp, &mut minus);
                // one-sided when a perturbed integration collides
                let (hi, lo, width) = match (ok_p, ok_m) {
                    (true, true) => (&plus[..], &minus[..], 2.0 * FD_STEP),
                    (true, false) => (&plus[..], r, FD_STEP),
                    (false, true) => (r, &minus[..], FD_STEP),
                    (false, false) => return None,
                };
                Some(hi.iter().zip(lo).map(|(a, b)| (a - b) / width).collect())
            })
            .collect();
        for (j, col) in columns.into_iter().enumerate() {
            let Some(col) = col else { return false };
            for (i, v) in col.into_iter().enumerate() {
                jac[i * n + j] = v;
            }
        }
        true
    }
}

fn to_points(x: &[f64]) -> Vec<PlanePoint> {
    x.chunks_exact(2).map(|c| PlanePoint::new(c[0], c[1])).collect()
}

fn to_params(points: &[PlanePoint]) -> Vec<f64> {
    points.iter().flat_map(|z| [z.x, z.y]).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub value: f64,
    /// The integration hit a collision and `value` is the penalty.
    pub singular: bool,
}

fn check_inputs(
    ens: &TrajectoryEnsemble,
    circulations: &[f64],
    plan: &PartitionPlan,
    j: usize,
    start_positions: &[PlanePoint],
) -> Result<Interval> {
    let interval = *plan
        .intervals
        .get(j)
        .ok_or_else(|| Error::InvalidInput(format!("interval {j} out of range")))?;
    if interval.end >= ens.n_samples() {
        return Err(Error::ShapeMismatch("partition extends past the trajectory data".into()));
    }
    if start_positions.len() != circulations.len() || circulations.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} start positions for {} circulations",
            start_positions.len(),
            circulations.len()
        )));
    }
    Ok(interval)
}

/// Sum of squared tracer deviations over interval `j` when the vortices
/// start from `start_positions`.
pub fn subproblem_objective(
    start_positions: &[PlanePoint],
    j: usize,
    ens: &TrajectoryEnsemble,
    circulations: &[f64],
    plan: &PartitionPlan,
) -> Result<ObjectiveValue> {
    let interval = check_inputs(ens, circulations, plan, j, start_positions)?;
    let problem = IntervalProblem {
        circulations,
        rows: &ens.history()[interval.start..=interval.end],
        h: ens.grid().h,
    };
    let mut r = vec![0.0; problem.n_residuals()];
    Ok(if problem.residuals(&to_params(start_positions), &mut r) {
        ObjectiveValue { value: r.iter().map(|v| v * v).sum(), singular: false }
    } else {
        ObjectiveValue { value: SINGULAR_PENALTY, singular: true }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubProblemResult {
    pub index: usize,
    pub start_positions: Vec<PlanePoint>,
    pub objective: f64,
    pub initial_objective: f64,
    /// Vortex positions at samples `start..=end` of the interval.
    pub trajectory: Vec<Vec<PlanePoint>>,
    pub converged: bool,
    pub termination: Termination,
}

/// Vortex-only integration of `steps` grid steps.
fn vortex_path(circulations: &[f64], start: &[PlanePoint], steps: usize, h: f64) -> Result<Vec<Vec<PlanePoint>>> {
    let mut prop = Propagator::from_parts(circulations.to_vec(), start.to_vec(), Vec::new(), 0.0);
    let mut out = Vec::with_capacity(steps + 1);
    out.push(start.to_vec());
    for _ in 0..steps {
        prop.step(h)?;
        out.push(prop.vortices().to_vec());
    }
    Ok(out)
}

pub fn solve_subproblem(
    j: usize,
    guess_start: &[PlanePoint],
    ens: &TrajectoryEnsemble,
    circulations: &[f64],
    plan: &PartitionPlan,
    cfg: &ReconstructionConfig,
) -> Result<SubProblemResult> {
    let interval = check_inputs(ens, circulations, plan, j, guess_start)?;
    let problem = IntervalProblem {
        circulations,
        rows: &ens.history()[interval.start..=interval.end],
        h: ens.grid().h,
    };
    let report = lsq::minimize(&problem, &to_params(guess_start), &cfg.lm_settings());
    let (objective, initial_objective) = if report.termination == Termination::InvalidStart {
        (SINGULAR_PENALTY, SINGULAR_PENALTY)
    } else {
        (report.cost, report.initial_cost)
    };
    let start_positions = to_points(&report.x);
    let trajectory = vortex_path(circulations, &start_positions, interval.steps(), ens.grid().h)
        .map_err(|e| e.with_time(interval.t_start))?;
    Ok(SubProblemResult {
        index: j,
        start_positions,
        objective,
        initial_objective,
        trajectory,
        converged: report.termination.converged(),
        termination: report.termination,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// `‖Ẑ(t_k) - Z(t_k)‖ / ‖Z(t_k)‖` per sample.
    pub per_step: Vec<f64>,
    /// `Σ_k ‖Ẑ - Z‖ / Σ_k ‖Z‖`.
    pub total: f64,
}

impl ErrorReport {
    /// Fraction of interval boundaries where the error at the first sample of
    /// the new interval does not exceed the error at the last sample of the
    /// previous one.
    pub fn reset_fraction(&self, plan: &PartitionPlan) -> f64 {
        let boundaries = plan.boundaries();
        if boundaries.is_empty() {
            return 1.0;
        }
        let drops = boundaries.iter().filter(|&&k| self.per_step[k] <= self.per_step[k - 1]).count();
        drops as f64 / boundaries.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub plan: PartitionPlan,
    pub circulations: Vec<f64>,
    pub intervals: Vec<SubProblemResult>,
    /// Vortex positions at every grid sample.
    pub trajectory: Vec<Vec<PlanePoint>>,
    pub errors: Option<ErrorReport>,
}

/// Full reconstruction: decorrelation time, partition, sequential fits.
pub fn run_algorithm2(
    ens: &TrajectoryEnsemble,
    circulations: &[f64],
    guess0: &[PlanePoint],
    cfg: &ReconstructionConfig,
) -> Result<ReconstructionResult> {
    let max_lag = cfg.max_lag_for(ens.n_samples());
    let tau = decorrelation_time(ens, cfg.alpha, max_lag)?;
    let plan = build_partition(ens.grid(), tau)?;
    reconstruct_with_plan(ens, circulations, plan, guess0, cfg)
}

/// Sequential interval fits over a given partition.
pub fn reconstruct_with_plan(
    ens: &TrajectoryEnsemble,
    circulations: &[f64],
    plan: PartitionPlan,
    guess0: &[PlanePoint],
    cfg: &ReconstructionConfig,
) -> Result<ReconstructionResult> {
    let mut guess = guess0.to_vec();
    let mut intervals = Vec::with_capacity(plan.len());
    let mut trajectory = Vec::with_capacity(ens.n_samples());
    for j in 0..plan.len() {
        let res = solve_subproblem(j, &guess, ens, circulations, &plan, cfg)?;
        guess = res.trajectory.last().expect("interval has samples").clone();
        let last = j + 1 == plan.len();
        let owned = if last { res.trajectory.len() } else { res.trajectory.len() - 1 };
        trajectory.extend_from_slice(&res.trajectory[..owned]);
        intervals.push(res);
    }
    debug_assert_eq!(trajectory.len(), plan.intervals.last().map_or(0, |i| i.end + 1));
    Ok(ReconstructionResult { plan, circulations: circulations.to_vec(), intervals, trajectory, errors: None })
}

impl ReconstructionResult {
    /// Attaches errors against a ground-truth simulation on the same grid.
    pub fn with_truth(mut self, truth: &SimulationRecord) -> Result<Self> {
        self.errors = Some(evaluate(&self.trajectory, &self.circulations, truth)?);
        Ok(self)
    }
}

/// Relative position error of a recovered vortex trajectory, vortices
/// matched to the truth by sorted circulation.
pub fn evaluate(trajectory: &[Vec<PlanePoint>], circulations: &[f64], truth: &SimulationRecord) -> Result<ErrorReport> {
    evaluate_tracks(trajectory, circulations, &truth.vortex_history, &truth.circulations)
}

/// [`evaluate`] against a bare true track.
pub fn evaluate_tracks(
    trajectory: &[Vec<PlanePoint>],
    circulations: &[f64],
    truth: &[Vec<PlanePoint>],
    truth_circulations: &[f64],
) -> Result<ErrorReport> {
    if trajectory.len() != truth.len() || truth.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} recovered samples against {} true ones",
            trajectory.len(),
            truth.len()
        )));
    }
    let nv = truth_circulations.len();
    if truth.iter().any(|row| row.len() != nv) {
        return Err(Error::ShapeMismatch("true track and circulations disagree".into()));
    }
    if circulations.len() != nv || trajectory.iter().any(|row| row.len() != nv) {
        return Err(Error::ShapeMismatch(format!("recovered vortex count differs from the truth ({nv})")));
    }
    let rec_order = circulation_order(circulations);
    let true_order = circulation_order(truth_circulations);
    let mut per_step = Vec::with_capacity(trajectory.len());
    let (mut num, mut den) = (0.0, 0.0);
    let mut diff = vec![PlanePoint::ZERO; nv];
    for (rec, tru) in trajectory.iter().zip(truth) {
        for (slot, (&a, &b)) in diff.iter_mut().zip(rec_order.iter().zip(&true_order)) {
            *slot = rec[a] - tru[b];
        }
        let d = stacked_norm(&diff);
        let z = stacked_norm(tru);
        per_step.push(d / z);
        num += d;
        den += z;
    }
    Ok(ErrorReport { per_step, total: num / den })
}
