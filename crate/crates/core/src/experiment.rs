//! Experiment stages driven by an [`ExperimentConfig`], reading and writing
//! files in an output directory.
//!
//! Each `cmd_*` function is one pipeline stage. [`run_pipeline`] chains all of
//! them and writes a single metrics document.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circulation::{relative_errors, run_algorithm1, Aggregator, CirculationEstimate};
use crate::config::ExperimentConfig;
use crate::dynamics::{integrate, lyapunov_max_with, SimulationRecord, TimeGrid, TracerSet, VortexSystem, COLLISION_TOLERANCE};
use crate::error::{Error, Result};
use crate::geometry::PlanePoint;
use crate::io::TrajectoryFile;
use crate::reconstruct::{evaluate_tracks, run_algorithm2, ErrorReport, Interval, ReconstructionResult};
use crate::signal::{add_noise, autocorrelation, decorrelation_lag, fd_velocity, gaussian_smooth, Provenance};

pub const VORTEX_FILE: &str = "vortices.csv";
pub const TRACER_FILE: &str = "tracers.csv";
pub const NOISY_FILE: &str = "tracers_noisy.csv";
pub const SMOOTHED_FILE: &str = "tracers_smoothed.csv";
pub const VELOCITY_FILE: &str = "velocities.csv";
pub const CIRCULATION_REPORT: &str = "circulations.json";
pub const SNAPSHOT_TABLE: &str = "snapshots.csv";
pub const RECOVERED_FILE: &str = "recovered.csv";
pub const RECONSTRUCTION_REPORT: &str = "reconstruction.json";
pub const ERROR_TABLE: &str = "errors.csv";
pub const EVALUATION_REPORT: &str = "evaluation.json";
pub const LYAPUNOV_REPORT: &str = "lyapunov.json";
pub const AUTOCORR_REPORT: &str = "autocorr.json";
pub const AUTOCORR_TABLE: &str = "autocorr.csv";
pub const METRICS_REPORT: &str = "metrics.json";

const MAX_PLACEMENT_DRAWS: usize = 1_000_000;

/// Uniform draws over the bounding box of the vortices (padded by
/// `margin`), rejecting points within the collision tolerance of a vortex.
pub fn place_tracers(vs: &VortexSystem, count: usize, margin: f64, seed: u64) -> Result<TracerSet> {
    let (mut lo, mut hi) = (PlanePoint::new(f64::INFINITY, f64::INFINITY), PlanePoint::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
    for z in vs.positions() {
        lo = PlanePoint::new(lo.x.min(z.x), lo.y.min(z.y));
        hi = PlanePoint::new(hi.x.max(z.x), hi.y.max(z.y));
    }
    lo -= PlanePoint::new(margin, margin);
    hi += PlanePoint::new(margin, margin);
    if hi.x - lo.x <= 0.0 && hi.y - lo.y <= 0.0 {
        return Err(Error::InvalidInput("tracer box is degenerate; set a positive margin".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..MAX_PLACEMENT_DRAWS {
        if out.len() == count {
            break;
        }
        let z = PlanePoint::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y));
        if vs.positions().iter().all(|&v| (z - v).norm() > COLLISION_TOLERANCE) {
            out.push(z);
        }
    }
    if out.len() < count {
        return Err(Error::InvalidInput("could not place tracers away from the vortices".into()));
    }
    TracerSet::new(out)
}

/// Ground-truth simulation of the configured system and tracers.
pub fn simulate(cfg: &ExperimentConfig) -> Result<SimulationRecord> {
    let vs = cfg.vortex_system()?;
    let ts = place_tracers(&vs, cfg.tracers.count, cfg.tracers.margin, cfg.tracers.seed)?;
    integrate(&vs, &ts, &cfg.grid)
}


fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Schema { path: path.display().to_string(), row: e.line(), detail: e.to_string() })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Writes the ground-truth vortex file and the raw tracer file into `out`.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<(PathBuf, PathBuf)> {
    ensure_dir(out)?;
    let record = simulate(cfg)?;
    let seed = cfg.tracers.seed;
    let vortices = out.join(VORTEX_FILE);
    let tracers = out.join(TRACER_FILE);
    TrajectoryFile::vortices_of(&record).with_seed("tracers", seed).write(&vortices)?;
    let ens = crate::signal::TrajectoryEnsemble::from_record(&record)?;
    TrajectoryFile::tracers_of(&ens).with_seed("tracers", seed).write(&tracers)?;
    Ok((vortices, tracers))
}

pub fn cmd_corrupt(cfg: &ExperimentConfig, input: &Path, output: &Path) -> Result<()> {
    let file = TrajectoryFile::read(input)?;
    let noisy = add_noise(&file.tracer_ensemble()?, cfg.noise.sigma, cfg.noise.seed)?;
    let mut out = TrajectoryFile::tracers_of(&noisy).with_seed("noise", cfg.noise.seed);
    out.seeds.extend(file.seeds);
    out.write(output)
}

pub fn cmd_smooth(cfg: &ExperimentConfig, input: &Path, output: &Path) -> Result<()> {
    let file = TrajectoryFile::read(input)?;
    let smoothed = gaussian_smooth(&file.tracer_ensemble()?, cfg.smoothing.kernel_sigma)?;
    let mut out = TrajectoryFile::tracers_of(&smoothed);
    out.seeds = file.seeds;
    out.write(output)
}

pub fn cmd_velocities(input: &Path, output: &Path) -> Result<()> {
    let file = TrajectoryFile::read(input)?;
    let vel = fd_velocity(&file.tracer_ensemble()?)?;
    let mut out = TrajectoryFile::velocities_of(&vel, file.provenance);
    out.seeds = file.seeds;
    out.write(output)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CirculationReport {
    pub aggregator: Aggregator,
    pub circulations: Vec<f64>,
    pub mean: Vec<f64>,
    pub median: Vec<f64>,
    pub snapshots: usize,
    pub converged_snapshots: usize,
    pub retained_per_vortex: Vec<usize>,
    /// Vortex positions solved at the first sample; seeds the reconstruction.
    pub first_positions: Vec<PlanePoint>,
    pub true_circulations: Option<Vec<f64>>,
    pub relative_errors: Option<Vec<f64>>,
    pub relative_errors_mean: Option<Vec<f64>>,
    pub relative_errors_median: Option<Vec<f64>>,
}

impl CirculationReport {
    pub fn new(est: &CirculationEstimate, truth: Option<&[f64]>) -> Result<Self> {
        let nv = est.circulations.len();
        let errs = |v: &[f64]| truth.map(|t| relative_errors(v, t)).transpose();
        Ok(Self {
            aggregator: est.aggregator,
            circulations: est.circulations.clone(),
            mean: est.mean.clone(),
            median: est.median.clone(),
            snapshots: est.per_snapshot.len(),
            converged_snapshots: est.per_snapshot.iter().filter(|s| s.converged).count(),
            retained_per_vortex: (0..nv).map(|v| est.retained_mask.iter().filter(|m| m[v]).count()).collect(),
            first_positions: est.per_snapshot[0].positions.clone(),
            true_circulations: truth.map(<[f64]>::to_vec),
            relative_errors: errs(&est.circulations)?,
            relative_errors_mean: errs(&est.mean)?,
            relative_errors_median: errs(&est.median)?,
        })
    }
}

/// Per-snapshot estimates in long form: one row per snapshot and vortex.
pub fn write_snapshot_table(path: &Path, est: &CirculationEstimate, grid: &TimeGrid) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "index,time,vortex,circulation,x,y,converged,retained")?;
    for (s, mask) in est.per_snapshot.iter().zip(&est.retained_mask) {
        for (v, (g, z)) in s.circulations.iter().zip(&s.positions).enumerate() {
            writeln!(out, "{},{},{v},{g},{},{},{},{}", s.index, grid.time(s.index), z.x, z.y, s.converged, mask[v])?;
        }
    }
    out.flush()?;
    Ok(())
}

fn truth_circulations(truth: Option<&Path>) -> Result<Option<(Vec<f64>, Vec<Vec<PlanePoint>>)>> {
    truth
        .map(|p| {
            let file = TrajectoryFile::read(p)?;
            let (c, h) = file.vortex_history()?;
            Ok((c.to_vec(), h.to_vec()))
        })
        .transpose()
}

pub fn cmd_circulations(
    cfg: &ExperimentConfig,
    tracers: &Path,
    velocities: &Path,
    truth: Option<&Path>,
    out: &Path,
) -> Result<CirculationReport> {
    ensure_dir(out)?;
    let ens = TrajectoryFile::read(tracers)?.tracer_ensemble()?;
    let vel = TrajectoryFile::read(velocities)?.velocity_ensemble()?;
    let truth = truth_circulations(truth)?;
    let est = run_algorithm1(&ens, &vel, &cfg.initial_guess()?, &cfg.solver, cfg.aggregator)?;
    let report = CirculationReport::new(&est, truth.as_ref().map(|t| t.0.as_slice()))?;
    write_snapshot_table(&out.join(SNAPSHOT_TABLE), &est, ens.grid())?;
    write_json(&out.join(CIRCULATION_REPORT), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalSummary {
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub initial_objective: f64,
    pub objective: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub tau: f64,
    pub intervals: usize,
    /// Sample index at which each interval after the first begins.
    pub boundaries: Vec<usize>,
    pub per_interval: Vec<IntervalSummary>,
    pub total_error: Option<f64>,
    pub reset_fraction: Option<f64>,
}

impl ReconstructionReport {
    pub fn new(res: &ReconstructionResult) -> Self {
        let per_interval = res
            .intervals
            .iter()
            .zip(&res.plan.intervals)
            .map(|(r, iv): (_, &Interval)| IntervalSummary {
                index: r.index,
                t_start: iv.t_start,
                t_end: iv.t_end,
                initial_objective: r.initial_objective,
                objective: r.objective,
                converged: r.converged,
            })
            .collect();
        Self {
            tau: res.plan.tau,
            intervals: res.plan.len(),
            boundaries: res.plan.boundaries(),
            per_interval,
            total_error: res.errors.as_ref().map(|e| e.total),
            reset_fraction: res.errors.as_ref().map(|e| e.reset_fraction(&res.plan)),
        }
    }
}

/// Time, per-step error and a boundary flag per sample.
pub fn write_error_table(path: &Path, grid: &TimeGrid, errors: &ErrorReport, boundaries: &[usize]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "time,error,boundary")?;
    let mut next = boundaries.iter().peekable();
    for (k, e) in errors.per_step.iter().enumerate() {
        let flag = next.peek().is_some_and(|&&b| b == k);
        if flag {
            next.next();
        }
        writeln!(out, "{},{e},{}", grid.time(k), u8::from(flag))?;
    }
    out.flush()?;
    Ok(())
}

pub fn cmd_reconstruct(
    cfg: &ExperimentConfig,
    tracers: &Path,
    circulations: &Path,
    truth: Option<&Path>,
    out: &Path,
) -> Result<ReconstructionReport> {
    ensure_dir(out)?;
    let ens = TrajectoryFile::read(tracers)?.tracer_ensemble()?;
    let circ: CirculationReport = read_json(circulations)?;
    let mut res = run_algorithm2(&ens, &circ.circulations, &circ.first_positions, &cfg.reconstruction)?;
    if let Some((tc, th)) = truth_circulations(truth)? {
        res.errors = Some(evaluate_tracks(&res.trajectory, &res.circulations, &th, &tc)?);
    }
    TrajectoryFile::vortex_track(*ens.grid(), &res.circulations, res.trajectory.clone())?.write(&out.join(RECOVERED_FILE))?;
    let report = ReconstructionReport::new(&res);
    if let Some(e) = &res.errors {
        write_error_table(&out.join(ERROR_TABLE), ens.grid(), e, &report.boundaries)?;
    }
    write_json(&out.join(RECONSTRUCTION_REPORT), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub total_error: f64,
    pub max_step_error: f64,
    pub final_step_error: f64,
    pub reset_fraction: Option<f64>,
}

/// Compares a recovered vortex file with the truth; `boundaries` come from a
/// reconstruction report when one is given.
pub fn cmd_evaluate(recovered: &Path, truth: &Path, reconstruction: Option<&Path>, out: &Path) -> Result<EvaluationReport> {
    ensure_dir(out)?;
    let rec = TrajectoryFile::read(recovered)?;
    let tru = TrajectoryFile::read(truth)?;
    if rec.grid != tru.grid {
        return Err(Error::ShapeMismatch("recovered and true files use different grids".into()));
    }
    let (rc, rh) = rec.vortex_history()?;
    let (tc, th) = tru.vortex_history()?;
    let errors = evaluate_tracks(rh, rc, th, tc)?;
    let boundaries = match reconstruction {
        Some(p) => read_json::<ReconstructionReport>(p)?.boundaries,
        None => Vec::new(),
    };
    let reset_fraction = (!boundaries.is_empty()).then(|| {
        let drops = boundaries.iter().filter(|&&k| errors.per_step[k] <= errors.per_step[k - 1]).count();
        drops as f64 / boundaries.len() as f64
    });
    write_error_table(&out.join(ERROR_TABLE), &rec.grid, &errors, &boundaries)?;
    let report = EvaluationReport {
        total_error: errors.total,
        max_step_error: errors.per_step.iter().cloned().fold(0.0, f64::max),
        final_step_error: *errors.per_step.last().expect("non-empty track"),
        reset_fraction,
    };
    write_json(&out.join(EVALUATION_REPORT), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub lambda_max: f64,
    pub horizon: f64,
    pub renorm_interval: f64,
    pub delta0: f64,
    pub step: f64,
}

pub fn cmd_lyapunov(cfg: &ExperimentConfig, out: &Path) -> Result<LyapunovReport> {
    ensure_dir(out)?;
    let l = &cfg.lyapunov;
    let lambda_max = lyapunov_max_with(&cfg.vortex_system()?, l.horizon, l.renorm_interval, &l.options())?;
    let report = LyapunovReport { lambda_max, horizon: l.horizon, renorm_interval: l.renorm_interval, delta0: l.delta0, step: l.step };
    write_json(&out.join(LYAPUNOV_REPORT), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutocorrReport {
    pub alpha: f64,
    pub max_lag: usize,
    /// Per-tracer decorrelation lag in samples; `None` when it never decorrelates.
    pub lags: Vec<Option<usize>>,
    /// `h · min` of the lags, present when every tracer decorrelates.
    pub tau: Option<f64>,
}

/// Autocorrelation magnitudes of every tracer (written every `stride` lags)
/// and the resulting decorrelation lags.
pub fn cmd_autocorr(cfg: &ExperimentConfig, tracers: &Path, stride: usize, out: &Path) -> Result<AutocorrReport> {
    ensure_dir(out)?;
    let ens = TrajectoryFile::read(tracers)?.tracer_ensemble()?;
    let alpha = cfg.reconstruction.alpha;
    let max_lag = cfg.reconstruction.max_lag_for(ens.n_samples());
    let curves = (0..ens.n_tracers()).map(|p| autocorrelation(&ens, p, max_lag)).collect::<Result<Vec<_>>>()?;
    let lags: Vec<Option<usize>> = curves.iter().map(|c| decorrelation_lag(&c.values, alpha)).collect();
    let tau = lags.iter().copied().collect::<Option<Vec<_>>>().and_then(|l| l.into_iter().min()).map(|m| m as f64 * ens.grid().h);

    let mut table = BufWriter::new(fs::File::create(out.join(AUTOCORR_TABLE))?);
    let names: Vec<String> = (0..curves.len()).map(|p| format!("rho_{p}")).collect();
    writeln!(table, "lag,time,{}", names.join(","))?;
    for l in (0..=max_lag).step_by(stride.max(1)) {
        let row: Vec<String> = curves.iter().map(|c| c.values[l].to_string()).collect();
        writeln!(table, "{l},{},{}", l as f64 * ens.grid().h, row.join(","))?;
    }
    table.flush()?;
    let report = AutocorrReport { alpha, max_lag, lags, tau };
    write_json(&out.join(AUTOCORR_REPORT), &report)?;
    Ok(report)
}

/// Everything [`run_pipeline`] measured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineMetrics {
    pub config: ExperimentConfig,
    pub tracer_provenance: Provenance,
    pub circulations: CirculationReport,
    pub reconstruction: ReconstructionReport,
    pub evaluation: EvaluationReport,
}

/// Simulation, corruption and smoothing (skipped when the noise level is
/// zero), velocities, both algorithms and evaluation against the truth.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<PipelineMetrics> {
    cfg.validate()?;
    let (truth, raw) = cmd_simulate(cfg, out)?;
    let tracers = if cfg.noise.sigma > 0.0 {
        let noisy = out.join(NOISY_FILE);
        let smoothed = out.join(SMOOTHED_FILE);
        cmd_corrupt(cfg, &raw, &noisy)?;
        cmd_smooth(cfg, &noisy, &smoothed)?;
        smoothed
    } else {
        raw
    };
    let velocities = out.join(VELOCITY_FILE);
    cmd_velocities(&tracers, &velocities)?;
    let circulations = cmd_circulations(cfg, &tracers, &velocities, Some(&truth), out)?;
    let reconstruction = cmd_reconstruct(cfg, &tracers, &out.join(CIRCULATION_REPORT), Some(&truth), out)?;
    let evaluation = cmd_evaluate(&out.join(RECOVERED_FILE), &truth, Some(&out.join(RECONSTRUCTION_REPORT)), out)?;
    let metrics = PipelineMetrics {
        config: cfg.clone(),
        tracer_provenance: TrajectoryFile::read(&tracers)?.provenance,
        circulations,
        reconstruction,
        evaluation,
    };
    write_json(&out.join(METRICS_REPORT), &metrics)?;
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placement_is_seeded_and_inside_the_box() {
        let cfg = ExperimentConfig::reference();
        let vs = cfg.vortex_system().unwrap();
        let a = place_tracers(&vs, 20, 0.0, 9).unwrap();
        let b = place_tracers(&vs, 20, 0.0, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        for z in a.positions() {
            assert!((-2.0..=2.0).contains(&z.x) && (-1.0..=3.0).contains(&z.y));
        }
    }

    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::reference();
        cfg.grid.nt = 1001;
        cfg
    }

    #[test]
    fn simulate_writes_both_files() {
        let dir = tempfile::tempdir().unwrap();
        let (v, t) = cmd_simulate(&small_config(), dir.path()).unwrap();
        let v = TrajectoryFile::read(&v).unwrap();
        let t = TrajectoryFile::read(&t).unwrap();
        assert_eq!((v.n_vortices(), v.n_tracers(), v.grid.nt), (4, 0, 1001));
        assert_eq!((t.n_vortices(), t.n_tracers()), (0, 20));
        assert_eq!(v.circulations.as_deref(), Some(&[1.0, 2.0, 3.0, 4.0][..]));
        assert_eq!(t.seeds.get("tracers"), Some(&1));
    }

    #[test]
    fn zero_noise_corruption_only_retags() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config();
        cfg.noise.sigma = 0.0;
        let (_, raw) = cmd_simulate(&cfg, dir.path()).unwrap();
        let noisy = dir.path().join(NOISY_FILE);
        cmd_corrupt(&cfg, &raw, &noisy).unwrap();
        let a = TrajectoryFile::read(&raw).unwrap();
        let b = TrajectoryFile::read(&noisy).unwrap();
        assert_eq!(a.tracers, b.tracers);
        assert_eq!(b.provenance, Provenance::Noisy);
        assert_eq!(b.seeds.get("noise"), Some(&2));
    }

    #[test]
    fn single_vortex_needs_a_margin() {
        let vs = VortexSystem::new(vec![1.0], vec![PlanePoint::ZERO]).unwrap();
        assert!(place_tracers(&vs, 3, 0.0, 1).is_err());
        assert_eq!(place_tracers(&vs, 3, 1.0, 1).unwrap().len(), 3);
    }
}
