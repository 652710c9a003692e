//! Operations on sampled tracer trajectories: measurement noise, Gaussian
//! smoothing, finite-difference velocities and the autocorrelation-based
//! decorrelation time.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dynamics::{SimulationRecord, TimeGrid};
use crate::error::{Error, Result};
use crate::geometry::PlanePoint;

/// Processing stage a trajectory ensemble has gone through.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Raw,
    Noisy,
    Smoothed,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Raw => "raw",
            Provenance::Noisy => "noisy",
            Provenance::Smoothed => "smoothed",
        })
    }
}

impl std::str::FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Provenance::Raw),
            "noisy" => Ok(Provenance::Noisy),
            "smoothed" => Ok(Provenance::Smoothed),
            other => Err(Error::InvalidInput(format!("unknown provenance tag {other:?}"))),
        }
    }
}

/// Tracer positions sampled on a uniform grid, one row per sample time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEnsemble {
    grid: TimeGrid,
    history: Vec<Vec<PlanePoint>>,
    provenance: Provenance,
}

impl TrajectoryEnsemble {
    pub fn new(grid: TimeGrid, history: Vec<Vec<PlanePoint>>, provenance: Provenance) -> Result<Self> {
        check_rows(&grid, &history, "trajectory")?;
        Ok(Self { grid, history, provenance })
    }

    /// The raw tracer observations of a simulation.
    pub fn from_record(record: &SimulationRecord) -> Result<Self> {
        Self::new(record.grid, record.tracer_history.clone(), Provenance::Raw)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn history(&self) -> &[Vec<PlanePoint>] {
        &self.history
    }

    pub fn row(&self, k: usize) -> &[PlanePoint] {
        &self.history[k]
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn n_samples(&self) -> usize {
        self.history.len()
    }

    pub fn n_tracers(&self) -> usize {
        self.history[0].len()
    }

    /// Time series of a single tracer.
    pub fn series(&self, p: usize) -> Vec<PlanePoint> {
        self.history.iter().map(|row| row[p]).collect()
    }

    /// Same data restricted to the first `nt` samples.
    pub fn truncated(&self, nt: usize) -> Result<Self> {
        let nt = nt.min(self.n_samples());
        Self::new(
            TimeGrid::new(self.grid.t0, self.grid.h, nt)?,
            self.history[..nt].to_vec(),
            self.provenance,
        )
    }
}

/// Tracer velocities on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityEnsemble {
    grid: TimeGrid,
    velocities: Vec<Vec<PlanePoint>>,
}

impl VelocityEnsemble {
    pub fn new(grid: TimeGrid, velocities: Vec<Vec<PlanePoint>>) -> Result<Self> {
        check_rows(&grid, &velocities, "velocity")?;
        Ok(Self { grid, velocities })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn velocities(&self) -> &[Vec<PlanePoint>] {
        &self.velocities
    }

    pub fn row(&self, k: usize) -> &[PlanePoint] {
        &self.velocities[k]
    }
}

fn check_rows(grid: &TimeGrid, rows: &[Vec<PlanePoint>], what: &str) -> Result<()> {
    if rows.len() != grid.nt {
        return Err(Error::ShapeMismatch(format!(
            "{what} has {} rows for a grid of {} samples",
            rows.len(),
            grid.nt
        )));
    }
    let width = rows[0].len();
    if width == 0 {
        return Err(Error::ShapeMismatch(format!("{what} has no tracers")));
    }
    for (k, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::ShapeMismatch(format!(
                "{what} row {k} has {} entries, expected {width}",
                row.len()
            )));
        }
        if row.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidInput(format!("{what} row {k} is not finite")));
        }
    }
    Ok(())
}

/// Adds independent `N(0, sigma²)` draws to every coordinate. Draw order is
/// row by row, tracer by tracer, `x` before `y`.
pub fn add_noise(ens: &TrajectoryEnsemble, sigma: f64, seed: u64) -> Result<TrajectoryEnsemble> {
    if ens.provenance != Provenance::Raw {
        return Err(Error::InvalidInput(format!(
            "noise is added to raw trajectories, got {}",
            ens.provenance
        )));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let history = ens
        .history
        .iter()
        .map(|row| {
            row.iter()
                .map(|&z| {
                    let dx = normal.sample(&mut rng);
                    let dy = normal.sample(&mut rng);
                    z + PlanePoint::new(dx, dy)
                })
                .collect()
        })
        .collect();
    Ok(TrajectoryEnsemble { grid: ens.grid, history, provenance: Provenance::Noisy })
}

/// Truncated, normalized Gaussian weights for offsets `-radius..=radius`.
pub fn gaussian_kernel(kernel_sigma: f64) -> Vec<f64> {
    let radius = (4.0 * kernel_sigma).ceil() as isize;
    (-radius..=radius)
        .map(|j| (-((j * j) as f64) / (2.0 * kernel_sigma * kernel_sigma)).exp())
        .collect()
}

/// Convolves one real series with `kernel`, renormalizing over the in-range
/// part of the kernel near the edges.
pub fn smooth_series(values: &[f64], kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let n = values.len() as isize;
    (0..n)
        .map(|k| {
            let lo = (k - radius).max(0);
            let hi = (k + radius).min(n - 1);
            let mut acc = 0.0;
            let mut norm = 0.0;
            for i in lo..=hi {
                let w = kernel[(i - k + radius) as usize];
                acc += w * values[i as usize];
                norm += w;
            }
            acc / norm
        })
        .collect()
}

/// Gaussian smoothing of every coordinate series. `kernel_sigma` is in samples.
pub fn gaussian_smooth(ens: &TrajectoryEnsemble, kernel_sigma: f64) -> Result<TrajectoryEnsemble> {
    if !(kernel_sigma > 0.0 && kernel_sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("kernel sigma must be > 0, got {kernel_sigma}")));
    }
    if ens.provenance == Provenance::Smoothed {
        return Err(Error::InvalidInput("trajectory is already smoothed".into()));
    }
    let kernel = gaussian_kernel(kernel_sigma);
    let radius = kernel.len() / 2;
    if ens.n_samples() < radius {
        return Err(Error::GridTooShort { needed: radius, got: ens.n_samples() });
    }
    let nt = ens.n_samples();
    let mut history = vec![vec![PlanePoint::ZERO; ens.n_tracers()]; nt];
    for p in 0..ens.n_tracers() {
        let xs: Vec<f64> = ens.history.iter().map(|row| row[p].x).collect();
        let ys: Vec<f64> = ens.history.iter().map(|row| row[p].y).collect();
        let sx = smooth_series(&xs, &kernel);
        let sy = smooth_series(&ys, &kernel);
        for k in 0..nt {
            history[k][p] = PlanePoint::new(sx[k], sy[k]);
        }
    }
    Ok(TrajectoryEnsemble { grid: ens.grid, history, provenance: Provenance::Smoothed })
}

/// Fourth-order finite-difference derivative of a uniformly sampled series.
pub fn fd_derivative(values: &[PlanePoint], h: f64) -> Result<Vec<PlanePoint>> {
    let n = values.len();
    if n < 5 {
        return Err(Error::GridTooShort { needed: 5, got: n });
    }
    let f = values;
    let scale = 1.0 / (12.0 * h);
    let mut out = vec![PlanePoint::ZERO; n];
    out[0] = (f[0] * -25.0 + f[1] * 48.0 - f[2] * 36.0 + f[3] * 16.0 - f[4] * 3.0) * scale;
    out[1] = (f[0] * -3.0 - f[1] * 10.0 + f[2] * 18.0 - f[3] * 6.0 + f[4]) * scale;
    for k in 2..n - 2 {
        out[k] = (f[k - 2] - f[k - 1] * 8.0 + f[k + 1] * 8.0 - f[k + 2]) * scale;
    }
    let m = n - 1;
    out[m - 1] = (f[m] * 3.0 + f[m - 1] * 10.0 - f[m - 2] * 18.0 + f[m - 3] * 6.0 - f[m - 4]) * scale;
    out[m] = (f[m] * 25.0 - f[m - 1] * 48.0 + f[m - 2] * 36.0 - f[m - 3] * 16.0 + f[m - 4] * 3.0) * scale;
    Ok(out)
}

/// Tracer velocities by fourth-order finite differences in time.
pub fn fd_velocity(ens: &TrajectoryEnsemble) -> Result<VelocityEnsemble> {
    let nt = ens.n_samples();
    if nt < 5 {
        return Err(Error::GridTooShort { needed: 5, got: nt });
    }
    let mut velocities = vec![vec![PlanePoint::ZERO; ens.n_tracers()]; nt];
    for p in 0..ens.n_tracers() {
        let d = fd_derivative(&ens.series(p), ens.grid.h)?;
        for (row, v) in velocities.iter_mut().zip(d) {
            row[p] = v;
        }
    }
    VelocityEnsemble::new(ens.grid, velocities)
}

/// Magnitude of the normalized complex autocorrelation at lags `0..=max_lag`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutocorrelationCurve {
    pub lags: Vec<usize>,
    pub values: Vec<f64>,
}

const MIN_VARIANCE: f64 = 1e-15;

/// `|ρ(ℓ)|` of a complex series, biased (1/N) estimator, via zero-padded FFT.
pub fn series_autocorrelation(series: &[PlanePoint], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if max_lag >= n {
        return Err(Error::InvalidInput(format!("max_lag {max_lag} must be below {n} samples")));
    }
    let mean = series.iter().fold(PlanePoint::ZERO, |acc, &z| acc + z) * (1.0 / n as f64);
    let variance = series.iter().map(|&z| (z - mean).norm_sqr()).sum::<f64>() / n as f64;
    if variance < MIN_VARIANCE {
        return Err(Error::DegenerateSignal { tracer: 0, variance });
    }
    let len = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = series
        .iter()
        .map(|&z| {
            let d = z - mean;
            Complex::new(d.x, d.y)
        })
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(len)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let norm = len as f64 * n as f64 * variance;
    Ok(buf[..=max_lag].iter().map(|c| c.norm() / norm).collect())
}

pub fn autocorrelation(ens: &TrajectoryEnsemble, p: usize, max_lag: usize) -> Result<AutocorrelationCurve> {
    if p >= ens.n_tracers() {
        return Err(Error::InvalidInput(format!("tracer {p} out of range")));
    }
    let values = series_autocorrelation(&ens.series(p), max_lag).map_err(|e| match e {
        Error::DegenerateSignal { variance, .. } => Error::DegenerateSignal { tracer: p, variance },
        other => other,
    })?;
    Ok(AutocorrelationCurve { lags: (0..=max_lag).collect(), values })
}

/// Smallest lag `L` such that `|ρ(ℓ)| <= alpha` for every `L <= ℓ <= max_lag`,
/// or `None` when even the last lag exceeds `alpha`.
pub fn decorrelation_lag(values: &[f64], alpha: f64) -> Option<usize> {
    match values.iter().rposition(|&v| v > alpha) {
        None => Some(0),
        Some(last) if last + 1 < values.len() => Some(last + 1),
        Some(_) => None,
    }
}

/// Decorrelation lag of every tracer, in samples.
pub fn tracer_decorrelation_lags(ens: &TrajectoryEnsemble, alpha: f64, max_lag: usize) -> Result<Vec<usize>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    (0..ens.n_tracers())
        .map(|p| {
            let curve = autocorrelation(ens, p, max_lag)?;
            decorrelation_lag(&curve.values, alpha).ok_or(Error::NoDecorrelation {
                tracer: p,
                alpha,
                max_lag,
            })
        })
        .collect()
}

/// Decorrelation time `τ = min_p τ_p` in time units.
pub fn decorrelation_time(ens: &TrajectoryEnsemble, alpha: f64, max_lag: usize) -> Result<f64> {
    let lags = tracer_decorrelation_lags(ens, alpha, max_lag)?;
    let min = lags.into_iter().min().expect("ensemble has tracers");
    Ok(ens.grid.h * min as f64)
}
