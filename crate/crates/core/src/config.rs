//! Experiment configuration, read from and written to TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::circulation::{Aggregator, SolverConfig, VortexGuess};
use crate::dynamics::{LyapunovOptions, TimeGrid, VortexSystem};
use crate::error::{Error, Result};
use crate::geometry::PlanePoint;
use crate::reconstruct::ReconstructionConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub circulations: Vec<f64>,
    pub positions: Vec<PlanePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracerConfig {
    pub count: usize,
    pub seed: u64,
    /// Padding added around the bounding box of the initial vortices.
    #[serde(default)]
    pub margin: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    /// Gaussian kernel standard deviation, in samples.
    pub kernel_sigma: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self { kernel_sigma: 5.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LyapunovConfig {
    pub horizon: f64,
    pub renorm_interval: f64,
    pub delta0: f64,
    pub step: f64,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self { horizon: 1e4, renorm_interval: 1.0, delta0: 1e-8, step: 1e-2 }
    }
}

impl LyapunovConfig {
    pub fn options(&self) -> LyapunovOptions {
        LyapunovOptions { step: self.step, delta0: self.delta0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub tracers: TracerConfig,
    pub grid: TimeGrid,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_aggregator")]
    pub aggregator: Aggregator,
    /// Starting point of the circulation search at the first sample.
    pub guess: SystemConfig,
    #[serde(default)]
    pub reconstruction: ReconstructionConfig,
    #[serde(default)]
    pub lyapunov: LyapunovConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_aggregator() -> Aggregator {
    Aggregator::Median
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// Four vortices with `Γ_v = v` started at `2`, `-1-i`, `(1+i)/2`, `-2+3i`,
    /// twenty tracers, `σ = 0.01` noise, `ε = 0.1`, `α = 0.2`, over 1000 time
    /// units at `h = 0.01`.
    pub fn reference() -> Self {
        let p = PlanePoint::new;
        Self {
            system: SystemConfig {
                circulations: vec![1.0, 2.0, 3.0, 4.0],
                positions: vec![p(2.0, 0.0), p(-1.0, -1.0), p(0.5, 0.5), p(-2.0, 3.0)],
            },
            tracers: TracerConfig { count: 20, seed: 1, margin: 0.0 },
            grid: TimeGrid { t0: 0.0, h: 0.01, nt: 100_001 },
            noise: NoiseConfig { sigma: 0.01, seed: 2 },
            smoothing: SmoothingConfig::default(),
            solver: SolverConfig { epsilon: 0.1, seed: 3, ..SolverConfig::default() },
            aggregator: Aggregator::Median,
            guess: SystemConfig {
                circulations: vec![1.2, 1.8, 3.3, 3.7],
                positions: vec![p(1.9, 0.1), p(-1.1, -0.9), p(0.6, 0.4), p(-1.9, 2.9)],
            },
            reconstruction: ReconstructionConfig::default(),
            lyapunov: LyapunovConfig::default(),
            output_dir: default_output_dir(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.vortex_system()?;
        TimeGrid::new(self.grid.t0, self.grid.h, self.grid.nt)?;
        self.initial_guess()?;
        if self.guess.circulations.len() != self.system.circulations.len() {
            return Err(Error::Config("guess and system differ in vortex count".into()));
        }
        if self.tracers.count == 0 || !(self.tracers.margin >= 0.0) {
            return Err(Error::Config("need at least one tracer and a nonnegative margin".into()));
        }
        if !(self.noise.sigma >= 0.0) {
            return Err(Error::Config("noise sigma must be >= 0".into()));
        }
        if !(self.smoothing.kernel_sigma > 0.0) {
            return Err(Error::Config("kernel_sigma must be > 0".into()));
        }
        if !(self.reconstruction.alpha > 0.0 && self.reconstruction.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        self.solver.validate()
    }

    pub fn vortex_system(&self) -> Result<VortexSystem> {
        VortexSystem::new(self.system.circulations.clone(), self.system.positions.clone())
    }

    pub fn initial_guess(&self) -> Result<VortexGuess> {
        VortexGuess::new(self.guess.circulations.clone(), self.guess.positions.clone())
    }

    /// Replaces every stage seed with one derived from `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.tracers.seed = seed;
        self.noise.seed = seed.wrapping_add(1);
        self.solver.seed = seed.wrapping_add(2);
    }
}
