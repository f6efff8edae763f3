//! Experiment configuration: which space, which window, which stages, and
//! the baselines the summary is checked against.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use heatlab::control::ControlConfig;
use heatlab::gelfand::ExtractionConfig;
use heatlab::mms::{build_circle, build_torus_mesh, build_weighted_interval, Density, DiscreteSpace};
use heatlab::reconstruct::ReconstructConfig;
use heatlab::spectral::geometric_grid;
use heatlab::stability::StabilityConfig;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub space: SpaceSpec,
    pub window: WindowSpec,
    #[serde(default)]
    pub stages: Stages,
    /// Enables the stages that compare with ground truth.
    #[serde(default)]
    pub validation: bool,
    /// Keyed by `stage/metric`.
    #[serde(default)]
    pub baselines: BTreeMap<String, Baseline>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpaceSpec {
    Circle { n: usize, radius: f64 },
    WeightedInterval { n: usize, length: f64, density: Density },
    Torus { n1: usize, n2: usize, lengths: (f64, f64) },
    /// A serialized space, path relative to the config file.
    File { path: PathBuf },
}

impl SpaceSpec {
    pub fn build(&self, base: &Path) -> Result<DiscreteSpace> {
        Ok(match self {
            SpaceSpec::Circle { n, radius } => build_circle(*n, *radius)?,
            SpaceSpec::WeightedInterval { n, length, density } => build_weighted_interval(*n, *length, *density)?,
            SpaceSpec::Torus { n1, n2, lengths } => build_torus_mesh(*n1, *n2, *lengths)?,
            SpaceSpec::File { path } => {
                let p = base.join(path);
                let text = std::fs::read_to_string(&p).with_context(|| format!("reading space file {}", p.display()))?;
                DiscreteSpace::from_json(&text)?
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum WindowRule {
    /// `count` consecutive vertex labels from `start`.
    Arc { start: usize, count: usize },
    /// The first round(fraction · n) vertex labels.
    Fraction { fraction: f64 },
    List { vertices: Vec<usize> },
}

impl WindowRule {
    pub fn select(&self, n: usize) -> Result<Vec<usize>> {
        let v: Vec<usize> = match self {
            WindowRule::Arc { start, count } => (*start..start + count).collect(),
            WindowRule::Fraction { fraction } => {
                if !(*fraction > 0.0 && *fraction <= 1.0) {
                    bail!("window fraction {fraction} must lie in (0, 1]");
                }
                (0..((fraction * n as f64).round() as usize).max(1)).collect()
            }
            WindowRule::List { vertices } => vertices.clone(),
        };
        if v.is_empty() {
            bail!("window is empty");
        }
        if let Some(x) = v.iter().find(|&&x| x >= n) {
            bail!("window vertex {x} is outside a space of {n} vertices");
        }
        let mut sorted = v.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != v.len() {
            bail!("window lists a vertex twice");
        }
        Ok(v)
    }
}

/// Where the window spectrum beyond the extracted clusters comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    /// Extracted clusters only.
    None,
    /// Ground-truth modes past the extracted clusters, logged in the audit.
    #[default]
    GroundTruth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub vertices: WindowRule,
    pub t_min: f64,
    pub t_max: f64,
    pub per_decade: usize,
    /// Relative Gaussian noise on the observation table.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub tail: Tail,
}

impl WindowSpec {
    pub fn grid(&self) -> Vec<f64> {
        geometric_grid(self.t_min, self.t_max, self.per_decade)
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stages {
    pub extraction: ExtractionConfig,
    pub control: ControlStage,
    pub reconstruct: ReconstructStage,
    pub stability: StabilityStage,
    pub wave: WaveStage,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlStage {
    /// Radii of the domains of influence X(V, τ) whose volumes are measured.
    pub taus: Vec<f64>,
}

impl Default for ControlStage {
    fn default() -> Self {
        Self { taus: vec![0.1, 0.2, 0.3, 0.4, 0.5] }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructStage {
    pub enabled: bool,
    /// Start of the short-time fit windows; 10·h² when absent, never less.
    pub t_min: Option<f64>,
    pub control: ControlConfig,
    pub fits: ReconstructConfig,
}

impl Default for ReconstructStage {
    fn default() -> Self {
        Self { enabled: true, t_min: None, control: ControlConfig::default(), fits: ReconstructConfig::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityStage {
    pub enabled: bool,
    /// Relative edge-length perturbations of the second space.
    pub amplitudes: Vec<f64>,
    /// The almost-uniqueness rerun shifts every net point by this many labels.
    pub net_shift: usize,
    pub comparison: StabilityConfig,
}

impl Default for StabilityStage {
    fn default() -> Self {
        Self { enabled: false, amplitudes: vec![0.0025, 0.005, 0.01], net_shift: 1, comparison: StabilityConfig::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveStage {
    pub enabled: bool,
    /// Circle sizes of the finite-propagation refinement study.
    pub sizes: Vec<usize>,
    pub samples: usize,
}

impl Default for WaveStage {
    fn default() -> Self {
        Self { enabled: false, sizes: vec![64, 256, 1024], samples: 64 }
    }
}

/// Expected range of a summary metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Baseline {
    AtMost(f64),
    AtLeast(f64),
    Near { value: f64, tol: f64 },
}

impl Baseline {
    pub fn check(&self, v: f64) -> bool {
        match *self {
            Baseline::AtMost(b) => v <= b,
            Baseline::AtLeast(b) => v >= b,
            Baseline::Near { value, tol } => (v - value).abs() <= tol,
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Baseline::AtMost(b) => write!(f, "<= {b:e}"),
            Baseline::AtLeast(b) => write!(f, ">= {b:e}"),
            Baseline::Near { value, tol } => write!(f, "{value:e} +- {tol:e}"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Structural checks that need no space: tolerances positive, grids
    /// ordered, amplitudes in range.
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| -> Result<()> {
            if !(v > 0.0 && v.is_finite()) {
                bail!("{name} must be positive, got {v}");
            }
            Ok(())
        };
        let w = &self.window;
        positive("window.t_min", w.t_min)?;
        if !(w.t_max > w.t_min) {
            bail!("window.t_max must exceed t_min");
        }
        if w.per_decade == 0 {
            bail!("window.per_decade must be positive");
        }
        if !(w.noise >= 0.0 && w.noise.is_finite()) {
            bail!("window.noise must be non-negative");
        }
        let e = &self.stages.extraction;
        positive("extraction.rank_rel_tol", e.rank_rel_tol)?;
        positive("extraction.floor_factor", e.floor_factor)?;
        positive("extraction.fit_tolerance", e.fit_tolerance)?;
        positive("extraction.roundoff", e.roundoff)?;
        positive("extraction.gap_tol", e.gap_tol)?;
        let taus = &self.stages.control.taus;
        for &t in taus {
            positive("control.taus", t)?;
        }
        if taus.windows(2).any(|p| p[1] <= p[0]) {
            bail!("control.taus must be strictly increasing");
        }
        let r = &self.stages.reconstruct;
        if let Some(t) = r.t_min {
            positive("reconstruct.t_min", t)?;
        }
        positive("reconstruct.control.krylov_tol", r.control.krylov_tol)?;
        positive("reconstruct.control.saturation_tol", r.control.saturation_tol)?;
        positive("reconstruct.control.alpha", r.control.alpha)?;
        positive("reconstruct.fits.floor_factor", r.fits.floor_factor)?;
        positive("reconstruct.fits.fit_tol", r.fits.fit_tol)?;
        positive("reconstruct.fits.noise_floor", r.fits.noise_floor)?;
        positive("reconstruct.fits.dimension_tol", r.fits.dimension_tol)?;
        positive("reconstruct.fits.slice_threshold", r.fits.slice_threshold)?;
        let s = &self.stages.stability;
        positive("stability.comparison.kernel_floor", s.comparison.kernel_floor)?;
        positive("stability.comparison.cluster_tol", s.comparison.cluster_tol)?;
        if s.comparison.times.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            bail!("stability.comparison.times must lie in (0, 1]");
        }
        if s.amplitudes.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            bail!("stability.amplitudes must lie in (0, 1)");
        }
        for (key, b) in &self.baselines {
            if let Baseline::Near { tol, .. } = b {
                positive(&format!("baselines.{key}.tol"), *tol)?;
            }
        }
        Ok(())
    }

    /// Refuses short-time fit windows below 10·h², with h the longest edge,
    /// where graph kernels have not yet entered their Gaussian regime.
    pub fn check_discretization(&self, space: &DiscreteSpace) -> Result<(), heatlab::Error> {
        let Some(t_min) = self.stages.reconstruct.t_min else {
            return Ok(());
        };
        let h = space.edges().iter().map(|e| e.len).fold(0.0, f64::max);
        let floor = 10.0 * h * h;
        if t_min < floor {
            return Err(heatlab::Error::DiscretizationFloor { t_min, floor });
        }
        Ok(())
    }
}
