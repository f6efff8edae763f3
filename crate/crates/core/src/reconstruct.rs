//! Metric-measure copy of the space from recovered eigendata: distances by
//! Varadhan's short-time asymptotics, dimension and density from the
//! diagonal of the heat kernel, and the comparison against ground truth.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::AuditLog;
use crate::control::{
    default_net, search_profiles, slice_spread, slice_vector, ControlConfig, ProjectorCache, SliceFamily,
    WindowMetric,
};
use crate::error::{Error, Result};
use crate::linalg::{procrustes, regress};
use crate::mms::{build_circle, build_torus_mesh, DiscreteSpace};
use crate::spectral::{eigensolve_full, SpectralData};
use crate::window::WindowSpectrum;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructConfig {
    /// Short-time windows start at floor_factor · h².
    pub floor_factor: f64,
    /// Width of the off-diagonal fit windows in decades of t.
    pub decades: f64,
    /// Width of the diagonal (dimension and density) window in decades.
    /// Kept short because reflections off a boundary at distance δ enter
    /// as e^{-δ²/t}.
    pub diagonal_decades: f64,
    pub samples: usize,
    /// Distance fits start at distance_factor · d · h, where the lattice
    /// heat kernel has entered its Gaussian regime.
    pub distance_factor: f64,
    /// Varadhan fit rms, relative to max(d², t_min), above which the
    /// window is shrunk.
    pub fit_tol: f64,
    pub max_shrinks: usize,
    /// Fit windows end before mixing_fraction / λ_1, where the kernel
    /// starts to feel the whole space.
    pub mixing_fraction: f64,
    /// Kernel values below this fraction of sqrt(p(a,a,t) p(b,b,t)) are
    /// rounding noise of the spectral sum and are discarded.
    pub noise_floor: f64,
    /// The floor is raised to noise_safety times the largest negative
    /// normalized kernel value seen, which measures the error in the
    /// recovered eigenfunctions.
    pub noise_safety: f64,
    pub max_dimension: usize,
    /// Largest |slope| of log(t^{n/2} p) accepted as t-stable.
    pub dimension_tol: f64,
    pub net_size: usize,
    /// Slice floor as a fraction of the lightest window vertex.
    pub slice_threshold: f64,
    /// Modes whose recovered values are compared with the truth.
    pub compared_modes: usize,
    /// Pairs with d ≤ pair_cap · diameter enter the metric distortion.
    pub pair_cap: f64,
    /// Points closer than this fraction of the diameter to a boundary
    /// vertex are left out of the density comparison.
    pub boundary_margin: f64,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            floor_factor: 10.0,
            decades: 1.0,
            diagonal_decades: 0.5,
            samples: 24,
            distance_factor: 3.0,
            fit_tol: 1e-3,
            max_shrinks: 4,
            mixing_fraction: 0.5,
            noise_floor: 1e-11,
            noise_safety: 10.0,
            max_dimension: 3,
            dimension_tol: 0.2,
            net_size: 8,
            slice_threshold: 0.25,
            compared_modes: 7,
            pair_cap: 0.45,
            boundary_margin: 0.1,
        }
    }
}

fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VaradhanFit {
    pub distance: f64,
    /// Coefficients of −4t log p = a + b t + c t log t.
    pub coefficients: Vec<f64>,
    pub window: (f64, f64),
    pub rms: f64,
    pub shrinks: usize,
    pub converged: bool,
}

fn varadhan_regression(p: &dyn Fn(f64) -> f64, lo: f64, hi: f64, n: usize, log_coef: Option<f64>) -> Option<(Vec<f64>, f64)> {
    let pts: Vec<(f64, f64)> = geometric(lo, hi, n)
        .into_iter()
        .filter_map(|t| {
            let v = p(t);
            (v > 0.0 && v.is_finite()).then(|| (t, -4.0 * t * v.ln()))
        })
        .collect();
    if pts.len() < 4 {
        return None;
    }
    if let Some(c) = log_coef {
        let x = DMatrix::from_fn(pts.len(), 2, |r, k| if k == 0 { 1.0 } else { pts[r].0 });
        let y = DVector::from_iterator(pts.len(), pts.iter().map(|q| q.1 - c * q.0 * q.0.ln()));
        let (beta, rms) = regress(&x, &y);
        return Some((vec![beta[0], beta[1], c], rms));
    }
    let x = DMatrix::from_fn(pts.len(), 3, |r, c| {
        let t = pts[r].0;
        [1.0, t, t * t.ln()][c]
    });
    let y = DVector::from_iterator(pts.len(), pts.iter().map(|q| q.1));
    let (beta, rms) = regress(&x, &y);
    Some((beta.iter().copied().collect(), rms))
}

/// d̂ from −4t log p(t) = d² + b t + c t log t over a short-time window.
/// A pilot fit just above the floor 10 h² locates d; the final window
/// starts at distance_factor · d̂ · h, where the lattice kernel is
/// Gaussian, and ends by `t_cap`. Samples where `p` is not positive and
/// finite are skipped, so callers mark noise with NaN. A fit whose rms
/// exceeds fit_tol · max(d², t_min) has its window halved in log scale (up
/// to `max_shrinks` times) and is flagged if it never settles or the
/// window runs into noise. When the
/// dimension n is known the t log t coefficient is pinned to 2n: windows
/// that start near d² leave the three regressors almost collinear.
pub fn varadhan_distance(p: &dyn Fn(f64) -> f64, h: f64, t_cap: f64, dimension: Option<usize>, cfg: &ReconstructConfig) -> Result<VaradhanFit> {
    let log_coef = dimension.map(|n| 2.0 * n as f64);
    if !(h > 0.0) || !(t_cap > 0.0) {
        return Err(Error::Invalid("spacing and time cap must be positive".into()));
    }
    let floor = cfg_floor(h, cfg);
    let width = 10f64.powf(cfg.decades);
    let mut lo = floor.min(t_cap / width);
    let (pilot, pilot_rms, pilot_window) = loop {
        let hi = (lo * width).min(t_cap);
        if let Some((coef, rms)) = varadhan_regression(p, lo, hi, cfg.samples, log_coef) {
            break (coef, rms, (lo, hi));
        }
        if hi >= t_cap {
            return Err(Error::Numerical("heat kernel below its noise floor up to the time cap".into()));
        }
        lo *= width.sqrt();
    };
    let d0 = pilot[0].max(0.0).sqrt();
    let start = lo.max(cfg.distance_factor * d0 * h);
    let mut hi = (start * width).min(t_cap);
    let lo = start.min(hi / width.sqrt());
    // the last usable fit, returned unconverged if the window runs into noise
    let mut best = VaradhanFit {
        distance: d0,
        coefficients: pilot,
        window: pilot_window,
        rms: pilot_rms,
        shrinks: 0,
        converged: false,
    };
    let mut shrinks = 0;
    loop {
        let Some((coef, rms)) = varadhan_regression(p, lo, hi, cfg.samples, log_coef) else {
            return Ok(best);
        };
        let scale = coef[0].abs().max(lo);
        let converged = rms <= cfg.fit_tol * scale;
        best = VaradhanFit { distance: coef[0].max(0.0).sqrt(), coefficients: coef, window: (lo, hi), rms, shrinks, converged };
        if converged || shrinks >= cfg.max_shrinks {
            return Ok(best);
        }
        hi = (lo * hi).sqrt();
        shrinks += 1;
    }
}

fn cfg_floor(h: f64, cfg: &ReconstructConfig) -> f64 {
    cfg.floor_factor * h * h
}

/// A heat kernel is positive, so the most negative value of
/// p(a, b, t) / sqrt(p(a, a, t) p(b, b, t)) over all pairs and a grid of
/// times is a lower bound on the noise in the synthesized kernel.
pub fn kernel_noise_floor(kernel: &RecoveredKernel, pairs: &[(usize, usize)], lo: f64, hi: f64, cfg: &ReconstructConfig) -> f64 {
    let worst = geometric(lo, hi.max(lo), 8)
        .par_iter()
        .map(|&t| {
            pairs
                .iter()
                .map(|&(a, b)| -kernel.p(a, b, t) / (kernel.p(a, a, t) * kernel.p(b, b, t)).sqrt())
                .filter(|q| q.is_finite())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    cfg.noise_floor.max(cfg.noise_safety * worst)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DimensionFit {
    pub dimension: usize,
    /// Slope of log p(x, x, t) against log t.
    pub log_slope: f64,
    /// Slope of log(t^{n/2} p) for n = 1..=max_dimension.
    pub slopes: Vec<f64>,
    pub window: (f64, f64),
}

fn diagonal_window(h: f64, cfg: &ReconstructConfig) -> (f64, f64) {
    let lo = cfg_floor(h, cfg);
    (lo, lo * 10f64.powf(cfg.diagonal_decades))
}

/// n̂ is the integer for which t^{n/2} p(x, x, t) is flattest in t.
pub fn select_dimension(p_diag: &dyn Fn(f64) -> f64, h: f64, cfg: &ReconstructConfig) -> Result<DimensionFit> {
    let (lo, hi) = diagonal_window(h, cfg);
    let ts = geometric(lo, hi, cfg.samples);
    let vals: Vec<f64> = ts.iter().map(|&t| p_diag(t)).collect();
    if vals.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Numerical("diagonal heat kernel not positive".into()));
    }
    let x = DMatrix::from_fn(ts.len(), 2, |r, c| if c == 0 { 1.0 } else { ts[r].ln() });
    let y = DVector::from_iterator(ts.len(), vals.iter().map(|v| v.ln()));
    let (beta, _) = regress(&x, &y);
    let log_slope = beta[1];
    let slopes: Vec<f64> = (1..=cfg.max_dimension).map(|n| log_slope + n as f64 / 2.0).collect();
    let (best, err) = slopes.iter().enumerate().map(|(i, s)| (i + 1, s.abs())).min_by(|a, b| a.1.total_cmp(&b.1)).expect("at least one dimension");
    if err > cfg.dimension_tol {
        return Err(Error::DimensionAmbiguity(format!("log slope {log_slope:.3}; slopes per n: {slopes:.3?}")));
    }
    Ok(DimensionFit { dimension: best, log_slope, slopes, window: (lo, hi) })
}

/// Diagonal heat kernel of a uniform exemplar of density one at a vertex,
/// used to calibrate c_n / ω_n together with the lattice corrections of
/// the same spacing.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DimensionCalibration {
    pub dimension: usize,
    pub spacing: f64,
    pub eigenvalues: Vec<f64>,
    /// φ_j(x)² at the exemplar vertex.
    pub weights: Vec<f64>,
    pub density: f64,
}

impl DimensionCalibration {
    pub fn from_exemplar(spec: &SpectralData, x: usize, density: f64, dimension: usize, spacing: f64) -> Self {
        Self {
            dimension,
            spacing,
            eigenvalues: spec.eigenvalues().to_vec(),
            weights: (0..spec.mode_count()).map(|j| spec.phi(j, x).powi(2)).collect(),
            density,
        }
    }

    /// Uniform cycle (n = 1) or square torus (n = 2) with edge length h,
    /// large enough that its own size does not show inside the windows.
    pub fn uniform(dimension: usize, h: f64) -> Result<Self> {
        let spec = match dimension {
            1 => eigensolve_full(&build_circle(256, 256.0 * h / (2.0 * std::f64::consts::PI))?)?,
            2 => eigensolve_full(&build_torus_mesh(40, 40, (40.0 * h, 40.0 * h))?)?,
            _ => return Err(Error::Invalid(format!("no uniform exemplar for dimension {dimension}"))),
        };
        Ok(Self::from_exemplar(&spec, 0, 1.0, dimension, h))
    }

    /// ρ · p_exemplar(x, x, t).
    pub fn reference(&self, t: f64) -> f64 {
        self.density * self.eigenvalues.iter().zip(&self.weights).map(|(l, w)| (-l * t).exp() * w).sum::<f64>()
    }

    /// c_n / ω_n as seen at time t: t^{n/2} times the reference diagonal.
    pub fn constant(&self, t: f64) -> f64 {
        t.powf(self.dimension as f64 / 2.0) * self.reference(t)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityFit {
    pub density: f64,
    /// d ρ̂(t) / dt of the ratio over the window.
    pub slope: f64,
    pub rms: f64,
    pub window: (f64, f64),
}

/// ρ̂(x) = lim_{t→0} c_n / (ω_n t^{n/2} p(x, x, t)), with c_n / ω_n t^{-n/2}
/// replaced by the calibrated exemplar diagonal; the ratio is
/// extrapolated linearly in t.
pub fn density_recovery(p_diag: &dyn Fn(f64) -> f64, cal: &DimensionCalibration, cfg: &ReconstructConfig) -> Result<DensityFit> {
    let (lo, hi) = diagonal_window(cal.spacing, cfg);
    let ts = geometric(lo, hi, cfg.samples);
    let mut ratio = Vec::with_capacity(ts.len());
    for &t in &ts {
        let p = p_diag(t);
        if !(p > 0.0) {
            return Err(Error::Numerical(format!("diagonal heat kernel {p:e} at t = {t:e}")));
        }
        ratio.push(cal.reference(t) / p);
    }
    let x = DMatrix::from_fn(ts.len(), 2, |r, c| if c == 0 { 1.0 } else { ts[r] });
    let (beta, rms) = regress(&x, &DVector::from_vec(ratio));
    Ok(DensityFit { density: beta[0], slope: beta[1], rms, window: (lo, hi) })
}

/// p̂(a, b, t) = Σ_j e^{−λ_j t} φ̂_j(a) φ̂_j(b) over recovered points; the
/// cluster gauge cancels in the sum.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecoveredKernel {
    pub eigenvalues: Vec<f64>,
    /// points × modes.
    pub values: DMatrix<f64>,
}

impl RecoveredKernel {
    pub fn p(&self, a: usize, b: usize, t: f64) -> f64 {
        self.eigenvalues.iter().enumerate().map(|(j, l)| (-l * t).exp() * self.values[(a, j)] * self.values[(b, j)]).sum()
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecoveredPoint {
    pub profile: Vec<f64>,
    pub volume: f64,
    /// Slice spread; near zero when the slice holds a single vertex.
    pub spread: f64,
    pub family: SliceFamily,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TriangleReport {
    pub violations: usize,
    pub worst: f64,
}

/// Triangle-inequality violations d(a, c) > d(a, b) + d(b, c) of more than
/// `tol`, with the largest excess.
pub fn triangle_report(d: &DMatrix<f64>, tol: f64) -> TriangleReport {
    let n = d.nrows();
    let rows: Vec<(usize, f64)> = (0..n)
        .into_par_iter()
        .map(|a| {
            let mut count = 0;
            let mut worst: f64 = 0.0;
            for b in 0..n {
                for c in 0..n {
                    let excess = d[(a, c)] - d[(a, b)] - d[(b, c)];
                    if excess > tol {
                        count += 1;
                        worst = worst.max(excess);
                    }
                }
            }
            (count, worst)
        })
        .collect();
    rows.into_iter().fold(TriangleReport::default(), |acc, (c, w)| TriangleReport { violations: acc.violations + c, worst: acc.worst.max(w) })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub net: Vec<usize>,
    pub hop_length: f64,
    pub slice_k: usize,
    pub points: Vec<RecoveredPoint>,
    pub kernel: RecoveredKernel,
    pub distance: DMatrix<f64>,
    pub unconverged_fits: usize,
    /// Relative kernel level below which values were treated as noise.
    pub noise_floor: f64,
    /// n̂ per point; None where no dimension is t-stable (near boundaries
    /// the reflected kernel bends the diagonal inside the window).
    pub dimension: Vec<Option<usize>>,
    pub dimension_failures: Vec<String>,
    /// ρ̂ per point, where n̂ exists.
    pub density: Vec<Option<f64>>,
    pub mass: f64,
    pub triangle: TriangleReport,
    /// Slices whose spread marks two or more merged vertices.
    pub collisions: usize,
    pub audit: AuditLog,
}

/// Runs the boundary-control pipeline on window spectral data: hop metric
/// and net on V, lattice search for the distance profiles of all points,
/// eigenfunction values on the recovered slices, and the heat kernel they
/// synthesize, from which distances, dimension and density are read off.
pub fn assemble_space(ws: &WindowSpectrum, ccfg: &ControlConfig, rcfg: &ReconstructConfig) -> Result<ReconstructionResult> {
    assemble_with_net(ws, &default_net(ws, rcfg.net_size)?, ccfg, rcfg)
}

/// Same as [`assemble_space`] on a given net of window vertices.
pub fn assemble_with_net(ws: &WindowSpectrum, net: &[usize], ccfg: &ControlConfig, rcfg: &ReconstructConfig) -> Result<ReconstructionResult> {
    let cache = ProjectorCache::new();
    let h = cache.hop_length(ws, ccfg)?;
    let metric = WindowMetric::from_operator(ws)?;
    let net = net.to_vec();
    // 2/k ≈ 0.4 h: annuli one vertex thick on a lattice of step h
    let k = (5.0 / h).ceil() as usize;
    let mut reach = 0;
    for &xi in &net {
        reach = reach.max(cache.saturation_hops(ws, &metric.ball(xi, 1.01 * metric.spacing())?, ccfg)?);
    }
    let max_radius = (reach + 1) as f64 * h;
    let lightest = ws.measure().iter().copied().fold(f64::INFINITY, f64::min);
    let threshold = rcfg.slice_threshold * lightest / ws.mass();
    let search = search_profiles(ws, &metric, &net, h, max_radius, k, threshold, ccfg, &cache)?;
    let phi0 = ws.phi0();
    let probes = [1, 2, 3];
    let recovered: Vec<(RecoveredPoint, Vec<f64>)> = search
        .accepted
        .par_iter()
        .map(|test| {
            let family = SliceFamily::schedule(&metric, &net, &test.profile, k)?;
            let v = slice_vector(ws, &family, ccfg, &cache)?;
            let values: Vec<f64> = v.iter().map(|x| phi0 * x / v[0]).collect();
            let spread = slice_spread(ws, &family, &probes, ccfg, &cache)?;
            Ok((RecoveredPoint { profile: test.profile.clone(), volume: test.volume, spread, family }, values))
        })
        .collect::<Result<_>>()?;
    let collisions = recovered.iter().filter(|(p, _)| p.spread > 1e-3).count();
    let count = recovered.len();
    let modes = ws.mode_count();
    let kernel = RecoveredKernel {
        eigenvalues: ws.eigenvalues().to_vec(),
        values: DMatrix::from_fn(count, modes, |a, j| recovered[a].1[j]),
    };
    let dims: Vec<Result<DimensionFit>> = (0..count).into_par_iter().map(|a| select_dimension(&|t| kernel.p(a, a, t), h, rcfg)).collect();
    let mut dimension = Vec::with_capacity(count);
    let mut dimension_failures = Vec::new();
    for (a, d) in dims.into_iter().enumerate() {
        match d {
            Ok(fit) => dimension.push(Some(fit.dimension)),
            Err(Error::DimensionAmbiguity(msg)) => {
                dimension_failures.push(format!("point {a}: {msg}"));
                dimension.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let pairs: Vec<(usize, usize)> = (0..count).flat_map(|a| (a + 1..count).map(move |b| (a, b))).collect();
    let lambda1 = kernel.eigenvalues.iter().copied().find(|l| *l > 1e-9).unwrap_or(1.0);
    let t_cap = rcfg.mixing_fraction / lambda1;
    let noise_floor = kernel_noise_floor(&kernel, &pairs, cfg_floor(h, rcfg).min(t_cap), t_cap, rcfg);
    let fits: Vec<VaradhanFit> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let p = |t: f64| {
                let v = kernel.p(a, b, t);
                let scale = (kernel.p(a, a, t) * kernel.p(b, b, t)).sqrt();
                if v > noise_floor * scale {
                    v
                } else {
                    f64::NAN
                }
            };
            let n = if dimension[a] == dimension[b] { dimension[a] } else { None };
            varadhan_distance(&p, h, t_cap, n, rcfg)
        })
        .collect::<Result<_>>()?;
    let mut distance = DMatrix::zeros(count, count);
    for (&(a, b), f) in pairs.iter().zip(&fits) {
        distance[(a, b)] = f.distance;
        distance[(b, a)] = f.distance;
    }
    let unconverged_fits = fits.iter().filter(|f| !f.converged).count();
    let mut calibrations: Vec<(usize, DimensionCalibration)> = Vec::new();
    for n in dimension.iter().flatten() {
        if !calibrations.iter().any(|(m, _)| m == n) {
            calibrations.push((*n, DimensionCalibration::uniform(*n, h)?));
        }
    }
    let density: Vec<Option<f64>> = (0..count)
        .into_par_iter()
        .map(|a| {
            let Some(n) = dimension[a] else { return Ok(None) };
            let cal = &calibrations.iter().find(|(m, _)| *m == n).expect("calibrated").1;
            density_recovery(&|t| kernel.p(a, a, t), cal, rcfg).map(|f| Some(f.density))
        })
        .collect::<Result<_>>()?;
    let triangle = triangle_report(&distance, 1e-9);
    let mut audit = AuditLog::default();
    audit.record("hop_metric", &["window_spectrum"], false);
    audit.record("profile_search", &["window_spectrum", "hop_metric"], false);
    audit.record("point_values", &["window_spectrum", "profile_search"], false);
    audit.record("varadhan_distance", &["recovered_kernel"], false);
    audit.record("density_recovery", &["recovered_kernel", "uniform_exemplar"], false);
    let points = recovered.into_iter().map(|(p, _)| p).collect();
    Ok(ReconstructionResult {
        net,
        hop_length: h,
        slice_k: k,
        points,
        kernel,
        distance,
        unconverged_fits,
        noise_floor,
        dimension,
        dimension_failures,
        density,
        mass: ws.mass(),
        triangle,
        collisions,
        audit,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// True vertex of each recovered point, when its slice holds exactly one.
    pub correspondence: Vec<Option<usize>>,
    pub unmatched: usize,
    /// Vertices no recovered point lands on.
    pub missed: usize,
    pub max_metric_distortion: f64,
    /// Same, over pairs with d ≤ pair_cap · diameter, relative to the diameter.
    pub capped_distortion_rel: f64,
    /// Same again, with both ends at least boundary_margin · diameter from
    /// the boundary.
    pub capped_distortion_inside_rel: f64,
    pub diameter: f64,
    pub mass_error_rel: f64,
    /// n̂ equals the declared dimension at every point.
    pub dimension_matches: bool,
    /// Same, away from the boundary.
    pub dimension_matches_inside: bool,
    /// max |ρ̂ / median ρ̂ − 1| over points away from the boundary.
    pub density_uniformity: f64,
    /// max |ρ̂ / ρ − 1| away from the boundary.
    pub density_error: f64,
    /// Same after dividing out the best common factor: the error of the
    /// ratio profile ρ̂(x)/ρ̂(y).
    pub density_shape_error: f64,
    /// Largest entry error of φ̂_j, j < compared_modes, after per-cluster
    /// Procrustes alignment.
    pub eigenfunction_error: f64,
}

/// Density of a vertex as mass per length of its cable cell.
fn true_density(space: &DiscreteSpace, x: usize) -> f64 {
    let half: f64 = space.neighbours(x).iter().map(|&(y, _)| space.dist(x, y) / 2.0).sum();
    if space.metadata().dim == 1 {
        space.measure()[x] / half
    } else {
        space.measure()[x]
    }
}

/// Validation only: compares a reconstruction with the space it came from,
/// using the simulation's vertex labels to match points.
pub fn compare(result: &ReconstructionResult, space: &DiscreteSpace, spec: &SpectralData, cfg: &ReconstructConfig) -> ComparisonReport {
    let correspondence: Vec<Option<usize>> = result
        .points
        .iter()
        .map(|p| {
            let hits = p.family.truth_hop_vertices(space, result.hop_length);
            (hits.len() == 1).then(|| hits[0])
        })
        .collect();
    let unmatched = correspondence.iter().filter(|c| c.is_none()).count();
    let mut seen = vec![false; space.vertex_count()];
    for c in correspondence.iter().flatten() {
        seen[*c] = true;
    }
    let missed = seen.iter().filter(|s| !**s).count();
    let matched: Vec<(usize, usize)> = correspondence.iter().enumerate().filter_map(|(a, c)| c.map(|x| (a, x))).collect();
    let diameter = space.diameter();
    let degree_max = (0..space.vertex_count()).map(|x| space.neighbours(x).len()).max().unwrap_or(0);
    let boundary: Vec<usize> = (0..space.vertex_count()).filter(|&x| space.neighbours(x).len() < degree_max).collect();
    let margin = cfg.boundary_margin * diameter;
    let interior = |x: usize| boundary.iter().all(|&b| space.dist(x, b) >= margin);
    let (mut worst, mut capped, mut capped_inside): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for (i, &(a, x)) in matched.iter().enumerate() {
        for &(b, y) in &matched[i + 1..] {
            let err = (result.distance[(a, b)] - space.dist(x, y)).abs();
            worst = worst.max(err);
            if space.dist(x, y) <= cfg.pair_cap * diameter {
                capped = capped.max(err);
                if interior(x) && interior(y) {
                    capped_inside = capped_inside.max(err);
                }
            }
        }
    }
    let inner: Vec<(usize, usize)> = matched.iter().copied().filter(|&(_, x)| interior(x)).collect();
    let rel: Vec<f64> = inner.iter().filter_map(|&(a, x)| result.density[a].map(|d| d / true_density(space, x))).collect();
    let mut dens: Vec<f64> = inner.iter().filter_map(|&(a, _)| result.density[a]).collect();
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        if v.is_empty() {
            f64::NAN
        } else {
            v[v.len() / 2]
        }
    };
    let dens_med = median(&mut dens.clone());
    let rel_med = median(&mut rel.clone());
    let density_uniformity = dens.iter_mut().map(|d| (*d / dens_med - 1.0).abs()).fold(0.0, f64::max);
    let density_error = rel.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
    let density_shape_error = rel.iter().map(|r| (r / rel_med - 1.0).abs()).fold(0.0, f64::max);
    let mut eigen_err: f64 = 0.0;
    let modes = cfg.compared_modes.min(spec.mode_count()).min(result.kernel.values.ncols());
    for r in spec.clusters().iter().filter(|r| r.start < modes) {
        let a = DMatrix::from_fn(matched.len(), r.len(), |i, c| result.kernel.values[(matched[i].0, r.start + c)]);
        let b = DMatrix::from_fn(matched.len(), r.len(), |i, c| spec.phi(r.start + c, matched[i].1));
        let q = procrustes(&a, &b);
        eigen_err = eigen_err.max((a * q - b).amax());
    }
    ComparisonReport {
        correspondence,
        unmatched,
        missed,
        max_metric_distortion: worst,
        capped_distortion_rel: capped / diameter,
        capped_distortion_inside_rel: capped_inside / diameter,
        diameter,
        mass_error_rel: (result.mass - space.total_measure()).abs() / space.total_measure(),
        dimension_matches: result.dimension.iter().all(|&n| n == Some(space.metadata().dim)),
        dimension_matches_inside: inner.iter().all(|&(a, _)| result.dimension[a] == Some(space.metadata().dim)),
        density_uniformity,
        density_error,
        density_shape_error,
        eigenfunction_error: eigen_err,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_distance_vanishes() {
        // continuum line: p = (4πt)^{-1/2}
        let p = |t: f64| (4.0 * std::f64::consts::PI * t).powf(-0.5);
        let f = varadhan_distance(&p, 0.01, 1.0, None, &ReconstructConfig::default()).unwrap();
        assert!(f.distance < 1e-6, "{}", f.distance);
    }

    #[test]
    fn gaussian_distance_is_exact() {
        let d: f64 = 0.7;
        let p = |t: f64| (4.0 * std::f64::consts::PI * t).powf(-0.5) * (-d * d / (4.0 * t)).exp();
        let f = varadhan_distance(&p, 0.01, 1.0, None, &ReconstructConfig::default()).unwrap();
        assert!((f.distance - d).abs() < 1e-9 && f.converged);
    }

    #[test]
    fn triangle_report_counts_excess() {
        let d = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0]);
        let r = triangle_report(&d, 1e-12);
        assert_eq!(r.violations, 2);
        assert!((r.worst - 1.0).abs() < 1e-15);
    }
}
