//! Eigendecomposition of L in L²(m), heat-kernel synthesis and windowed
//! observations.

use std::fmt::Write as _;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eigen;
use crate::mms::DiscreteSpace;

#[derive(Clone, Debug)]
pub struct SpectralData {
    eigenvalues: Vec<f64>,
    /// Column j holds φ_j at every vertex.
    eigenfunctions: DMatrix<f64>,
    measure: Vec<f64>,
    clusters: Vec<Range<usize>>,
    gap_tol: f64,
}

/// Groups ascending values into clusters separated by gaps of at least `tol`.
pub fn cluster_by_gap(values: &[f64], tol: f64) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        if i == values.len() || values[i] - values[i - 1] >= tol {
            out.push(start..i);
            start = i;
        }
    }
    out
}

/// Full-spectrum eigensolve with default tolerance.
pub fn eigensolve_full(space: &DiscreteSpace) -> Result<SpectralData> {
    eigensolve(space, None, None)
}

/// m-orthonormal eigenpairs of L, ascending. `j_max` keeps the lowest
/// modes; `gap_tol` defaults to 1e-6·(λ_max + 1).
pub fn eigensolve(space: &DiscreteSpace, j_max: Option<usize>, gap_tol: Option<f64>) -> Result<SpectralData> {
    let n = space.vertex_count();
    let j_max = j_max.unwrap_or(n);
    if j_max == 0 || j_max > n {
        return Err(Error::Invalid(format!("j_max = {j_max} must lie in 1..={n}")));
    }
    let (vals, vecs) = sym_eigen(space.symmetrized());
    let m = space.measure();
    let mut phi = DMatrix::zeros(n, j_max);
    for j in 0..j_max {
        let mut col: Vec<f64> = (0..n).map(|i| vecs[(i, j)] / m[i].sqrt()).collect();
        // deterministic sign: the first entry of largest magnitude is positive
        let mut arg = 0;
        for i in 1..n {
            if col[i].abs() > col[arg].abs() * (1.0 + 1e-9) {
                arg = i;
            }
        }
        if j == 0 {
            if col.iter().sum::<f64>() < 0.0 {
                col.iter_mut().for_each(|v| *v = -*v);
            }
        } else if col[arg] < 0.0 {
            col.iter_mut().for_each(|v| *v = -*v);
        }
        phi.set_column(j, &DVector::from_vec(col));
    }
    let mut eigenvalues: Vec<f64> = vals[..j_max].to_vec();
    // the space is connected, so the ground state is exactly the normalized
    // constant with λ_0 = 0; the solver only returns it up to rounding
    eigenvalues[0] = 0.0;
    let c0 = space.total_measure().powf(-0.5);
    phi.column_mut(0).fill(c0);
    let lam_max = eigenvalues[j_max - 1];
    let gap_tol = gap_tol.unwrap_or(1e-6 * (lam_max + 1.0));
    for j in 0..j_max {
        let col: Vec<f64> = phi.column(j).iter().copied().collect();
        let lphi = space.apply_laplacian(&col);
        let res = lphi.iter().zip(&col).map(|(a, b)| (a - eigenvalues[j] * b).abs()).fold(0.0, f64::max);
        if res > 1e-8 * eigenvalues[j].max(1.0) {
            return Err(Error::EigenResidual { mode: j, residual: res });
        }
    }
    let clusters = cluster_by_gap(&eigenvalues, gap_tol);
    Ok(SpectralData { eigenvalues, eigenfunctions: phi, measure: m.to_vec(), clusters, gap_tol })
}

impl SpectralData {
    /// Assembles spectral data from parts (used for synthetic and relabelled data).
    pub fn from_parts(eigenvalues: Vec<f64>, eigenfunctions: DMatrix<f64>, measure: Vec<f64>, gap_tol: f64) -> Self {
        let clusters = cluster_by_gap(&eigenvalues, gap_tol);
        Self { eigenvalues, eigenfunctions, measure, clusters, gap_tol }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenfunctions(&self) -> &DMatrix<f64> {
        &self.eigenfunctions
    }

    pub fn phi(&self, j: usize, x: usize) -> f64 {
        self.eigenfunctions[(x, j)]
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn clusters(&self) -> &[Range<usize>] {
        &self.clusters
    }

    pub fn gap_tol(&self) -> f64 {
        self.gap_tol
    }

    pub fn mode_count(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.measure.len()
    }

    pub fn is_complete(&self) -> bool {
        self.mode_count() == self.vertex_count()
    }

    /// p(x, y, t) by the spectral sum in ascending mode order.
    pub fn heat_kernel(&self, x: usize, y: usize, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::NonPositiveTime(t));
        }
        Ok(self.heat_sum(x, y, t))
    }

    fn heat_sum(&self, x: usize, y: usize, t: f64) -> f64 {
        let mut s = 0.0;
        for j in 0..self.mode_count() {
            s += (-self.eigenvalues[j] * t).exp() * self.eigenfunctions[(x, j)] * self.eigenfunctions[(y, j)];
        }
        s
    }

    /// Bound on the omitted tail |Σ_{j ≥ J} e^{-λ_j t} φ_j(x) φ_j(y)|, using
    /// Σ_j φ_j(x)² = 1/m_x. Zero for a complete spectrum.
    pub fn truncation_bound(&self, x: usize, y: usize, t: f64) -> f64 {
        if self.is_complete() {
            return 0.0;
        }
        let lam = *self.eigenvalues.last().unwrap();
        (-lam * t).exp() / (self.measure[x] * self.measure[y]).sqrt()
    }

    /// Dense heat matrix at time t.
    pub fn heat_matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        if !(t > 0.0) {
            return Err(Error::NonPositiveTime(t));
        }
        let n = self.vertex_count();
        let mut scaled = self.eigenfunctions.clone();
        for j in 0..self.mode_count() {
            let w = (-self.eigenvalues[j] * t).exp();
            scaled.column_mut(j).scale_mut(w);
        }
        let mut p = &scaled * self.eigenfunctions.transpose();
        for i in 0..n {
            for k in i + 1..n {
                let v = 0.5 * (p[(i, k)] + p[(k, i)]);
                p[(i, k)] = v;
                p[(k, i)] = v;
            }
        }
        Ok(p)
    }

    /// Coefficients ⟨u, φ_j⟩_m.
    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        (0..self.mode_count())
            .map(|j| (0..self.vertex_count()).map(|i| self.measure[i] * u[i] * self.eigenfunctions[(i, j)]).sum())
            .collect()
    }

    /// Σ_j c_j φ_j.
    pub fn synthesize(&self, c: &[f64]) -> Vec<f64> {
        (0..self.vertex_count())
            .map(|i| c.iter().enumerate().map(|(j, cj)| cj * self.eigenfunctions[(i, j)]).sum())
            .collect()
    }

    /// Same data with vertices relabelled (new index perm[i] is old i).
    pub fn relabel(&self, perm: &[usize]) -> Self {
        let n = self.vertex_count();
        let mut phi = DMatrix::zeros(n, self.mode_count());
        let mut measure = vec![0.0; n];
        for i in 0..n {
            phi.set_row(perm[i], &self.eigenfunctions.row(i));
            measure[perm[i]] = self.measure[i];
        }
        Self { eigenfunctions: phi, measure, ..self.clone() }
    }
}

/// i.i.d. relative noise p ↦ p(1 + rel·ξ), ξ ~ N(0,1), symmetric in (x, y).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    pub relative: f64,
    pub seed: u64,
}

/// Heat-kernel data on V × V × t_grid together with m restricted to V.
/// Carries vertex labels only; no reference to the generating space.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub vertices: Vec<usize>,
    pub measure: Vec<f64>,
    pub t_grid: Vec<f64>,
    /// samples[k] is the |V|×|V| table at t_grid[k], row-major.
    pub samples: Vec<Vec<f64>>,
    pub noise: Noise,
}

/// Geometric time grid with `per_decade` points per decade, endpoints included.
pub fn geometric_grid(t_min: f64, t_max: f64, per_decade: usize) -> Vec<f64> {
    let decades = (t_max / t_min).log10();
    let count = (decades * per_decade as f64).round().max(1.0) as usize;
    (0..=count)
        .map(|k| {
            if k == count {
                t_max
            } else {
                t_min * 10f64.powf(decades * k as f64 / count as f64)
            }
        })
        .collect()
}

pub fn sample_observation(spec: &SpectralData, window: &[usize], t_grid: &[f64], noise: Noise) -> Result<ObservationWindow> {
    if window.is_empty() {
        return Err(Error::Invalid("observation window is empty".into()));
    }
    if let Some(&v) = window.iter().find(|&&v| v >= spec.vertex_count()) {
        return Err(Error::Invalid(format!("window vertex {v} out of range")));
    }
    if t_grid.is_empty() || t_grid[0] <= 0.0 || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Invalid("t_grid must be positive and strictly increasing".into()));
    }
    let nv = window.len();
    let mut samples: Vec<Vec<f64>> = t_grid
        .par_iter()
        .map(|&t| {
            let mut tab = vec![0.0; nv * nv];
            for a in 0..nv {
                for b in a..nv {
                    let p = spec.heat_sum(window[a], window[b], t);
                    tab[a * nv + b] = p;
                    tab[b * nv + a] = p;
                }
            }
            tab
        })
        .collect();
    if noise.relative > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        let normal = Normal::new(0.0, noise.relative).map_err(|e| Error::Invalid(e.to_string()))?;
        for tab in samples.iter_mut() {
            for a in 0..nv {
                for b in a..nv {
                    let f = 1.0 + normal.sample(&mut rng);
                    tab[a * nv + b] *= f;
                    if a != b {
                        tab[b * nv + a] = tab[a * nv + b];
                    }
                }
            }
        }
    }
    let measure = window.iter().map(|&v| spec.measure()[v]).collect();
    Ok(ObservationWindow { vertices: window.to_vec(), measure, t_grid: t_grid.to_vec(), samples, noise })
}

impl ObservationWindow {
    pub fn size(&self) -> usize {
        self.vertices.len()
    }

    pub fn p(&self, a: usize, b: usize, k: usize) -> f64 {
        self.samples[k][a * self.size() + b]
    }

    pub fn measure_total(&self) -> f64 {
        self.measure.iter().sum()
    }

    /// I_0(t) = Σ_{x∈V} m_x p(x, x, t) on the grid.
    pub fn heat_trace(&self) -> Vec<f64> {
        (0..self.t_grid.len())
            .map(|k| (0..self.size()).map(|a| self.measure[a] * self.p(a, a, k)).sum())
            .collect()
    }

    /// Columnar text `x y t p`, 17 significant digits.
    pub fn to_columnar(&self) -> String {
        let mut s = String::from("# x y t p\n");
        for (k, t) in self.t_grid.iter().enumerate() {
            for a in 0..self.size() {
                for b in 0..self.size() {
                    let _ = writeln!(s, "{} {} {:.16e} {:.16e}", self.vertices[a], self.vertices[b], t, self.p(a, b, k));
                }
            }
        }
        s
    }

    /// Parses the columnar format; measure on V must be supplied separately.
    pub fn from_columnar(text: &str, vertices: Vec<usize>, measure: Vec<f64>) -> Result<Self> {
        let nv = vertices.len();
        let index = |v: usize| vertices.iter().position(|&w| w == v);
        let mut t_grid: Vec<f64> = Vec::new();
        let mut samples: Vec<Vec<f64>> = Vec::new();
        for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(Error::Invalid(format!("bad observation line: {line}")));
            }
            let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Invalid(e.to_string()));
            let x: usize = f[0].parse().map_err(|_| Error::Invalid(format!("bad vertex {}", f[0])))?;
            let y: usize = f[1].parse().map_err(|_| Error::Invalid(format!("bad vertex {}", f[1])))?;
            let (t, p) = (parse(f[2])?, parse(f[3])?);
            if t_grid.last() != Some(&t) {
                t_grid.push(t);
                samples.push(vec![f64::NAN; nv * nv]);
            }
            let (a, b) = match (index(x), index(y)) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::Invalid(format!("pair ({x}, {y}) outside window"))),
            };
            samples.last_mut().unwrap()[a * nv + b] = p;
        }
        if samples.iter().flatten().any(|v| v.is_nan()) {
            return Err(Error::Invalid("observation table incomplete".into()));
        }
        Ok(Self { vertices, measure, t_grid, samples, noise: Noise::default() })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenBoundsReport {
    /// ‖φ_j‖_∞ / λ_j^{N/4} for j ≥ 1.
    pub sup_ratio: Vec<f64>,
    /// max edge |φ_j(x) − φ_j(y)|/ℓ divided by λ_j^{(N+2)/4}.
    pub gradient_ratio: Vec<f64>,
    /// λ_i · i^{-2/N}.
    pub weyl_ratio: Vec<f64>,
    pub sup_constant: f64,
    pub gradient_constant: f64,
    pub weyl_constant: f64,
    pub all_finite: bool,
}

/// Empirical constants of the eigenfunction and Weyl-type bounds.
pub fn check_eigen_bounds(spec: &SpectralData, space: &DiscreteSpace) -> EigenBoundsReport {
    let big_n = space.metadata().dim_bound;
    let mut sup_ratio = Vec::new();
    let mut gradient_ratio = Vec::new();
    let mut weyl_ratio = Vec::new();
    for j in 1..spec.mode_count() {
        let lam = spec.eigenvalues()[j];
        let col = spec.eigenfunctions().column(j);
        let sup = col.amax();
        let grad = space
            .edges()
            .iter()
            .map(|e| (col[e.i] - col[e.j]).abs() / e.len)
            .fold(0.0, f64::max);
        sup_ratio.push(sup / lam.powf(big_n / 4.0));
        gradient_ratio.push(grad / lam.powf((big_n + 2.0) / 4.0));
        weyl_ratio.push(lam * (j as f64).powf(-2.0 / big_n));
    }
    let mx = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
    let all_finite = sup_ratio.iter().chain(&gradient_ratio).chain(&weyl_ratio).all(|v| v.is_finite());
    EigenBoundsReport {
        sup_constant: mx(&sup_ratio),
        gradient_constant: mx(&gradient_ratio),
        weyl_constant: mx(&weyl_ratio),
        sup_ratio,
        gradient_ratio,
        weyl_ratio,
        all_finite,
    }
}

/// Smallest C(t) with log p(x,y,t) ≥ −d(x,y)²/(4(1−ε)t) − C(t) over all y,
/// one value per time.
pub fn gaussian_lower_constant(space: &DiscreteSpace, spec: &SpectralData, x: usize, times: &[f64], eps: f64) -> Result<Vec<f64>> {
    times
        .iter()
        .map(|&t| {
            let mut c = f64::NEG_INFINITY;
            for y in 0..space.vertex_count() {
                let p = spec.heat_kernel(x, y, t)?;
                if p <= 0.0 {
                    return Ok(f64::INFINITY);
                }
                let d = space.dist(x, y);
                c = c.max(-d * d / (4.0 * (1.0 - eps) * t) - p.ln());
            }
            Ok(c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mms::{build_circle, build_weighted_interval, Density};

    #[test]
    fn clustering_by_gap() {
        let c = cluster_by_gap(&[0.0, 1.0, 1.0 + 1e-9, 2.0], 1e-6);
        assert_eq!(c, vec![0..1, 1..3, 3..4]);
    }

    #[test]
    fn circle_spectrum_pairs() {
        let space = build_circle(32, 1.0).unwrap();
        let spec = eigensolve_full(&space).unwrap();
        let sizes: Vec<usize> = spec.clusters().iter().map(|c| c.len()).collect();
        assert_eq!(sizes[0], 1);
        assert!(sizes[1..sizes.len() - 1].iter().all(|&s| s == 2));
        assert_eq!(*sizes.last().unwrap(), 1);
        assert!(spec.eigenvalues()[0].abs() < 1e-10);
        let phi0 = 1.0 / space.total_measure().sqrt();
        assert!(spec.eigenfunctions().column(0).iter().all(|v| (v - phi0).abs() < 1e-10));
    }

    #[test]
    fn stochastic_completeness() {
        let space = build_weighted_interval(24, 1.0, Density::Linear { slope: 1.0 }).unwrap();
        let spec = eigensolve_full(&space).unwrap();
        for t in [0.01, 0.3, 2.0] {
            for y in [0, 7, 23] {
                let s: f64 = (0..24).map(|x| space.measure()[x] * spec.heat_kernel(x, y, t).unwrap()).sum();
                assert!((s - 1.0).abs() < 1e-10);
            }
        }
        assert!(spec.heat_kernel(0, 0, 0.0).is_err());
    }

    #[test]
    fn columnar_round_trip() {
        let space = build_circle(16, 1.0).unwrap();
        let spec = eigensolve_full(&space).unwrap();
        let obs = sample_observation(&spec, &[2, 3, 4], &[0.1, 0.5], Noise::default()).unwrap();
        let text = obs.to_columnar();
        let back = ObservationWindow::from_columnar(&text, obs.vertices.clone(), obs.measure.clone()).unwrap();
        assert_eq!(back.samples, obs.samples);
        assert_eq!(back.t_grid, obs.t_grid);
    }

    #[test]
    fn geometric_grid_endpoints() {
        let g = geometric_grid(1e-3, 50.0, 16);
        assert_eq!(g[0], 1e-3);
        assert_eq!(*g.last().unwrap(), 50.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
