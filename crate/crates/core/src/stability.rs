//! Spectral ε-approximations between two spaces under a vertex map, and
//! the distortion of maps built by running the inverse pipeline on both.

use std::ops::Range;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ControlConfig;
use crate::error::{Error, Result};
use crate::linalg::procrustes;
use crate::mms::DiscreteSpace;
use crate::reconstruct::{assemble_with_net, compare, ReconstructConfig, ReconstructionResult};
use crate::spectral::{geometric_grid, SpectralData};
use crate::window::WindowSpectrum;

/// A map from a set of X vertices (the domain, often a ball) into Y.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VertexMap {
    pub domain: Vec<usize>,
    pub image: Vec<usize>,
}

impl VertexMap {
    pub fn new(domain: Vec<usize>, image: Vec<usize>) -> Result<Self> {
        if domain.len() != image.len() {
            return Err(Error::Invalid("vertex map needs one image per domain vertex".into()));
        }
        Ok(Self { domain, image })
    }

    pub fn identity(domain: &[usize]) -> Self {
        Self { domain: domain.to_vec(), image: domain.to_vec() }
    }

    /// Restriction of the relabelling x ↦ perm[x] to `domain`.
    pub fn permutation(perm: &[usize], domain: &[usize]) -> Self {
        Self { domain: domain.to_vec(), image: domain.iter().map(|&x| perm[x]).collect() }
    }

    pub fn len(&self) -> usize {
        self.domain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domain.is_empty()
    }

    pub fn get(&self, x: usize) -> Option<usize> {
        self.domain.iter().position(|&d| d == x).map(|i| self.image[i])
    }

    fn check(&self, nx: usize, ny: usize) -> Result<()> {
        if let Some(&x) = self.domain.iter().find(|&&x| x >= nx) {
            return Err(Error::Invalid(format!("vertex {x} is not in the source space")));
        }
        match self.domain.iter().zip(&self.image).find(|(_, &y)| y >= ny) {
            Some((&x, _)) => Err(Error::ImageOutside(x)),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityConfig {
    /// Times at which heat kernels are compared; all in (0, 1].
    pub times: Vec<f64>,
    /// Pairs whose kernel falls below this fraction of the diagonal
    /// geometric mean are rounding noise in the spectral sum and skipped.
    pub kernel_floor: f64,
    /// Relative gap below which neighbouring eigenvalues share a cluster
    /// when matching the two spectra.
    pub cluster_tol: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self { times: geometric_grid(1e-3, 1.0, 16), kernel_floor: 1e-10, cluster_tol: 1e-2 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeatRatio {
    pub eps: f64,
    /// (t, max |ratio − 1| at t) over the grid.
    pub profile: Vec<(f64, f64)>,
    /// Pairs dropped as below the kernel floor, summed over times.
    pub skipped: usize,
}

/// Heat kernel p(x, y, t) of a space at every pair, accurate to relative
/// rounding in each entry. With S = M^{-1/2} K M^{-1/2} and c = max S_ii,
/// e^{-tS} = e^{-ct} e^{t(cI − S)} and cI − S is entrywise non-negative, so
/// the Taylor terms and the squarings never cancel, even where the kernel
/// is many orders below its diagonal. A spectral sum loses those entries
/// to eigenvector rounding of order ε‖S‖/gap.
pub fn positive_heat_kernel(space: &DiscreteSpace, t: f64) -> Result<DMatrix<f64>> {
    if !(t > 0.0) {
        return Err(Error::NonPositiveTime(t));
    }
    let n = space.vertex_count();
    let sym = space.symmetrized();
    let c = (0..n).map(|i| sym[(i, i)]).fold(0.0, f64::max);
    let mut b = DMatrix::from_fn(n, n, |i, j| if i == j { c - sym[(i, i)] } else { -sym[(i, j)] }.max(0.0) * t);
    let norm = b.row_iter().map(|r| r.sum()).fold(0.0, f64::max).max(c * t);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    b /= 2f64.powi(squarings);
    let mut term = DMatrix::identity(n, n);
    let mut e = term.clone();
    for k in 1..40 {
        term = &term * &b / k as f64;
        e += &term;
        if term.max() <= 1e-18 * e.max() {
            break;
        }
    }
    e *= (-c * t / 2f64.powi(squarings)).exp();
    for _ in 0..squarings {
        e = &e * &e;
    }
    let m = space.measure();
    let p = DMatrix::from_fn(n, n, |i, j| e[(i, j)] / (m[i] * m[j]).sqrt());
    Ok((&p + p.transpose()) * 0.5)
}

fn kernel_block(space: &DiscreteSpace, rows: &[usize], t: f64) -> Result<DMatrix<f64>> {
    let p = positive_heat_kernel(space, t)?;
    Ok(DMatrix::from_fn(rows.len(), rows.len(), |a, b| p[(rows[a], rows[b])]))
}

/// Smallest ε with max |p_Y(ψx, ψy, t) / p_X(x, y, t) − 1| ≤ ε for all
/// x, y in the domain of ψ and grid times t ∈ [ε, 1]. The deviation over
/// [δ, 1] shrinks as δ grows, so the fixed point is found by walking up
/// the grid.
pub fn heat_ratio_eps(x: &DiscreteSpace, y: &DiscreteSpace, map: &VertexMap, cfg: &StabilityConfig) -> Result<HeatRatio> {
    map.check(x.vertex_count(), y.vertex_count())?;
    let mut times = cfg.times.clone();
    times.sort_by(f64::total_cmp);
    if times.first().is_none_or(|&t| !(t > 0.0)) || times.last().is_some_and(|&t| t > 1.0) {
        return Err(Error::Invalid("comparison times must lie in (0, 1]".into()));
    }
    let rows: Vec<(f64, usize)> = times
        .par_iter()
        .map(|&t| {
            let px = kernel_block(x, &map.domain, t)?;
            let py = kernel_block(y, &map.image, t)?;
            let (mut worst, mut skipped) = (0.0f64, 0);
            for a in 0..map.len() {
                for b in a..map.len() {
                    let fx = cfg.kernel_floor * (px[(a, a)] * px[(b, b)]).sqrt();
                    let fy = cfg.kernel_floor * (py[(a, a)] * py[(b, b)]).sqrt();
                    if px[(a, b)] <= fx || py[(a, b)] <= fy {
                        skipped += 1;
                        continue;
                    }
                    worst = worst.max((py[(a, b)] / px[(a, b)] - 1.0).abs());
                }
            }
            Ok((worst, skipped))
        })
        .collect::<Result<_>>()?;
    let profile: Vec<(f64, f64)> = times.iter().zip(&rows).map(|(&t, r)| (t, r.0)).collect();
    let skipped = rows.iter().map(|r| r.1).sum();
    // tail[k]: worst deviation over times[k..]
    let mut tail = vec![0.0f64; times.len() + 1];
    for k in (0..times.len()).rev() {
        tail[k] = tail[k + 1].max(rows[k].0);
    }
    let mut eps = *times.last().expect("non-empty grid");
    let mut below = 0.0f64;
    for k in 0..times.len() {
        // for ε in (times[k-1], times[k]] the window holds times[k..]
        let candidate = tail[k].max(below);
        if candidate <= times[k] {
            eps = candidate;
            break;
        }
        below = times[k];
    }
    Ok(HeatRatio { eps, profile, skipped })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenEps {
    /// ∞ when the cluster structures differ from the first cluster on, and
    /// at least 1/(compared modes) when they differ later.
    pub eps: f64,
    /// Modes 0..=modes enter the bound.
    pub modes: usize,
    /// True when every available mode satisfies the bound, so ε is limited
    /// by the number of modes rather than by their agreement.
    pub saturated: bool,
    /// |Δλ_i| + sup |Δφ_i| on the domain after gauge alignment, per mode.
    pub per_mode: Vec<f64>,
    /// First cluster that differs; modes from there on are not compared.
    pub defect: Option<String>,
}

fn coarse_clusters(values: &[f64], rel: f64) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        if i == values.len() || values[i] - values[i - 1] >= rel * values[i].abs().max(1.0) {
            out.push(start..i);
            start = i;
        }
    }
    out
}

/// Smallest ε such that the first ⌊1/ε⌋ + 1 modes satisfy
/// |λ_i^Y − λ_i^X| + sup_z |φ_i^Y(ψz) − φ_i^X(z)| < ε, each cluster's gauge
/// chosen by Procrustes on the domain. Clusters are matched by position
/// with a coarse relative gap, so perturbations that split a multiple
/// eigenvalue still pair it with its origin.
pub fn eigen_eps(spec_x: &SpectralData, spec_y: &SpectralData, map: &VertexMap, cfg: &StabilityConfig) -> Result<EigenEps> {
    map.check(spec_x.vertex_count(), spec_y.vertex_count())?;
    let count = spec_x.mode_count().min(spec_y.mode_count());
    let cx = coarse_clusters(&spec_x.eigenvalues()[..count], cfg.cluster_tol);
    let cy = coarse_clusters(&spec_y.eigenvalues()[..count], cfg.cluster_tol);
    // clusters are compared in order up to the first one that differs;
    // the fixed point below rarely needs more than the first few
    let mut shared: Vec<Range<usize>> = Vec::new();
    let mut defect = None;
    for (a, b) in cx.iter().zip(&cy) {
        if a.end >= count {
            break;
        }
        if a != b {
            defect = Some(format!("modes {a:?} form one cluster in X but {b:?} in Y"));
            break;
        }
        shared.push(a.clone());
    }
    let usable = shared.last().map_or(0, |r| r.end);
    if usable == 0 && defect.is_some() {
        return Ok(EigenEps { eps: f64::INFINITY, modes: 0, saturated: false, per_mode: Vec::new(), defect });
    }
    let mut per_mode = vec![0.0; usable];
    for r in &shared {
        let a = DMatrix::from_fn(map.len(), r.len(), |i, c| spec_y.phi(r.start + c, map.image[i]));
        let b = DMatrix::from_fn(map.len(), r.len(), |i, c| spec_x.phi(r.start + c, map.domain[i]));
        let aligned = &a * procrustes(&a, &b);
        for c in 0..r.len() {
            let i = r.start + c;
            let dphi = (0..map.len()).map(|z| (aligned[(z, c)] - b[(z, c)]).abs()).fold(0.0, f64::max);
            per_mode[i] = (spec_y.eigenvalues()[i] - spec_x.eigenvalues()[i]).abs() + dphi;
        }
    }
    if usable == 0 {
        return Err(Error::Invalid("no complete eigenvalue cluster to compare".into()));
    }
    // worst[k]: bound over modes 0..=k, non-decreasing in k
    let mut worst = per_mode.clone();
    for k in 1..usable {
        worst[k] = worst[k].max(worst[k - 1]);
    }
    let top = usable - 1;
    // past a differing cluster nothing is certified, so ε cannot drop
    // below the range the compared modes cover
    if defect.is_none() && (top == 0 || worst[top] <= 1.0 / (top + 1) as f64) {
        return Ok(EigenEps { eps: worst[top], modes: top, saturated: true, per_mode, defect });
    }
    // ε ∈ (1/(k+1), 1/k] asks for modes 0..=k
    for k in (1..=top).rev() {
        let eps = worst[k].max(1.0 / (k + 1) as f64);
        if eps <= 1.0 / k as f64 {
            return Ok(EigenEps { eps, modes: k, saturated: false, per_mode, defect });
        }
    }
    Ok(EigenEps { eps: worst[0].max(1.0), modes: 0, saturated: false, per_mode, defect })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Distortion {
    /// max |d_Y(ψx, ψy) − d_X(x, y)| over the domain.
    pub distortion: f64,
    /// max over y ∈ Y of d_Y(y, ψ(domain)).
    pub defect: f64,
    pub worst_pair: Option<(usize, usize)>,
}

pub fn gh_distortion(x: &DiscreteSpace, y: &DiscreteSpace, map: &VertexMap) -> Result<Distortion> {
    map.check(x.vertex_count(), y.vertex_count())?;
    let n = map.len();
    let (distortion, worst_pair) = (0..n)
        .into_par_iter()
        .map(|a| {
            (a + 1..n)
                .map(|b| {
                    let e = (y.dist(map.image[a], map.image[b]) - x.dist(map.domain[a], map.domain[b])).abs();
                    (e, Some((map.domain[a], map.domain[b])))
                })
                .fold((0.0, None), |m, e| if e.0 > m.0 { e } else { m })
        })
        .reduce(|| (0.0, None), |m, e| if e.0 > m.0 || (e.0 == m.0 && e.1 < m.1 && e.1.is_some()) { e } else { m });
    let defect = (0..y.vertex_count())
        .into_par_iter()
        .map(|v| map.image.iter().map(|&w| y.dist(v, w)).fold(f64::INFINITY, f64::min))
        .reduce(|| 0.0, f64::max);
    Ok(Distortion { distortion, defect, worst_pair })
}

/// Same edges with lengths scaled by 1 + amplitude·ξ_e, ξ_e uniform in
/// [−1, 1] from a seeded stream. A fixed seed gives the same ξ for every
/// amplitude, so a ladder of amplitudes perturbs along one direction.
pub fn perturb_edge_lengths(space: &DiscreteSpace, amplitude: f64, seed: u64) -> Result<DiscreteSpace> {
    if !(0.0..1.0).contains(&amplitude) {
        return Err(Error::Invalid(format!("perturbation amplitude {amplitude} must lie in [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lengths: Vec<f64> = space.edges().iter().map(|e| e.len * (1.0 + amplitude * rng.random_range(-1.0..=1.0))).collect();
    space.with_edge_lengths(&lengths)
}

/// Recovered points of X matched to recovered points of Y by their
/// distance profiles over corresponding nets.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Extension {
    pub net_x: Vec<usize>,
    pub net_y: Vec<usize>,
    /// Y point for every X point (indices into the two point lists).
    pub assignment: Vec<usize>,
    /// Sup-norm profile mismatch of each assignment.
    pub mismatch: Vec<f64>,
    /// X points with a second Y profile within the lattice resolution.
    pub ambiguous: Vec<usize>,
    pub x: ReconstructionResult,
    pub y: ReconstructionResult,
}

/// Runs the pipeline on both windows with the net of X carried over by ψ,
/// then sends every recovered X point to the Y point with the nearest
/// distance profile in the sup norm.
pub fn extend_map_via_pipeline(
    ws_x: &WindowSpectrum,
    ws_y: &WindowSpectrum,
    psi: &VertexMap,
    net_x: &[usize],
    ccfg: &ControlConfig,
    rcfg: &ReconstructConfig,
) -> Result<Extension> {
    let net_y = net_x
        .iter()
        .map(|&v| psi.get(v).ok_or_else(|| Error::Invalid(format!("net vertex {v} is outside the domain of ψ"))))
        .collect::<Result<Vec<_>>>()?;
    let x = assemble_with_net(ws_x, net_x, ccfg, rcfg)?;
    let y = assemble_with_net(ws_y, &net_y, ccfg, rcfg)?;
    let resolution = x.hop_length.max(y.hop_length);
    let mut assignment = Vec::with_capacity(x.points.len());
    let mut mismatch = Vec::with_capacity(x.points.len());
    let mut ambiguous = Vec::new();
    for (a, p) in x.points.iter().enumerate() {
        let mut gaps: Vec<(f64, usize)> = y
            .points
            .iter()
            .enumerate()
            .map(|(b, q)| (p.profile.iter().zip(&q.profile).map(|(r, s)| (r - s).abs()).fold(0.0, f64::max), b))
            .collect();
        gaps.sort_by(|u, v| u.0.total_cmp(&v.0).then(u.1.cmp(&v.1)));
        let Some(&(best, b)) = gaps.first() else {
            return Err(Error::Resolution("no recovered point on the Y side".into()));
        };
        if gaps.get(1).is_some_and(|g| g.0 - best < 0.5 * resolution) {
            ambiguous.push(a);
        }
        assignment.push(b);
        mismatch.push(best);
    }
    Ok(Extension { net_x: net_x.to_vec(), net_y, assignment, mismatch, ambiguous, x, y })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ApproxReport {
    pub map: VertexMap,
    pub heat_ratio: HeatRatio,
    pub eigen: EigenEps,
    pub distortion: Distortion,
}

/// All three comparisons for one map.
pub fn approx_report(
    x: (&DiscreteSpace, &SpectralData),
    y: (&DiscreteSpace, &SpectralData),
    map: &VertexMap,
    cfg: &StabilityConfig,
) -> Result<ApproxReport> {
    Ok(ApproxReport {
        map: map.clone(),
        heat_ratio: heat_ratio_eps(x.0, y.0, map, cfg)?,
        eigen: eigen_eps(x.1, y.1, map, cfg)?,
        distortion: gh_distortion(x.0, y.0, map)?,
    })
}

/// Ψ on vertices (validation only): the simulation correspondence of each
/// side turns matched points into matched vertices. Points whose slice
/// does not hold exactly one vertex are left out.
pub fn extension_vertex_map(
    ext: &Extension,
    x: (&DiscreteSpace, &SpectralData),
    y: (&DiscreteSpace, &SpectralData),
    rcfg: &ReconstructConfig,
) -> VertexMap {
    let cx = compare(&ext.x, x.0, x.1, rcfg).correspondence;
    let cy = compare(&ext.y, y.0, y.1, rcfg).correspondence;
    let mut pairs: Vec<(usize, usize)> =
        ext.assignment.iter().enumerate().filter_map(|(a, &b)| Some((cx[a]?, cy[b]?))).collect();
    pairs.sort_unstable();
    pairs.dedup_by_key(|p| p.0);
    VertexMap { domain: pairs.iter().map(|p| p.0).collect(), image: pairs.iter().map(|p| p.1).collect() }
}

/// max d_Y(Ψx, Ψ'x) over the common domain of two extensions.
pub fn map_spread(a: &VertexMap, b: &VertexMap, y: &DiscreteSpace) -> f64 {
    a.domain
        .iter()
        .zip(&a.image)
        .filter_map(|(&x, &u)| b.get(x).map(|v| y.dist(u, v)))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mms::build_circle;
    use crate::spectral::eigensolve_full;

    #[test]
    fn heat_ratio_fixed_point_walks_the_grid() {
        let space = build_circle(16, 1.0).unwrap();
        let scaled = space.with_scaled_measure(1.25).unwrap();
        let map = VertexMap::identity(&[0, 1, 2]);
        let cfg = StabilityConfig { times: vec![0.1, 0.2, 0.5], ..Default::default() };
        // deviation 0.2 everywhere: [0.2, 1] holds 0.2 and 0.5
        let r = heat_ratio_eps(&space, &scaled, &map, &cfg).unwrap();
        assert!((r.eps - 0.2).abs() < 1e-12, "{}", r.eps);
    }

    #[test]
    fn positive_kernel_matches_the_spectral_sum() {
        let space = build_circle(32, 1.0).unwrap();
        let spec = eigensolve_full(&space).unwrap();
        for t in [1e-3, 0.1, 2.0] {
            let p = positive_heat_kernel(&space, t).unwrap();
            let q = spec.heat_matrix(t).unwrap();
            assert!((p - q).amax() < 1e-11, "t = {t}");
        }
    }

    #[test]
    fn collapsing_map_distortion_is_the_largest_distance() {
        let space = build_circle(32, 1.0).unwrap();
        let domain: Vec<usize> = (0..8).collect();
        let map = VertexMap::new(domain.clone(), vec![3; 8]).unwrap();
        let d = gh_distortion(&space, &space, &map).unwrap();
        let brute = domain.iter().flat_map(|&a| domain.iter().map(move |&b| (a, b))).map(|(a, b)| space.dist(a, b)).fold(0.0, f64::max);
        assert_eq!(d.distortion, brute);
    }

    #[test]
    fn image_outside_is_rejected() {
        let space = build_circle(8, 1.0).unwrap();
        let map = VertexMap::new(vec![0], vec![9]).unwrap();
        assert!(matches!(heat_ratio_eps(&space, &space, &map, &StabilityConfig::default()), Err(Error::ImageOutside(0))));
    }

    #[test]
    fn perturbation_is_seeded() {
        let space = build_circle(16, 1.0).unwrap();
        let a = perturb_edge_lengths(&space, 0.01, 7).unwrap();
        let b = perturb_edge_lengths(&space, 0.01, 7).unwrap();
        assert_eq!(a.distance(), b.distance());
        assert!(a.edges().iter().zip(space.edges()).all(|(e, f)| (e.len / f.len - 1.0).abs() <= 0.01));
    }
}
