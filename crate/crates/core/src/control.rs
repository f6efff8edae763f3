//! Boundary control from window data: projections onto the states reachable
//! by sources in U ⊆ V within time τ, the volumes they carry, slices cut out
//! of them and the point values of eigenfunctions read off the slices.
//!
//! All vectors live in modal coordinates of the window spectrum: c ↦ Σ c_j φ_j.
//!
//! Two propagation models are offered. Continuous-time waves u_tt + L u = f
//! are the faithful dynamics, but on a graph their fronts disperse and the
//! domains of influence are only approximately sharp. Discrete-time waves
//! (one application of L per time step) move exactly one edge per step, so
//! the states reachable from U in n steps are exactly L²(n-hop ball of U).
//! The slice machinery defaults to the discrete model.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{svd, sym_eigen};
use crate::mms::DiscreteSpace;
use crate::wave::{duhamel_weights, source_to_coefficients, Source};
use crate::window::WindowSpectrum;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Propagation {
    /// Hat-in-time sources for u_tt + L u = f, soft Gram projectors.
    Continuous,
    /// Block Krylov spaces of L started from the indicators of U.
    #[default]
    Discrete,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    pub propagation: Propagation,
    /// Interior hat nodes per source in (0, τ).
    pub time_steps: usize,
    /// Tikhonov level of the projector P = M (M + α)^{-1}.
    pub alpha: f64,
    /// Starting node count for the saturation study.
    pub base_steps: usize,
    /// Residual change below which a doubling counts as saturated.
    pub saturation_tol: f64,
    /// Relative singular value below which a Krylov direction is dropped.
    pub krylov_tol: f64,
    /// Length of one time step of the discrete model; read off the window
    /// stiffness when absent.
    pub hop_length: Option<f64>,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            propagation: Propagation::Discrete,
            time_steps: 96,
            alpha: 1e-8,
            base_steps: 12,
            saturation_tol: 1e-3,
            krylov_tol: 1e-4,
            hop_length: None,
        }
    }
}

impl ControlConfig {
    /// Continuous-time settings with α matched to the edge length h. The
    /// soft projector keeps Gram directions above α; the weakest directions
    /// that still belong to the domain scale like h³ on 1-D cables.
    pub fn continuous(h: f64) -> Self {
        Self { propagation: Propagation::Continuous, alpha: alpha_for_spacing(h), ..Self::default() }
    }
}

/// Tikhonov level for edge length h.
pub fn alpha_for_spacing(h: f64) -> f64 {
    8e-5 * h.powi(3)
}

/// Hat in time at node i of the grid k·τ/(steps+1), k = 0..=steps+1, times
/// the indicator of vertex u; L²-normalised in space and time.
pub fn hat_sources(ws: &WindowSpectrum, support: &[usize], tau: f64, steps: usize) -> Result<Vec<Source>> {
    if !(tau > 0.0) || steps == 0 {
        return Err(Error::Invalid("hat sources need τ > 0 and at least one node".into()));
    }
    let dt = tau / (steps + 1) as f64;
    let mut out = Vec::with_capacity(support.len() * steps);
    for &u in support {
        let a = ws.local_index(u).ok_or(Error::SupportViolation(u))?;
        let scale = 1.0 / (ws.measure()[a] * 2.0 * dt / 3.0).sqrt();
        for i in 1..=steps {
            let mut profile = vec![0.0; steps + 2];
            profile[i] = scale;
            out.push(Source::point(u, dt, profile)?);
        }
    }
    Ok(out)
}

/// Modal states u^f(τ) of the hat sources, one column per source, in the
/// order of [`hat_sources`]. Closed form per eigenvalue, no time stepping.
pub fn response_matrix(ws: &WindowSpectrum, support: &[usize], tau: f64, steps: usize) -> Result<DMatrix<f64>> {
    if !(tau > 0.0) || steps == 0 {
        return Err(Error::Invalid("response needs τ > 0 and at least one node".into()));
    }
    let dt = tau / (steps + 1) as f64;
    let lam = ws.eigenvalues();
    let modes = ws.modes();
    let j_count = lam.len();
    // one Duhamel row per cluster; modes in a cluster share it
    let mut weights: Vec<Vec<f64>> = Vec::with_capacity(j_count);
    for (j, l) in lam.iter().enumerate() {
        if j > 0 && lam[j - 1] == *l {
            let prev = weights[j - 1].clone();
            weights.push(prev);
        } else {
            weights.push(duhamel_weights(*l, dt, steps + 1, tau).0);
        }
    }
    let norm = (2.0 * dt / 3.0).sqrt();
    let mut a = DMatrix::zeros(j_count, support.len() * steps);
    for (s, &u) in support.iter().enumerate() {
        let loc = ws.local_index(u).ok_or(Error::SupportViolation(u))?;
        let sm = ws.measure()[loc].sqrt();
        for j in 0..j_count {
            let amp = sm * modes[(loc, j)] / norm;
            for i in 0..steps {
                a[(j, s * steps + i)] = amp * weights[j][i + 1];
            }
        }
    }
    Ok(a)
}

/// G(f, g) = ⟨u^f(τ), u^g(τ)⟩ from window data alone.
pub fn controllability_gram(ws: &WindowSpectrum, sources: &[Source], tau: f64) -> Result<DMatrix<f64>> {
    let cols: Vec<Vec<f64>> = sources.par_iter().map(|f| source_to_coefficients(ws, f, tau)).collect::<Result<_>>()?;
    let a = DMatrix::from_fn(ws.mode_count(), sources.len(), |j, s| cols[s][j]);
    let g = a.transpose() * &a;
    check_psd(&g)?;
    Ok(g)
}

fn check_psd(g: &DMatrix<f64>) -> Result<()> {
    if g.nrows() == 0 {
        return Ok(());
    }
    let (vals, _) = sym_eigen((g + g.transpose()) * 0.5);
    let scale = vals.last().copied().unwrap_or(0.0).max(1.0);
    if vals[0] < -1e-10 * scale {
        return Err(Error::Numerical(format!("Gram matrix indefinite: eigenvalue {:e}", vals[0])));
    }
    Ok(())
}

/// Soft projector onto span{u^f(τ) : f on U × (0, τ)} in modal coordinates.
#[derive(Clone, Debug)]
pub struct InfluenceProjector {
    pub support: Vec<usize>,
    pub tau: f64,
    pub steps: usize,
    pub matrix: DMatrix<f64>,
    /// Eigenvalues of the modal Gram A Aᵀ, ascending.
    pub gram_spectrum: Vec<f64>,
}

impl InfluenceProjector {
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }

    /// ⟨e_0, P e_0⟩: the constant mode's share inside the domain.
    pub fn constant_share(&self) -> f64 {
        self.matrix[(0, 0)]
    }
}

pub fn influence_projector(ws: &WindowSpectrum, support: &[usize], tau: f64, steps: usize, alpha: f64) -> Result<InfluenceProjector> {
    let j = ws.mode_count();
    if tau <= 0.0 || support.is_empty() {
        return Ok(InfluenceProjector {
            support: support.to_vec(),
            tau,
            steps,
            matrix: DMatrix::zeros(j, j),
            gram_spectrum: vec![0.0; j],
        });
    }
    let a = response_matrix(ws, support, tau, steps)?;
    let m = &a * a.transpose();
    let (vals, vecs) = sym_eigen(m);
    let f = DVector::from_iterator(j, vals.iter().map(|w| w.max(0.0) / (w.max(0.0) + alpha)));
    let matrix = &vecs * DMatrix::from_diagonal(&f) * vecs.transpose();
    Ok(InfluenceProjector { support: support.to_vec(), tau, steps, matrix, gram_spectrum: vals })
}

/// Orthonormal bases of the discrete-time reachable sets from U: the
/// first `levels[n]` columns of `basis` span the states reachable in n
/// steps, that is L² of the n-hop ball of U.
#[derive(Clone, Debug)]
pub struct KrylovLadder {
    pub support: Vec<usize>,
    pub basis: DMatrix<f64>,
    pub levels: Vec<usize>,
}

impl KrylovLadder {
    /// Block Lanczos on diag(λ) started from the indicators of U, with two
    /// passes of full reorthogonalisation per block.
    pub fn build(ws: &WindowSpectrum, support: &[usize], tol: f64) -> Result<Self> {
        let lam = ws.eigenvalues();
        let modes = ws.modes();
        let j = lam.len();
        let mut block = DMatrix::zeros(j, support.len());
        for (c, &u) in support.iter().enumerate() {
            let a = ws.local_index(u).ok_or(Error::SupportViolation(u))?;
            let sm = ws.measure()[a].sqrt();
            for r in 0..j {
                block[(r, c)] = sm * modes[(a, r)];
            }
        }
        let mut basis = DMatrix::zeros(j, 0);
        let mut levels = Vec::new();
        while !support.is_empty() && basis.ncols() < j {
            let scale = block.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
            for _ in 0..2 {
                if basis.ncols() > 0 {
                    let coef = basis.transpose() * &block;
                    block -= &basis * coef;
                }
            }
            let (u, sv, _) = svd(&block);
            let keep: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] > tol * scale).collect();
            if keep.is_empty() {
                break;
            }
            let start = basis.ncols();
            basis = basis.resize_horizontally(start + keep.len(), 0.0);
            for (c, &i) in keep.iter().enumerate() {
                basis.set_column(start + c, &u.column(i));
            }
            levels.push(basis.ncols());
            let fresh = basis.columns(start, keep.len()).clone_owned();
            block = DMatrix::from_fn(j, keep.len(), |r, c| lam[r] * fresh[(r, c)]);
        }
        Ok(Self { support: support.to_vec(), basis, levels })
    }

    /// Dimension of the n-step reachable set.
    pub fn rank(&self, hops: usize) -> usize {
        self.levels.get(hops).or(self.levels.last()).copied().unwrap_or(0)
    }

    pub fn apply(&self, hops: Option<usize>, v: &DVector<f64>) -> DVector<f64> {
        let Some(n) = hops else {
            return DVector::zeros(v.len());
        };
        let q = self.basis.columns(0, self.rank(n));
        &q * (q.transpose() * v)
    }
}

/// Steps of length h that stay strictly inside time s: the discrete
/// domain is the n-hop ball with n h < s, empty when s ≤ 0.
pub fn hops_within(s: f64, h: f64) -> Option<usize> {
    if !(s > 0.0) {
        return None;
    }
    Some(((s / h - 1e-9).ceil() as usize).saturating_sub(1))
}

/// Edge length of the discrete model from the window stiffness: for each
/// edge inside V, sqrt(max(m_x, m_y) / c_xy); the median over edges.
pub fn hop_length(ws: &WindowSpectrum) -> Result<f64> {
    let mut lengths = window_edges(ws).into_iter().map(|(_, _, h)| h).collect::<Vec<_>>();
    if lengths.is_empty() {
        return Err(Error::IllPosed("no edges inside the window: hop length undetermined".into()));
    }
    lengths.sort_by(f64::total_cmp);
    Ok(lengths[lengths.len() / 2])
}

/// Edges (local indices) read off the window stiffness, with lengths.
fn window_edges(ws: &WindowSpectrum) -> Vec<(usize, usize, f64)> {
    let k = ws.local_stiffness();
    let n = k.nrows();
    let scale = (0..n).map(|a| k[(a, a)].abs()).fold(0.0, f64::max);
    let m = ws.measure();
    let mut out = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let c = -k[(a, b)];
            if c > 1e-6 * scale {
                out.push((a, b, (m[a].max(m[b]) / c).sqrt()));
            }
        }
    }
    out
}

/// Window vertices all of whose neighbours lie in V: the stiffness row
/// sums vanish exactly there, since the diagonal counts every edge and the
/// off-diagonal block only the edges inside V.
pub fn interior_vertices(ws: &WindowSpectrum) -> Vec<usize> {
    let k = ws.local_stiffness();
    (0..k.nrows())
        .filter(|&a| k.row(a).sum().abs() <= 1e-7 * k[(a, a)].abs())
        .map(|a| ws.vertices()[a])
        .collect()
}

/// `count` net points spread evenly (in window order) over the interior
/// vertices, so that no ball around a net point is clipped by the window.
pub fn default_net(ws: &WindowSpectrum, count: usize) -> Result<Vec<usize>> {
    let inner = interior_vertices(ws);
    if inner.len() < count || count == 0 {
        return Err(Error::Invalid(format!("window has {} interior vertices, net needs {count}", inner.len())));
    }
    if count == 1 {
        return Ok(vec![inner[inner.len() / 2]]);
    }
    Ok((0..count).map(|i| inner[(i * (inner.len() - 1) + (count - 1) / 2) / (count - 1)]).collect())
}

/// A projector of either propagation model.
#[derive(Clone, Debug)]
pub enum Projection {
    Soft(Arc<InfluenceProjector>),
    Hops(Arc<KrylovLadder>, Option<usize>),
}

impl Projection {
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Projection::Soft(p) => p.apply(v),
            Projection::Hops(l, n) => l.apply(*n, v),
        }
    }
}

type SoftKey = (Vec<usize>, u64, usize, u64);

/// Thread-safe cache of projectors for one window spectrum.
#[derive(Default)]
pub struct ProjectorCache {
    soft: Mutex<HashMap<SoftKey, Arc<InfluenceProjector>>>,
    ladders: Mutex<HashMap<(Vec<usize>, u64), Arc<KrylovLadder>>>,
    hop: OnceLock<f64>,
}

impl ProjectorCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.soft.lock().expect("cache lock").len() + self.ladders.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, ws: &WindowSpectrum, support: &[usize], tau: f64, cfg: &ControlConfig) -> Result<Arc<InfluenceProjector>> {
        let tau = if tau > 0.0 { tau } else { 0.0 };
        let key = (support.to_vec(), tau.to_bits(), cfg.time_steps, cfg.alpha.to_bits());
        if let Some(p) = self.soft.lock().expect("cache lock").get(&key) {
            return Ok(p.clone());
        }
        let p = Arc::new(influence_projector(ws, support, tau, cfg.time_steps, cfg.alpha)?);
        self.soft.lock().expect("cache lock").entry(key).or_insert(p.clone());
        Ok(p)
    }

    pub fn ladder(&self, ws: &WindowSpectrum, support: &[usize], cfg: &ControlConfig) -> Result<Arc<KrylovLadder>> {
        let key = (support.to_vec(), cfg.krylov_tol.to_bits());
        if let Some(l) = self.ladders.lock().expect("cache lock").get(&key) {
            return Ok(l.clone());
        }
        let l = Arc::new(KrylovLadder::build(ws, support, cfg.krylov_tol)?);
        self.ladders.lock().expect("cache lock").entry(key).or_insert(l.clone());
        Ok(l)
    }

    /// Step length of the discrete model, from the config or the window.
    pub fn hop_length(&self, ws: &WindowSpectrum, cfg: &ControlConfig) -> Result<f64> {
        if let Some(h) = cfg.hop_length {
            return Ok(h);
        }
        if let Some(h) = self.hop.get() {
            return Ok(*h);
        }
        let h = hop_length(ws)?;
        Ok(*self.hop.get_or_init(|| h))
    }

    /// Hops after which the discrete reachable set from `support` stops
    /// growing: an upper bound on the hop eccentricity of the support.
    pub fn saturation_hops(&self, ws: &WindowSpectrum, support: &[usize], cfg: &ControlConfig) -> Result<usize> {
        Ok(self.ladder(ws, support, cfg)?.levels.len())
    }

    /// Projector onto the states reachable from `support` within time τ.
    pub fn projection(&self, ws: &WindowSpectrum, support: &[usize], tau: f64, cfg: &ControlConfig) -> Result<Projection> {
        match cfg.propagation {
            Propagation::Continuous => Ok(Projection::Soft(self.get(ws, support, tau, cfg)?)),
            Propagation::Discrete => {
                let h = self.hop_length(ws, cfg)?;
                Ok(Projection::Hops(self.ladder(ws, support, cfg)?, hops_within(tau, h)))
            }
        }
    }
}

/// Domain of influence X(U, τ): the data-side projector plus, for
/// validation only, the ground-truth vertex set and cell measure.
#[derive(Clone, Debug)]
pub struct InfluenceDomain {
    pub support: Vec<usize>,
    pub tau: f64,
    pub projector: Arc<InfluenceProjector>,
}

impl InfluenceDomain {
    pub fn new(ws: &WindowSpectrum, support: &[usize], tau: f64, cfg: &ControlConfig) -> Result<Self> {
        let projector = Arc::new(influence_projector(ws, support, tau, cfg.time_steps, cfg.alpha)?);
        Ok(Self { support: support.to_vec(), tau, projector })
    }

    /// Vertices x with d(x, U) < τ.
    pub fn truth_vertices(&self, space: &DiscreteSpace) -> Vec<usize> {
        space.influence_vertices(&self.support, self.tau)
    }

    /// Measure of the cells of U grown by τ.
    pub fn truth_measure(&self, space: &DiscreteSpace) -> f64 {
        space.cell_measure_within(&self.support, self.tau)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VolumeEstimate {
    pub tau: f64,
    pub volume: f64,
    /// e_0ᵀ (I − P) e_0 at the final node count.
    pub residual: f64,
    pub converged: bool,
    pub steps: usize,
    /// (nodes, residual) along the doubling sequence.
    pub history: Vec<(usize, f64)>,
}

/// m̂(X(U, τ)) = ⟨e_0, P e_0⟩ / φ_0². In continuous time the nodes are
/// doubled until the residual stops moving or `time_steps` is exceeded;
/// the discrete model needs no saturation study.
pub fn project_constant(ws: &WindowSpectrum, support: &[usize], tau: f64, cfg: &ControlConfig) -> Result<VolumeEstimate> {
    let phi0_sq = ws.phi0().powi(2);
    if cfg.propagation == Propagation::Discrete {
        let mut e0 = DVector::zeros(ws.mode_count());
        e0[0] = 1.0;
        let share = ProjectorCache::new().projection(ws, support, tau, cfg)?.apply(&e0)[0];
        return Ok(VolumeEstimate {
            tau,
            volume: share / phi0_sq,
            residual: 1.0 - share,
            converged: true,
            steps: 0,
            history: vec![(0, 1.0 - share)],
        });
    }
    let mut steps = cfg.base_steps.max(1).min(cfg.time_steps.max(1));
    let mut history: Vec<(usize, f64)> = Vec::new();
    let mut converged = false;
    let share = loop {
        let share = influence_projector(ws, support, tau, steps, cfg.alpha)?.constant_share();
        let res = 1.0 - share;
        if let Some(&(_, prev)) = history.last() {
            converged = (prev - res).abs() < cfg.saturation_tol;
        }
        history.push((steps, res));
        if converged || steps >= cfg.time_steps {
            break share;
        }
        steps = (steps * 2).min(cfg.time_steps);
    };
    Ok(VolumeEstimate { tau, volume: share / phi0_sq, residual: 1.0 - share, converged, steps, history })
}

/// Intersection of annuli X(B_l, s_hi) \ X(B_l, s_lo) over the net points,
/// following the schedule δ = 1/2k, s = r(ξ_l) ± 2/k.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SliceFamily {
    pub net: Vec<usize>,
    /// Ball B(ξ_l, δ) ∩ V for every net point.
    pub balls: Vec<Vec<usize>>,
    pub radius: f64,
    /// (s_hi, s_lo) per net point, already shifted by the ball radius.
    pub times: Vec<(f64, f64)>,
    pub k: usize,
}

/// Distances between window points (local indices), as recovered on V.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WindowMetric {
    pub vertices: Vec<usize>,
    pub distance: DMatrix<f64>,
}

impl WindowMetric {
    pub fn new(vertices: Vec<usize>, distance: DMatrix<f64>) -> Result<Self> {
        if distance.nrows() != vertices.len() || distance.ncols() != vertices.len() {
            return Err(Error::Invalid("window metric has the wrong shape".into()));
        }
        Ok(Self { vertices, distance })
    }

    /// Ground-truth restriction (validation and tests).
    pub fn from_space(space: &DiscreteSpace, vertices: &[usize]) -> Self {
        let n = vertices.len();
        Self {
            vertices: vertices.to_vec(),
            distance: DMatrix::from_fn(n, n, |a, b| space.dist(vertices[a], vertices[b])),
        }
    }

    /// Hop metric of the window graph read off the window stiffness, scaled
    /// by the hop length. Exact on uniform cables; window points without a
    /// path inside V are at infinite distance.
    pub fn from_operator(ws: &WindowSpectrum) -> Result<Self> {
        let h = hop_length(ws)?;
        let n = ws.vertices().len();
        let mut adj = vec![Vec::new(); n];
        for (a, b, _) in window_edges(ws) {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut distance = DMatrix::from_element(n, n, f64::INFINITY);
        for s in 0..n {
            let mut queue = std::collections::VecDeque::from([s]);
            distance[(s, s)] = 0.0;
            while let Some(x) = queue.pop_front() {
                for &y in &adj[x] {
                    if distance[(s, y)].is_infinite() {
                        distance[(s, y)] = distance[(s, x)] + h;
                        queue.push_back(y);
                    }
                }
            }
        }
        Self::new(ws.vertices().to_vec(), distance)
    }

    fn local(&self, v: usize) -> Result<usize> {
        self.vertices.iter().position(|&w| w == v).ok_or(Error::SupportViolation(v))
    }

    pub fn dist(&self, u: usize, v: usize) -> Result<f64> {
        Ok(self.distance[(self.local(u)?, self.local(v)?)])
    }

    /// Largest nearest-neighbour spacing inside the window.
    pub fn spacing(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|a| (0..n).filter(|&b| b != a).map(|b| self.distance[(a, b)]).fold(f64::INFINITY, f64::min))
            .filter(|d| d.is_finite())
            .fold(0.0, f64::max)
    }

    /// Window points strictly within `delta` of `centre`.
    pub fn ball(&self, centre: usize, delta: f64) -> Result<Vec<usize>> {
        let c = self.local(centre)?;
        Ok(self.vertices.iter().enumerate().filter(|(b, _)| self.distance[(c, *b)] < delta).map(|(_, &v)| v).collect())
    }
}

impl SliceFamily {
    /// Slice for the distance profile `profile` (one value per net point) at
    /// level k. The ball radius never drops below the window spacing: a
    /// single vertex does not control its neighbourhood (in discrete time
    /// it adds one direction per step while a shell has two vertices even
    /// on a cable). The times are reduced by the ball's own radius so the
    /// annulus is centred on ξ_l, which presumes the ball is not clipped by
    /// the window edge.
    pub fn schedule(metric: &WindowMetric, net: &[usize], profile: &[f64], k: usize) -> Result<Self> {
        if net.len() != profile.len() || net.is_empty() {
            return Err(Error::Invalid("profile needs one value per net point".into()));
        }
        if k == 0 {
            return Err(Error::Invalid("slice level k must be positive".into()));
        }
        let kf = k as f64;
        let radius = (0.5 / kf).max(1.01 * metric.spacing());
        let mut balls = Vec::with_capacity(net.len());
        let mut times = Vec::with_capacity(net.len());
        for (&xi, &r) in net.iter().zip(profile) {
            let ball = metric.ball(xi, radius)?;
            let spread = ball.iter().map(|&u| metric.dist(xi, u)).collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
            times.push((r + 2.0 / kf - spread, r - 2.0 / kf - spread));
            balls.push(ball);
        }
        Ok(Self { net: net.to_vec(), balls, radius, times, k })
    }

    /// Ground-truth vertices of the discrete-model slice (validation only):
    /// x lies in the annulus of net point l when its hop distance to the
    /// ball is at most the hop count of s_hi and above that of s_lo.
    pub fn truth_hop_vertices(&self, space: &DiscreteSpace, h: f64) -> Vec<usize> {
        let tables: Vec<Vec<usize>> = self.balls.iter().map(|b| space.hop_distances(b)).collect();
        (0..space.vertex_count())
            .filter(|&x| {
                tables.iter().zip(&self.times).all(|(d, &(hi, lo))| {
                    let inside = |s: f64| hops_within(s, h).is_some_and(|n| d[x] <= n);
                    inside(hi) && !inside(lo)
                })
            })
            .collect()
    }

    /// Ground-truth measure of the slice (validation only), by sampling
    /// the cable with cell distances.
    pub fn truth_measure(&self, space: &DiscreteSpace, samples: usize) -> f64 {
        let times = self.times.clone();
        space.cell_measure_where(&self.balls, samples, |d| {
            d.iter().zip(&times).all(|(&dist, &(hi, lo))| dist < hi && !(dist < lo))
        })
    }
}

/// P_I e_0 for the slice: v ← P_A v − P_A P_B v per net point.
pub fn slice_vector(ws: &WindowSpectrum, family: &SliceFamily, cfg: &ControlConfig, cache: &ProjectorCache) -> Result<DVector<f64>> {
    let mut v = DVector::zeros(ws.mode_count());
    v[0] = 1.0;
    slice_apply(ws, family, &v, cfg, cache)
}

/// The slice composition applied to an arbitrary modal vector.
pub fn slice_apply(ws: &WindowSpectrum, family: &SliceFamily, v: &DVector<f64>, cfg: &ControlConfig, cache: &ProjectorCache) -> Result<DVector<f64>> {
    let mut v = v.clone();
    for (ball, &(hi, lo)) in family.balls.iter().zip(&family.times) {
        v = apply_annulus(ws, ball, hi, lo, &v, cfg, cache)?;
    }
    Ok(v)
}

/// Spread of the slice: for the probe modes j, m(S) Var_S(φ_j) relative
/// to (P_I e_j)_j, from one extra slice pass per probe. A slice holding a
/// single vertex is a rank-one projector and scores zero; two vertices
/// sharing a profile score near one.
pub fn slice_spread(
    ws: &WindowSpectrum,
    family: &SliceFamily,
    probes: &[usize],
    cfg: &ControlConfig,
    cache: &ProjectorCache,
) -> Result<f64> {
    let v = slice_vector(ws, family, cfg, cache)?;
    if !(v[0] > 0.0) {
        return Ok(0.0);
    }
    let mut worst: f64 = 0.0;
    for &j in probes.iter().filter(|&&j| j > 0 && j < ws.mode_count()) {
        let mut e = DVector::zeros(ws.mode_count());
        e[j] = 1.0;
        let pj = slice_apply(ws, family, &e, cfg, cache)?[j];
        if pj > 1e-14 {
            worst = worst.max(((pj - v[j] * v[j] / v[0]) / pj).max(0.0));
        }
    }
    Ok(worst)
}

fn apply_annulus(
    ws: &WindowSpectrum,
    ball: &[usize],
    hi: f64,
    lo: f64,
    v: &DVector<f64>,
    cfg: &ControlConfig,
    cache: &ProjectorCache,
) -> Result<DVector<f64>> {
    let pa = cache.projection(ws, ball, hi, cfg)?;
    if lo <= 0.0 {
        return Ok(pa.apply(v));
    }
    let pb = cache.projection(ws, ball, lo, cfg)?;
    let w = v - pb.apply(v);
    Ok(pa.apply(&w))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SliceVolume {
    pub k: usize,
    pub volume: f64,
}

/// m̂(I) = (P_I e_0)_0 / φ_0².
pub fn slice_volume(ws: &WindowSpectrum, family: &SliceFamily, cfg: &ControlConfig, cache: &ProjectorCache) -> Result<SliceVolume> {
    let v = slice_vector(ws, family, cfg, cache)?;
    let volume = v[0] / ws.phi0().powi(2);
    if volume < -1e-6 * ws.mass() {
        return Err(Error::Numerical(format!("negative slice volume {volume:e}: control basis not saturated")));
    }
    Ok(SliceVolume { k: family.k, volume })
}

/// Eigenfunction values at the point p singled out by a distance profile.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointValues {
    pub profile: Vec<f64>,
    /// Extrapolated values φ̂_j(p), one per window mode.
    pub values: Vec<f64>,
    /// Raw estimates per level, with the slice volume.
    pub levels: Vec<(usize, f64, Vec<f64>)>,
    /// Fewer than two usable levels: no extrapolation was possible.
    pub partial: bool,
}

/// φ̂_j(p) = φ_0 (P_I e_0)_j / (P_I e_0)_0 at each level k. Continuous
/// slices shrink with k and are extrapolated linearly in 1/k; discrete
/// slices become a single vertex, so the deepest level is taken as is.
/// Levels whose slice volume falls below `min_volume` are dropped and the
/// result is flagged.
pub fn recover_point_eigenvalues(
    ws: &WindowSpectrum,
    metric: &WindowMetric,
    net: &[usize],
    profile: &[f64],
    ks: &[usize],
    min_volume: f64,
    cfg: &ControlConfig,
    cache: &ProjectorCache,
) -> Result<PointValues> {
    let phi0 = ws.phi0();
    let mut levels = Vec::new();
    for &k in ks {
        let fam = SliceFamily::schedule(metric, net, profile, k)?;
        let v = slice_vector(ws, &fam, cfg, cache)?;
        let vol = v[0] / phi0.powi(2);
        if !(vol > min_volume) {
            break;
        }
        levels.push((k, vol, v.iter().map(|x| phi0 * x / v[0]).collect::<Vec<f64>>()));
    }
    if levels.is_empty() {
        return Err(Error::Resolution(format!("slice volume collapsed at k = {}", ks.first().copied().unwrap_or(0))));
    }
    let j = ws.mode_count();
    let partial = levels.len() < 2 || levels.len() < ks.len();
    let values = if levels.len() < 2 || cfg.propagation == Propagation::Discrete {
        levels[levels.len() - 1].2.clone()
    } else {
        let x = DMatrix::from_fn(levels.len(), 2, |r, c| if c == 0 { 1.0 } else { 1.0 / levels[r].0 as f64 });
        (0..j)
            .map(|m| {
                let y = DVector::from_iterator(levels.len(), levels.iter().map(|l| l.2[m]));
                crate::linalg::lstsq(&x, &y)[0]
            })
            .collect()
    };
    Ok(PointValues { profile: profile.to_vec(), values, levels, partial })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProfileTest {
    pub profile: Vec<f64>,
    pub k: usize,
    pub volume: f64,
    pub accepted: bool,
}

/// A candidate profile survives level k if its slice keeps at least
/// `threshold · m̂(X)` of volume.
pub fn test_profile(
    ws: &WindowSpectrum,
    metric: &WindowMetric,
    net: &[usize],
    profile: &[f64],
    k: usize,
    threshold: f64,
    cfg: &ControlConfig,
    cache: &ProjectorCache,
) -> Result<ProfileTest> {
    let fam = SliceFamily::schedule(metric, net, profile, k)?;
    let vol = slice_volume(ws, &fam, cfg, cache)?.volume;
    Ok(ProfileTest { profile: profile.to_vec(), k, volume: vol, accepted: vol >= threshold * ws.mass() })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProfileSearch {
    pub net: Vec<usize>,
    pub step: f64,
    pub k: usize,
    /// Accepted candidates (lattice profiles) with their slice volumes.
    pub accepted: Vec<ProfileTest>,
    /// Partial candidates examined by the search.
    pub visited: usize,
}

/// Branch and bound over lattice profiles: net points are added one at a
/// time and a partial profile is kept only while its partial slice holds
/// `threshold · m̂(X)`. Continuous slices overlap across neighbouring
/// lattice values, so there only the local maxima of the volume along the
/// new coordinate are expanded, one branch per recovered point instead of
/// the whole acceptance tube. Discrete slices for distinct values are
/// disjoint vertex sets, so every survivor is kept and the frontier never
/// outgrows the vertex count.
pub fn search_profiles(
    ws: &WindowSpectrum,
    metric: &WindowMetric,
    net: &[usize],
    step: f64,
    max_radius: f64,
    k: usize,
    threshold: f64,
    cfg: &ControlConfig,
    cache: &ProjectorCache,
) -> Result<ProfileSearch> {
    if !(step > 0.0) || net.is_empty() {
        return Err(Error::Invalid("profile search needs a positive step and a non-empty net".into()));
    }
    let lattice: Vec<f64> = (0..).map(|i| i as f64 * step).take_while(|r| *r <= max_radius + 1e-12).collect();
    let full = SliceFamily::schedule(metric, net, &vec![0.0; net.len()], k)?;
    let floor = threshold * ws.mass();
    let mut e0 = DVector::zeros(ws.mode_count());
    e0[0] = 1.0;
    let phi0_sq = ws.phi0().powi(2);
    // frontier of (partial profile, partial slice vector)
    let mut frontier: Vec<(Vec<f64>, DVector<f64>)> = vec![(Vec::new(), e0)];
    let mut visited = 0;
    for l in 0..net.len() {
        let ball = &full.balls[l];
        let spread = ball.iter().map(|&u| metric.dist(net[l], u)).collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
        let kf = k as f64;
        let expanded: Vec<Vec<(Vec<f64>, DVector<f64>)>> = frontier
            .par_iter()
            .map(|(prefix, v)| {
                let vols: Vec<(f64, DVector<f64>)> = lattice
                    .iter()
                    .map(|&r| {
                        let w = apply_annulus(ws, ball, r + 2.0 / kf - spread, r - 2.0 / kf - spread, v, cfg, cache)?;
                        Ok((w[0] / phi0_sq, w))
                    })
                    .collect::<Result<_>>()?;
                let mut out = Vec::new();
                for i in 0..vols.len() {
                    let here = vols[i].0;
                    let left = if i > 0 { vols[i - 1].0 } else { f64::NEG_INFINITY };
                    let right = vols.get(i + 1).map(|x| x.0).unwrap_or(f64::NEG_INFINITY);
                    let peak = cfg.propagation == Propagation::Discrete || (here >= left && here > right);
                    if here >= floor && peak {
                        let mut p = prefix.clone();
                        p.push(lattice[i]);
                        out.push((p, vols[i].1.clone()));
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        visited += frontier.len() * lattice.len();
        frontier = expanded.into_iter().flatten().collect();
        if frontier.is_empty() {
            return Err(Error::Resolution(format!("no profile survives net point {l} at k = {k}")));
        }
    }
    let accepted = frontier
        .into_iter()
        .map(|(profile, v)| ProfileTest { profile, k, volume: v[0] / phi0_sq, accepted: true })
        .collect();
    Ok(ProfileSearch { net: net.to_vec(), step, k, accepted, visited })
}

/// Nearest lattice point.
pub fn snap(profile: &[f64], step: f64) -> Vec<f64> {
    profile.iter().map(|r| (r / step).round() * step).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mms::build_circle;
    use crate::spectral::eigensolve_full;

    fn circle_window() -> WindowSpectrum {
        let space = build_circle(32, 1.0).unwrap();
        let spec = eigensolve_full(&space).unwrap();
        WindowSpectrum::from_truth(&spec, &(0..8).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn response_matches_explicit_sources() {
        let ws = circle_window();
        let support = [1, 2];
        let a = response_matrix(&ws, &support, 0.7, 5).unwrap();
        let srcs = hat_sources(&ws, &support, 0.7, 5).unwrap();
        for (s, f) in srcs.iter().enumerate() {
            let c = source_to_coefficients(&ws, f, 0.7).unwrap();
            for j in 0..ws.mode_count() {
                assert!((a[(j, s)] - c[j]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn zero_time_projector_vanishes() {
        let ws = circle_window();
        let p = influence_projector(&ws, &[0], 0.0, 4, 1e-8).unwrap();
        assert_eq!(p.constant_share(), 0.0);
    }

    #[test]
    fn gram_single_source_is_its_norm() {
        let ws = circle_window();
        let srcs = hat_sources(&ws, &[3], 0.5, 3).unwrap();
        let g = controllability_gram(&ws, &srcs[..1], 0.5).unwrap();
        let c = source_to_coefficients(&ws, &srcs[0], 0.5).unwrap();
        let n2: f64 = c.iter().map(|x| x * x).sum();
        assert!((g[(0, 0)] - n2).abs() < 1e-14 * n2.max(1.0));
    }
}
