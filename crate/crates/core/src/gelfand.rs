//! Spectral data on V from the heat-kernel table on V alone: total mass,
//! eigenvalue clusters by peeling plus joint refinement, the cluster kernels
//! Q_j and their gauge-fixed factorisation.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::AuditLog;
use crate::error::{Error, Result};
use crate::fit::{amplitudes_for_rates, log_linear, refine, refine_shared};
use crate::linalg::{psd_sqrt, sym_eigen};
use crate::spectral::ObservationWindow;
use crate::window::{Provenance, WindowCluster, WindowSpectrum};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    /// Number of non-constant clusters to recover.
    pub clusters: usize,
    /// Extra clusters fitted beyond the target and then discarded.
    pub guards: usize,
    /// Relative singular-value threshold for the rank of Q_j.
    pub rank_rel_tol: f64,
    /// Peeling windows need the remainder above this multiple of the floor.
    pub floor_factor: f64,
    /// Accepted joint-fit residual, in units of the noise floor.
    pub fit_tolerance: f64,
    /// Relative round-off level assumed for exact tables.
    pub roundoff: f64,
    /// Eigenvalues closer than this are merged into one cluster.
    pub gap_tol: f64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self { clusters: 3, guards: 2, rank_rel_tol: 1e-6, floor_factor: 1e3, fit_tolerance: 4.0, roundoff: 1e-15, gap_tol: 1e-6 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MassEstimate {
    pub mass: f64,
    pub phi0: f64,
    /// lim I_0(t) = m(V)/m(X).
    pub limit: f64,
    pub error_bar: f64,
    pub pilot_rate: Option<f64>,
}

fn floor_rel(obs: &ObservationWindow, cfg: &ExtractionConfig) -> f64 {
    obs.noise.relative.max(cfg.roundoff)
}

/// I_0(t) on the grid.
pub fn heat_trace_on_v(obs: &ObservationWindow) -> Vec<f64> {
    obs.heat_trace()
}

/// Largest decade of indices (by time) in which `r` exceeds `thresh`.
fn top_decade(t: &[f64], r: &[f64], thresh: &[f64], below: usize) -> Vec<usize> {
    let Some(hi) = (0..below).rev().find(|&k| r[k] > thresh[k]) else {
        return Vec::new();
    };
    (0..=hi).filter(|&k| t[k] >= t[hi] / 10.0 && r[k] > thresh[k]).collect()
}

/// m(X) and φ_0 from the long-time limit of I_0, extrapolated in
/// e^{−λ̂_1 t} after a pilot rate fit.
pub fn recover_mass_and_phi0(obs: &ObservationWindow, cfg: &ExtractionConfig) -> Result<MassEstimate> {
    let i0 = obs.heat_trace();
    let t = &obs.t_grid;
    let k = t.len() - 1;
    let fr = floor_rel(obs, cfg);
    let r: Vec<f64> = i0.iter().map(|v| v - i0[k]).collect();
    let thresh: Vec<f64> = i0.iter().map(|v| cfg.floor_factor * fr * v).collect();
    let win = top_decade(t, &r, &thresh, k);
    let pilot = if win.len() >= 3 {
        let tw: Vec<f64> = win.iter().map(|&i| t[i]).collect();
        let rw: Vec<f64> = win.iter().map(|&i| r[i]).collect();
        log_linear(&tw, &rw).map(|(rate, _)| rate).filter(|r| *r > 0.0)
    } else {
        None
    };
    let extrapolate = |j: usize| -> f64 {
        match pilot {
            Some(rate) if j > 0 => {
                let q = (-rate * (t[j] - t[j - 1])).exp();
                i0[j] - (i0[j - 1] - i0[j]) * q / (1.0 - q)
            }
            _ => i0[j],
        }
    };
    let limit = extrapolate(k);
    let error_bar = if k >= 2 { (limit - extrapolate(k - 1)).abs() } else { 0.0 } + fr * i0[k];
    if !(limit > 0.0) {
        return Err(Error::IllPosed(format!("heat-trace limit estimate {limit} is not positive")));
    }
    let phi0 = (limit / obs.measure_total()).sqrt();
    Ok(MassEstimate { mass: obs.measure_total() / limit, phi0, limit, error_bar, pilot_rate: pilot })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateFit {
    pub rate: f64,
    pub amplitude: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenvalueRecovery {
    pub constant: f64,
    /// Recovered non-constant clusters, ascending.
    pub clusters: Vec<RateFit>,
    /// Extra clusters fitted to absorb the next terms; not reported.
    pub guard: Vec<RateFit>,
    /// Rough rates from the log-linear peel, before refinement.
    pub peeled: Vec<f64>,
    /// Rates from the heat-trace fit alone, before the pooled pair fit.
    pub trace_rates: Vec<f64>,
    /// Pooled rms of the pair fit, in noise units.
    pub pooled_rms: Option<f64>,
    pub window: (f64, f64),
    pub window_start: usize,
    pub partial: bool,
    pub diagnostic: String,
}

impl EigenvalueRecovery {
    pub fn achieved(&self) -> usize {
        self.clusters.len()
    }

    /// Rates used in the final model: target clusters then the guards.
    pub fn model_rates(&self) -> Vec<f64> {
        self.clusters.iter().chain(self.guard.iter()).map(|c| c.rate).collect()
    }
}

struct Stage {
    fit: crate::fit::ExpFit,
    start: usize,
}

/// Joint fit on the widest window [t_s, t_max] whose residual stays within
/// tolerance.
fn widest_fit(t: &[f64], y: &[f64], scale: &[f64], rates: &[f64], tol: f64) -> Option<Stage> {
    let n = t.len();
    let np = 1 + 2 * rates.len();
    let mut best: Option<Stage> = None;
    let mut s = n.checked_sub(np + 3)?;
    loop {
        let fit = if rates.is_empty() {
            let (a, rms) = amplitudes_for_rates(&t[s..], &y[s..], &scale[s..], &[]);
            Some(crate::fit::ExpFit { constant: a[0], rates: vec![], amplitudes: vec![], rms })
        } else {
            // restart from the peel guess and from the last accepted fit
            let mut cands = vec![refine(&t[s..], &y[s..], &scale[s..], rates)];
            if let Some(b) = &best {
                cands.push(refine(&t[s..], &y[s..], &scale[s..], &b.fit.rates));
            }
            cands
                .into_iter()
                .flatten()
                .filter(|f| f.rates.iter().all(|r| r.is_finite() && *r > 0.0))
                .min_by(|a, b| a.rms.total_cmp(&b.rms))
        };
        match fit {
            Some(f) if f.rms <= tol => best = Some(Stage { fit: f, start: s }),
            _ if best.is_some() => break,
            _ => {}
        }
        if s == 0 {
            break;
        }
        s -= 1;
    }
    best
}

/// Peels decay rates off I_0 − a_0 one at a time; each new rate is followed
/// by a joint refinement of all rates found so far on the widest window
/// the model explains to noise level. Guard clusters beyond the target
/// are fitted and discarded.
pub fn recover_eigenvalues(obs: &ObservationWindow, mass: &MassEstimate, cfg: &ExtractionConfig) -> Result<EigenvalueRecovery> {
    let t = &obs.t_grid;
    let y = obs.heat_trace();
    let fr = floor_rel(obs, cfg);
    let scale: Vec<f64> = y.iter().map(|v| fr * v).collect();
    let thresh: Vec<f64> = scale.iter().map(|s| cfg.floor_factor * s).collect();
    let want = cfg.clusters + cfg.guards;
    let mut rates: Vec<f64> = Vec::new();
    let mut peeled = Vec::new();
    let mut diagnostic = String::new();
    let mut stage = widest_fit(t, &y, &scale, &rates, cfg.fit_tolerance).ok_or_else(|| {
        Error::IllPosed("constant term does not fit the long-time heat trace".into())
    })?;
    let _ = mass;
    while rates.len() < want {
        let model = |tk: f64| -> f64 {
            stage.fit.constant
                + stage.fit.rates.iter().zip(&stage.fit.amplitudes).map(|(r, a)| a * (-r * tk).exp()).sum::<f64>()
        };
        let rem: Vec<f64> = (0..t.len()).map(|k| y[k] - model(t[k])).collect();
        let win = top_decade(t, &rem, &thresh, stage.start);
        let tw: Vec<f64> = win.iter().map(|&k| t[k]).collect();
        let rw: Vec<f64> = win.iter().map(|&k| rem[k]).collect();
        let last = rates.last().copied().unwrap_or(0.0);
        let Some((new_rate, _)) = (win.len() >= 3).then(|| log_linear(&tw, &rw)).flatten().filter(|(r, _)| *r > last)
        else {
            diagnostic = format!("remainder at noise floor after {} clusters", rates.len());
            break;
        };
        peeled.push(new_rate);
        let mut trial = stage.fit.rates.clone();
        trial.push(new_rate);
        match widest_fit(t, &y, &scale, &trial, cfg.fit_tolerance) {
            Some(s) if s.start < stage.start => {
                stage = s;
                rates = stage.fit.rates.clone();
            }
            _ => {
                diagnostic = format!("refinement with {} rates did not extend the fit window", trial.len());
                break;
            }
        }
    }
    let mut fits: Vec<RateFit> = stage
        .fit
        .rates
        .iter()
        .zip(&stage.fit.amplitudes)
        .map(|(&rate, &amplitude)| RateFit { rate, amplitude })
        .collect();
    // merge near-coincident rates
    let mut merged: Vec<RateFit> = Vec::new();
    for f in fits.drain(..) {
        match merged.last_mut() {
            Some(m) if (f.rate - m.rate).abs() < cfg.gap_tol * (1.0 + f.rate) => m.amplitude += f.amplitude,
            _ => merged.push(f),
        }
    }
    let guard = merged.split_off(merged.len().min(cfg.clusters));
    let partial = merged.len() < cfg.clusters;
    if !partial {
        diagnostic.clear();
    }
    Ok(EigenvalueRecovery {
        constant: stage.fit.constant,
        clusters: merged,
        guard,
        peeled,
        trace_rates: stage.fit.rates.clone(),
        pooled_rms: None,
        window: (t[stage.start], *t.last().unwrap()),
        window_start: stage.start,
        partial,
        diagnostic,
    })
}

/// Re-fits the rates jointly on every pair of window points (each pair
/// keeps its own amplitudes). The trace only sees Σ_x m_x φ_j(x)², the
/// pairs see each cluster with its own weights.
pub fn polish_rates(obs: &ObservationWindow, rec: &EigenvalueRecovery, cfg: &ExtractionConfig) -> EigenvalueRecovery {
    let nv = obs.size();
    let s = rec.window_start;
    let t = &obs.t_grid[s..];
    let fr = floor_rel(obs, cfg);
    let mut ys = Vec::with_capacity(nv * (nv + 1) / 2);
    for a in 0..nv {
        for b in a..nv {
            ys.push((s..obs.t_grid.len()).map(|k| obs.p(a, b, k)).collect::<Vec<f64>>());
        }
    }
    let scales: Vec<Vec<f64>> = ys.iter().map(|y| y.iter().map(|v| fr * v.abs().max(1e-300)).collect()).collect();
    let (rates, rms) = refine_shared(t, &ys, &scales, &rec.model_rates());
    let mut out = rec.clone();
    for (c, r) in out.clusters.iter_mut().chain(out.guard.iter_mut()).zip(rates) {
        c.rate = r;
    }
    out.pooled_rms = Some(rms);
    out
}

/// Per-pair amplitudes on V × V for the recovered rates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelSet {
    /// kernels[0] is Q_0; kernels[c] belongs to cluster c (guard excluded).
    pub kernels: Vec<DMatrix<f64>>,
    /// Pairs whose fit residual exceeded tolerance.
    pub flagged: Vec<(usize, usize)>,
    pub max_rms: f64,
}

/// Fits p(x, y, t) = Σ_c e^{−λ_c t} Q_c(x, y) on the recovery window for
/// every pair of window points.
pub fn recover_all_qj(obs: &ObservationWindow, rec: &EigenvalueRecovery, cfg: &ExtractionConfig) -> KernelSet {
    let nv = obs.size();
    let s = rec.window_start;
    let t = &obs.t_grid[s..];
    let rates = rec.model_rates();
    let fr = floor_rel(obs, cfg);
    let pairs: Vec<(usize, usize)> = (0..nv).flat_map(|a| (a..nv).map(move |b| (a, b))).collect();
    let fits: Vec<(Vec<f64>, f64)> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let y: Vec<f64> = (s..obs.t_grid.len()).map(|k| obs.p(a, b, k)).collect();
            let scale: Vec<f64> = y.iter().map(|v| fr * v.abs().max(1e-300)).collect();
            amplitudes_for_rates(t, &y, &scale, &rates)
        })
        .collect();
    let nk = rec.clusters.len() + 1;
    let mut kernels = vec![DMatrix::zeros(nv, nv); nk];
    let mut flagged = Vec::new();
    let mut max_rms: f64 = 0.0;
    for (&(a, b), (coef, rms)) in pairs.iter().zip(&fits) {
        for c in 0..nk {
            kernels[c][(a, b)] = coef[c];
            kernels[c][(b, a)] = coef[c];
        }
        max_rms = max_rms.max(*rms);
        if *rms > cfg.fit_tolerance {
            flagged.push((a, b));
        }
    }
    KernelSet { kernels, flagged, max_rms }
}

/// Q_j for a single cluster index (0 = constant).
pub fn recover_qj(obs: &ObservationWindow, rec: &EigenvalueRecovery, j: usize, cfg: &ExtractionConfig) -> Result<DMatrix<f64>> {
    if j > rec.clusters.len() {
        return Err(Error::Invalid(format!("cluster {j} not recovered ({} available)", rec.clusters.len())));
    }
    Ok(recover_all_qj(obs, rec, cfg).kernels.swap_remove(j))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaugeFixed {
    /// |V| × multiplicity; outer product reproduces Q_j.
    pub functions: DMatrix<f64>,
    pub multiplicity: usize,
    pub pivots: Vec<usize>,
    /// Eigenvalues of the m|_V-weighted integral operator, descending.
    pub operator_spectrum: Vec<f64>,
    /// Smallest singular value of Q_j restricted to the pivot points.
    pub conditioning: f64,
}

/// Rank by the operator M^{1/2} Q M^{1/2}; pivoted basis with
/// v_k(x_l) = δ_kl; Gram Q(x_k, x_l) and its square root P; output V·P.
pub fn gauge_fix_cluster(q: &DMatrix<f64>, measure: &[f64], rel_tol: f64, cluster: usize) -> Result<GaugeFixed> {
    let nv = q.nrows();
    let sq: Vec<f64> = measure.iter().map(|m| m.sqrt()).collect();
    let op = DMatrix::from_fn(nv, nv, |a, b| 0.5 * (q[(a, b)] + q[(b, a)]) * sq[a] * sq[b]);
    let (vals, _) = sym_eigen(op);
    let spectrum: Vec<f64> = vals.iter().rev().map(|v| v.abs()).collect();
    let smax = spectrum.first().copied().unwrap_or(0.0);
    if !(smax > 0.0) {
        return Err(Error::IllPosed(format!("cluster {cluster} kernel vanishes on the window")));
    }
    let thresh = rel_tol * smax;
    let rank = spectrum.iter().filter(|&&s| s >= thresh).count();
    if let Some(&s) = spectrum.iter().find(|&&s| s / thresh > 0.1 && s / thresh < 10.0) {
        return Err(Error::RankAmbiguity { cluster, ratio: s / smax });
    }
    // pivoted Cholesky: each pivot maximises the residual diagonal
    let mut resid = q.clone();
    let mut pivots = Vec::with_capacity(rank);
    for _ in 0..rank {
        let p = (0..nv)
            .filter(|a| !pivots.contains(a))
            .max_by(|&a, &b| resid[(a, a)].total_cmp(&resid[(b, b)]))
            .expect("rank <= |V|");
        let d = resid[(p, p)];
        if !(d > 0.0) {
            return Err(Error::Numerical(format!("cluster {cluster}: nonpositive pivot {d:e}")));
        }
        let col = resid.column(p).clone_owned();
        resid -= &col * col.transpose() / d;
        pivots.push(p);
    }
    let qsub = DMatrix::from_fn(rank, rank, |k, l| q[(pivots[k], pivots[l])]);
    let qsub_inv = qsub
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical(format!("cluster {cluster}: singular pivot block")))?;
    let qcols = DMatrix::from_fn(nv, rank, |a, k| q[(a, pivots[k])]);
    let basis = &qcols * &qsub_inv; // v_k(x_l) = δ_kl
    let p = psd_sqrt(&qsub);
    let mut functions = &basis * &p;
    if rank == 1 {
        let (arg, _) = functions.column(0).iter().enumerate().fold((0, 0.0), |acc, (i, v)| {
            if v.abs() > acc.1 {
                (i, v.abs())
            } else {
                acc
            }
        });
        if functions[(arg, 0)] < 0.0 {
            functions.neg_mut();
        }
    }
    let sv = crate::linalg::svd(&qsub).1;
    let conditioning = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(GaugeFixed { functions, multiplicity: rank, pivots, operator_spectrum: spectrum, conditioning })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtractedCluster {
    pub eigenvalue: f64,
    /// Σ_{k in cluster} ∫_V φ_k² dm from the trace fit.
    pub amplitude: f64,
    pub multiplicity: usize,
    pub functions: DMatrix<f64>,
    pub conditioning: f64,
    pub pivots: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtractedSpectrum {
    pub vertices: Vec<usize>,
    pub measure: Vec<f64>,
    pub mass: MassEstimate,
    /// Cluster 0 is the constant mode.
    pub clusters: Vec<ExtractedCluster>,
    pub recovery: EigenvalueRecovery,
    pub kernels: KernelSet,
    pub audit: AuditLog,
}

/// Full extraction from the observation table.
pub fn extract(obs: &ObservationWindow, cfg: &ExtractionConfig) -> Result<ExtractedSpectrum> {
    let mass = recover_mass_and_phi0(obs, cfg)?;
    let rec = polish_rates(obs, &recover_eigenvalues(obs, &mass, cfg)?, cfg);
    let kernels = recover_all_qj(obs, &rec, cfg);
    let mut clusters = Vec::with_capacity(kernels.kernels.len());
    for (c, q) in kernels.kernels.iter().enumerate() {
        let g = gauge_fix_cluster(q, &obs.measure, cfg.rank_rel_tol, c)?;
        let (eigenvalue, amplitude) = if c == 0 { (0.0, rec.constant) } else { (rec.clusters[c - 1].rate, rec.clusters[c - 1].amplitude) };
        clusters.push(ExtractedCluster {
            eigenvalue,
            amplitude,
            multiplicity: g.multiplicity,
            functions: g.functions,
            conditioning: g.conditioning,
            pivots: g.pivots,
        });
    }
    let mut audit = AuditLog::default();
    audit.record("extract", &["observation_window", "measure_on_window"], false);
    Ok(ExtractedSpectrum { vertices: obs.vertices.clone(), measure: obs.measure.clone(), mass, clusters, recovery: rec, kernels, audit })
}

impl ExtractedSpectrum {
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.clusters.iter().flat_map(|c| std::iter::repeat_n(c.eigenvalue, c.multiplicity)).collect()
    }

    pub fn multiplicities(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.multiplicity).collect()
    }

    /// Data-side spectrum on V tagged as extracted.
    pub fn to_window(&self) -> Result<WindowSpectrum> {
        let clusters = self
            .clusters
            .iter()
            .map(|c| WindowCluster { eigenvalue: c.eigenvalue, functions: c.functions.clone(), provenance: Provenance::Extracted })
            .collect();
        WindowSpectrum::new(self.vertices.clone(), self.measure.clone(), self.mass.mass, clusters)
    }

    /// Σ_c e^{−λ_c t} Q̂_c(x, y) from the gauge-fixed output.
    pub fn synthesize(&self, a: usize, b: usize, t: f64) -> f64 {
        self.clusters
            .iter()
            .map(|c| (-c.eigenvalue * t).exp() * c.functions.row(a).dot(&c.functions.row(b)))
            .sum()
    }
}
