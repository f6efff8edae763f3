//! Discrete metric-measure spaces: lumped measure, edge lengths, the
//! shortest-path metric and an m-self-adjoint Laplacian.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Undirected edge. `weight` is the conductance entering the Laplacian;
/// `len` is the metric length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub len: f64,
    pub weight: f64,
}

/// User-declared geometric metadata (curvature bound K, dimension bound N,
/// essential dimension n, diameter D).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(rename = "K")]
    pub curvature: f64,
    #[serde(rename = "N")]
    pub dim_bound: f64,
    #[serde(rename = "n")]
    pub dim: usize,
    #[serde(rename = "D")]
    pub diameter: f64,
}

#[derive(Clone, Debug)]
pub struct DiscreteSpace {
    measure: Vec<f64>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(usize, f64)>>,
    stiffness: DMatrix<f64>,
    distance: DMatrix<f64>,
    metadata: Metadata,
}

impl DiscreteSpace {
    /// Builds a space from measure and edges. The metadata diameter is
    /// replaced by the computed one when given as zero or negative.
    pub fn new(measure: Vec<f64>, edges: Vec<Edge>, mut metadata: Metadata) -> Result<Self> {
        let n = measure.len();
        if n == 0 {
            return Err(Error::Invalid("space has no vertices".into()));
        }
        if let Some((i, m)) = measure.iter().enumerate().find(|(_, m)| !(**m > 0.0 && m.is_finite())) {
            return Err(Error::Invalid(format!("measure at vertex {i} is {m}, must be positive")));
        }
        for e in &edges {
            if e.i >= n || e.j >= n || e.i == e.j {
                return Err(Error::Invalid(format!("bad edge ({}, {})", e.i, e.j)));
            }
            if !(e.len > 0.0 && e.len.is_finite()) || !(e.weight > 0.0 && e.weight.is_finite()) {
                return Err(Error::Invalid(format!(
                    "edge ({}, {}) needs positive length and weight",
                    e.i, e.j
                )));
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for e in &edges {
            adjacency[e.i].push((e.j, e.weight));
            adjacency[e.j].push((e.i, e.weight));
        }
        let mut stiffness = DMatrix::zeros(n, n);
        for e in &edges {
            stiffness[(e.i, e.j)] -= e.weight;
            stiffness[(e.j, e.i)] -= e.weight;
            stiffness[(e.i, e.i)] += e.weight;
            stiffness[(e.j, e.j)] += e.weight;
        }
        let distance = shortest_paths(n, &edges)?;
        if !(metadata.diameter > 0.0) {
            metadata.diameter = distance.max();
        }
        Ok(Self { measure, edges, adjacency, stiffness, distance, metadata })
    }

    pub fn vertex_count(&self) -> usize {
        self.measure.len()
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn total_measure(&self) -> f64 {
        self.measure.iter().sum()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbours(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn distance(&self) -> &DMatrix<f64> {
        &self.distance
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.distance[(i, j)]
    }

    pub fn metadata(&self) -> &Metadata {
        &self.metadata
    }

    pub fn diameter(&self) -> f64 {
        self.distance.max()
    }

    /// Symmetric stiffness matrix K with L = M^{-1} K.
    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }

    /// Dense Laplacian L_ij = K_ij / m_i (representing -Δ).
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.vertex_count();
        let mut l = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut diag = 0.0;
            for j in 0..n {
                if i != j && self.stiffness[(i, j)] != 0.0 {
                    let v = self.stiffness[(i, j)] / self.measure[i];
                    l[(i, j)] = v;
                    diag -= v;
                }
            }
            l[(i, i)] = diag;
        }
        l
    }

    /// Operator action of L in difference form; annihilates constants exactly.
    pub fn apply_laplacian(&self, u: &[f64]) -> Vec<f64> {
        (0..self.vertex_count())
            .map(|i| {
                let s: f64 = self.adjacency[i].iter().map(|&(j, c)| c * (u[i] - u[j])).sum();
                s / self.measure[i]
            })
            .collect()
    }

    /// m-symmetrized operator M^{-1/2} K M^{-1/2}.
    pub fn symmetrized(&self) -> DMatrix<f64> {
        let s: Vec<f64> = self.measure.iter().map(|m| 1.0 / m.sqrt()).collect();
        DMatrix::from_fn(self.vertex_count(), self.vertex_count(), |i, j| {
            self.stiffness[(i, j)] * s[i] * s[j]
        })
    }

    /// max |m_i L_ij - m_j L_ji| over the dense Laplacian.
    pub fn m_symmetry_residual(&self) -> f64 {
        let l = self.laplacian();
        let n = self.vertex_count();
        let mut r: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                r = r.max((self.measure[i] * l[(i, j)] - self.measure[j] * l[(j, i)]).abs());
            }
        }
        r
    }

    /// Discrete Dirichlet energy sum over edges of c_e (u_i - u_j)^2.
    pub fn dirichlet_energy(&self, u: &[f64]) -> f64 {
        self.edges.iter().map(|e| e.weight * (u[e.i] - u[e.j]).powi(2)).sum()
    }

    /// Same graph with new edge lengths. Conductances scale like 1/len and
    /// each vertex mass like its total incident half-length.
    pub fn with_edge_lengths(&self, lengths: &[f64]) -> Result<Self> {
        if lengths.len() != self.edges.len() {
            return Err(Error::Invalid("one length per edge required".into()));
        }
        let n = self.vertex_count();
        let old_half: Vec<f64> = self.half_lengths();
        let mut new_half = vec![0.0; n];
        let edges: Vec<Edge> = self
            .edges
            .iter()
            .zip(lengths)
            .map(|(e, &len)| {
                new_half[e.i] += len / 2.0;
                new_half[e.j] += len / 2.0;
                Edge { i: e.i, j: e.j, len, weight: e.weight * e.len / len }
            })
            .collect();
        let measure = (0..n).map(|i| self.measure[i] * new_half[i] / old_half[i]).collect();
        let meta = Metadata { diameter: 0.0, ..self.metadata };
        Self::new(measure, edges, meta)
    }

    /// Same space with measure scaled by a constant factor (metric unchanged).
    pub fn with_scaled_measure(&self, factor: f64) -> Result<Self> {
        let measure = self.measure.iter().map(|m| m * factor).collect();
        let edges = self.edges.iter().map(|e| Edge { weight: e.weight * factor, ..*e }).collect();
        Self::new(measure, edges, self.metadata)
    }

    /// Relabels vertices: new vertex `perm[i]` is old vertex `i`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        let n = self.vertex_count();
        check_permutation(perm, n)?;
        let mut measure = vec![0.0; n];
        for i in 0..n {
            measure[perm[i]] = self.measure[i];
        }
        let edges = self.edges.iter().map(|e| Edge { i: perm[e.i], j: perm[e.j], ..*e }).collect();
        Self::new(measure, edges, self.metadata)
    }

    fn half_lengths(&self) -> Vec<f64> {
        let mut h = vec![0.0; self.vertex_count()];
        for e in &self.edges {
            h[e.i] += e.len / 2.0;
            h[e.j] += e.len / 2.0;
        }
        h
    }

    /// Cable distance from each vertex to the cell of `set`, where the cell
    /// of a vertex is the union of its incident half-edges.
    pub fn cell_distances(&self, set: &[usize]) -> Vec<f64> {
        let n = self.vertex_count();
        let mut inside = vec![false; n];
        for &u in set {
            inside[u] = true;
        }
        (0..n)
            .map(|x| {
                if inside[x] {
                    return 0.0;
                }
                let mut best = f64::INFINITY;
                for e in &self.edges {
                    let (u, w) = if inside[e.i] {
                        (e.i, e.j)
                    } else if inside[e.j] {
                        (e.j, e.i)
                    } else {
                        continue;
                    };
                    let via = (self.distance[(x, w)] + e.len / 2.0).min(self.distance[(x, u)]);
                    best = best.min(via);
                }
                best
            })
            .collect()
    }

    /// Measure of {y : d(y, cell(U)) < tau} on the metric graph, each vertex
    /// mass spread uniformly over its incident half-edges. Exact on 1-D
    /// cables; tends to m(U) as tau goes to zero.
    pub fn cell_measure_within(&self, set: &[usize], tau: f64) -> f64 {
        let dc = self.cell_distances(set);
        let mut inside = vec![false; self.vertex_count()];
        for &u in set {
            inside[u] = true;
        }
        let half = self.half_lengths();
        let mut total = 0.0;
        for e in &self.edges {
            let len = e.len;
            let a = if inside[e.i] { -len / 2.0 } else { dc[e.i] };
            let b = if inside[e.j] { -len / 2.0 } else { dc[e.j] };
            let dens_i = self.measure[e.i] / half[e.i];
            let dens_j = self.measure[e.j] / half[e.j];
            // length of {s in [lo, hi] : min(a + s, b + len - s) < tau}
            let covered = |lo: f64, hi: f64| -> f64 {
                let from_i = (tau - a).clamp(lo, hi) - lo;
                let from_j = hi - (len - (tau - b)).clamp(lo, hi);
                let overlap = (from_i + from_j - (hi - lo)).max(0.0);
                from_i + from_j - overlap
            };
            total += dens_i * covered(0.0, len / 2.0) + dens_j * covered(len / 2.0, len);
        }
        total
    }

    /// Measure of the cable points whose cell distances to each of `sets`
    /// satisfy `keep`, by midpoint sampling with `samples` points per edge.
    /// Distances are negative inside a cell, so `d < 0` selects the cells.
    pub fn cell_measure_where<F>(&self, sets: &[Vec<usize>], samples: usize, keep: F) -> f64
    where
        F: Fn(&[f64]) -> bool,
    {
        let n = self.vertex_count();
        let tables: Vec<(Vec<f64>, Vec<bool>)> = sets
            .iter()
            .map(|s| {
                let mut inside = vec![false; n];
                for &u in s {
                    inside[u] = true;
                }
                (self.cell_distances(s), inside)
            })
            .collect();
        let half = self.half_lengths();
        let mut total = 0.0;
        let mut d = vec![0.0; sets.len()];
        for e in &self.edges {
            let len = e.len;
            for k in 0..samples {
                let s = (k as f64 + 0.5) / samples as f64 * len;
                for (l, (dc, inside)) in tables.iter().enumerate() {
                    let a = if inside[e.i] { -len / 2.0 } else { dc[e.i] };
                    let b = if inside[e.j] { -len / 2.0 } else { dc[e.j] };
                    d[l] = (a + s).min(b + len - s);
                }
                if keep(&d) {
                    let owner = if s < len / 2.0 { e.i } else { e.j };
                    total += self.measure[owner] / half[owner] * len / samples as f64;
                }
            }
        }
        total
    }

    /// Number of edges from each vertex to the nearest vertex of `set`.
    pub fn hop_distances(&self, set: &[usize]) -> Vec<usize> {
        let mut hops = vec![usize::MAX; self.vertex_count()];
        let mut queue = std::collections::VecDeque::new();
        for &u in set {
            hops[u] = 0;
            queue.push_back(u);
        }
        while let Some(x) = queue.pop_front() {
            for &(y, _) in self.neighbours(x) {
                if hops[y] == usize::MAX {
                    hops[y] = hops[x] + 1;
                    queue.push_back(y);
                }
            }
        }
        hops
    }

    /// Vertices with d(x, U) < tau.
    pub fn influence_vertices(&self, set: &[usize], tau: f64) -> Vec<usize> {
        (0..self.vertex_count())
            .filter(|&x| set.iter().any(|&u| self.distance[(x, u)] < tau))
            .collect()
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::Invalid(format!("permutation has length {}, expected {n}", perm.len())));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::Invalid("not a permutation".into()));
        }
        seen[p] = true;
    }
    Ok(())
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All-pairs shortest paths. Dijkstra from every source, then
/// Floyd–Warshall sweeps until the floating-point triangle inequality holds
/// exactly for every triple.
pub fn shortest_paths(n: usize, edges: &[Edge]) -> Result<DMatrix<f64>> {
    let mut adj = vec![Vec::new(); n];
    for e in edges {
        adj[e.i].push((e.j, e.len));
        adj[e.j].push((e.i, e.len));
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|s| {
            let mut d = vec![f64::INFINITY; n];
            d[s] = 0.0;
            let mut heap = BinaryHeap::new();
            heap.push(HeapItem(0.0, s));
            while let Some(HeapItem(du, u)) = heap.pop() {
                if du > d[u] {
                    continue;
                }
                for &(v, w) in &adj[u] {
                    let nd = du + w;
                    if nd < d[v] {
                        d[v] = nd;
                        heap.push(HeapItem(nd, v));
                    }
                }
            }
            d
        })
        .collect();
    if let Some(v) = rows[0].iter().position(|d| d.is_infinite()) {
        let size = rows[0].iter().filter(|d| d.is_finite()).count();
        return Err(Error::Disconnected { vertex: v, component_size: size });
    }
    let mut d: Vec<Vec<f64>> = rows;
    // symmetrise (paths summed from either end can differ by an ulp)
    for i in 0..n {
        for j in i + 1..n {
            let m = d[i][j].min(d[j][i]);
            d[i][j] = m;
            d[j][i] = m;
        }
    }
    loop {
        let mut changed = false;
        for k in 0..n {
            let rowk = d[k].clone();
            let flags: Vec<bool> = d
                .par_iter_mut()
                .map(|row| {
                    let dik = row[k];
                    let mut c = false;
                    for (dij, dkj) in row.iter_mut().zip(&rowk) {
                        let cand = dik + dkj;
                        if cand < *dij {
                            *dij = cand;
                            c = true;
                        }
                    }
                    c
                })
                .collect();
            changed |= flags.into_iter().any(|f| f);
        }
        if !changed {
            break;
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| d[i][j]))
}

/// Uniform cycle with `n` vertices on a circle of radius `radius`.
pub fn build_circle(n: usize, radius: f64) -> Result<DiscreteSpace> {
    if n < 8 {
        return Err(Error::Invalid(format!("circle needs at least 8 vertices, got {n}")));
    }
    if !(radius > 0.0) {
        return Err(Error::Invalid("radius must be positive".into()));
    }
    let h = 2.0 * PI * radius / n as f64;
    let edges = (0..n).map(|i| Edge { i, j: (i + 1) % n, len: h, weight: 1.0 / h }).collect();
    let meta = Metadata { curvature: 0.0, dim_bound: 1.0, dim: 1, diameter: 0.0 };
    DiscreteSpace::new(vec![h; n], edges, meta)
}

/// Density profiles for the weighted interval, selected by id.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum Density {
    Uniform,
    /// ρ(x) = 1 + slope·x
    Linear { slope: f64 },
    /// ρ(x) = 1 + amp·sin(2πx/period)
    Sine { amp: f64, period: f64 },
}

impl Density {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Density::Uniform => 1.0,
            Density::Linear { slope } => 1.0 + slope * x,
            Density::Sine { amp, period } => 1.0 + amp * (2.0 * PI * x / period).sin(),
        }
    }
}

/// Path graph on [0, length] discretizing (1/ρ)(ρ u')' with Neumann ends.
pub fn build_weighted_interval(n: usize, length: f64, density: Density) -> Result<DiscreteSpace> {
    if n < 3 {
        return Err(Error::Invalid("interval needs at least 3 vertices".into()));
    }
    if !(length > 0.0) {
        return Err(Error::Invalid("length must be positive".into()));
    }
    let h = length / (n - 1) as f64;
    let mut measure = Vec::with_capacity(n);
    for i in 0..n {
        let x = i as f64 * h;
        let rho = density.eval(x);
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Invalid(format!("density {rho} at x = {x} is not positive")));
        }
        let w = if i == 0 || i == n - 1 { h / 2.0 } else { h };
        measure.push(rho * w);
    }
    let mut edges = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let rho = density.eval((i as f64 + 0.5) * h);
        if !(rho > 0.0) {
            return Err(Error::Invalid(format!("density {rho} at midpoint {i} is not positive")));
        }
        edges.push(Edge { i, j: i + 1, len: h, weight: rho / h });
    }
    let meta = Metadata { curvature: 0.0, dim_bound: 1.0, dim: 1, diameter: 0.0 };
    DiscreteSpace::new(measure, edges, meta)
}

/// Grid coordinate helpers for the torus: vertex index a + n1·b.
pub fn torus_index(n1: usize, a: usize, b: usize) -> usize {
    a + n1 * b
}

/// Product of two cycles with side lengths `lengths`.
pub fn build_torus_mesh(n1: usize, n2: usize, lengths: (f64, f64)) -> Result<DiscreteSpace> {
    if n1 < 8 || n2 < 8 {
        return Err(Error::Invalid(format!("torus needs both sides >= 8, got {n1}x{n2}")));
    }
    let (h1, h2) = (lengths.0 / n1 as f64, lengths.1 / n2 as f64);
    let mut edges = Vec::with_capacity(2 * n1 * n2);
    for b in 0..n2 {
        for a in 0..n1 {
            let v = torus_index(n1, a, b);
            edges.push(Edge { i: v, j: torus_index(n1, (a + 1) % n1, b), len: h1, weight: h2 / h1 });
            edges.push(Edge { i: v, j: torus_index(n1, a, (b + 1) % n2), len: h2, weight: h1 / h2 });
        }
    }
    let meta = Metadata { curvature: 0.0, dim_bound: 2.0, dim: 2, diameter: 0.0 };
    DiscreteSpace::new(vec![h1 * h2; n1 * n2], edges, meta)
}

/// Quotient by a vertex involution. Orbits are numbered by their smallest
/// member; parallel edges merge with summed conductance and minimal length.
pub fn quotient_space(space: &DiscreteSpace, involution: &[usize]) -> Result<(DiscreteSpace, Vec<usize>)> {
    let n = space.vertex_count();
    check_permutation(involution, n)?;
    for i in 0..n {
        if involution[involution[i]] != i {
            return Err(Error::Invalid(format!("map is not an involution at vertex {i}")));
        }
        if space.measure[involution[i]] != space.measure[i] {
            return Err(Error::Invalid(format!("measure not preserved at vertex {i}")));
        }
    }
    let mut edge_set: BTreeMap<(usize, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for e in &space.edges {
        let key = (e.i.min(e.j), e.i.max(e.j));
        edge_set.entry(key).or_default().push((e.len, e.weight));
    }
    for e in &space.edges {
        let (a, b) = (involution[e.i], involution[e.j]);
        let key = (a.min(b), a.max(b));
        let ok = edge_set.get(&key).is_some_and(|v| v.iter().any(|&(l, w)| l == e.len && w == e.weight));
        if !ok {
            return Err(Error::NotEquivariant { i: e.i, j: e.j });
        }
    }
    let mut orbit = vec![usize::MAX; n];
    let mut count = 0;
    for i in 0..n {
        if orbit[i] == usize::MAX {
            orbit[i] = count;
            orbit[involution[i]] = count;
            count += 1;
        }
    }
    let mut measure = vec![0.0; count];
    for i in 0..n {
        measure[orbit[i]] += space.measure[i];
    }
    let mut merged: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    for e in &space.edges {
        let (a, b) = (orbit[e.i], orbit[e.j]);
        if a == b {
            continue;
        }
        let entry = merged.entry((a.min(b), a.max(b))).or_insert((f64::INFINITY, 0.0));
        entry.0 = entry.0.min(e.len);
        entry.1 += e.weight;
    }
    let edges = merged.into_iter().map(|((i, j), (len, weight))| Edge { i, j, len, weight }).collect();
    let meta = Metadata { diameter: 0.0, ..space.metadata };
    Ok((DiscreteSpace::new(measure, edges, meta)?, orbit))
}

/// Serialized form: {vertices, measure[], edges[{i,j,len,weight?}], metadata{K,N,n,D}}.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpaceFile {
    pub vertices: usize,
    pub measure: Vec<f64>,
    pub edges: Vec<EdgeRecord>,
    pub metadata: Metadata,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub i: usize,
    pub j: usize,
    pub len: f64,
    /// Conductance; defaults to 1/len when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

impl DiscreteSpace {
    pub fn to_file(&self) -> SpaceFile {
        SpaceFile {
            vertices: self.vertex_count(),
            measure: self.measure.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeRecord { i: e.i, j: e.j, len: e.len, weight: Some(e.weight) })
                .collect(),
            metadata: self.metadata,
        }
    }

    pub fn from_file(f: SpaceFile) -> Result<Self> {
        if f.measure.len() != f.vertices {
            return Err(Error::Invalid(format!(
                "{} measure entries for {} vertices",
                f.measure.len(),
                f.vertices
            )));
        }
        let edges = f
            .edges
            .iter()
            .map(|e| Edge { i: e.i, j: e.j, len: e.len, weight: e.weight.unwrap_or(1.0 / e.len) })
            .collect();
        Self::new(f.measure, edges, f.metadata)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_total_measure_and_antipode() {
        let c = build_circle(8, 1.0).unwrap();
        assert!((c.total_measure() - 2.0 * PI).abs() < 1e-12);
        let c = build_circle(128, 1.0).unwrap();
        assert!((c.dist(0, 64) - PI).abs() < 1e-12);
        assert!(build_circle(7, 1.0).is_err());
    }

    #[test]
    fn laplacian_action_kills_constants_exactly() {
        let s = build_weighted_interval(64, 1.0, Density::Linear { slope: 1.0 }).unwrap();
        let ones = vec![1.0; 64];
        assert!(s.apply_laplacian(&ones).iter().all(|v| *v == 0.0));
        let l = s.laplacian();
        let row_max = (0..64).map(|i| l.row(i).sum().abs()).fold(0.0, f64::max);
        assert!(row_max <= 1e-12 * l.amax());
    }

    #[test]
    fn uniform_interval_is_exactly_m_symmetric() {
        let s = build_weighted_interval(64, 1.0, Density::Uniform).unwrap();
        assert_eq!(s.m_symmetry_residual(), 0.0);
        assert_eq!(build_circle(32, 1.3).unwrap().m_symmetry_residual(), 0.0);
        assert_eq!(build_torus_mesh(8, 10, (2.0, 3.0)).unwrap().m_symmetry_residual(), 0.0);
    }

    #[test]
    fn nonpositive_density_rejected() {
        assert!(build_weighted_interval(16, 1.0, Density::Linear { slope: -2.0 }).is_err());
    }

    #[test]
    fn disconnected_graph_reported() {
        let edges = vec![Edge { i: 0, j: 1, len: 1.0, weight: 1.0 }];
        let meta = Metadata { curvature: 0.0, dim_bound: 1.0, dim: 1, diameter: 0.0 };
        match DiscreteSpace::new(vec![1.0; 3], edges, meta) {
            Err(Error::Disconnected { vertex, component_size }) => {
                assert_eq!(vertex, 2);
                assert_eq!(component_size, 2);
            }
            other => panic!("expected disconnection error, got {other:?}"),
        }
    }

    #[test]
    fn cell_measure_on_circle_is_arc_length() {
        let c = build_circle(128, 1.0).unwrap();
        let v: Vec<usize> = (0..32).collect();
        let mv: f64 = v.iter().map(|&i| c.measure()[i]).sum();
        for tau in [0.0, 0.3, 1.0, 1.3] {
            let expect = mv + 2.0 * tau;
            assert!((c.cell_measure_within(&v, tau) - expect).abs() < 1e-12);
            let sampled = c.cell_measure_where(&[v.clone()], 64, |d| d[0] < tau);
            assert!((sampled - expect).abs() < 0.01);
        }
        assert!((c.cell_measure_within(&v, 10.0) - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn edge_length_rescale_by_one_is_identity() {
        let c = build_circle(16, 1.0).unwrap();
        let lens: Vec<f64> = c.edges().iter().map(|e| e.len).collect();
        let d = c.with_edge_lengths(&lens).unwrap();
        assert_eq!(c.measure(), d.measure());
        assert_eq!(c.distance(), d.distance());
    }
}
