//! Spectral data restricted to the observation window: the only spectral
//! input the wave-source map and the control stage accept.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::SpectralData;

/// Where a cluster's numbers came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Recovered from the heat-kernel table on V.
    Extracted,
    /// Ground truth restricted to V; only allowed in validation runs.
    Validation,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WindowCluster {
    pub eigenvalue: f64,
    /// |V| × multiplicity block of eigenfunction values on V.
    pub functions: DMatrix<f64>,
    pub provenance: Provenance,
}

impl WindowCluster {
    pub fn multiplicity(&self) -> usize {
        self.functions.ncols()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "RawWindowSpectrum")]
pub struct WindowSpectrum {
    vertices: Vec<usize>,
    measure: Vec<f64>,
    mass: f64,
    clusters: Vec<WindowCluster>,
    #[serde(skip)]
    flat: Option<(Vec<f64>, DMatrix<f64>)>,
}

impl WindowSpectrum {
    pub fn new(vertices: Vec<usize>, measure: Vec<f64>, mass: f64, clusters: Vec<WindowCluster>) -> Result<Self> {
        if vertices.len() != measure.len() || vertices.is_empty() {
            return Err(Error::Invalid("window vertices and measure disagree".into()));
        }
        if !(mass > 0.0) {
            return Err(Error::IllPosed(format!("total mass {mass} is not positive")));
        }
        for c in &clusters {
            if c.functions.nrows() != vertices.len() || c.functions.ncols() == 0 {
                return Err(Error::Invalid("cluster block has wrong shape".into()));
            }
        }
        let mut ws = Self { vertices, measure, mass, clusters, flat: None };
        ws.flatten();
        Ok(ws)
    }

    fn flatten(&mut self) {
        let j: usize = self.clusters.iter().map(|c| c.multiplicity()).sum();
        let mut lam = Vec::with_capacity(j);
        let mut modes = DMatrix::zeros(self.vertices.len(), j);
        let mut col = 0;
        for c in &self.clusters {
            for k in 0..c.multiplicity() {
                lam.push(c.eigenvalue);
                modes.set_column(col, &c.functions.column(k));
                col += 1;
            }
        }
        self.flat = Some((lam, modes));
    }

    fn flat(&self) -> &(Vec<f64>, DMatrix<f64>) {
        self.flat.as_ref().expect("flattened on construction")
    }

    /// Ground truth restricted to `window`, tagged as validation data.
    pub fn from_truth(spec: &SpectralData, window: &[usize]) -> Result<Self> {
        let measure: Vec<f64> = window.iter().map(|&v| spec.measure()[v]).collect();
        let mass: f64 = spec.measure().iter().sum();
        let clusters = spec
            .clusters()
            .iter()
            .map(|r| WindowCluster {
                eigenvalue: r.clone().map(|j| spec.eigenvalues()[j]).sum::<f64>() / r.len() as f64,
                functions: DMatrix::from_fn(window.len(), r.len(), |a, k| spec.phi(r.start + k, window[a])),
                provenance: Provenance::Validation,
            })
            .collect();
        Self::new(window.to_vec(), measure, mass, clusters)
    }

    /// Keeps the clusters of `self` and appends the clusters of `tail` that
    /// lie beyond them (matched by cluster index). Window and multiplicities
    /// of the shared clusters must agree.
    pub fn splice(&self, tail: &WindowSpectrum) -> Result<Self> {
        if self.vertices != tail.vertices {
            return Err(Error::Invalid("splice needs identical windows".into()));
        }
        let k = self.clusters.len();
        if tail.clusters.len() < k {
            return Err(Error::Invalid("tail has fewer clusters than the head".into()));
        }
        for (c, (a, b)) in self.clusters.iter().zip(&tail.clusters).enumerate() {
            if a.multiplicity() != b.multiplicity() {
                return Err(Error::Numerical(format!(
                    "cluster {c}: multiplicity {} vs {} in the tail",
                    a.multiplicity(),
                    b.multiplicity()
                )));
            }
        }
        let mut clusters = self.clusters.clone();
        clusters.extend(tail.clusters[k..].iter().cloned());
        Self::new(self.vertices.clone(), self.measure.clone(), self.mass, clusters)
    }

    /// Right-multiplies each cluster block by the given orthogonal matrix.
    pub fn twisted(&self, rotations: &[DMatrix<f64>]) -> Result<Self> {
        if rotations.len() != self.clusters.len() {
            return Err(Error::Invalid("one rotation per cluster".into()));
        }
        let clusters = self
            .clusters
            .iter()
            .zip(rotations)
            .map(|(c, r)| WindowCluster { functions: &c.functions * r, ..c.clone() })
            .collect();
        Self::new(self.vertices.clone(), self.measure.clone(), self.mass, clusters)
    }

    /// Keeps the first `count` clusters.
    pub fn truncated(&self, count: usize) -> Result<Self> {
        let clusters = self.clusters.iter().take(count).cloned().collect();
        Self::new(self.vertices.clone(), self.measure.clone(), self.mass, clusters)
    }

    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn phi0(&self) -> f64 {
        1.0 / self.mass.sqrt()
    }

    pub fn clusters(&self) -> &[WindowCluster] {
        &self.clusters
    }

    /// Eigenvalue per mode (cluster value repeated by multiplicity).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.flat().0
    }

    /// |V| × J matrix of mode values on V.
    pub fn modes(&self) -> &DMatrix<f64> {
        &self.flat().1
    }

    pub fn mode_count(&self) -> usize {
        self.flat().0.len()
    }

    /// Position of a vertex label inside the window.
    pub fn local_index(&self, v: usize) -> Option<usize> {
        self.vertices.iter().position(|&w| w == v)
    }

    /// Mode ranges of the clusters.
    pub fn cluster_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut s = 0;
        for c in &self.clusters {
            out.push(s..s + c.multiplicity());
            s += c.multiplicity();
        }
        out
    }

    /// Stiffness block on V, K(x, y) = m_x m_y Σ_j λ_j φ_j(x) φ_j(y). With a
    /// complete spectrum this is the restriction of the true stiffness, so
    /// off-diagonal entries are minus the conductances of edges inside V.
    pub fn local_stiffness(&self) -> DMatrix<f64> {
        let (lam, modes) = self.flat();
        let n = self.vertices.len();
        DMatrix::from_fn(n, n, |a, b| {
            let s: f64 = (0..lam.len()).map(|j| lam[j] * modes[(a, j)] * modes[(b, j)]).sum();
            self.measure[a] * self.measure[b] * s
        })
    }

    /// Counts of clusters by provenance: (extracted, validation).
    pub fn provenance_counts(&self) -> (usize, usize) {
        let e = self.clusters.iter().filter(|c| c.provenance == Provenance::Extracted).count();
        (e, self.clusters.len() - e)
    }
}

impl PartialEq for WindowSpectrum {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices
            && self.measure == other.measure
            && self.mass == other.mass
            && self.clusters.len() == other.clusters.len()
            && self.clusters.iter().zip(&other.clusters).all(|(a, b)| {
                a.eigenvalue == b.eigenvalue && a.functions == b.functions && a.provenance == b.provenance
            })
    }
}

#[derive(Deserialize)]
struct RawWindowSpectrum {
    vertices: Vec<usize>,
    measure: Vec<f64>,
    mass: f64,
    clusters: Vec<WindowCluster>,
}

impl TryFrom<RawWindowSpectrum> for WindowSpectrum {
    type Error = Error;

    fn try_from(r: RawWindowSpectrum) -> Result<Self> {
        Self::new(r.vertices, r.measure, r.mass, r.clusters)
    }
}
