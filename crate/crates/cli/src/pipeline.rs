//! Stage runner. Each stage takes its inputs from memory when an earlier
//! stage of the same run produced them, from the output directory when a
//! previous invocation with the same config left them there, and otherwise
//! runs the stage that makes them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use heatlab::audit::AuditLog;
use heatlab::control::{default_net, hop_length, project_constant, ControlConfig, VolumeEstimate};
use heatlab::gelfand::{extract, ExtractedSpectrum};
use heatlab::mms::{DiscreteSpace, SpaceFile};
use heatlab::reconstruct::{assemble_space, compare, ReconstructionResult};
use heatlab::spectral::{eigensolve_full, sample_observation, Noise, ObservationWindow, SpectralData};
use heatlab::stability::{
    approx_report, extend_map_via_pipeline, extension_vertex_map, gh_distortion, map_spread, perturb_edge_lengths, ApproxReport,
    Distortion, VertexMap,
};
use heatlab::wave::{circle_pulse_study, ConeReport};
use heatlab::window::WindowSpectrum;

use crate::artifacts::{self as art, read_matching, write_json, write_text, Summary};
use crate::config::{ExperimentConfig, Tail};

/// Vertex labels and measure of the window, stored next to the table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WindowFile {
    pub vertices: Vec<usize>,
    pub measure: Vec<f64>,
    pub noise: Noise,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModeCheck {
    pub mode: usize,
    pub recovered: f64,
    pub truth: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtractionCheck {
    pub mass_rel_error: f64,
    pub modes: Vec<ModeCheck>,
    pub multiplicities: Vec<usize>,
    pub true_multiplicities: Vec<usize>,
    /// max |Q̂_c − Σ_{k∈c} φ_k φ_kᵀ| over V × V and clusters.
    pub q_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VolumeRow {
    pub estimate: VolumeEstimate,
    /// Ground-truth measure of X(V, τ), present in validation runs.
    pub truth: Option<f64>,
}

/// One rung of the perturbation ladder.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LadderRung {
    pub amplitude: f64,
    /// ψ = identity on V between the two spaces.
    pub window: ApproxReport,
    /// Vertex map induced by the pipeline extension of ψ.
    pub extension: VertexMap,
    pub pipeline: Distortion,
    pub ambiguous: usize,
    pub max_mismatch: f64,
    /// max d_Y(Ψx, Ψ'x) against the extension over the shifted net.
    pub uniqueness_spread: f64,
}

pub struct Experiment {
    pub config: ExperimentConfig,
    base: PathBuf,
    out: PathBuf,
    hash: String,
    space: Option<DiscreteSpace>,
    truth: Option<SpectralData>,
    obs: Option<ObservationWindow>,
    extracted: Option<ExtractedSpectrum>,
    ws: Option<WindowSpectrum>,
    recon: Option<ReconstructionResult>,
    pub audit: AuditLog,
    pub summary: Summary,
}

impl Experiment {
    /// `base` resolves relative paths in the config.
    pub fn new(config: ExperimentConfig, base: &Path, out: &Path) -> Result<Self> {
        config.validate()?;
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let hash = config.hash();
        let summary = Summary::new(&config.name, &hash, config.seed);
        Ok(Self {
            config,
            base: base.to_path_buf(),
            out: out.to_path_buf(),
            hash,
            space: None,
            truth: None,
            obs: None,
            extracted: None,
            ws: None,
            recon: None,
            audit: AuditLog::default(),
            summary,
        })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    fn seed(&self) -> u64 {
        self.config.seed
    }

    fn row(&mut self, stage: &str, metric: &str, value: f64) {
        let b = self.config.baselines.get(&format!("{stage}/{metric}")).copied();
        self.summary.push(stage, metric, value, b.as_ref());
    }

    fn flag(&mut self, stage: &str, metric: &str, ok: bool) {
        self.row(stage, metric, if ok { 1.0 } else { 0.0 });
    }

    fn json<T: Serialize>(&self, name: &str, stage: &str, data: &T) -> Result<()> {
        write_json(&self.out, name, &self.hash, self.seed(), stage, data)
    }

    fn load<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<Option<T>> {
        read_matching(&self.out, name, &self.hash)
    }

    fn require_validation(&self, stage: &str) -> Result<()> {
        if !self.config.validation {
            bail!("stage {stage} compares with ground truth; enable validation in the config or pass --validate");
        }
        Ok(())
    }

    // ---- build ----

    pub fn build(&mut self) -> Result<()> {
        let space = self.config.space.build(&self.base)?;
        self.config.check_discretization(&space)?;
        self.json(art::SPACE, "build", &space.to_file())?;
        self.audit.record("build", &["config.space"], true);
        self.row("build", "vertices", space.vertex_count() as f64);
        self.row("build", "total_measure", space.total_measure());
        self.row("build", "diameter", space.diameter());
        self.space = Some(space);
        Ok(())
    }

    fn space(&mut self) -> Result<&DiscreteSpace> {
        if self.space.is_none() {
            match self.load::<SpaceFile>(art::SPACE)? {
                Some(f) => {
                    let s = DiscreteSpace::from_file(f)?;
                    self.config.check_discretization(&s)?;
                    self.space = Some(s);
                }
                None => self.build()?,
            }
        }
        Ok(self.space.as_ref().expect("space present"))
    }

    /// Full spectrum of the simulated space. Only the forward simulator,
    /// the declared tail and validation stages use it.
    fn truth(&mut self) -> Result<&SpectralData> {
        if self.truth.is_none() {
            let spec = eigensolve_full(self.space()?)?;
            self.truth = Some(spec);
        }
        Ok(self.truth.as_ref().expect("spectrum present"))
    }

    // ---- observe ----

    pub fn observe(&mut self) -> Result<()> {
        let n = self.space()?.vertex_count();
        let window = self.config.window.vertices.select(n)?;
        let grid = self.config.window.grid();
        let noise = Noise { relative: self.config.window.noise, seed: self.seed() };
        let obs = sample_observation(self.truth()?, &window, &grid, noise)?;
        let wf = WindowFile { vertices: obs.vertices.clone(), measure: obs.measure.clone(), noise };
        self.json(art::WINDOW, "observe", &wf)?;
        write_text(&self.out, art::OBSERVATION, &self.hash, self.seed(), &obs.to_columnar())?;
        self.audit.record("observe", &["space", "spectrum"], true);
        self.row("observe", "window_size", window.len() as f64);
        self.row("observe", "times", grid.len() as f64);
        self.obs = Some(obs);
        Ok(())
    }

    fn obs(&mut self) -> Result<&ObservationWindow> {
        if self.obs.is_none() {
            let table = self.out.join(art::OBSERVATION);
            let fresh = table.exists()
                && std::fs::read_to_string(&table)
                    .ok()
                    .and_then(|t| art::parse_text_header(&t))
                    .is_some_and(|(h, _)| h == self.hash);
            match (fresh, self.load::<WindowFile>(art::WINDOW)?) {
                (true, Some(wf)) => {
                    let text = std::fs::read_to_string(&table)?;
                    let mut obs = ObservationWindow::from_columnar(&text, wf.vertices, wf.measure)?;
                    obs.noise = wf.noise;
                    self.obs = Some(obs);
                }
                _ => self.observe()?,
            }
        }
        Ok(self.obs.as_ref().expect("observation present"))
    }

    // ---- extract ----

    pub fn extract(&mut self) -> Result<()> {
        let cfg = self.config.stages.extraction.clone();
        let ex = extract(self.obs()?, &cfg)?;
        self.json(art::EXTRACTED, "extract", &ex)?;
        self.audit.extend(&ex.audit);
        self.row("extract", "mass", ex.mass.mass);
        self.row("extract", "clusters", ex.clusters.len() as f64 - 1.0);
        for (c, cl) in ex.clusters.iter().enumerate().skip(1) {
            self.row("extract", &format!("lambda_{c}"), cl.eigenvalue);
            self.row("extract", &format!("multiplicity_{c}"), cl.multiplicity as f64);
        }
        self.row("extract", "kernel_fit_rms", ex.kernels.max_rms);
        self.extracted = Some(ex);
        if self.config.validation {
            self.validate_extraction()?;
        }
        Ok(())
    }

    fn extracted(&mut self) -> Result<&ExtractedSpectrum> {
        if self.extracted.is_none() {
            match self.load::<ExtractedSpectrum>(art::EXTRACTED)? {
                Some(ex) => self.extracted = Some(ex),
                None => self.extract()?,
            }
        }
        Ok(self.extracted.as_ref().expect("extraction present"))
    }

    fn validate_extraction(&mut self) -> Result<()> {
        let ex = self.extracted()?.clone();
        let truth = self.truth()?.clone();
        let mass: f64 = truth.measure().iter().sum();
        let ranges = truth.clusters().to_vec();
        let mut modes = Vec::new();
        let mut q_error = 0.0f64;
        let mut true_mult = Vec::new();
        let mut mode = 0;
        for (c, cl) in ex.clusters.iter().enumerate() {
            let Some(r) = ranges.get(c) else { break };
            true_mult.push(r.len());
            for k in 0..cl.multiplicity {
                let lam = truth.eigenvalues().get(r.start + k.min(r.len() - 1)).copied().unwrap_or(f64::NAN);
                let rel = if lam > 0.0 { (cl.eigenvalue - lam).abs() / lam } else { (cl.eigenvalue - lam).abs() };
                modes.push(ModeCheck { mode, recovered: cl.eigenvalue, truth: lam, rel_error: rel });
                mode += 1;
            }
            let nv = ex.vertices.len();
            for a in 0..nv {
                for b in 0..nv {
                    let q: f64 = r.clone().map(|j| truth.phi(j, ex.vertices[a]) * truth.phi(j, ex.vertices[b])).sum();
                    q_error = q_error.max((ex.kernels.kernels[c][(a, b)] - q).abs());
                }
            }
        }
        let check = ExtractionCheck {
            mass_rel_error: (ex.mass.mass - mass).abs() / mass,
            modes,
            multiplicities: ex.multiplicities(),
            true_multiplicities: true_mult,
            q_error,
        };
        self.json(art::EXTRACTION_CHECK, "validate.extract", &check)?;
        self.audit.record("validate.extract", &["extracted_spectrum", "ground_truth_spectrum"], true);
        let worst = check.modes.iter().skip(1).map(|m| m.rel_error).fold(0.0, f64::max);
        self.row("validate.extract", "mass_rel_error", check.mass_rel_error);
        self.row("validate.extract", "eigenvalue_rel_error", worst);
        self.flag("validate.extract", "multiplicities_match", check.multiplicities == check.true_multiplicities);
        self.row("validate.extract", "q_error", check.q_error);
        Ok(())
    }

    /// Extracted clusters, followed by the ground-truth tail when the
    /// config declares one.
    fn window_spectrum(&mut self) -> Result<&WindowSpectrum> {
        if self.ws.is_none() {
            let head = self.extracted()?.to_window()?;
            let ws = match self.config.window.tail {
                Tail::None => head,
                Tail::GroundTruth => {
                    let vertices = head.vertices().to_vec();
                    let tail = WindowSpectrum::from_truth(self.truth()?, &vertices)?;
                    self.audit.record("splice", &["extracted_spectrum", "ground_truth_tail"], true);
                    head.splice(&tail)?
                }
            };
            self.ws = Some(ws);
        }
        Ok(self.ws.as_ref().expect("window spectrum present"))
    }

    // ---- control ----

    pub fn control(&mut self) -> Result<()> {
        let ws = self.window_spectrum()?.clone();
        let h = hop_length(&ws)?;
        let ccfg = ControlConfig::continuous(h);
        let support = ws.vertices().to_vec();
        let taus = self.config.stages.control.taus.clone();
        let mut rows = Vec::with_capacity(taus.len());
        for &tau in &taus {
            let estimate = project_constant(&ws, &support, tau, &ccfg).with_context(|| format!("volume at tau {tau}"))?;
            rows.push(VolumeRow { estimate, truth: None });
        }
        self.audit.record("control", &["window_spectrum"], false);
        self.row("control", "hop_length", h);
        for r in &rows {
            self.row("control", &format!("volume@{}", r.estimate.tau), r.estimate.volume);
        }
        let monotone = rows.windows(2).all(|w| w[1].estimate.volume >= w[0].estimate.volume);
        self.flag("control", "monotone", monotone);
        if self.config.validation {
            let space = self.space()?.clone();
            let mut worst = 0.0f64;
            for r in rows.iter_mut() {
                let t = space.cell_measure_within(&support, r.estimate.tau);
                worst = worst.max((r.estimate.volume - t).abs() / t);
                r.truth = Some(t);
            }
            self.audit.record("validate.control", &["volumes", "space"], true);
            self.row("validate.control", "volume_rel_error", worst);
        }
        self.json(art::VOLUMES, "control", &rows)?;
        Ok(())
    }

    // ---- reconstruct ----

    pub fn reconstruct(&mut self) -> Result<()> {
        let stage = self.config.stages.reconstruct.clone();
        let ws = self.window_spectrum()?.clone();
        let mut rcfg = stage.fits.clone();
        if let Some(t_min) = stage.t_min {
            let h = hop_length(&ws)?;
            rcfg.floor_factor = t_min / (h * h);
        }
        let r = assemble_space(&ws, &stage.control, &rcfg)?;
        self.json(art::RECONSTRUCTION, "reconstruct", &r)?;
        write_text(&self.out, art::PROFILES, &self.hash, self.seed(), &profile_table(&r))?;
        self.audit.extend(&r.audit);
        self.row("reconstruct", "points", r.points.len() as f64);
        self.row("reconstruct", "collisions", r.collisions as f64);
        self.row("reconstruct", "unconverged_fits", r.unconverged_fits as f64);
        self.row("reconstruct", "triangle_violations", r.triangle.violations as f64);
        self.row("reconstruct", "triangle_worst", r.triangle.worst);
        self.row("reconstruct", "mass", r.mass);
        self.row("reconstruct", "noise_floor", r.noise_floor);
        self.row("reconstruct", "undetermined_dimension", r.dimension.iter().filter(|d| d.is_none()).count() as f64);
        if self.config.validation {
            let space = self.space()?.clone();
            let truth = self.truth()?.clone();
            let c = compare(&r, &space, &truth, &rcfg);
            self.json(art::COMPARISON, "validate.reconstruct", &c)?;
            self.audit.record("validate.reconstruct", &["reconstruction", "space", "ground_truth_spectrum"], true);
            let s = "validate.reconstruct";
            self.row(s, "unmatched", c.unmatched as f64);
            self.row(s, "missed", c.missed as f64);
            self.row(s, "capped_distortion_rel", c.capped_distortion_rel);
            self.row(s, "capped_distortion_inside_rel", c.capped_distortion_inside_rel);
            self.row(s, "mass_error_rel", c.mass_error_rel);
            self.flag(s, "dimension_matches", c.dimension_matches);
            self.flag(s, "dimension_matches_inside", c.dimension_matches_inside);
            self.row(s, "density_uniformity", c.density_uniformity);
            self.row(s, "density_shape_error", c.density_shape_error);
            self.row(s, "eigenfunction_error", c.eigenfunction_error);
        }
        self.recon = Some(r);
        Ok(())
    }

    // ---- stability ----

    /// Perturbation ladder against the simulated space. Both sides use
    /// exact window spectra, so the ladder measures the geometry of the
    /// map rather than extraction error.
    pub fn stability(&mut self) -> Result<()> {
        self.require_validation("stability")?;
        let stage = self.config.stages.stability.clone();
        let rstage = self.config.stages.reconstruct.clone();
        let space = self.space()?.clone();
        let sx = self.truth()?.clone();
        let n = space.vertex_count();
        let window = self.config.window.vertices.select(n)?;
        let wx = WindowSpectrum::from_truth(&sx, &window)?;
        let net = default_net(&wx, rstage.fits.net_size)?;
        let shifted: Vec<usize> = net.iter().map(|&v| v + stage.net_shift).collect();
        if shifted.iter().any(|v| !window.contains(v)) {
            bail!("net shifted by {} leaves the window", stage.net_shift);
        }
        let id = VertexMap::identity(&window);
        let mut ladder = Vec::with_capacity(stage.amplitudes.len());
        for &a in &stage.amplitudes {
            let y = perturb_edge_lengths(&space, a, self.seed())?;
            let sy = eigensolve_full(&y)?;
            let wy = WindowSpectrum::from_truth(&sy, &window)?;
            let report = approx_report((&space, &sx), (&y, &sy), &id, &stage.comparison)?;
            let ext = extend_map_via_pipeline(&wx, &wy, &id, &net, &rstage.control, &rstage.fits)
                .with_context(|| format!("extension at amplitude {a}"))?;
            let map = extension_vertex_map(&ext, (&space, &sx), (&y, &sy), &rstage.fits);
            let pipeline = gh_distortion(&space, &y, &map)?;
            let ext2 = extend_map_via_pipeline(&wx, &wy, &id, &shifted, &rstage.control, &rstage.fits)
                .with_context(|| format!("shifted-net extension at amplitude {a}"))?;
            let map2 = extension_vertex_map(&ext2, (&space, &sx), (&y, &sy), &rstage.fits);
            ladder.push(LadderRung {
                amplitude: a,
                window: report,
                uniqueness_spread: map_spread(&map, &map2, &y),
                extension: map,
                pipeline,
                ambiguous: ext.ambiguous.len(),
                max_mismatch: ext.mismatch.iter().copied().fold(0.0, f64::max),
            });
        }
        self.audit.record("stability", &["space", "perturbed_spaces"], true);
        for r in &ladder {
            let a = r.amplitude;
            self.row("stability", &format!("heat_ratio_eps@{a}"), r.window.heat_ratio.eps);
            self.row("stability", &format!("eigen_eps@{a}"), r.window.eigen.eps);
            self.row("stability", &format!("pipeline_distortion@{a}"), r.pipeline.distortion);
            self.row("stability", &format!("pipeline_defect@{a}"), r.pipeline.defect);
            self.row("stability", &format!("ambiguous@{a}"), r.ambiguous as f64);
            self.row("stability", &format!("uniqueness_spread@{a}"), r.uniqueness_spread);
        }
        let increasing = |f: &dyn Fn(&LadderRung) -> f64| ladder.windows(2).all(|w| f(&w[1]) > f(&w[0]));
        let heat = increasing(&|r| r.window.heat_ratio.eps);
        let dist = increasing(&|r| r.pipeline.distortion);
        let eigen = increasing(&|r| r.window.eigen.eps);
        self.flag("stability", "heat_ratio_monotone", heat);
        self.flag("stability", "distortion_monotone", dist);
        self.flag("stability", "eigen_heat_comonotone", heat && eigen);
        self.json(art::APPROX_REPORTS, "stability", &ladder)?;
        Ok(())
    }

    // ---- wave ----

    /// Finite-propagation refinement study on circles.
    pub fn wave(&mut self) -> Result<()> {
        let stage = self.config.stages.wave.clone();
        let reports: Vec<ConeReport> = circle_pulse_study(&stage.sizes, stage.samples)?;
        self.audit.record("wave", &["circle_builder"], true);
        for r in &reports {
            self.row("wave", &format!("cone_fraction@{}", r.vertices), r.fraction);
        }
        self.flag("wave", "strictly_decreasing", reports.windows(2).all(|w| w[1].fraction < w[0].fraction));
        self.json(art::CONE_STUDY, "wave", &reports)?;
        Ok(())
    }

    // ---- bookkeeping ----

    /// Inverse stages must not read ground truth, apart from the declared
    /// tail splice.
    fn audit_rows(&mut self) {
        let inverse = ["extract", "control", "reconstruct"];
        let leaks = self
            .audit
            .entries
            .iter()
            .filter(|e| e.ground_truth && inverse.iter().any(|s| e.stage.starts_with(s)))
            .count();
        let spliced = self.audit.entries.iter().any(|e| e.stage == "splice");
        self.row("audit", "inverse_stages_on_truth", leaks as f64);
        self.flag("audit", "ground_truth_tail", spliced);
    }

    fn missing_baselines(&mut self) {
        let keys: Vec<String> = self.config.baselines.keys().cloned().collect();
        for key in keys {
            let (stage, metric) = key.split_once('/').unwrap_or((key.as_str(), ""));
            if self.summary.get(stage, metric).is_none() {
                self.summary.rows.push(art::Row {
                    stage: "baselines".into(),
                    metric: key.clone(),
                    value: f64::NAN,
                    baseline: self.config.baselines.get(&key).map(|b| b.to_string()),
                    status: art::Status::Missing,
                });
            }
        }
    }

    /// Writes the audit log and merges this invocation's rows into the
    /// summary on disk.
    pub fn finish(&mut self, complete: bool) -> Result<Summary> {
        self.audit_rows();
        if complete {
            self.missing_baselines();
        }
        self.json(art::AUDIT, "audit", &self.audit)?;
        let mut summary = match Summary::read(&self.out) {
            Ok(s) if s.config_hash == self.hash && !complete => s,
            _ => Summary::new(&self.config.name, &self.hash, self.seed()),
        };
        summary.merge(self.summary.clone());
        summary.write(&self.out)?;
        Ok(summary)
    }

    /// Every stage in order; the first failure names its stage and leaves
    /// the artifacts written so far, plus error.txt.
    pub fn run_all(&mut self) -> Result<Summary> {
        let _ = std::fs::remove_file(self.out.join(art::ERROR));
        let mut stages: Vec<(&str, fn(&mut Self) -> Result<()>)> =
            vec![("build", Self::build), ("observe", Self::observe), ("extract", Self::extract), ("control", Self::control)];
        if self.config.stages.reconstruct.enabled {
            stages.push(("reconstruct", Self::reconstruct));
        }
        if self.config.stages.stability.enabled && self.config.validation {
            stages.push(("stability", Self::stability));
        }
        if self.config.stages.wave.enabled {
            stages.push(("wave", Self::wave));
        }
        for (name, stage) in stages {
            if let Err(e) = stage(self) {
                let msg = format!("stage {name} failed: {e:#}\n");
                std::fs::write(self.out.join(art::ERROR), &msg)?;
                self.finish(false)?;
                return Err(anyhow!(msg.trim_end().to_string()));
            }
        }
        self.finish(true)
    }
}

/// R̂_V as text: one row per accepted candidate profile over the net.
fn profile_table(r: &ReconstructionResult) -> String {
    let mut s = String::from("# candidate");
    for v in &r.net {
        let _ = write!(s, " r@{v}");
    }
    s.push_str(" accepted k volume spread\n");
    for (i, p) in r.points.iter().enumerate() {
        let _ = write!(s, "{i}");
        for x in &p.profile {
            let _ = write!(s, " {x:.9e}");
        }
        let _ = writeln!(s, " 1 {} {:.9e} {:.9e}", r.slice_k, p.volume, p.spread);
    }
    s
}
