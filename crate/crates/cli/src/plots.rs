//! Columnar plot data read back from an artifact tree. Rendering is left to
//! external tools.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Result};
use serde_json::Value;

use heatlab::gelfand::ExtractedSpectrum;
use heatlab::reconstruct::ReconstructionResult;
use heatlab::spectral::{geometric_grid, ObservationWindow};

use crate::artifacts::{self as art, read_json, Envelope};
use crate::pipeline::{ExtractionCheck, WindowFile};

pub const PLOT_DIR: &str = "plots";
pub const HEAT_TRACE: &str = "heat_trace.tsv";
pub const VARADHAN: &str = "varadhan.tsv";
pub const CONE_ENERGY: &str = "cone_energy.tsv";
pub const EPS_LADDER: &str = "eps_ladder.tsv";
pub const EIGEN_ERROR: &str = "eigen_error.tsv";

/// Plot file and the artifacts it is made from.
pub const PLOTS: [(&str, &[&str]); 5] = [
    (HEAT_TRACE, &[art::WINDOW, art::OBSERVATION, art::EXTRACTED]),
    (VARADHAN, &[art::RECONSTRUCTION]),
    (CONE_ENERGY, &[art::CONE_STUDY]),
    (EPS_LADDER, &[art::APPROX_REPORTS]),
    (EIGEN_ERROR, &[art::EXTRACTION_CHECK]),
];

#[derive(Debug, Default)]
pub struct EmitReport {
    pub written: Vec<String>,
    /// Plots left out, with the artifacts they lack.
    pub skipped: Vec<(String, Vec<String>)>,
}

/// Writes every plot whose artifacts exist into `dir/plots`. Fails, naming
/// all expected files, when none can be made.
pub fn emit_plots(dir: &Path) -> Result<EmitReport> {
    let mut report = EmitReport::default();
    let mut todo = Vec::new();
    for (plot, needs) in PLOTS {
        let missing: Vec<String> = needs.iter().filter(|f| !dir.join(f).exists()).map(|f| f.to_string()).collect();
        if missing.is_empty() {
            todo.push(plot);
        } else {
            report.skipped.push((plot.to_string(), missing));
        }
    }
    if todo.is_empty() {
        let mut expected: Vec<&str> = PLOTS.iter().flat_map(|(_, n)| n.iter().copied()).collect();
        expected.sort_unstable();
        expected.dedup();
        bail!("no plot can be made from {}: expected artifacts {}", dir.display(), expected.join(", "));
    }
    let out = dir.join(PLOT_DIR);
    std::fs::create_dir_all(&out)?;
    for plot in todo {
        let (header, body) = match plot {
            HEAT_TRACE => heat_trace(dir)?,
            VARADHAN => varadhan(dir)?,
            CONE_ENERGY => cone_energy(dir)?,
            EPS_LADDER => eps_ladder(dir)?,
            EIGEN_ERROR => eigen_error(dir)?,
            _ => unreachable!("plot list and dispatch agree"),
        };
        std::fs::write(out.join(plot), header + &body)?;
        report.written.push(plot.to_string());
    }
    Ok(report)
}

fn header<T>(env: &Envelope<T>) -> String {
    art::text_header(&env.config_hash, env.seed)
}

/// Observed I_0(t) on V against the fitted model Σ_c a_c e^{−λ_c t}.
fn heat_trace(dir: &Path) -> Result<(String, String)> {
    let wf: Envelope<WindowFile> = read_json(dir, art::WINDOW)?;
    let ex: Envelope<ExtractedSpectrum> = read_json(dir, art::EXTRACTED)?;
    let text = std::fs::read_to_string(dir.join(art::OBSERVATION))?;
    let obs = ObservationWindow::from_columnar(&text, wf.data.vertices.clone(), wf.data.measure.clone())?;
    let rates: Vec<(f64, f64)> = std::iter::once((0.0, ex.data.recovery.constant))
        .chain(ex.data.clusters.iter().skip(1).map(|c| (c.eigenvalue, c.amplitude)))
        .collect();
    let mut s = String::from("# rates");
    for (l, _) in &rates {
        let _ = write!(s, " {l:.9e}");
    }
    s.push_str("\n# t observed model\n");
    for (t, i0) in obs.t_grid.iter().zip(obs.heat_trace()) {
        let model: f64 = rates.iter().map(|(l, a)| a * (-l * t).exp()).sum();
        let _ = writeln!(s, "{t:.9e} {i0:.9e} {model:.9e}");
    }
    Ok((header(&ex), s))
}

/// −4t log p̂(a, b, t) for the pairs (0, b), one row per pair and time,
/// next to the fitted d̂².
fn varadhan(dir: &Path) -> Result<(String, String)> {
    let env: Envelope<ReconstructionResult> = read_json(dir, art::RECONSTRUCTION)?;
    let r = &env.data;
    let lambda1 = r.kernel.eigenvalues.iter().copied().find(|&l| l > 0.0).unwrap_or(1.0);
    let lo = 10.0 * r.hop_length * r.hop_length;
    let hi = (0.5 / lambda1).max(2.0 * lo);
    let times = geometric_grid(lo, hi, 16);
    let mut s = String::from("# a b t minus_4t_log_p fitted_d2\n");
    for b in 0..r.points.len() {
        let d2 = r.distance[(0, b)].powi(2);
        for &t in &times {
            let p = r.kernel.p(0, b, t);
            let v = if p > 0.0 { -4.0 * t * p.ln() } else { f64::NAN };
            let _ = writeln!(s, "0 {b} {t:.9e} {v:.9e} {d2:.9e}");
        }
    }
    Ok((header(&env), s))
}

fn cone_energy(dir: &Path) -> Result<(String, String)> {
    let env: Envelope<Value> = read_json(dir, art::CONE_STUDY)?;
    let mut s = String::from("# vertices fraction cone_energy total_energy t_at_max\n");
    for r in env.data.as_array().into_iter().flatten() {
        let _ = writeln!(
            s,
            "{} {} {} {} {}",
            r["vertices"],
            num(&r["fraction"]),
            num(&r["cone_energy"]),
            num(&r["total_energy"]),
            num(&r["t_at_max"])
        );
    }
    Ok((header(&env), s))
}

fn eps_ladder(dir: &Path) -> Result<(String, String)> {
    let env: Envelope<Value> = read_json(dir, art::APPROX_REPORTS)?;
    let mut s = String::from("# amplitude heat_ratio_eps eigen_eps pipeline_distortion pipeline_defect uniqueness_spread\n");
    for r in env.data.as_array().into_iter().flatten() {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {}",
            num(&r["amplitude"]),
            num(&r["window"]["heat_ratio"]["eps"]),
            num(&r["window"]["eigen"]["eps"]),
            num(&r["pipeline"]["distortion"]),
            num(&r["pipeline"]["defect"]),
            num(&r["uniqueness_spread"])
        );
    }
    Ok((header(&env), s))
}

fn eigen_error(dir: &Path) -> Result<(String, String)> {
    let env: Envelope<ExtractionCheck> = read_json(dir, art::EXTRACTION_CHECK)?;
    let mut s = String::from("# mode recovered truth rel_error\n");
    for m in &env.data.modes {
        let _ = writeln!(s, "{} {:.9e} {:.9e} {:.9e}", m.mode, m.recovered, m.truth, m.rel_error);
    }
    Ok((header(&env), s))
}

/// JSON writes infinities as null.
fn num(v: &Value) -> String {
    v.as_f64().map_or_else(|| "inf".to_string(), |x| format!("{x:.9e}"))
}
