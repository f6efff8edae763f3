//! Acceptance run: one `criterion N: PASS/FAIL` line per criterion. Runs
//! without the test harness so every line prints even when one fails; the
//! process exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use heatlab::control::{
    default_net, project_constant, recover_point_eigenvalues, snap, test_profile, ControlConfig, ProjectorCache,
    WindowMetric,
};
use heatlab::gelfand::{extract, ExtractionConfig};
use heatlab::linalg::random_orthogonal;
use heatlab::mms::{build_circle, build_weighted_interval, Density, DiscreteSpace};
use heatlab::reconstruct::ReconstructConfig;
use heatlab::spectral::{eigensolve_full, geometric_grid, sample_observation, Noise, SpectralData};
use heatlab::stability::{
    extend_map_via_pipeline, extension_vertex_map, gh_distortion, heat_ratio_eps, StabilityConfig, VertexMap,
};
use heatlab::wave::{circle_pulse_study, solve_wave, source_to_coefficients, Source, WaveProblem};
use heatlab::window::WindowSpectrum;
use heatlab_cli::{Experiment, ExperimentConfig, Summary};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("heatlab-acceptance-{}", std::process::id())).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

struct Run {
    summary: Summary,
    dir: PathBuf,
    seconds: f64,
}

fn run_all(config: &str, out: &str) -> Result<Run, String> {
    let path = config_path(config);
    let cfg = ExperimentConfig::load(&path).map_err(err)?;
    let dir = scratch(out);
    let start = Instant::now();
    let mut exp = Experiment::new(cfg, path.parent().unwrap(), &dir).map_err(err)?;
    let summary = exp.run_all().map_err(|e| format!("{e:#}"))?;
    Ok(Run { summary, dir, seconds: start.elapsed().as_secs_f64() })
}

fn metric(s: &Summary, stage: &str, name: &str) -> Result<f64, String> {
    s.get(stage, name).ok_or_else(|| format!("{}: no {stage}/{name} row", s.name))
}

fn quarter_circle() -> (DiscreteSpace, SpectralData, Vec<usize>) {
    let space = build_circle(128, 1.0).unwrap();
    let spec = eigensolve_full(&space).unwrap();
    (space, spec, (0..32).collect())
}

/// Heat matrix against a Padé exponential of the generator.
fn forward_consistency() -> Check {
    let start = Instant::now();
    let spaces = [
        build_circle(128, 1.0).map_err(err)?,
        build_weighted_interval(129, 1.0, Density::Linear { slope: 1.0 }).map_err(err)?,
    ];
    let mut worst = 0.0f64;
    for space in &spaces {
        let spec = eigensolve_full(space).map_err(err)?;
        let l = space.laplacian();
        for t in [0.01, 0.1, 1.0] {
            let p = spec.heat_matrix(t).map_err(err)?;
            let e = (&l * -t).exp();
            let oracle = DMatrix::from_fn(e.nrows(), e.ncols(), |x, y| e[(x, y)] / space.measure()[y]);
            worst = worst.max((p - oracle).amax());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst <= 1e-8, || format!("max deviation {worst:e}"))?;
    ensure(secs < 10.0, || format!("took {secs:.1} s"))?;
    Ok(format!("max deviation {worst:.2e} in {secs:.2} s"))
}

/// Leapfrog for u'' = −Lu + f from rest, f sampled exactly as the solver
/// sees it.
fn leapfrog(space: &DiscreteSpace, f: &Source, horizon: f64, dt: f64) -> Vec<f64> {
    let n = space.vertex_count();
    let steps = (horizon / dt).round() as usize;
    let accel = |u: &[f64], t: f64| -> Vec<f64> {
        let lu = space.apply_laplacian(u);
        (0..n).map(|v| f.value(v, t) - lu[v]).collect()
    };
    let mut prev = vec![0.0; n];
    let a0 = accel(&prev, 0.0);
    let mut cur: Vec<f64> = a0.iter().map(|a| 0.5 * dt * dt * a).collect();
    for k in 1..steps {
        let a = accel(&cur, k as f64 * dt);
        let next: Vec<f64> = (0..n).map(|v| 2.0 * cur[v] - prev[v] + dt * dt * a[v]).collect();
        prev = cur;
        cur = next;
    }
    cur
}

fn wave_solver() -> Check {
    let (space, spec, _) = quarter_circle();
    let n = space.vertex_count();

    // single modes evolve by cos and sin exactly
    let mut single = 0.0f64;
    for j in [1usize, 5, 40, 127] {
        let phi: Vec<f64> = (0..n).map(|x| spec.phi(j, x)).collect();
        let w = spec.eigenvalues()[j].sqrt();
        let cos_sol = solve_wave(&spec, &WaveProblem::free(phi.clone(), vec![0.0; n], 3.0)).map_err(err)?;
        let sin_sol = solve_wave(&spec, &WaveProblem::free(vec![0.0; n], phi.clone(), 3.0)).map_err(err)?;
        for t in [0.3, 1.1, 2.9] {
            let u = cos_sol.field(&spec, t);
            let want: Vec<f64> = phi.iter().map(|p| (w * t).cos() * p).collect();
            single = single.max(max_diff(&u, &want));
            let u = sin_sol.field(&spec, t);
            let want: Vec<f64> = phi.iter().map(|p| (w * t).sin() / w * p).collect();
            single = single.max(max_diff(&u, &want));
        }
    }
    ensure(single <= 1e-12, || format!("single-mode error {single:e}"))?;

    // localized source against Richardson-extrapolated leapfrog
    let dt = 0.01;
    let profile: Vec<f64> = (0..=50)
        .map(|k| {
            let t = k as f64 * dt;
            if t <= 0.1 {
                0.0
            } else {
                (std::f64::consts::PI * (t - 0.1) / 0.4).sin().powi(2)
            }
        })
        .collect();
    let f = Source::point(0, dt, profile).map_err(err)?;
    let problem = WaveProblem { source: Some(f.clone()), ..WaveProblem::free(vec![0.0; n], vec![0.0; n], 1.0) };
    let u = solve_wave(&spec, &problem).map_err(err)?.field(&spec, 1.0);
    let coarse = leapfrog(&space, &f, 1.0, 1e-4);
    let fine = leapfrog(&space, &f, 1.0, 5e-5);
    let rich: Vec<f64> = fine.iter().zip(&coarse).map(|(a, b)| (4.0 * a - b) / 3.0).collect();
    let source_err = max_diff(&u, &rich);
    ensure(source_err <= 1e-6, || format!("source solution off the leapfrog oracle by {source_err:e}"))?;

    // energy is conserved without a source
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let psi0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let psi1: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let free = solve_wave(&spec, &WaveProblem::free(psi0, psi1, 10.0)).map_err(err)?;
    let e0 = free.energy(0.0);
    let drift = (0..=1000).map(|k| (free.energy(k as f64 * 0.01) - e0).abs() / e0).fold(0.0, f64::max);
    ensure(drift <= 1e-10, || format!("energy drift {drift:e}"))?;

    // restarting at t0 continues the same solution
    let long = WaveProblem { horizon: 2.0, ..problem };
    let sol = solve_wave(&spec, &long).map_err(err)?;
    let t0 = 0.3;
    let again = solve_wave(&spec, &sol.restart_with_source(&spec, t0, &f).map_err(err)?).map_err(err)?;
    let scale = (0..=20).flat_map(|k| sol.coefficients(k as f64 * 0.1)).fold(0.0, |m: f64, c| m.max(c.abs()));
    let restart = [0.05, 0.2, 0.7, 1.5]
        .iter()
        .map(|&s| max_diff(&again.coefficients(s), &sol.coefficients(t0 + s)))
        .fold(0.0, f64::max)
        / scale;
    ensure(restart <= 1e-12, || format!("restart mismatch {restart:e}"))?;
    Ok(format!(
        "single mode {single:.1e}, source vs oracle {source_err:.1e}, energy drift {drift:.1e}, restart {restart:.1e}"
    ))
}

fn finite_propagation() -> Check {
    let reports = circle_pulse_study(&[64, 256, 1024], 64).map_err(err)?;
    let fractions: Vec<String> = reports.iter().map(|r| format!("{}: {:.3e}", r.vertices, r.fraction)).collect();
    ensure(reports.windows(2).all(|w| w[1].fraction < w[0].fraction), || format!("not decreasing: {fractions:?}"))?;
    Ok(format!("cone energy fractions {}", fractions.join(", ")))
}

/// Coefficients from the window spectrum alone against the full solver.
fn window_source_formula() -> Check {
    let (_, spec, v) = quarter_circle();
    let n = spec.vertex_count();
    let ws = WindowSpectrum::from_truth(&spec, &v).map_err(err)?;
    let dt = 0.02;
    let values: Vec<Vec<f64>> =
        [3.0, 11.0, 0.5].iter().map(|w| (0..=25).map(|k| (w * k as f64 * dt).sin()).collect()).collect();
    let f = Source::new(dt, 25, vec![4, 17, 30], values).map_err(err)?;
    let problem = WaveProblem { source: Some(f.clone()), ..WaveProblem::free(vec![0.0; n], vec![0.0; n], 2.0) };
    let sol = solve_wave(&spec, &problem).map_err(err)?;
    let mut worst = 0.0f64;
    for t in [0.17, 0.5, 1.0, 1.9] {
        let local = source_to_coefficients(&ws, &f, t).map_err(err)?;
        worst = worst.max(max_diff(&local, &sol.coefficients(t)));
    }
    ensure(worst <= 1e-10, || format!("coefficient deviation {worst:e}"))?;
    Ok(format!("{} modes, max deviation {worst:.2e}", ws.mode_count()))
}

fn extraction_and_gauge() -> Check {
    let (_, spec, v) = quarter_circle();
    let grid = geometric_grid(1e-3, 50.0, 32);
    let obs = sample_observation(&spec, &v, &grid, Noise::default()).map_err(err)?;
    let ex = extract(&obs, &ExtractionConfig::default()).map_err(err)?;
    let mass_err = (ex.mass.mass - 2.0 * std::f64::consts::PI).abs() / (2.0 * std::f64::consts::PI);
    ensure(mass_err <= 1e-6, || format!("mass error {mass_err:e}"))?;
    ensure(ex.multiplicities() == [1, 2, 2, 2], || format!("multiplicities {:?}", ex.multiplicities()))?;
    let lam = ex.eigenvalues();
    let lam_err = (1..7).map(|j| (lam[j] - spec.eigenvalues()[j]).abs() / spec.eigenvalues()[j]).fold(0.0, f64::max);
    ensure(lam_err <= 1e-5, || format!("eigenvalue error {lam_err:e}"))?;
    let mut q_err = 0.0f64;
    for (c, range) in [0..1usize, 1..3, 3..5, 5..7].into_iter().enumerate() {
        let f = &ex.clusters[c].functions;
        let q = f * f.transpose();
        let truth = DMatrix::from_fn(v.len(), v.len(), |a, b| range.clone().map(|j| spec.phi(j, a) * spec.phi(j, b)).sum());
        q_err = q_err.max((q - truth).amax());
    }
    ensure(q_err <= 1e-8, || format!("cluster kernel error {q_err:e}"))?;

    // gauge twists leave every downstream quantity unchanged
    let truth = WindowSpectrum::from_truth(&spec, &v).map_err(err)?;
    let ws = ex.to_window().map_err(err)?.splice(&truth).map_err(err)?;
    let cfg = ControlConfig::default();
    let metric = WindowMetric::from_operator(&ws).map_err(err)?;
    let net: Vec<usize> = (0..8).map(|i| 4 * i + 2).collect();
    let points = [45usize, 90];
    let space = build_circle(128, 1.0).map_err(err)?;
    let profiles: Vec<Vec<f64>> = points.iter().map(|&p| net.iter().map(|&x| space.dist(p, x)).collect()).collect();
    let taus = [0.1, 0.3, 0.5];
    let times = [1e-3, 0.1, 5.0];
    let baseline = gauge_observables(&ws, &v, &metric, &net, &profiles, &taus, &times, &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = [0.0f64; 3];
    for _ in 0..100 {
        let rotations: Vec<DMatrix<f64>> =
            ws.clusters().iter().map(|c| random_orthogonal(c.multiplicity(), &mut rng)).collect();
        let tw = ws.twisted(&rotations).map_err(err)?;
        let obs = gauge_observables(&tw, &v, &metric, &net, &profiles, &taus, &times, &cfg)?;
        for k in 0..3 {
            worst[k] = worst[k].max(max_diff(&obs[k], &baseline[k]));
        }
    }
    ensure(worst[0] <= 1e-12, || format!("window kernel moved by {:e} under a twist", worst[0]))?;
    ensure(worst[1] <= 1e-10, || format!("volumes moved by {:e} under a twist", worst[1]))?;
    ensure(worst[2] <= 1e-10, || format!("recovered kernel moved by {:e} under a twist", worst[2]))?;
    Ok(format!(
        "mass {mass_err:.1e}, eigenvalues {lam_err:.1e}, kernels {q_err:.1e}; 100 twists move kernel {:.1e}, volumes {:.1e}, point kernel {:.1e}",
        worst[0], worst[1], worst[2]
    ))
}

/// Window heat kernel, discrete volumes, and p̂ between recovered points.
#[allow(clippy::too_many_arguments)]
fn gauge_observables(
    ws: &WindowSpectrum,
    v: &[usize],
    metric: &WindowMetric,
    net: &[usize],
    profiles: &[Vec<f64>],
    taus: &[f64],
    times: &[f64],
    cfg: &ControlConfig,
) -> Result<[Vec<f64>; 3], String> {
    let modes = ws.modes();
    let lam = ws.eigenvalues();
    let mut kernel = Vec::new();
    for &t in times {
        let w = DVector::from_iterator(lam.len(), lam.iter().map(|l| (-l * t).exp()));
        let k = modes * DMatrix::from_diagonal(&w) * modes.transpose();
        kernel.extend(k.iter().copied());
    }
    let volumes = taus.iter().map(|&tau| project_constant(ws, v, tau, cfg).map(|e| e.volume)).collect::<Result<Vec<_>, _>>().map_err(err)?;
    let cache = ProjectorCache::new();
    let values = profiles
        .iter()
        .map(|p| recover_point_eigenvalues(ws, metric, net, p, &[40], 0.0, cfg, &cache).map(|pv| pv.values))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let mut point = Vec::new();
    for &t in times {
        for a in &values {
            for b in &values {
                point.push((0..lam.len()).map(|j| (-lam[j] * t).exp() * a[j] * b[j]).sum());
            }
        }
    }
    Ok([kernel, volumes, point])
}

fn volumes(circle: &Summary, interval: &Summary) -> Check {
    let mut notes = Vec::new();
    for s in [circle, interval] {
        let e = metric(s, "validate.control", "volume_rel_error")?;
        let mono = metric(s, "control", "monotone")?;
        ensure(e <= 0.02 && mono == 1.0, || format!("{}: volume error {e:e}, monotone {mono}", s.name))?;
        notes.push(format!("{} {:.2}%", s.name, 100.0 * e));
    }
    Ok(format!("volume errors {}, monotone in tau", notes.join(", ")))
}

fn slices(circle: &Summary) -> Check {
    let eig = metric(circle, "validate.reconstruct", "eigenfunction_error")?;
    ensure(eig <= 1e-2, || format!("interior eigenfunction error {eig:e}"))?;
    let (space, spec, v) = quarter_circle();
    let grid = geometric_grid(1e-3, 50.0, 32);
    let obs = sample_observation(&spec, &v, &grid, Noise::default()).map_err(err)?;
    let truth = WindowSpectrum::from_truth(&spec, &v).map_err(err)?;
    let ws = extract(&obs, &ExtractionConfig::default()).map_err(err)?.to_window().map_err(err)?.splice(&truth).map_err(err)?;
    let metric = WindowMetric::from_operator(&ws).map_err(err)?;
    let net: Vec<usize> = (0..8).map(|i| 4 * i + 2).collect();
    let cfg = ControlConfig::default();
    let cache = ProjectorCache::new();
    let step = 0.05;
    let (mut accepted, mut rejected, mut perturbed) = (0, 0, 0);
    let n = space.vertex_count();
    for p in 0..n {
        let prof = snap(&net.iter().map(|&x| space.dist(p, x)).collect::<Vec<_>>(), step);
        if test_profile(&ws, &metric, &net, &prof, 40, 1e-3, &cfg, &cache).map_err(err)?.accepted {
            accepted += 1;
        }
        for l in 0..net.len() {
            for sign in [-1.0, 1.0] {
                let mut q = prof.clone();
                q[l] += sign * 3.0 * step;
                perturbed += 1;
                if !test_profile(&ws, &metric, &net, &q, 40, 1e-3, &cfg, &cache).map_err(err)?.accepted {
                    rejected += 1;
                }
            }
        }
    }
    ensure(accepted == n && rejected == perturbed, || {
        format!("true profiles accepted {accepted}/{n}, perturbed rejected {rejected}/{perturbed}")
    })?;
    Ok(format!("eigenfunction error {eig:.2e}; {accepted}/{n} true profiles kept, {rejected}/{perturbed} shifted ones dropped"))
}

fn reconstruction(circle: &Run, interval: &Run) -> Check {
    for run in [circle, interval] {
        let failed: Vec<String> = run
            .summary
            .rows
            .iter()
            .filter(|r| !matches!(r.status, heatlab_cli::artifacts::Status::Pass | heatlab_cli::artifacts::Status::Recorded))
            .map(|r| format!("{}/{} = {:e}", r.stage, r.metric, r.value))
            .collect();
        ensure(failed.is_empty(), || format!("{}: {}", run.summary.name, failed.join("; ")))?;
        ensure(run.seconds < 300.0, || format!("{} took {:.0} s", run.summary.name, run.seconds))?;
    }
    let c = &circle.summary;
    let i = &interval.summary;
    Ok(format!(
        "circle distortion {:.2e}, mass {:.2e}, density {:.2e} in {:.0} s; interval density shape {:.2e} in {:.0} s",
        metric(c, "validate.reconstruct", "capped_distortion_rel")?,
        metric(c, "validate.reconstruct", "mass_error_rel")?,
        metric(c, "validate.reconstruct", "density_uniformity")?,
        circle.seconds,
        metric(i, "validate.reconstruct", "density_shape_error")?,
        interval.seconds
    ))
}

fn rigidity() -> Check {
    let (space, sx, v) = quarter_circle();
    let n = space.vertex_count();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(11));
    let copy = space.relabel(&perm).map_err(err)?;
    let sy = eigensolve_full(&copy).map_err(err)?;
    let psi = VertexMap::permutation(&perm, &v);
    let eps = heat_ratio_eps(&space, &copy, &psi, &StabilityConfig::default()).map_err(err)?.eps;
    ensure(eps <= 1e-12, || format!("heat ratio eps {eps:e}"))?;
    let wx = WindowSpectrum::from_truth(&sx, &v).map_err(err)?;
    let wy = WindowSpectrum::from_truth(&sy, &psi.image).map_err(err)?;
    let rcfg = ReconstructConfig::default();
    let net = default_net(&wx, rcfg.net_size).map_err(err)?;
    let ext = extend_map_via_pipeline(&wx, &wy, &psi, &net, &ControlConfig::default(), &rcfg).map_err(err)?;
    let map = extension_vertex_map(&ext, (&space, &sx), (&copy, &sy), &rcfg);
    let all: Vec<usize> = (0..n).collect();
    ensure(map == VertexMap::permutation(&perm, &all), || format!("extension covers {} of {n} vertices or is not the permutation", map.len()))?;
    let d = gh_distortion(&space, &copy, &map).map_err(err)?.distortion;
    ensure(d == 0.0, || format!("distortion {d:e}"))?;
    Ok(format!("extension is the relabelling on all {n} vertices, distortion {d}, heat ratio eps {eps:.1e}"))
}

fn ladder(circle: &Summary) -> Check {
    let amps = ["0.0025", "0.005", "0.01"];
    let heat: Vec<f64> = amps.iter().map(|a| metric(circle, "stability", &format!("heat_ratio_eps@{a}"))).collect::<Result<_, _>>()?;
    let eigen: Vec<f64> = amps.iter().map(|a| metric(circle, "stability", &format!("eigen_eps@{a}"))).collect::<Result<_, _>>()?;
    let dist: Vec<f64> =
        amps.iter().map(|a| metric(circle, "stability", &format!("pipeline_distortion@{a}"))).collect::<Result<_, _>>()?;
    let up = |x: &[f64]| x.windows(2).all(|w| w[1] > w[0]);
    ensure(up(&heat) && up(&dist), || format!("heat {heat:?}, distortion {dist:?}"))?;
    ensure(up(&eigen), || format!("eigen eps {eigen:?} does not rise with heat eps {heat:?}"))?;
    let fmt = |x: &[f64]| x.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(" < ");
    Ok(format!("heat {}; eigen {}; distortion {}", fmt(&heat), fmt(&eigen), fmt(&dist)))
}

fn determinism(first: &Run) -> Check {
    let second = run_all("circle128.json", "circle128-again")?;
    for file in [heatlab_cli::artifacts::SUMMARY_JSON, heatlab_cli::artifacts::SUMMARY_TSV] {
        let a = std::fs::read(first.dir.join(file)).map_err(err)?;
        let b = std::fs::read(second.dir.join(file)).map_err(err)?;
        ensure(a == b, || format!("{file} differs between runs"))?;
    }
    Ok("summary.json and summary.tsv byte-identical across two runs with seed 2024".into())
}

fn report(n: usize, check: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(note) => {
            println!("criterion {n}: PASS ({note}; {secs:.1} s)");
            true
        }
        Err(why) => {
            println!("criterion {n}: FAIL ({why})");
            false
        }
    }
}

fn main() {
    let circle = run_all("circle128.json", "circle128");
    let interval = run_all("interval.json", "interval");
    let both = || -> Result<(&Run, &Run), String> {
        Ok((circle.as_ref().map_err(|e| format!("circle run: {e}"))?, interval.as_ref().map_err(|e| format!("interval run: {e}"))?))
    };
    let results = [
        report(1, forward_consistency),
        report(2, wave_solver),
        report(3, finite_propagation),
        report(4, window_source_formula),
        report(5, extraction_and_gauge),
        report(6, || both().and_then(|(c, i)| volumes(&c.summary, &i.summary))),
        report(7, || both().and_then(|(c, _)| slices(&c.summary))),
        report(8, || both().and_then(|(c, i)| reconstruction(c, i))),
        report(9, rigidity),
        report(10, || both().and_then(|(c, _)| ladder(&c.summary))),
        report(11, || both().and_then(|(c, _)| determinism(c))),
    ];
    let _ = std::fs::remove_dir_all(std::env::temp_dir().join(format!("heatlab-acceptance-{}", std::process::id())));
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("{passed}/{} criteria pass", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
