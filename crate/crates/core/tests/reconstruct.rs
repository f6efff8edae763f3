use heatlab::control::ControlConfig;
use heatlab::mms::{build_circle, build_torus_mesh, build_weighted_interval, Density, };
use heatlab::reconstruct::*;
use heatlab::spectral::{eigensolve_full, SpectralData};
use heatlab::window::WindowSpectrum;

fn kernel(spec: &SpectralData, x: usize, y: usize) -> impl Fn(f64) -> f64 + '_ {
    move |t| (0..spec.mode_count()).map(|j| (-spec.eigenvalues()[j] * t).exp() * spec.phi(j, x) * spec.phi(j, y)).sum()
}

fn cap(spec: &SpectralData) -> f64 {
    0.5 / spec.eigenvalues()[1]
}

fn circle_edge(n: usize, radius: f64) -> f64 {
    2.0 * std::f64::consts::PI * radius / n as f64
}

#[test]
fn unit_distance_on_fine_circle() {
    let space = build_circle(512, 1.0).unwrap();
    let spec = eigensolve_full(&space).unwrap();
    let h = circle_edge(512, 1.0);
    // arc length 1 on the unit circle is 512 / 2π ≈ 81.49 edges
    for y in [81, 82] {
        let f = varadhan_distance(&kernel(&spec, 0, y), h, cap(&spec), None, &ReconstructConfig::default()).unwrap();
        let d = space.dist(0, y);
        assert!((f.distance - d).abs() <= 0.02 * d, "d {d} fit {f:?}");
    }
}

#[test]
fn interval_distances_within_two_percent() {
    let space = build_weighted_interval(129, 1.0, Density::Uniform).unwrap();
    let spec = eigensolve_full(&space).unwrap();
    let h = 1.0 / 128.0;
    let cfg = ReconstructConfig::default();
    let mut worst: f64 = 0.0;
    for x in (0..129).step_by(8) {
        for y in (x + 1..129).filter(|y| space.dist(x, *y) <= 0.5) {
            let f = varadhan_distance(&kernel(&spec, x, y), h, cap(&spec), Some(1), &cfg).unwrap();
            worst = worst.max((f.distance - space.dist(x, y)).abs());
        }
    }
    assert!(worst <= 0.02, "worst {worst}");
}

#[test]
fn fine_circle_is_one_dimensional_and_uniform() {
    let space = build_circle(512, 1.0).unwrap();
    let spec = eigensolve_full(&space).unwrap();
    let h = circle_edge(512, 1.0);
    let cfg = ReconstructConfig::default();
    let cal = DimensionCalibration::uniform(1, h).unwrap();
    let rho: Vec<f64> = (0..512)
        .step_by(37)
        .map(|x| {
            let p = kernel(&spec, x, x);
            assert_eq!(select_dimension(&p, h, &cfg).unwrap().dimension, 1);
            density_recovery(&p, &cal, &cfg).unwrap().density
        })
        .collect();
    let (lo, hi) = rho.iter().fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(*r), b.max(*r)));
    assert!(hi / lo - 1.0 <= 0.02, "{rho:?}");
}

#[test]
fn torus_is_two_dimensional() {
    let space = build_torus_mesh(32, 32, (1.0, 1.0)).unwrap();
    let spec = eigensolve_full(&space).unwrap();
    let h = 1.0 / 32.0;
    for x in [0, 17, 300, 777] {
        let fit = select_dimension(&kernel(&spec, x, x), h, &ReconstructConfig::default()).unwrap();
        assert_eq!(fit.dimension, 2, "{fit:?}");
    }
}

#[test]
fn weighted_interval_density_profile() {
    let space = build_weighted_interval(129, 1.0, Density::Linear { slope: 1.0 }).unwrap();
    let spec = eigensolve_full(&space).unwrap();
    let h = 1.0 / 128.0;
    let cfg = ReconstructConfig::default();
    let cal = DimensionCalibration::uniform(1, h).unwrap();
    let rho = |x: usize| density_recovery(&kernel(&spec, x, x), &cal, &cfg).unwrap().density;
    let base = rho(13);
    for x in (13..=115).step_by(6) {
        let want = (1.0 + x as f64 * h) / (1.0 + 13.0 * h);
        assert!((rho(x) / base / want - 1.0).abs() <= 0.03, "x {x}");
    }
}

#[test]
fn trivial_window_reproduces_the_circle() {
    let space = build_circle(64, 1.0).unwrap();
    let spec = eigensolve_full(&space).unwrap();
    let ws = WindowSpectrum::from_truth(&spec, &(0..64).collect::<Vec<_>>()).unwrap();
    let cfg = ReconstructConfig::default();
    let r = assemble_space(&ws, &ControlConfig::default(), &cfg).unwrap();
    let c = compare(&r, &space, &spec, &cfg);
    assert_eq!((c.unmatched, c.missed), (0, 0));
    assert!(c.eigenfunction_error < 1e-10, "{}", c.eigenfunction_error);
    assert!(c.mass_error_rel < 1e-12);
}

#[test]
fn recovered_distances_are_symmetric_with_zero_diagonal() {
    let space = build_circle(64, 1.0).unwrap();
    let spec = eigensolve_full(&space).unwrap();
    let ws = WindowSpectrum::from_truth(&spec, &(0..16).collect::<Vec<_>>()).unwrap();
    let r = assemble_space(&ws, &ControlConfig::default(), &ReconstructConfig::default()).unwrap();
    let d = &r.distance;
    assert_eq!(d, &d.transpose());
    assert!((0..d.nrows()).all(|i| d[(i, i)] == 0.0));
}
