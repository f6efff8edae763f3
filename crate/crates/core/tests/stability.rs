use heatlab::control::{default_net, ControlConfig};
use heatlab::mms::{build_circle, build_torus_mesh};
use heatlab::reconstruct::ReconstructConfig;
use heatlab::spectral::eigensolve_full;
use heatlab::stability::*;
use heatlab::window::WindowSpectrum;

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    perm
}

#[test]
fn identical_spaces_have_zero_epsilons() {
    let space = build_circle(64, 1.0).unwrap();
    let spec = eigensolve_full(&space).unwrap();
    let map = VertexMap::identity(&(0..16).collect::<Vec<_>>());
    let cfg = StabilityConfig::default();
    assert_eq!(heat_ratio_eps(&space, &space, &map, &cfg).unwrap().eps, 0.0);
    let e = eigen_eps(&spec, &spec, &map, &cfg).unwrap();
    assert!(e.eps < 1e-12 && e.saturated, "{e:?}");
}

#[test]
fn scaled_measure_shifts_the_ratio_by_the_mass_factor() {
    let space = build_circle(128, 1.0).unwrap();
    let heavy = space.with_scaled_measure(1.01).unwrap();
    let map = VertexMap::identity(&(0..32).collect::<Vec<_>>());
    let eps = heat_ratio_eps(&space, &heavy, &map, &StabilityConfig::default()).unwrap().eps;
    assert!((eps - (1.0 - 1.0 / 1.01)).abs() < 1e-9, "{eps}");
}

#[test]
fn relabelled_copy_is_exact() {
    let space = build_circle(128, 1.0).unwrap();
    let perm = shuffled(128, 3);
    let copy = space.relabel(&perm).unwrap();
    let map = VertexMap::permutation(&perm, &(0..128).collect::<Vec<_>>());
    let r = heat_ratio_eps(&space, &copy, &map, &StabilityConfig::default()).unwrap();
    assert!(r.eps <= 1e-12, "{}", r.eps);
    let d = gh_distortion(&space, &copy, &map).unwrap();
    assert_eq!((d.distortion, d.defect), (0.0, 0.0));
}

#[test]
fn rotation_is_an_isometry() {
    let space = build_circle(128, 1.0).unwrap();
    let map = VertexMap::new((0..128).collect(), (0..128).map(|x| (x + 1) % 128).collect()).unwrap();
    let d = gh_distortion(&space, &space, &map).unwrap();
    assert!(d.distortion < 1e-12 && d.defect == 0.0, "{d:?}");
}

#[test]
fn heat_ratio_ignores_a_common_relabelling() {
    let space = build_circle(48, 1.0).unwrap();
    let other = perturb_edge_lengths(&space, 0.01, 5).unwrap();
    let perm = shuffled(48, 9);
    let ball: Vec<usize> = (0..12).collect();
    let cfg = StabilityConfig::default();
    let plain = heat_ratio_eps(&space, &other, &VertexMap::identity(&ball), &cfg).unwrap();
    let moved: Vec<usize> = ball.iter().map(|&x| perm[x]).collect();
    let relabelled = heat_ratio_eps(&space.relabel(&perm).unwrap(), &other.relabel(&perm).unwrap(), &VertexMap::identity(&moved), &cfg).unwrap();
    assert!((plain.eps - relabelled.eps).abs() <= 1e-9 * plain.eps.max(1e-300), "{} {}", plain.eps, relabelled.eps);
}

#[test]
fn neighbouring_circles_are_spectrally_close() {
    let (a, b) = (build_circle(128, 1.0).unwrap(), build_circle(129, 1.0).unwrap());
    let (sa, sb) = (eigensolve_full(&a).unwrap(), eigensolve_full(&b).unwrap());
    // vertex 0 sits at angle 0 on both
    let map = VertexMap::identity(&[0]);
    let e = eigen_eps(&sa, &sb, &map, &StabilityConfig::default()).unwrap();
    println!("{:?} {:?}", e.eps, &e.per_mode[..8]);
    assert!(e.defect.is_none() && e.eps < 0.1, "{e:?}");
    // low modes differ by the O(h²) eigenvalue drift
    assert!(e.per_mode[1] < 1e-3, "{:?}", &e.per_mode[..3]);
}

#[test]
fn torus_and_circle_have_different_cluster_structure() {
    let torus = build_torus_mesh(8, 8, (1.0, 1.0)).unwrap();
    let circle = build_circle(64, 1.0).unwrap();
    let map = VertexMap::identity(&(0..8).collect::<Vec<_>>());
    let e = eigen_eps(&eigensolve_full(&torus).unwrap(), &eigensolve_full(&circle).unwrap(), &map, &StabilityConfig::default()).unwrap();
    // only the constant mode is comparable, which certifies nothing
    assert!(e.defect.is_some() && e.eps >= 1.0, "{e:?}");
}

#[test]
fn extension_of_the_identity_is_the_identity() {
    let space = build_circle(64, 1.0).unwrap();
    let spec = eigensolve_full(&space).unwrap();
    let v: Vec<usize> = (0..16).collect();
    let ws = WindowSpectrum::from_truth(&spec, &v).unwrap();
    let rcfg = ReconstructConfig::default();
    let net = default_net(&ws, 6).unwrap();
    let ext = extend_map_via_pipeline(&ws, &ws, &VertexMap::identity(&v), &net, &ControlConfig::default(), &rcfg).unwrap();
    assert!(ext.ambiguous.is_empty());
    let map = extension_vertex_map(&ext, (&space, &spec), (&space, &spec), &rcfg);
    assert_eq!(map, VertexMap::identity(&(0..64).collect::<Vec<_>>()));
}

#[test]
fn extension_recovers_a_relabelling() {
    let space = build_circle(64, 1.0).unwrap();
    let perm = shuffled(64, 11);
    let copy = space.relabel(&perm).unwrap();
    let (sx, sy) = (eigensolve_full(&space).unwrap(), eigensolve_full(&copy).unwrap());
    let v: Vec<usize> = (0..16).collect();
    let psi = VertexMap::permutation(&perm, &v);
    let ws_x = WindowSpectrum::from_truth(&sx, &v).unwrap();
    let ws_y = WindowSpectrum::from_truth(&sy, &psi.image).unwrap();
    let rcfg = ReconstructConfig::default();
    let net = default_net(&ws_x, 6).unwrap();
    let ext = extend_map_via_pipeline(&ws_x, &ws_y, &psi, &net, &ControlConfig::default(), &rcfg).unwrap();
    let map = extension_vertex_map(&ext, (&space, &sx), (&copy, &sy), &rcfg);
    assert_eq!(map, VertexMap::permutation(&perm, &(0..64).collect::<Vec<_>>()));
    assert_eq!(gh_distortion(&space, &copy, &map).unwrap().distortion, 0.0);
}
