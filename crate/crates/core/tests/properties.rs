use heatlab::control::{project_constant, ControlConfig};
use heatlab::linalg::random_orthogonal;
use heatlab::mms::build_circle;
use heatlab::spectral::{eigensolve_full, SpectralData};
use heatlab::window::WindowSpectrum;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use std::sync::OnceLock;

fn window() -> &'static (SpectralData, WindowSpectrum) {
    static W: OnceLock<(SpectralData, WindowSpectrum)> = OnceLock::new();
    W.get_or_init(|| {
        let spec = eigensolve_full(&build_circle(48, 1.0).unwrap()).unwrap();
        let v: Vec<usize> = (0..12).collect();
        let ws = WindowSpectrum::from_truth(&spec, &v).unwrap();
        (spec, ws)
    })
}

fn kernel(ws: &WindowSpectrum, t: f64) -> DMatrix<f64> {
    let w = DVector::from_iterator(ws.mode_count(), ws.eigenvalues().iter().map(|l| (-l * t).exp()));
    ws.modes() * DMatrix::from_diagonal(&w) * ws.modes().transpose()
}

fn twist(ws: &WindowSpectrum, seed: u64) -> WindowSpectrum {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<DMatrix<f64>> = ws.clusters().iter().map(|c| random_orthogonal(c.multiplicity(), &mut rng)).collect();
    ws.twisted(&r).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn twists_leave_the_window_kernel_alone(seed in any::<u64>(), t in 1e-3f64..5.0) {
        let (_, ws) = window();
        let d = (kernel(&twist(ws, seed), t) - kernel(ws, t)).amax();
        prop_assert!(d <= 1e-12, "kernel moved by {d:e}");
    }

    #[test]
    fn twists_leave_volumes_alone(seed in any::<u64>(), tau in 0.05f64..1.0) {
        let (_, ws) = window();
        let support: Vec<usize> = (0..12).collect();
        let cfg = ControlConfig::default();
        let a = project_constant(ws, &support, tau, &cfg).unwrap().volume;
        let b = project_constant(&twist(ws, seed), &support, tau, &cfg).unwrap().volume;
        prop_assert!((a - b).abs() <= 1e-10, "volume {a} against {b}");
    }

    #[test]
    fn volumes_grow_with_tau(t1 in 0.0f64..1.5, dt in 0.0f64..1.5) {
        let (_, ws) = window();
        let support: Vec<usize> = (2..6).collect();
        let cfg = ControlConfig::default();
        let a = project_constant(ws, &support, t1, &cfg).unwrap().volume;
        let b = project_constant(ws, &support, t1 + dt, &cfg).unwrap().volume;
        prop_assert!(b >= a - 1e-12, "volume fell from {a} to {b}");
    }

    #[test]
    fn twisted_modes_stay_orthonormal_on_the_full_space(seed in any::<u64>()) {
        let (spec, _) = window();
        let all: Vec<usize> = (0..spec.vertex_count()).collect();
        let ws = twist(&WindowSpectrum::from_truth(spec, &all).unwrap(), seed);
        let m = DMatrix::from_diagonal(&DVector::from_column_slice(ws.measure()));
        let gram = ws.modes().transpose() * m * ws.modes();
        let d = (gram - DMatrix::identity(ws.mode_count(), ws.mode_count())).amax();
        prop_assert!(d <= 1e-10, "gram off identity by {d:e}");
    }
}
