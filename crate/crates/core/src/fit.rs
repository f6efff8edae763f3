//! Sums of decaying exponentials: log-linear peeling fits and a joint
//! Levenberg–Marquardt refinement of y(t) = a_0 + Σ_i A_i e^{−λ_i t}.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::linalg::lstsq;

#[derive(Clone, Debug)]
pub struct ExpFit {
    pub constant: f64,
    pub rates: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// Root-mean-square residual in units of the per-sample noise scale.
    pub rms: f64,
}

/// Straight-line fit of ln y = ln A − λ t; returns (λ, A).
pub fn log_linear(t: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = t.len();
    if n < 2 || y.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let x = DMatrix::from_fn(n, 2, |k, c| if c == 0 { 1.0 } else { t[k] });
    let ly = DVector::from_iterator(n, y.iter().map(|v| v.ln()));
    let beta = lstsq(&x, &ly);
    let rate = -beta[1];
    rate.is_finite().then(|| (rate, beta[0].exp()))
}

/// Amplitudes (constant first) for fixed rates by weighted linear least squares.
pub fn amplitudes_for_rates(t: &[f64], y: &[f64], scale: &[f64], rates: &[f64]) -> (Vec<f64>, f64) {
    let n = t.len();
    let a = design(t, scale, rates);
    let b = DVector::from_iterator(n, (0..n).map(|k| y[k] / scale[k]));
    let coef = lstsq(&a, &b);
    let r = &a * &coef - &b;
    (coef.iter().copied().collect(), (r.norm_squared() / n as f64).sqrt())
}

fn residuals(t: &[f64], y: &[f64], scale: &[f64], params: &[f64], nr: usize) -> DVector<f64> {
    DVector::from_iterator(
        t.len(),
        (0..t.len()).map(|k| {
            let mut m = params[0];
            for i in 0..nr {
                m += params[1 + i] * (-params[1 + nr + i] * t[k]).exp();
            }
            (m - y[k]) / scale[k]
        }),
    )
}

/// Joint fit of constant, amplitudes and rates, started from `rates0`.
/// Residuals are divided by `scale` (the per-sample noise level).
pub fn refine(t: &[f64], y: &[f64], scale: &[f64], rates0: &[f64]) -> Option<ExpFit> {
    let nr = rates0.len();
    let np = 1 + 2 * nr;
    if t.len() <= np {
        return None;
    }
    let (amps, _) = amplitudes_for_rates(t, y, scale, rates0);
    let mut params: Vec<f64> = amps;
    params.extend_from_slice(rates0);
    let mut r = residuals(t, y, scale, &params, nr);
    let mut cost = r.norm_squared();
    let mut mu: f64 = 1e-3;
    for _ in 0..300 {
        let jac = DMatrix::from_fn(t.len(), np, |k, c| {
            let v = if c == 0 {
                1.0
            } else if c <= nr {
                (-params[nr + c] * t[k]).exp()
            } else {
                let i = c - 1 - nr;
                -t[k] * params[1 + i] * (-params[1 + nr + i] * t[k]).exp()
            };
            v / scale[k]
        });
        let diag: Vec<f64> = (0..np).map(|c| jac.column(c).norm().max(1e-300)).collect();
        let mut improved = false;
        for _ in 0..30 {
            let mut aug = DMatrix::zeros(t.len() + np, np);
            aug.view_mut((0, 0), (t.len(), np)).copy_from(&jac);
            for c in 0..np {
                aug[(t.len() + c, c)] = mu.sqrt() * diag[c];
            }
            let mut rhs = DVector::zeros(t.len() + np);
            rhs.rows_mut(0, t.len()).copy_from(&(-&r));
            let step = lstsq(&aug, &rhs);
            let trial: Vec<f64> = params.iter().zip(step.iter()).map(|(p, s)| p + s).collect();
            if trial[1 + nr..].iter().any(|l| !(*l > 0.0)) {
                mu *= 4.0;
                continue;
            }
            let rt = residuals(t, y, scale, &trial, nr);
            let ct = rt.norm_squared();
            if ct.is_finite() && ct < cost {
                let rel = (cost - ct) / cost.max(1e-300);
                params = trial;
                r = rt;
                cost = ct;
                mu = (mu / 3.0).max(1e-15);
                improved = rel > 1e-14;
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
    }
    let mut order: Vec<usize> = (0..nr).collect();
    order.sort_by(|&a, &b| params[1 + nr + a].total_cmp(&params[1 + nr + b]));
    Some(ExpFit {
        constant: params[0],
        rates: order.iter().map(|&i| params[1 + nr + i]).collect(),
        amplitudes: order.iter().map(|&i| params[1 + i]).collect(),
        rms: (cost / t.len() as f64).sqrt(),
    })
}

fn design(t: &[f64], scale: &[f64], rates: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(t.len(), rates.len() + 1, |k, c| {
        let base = if c == 0 { 1.0 } else { (-rates[c - 1] * t[k]).exp() };
        base / scale[k]
    })
}

/// Projected residuals and Kaufman Jacobian blocks for shared rates.
fn shared_system(t: &[f64], ys: &[Vec<f64>], scales: &[Vec<f64>], rates: &[f64]) -> (f64, DMatrix<f64>, DVector<f64>) {
    let nr = rates.len();
    let parts: Vec<(f64, DMatrix<f64>, DVector<f64>)> = ys
        .par_iter()
        .zip(scales)
        .map(|(y, scale)| {
            let a = design(t, scale, rates);
            let b = DVector::from_iterator(t.len(), (0..t.len()).map(|k| y[k] / scale[k]));
            let q = a.clone().qr().q();
            let c = lstsq(&a, &b);
            let r = &a * &c - &b;
            let mut jac = DMatrix::zeros(t.len(), nr);
            for i in 0..nr {
                let d = DVector::from_iterator(
                    t.len(),
                    (0..t.len()).map(|k| -t[k] * (-rates[i] * t[k]).exp() * c[i + 1] / scale[k]),
                );
                let proj = &q * (q.transpose() * &d);
                jac.set_column(i, &(d - proj));
            }
            (r.norm_squared(), jac.transpose() * &jac, jac.transpose() * &r)
        })
        .collect();
    // sequential reduction keeps the result independent of thread count
    parts.into_iter().fold((0.0, DMatrix::zeros(nr, nr), DVector::zeros(nr)), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2))
}

/// Rates shared by several series, each with its own constant and
/// amplitudes (variable projection). Returns the rates and the pooled rms
/// in noise units.
pub fn refine_shared(t: &[f64], ys: &[Vec<f64>], scales: &[Vec<f64>], rates0: &[f64]) -> (Vec<f64>, f64) {
    let nr = rates0.len();
    let count = (ys.len() * t.len()).max(1) as f64;
    let mut rates = rates0.to_vec();
    if nr == 0 || ys.is_empty() {
        return (rates, 0.0);
    }
    let (mut cost, mut jtj, mut jtr) = shared_system(t, ys, scales, &rates);
    let mut mu: f64 = 1e-3;
    for _ in 0..50 {
        let mut improved = false;
        for _ in 0..20 {
            let mut lhs = jtj.clone();
            for i in 0..nr {
                lhs[(i, i)] *= 1.0 + mu;
            }
            let Some(step) = lhs.cholesky().map(|c| c.solve(&(-&jtr))) else {
                mu *= 4.0;
                continue;
            };
            let trial: Vec<f64> = rates.iter().zip(step.iter()).map(|(r, s)| r + s).collect();
            if trial.iter().any(|l| !(*l > 0.0)) {
                mu *= 4.0;
                continue;
            }
            let (ct, jt, rt) = shared_system(t, ys, scales, &trial);
            if ct.is_finite() && ct < cost {
                let rel = (cost - ct) / cost.max(1e-300);
                rates = trial;
                cost = ct;
                jtj = jt;
                jtr = rt;
                mu = (mu / 3.0).max(1e-12);
                improved = rel > 1e-12;
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
    }
    (rates, (cost / count).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_parameter_exact_fit() {
        let t: Vec<f64> = (1..40).map(|k| k as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| 0.3 + 0.7 * (-2.0 * t).exp()).collect();
        let scale: Vec<f64> = y.iter().map(|v| v * 1e-15).collect();
        let f = refine(&t, &y, &scale, &[1.7]).unwrap();
        assert!((f.rates[0] - 2.0).abs() < 1e-8);
        assert!((f.amplitudes[0] - 0.7).abs() < 1e-8);
        assert!((f.constant - 0.3).abs() < 1e-8);
    }

    #[test]
    fn log_linear_recovers_single_rate() {
        let t = [1.0f64, 2.0, 3.0];
        let y: Vec<f64> = t.iter().map(|t| 2.0 * (-0.5 * *t).exp()).collect();
        let (r, a) = log_linear(&t, &y).unwrap();
        assert!((r - 0.5).abs() < 1e-12 && (a - 2.0).abs() < 1e-12);
    }
}
