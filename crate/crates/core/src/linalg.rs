//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
pub fn sym_eigen(a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Square root of a symmetric positive semidefinite matrix; negative
/// eigenvalues (noise) are clipped to zero.
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let (vals, vecs) = sym_eigen(sym);
    let d = DVector::from_iterator(vals.len(), vals.iter().map(|v| v.max(0.0).sqrt()));
    &vecs * DMatrix::from_diagonal(&d) * vecs.transpose()
}

/// Thin singular value decomposition a = u diag(s) vᵀ by one-sided Jacobi
/// rotations, singular values descending. Used instead of the iterative
/// bidiagonal SVD of nalgebra 0.35, which can return wrong singular
/// vectors for tall matrices with close singular values.
pub fn svd(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    if a.nrows() < a.ncols() {
        let (u, s, v) = svd(&a.transpose());
        return (v, s, u);
    }
    let n = a.ncols();
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut w, &mut v] {
                    for r in 0..m.nrows() {
                        let (x, y) = (m[(r, p)], m[(r, q)]);
                        m[(r, p)] = c * x - s * y;
                        m[(r, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|c| w.column(c).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let mut u = DMatrix::zeros(a.nrows(), n);
    let mut vs = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        if norms[i] > 0.0 {
            u.set_column(c, &(w.column(i) / norms[i]));
        }
        vs.set_column(c, &v.column(i));
    }
    (u, order.iter().map(|&i| norms[i]).collect(), vs)
}

/// Orthogonal `r` minimising `|a r - b|_F`.
pub fn procrustes(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (u, _, v) = svd(&(a.transpose() * b));
    u * v.transpose()
}

/// Haar-distributed random orthogonal matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(m: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..m {
        if r[(c, c)] < 0.0 {
            for i in 0..m {
                q[(i, c)] = -q[(i, c)];
            }
        }
    }
    q
}

/// Least squares `min |a x - b|` via SVD; tiny singular values are cut
/// relative to the largest.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (u, s, v) = svd(a);
    let smax = s.first().copied().unwrap_or(0.0);
    let eps = (smax * 1e-15).max(f64::MIN_POSITIVE);
    let utb = u.transpose() * b;
    let mut x = DVector::zeros(a.ncols());
    for (i, si) in s.iter().enumerate() {
        if *si > eps {
            x += v.column(i) * (utb[i] / si);
        }
    }
    x
}

/// Ordinary linear regression of `y` on the columns of `x` (each row one
/// observation) returning coefficients and the root-mean-square residual.
pub fn regress(x: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, f64) {
    let beta = lstsq(x, y);
    let r = x * &beta - y;
    let rms = (r.norm_squared() / y.len().max(1) as f64).sqrt();
    (beta, rms)
}

/// Maximum absolute entry.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn svd_reconstructs_close_singular_values() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let q = random_orthogonal(40, &mut rng);
        let r = random_orthogonal(3, &mut rng);
        let s = [415.0116, 415.0115, 2e-12];
        let a = q.columns(0, 3) * DMatrix::from_diagonal(&DVector::from_row_slice(&s)) * r.transpose();
        let (u, sv, v) = svd(&a);
        let back = &u * DMatrix::from_diagonal(&DVector::from_vec(sv.clone())) * v.transpose();
        assert!(max_abs(&(back - &a)) < 1e-12);
        assert!((sv[0] - s[0]).abs() < 1e-10 && (sv[1] - s[1]).abs() < 1e-10);
        let g = u.columns(0, 2).transpose() * u.columns(0, 2);
        assert!(max_abs(&(g - DMatrix::<f64>::identity(2, 2))) < 1e-14);
    }

    #[test]
    fn lstsq_solves_square_system() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let x = lstsq(&a, &DVector::from_row_slice(&[3.0, 5.0]));
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14);
    }
}
