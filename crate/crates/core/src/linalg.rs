//! Small dense linear-algebra helpers shared by the validators.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Above this size extreme eigenvalues come from Lanczos instead of a full
/// dense decomposition.
const DENSE_LIMIT: usize = 320;

pub fn symmetric_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn symmetric_extremes(a: &DMatrix<f64>) -> (f64, f64) {
    let n = a.nrows();
    if n == 0 {
        return (0.0, 0.0);
    }
    if n <= DENSE_LIMIT {
        let eig = SymmetricEigen::new(a.clone());
        let min = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let max = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        (min, max)
    } else {
        lanczos_extremes(n, |v| a * v)
    }
}

/// Operator 2-norm.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return 0.0;
    }
    if r.max(c) <= DENSE_LIMIT {
        a.singular_values().max()
    } else {
        let (_, max) = lanczos_extremes(c, |v| a.tr_mul(&(a * v)));
        max.max(0.0).sqrt()
    }
}

/// Extreme eigenvalues of the symmetric operator `matvec` by Lanczos with
/// full reorthogonalization. Ritz values at the ends of the spectrum converge
/// first, so this stays accurate to working precision well before `n` steps.
pub fn lanczos_extremes(n: usize, matvec: impl Fn(&DVector<f64>) -> DVector<f64>) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x01a2_c205);
    let mut q = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
    q /= q.norm();

    let max_steps = n.min(400);
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(max_steps);
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut last = (f64::NAN, f64::NAN);
    let mut stable_checks = 0;

    for k in 0..max_steps {
        let mut w = matvec(&q);
        let a_k = q.dot(&w);
        alpha.push(a_k);
        basis.push(q.clone());
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&w);
                w.axpy(-c, b, 1.0);
            }
        }
        let b_k = w.norm();
        let scale = alpha.iter().fold(1.0_f64, |m, a| m.max(a.abs()));

        let ritz = tridiagonal_extremes(&alpha, &beta);
        let tol = 1e-13 * scale;
        if (ritz.0 - last.0).abs() <= tol && (ritz.1 - last.1).abs() <= tol {
            stable_checks += 1;
        } else {
            stable_checks = 0;
        }
        last = ritz;
        if b_k <= 1e-12 * scale || stable_checks >= 8 || k + 1 == max_steps {
            break;
        }
        beta.push(b_k);
        q = w / b_k;
    }
    last
}

fn tridiagonal_extremes(alpha: &[f64], beta: &[f64]) -> (f64, f64) {
    let m = alpha.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Positive definiteness via Cholesky; the matrix must also be symmetric to
/// within a relative 1e-12.
pub fn is_positive_definite(a: &DMatrix<f64>) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.amax().max(1.0);
    if (a - a.transpose()).amax() > 1e-12 * scale {
        return false;
    }
    Cholesky::new(a.clone()).is_some()
}

pub(crate) fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lanczos_matches_dense_on_random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 60;
        let b = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        let a = symmetric_part(&(&b + b.transpose()));
        let eig = SymmetricEigen::new(a.clone());
        let min = eig.eigenvalues.min();
        let max = eig.eigenvalues.max();
        let (lmin, lmax) = lanczos_extremes(n, |v| &a * v);
        assert!((lmin - min).abs() < 1e-9, "{lmin} vs {min}");
        assert!((lmax - max).abs() < 1e-9, "{lmax} vs {max}");
    }

    #[test]
    fn lanczos_handles_scaled_identity() {
        let a = DMatrix::<f64>::identity(500, 500) * 2.0;
        let (lmin, lmax) = symmetric_extremes(&a);
        assert!((lmin - 2.0).abs() < 1e-12);
        assert!((lmax - 2.0).abs() < 1e-12);
    }

    #[test]
    fn positive_definite_checks() {
        assert!(is_positive_definite(&DMatrix::identity(3, 3)));
        assert!(!is_positive_definite(&(-DMatrix::<f64>::identity(3, 3))));
        let skew = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(!is_positive_definite(&skew));
    }
}
