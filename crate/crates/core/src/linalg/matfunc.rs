use super::{hermitian_eig, CMatrix};
use crate::error::{Error, Result};

/// Relative tolerance below zero that is still treated as a zero eigenvalue.
const PSD_CLAMP: f64 = 1e-12;

/// `f(H)` for a Hermitian positive semidefinite `H`, via `V diag(f(w)) V*`.
///
/// Eigenvalues in `[-1e-12 ||H||, 0)` are clamped to zero before `f` is
/// applied; anything more negative is rejected.
pub fn psd_matfunc(h: &CMatrix, f: impl Fn(f64) -> f64) -> Result<CMatrix> {
    let eig = hermitian_eig(h)?;
    let scale = eig.values.iter().fold(0.0_f64, |m, w| m.max(w.abs()));
    let mut clamped = Vec::with_capacity(eig.dim());
    for &w in &eig.values {
        if w >= 0.0 {
            clamped.push(w);
        } else if w >= -PSD_CLAMP * scale {
            clamped.push(0.0);
        } else {
            return Err(Error::InvalidInput(format!(
                "matrix is not positive semidefinite (eigenvalue {w:.3e})"
            )));
        }
    }
    let mut fw = Vec::with_capacity(clamped.len());
    for &w in &clamped {
        let v = f(w);
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!(
                "matrix function is undefined at eigenvalue {w:.6e}"
            )));
        }
        fw.push(v);
    }
    Ok(eig.reconstruct(&fw))
}

/// `|A| = (A* A)^{1/2}`.
pub fn abs_matrix(a: &CMatrix) -> Result<CMatrix> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            got: a.cols(),
        });
    }
    psd_matfunc(&a.adjoint().matmul(a), f64::sqrt)
}

/// Singular values in ascending order.
pub fn singular_values(a: &CMatrix) -> Result<Vec<f64>> {
    let eig = hermitian_eig(&a.adjoint().matmul(a))?;
    Ok(eig.values.iter().map(|&w| w.max(0.0).sqrt()).collect())
}

/// Largest singular value.
pub fn spectral_norm(a: &CMatrix) -> Result<f64> {
    if a.rows() == 1 && a.cols() == 1 {
        return Ok(a[(0, 0)].norm());
    }
    Ok(singular_values(a)?.last().copied().unwrap_or(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::phi_delta;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        CMatrix::from_fn(n, n, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    #[test]
    fn abs_of_antidiagonal_is_scalar() {
        let r = 2.5;
        let a = CMatrix::from_real_rows(&[[0.0, r], [r, 0.0]]);
        let abs = abs_matrix(&a).unwrap();
        assert!((&abs - &CMatrix::scalar(2, r)).max_abs() < 1e-14);
    }

    #[test]
    fn abs_of_diagonal() {
        let abs = abs_matrix(&CMatrix::from_real_diag(&[-2.0, 3.0])).unwrap();
        assert!((&abs - &CMatrix::from_real_diag(&[2.0, 3.0])).max_abs() < 1e-14);
    }

    #[test]
    fn abs_squared_is_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..6 {
            let a = random(n, &mut rng);
            let abs = abs_matrix(&a).unwrap();
            let gram = a.adjoint().matmul(&a);
            let err = (&abs.matmul(&abs) - &gram).max_abs();
            let norm = spectral_norm(&a).unwrap();
            assert!(err <= 1e-10 * norm * norm, "n={n}: {err}");
        }
    }

    #[test]
    fn spectral_norm_examples() {
        let a = CMatrix::from_real_rows(&[[0.0, 2.0], [2.0, 0.0]]);
        assert!((spectral_norm(&a).unwrap() - 2.0).abs() < 1e-14);
        assert!((spectral_norm(&CMatrix::identity(3)).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn spectral_norm_dominates_random_quotients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random(4, &mut rng);
        let norm = spectral_norm(&a).unwrap();
        let mut best: f64 = 0.0;
        for _ in 0..100 {
            let x: Vec<Complex64> = (0..4)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let q = super::super::vec_norm(&a.matvec(&x)) / super::super::vec_norm(&x);
            assert!(q <= norm * (1.0 + 1e-12));
            best = best.max(q);
        }
        assert!(best > 0.5 * norm);
    }

    #[test]
    fn matfunc_identity_and_phi() {
        let h = CMatrix::from_real_rows(&[[2.0, 1.0], [1.0, 3.0]]);
        let same = psd_matfunc(&h, |x| x).unwrap();
        assert!((&same - &h).max_abs() < 1e-12);

        let r = 4.0;
        let phi = psd_matfunc(&CMatrix::scalar(2, r), |x| phi_delta(x, 1.0)).unwrap();
        assert!((&phi - &CMatrix::scalar(2, 0.5)).max_abs() < 1e-15);

        let d = psd_matfunc(&CMatrix::from_real_diag(&[0.25, 4.0]), |x| phi_delta(x, 1.0)).unwrap();
        assert!((&d - &CMatrix::from_real_diag(&[1.0, 0.5])).max_abs() < 1e-15);
    }

    #[test]
    fn matfunc_rejects_undefined_values() {
        let h = CMatrix::from_real_diag(&[0.0, 1.0]);
        assert!(psd_matfunc(&h, |x| 1.0 / x).is_err());
        let neg = CMatrix::from_real_diag(&[-1.0, 1.0]);
        assert!(psd_matfunc(&neg, f64::sqrt).is_err());
    }

    #[test]
    fn clamps_roundoff_negatives() {
        let h = CMatrix::from_real_diag(&[-1e-14, 1.0]);
        let s = psd_matfunc(&h, f64::sqrt).unwrap();
        assert_eq!(s[(0, 0)].re, 0.0);
    }

    #[test]
    fn polar_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = random(3, &mut rng);
        let h = random(3, &mut rng);
        let u = hermitian_eig(&(&h + &h.adjoint())).unwrap().vectors;
        let lhs = abs_matrix(&u.matmul(&a)).unwrap();
        let rhs = abs_matrix(&a).unwrap();
        assert!((&lhs - &rhs).max_abs() < 1e-9);
    }
}
