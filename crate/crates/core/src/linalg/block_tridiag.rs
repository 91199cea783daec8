//! Block LU factorization of shifted block tridiagonal Hermitian matrices.
//!
//! With diagonal blocks `B_k` and superdiagonal blocks `A_k`, the pivots are
//!
//! ```text
//! D_1 = B_1 - λI,   D_k = B_k - λI - A_{k-1}^* D_{k-1}^{-1} A_{k-1}
//! ```
//!
//! No pivoting happens across blocks. For a real shift the same recurrence
//! is an `LDL*` factorization, so by Sylvester's law of inertia the number of
//! negative pivot eigenvalues equals the number of eigenvalues below the shift.

use num_complex::Complex64;

use super::{hermitian_eig, inverse_with_condition, CMatrix};
use crate::error::{Error, Result};
use crate::operator::Truncation;

/// Pivot blocks with a 1-norm condition number above this are rejected.
pub const PIVOT_CONDITION_LIMIT: f64 = 1e12;

/// Factorization of `T - λI` for a block tridiagonal `T`.
#[derive(Clone, Debug)]
pub struct BlockTridiagLU {
    shift: Complex64,
    dim: usize,
    pivot_blocks: Vec<CMatrix>,
    pivot_inverses: Vec<CMatrix>,
    /// `A_{k-1}^* D_{k-1}^{-1}` for `k = 2..=N`.
    transform_blocks: Vec<CMatrix>,
    upper: Vec<CMatrix>,
    max_condition: f64,
    worst_block: usize,
}

impl BlockTridiagLU {
    /// Factors and rejects any pivot with condition number above
    /// [`PIVOT_CONDITION_LIMIT`].
    pub fn factor(diag: &[CMatrix], offdiag: &[CMatrix], shift: Complex64) -> Result<Self> {
        let lu = Self::factor_unchecked(diag, offdiag, shift)?;
        if lu.max_condition > PIVOT_CONDITION_LIMIT {
            return Err(Error::SingularShift {
                block: lu.worst_block,
                condition: lu.max_condition,
            });
        }
        Ok(lu)
    }

    /// Factors without the conditioning guard. Only an exactly singular pivot
    /// is an error. Used for inverse iteration, where near-singular pivots
    /// are expected.
    pub fn factor_unchecked(diag: &[CMatrix], offdiag: &[CMatrix], shift: Complex64) -> Result<Self> {
        let n = diag.len();
        if n == 0 {
            return Err(Error::InvalidInput("empty block tridiagonal matrix".into()));
        }
        if offdiag.len() + 1 != n {
            return Err(Error::DimensionMismatch {
                expected: n - 1,
                got: offdiag.len(),
            });
        }
        let dim = diag[0].rows();
        let mut pivot_blocks = Vec::with_capacity(n);
        let mut pivot_inverses: Vec<CMatrix> = Vec::with_capacity(n);
        let mut transform_blocks = Vec::with_capacity(n.saturating_sub(1));
        let mut max_condition: f64 = 0.0;
        let mut worst_block = 1;

        for k in 0..n {
            let mut d = diag[k].shifted(-shift);
            if k > 0 {
                let l = offdiag[k - 1].adjoint().matmul(&pivot_inverses[k - 1]);
                d = &d - &l.matmul(&offdiag[k - 1]);
                transform_blocks.push(l);
            }
            let (inv, cond) = inverse_with_condition(&d);
            if cond > max_condition {
                max_condition = cond;
                worst_block = k + 1;
            }
            if cond.is_infinite() {
                return Err(Error::SingularShift {
                    block: k + 1,
                    condition: cond,
                });
            }
            pivot_blocks.push(d);
            pivot_inverses.push(inv);
        }
        Ok(Self {
            shift,
            dim,
            pivot_blocks,
            pivot_inverses,
            transform_blocks,
            upper: offdiag.to_vec(),
            max_condition,
            worst_block,
        })
    }

    pub fn shift(&self) -> Complex64 {
        self.shift
    }

    pub fn nblocks(&self) -> usize {
        self.pivot_blocks.len()
    }

    pub fn pivot_blocks(&self) -> &[CMatrix] {
        &self.pivot_blocks
    }

    pub fn transform_blocks(&self) -> &[CMatrix] {
        &self.transform_blocks
    }

    /// Largest pivot condition number and its 1-based block index.
    pub fn max_condition(&self) -> (f64, usize) {
        (self.max_condition, self.worst_block)
    }

    /// Solves `(T - λI) X = rhs` for a dense right-hand side with `N·d` rows.
    pub fn solve(&self, rhs: &CMatrix) -> Result<CMatrix> {
        let n = self.nblocks();
        let d = self.dim;
        if rhs.rows() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: rhs.rows(),
            });
        }
        let m = rhs.cols();
        let block = |x: &CMatrix, k: usize| x.submatrix(k * d, 0, d, m);

        let mut y: Vec<CMatrix> = Vec::with_capacity(n);
        for k in 0..n {
            let mut yk = block(rhs, k);
            if k > 0 {
                yk = &yk - &self.transform_blocks[k - 1].matmul(&y[k - 1]);
            }
            y.push(yk);
        }
        let mut x = CMatrix::zeros(n * d, m);
        let mut next: Option<CMatrix> = None;
        for k in (0..n).rev() {
            let mut r = y[k].clone();
            if let Some(xn) = &next {
                r = &r - &self.upper[k].matmul(xn);
            }
            let xk = self.pivot_inverses[k].matmul(&r);
            x.set_submatrix(k * d, 0, &xk);
            next = Some(xk);
        }
        Ok(x)
    }
}

/// Solves `(trunc - λI) X = rhs` with the block LU factorization.
pub fn block_tridiag_solve(trunc: &Truncation, lambda: Complex64, rhs: &CMatrix) -> Result<CMatrix> {
    BlockTridiagLU::factor(trunc.diag_blocks(), trunc.offdiag_blocks(), lambda)?.solve(rhs)
}

/// Counts of pivot eigenvalues by sign for a real shift.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Inertia {
    pub negative: usize,
    pub positive: usize,
}

impl Inertia {
    /// Number of eigenvalues of `T` strictly below `sigma` (pivots that are
    /// exactly zero count as negative).
    pub fn below(diag: &[CMatrix], offdiag: &[CMatrix], sigma: f64) -> Result<Self> {
        let n = diag.len();
        let dim = diag.first().map_or(0, CMatrix::rows);
        let mut negative = 0;
        let mut positive = 0;

        // Replacement for a vanishing pivot eigenvalue: keeps the next pivot
        // finite while fixing its sign.
        let tiny = f64::MIN_POSITIVE.sqrt();

        if dim == 1 {
            let mut prev_inv = 0.0;
            for k in 0..n {
                let mut d = diag[k][(0, 0)].re - sigma;
                if k > 0 {
                    d -= offdiag[k - 1][(0, 0)].norm_sqr() * prev_inv;
                }
                if d.abs() < tiny {
                    d = -tiny;
                }
                if d < 0.0 {
                    negative += 1;
                } else {
                    positive += 1;
                }
                prev_inv = 1.0 / d;
            }
            return Ok(Self { negative, positive });
        }

        let mut prev_inv: Option<CMatrix> = None;
        for k in 0..n {
            let mut d = diag[k].shifted(Complex64::new(-sigma, 0.0));
            if let Some(inv) = &prev_inv {
                let a = &offdiag[k - 1];
                d = &d - &a.adjoint().matmul(inv).matmul(a);
            }
            let eig = hermitian_eig(&d.hermitian_part())?;
            let mut inv_vals = Vec::with_capacity(dim);
            for &w in &eig.values {
                let w = if w.abs() < tiny { -tiny } else { w };
                if w < 0.0 {
                    negative += 1;
                } else {
                    positive += 1;
                }
                inv_vals.push(1.0 / w);
            }
            prev_inv = Some(eig.reconstruct(&inv_vals));
        }
        Ok(Self { negative, positive })
    }
}

/// Gershgorin enclosure `[lo, hi]` of the spectrum of a block tridiagonal
/// Hermitian matrix.
pub(crate) fn gershgorin(diag: &[CMatrix], offdiag: &[CMatrix]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (k, b) in diag.iter().enumerate() {
        let d = b.rows();
        for i in 0..d {
            let mut radius = 0.0;
            for j in 0..d {
                if j != i {
                    radius += b[(i, j)].norm();
                }
            }
            if k > 0 {
                // row i of A_{k-1}^*
                let a = &offdiag[k - 1];
                radius += (0..d).map(|j| a[(j, i)].norm()).sum::<f64>();
            }
            if k < offdiag.len() {
                radius += offdiag[k].row(i).iter().map(|z| z.norm()).sum::<f64>();
            }
            let c = b[(i, i)].re;
            lo = lo.min(c - radius);
            hi = hi.max(c + radius);
        }
    }
    (lo, hi)
}

/// Eigenvalue number `index` (0-based, ascending) by bisection on inertia
/// counts, resolved to a few ulps of the Gershgorin scale.
pub(crate) fn eigenvalue_by_index(diag: &[CMatrix], offdiag: &[CMatrix], index: usize) -> Result<f64> {
    let total = diag.len() * diag.first().map_or(0, CMatrix::rows);
    if index >= total {
        return Err(Error::InvalidInput(format!(
            "eigenvalue index {index} out of range (dimension {total})"
        )));
    }
    let (g_lo, g_hi) = gershgorin(diag, offdiag);
    let pad = 1e-12 * (g_lo.abs().max(g_hi.abs()) + 1.0);
    bisect_count(diag, offdiag, index, g_lo - pad, g_hi + pad)
}

/// Bisection for the point where the count below crosses `index + 1`,
/// starting from a bracket with `count(lo) <= index < count(hi)`.
pub(crate) fn bisect_count(
    diag: &[CMatrix],
    offdiag: &[CMatrix],
    index: usize,
    mut lo: f64,
    mut hi: f64,
) -> Result<f64> {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
            break;
        }
        if Inertia::below(diag, offdiag, mid)?.negative > index {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense_solve;

    fn laplacian_blocks(n: usize) -> (Vec<CMatrix>, Vec<CMatrix>) {
        (
            vec![CMatrix::scalar(1, 0.0); n],
            vec![CMatrix::scalar(1, 1.0); n - 1],
        )
    }

    #[test]
    fn single_block_is_dense_solve() {
        let b = CMatrix::from_real_rows(&[[2.0, 1.0], [1.0, 3.0]]);
        let lambda = Complex64::new(0.5, -0.25);
        let rhs = CMatrix::from_real_rows(&[[1.0], [2.0]]);
        let lu = BlockTridiagLU::factor(std::slice::from_ref(&b), &[], lambda).unwrap();
        let x = lu.solve(&rhs).unwrap();
        let y = dense_solve(&b.shifted(-lambda), &rhs).unwrap();
        assert!((&x - &y).max_abs() < 1e-14);
    }

    #[test]
    fn identity_with_tiny_coupling() {
        let n = 5;
        let diag = vec![CMatrix::identity(2); n];
        let off = vec![CMatrix::scalar(2, 1e-14); n - 1];
        let mut rhs = CMatrix::zeros(2 * n, 1);
        rhs[(0, 0)] = Complex64::new(1.0, 0.0);
        let x = BlockTridiagLU::factor(&diag, &off, Complex64::new(0.0, 0.0))
            .unwrap()
            .solve(&rhs)
            .unwrap();
        assert!((&x - &rhs).max_abs() < 1e-13);
    }

    #[test]
    fn recurrence_reproduced_by_pivots() {
        let (diag, off) = laplacian_blocks(6);
        let lambda = Complex64::new(-3.0, 0.0);
        let lu = BlockTridiagLU::factor(&diag, &off, lambda).unwrap();
        let mut d = 3.0;
        assert_eq!(lu.pivot_blocks()[0][(0, 0)].re, d);
        for k in 1..6 {
            d = 3.0 - 1.0 / d;
            assert!((lu.pivot_blocks()[k][(0, 0)].re - d).abs() < 1e-15);
        }
        assert_eq!(lu.transform_blocks().len(), 5);
    }

    #[test]
    fn singular_shift_reports_block() {
        // [[0,1],[1,0]] has eigenvalue 1; at λ = 1 the second pivot vanishes.
        let (diag, off) = laplacian_blocks(2);
        let err = BlockTridiagLU::factor(&diag, &off, Complex64::new(1.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::SingularShift { block: 2, .. }), "{err:?}");
    }

    #[test]
    fn inertia_matches_known_spectrum() {
        // eigenvalues of the free chain: 2 cos(kπ/(n+1))
        let n = 10;
        let (diag, off) = laplacian_blocks(n);
        let eigs: Vec<f64> = (1..=n)
            .map(|k| 2.0 * (k as f64 * std::f64::consts::PI / (n as f64 + 1.0)).cos())
            .collect();
        for sigma in [-2.5, -1.0, 0.1, 0.7, 1.9, 2.5] {
            let expected = eigs.iter().filter(|&&e| e < sigma).count();
            assert_eq!(Inertia::below(&diag, &off, sigma).unwrap().negative, expected);
        }
        let mut sorted = eigs.clone();
        sorted.sort_by(f64::total_cmp);
        for (i, e) in sorted.iter().enumerate() {
            let got = eigenvalue_by_index(&diag, &off, i).unwrap();
            assert!((got - e).abs() < 1e-13, "{i}: {got} vs {e}");
        }
    }

    #[test]
    fn inertia_two_dimensional_blocks() {
        let diag = vec![
            CMatrix::from_real_diag(&[-1.0, 2.0]),
            CMatrix::from_real_diag(&[0.5, -3.0]),
        ];
        let off = vec![CMatrix::zeros(2, 2)];
        assert_eq!(Inertia::below(&diag, &off, 0.0).unwrap().negative, 2);
        assert_eq!(Inertia::below(&diag, &off, 1.0).unwrap().negative, 3);
        assert_eq!(Inertia::below(&diag, &off, -5.0).unwrap().positive, 4);
    }
}
