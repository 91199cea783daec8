use num_complex::Complex64;

use super::CMatrix;
use crate::error::{Error, Result};

/// In-place LU with partial pivoting. Returns the row permutation and its
/// sign, or `None` if a pivot is exactly zero.
fn lu_in_place(a: &mut CMatrix) -> Option<(Vec<usize>, f64)> {
    let n = a.rows();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    for k in 0..n {
        let (piv, pmax) = (k..n)
            .map(|i| (i, a[(i, k)].norm()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pmax == 0.0 {
            return None;
        }
        if piv != k {
            for j in 0..n {
                let tmp = a[(k, j)];
                a[(k, j)] = a[(piv, j)];
                a[(piv, j)] = tmp;
            }
            perm.swap(k, piv);
            sign = -sign;
        }
        let inv = 1.0 / a[(k, k)];
        for i in (k + 1)..n {
            let f = a[(i, k)] * inv;
            a[(i, k)] = f;
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in (k + 1)..n {
                let u = a[(k, j)];
                a[(i, j)] -= f * u;
            }
        }
    }
    Some((perm, sign))
}

fn lu_solve_in_place(lu: &CMatrix, perm: &[usize], b: &CMatrix) -> CMatrix {
    let n = lu.rows();
    let m = b.cols();
    let mut x = CMatrix::from_fn(n, m, |i, j| b[(perm[i], j)]);
    for c in 0..m {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= lu[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= lu[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / lu[(i, i)];
        }
    }
    x
}

/// Solves `A X = B` by Gaussian elimination with partial pivoting.
pub fn dense_solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if !a.is_square() || a.rows() != b.rows() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            got: b.rows(),
        });
    }
    let mut lu = a.clone();
    let (perm, _) = lu_in_place(&mut lu).ok_or(Error::SingularShift {
        block: 1,
        condition: f64::INFINITY,
    })?;
    Ok(lu_solve_in_place(&lu, &perm, b))
}

/// Determinant through LU; zero for singular input.
pub fn determinant(a: &CMatrix) -> Complex64 {
    assert!(a.is_square());
    let mut lu = a.clone();
    match lu_in_place(&mut lu) {
        None => Complex64::new(0.0, 0.0),
        Some((_, sign)) => (0..a.rows()).fold(Complex64::new(sign, 0.0), |acc, i| acc * lu[(i, i)]),
    }
}

/// Inverse of a square matrix together with its 1-norm condition number.
/// The condition number is infinite when a pivot vanishes; the returned
/// inverse is then meaningless and must not be used.
pub fn inverse_with_condition(a: &CMatrix) -> (CMatrix, f64) {
    let n = a.rows();
    let mut lu = a.clone();
    match lu_in_place(&mut lu) {
        None => (CMatrix::zeros(n, n), f64::INFINITY),
        Some((perm, _)) => {
            let inv = lu_solve_in_place(&lu, &perm, &CMatrix::identity(n));
            let cond = a.norm_one() * inv.norm_one();
            (inv, if cond.is_finite() { cond } else { f64::INFINITY })
        }
    }
}
