use num_complex::Complex64;

use super::CMatrix;
use crate::error::{Error, Result};

const HERMITIAN_TOL: f64 = 1e-10;
const OFFDIAG_TOL: f64 = 1e-14;
const MAX_SWEEPS: usize = 100;

/// Eigendecomposition `H = V diag(values) V*` of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct EigDecomposition {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Unitary matrix whose columns are the eigenvectors.
    pub vectors: CMatrix,
}

impl EigDecomposition {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Rebuilds `V diag(f(values)) V*`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let fv: Vec<f64> = self.values.iter().map(|&w| f(w)).collect();
        self.reconstruct(&fv)
    }

    /// Rebuilds `V diag(fv) V*` for replacement eigenvalues `fv`.
    pub fn reconstruct(&self, fv: &[f64]) -> CMatrix {
        assert_eq!(fv.len(), self.dim());
        let n = self.dim();
        let v = &self.vectors;
        let mut out = CMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for (k, &w) in fv.iter().enumerate() {
                    acc += v[(i, k)] * v[(j, k)].conj() * w;
                }
                out[(i, j)] = acc;
                out[(j, i)] = acc.conj();
            }
            out[(i, i)] = Complex64::new(out[(i, i)].re, 0.0);
        }
        out
    }
}

/// Full eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Sweeps visit the pairs `(p, q)`, `p < q`, in row-cyclic order, so the
/// result is bitwise reproducible. Iteration stops once the off-diagonal
/// Frobenius mass drops below `1e-14 * ||H||_F`.
pub fn hermitian_eig(h: &CMatrix) -> Result<EigDecomposition> {
    h.check_hermitian(HERMITIAN_TOL)?;
    let n = h.rows();
    let mut a = h.hermitian_part();
    let mut v = CMatrix::identity(n);
    let total = a.frobenius_norm();

    if n > 1 && total > 0.0 {
        let threshold = OFFDIAG_TOL * total;
        let mut converged = false;
        let mut off = offdiag_norm(&a);
        for _ in 0..MAX_SWEEPS {
            if off <= threshold {
                converged = true;
                break;
            }
            for p in 0..n - 1 {
                for q in (p + 1)..n {
                    rotate(&mut a, &mut v, p, q);
                }
            }
            off = offdiag_norm(&a);
        }
        if !converged && off > threshold {
            return Err(Error::NonConvergence {
                method: "cyclic Jacobi",
                iterations: MAX_SWEEPS,
                residual: off / total,
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = CMatrix::from_fn(n, n, |i, k| v[(i, order[k])]);
    Ok(EigDecomposition { values, vectors })
}

fn offdiag_norm(a: &CMatrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)].norm_sqr();
            }
        }
    }
    s.sqrt()
}

/// Annihilates `a[p][q]` with a unitary plane rotation and accumulates it in `v`.
fn rotate(a: &mut CMatrix, v: &mut CMatrix, p: usize, q: usize) {
    let h = a[(p, q)];
    let habs = h.norm();
    if habs == 0.0 {
        return;
    }
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    // Skip rotations that cannot change the diagonal in floating point.
    if habs < f64::EPSILON * 1e-3 * (app.abs() + aqq.abs()) {
        a[(p, q)] = Complex64::new(0.0, 0.0);
        a[(q, p)] = Complex64::new(0.0, 0.0);
        return;
    }
    let phase = h / habs;
    let theta = (aqq - app) / (2.0 * habs);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let t = if theta == 0.0 { 1.0 } else { t };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    // Rotation U: U_pp = c, U_pq = s, U_qp = -s conj(phase), U_qq = c conj(phase).
    let sp = phase.conj() * s;
    let cp = phase.conj() * c;
    let n = a.rows();

    // A <- A U
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = akp * c - akq * sp;
        a[(k, q)] = akp * s + akq * cp;
    }
    // A <- U* A
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = apk * c - aqk * sp.conj();
        a[(q, k)] = apk * s + aqk * cp.conj();
    }
    a[(p, q)] = Complex64::new(0.0, 0.0);
    a[(q, p)] = Complex64::new(0.0, 0.0);
    a[(p, p)] = Complex64::new(a[(p, p)].re, 0.0);
    a[(q, q)] = Complex64::new(a[(q, q)].re, 0.0);

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * c - vkq * sp;
        v[(k, q)] = vkp * s + vkq * cp;
    }
}
