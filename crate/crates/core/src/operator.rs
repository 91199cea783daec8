//! Block Jacobi operator families and their finite sections.
//!
//! A family supplies the blocks `A_n` (superdiagonal) and `B_n` (diagonal,
//! Hermitian) for `n = 1, 2, ...`. The operator acts on sequences of
//! `d`-vectors through the difference expression
//!
//! ```text
//! (Υu)_1 = B_1 u_1 + A_1 u_2
//! (Υu)_k = A_{k-1}^* u_{k-1} + B_k u_k + A_k u_{k+1},   k >= 2
//! ```
//!
//! All public indices are 1-based.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{
    block_tridiag::{eigenvalue_by_index, gershgorin},
    singular_values, spectral_norm, BlockTridiagLU, CMatrix, Inertia,
};

/// A square `d × d` complex block.
pub type BlockMatrix = CMatrix;

/// Tolerance of the Hermitian check on diagonal blocks, relative to the
/// largest entry.
pub const BLOCK_HERMITIAN_TOL: f64 = 1e-12;

/// Relative tolerance of the pairwise commutation check.
pub const COMMUTATION_TOL: f64 = 1e-10;

/// Relative threshold of the trivial-kernel diagnostic for `A_n`.
pub const KERNEL_TOL: f64 = 1e-12;

type BlockRule = Arc<dyn Fn(usize) -> Result<BlockMatrix> + Send + Sync>;

/// Generator of the entry sequences `{A_n}`, `{B_n}`.
#[derive(Clone)]
pub struct OperatorFamily {
    dim: usize,
    label: String,
    edge_b: Option<f64>,
    offdiag: BlockRule,
    diag: BlockRule,
}

impl fmt::Debug for OperatorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorFamily")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .field("edge_b", &self.edge_b)
            .finish_non_exhaustive()
    }
}

impl OperatorFamily {
    /// Family from infallible rules `n ↦ A_n` and `n ↦ B_n`.
    pub fn new<FA, FB>(dim: usize, label: impl Into<String>, offdiag: FA, diag: FB) -> Self
    where
        FA: Fn(usize) -> BlockMatrix + Send + Sync + 'static,
        FB: Fn(usize) -> BlockMatrix + Send + Sync + 'static,
    {
        Self::try_new(dim, label, move |n| Ok(offdiag(n)), move |n| Ok(diag(n)))
    }

    /// Family from fallible rules (e.g. a finite table).
    pub fn try_new<FA, FB>(dim: usize, label: impl Into<String>, offdiag: FA, diag: FB) -> Self
    where
        FA: Fn(usize) -> Result<BlockMatrix> + Send + Sync + 'static,
        FB: Fn(usize) -> Result<BlockMatrix> + Send + Sync + 'static,
    {
        assert!(dim >= 1, "block dimension must be positive");
        Self {
            dim,
            label: label.into(),
            edge_b: None,
            offdiag: Arc::new(offdiag),
            diag: Arc::new(diag),
        }
    }

    /// Attaches a claimed infimum of the essential spectrum.
    pub fn with_edge(mut self, b: f64) -> Self {
        self.edge_b = Some(b);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn edge_b(&self) -> Option<f64> {
        self.edge_b
    }

    fn checked(&self, rule: &BlockRule, n: usize, what: &str) -> Result<BlockMatrix> {
        if n == 0 {
            return invalid(format!("block index must be >= 1 (got 0 for {what})"));
        }
        let m = rule(n)?;
        if m.rows() != self.dim || m.cols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: if m.rows() != self.dim { m.rows() } else { m.cols() },
            });
        }
        Ok(m)
    }

    /// `A_n`, unchecked apart from shape.
    pub fn offdiag(&self, n: usize) -> Result<BlockMatrix> {
        self.checked(&self.offdiag, n, "A")
    }

    /// `B_n`, verified Hermitian.
    pub fn diag(&self, n: usize) -> Result<BlockMatrix> {
        let b = self.checked(&self.diag, n, "B")?;
        b.check_hermitian(BLOCK_HERMITIAN_TOL)?;
        Ok(b)
    }

    /// Scalar free Jacobi matrix: `d = 1`, `A_n = 1`, `B_n = 0`.
    /// Its spectrum is `[-2, 2]`.
    pub fn scalar_free() -> Self {
        Self::new(1, "scalar-free", |_| CMatrix::scalar(1, 1.0), |_| CMatrix::scalar(1, 0.0))
            .with_edge(-2.0)
    }

    /// Commuting diagonal family `A_n = a n^α diag(1, ratio)`, `B_n = 2 A_n`.
    ///
    /// Each coordinate is a scalar Jacobi matrix with off-diagonal `c n^α`
    /// and diagonal `2 c n^α`, whose quadratic form is
    /// `Σ (c n^α - c (n-1)^α) |u_n|^2 >= 0` plus positive terms, so the
    /// operator is nonnegative and `b = 0` is admissible.
    pub fn diagonal_test(a: f64, ratio: f64, alpha: f64) -> Self {
        let label = format!("diagonal-test:a={a},ratio={ratio},alpha={alpha}");
        let block = move |n: usize, scale: f64| {
            let r = a * (n as f64).powf(alpha);
            CMatrix::from_real_diag(&[scale * r, scale * ratio * r])
        };
        Self::new(2, label, move |n| block(n, 1.0), move |n| block(n, 2.0)).with_edge(0.0)
    }

    /// Constant blocks `A_n = a`, `B_n = b` for all `n`.
    pub fn constant(label: impl Into<String>, a: BlockMatrix, b: BlockMatrix) -> Result<Self> {
        if !a.is_square() || a.rows() != b.rows() || !b.is_square() {
            return Err(Error::DimensionMismatch {
                expected: a.rows(),
                got: b.rows(),
            });
        }
        b.check_hermitian(BLOCK_HERMITIAN_TOL)?;
        let dim = a.rows();
        Ok(Self::new(dim, label, move |_| a.clone(), move |_| b.clone()))
    }

    /// Pseudo-random family with entries in `[-1, 1]`: complex `A_n` and
    /// Hermitian `B_n`. Blocks depend only on `(seed, n)`.
    pub fn random(dim: usize, seed: u64) -> Self {
        let make = move |n: usize, which: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((n as u64) << 1 | which),
            );
            CMatrix::from_fn(dim, dim, |_, _| {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            })
        };
        Self::new(
            dim,
            format!("random:dim={dim},seed={seed}"),
            move |n| make(n, 0),
            move |n| {
                let m = make(n, 1);
                (&m + &m.adjoint()).scale(0.5)
            },
        )
    }

    /// Same family with every `B_n` replaced by `B_n + c I`; the edge moves by `c`.
    pub fn with_diag_shift(&self, c: f64) -> Self {
        let base = self.clone();
        let dim = self.dim;
        Self {
            dim,
            label: format!("{} (diag shift {c})", self.label),
            edge_b: self.edge_b.map(|b| b + c),
            offdiag: self.offdiag.clone(),
            diag: Arc::new(move |n| Ok(base.diag(n)?.shifted(Complex64::new(c, 0.0)))),
        }
    }

    /// Same family with `B_1` replaced by `B_1 + c I`.
    pub fn with_first_block_shift(&self, c: f64) -> Self {
        let base = self.clone();
        Self {
            dim: self.dim,
            label: format!("{} (B_1 shift {c})", self.label),
            edge_b: self.edge_b,
            offdiag: self.offdiag.clone(),
            diag: Arc::new(move |n| {
                let b = base.diag(n)?;
                Ok(if n == 1 { b.shifted(Complex64::new(c, 0.0)) } else { b })
            }),
        }
    }

    /// Family backed by an explicit table.
    pub fn from_table(table: FamilyTable) -> Result<Self> {
        let dim = table.dim;
        if dim == 0 {
            return Err(Error::FamilyFile("dim must be positive".into()));
        }
        let label = table.label.clone().unwrap_or_else(|| "table".into());
        let mut a_map = BTreeMap::new();
        let mut b_map = BTreeMap::new();
        for entry in &table.blocks {
            if entry.n == 0 {
                return Err(Error::FamilyFile("block index n must be >= 1".into()));
            }
            if let Some(a) = &entry.a {
                a_map.insert(entry.n, parse_block(dim, a, entry.n, "A")?);
            }
            if let Some(b) = &entry.b {
                let b = parse_block(dim, b, entry.n, "B")?;
                b.check_hermitian(BLOCK_HERMITIAN_TOL)
                    .map_err(|e| Error::FamilyFile(format!("B_{}: {e}", entry.n)))?;
                b_map.insert(entry.n, b);
            }
        }
        let a_map = Arc::new(a_map);
        let b_map = Arc::new(b_map);
        let (la, lb) = (label.clone(), label.clone());
        let mut family = Self::try_new(
            dim,
            label,
            move |n| {
                a_map.get(&n).cloned().ok_or_else(|| Error::MissingBlock {
                    family: la.clone(),
                    n,
                })
            },
            move |n| {
                b_map.get(&n).cloned().ok_or_else(|| Error::MissingBlock {
                    family: lb.clone(),
                    n,
                })
            },
        );
        family.edge_b = table.edge_b;
        Ok(family)
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let table: FamilyTable =
            serde_json::from_str(json).map_err(|e| Error::FamilyFile(e.to_string()))?;
        Self::from_table(table)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::FamilyFile(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }
}

/// One matrix entry in a family file: a real number or a `[re, im]` pair.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum TableEntry {
    Real(f64),
    Complex([f64; 2]),
}

impl From<TableEntry> for Complex64 {
    fn from(e: TableEntry) -> Self {
        match e {
            TableEntry::Real(x) => Complex64::new(x, 0.0),
            TableEntry::Complex([re, im]) => Complex64::new(re, im),
        }
    }
}

/// Blocks for one index `n`; entries are row-major.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TableBlock {
    pub n: usize,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<TableEntry>>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<TableEntry>>,
}

/// Explicit-table family file.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FamilyTable {
    pub dim: usize,
    pub blocks: Vec<TableBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

fn parse_block(dim: usize, entries: &[TableEntry], n: usize, what: &str) -> Result<BlockMatrix> {
    if entries.len() != dim * dim {
        return Err(Error::FamilyFile(format!(
            "{what}_{n} has {} entries, expected {}",
            entries.len(),
            dim * dim
        )));
    }
    CMatrix::from_row_major(dim, dim, entries.iter().map(|&e| e.into()).collect())
}

/// `(A_n, B_n)` for `n >= 1`; `B_n` is verified Hermitian.
pub fn block_entries(family: &OperatorFamily, n: usize) -> Result<(BlockMatrix, BlockMatrix)> {
    Ok((family.offdiag(n)?, family.diag(n)?))
}

/// The `N`-block finite section of a block Jacobi matrix.
#[derive(Clone, Debug)]
pub struct Truncation {
    label: String,
    dim: usize,
    diag_blocks: Vec<BlockMatrix>,
    offdiag_blocks: Vec<BlockMatrix>,
}

/// Assembles the finite section with `B_1..B_N` on the diagonal and
/// `A_1..A_{N-1}` above it.
pub fn assemble_truncation(family: &OperatorFamily, nblocks: usize) -> Result<Truncation> {
    if nblocks == 0 {
        return invalid("truncation needs at least one block");
    }
    let diag_blocks = (1..=nblocks).map(|n| family.diag(n)).collect::<Result<Vec<_>>>()?;
    let offdiag_blocks = (1..nblocks).map(|n| family.offdiag(n)).collect::<Result<Vec<_>>>()?;
    Ok(Truncation {
        label: family.label().to_string(),
        dim: family.dim(),
        diag_blocks,
        offdiag_blocks,
    })
}

impl Truncation {
    /// Builds a truncation directly from blocks.
    pub fn from_blocks(
        label: impl Into<String>,
        diag_blocks: Vec<BlockMatrix>,
        offdiag_blocks: Vec<BlockMatrix>,
    ) -> Result<Self> {
        let n = diag_blocks.len();
        if n == 0 {
            return invalid("truncation needs at least one block");
        }
        if offdiag_blocks.len() + 1 != n {
            return Err(Error::DimensionMismatch {
                expected: n - 1,
                got: offdiag_blocks.len(),
            });
        }
        let dim = diag_blocks[0].rows();
        for m in diag_blocks.iter().chain(&offdiag_blocks) {
            if m.rows() != dim || m.cols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: m.rows(),
                });
            }
        }
        for b in &diag_blocks {
            b.check_hermitian(BLOCK_HERMITIAN_TOL)?;
        }
        Ok(Self {
            label: label.into(),
            dim,
            diag_blocks,
            offdiag_blocks,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nblocks(&self) -> usize {
        self.diag_blocks.len()
    }

    pub fn dense_dim(&self) -> usize {
        self.dim * self.nblocks()
    }

    pub fn diag_blocks(&self) -> &[BlockMatrix] {
        &self.diag_blocks
    }

    pub fn offdiag_blocks(&self) -> &[BlockMatrix] {
        &self.offdiag_blocks
    }

    /// `B_n`, 1-based.
    pub fn diag_block(&self, n: usize) -> &BlockMatrix {
        &self.diag_blocks[n - 1]
    }

    /// `A_n`, 1-based, `n < N`.
    pub fn offdiag_block(&self, n: usize) -> &BlockMatrix {
        &self.offdiag_blocks[n - 1]
    }

    /// Copy with `B_1` replaced.
    pub fn with_first_diag(&self, b1: BlockMatrix) -> Result<Self> {
        let mut diag = self.diag_blocks.clone();
        diag[0] = b1;
        Self::from_blocks(self.label.clone(), diag, self.offdiag_blocks.clone())
    }

    /// Dense `N·d × N·d` realization.
    pub fn dense(&self) -> CMatrix {
        let d = self.dim;
        let mut m = CMatrix::zeros(self.dense_dim(), self.dense_dim());
        for (k, b) in self.diag_blocks.iter().enumerate() {
            m.set_submatrix(k * d, k * d, b);
        }
        for (k, a) in self.offdiag_blocks.iter().enumerate() {
            m.set_submatrix(k * d, (k + 1) * d, a);
            m.set_submatrix((k + 1) * d, k * d, &a.adjoint());
        }
        m
    }

    /// Dense product `T v`, exploiting the block structure.
    pub fn apply(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if v.len() != self.dense_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dense_dim(),
                got: v.len(),
            });
        }
        let d = self.dim;
        let n = self.nblocks();
        let mut out = vec![Complex64::new(0.0, 0.0); v.len()];
        for k in 0..n {
            let block = |j: usize| &v[j * d..(j + 1) * d];
            let mut acc = self.diag_blocks[k].matvec(block(k));
            if k + 1 < n {
                for (o, x) in acc.iter_mut().zip(self.offdiag_blocks[k].matvec(block(k + 1))) {
                    *o += x;
                }
            }
            if k > 0 {
                let a = &self.offdiag_blocks[k - 1];
                let prev = block(k - 1);
                for (i, o) in acc.iter_mut().enumerate() {
                    *o += (0..d).map(|j| a[(j, i)].conj() * prev[j]).sum::<Complex64>();
                }
            }
            out[k * d..(k + 1) * d].copy_from_slice(&acc);
        }
        Ok(out)
    }

    /// Block LU of `T - λI` with the pivot conditioning guard.
    pub fn factor(&self, lambda: Complex64) -> Result<BlockTridiagLU> {
        BlockTridiagLU::factor(&self.diag_blocks, &self.offdiag_blocks, lambda)
    }

    /// Number of eigenvalues strictly below `sigma`.
    pub fn count_below(&self, sigma: f64) -> Result<usize> {
        Ok(Inertia::below(&self.diag_blocks, &self.offdiag_blocks, sigma)?.negative)
    }

    /// Eigenvalue number `index` in ascending order (0-based).
    pub fn eigenvalue(&self, index: usize) -> Result<f64> {
        eigenvalue_by_index(&self.diag_blocks, &self.offdiag_blocks, index)
    }

    /// Smallest eigenvalue.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        self.eigenvalue(0)
    }

    /// Gershgorin enclosure of the spectrum.
    pub fn spectral_bounds(&self) -> (f64, f64) {
        gershgorin(&self.diag_blocks, &self.offdiag_blocks)
    }

    /// Distance from `x` to the nearest eigenvalue, by inertia bisection.
    pub fn distance_to_spectrum(&self, x: Complex64) -> Result<f64> {
        let below = self.count_below(x.re)?;
        let mut best = f64::INFINITY;
        if below > 0 {
            best = best.min((x.re - self.eigenvalue(below - 1)?).abs());
        }
        if below < self.dense_dim() {
            best = best.min((self.eigenvalue(below)? - x.re).abs());
        }
        Ok(best.hypot(x.im))
    }
}

/// Applies the difference expression to `u = (u_1, ..., u_M)`, padded with
/// zeros beyond `M`. Returns the `M + 1` blocks of the image, i.e. the full
/// support of `Υu`.
pub fn apply_upsilon(family: &OperatorFamily, u: &[Vec<Complex64>]) -> Result<Vec<Vec<Complex64>>> {
    let m = u.len();
    if m == 0 {
        return invalid("apply_upsilon needs at least one block");
    }
    let d = family.dim();
    for uk in u {
        if uk.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: uk.len(),
            });
        }
    }
    let zero = vec![Complex64::new(0.0, 0.0); d];
    let get = |k: usize| -> &[Complex64] {
        // 1-based, zero outside 1..=M
        if (1..=m).contains(&k) {
            &u[k - 1]
        } else {
            &zero
        }
    };
    let mut out = Vec::with_capacity(m + 1);
    for k in 1..=m + 1 {
        let mut acc = family.diag(k)?.matvec(get(k));
        let next = family.offdiag(k)?.matvec(get(k + 1));
        for (o, x) in acc.iter_mut().zip(next) {
            *o += x;
        }
        if k >= 2 {
            let prev = family.offdiag(k - 1)?.adjoint().matvec(get(k - 1));
            for (o, x) in acc.iter_mut().zip(prev) {
                *o += x;
            }
        }
        out.push(acc);
    }
    Ok(out)
}

/// Partial sum `Σ_{m=1}^{N} 1/||A_m||` of the Carleman series.
pub fn carleman_sum(family: &OperatorFamily, nblocks: usize) -> Result<f64> {
    let mut sum = 0.0;
    for m in 1..=nblocks {
        let norm = spectral_norm(&family.offdiag(m)?)?;
        if norm == 0.0 {
            return invalid(format!("||A_{m}|| = 0, Carleman term undefined"));
        }
        sum += 1.0 / norm;
    }
    Ok(sum)
}

/// Indices `n <= N` whose `A_n` fails the trivial-kernel test
/// `σ_min(A_n) > 1e-12 ||A_n||`.
pub fn kernel_violations(family: &OperatorFamily, nblocks: usize) -> Result<Vec<usize>> {
    let mut bad = Vec::new();
    for n in 1..=nblocks {
        let sv = singular_values(&family.offdiag(n)?)?;
        let (smin, smax) = (sv[0], *sv.last().unwrap());
        if smax == 0.0 || smin <= KERNEL_TOL * smax {
            bad.push(n);
        }
    }
    Ok(bad)
}

/// Verifies that `{A_m, B_m, A_m^*}` for `m <= N` commute pairwise, with
/// `||[X, Y]||_F <= 1e-10 ||X||_F ||Y||_F`.
pub fn check_commutation(family: &OperatorFamily, nblocks: usize) -> Result<()> {
    if family.dim() == 1 {
        return Ok(());
    }
    let mut mats: Vec<(String, BlockMatrix)> = Vec::with_capacity(3 * nblocks);
    for m in 1..=nblocks {
        let (a, b) = block_entries(family, m)?;
        let a_adj = a.adjoint();
        mats.push((format!("A_{m}"), a));
        mats.push((format!("B_{m}"), b));
        mats.push((format!("A_{m}^*"), a_adj));
    }
    let norms: Vec<f64> = mats.iter().map(|(_, m)| m.frobenius_norm()).collect();
    for i in 0..mats.len() {
        if norms[i] == 0.0 {
            continue;
        }
        for j in (i + 1)..mats.len() {
            if norms[j] == 0.0 {
                continue;
            }
            let c = mats[i].1.commutator(&mats[j].1).frobenius_norm();
            let relative = c / (norms[i] * norms[j]);
            if relative > COMMUTATION_TOL {
                return Err(Error::CommutationViolation {
                    first: mats[i].0.clone(),
                    second: mats[j].0.clone(),
                    relative,
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::example_st::{st_family, StParams};
    use crate::linalg::hermitian_eig;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn st_block_four() {
        let fam = st_family(StParams::new(2.0, 2.0, 0.5).unwrap());
        let (a, b) = block_entries(&fam, 4).unwrap();
        assert!((&a - &CMatrix::from_real_rows(&[[0.0, 2.0], [2.0, 0.0]])).max_abs() < 1e-15);
        assert!((&b - &CMatrix::from_real_diag(&[4.0, 4.0])).max_abs() < 1e-15);
    }

    #[test]
    fn deterministic_blocks() {
        let fam = OperatorFamily::random(3, 42);
        assert_eq!(block_entries(&fam, 1).unwrap(), block_entries(&fam, 1).unwrap());
    }

    #[test]
    fn scalar_free_blocks() {
        let (a, b) = block_entries(&OperatorFamily::scalar_free(), 7).unwrap();
        assert_eq!(a, CMatrix::scalar(1, 1.0));
        assert_eq!(b, CMatrix::scalar(1, 0.0));
    }

    #[test]
    fn rejects_zero_index_and_non_hermitian_diag() {
        assert!(block_entries(&OperatorFamily::scalar_free(), 0).is_err());
        let bad = OperatorFamily::new(
            2,
            "bad",
            |_| CMatrix::identity(2),
            |_| CMatrix::from_real_rows(&[[1.0, 2.0], [0.0, 1.0]]),
        );
        assert!(matches!(block_entries(&bad, 1), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn scalar_free_two_blocks() {
        let t = assemble_truncation(&OperatorFamily::scalar_free(), 2).unwrap();
        assert_eq!(t.dense(), CMatrix::from_real_rows(&[[0.0, 1.0], [1.0, 0.0]]));
    }

    #[test]
    fn st_two_blocks() {
        let fam = st_family(StParams::new(2.0, 2.0, 0.5).unwrap());
        let t = assemble_truncation(&fam, 2).unwrap();
        let r2 = 2.0 * 2f64.sqrt();
        let expected = CMatrix::from_real_rows(&[
            [2.0, 0.0, 0.0, 1.0],
            [0.0, 2.0, 1.0, 0.0],
            [0.0, 1.0, r2, 0.0],
            [1.0, 0.0, 0.0, r2],
        ]);
        assert!((&t.dense() - &expected).max_abs() < 1e-15);
    }

    #[test]
    fn assembled_truncation_is_hermitian() {
        for seed in 0..5 {
            let t = assemble_truncation(&OperatorFamily::random(3, seed), 12).unwrap();
            let dense = t.dense();
            assert!(dense.hermitian_deviation() <= 1e-14 * dense.max_abs());
        }
    }

    #[test]
    fn upsilon_unit_vector() {
        let fam = OperatorFamily::scalar_free();
        let u = vec![vec![c(1.0)], vec![c(0.0)], vec![c(0.0)]];
        let out = apply_upsilon(&fam, &u).unwrap();
        let flat: Vec<Complex64> = out.into_iter().flatten().collect();
        assert_eq!(flat, vec![c(0.0), c(1.0), c(0.0), c(0.0)]);
    }

    #[test]
    fn upsilon_matches_dense_truncation() {
        let fam = OperatorFamily::random(2, 3);
        let m = 6;
        let u: Vec<Vec<Complex64>> = (0..m)
            .map(|k| vec![Complex64::new(k as f64, 1.0), Complex64::new(-0.5, k as f64 * 0.3)])
            .collect();
        let image: Vec<Complex64> = apply_upsilon(&fam, &u).unwrap().into_iter().flatten().collect();
        let t = assemble_truncation(&fam, m + 1).unwrap();
        let mut padded: Vec<Complex64> = u.iter().flatten().copied().collect();
        padded.extend([c(0.0), c(0.0)]);
        let dense = t.dense().matvec(&padded);
        let structured = t.apply(&padded).unwrap();
        let scale = crate::linalg::vec_norm(&dense);
        for i in 0..dense.len() {
            assert!((image[i] - dense[i]).norm() <= 1e-12 * scale);
            assert!((structured[i] - dense[i]).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn upsilon_eigenvector_residual() {
        // eigenvectors of a finite section whose last block is negligible
        // are approximate solutions of Υu = λu
        let fam = st_family(StParams::new(2.0, 2.0, 0.6).unwrap()).with_first_block_shift(-10.0);
        let n = 40;
        let t = assemble_truncation(&fam, n).unwrap();
        let eig = hermitian_eig(&t.dense()).unwrap();
        let lambda = eig.values[0];
        let v = eig.vectors.column(0);
        let tail = crate::linalg::vec_norm(&v[2 * (n - 1)..]);
        assert!(tail < 1e-12);
        let u: Vec<Vec<Complex64>> = v.chunks(2).map(|c| c.to_vec()).collect();
        let image = apply_upsilon(&fam, &u).unwrap();
        let mut res = 0.0;
        for k in 0..n {
            for i in 0..2 {
                res += (image[k][i] - u[k][i] * lambda).norm_sqr();
            }
        }
        assert!(res.sqrt() < 1e-10);
    }

    #[test]
    fn upsilon_dimension_mismatch() {
        let fam = OperatorFamily::scalar_free();
        assert!(apply_upsilon(&fam, &[vec![c(1.0), c(2.0)]]).is_err());
    }

    #[test]
    fn carleman_partial_sums() {
        assert!((carleman_sum(&OperatorFamily::scalar_free(), 100).unwrap() - 100.0).abs() < 1e-12);
        let fam = st_family(StParams::new(2.0, 2.0, 0.5).unwrap());
        let s = carleman_sum(&fam, 4).unwrap();
        assert!((s - 2.784_457_050_376_173).abs() < 1e-12, "{s}");
        // ||A_m|| = m^2: partial sums approach ζ(2)
        let fast = OperatorFamily::new(
            1,
            "square",
            |n| CMatrix::scalar(1, (n * n) as f64),
            |_| CMatrix::scalar(1, 0.0),
        );
        let s10 = carleman_sum(&fast, 10).unwrap();
        let brute: f64 = (1..=10).map(|m| 1.0 / (m * m) as f64).sum();
        assert!((s10 - brute).abs() < 1e-14);
        assert!((s10 - 1.549_767_731_166_540_6).abs() < 1e-12);
        let zeta2 = std::f64::consts::PI.powi(2) / 6.0;
        assert!(zeta2 - s10 < 0.1);
    }

    #[test]
    fn carleman_rejects_zero_norm() {
        let fam = OperatorFamily::new(1, "zero", |_| CMatrix::scalar(1, 0.0), |_| CMatrix::scalar(1, 0.0));
        assert!(carleman_sum(&fam, 3).is_err());
    }

    #[test]
    fn kernel_diagnostic() {
        let fam = st_family(StParams::new(2.0, 2.0, 0.5).unwrap());
        assert!(kernel_violations(&fam, 10).unwrap().is_empty());
        let singular = OperatorFamily::new(
            2,
            "rank-one",
            |_| CMatrix::from_real_rows(&[[1.0, 1.0], [1.0, 1.0]]),
            |_| CMatrix::zeros(2, 2),
        );
        assert_eq!(kernel_violations(&singular, 2).unwrap(), vec![1, 2]);
    }

    #[test]
    fn commutation_check() {
        check_commutation(&OperatorFamily::diagonal_test(1.0, 4.0, 0.6), 20).unwrap();
        check_commutation(&st_family(StParams::new(2.0, 2.0, 0.6).unwrap()), 20).unwrap();
        let err = check_commutation(&st_family(StParams::new(1.0, 4.0, 0.6).unwrap()), 5).unwrap_err();
        match err {
            Error::CommutationViolation { first, second, .. } => {
                assert_eq!(first, "A_1");
                assert_eq!(second, "B_1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn table_family_roundtrip() {
        let json = r#"{
            "dim": 2,
            "edge_b": 0.5,
            "blocks": [
                {"n": 1, "A": [0, 1, 1, 0], "B": [1, [0, 1], [0, -1], 2]},
                {"n": 2, "B": [3, 0, 0, 3]}
            ]
        }"#;
        let fam = OperatorFamily::from_json_str(json).unwrap();
        assert_eq!(fam.edge_b(), Some(0.5));
        let t = assemble_truncation(&fam, 2).unwrap();
        assert_eq!(t.diag_block(1)[(0, 1)], Complex64::new(0.0, 1.0));
        assert!(matches!(
            assemble_truncation(&fam, 3),
            Err(Error::MissingBlock { n: 3, .. })
        ));
    }

    #[test]
    fn table_family_rejects_malformed() {
        assert!(OperatorFamily::from_json_str(r#"{"dim": 2, "blocks": [{"n": 1, "B": [1, 2, 3]}]}"#).is_err());
        assert!(OperatorFamily::from_json_str(r#"{"dim": 2, "blocks": [{"n": 1, "B": [1, 2, 3, 4]}]}"#).is_err());
        assert!(OperatorFamily::from_json_str("not json").is_err());
    }

    #[test]
    fn interlacing_min_eigenvalue() {
        let fam = OperatorFamily::random(2, 8);
        let mut prev = f64::INFINITY;
        for n in [10, 20, 40, 80] {
            let t = assemble_truncation(&fam, n).unwrap();
            let m = t.min_eigenvalue().unwrap();
            assert!(m <= prev + 1e-12);
            prev = m;
        }
    }

    #[test]
    fn bisection_agrees_with_jacobi() {
        let t = assemble_truncation(&OperatorFamily::random(2, 1), 15).unwrap();
        let eig = hermitian_eig(&t.dense()).unwrap();
        for (i, w) in eig.values.iter().enumerate() {
            assert!((t.eigenvalue(i).unwrap() - w).abs() < 1e-12);
        }
        let x = Complex64::new(eig.values[4] + 1e-3, 0.5);
        let d = t.distance_to_spectrum(x).unwrap();
        let brute = eig
            .values
            .iter()
            .map(|w| (x - w).norm())
            .fold(f64::INFINITY, f64::min);
        assert!((d - brute).abs() < 1e-12);
    }

    #[test]
    fn diag_shift_moves_edge() {
        let fam = OperatorFamily::diagonal_test(1.0, 4.0, 0.6).with_diag_shift(3.0);
        assert_eq!(fam.edge_b(), Some(3.0));
        assert_eq!(fam.diag(1).unwrap()[(0, 0)].re, 5.0);
    }
}
