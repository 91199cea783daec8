//! Green-matrix blocks, eigenpairs below the edge and decay reports.
//!
//! Every computation runs on a finite section. Near the artificial boundary
//! at block `N` the truncated resolvent is distorted, so reports exclude the
//! last `⌊N/10⌋` indices from their verdicts.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::bounds::{gamma_rate, operator_envelope, qualified_constant, scalar_envelope, BoundParams};
use crate::error::{invalid, Error, Result};
use crate::linalg::{hermitian_eig, singular_values, spectral_norm, vec_dot, vec_norm, BlockTridiagLU, CMatrix};
use crate::operator::{assemble_truncation, check_commutation, BlockMatrix, OperatorFamily, Truncation};

/// Minimal distance between λ and the truncation spectrum.
pub const PROXIMITY_GUARD: f64 = 1e-6;

/// Eigenvectors whose last block exceeds this are flagged.
pub const BOUNDARY_SUSPECT: f64 = 1e-6;

/// Relative slack in the verdict `measured <= C · envelope`.
pub const PASS_SLACK: f64 = 1e-9;

/// Header line of every CSV report.
pub const CSV_HEADER: &str = "# blockjacobi-bounds v1";

/// Default width of the calibration window, `[k, k + 10]`.
pub const DEFAULT_CALIBRATION_WIDTH: usize = 10;

const INVERSE_ITERATION_STEPS: usize = 3;
const CLUSTER_TOL: f64 = 1e-8;

/// Blocks `G_{j,k}(λ)`, `j = 1..N`, of one column of the truncated resolvent.
#[derive(Clone, Debug)]
pub struct GreenBlockSet {
    lambda: Complex64,
    source: usize,
    blocks: Vec<BlockMatrix>,
}

impl GreenBlockSet {
    pub fn lambda(&self) -> Complex64 {
        self.lambda
    }

    /// The column index `k`.
    pub fn source(&self) -> usize {
        self.source
    }

    pub fn nblocks(&self) -> usize {
        self.blocks.len()
    }

    /// `G_{j,k}`, 1-based.
    pub fn block(&self, j: usize) -> &BlockMatrix {
        &self.blocks[j - 1]
    }

    pub fn blocks(&self) -> &[BlockMatrix] {
        &self.blocks
    }

    /// Spectral norms `‖G_{j,k}‖` for `j = 1..N`.
    pub fn norms(&self) -> Result<Vec<f64>> {
        self.blocks.iter().map(spectral_norm).collect()
    }

    /// The column as an `N·d × d` matrix.
    pub fn stacked(&self) -> CMatrix {
        let d = self.blocks[0].rows();
        let mut out = CMatrix::zeros(d * self.blocks.len(), d);
        for (j, b) in self.blocks.iter().enumerate() {
            out.set_submatrix(j * d, 0, b);
        }
        out
    }
}

fn unit_block_column(n: usize, d: usize, k: usize) -> CMatrix {
    let mut e = CMatrix::zeros(n * d, d);
    for i in 0..d {
        e[((k - 1) * d + i, i)] = Complex64::new(1.0, 0.0);
    }
    e
}

fn split_blocks(x: &CMatrix, d: usize) -> Vec<BlockMatrix> {
    (0..x.rows() / d).map(|j| x.submatrix(j * d, 0, d, x.cols())).collect()
}

/// Column `k` of `(T − λ)^{-1}`.
///
/// Fails with [`Error::NearSpectrum`] when a real-ish λ is within
/// [`PROXIMITY_GUARD`] of an eigenvalue, and with [`Error::SingularShift`]
/// when a pivot block is too ill-conditioned.
pub fn green_column(trunc: &Truncation, lambda: Complex64, k: usize) -> Result<GreenBlockSet> {
    let n = trunc.nblocks();
    if k == 0 || k > n {
        return invalid(format!("column index k = {k} outside 1..={n}"));
    }
    if lambda.im.abs() < PROXIMITY_GUARD {
        let distance = trunc.distance_to_spectrum(lambda)?;
        if distance < PROXIMITY_GUARD {
            return Err(Error::NearSpectrum {
                distance,
                guard: PROXIMITY_GUARD,
            });
        }
    }
    let lu = trunc.factor(lambda)?;
    let x = lu.solve(&unit_block_column(n, trunc.dim(), k))?;
    Ok(GreenBlockSet {
        lambda,
        source: k,
        blocks: split_blocks(&x, trunc.dim()),
    })
}

/// A normalized eigenpair of a truncation.
#[derive(Clone, Debug)]
pub struct Eigenpair {
    pub value: f64,
    pub vector: Vec<Complex64>,
    /// `‖u_N‖`.
    pub tail_norm: f64,
    pub boundary_suspect: bool,
}

impl Eigenpair {
    /// Block norms `‖u_m‖`, `m = 1..N`.
    pub fn block_norms(&self, d: usize) -> Vec<f64> {
        self.vector.chunks(d).map(vec_norm).collect()
    }
}

fn normalize(v: &mut [Complex64]) -> f64 {
    let n = vec_norm(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

/// Modified Gram–Schmidt against `basis`; keeps `v` only if at least
/// `keep` of its norm survives.
fn orthogonalize_into(basis: &mut Vec<Vec<Complex64>>, mut v: Vec<Complex64>, keep: f64) -> bool {
    let before = vec_norm(&v);
    if before == 0.0 {
        return false;
    }
    for _ in 0..2 {
        for q in basis.iter() {
            let c = vec_dot(q, &v);
            for (x, y) in v.iter_mut().zip(q) {
                *x -= c * y;
            }
        }
    }
    if vec_norm(&v) <= keep * before {
        return false;
    }
    normalize(&mut v);
    basis.push(v);
    true
}

/// Fixes the phase so the largest component is real and positive.
fn fix_phase(v: &mut [Complex64]) {
    let mut best = 0;
    let mut best_norm = 0.0;
    for (i, x) in v.iter().enumerate() {
        if x.norm() > best_norm * (1.0 + 1e-12) {
            best = i;
            best_norm = x.norm();
        }
    }
    if best_norm > 0.0 {
        let phase = v[best].conj() / best_norm;
        for x in v.iter_mut() {
            *x *= phase;
        }
    }
}

/// All eigenpairs of `trunc` with eigenvalue below `b`, ascending.
///
/// Eigenvalues come from inertia bisection. Each cluster of (nearly)
/// equal eigenvalues gets a rough basis by inverse iteration from seeded
/// random starts; the final vectors are Green columns `(T − σ)^{-1} e_p`
/// at `σ` just below the cluster, taken at the blocks `p` where the rough
/// basis is heaviest, followed by Rayleigh–Ritz. Green columns keep
/// relative accuracy in tails far below machine epsilon.
pub fn eigenpairs_below(trunc: &Truncation, b: f64) -> Result<Vec<Eigenpair>> {
    let count = trunc.count_below(b)?;
    if count == 0 {
        return Ok(Vec::new());
    }
    let values: Vec<f64> = (0..count).map(|i| trunc.eigenvalue(i)).collect::<Result<_>>()?;
    let (g_lo, g_hi) = trunc.spectral_bounds();
    let spread = (g_hi - g_lo).max(f64::MIN_POSITIVE);

    let mut clusters: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=count {
        if i == count || values[i] - values[i - 1] > CLUSTER_TOL * values[i].abs().max(1.0) {
            clusters.push((start, i));
            start = i;
        }
    }

    let mut pairs = Vec::with_capacity(count);
    for (lo, hi) in clusters {
        let below = if lo > 0 { Some(values[lo - 1]) } else { None };
        let above = if hi < trunc.dense_dim() {
            Some(if hi < count { values[hi] } else { trunc.eigenvalue(hi)? })
        } else {
            None
        };
        let cluster = &values[lo..hi];
        let gap = [below.map(|v| cluster[0] - v), above.map(|v| v - cluster[cluster.len() - 1])]
            .into_iter()
            .flatten()
            .fold(f64::INFINITY, f64::min);
        let eta = (1e-12 * spread).min(1e-3 * gap);
        let sigma = cluster[0] - eta;
        pairs.extend(cluster_vectors(trunc, sigma, hi - lo, lo as u64)?);
    }
    Ok(pairs)
}

fn cluster_vectors(trunc: &Truncation, sigma: f64, m: usize, seed: u64) -> Result<Vec<Eigenpair>> {
    let n = trunc.nblocks();
    let d = trunc.dim();
    let dim = trunc.dense_dim();
    let lu = BlockTridiagLU::factor_unchecked(
        trunc.diag_blocks(),
        trunc.offdiag_blocks(),
        Complex64::new(sigma, 0.0),
    )?;

    // Rough basis by inverse subspace iteration.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED ^ seed);
    let mut x = CMatrix::from_fn(dim, m, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), 0.0));
    for _ in 0..INVERSE_ITERATION_STEPS {
        x = lu.solve(&x)?;
        let mut basis = Vec::with_capacity(m);
        for j in 0..m {
            orthogonalize_into(&mut basis, x.column(j), 0.0);
        }
        for (j, q) in basis.iter().enumerate() {
            x.set_column(j, q);
        }
    }
    let mut weights: Vec<(usize, f64)> = (0..n)
        .map(|k| {
            let w: f64 = (0..m)
                .map(|j| (0..d).map(|i| x[(k * d + i, j)].norm_sqr()).sum::<f64>())
                .sum();
            (k + 1, w)
        })
        .collect();
    weights.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    // Accurate basis from Green columns at the heaviest blocks.
    let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(m);
    for &(p, _) in weights.iter().take(m + 4) {
        if basis.len() == m {
            break;
        }
        let g = lu.solve(&unit_block_column(n, d, p))?;
        let mut cols: Vec<Vec<Complex64>> = (0..d).map(|i| g.column(i)).collect();
        cols.sort_by(|a, b| vec_norm(b).total_cmp(&vec_norm(a)));
        for c in cols {
            if basis.len() == m {
                break;
            }
            orthogonalize_into(&mut basis, c, 1e-4);
        }
    }
    if basis.len() < m {
        return Err(Error::NonConvergence {
            method: "eigenvector subspace construction",
            iterations: m + 4,
            residual: (m - basis.len()) as f64,
        });
    }
    // One more inverse step damps the remaining components by η / gap.
    let mut q = CMatrix::zeros(dim, m);
    for (j, v) in basis.iter().enumerate() {
        q.set_column(j, v);
    }
    let q = lu.solve(&q)?;
    let mut basis = Vec::with_capacity(m);
    for j in 0..m {
        orthogonalize_into(&mut basis, q.column(j), 0.0);
    }

    // Rayleigh–Ritz on the cluster subspace.
    let images: Vec<Vec<Complex64>> = basis.iter().map(|q| trunc.apply(q)).collect::<Result<_>>()?;
    let h = CMatrix::from_fn(m, m, |i, j| vec_dot(&basis[i], &images[j]));
    let eig = hermitian_eig(&h.hermitian_part())?;
    let mut out = Vec::with_capacity(m);
    for c in 0..m {
        let mut v = vec![Complex64::new(0.0, 0.0); dim];
        for (i, q) in basis.iter().enumerate() {
            let coef = eig.vectors[(i, c)];
            for (x, y) in v.iter_mut().zip(q) {
                *x += coef * y;
            }
        }
        normalize(&mut v);
        fix_phase(&mut v);
        let tail_norm = vec_norm(&v[(n - 1) * d..]);
        out.push(Eigenpair {
            value: eig.values[c],
            vector: v,
            tail_norm,
            boundary_suspect: tail_norm > BOUNDARY_SUSPECT,
        });
    }
    Ok(out)
}

/// Copy of `trunc` with `B_1` replaced by `B_1 + τ L*L`.
///
/// `L` must have norm 1 and a trivial kernel.
pub fn perturbed_truncation(trunc: &Truncation, tau: f64, l: &BlockMatrix) -> Result<Truncation> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return invalid(format!("τ must be nonnegative (got {tau})"));
    }
    if l.rows() != trunc.dim() || !l.is_square() {
        return Err(Error::DimensionMismatch {
            expected: trunc.dim(),
            got: l.rows(),
        });
    }
    let sv = singular_values(l)?;
    let norm = *sv.last().unwrap();
    if (norm - 1.0).abs() > 1e-10 {
        return invalid(format!("‖L‖ must be 1 (got {norm})"));
    }
    if sv[0] <= 1e-12 {
        return invalid("L must have a trivial kernel");
    }
    let ll = l.adjoint().matmul(l).scale(tau);
    let b1 = (trunc.diag_block(1) + &ll).hermitian_part();
    trunc.with_first_diag(b1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayMode {
    Green,
    Eigenvector,
    Commuting,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    /// Inside the boundary margin.
    Excluded,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Excluded => "excluded",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayRow {
    pub index: usize,
    pub measured: f64,
    pub envelope: f64,
    pub verdict: Verdict,
}

impl DecayRow {
    pub fn ratio(&self) -> f64 {
        self.measured / self.envelope
    }
}

/// Values along one coordinate direction in commuting mode.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirectionalDecay {
    pub direction: usize,
    pub measured: Vec<f64>,
    pub fitted_c: f64,
    pub verdicts: Vec<Verdict>,
}

/// Measured norms against the envelope, with a fitted constant.
#[derive(Clone, Debug, Serialize)]
pub struct DecayReport {
    pub mode: DecayMode,
    pub params: BoundParams,
    pub gamma: f64,
    /// Column index `k` (green and commuting modes); 1 in eigenvector mode.
    pub source: usize,
    /// Inclusive calibration window for the fitted constant.
    pub calibration: (usize, usize),
    pub fitted_c: f64,
    pub qualified_c: Option<f64>,
    pub rows: Vec<DecayRow>,
    pub directional: Vec<DirectionalDecay>,
    pub warnings: Vec<String>,
}

impl DecayReport {
    pub fn row(&self, index: usize) -> &DecayRow {
        &self.rows[index - 1]
    }

    /// Fraction of non-excluded rows that pass.
    pub fn pass_fraction(&self) -> f64 {
        let judged: Vec<_> = self.rows.iter().filter(|r| r.verdict != Verdict::Excluded).collect();
        if judged.is_empty() {
            return 1.0;
        }
        judged.iter().filter(|r| r.verdict == Verdict::Pass).count() as f64 / judged.len() as f64
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.verdict != Verdict::Fail)
            && self
                .directional
                .iter()
                .all(|d| d.verdicts.iter().all(|v| *v != Verdict::Fail))
    }

    /// Whether every row with index in `lo..=hi` passes.
    pub fn passes_on(&self, lo: usize, hi: usize) -> bool {
        self.rows
            .iter()
            .filter(|r| (lo..=hi).contains(&r.index))
            .all(|r| r.verdict == Verdict::Pass)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_HEADER);
        out.push('\n');
        out.push_str("index,measured,envelope,ratio,verdict\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{}",
                r.index,
                r.measured,
                r.envelope,
                r.ratio(),
                r.verdict.as_str()
            );
        }
        out
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let lambda = self.params.lambda();
        json!({
            "mode": self.mode,
            "fitted_C": self.fitted_c,
            "qualified_C": self.qualified_c,
            "gamma": self.gamma,
            "params": {
                "lambda": [lambda.re, lambda.im],
                "b": self.params.b(),
                "delta": self.params.delta(),
                "epsilon": self.params.epsilon(),
            },
            "source": self.source,
            "calibration": [self.calibration.0, self.calibration.1],
            "pass_fraction": self.pass_fraction(),
            "all_pass": self.all_pass(),
            "warnings": self.warnings,
        })
    }
}

/// Number of trailing indices excluded from verdicts.
pub fn boundary_margin(nblocks: usize) -> usize {
    nblocks / 10
}

fn check_calibration(calibration: (usize, usize), last: usize) -> Result<(usize, usize)> {
    let (lo, hi) = calibration;
    if lo == 0 || hi < lo {
        return invalid(format!("calibration range [{lo}, {hi}] is empty or not 1-based"));
    }
    if lo > last {
        return invalid(format!(
            "calibration range starts at {lo}, beyond the last judged index {last}"
        ));
    }
    Ok((lo, hi.min(last)))
}

fn fit_and_judge(measured: &[f64], envelope: &[f64], calibration: (usize, usize), last: usize) -> (f64, Vec<Verdict>) {
    let (lo, hi) = calibration;
    let fitted = (lo..=hi)
        .map(|j| measured[j - 1] / envelope[j - 1])
        .fold(0.0, f64::max);
    let verdicts = (1..=measured.len())
        .map(|j| {
            if j > last {
                Verdict::Excluded
            } else if measured[j - 1] <= fitted * envelope[j - 1] * (1.0 + PASS_SLACK) {
                Verdict::Pass
            } else {
                Verdict::Fail
            }
        })
        .collect();
    (fitted, verdicts)
}

fn build_rows(measured: &[f64], envelope: &[f64], verdicts: &[Verdict]) -> Vec<DecayRow> {
    (0..measured.len())
        .map(|i| DecayRow {
            index: i + 1,
            measured: measured[i],
            envelope: envelope[i],
            verdict: verdicts[i],
        })
        .collect()
}

fn validate_run(nblocks: usize, k: usize) -> Result<()> {
    if nblocks < 2 {
        return invalid("verification needs at least two blocks");
    }
    if k == 0 || k > nblocks - boundary_margin(nblocks) {
        return invalid(format!(
            "column index k = {k} must lie in 1..={}",
            nblocks - boundary_margin(nblocks)
        ));
    }
    Ok(())
}

/// `qualified_constant` with the spectral data of the truncation, when
/// they make sense (λ off the spectrum).
fn truncation_qualified_constant(trunc: &Truncation, p: &BoundParams, m: usize) -> Result<Option<f64>> {
    let dist = trunc.distance_to_spectrum(p.lambda())?;
    if !(dist > 0.0) {
        return Ok(None);
    }
    let min_eig = trunc.min_eigenvalue()?;
    let gap = if min_eig < p.b() { p.b() - min_eig } else { 0.0 };
    Ok(Some(qualified_constant(p, m, dist, gap)?))
}

/// Checks `‖G_{jk}(λ)‖ <= C exp(−γ |S_j − S_k|)` on a truncation of `N`
/// blocks. The constant is fitted on `calibration` (default `[k, k+10]`).
pub fn verify_green_decay(
    family: &OperatorFamily,
    p: &BoundParams,
    nblocks: usize,
    k: usize,
    calibration: Option<(usize, usize)>,
) -> Result<DecayReport> {
    validate_run(nblocks, k)?;
    let last = nblocks - boundary_margin(nblocks);
    let calibration = check_calibration(
        calibration.unwrap_or((k, k + DEFAULT_CALIBRATION_WIDTH)),
        last,
    )?;
    let trunc = assemble_truncation(family, nblocks)?;
    let column = green_column(&trunc, p.lambda(), k)?;
    let measured = column.norms()?;
    let env = scalar_envelope(family, p, nblocks)?;
    let envelope: Vec<f64> = (1..=nblocks).map(|j| env.between(j, k)).collect();
    let (fitted_c, verdicts) = fit_and_judge(&measured, &envelope, calibration, last);
    let mut warnings = Vec::new();
    if let Some(b) = family.edge_b() {
        if (b - p.b()).abs() > 0.0 && p.b() > b {
            warnings.push(format!("b = {} exceeds the family's edge {b}", p.b()));
        }
    }
    Ok(DecayReport {
        mode: DecayMode::Green,
        params: *p,
        gamma: env.gamma,
        source: k,
        calibration,
        fitted_c,
        qualified_c: truncation_qualified_constant(&trunc, p, calibration.1)?,
        rows: build_rows(&measured, &envelope, &verdicts),
        directional: Vec::new(),
        warnings,
    })
}

/// Which eigenvalue below `b` to examine.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EigenSelector {
    /// 0-based index from the bottom.
    ByIndex(usize),
    /// Nearest to a target; ties go to the lower index.
    Nearest(f64),
}

pub fn select_eigenpair(pairs: &[Eigenpair], which: EigenSelector) -> Result<usize> {
    match which {
        EigenSelector::ByIndex(i) => {
            if i < pairs.len() {
                Ok(i)
            } else {
                invalid(format!(
                    "eigenvalue index {i} out of range ({} below b)",
                    pairs.len()
                ))
            }
        }
        EigenSelector::Nearest(x) => {
            let mut best = 0;
            for (i, p) in pairs.iter().enumerate() {
                if (p.value - x).abs() < (pairs[best].value - x).abs() {
                    best = i;
                }
            }
            Ok(best)
        }
    }
}

/// Checks `‖u_m‖ <= C exp(−γ(λ₀) S_m)` for a normalized eigenvector `u`
/// with eigenvalue `λ₀ < b`. The λ in `p` is replaced by `λ₀`. The
/// constant is fitted on `calibration` (default `[1, 11]`).
pub fn verify_eigenvector_decay(
    family: &OperatorFamily,
    p: &BoundParams,
    nblocks: usize,
    which: EigenSelector,
    calibration: Option<(usize, usize)>,
) -> Result<DecayReport> {
    validate_run(nblocks, 1)?;
    let last = nblocks - boundary_margin(nblocks);
    let calibration = check_calibration(calibration.unwrap_or((1, 1 + DEFAULT_CALIBRATION_WIDTH)), last)?;
    let trunc = assemble_truncation(family, nblocks)?;
    let pairs = eigenpairs_below(&trunc, p.b())?;
    if pairs.is_empty() {
        return Err(Error::EmptySpectrum { b: p.b() });
    }
    let pair = &pairs[select_eigenpair(&pairs, which)?];
    let q = p.with_lambda(Complex64::new(pair.value, 0.0))?;
    let measured = pair.block_norms(trunc.dim());
    let env = scalar_envelope(family, &q, nblocks)?;
    let envelope: Vec<f64> = (1..=nblocks).map(|m| env.from_start(m)).collect();
    let (fitted_c, verdicts) = fit_and_judge(&measured, &envelope, calibration, last);
    let mut warnings = Vec::new();
    if pair.boundary_suspect {
        warnings.push(format!(
            "eigenvector has ‖u_N‖ = {:.3e}; the truncation may be too short",
            pair.tail_norm
        ));
    }
    Ok(DecayReport {
        mode: DecayMode::Eigenvector,
        params: q,
        gamma: gamma_rate(&q),
        source: 1,
        calibration,
        fitted_c,
        qualified_c: None,
        rows: build_rows(&measured, &envelope, &verdicts),
        directional: Vec::new(),
        warnings,
    })
}

/// Checks that `‖exp(γ |Φ_m − Φ_k|) G_{mk}(λ)‖` stays bounded for a family
/// whose entries commute. The envelope column is identically 1; the
/// per-coordinate row norms are reported in `directional`.
pub fn verify_commuting_decay(
    family: &OperatorFamily,
    p: &BoundParams,
    nblocks: usize,
    k: usize,
    calibration: Option<(usize, usize)>,
) -> Result<DecayReport> {
    validate_run(nblocks, k)?;
    check_commutation(family, nblocks)?;
    let last = nblocks - boundary_margin(nblocks);
    let calibration = check_calibration(
        calibration.unwrap_or((k, k + DEFAULT_CALIBRATION_WIDTH)),
        last,
    )?;
    let trunc = assemble_truncation(family, nblocks)?;
    let column = green_column(&trunc, p.lambda(), k)?;
    let env = operator_envelope(family, p, nblocks)?;
    let d = family.dim();

    let mut measured = Vec::with_capacity(nblocks);
    let mut per_direction = vec![Vec::with_capacity(nblocks); d];
    for m in 1..=nblocks {
        let weighted = env.weight_between(m, k)?.matmul(column.block(m));
        measured.push(spectral_norm(&weighted)?);
        for (i, dir) in per_direction.iter_mut().enumerate() {
            dir.push(vec_norm(weighted.row(i)));
        }
    }
    let ones = vec![1.0; nblocks];
    let (fitted_c, verdicts) = fit_and_judge(&measured, &ones, calibration, last);
    let directional = per_direction
        .into_iter()
        .enumerate()
        .map(|(i, values)| {
            let (c, v) = fit_and_judge(&values, &ones, calibration, last);
            DirectionalDecay {
                direction: i + 1,
                measured: values,
                fitted_c: c,
                verdicts: v,
            }
        })
        .collect();
    Ok(DecayReport {
        mode: DecayMode::Commuting,
        params: *p,
        gamma: env.gamma,
        source: k,
        calibration,
        fitted_c,
        qualified_c: truncation_qualified_constant(&trunc, p, calibration.1)?,
        rows: build_rows(&measured, &ones, &verdicts),
        directional,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::example_st::{st_family, StParams};
    use crate::linalg::dense_solve;

    fn real(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn params(lambda: f64, b: f64) -> BoundParams {
        BoundParams::new(real(lambda), b, 1.0, 0.1).unwrap()
    }

    fn bound_state_family() -> OperatorFamily {
        st_family(StParams::new(2.0, 2.0, 0.6).unwrap()).with_first_block_shift(-10.0)
    }

    #[test]
    fn uncoupled_family_inverts_diagonal() {
        let fam = OperatorFamily::new(
            2,
            "uncoupled",
            |_| CMatrix::scalar(2, 1e-14),
            |n| CMatrix::from_real_diag(&[n as f64, 2.0 * n as f64]),
        );
        let t = assemble_truncation(&fam, 6).unwrap();
        let lambda = Complex64::new(-0.5, 0.25);
        let g = green_column(&t, lambda, 3).unwrap();
        for j in 1..=6 {
            if j == 3 {
                let expected = dense_solve(&t.diag_block(3).shifted(-lambda), &CMatrix::identity(2)).unwrap();
                assert!((g.block(j) - &expected).max_abs() < 1e-12);
            } else {
                assert!(g.block(j).max_abs() < 1e-12);
            }
        }
    }

    #[test]
    fn green_column_residual() {
        let fam = OperatorFamily::random(3, 5);
        let t = assemble_truncation(&fam, 40).unwrap();
        let lambda = Complex64::new(-0.3, 0.7);
        let g = green_column(&t, lambda, 7).unwrap();
        let x = g.stacked();
        let res = &t.dense().shifted(-lambda).matmul(&x) - &unit_block_column(40, 3, 7);
        assert!(res.max_abs() < 1e-9);
    }

    #[test]
    fn free_chain_continued_fraction() {
        let t = assemble_truncation(&OperatorFamily::scalar_free(), 400).unwrap();
        let g = green_column(&t, real(-3.0), 1).unwrap();
        let m = (3.0 - 5f64.sqrt()) / 2.0;
        assert!((g.block(1)[(0, 0)].re - m).abs() < 1e-12);
        let norms = g.norms().unwrap();
        for n in 50..200 {
            assert!((norms[n - 1] / norms[n] - 1.0 / m).abs() < 1e-8);
        }
    }

    #[test]
    fn near_spectrum_rejected() {
        let t = assemble_truncation(&OperatorFamily::scalar_free(), 2).unwrap();
        assert!(matches!(green_column(&t, real(1.0), 1), Err(Error::NearSpectrum { .. })));
        assert!(matches!(green_column(&t, real(1.0 + 1e-8), 1), Err(Error::NearSpectrum { .. })));
        assert!(green_column(&t, real(1.0 + 1e-3), 1).is_ok());
        assert!(green_column(&t, real(0.5), 3).is_err());
    }

    #[test]
    fn resolvent_adjoint_symmetry() {
        for seed in 0..3 {
            let fam = OperatorFamily::random(2, seed);
            let t = assemble_truncation(&fam, 30).unwrap();
            let lambda = Complex64::new(-2.0, -1.0);
            let gk = green_column(&t, lambda, 4).unwrap();
            for j in [1, 4, 17, 30] {
                let gj = green_column(&t, lambda.conj(), j).unwrap();
                let diff = &gk.block(j).adjoint() - gj.block(4);
                assert!(diff.max_abs() < 1e-8);
            }
        }
    }

    #[test]
    fn first_resolvent_identity() {
        let fam = OperatorFamily::random(2, 11);
        let t = assemble_truncation(&fam, 25).unwrap();
        let (l1, l2) = (Complex64::new(-1.0, 0.5), Complex64::new(0.3, -0.8));
        let g1 = green_column(&t, l1, 2).unwrap().stacked();
        let g2 = green_column(&t, l2, 2).unwrap().stacked();
        // G(λ₁)G(λ₂)e_k via a solve of the second column at λ₁
        let prod = t.factor(l1).unwrap().solve(&g2).unwrap();
        let lhs = &g1 - &g2;
        let rhs = prod.scale_complex(l1 - l2);
        assert!((&lhs - &rhs).max_abs() < 1e-7);
    }

    #[test]
    fn free_chain_has_nothing_below_edge() {
        let t = assemble_truncation(&OperatorFamily::scalar_free(), 200).unwrap();
        assert!(eigenpairs_below(&t, -2.0).unwrap().is_empty());
        let dense = hermitian_eig(&t.dense()).unwrap();
        assert!(dense.values[0] >= -2.0 - 1e-6);
    }

    #[test]
    fn uncoupled_eigenvalues() {
        let fam = OperatorFamily::new(
            1,
            "uncoupled",
            |_| CMatrix::scalar(1, 1e-14),
            |n| CMatrix::scalar(1, -1.0 / n as f64),
        );
        let t = assemble_truncation(&fam, 20).unwrap();
        let pairs = eigenpairs_below(&t, 0.0).unwrap();
        assert_eq!(pairs.len(), 20);
        for (i, p) in pairs.iter().enumerate() {
            assert!((p.value + 1.0 / (i + 1) as f64).abs() < 1e-12);
            assert!((vec_norm(&p.vector) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bound_states_match_dense() {
        let fam = bound_state_family();
        let t = assemble_truncation(&fam, 300).unwrap();
        let pairs = eigenpairs_below(&t, 0.0).unwrap();
        assert!(!pairs.is_empty());
        for p in &pairs {
            assert!(p.tail_norm <= 1e-8, "{}", p.tail_norm);
            assert!(!p.boundary_suspect);
            let tv = t.apply(&p.vector).unwrap();
            let res: Vec<Complex64> = tv.iter().zip(&p.vector).map(|(a, b)| a - b * p.value).collect();
            assert!(vec_norm(&res) < 1e-9, "{} {} {}", p.value, vec_norm(&res), p.tail_norm);
        }
        let small = assemble_truncation(&fam, 60).unwrap();
        let dense = hermitian_eig(&small.dense()).unwrap();
        let below: Vec<f64> = dense.values.iter().copied().filter(|&v| v < 0.0).collect();
        let found: Vec<f64> = eigenpairs_below(&small, 0.0).unwrap().iter().map(|p| p.value).collect();
        assert_eq!(below.len(), found.len());
        for (a, b) in below.iter().zip(&found) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn degenerate_pair_is_orthonormal() {
        let t = assemble_truncation(&bound_state_family(), 100).unwrap();
        let pairs = eigenpairs_below(&t, 0.0).unwrap();
        assert!(pairs.len() >= 2);
        assert!((pairs[0].value - pairs[1].value).abs() < 1e-9);
        let overlap = vec_dot(&pairs[0].vector, &pairs[1].vector).norm();
        assert!(overlap < 1e-10);
    }

    #[test]
    fn tails_keep_relative_accuracy() {
        // the decoupled scalar problem gives the same profile; compare the
        // ratio of consecutive block norms deep in the tail
        let fam = bound_state_family();
        let t = assemble_truncation(&fam, 200).unwrap();
        let v = &eigenpairs_below(&t, 0.0).unwrap()[0];
        let norms = v.block_norms(2);
        assert!(norms[150] > 0.0 && norms[150] < 1e-40);
        // u solves the recurrence A_{m-1}^* u_{m-1} + (B_m − λ) u_m + A_m u_{m+1} = 0
        for m in [50usize, 100, 150] {
            let (a_prev, b_m, a_m) = (
                t.offdiag_block(m - 1),
                t.diag_block(m),
                t.offdiag_block(m),
            );
            let u = |k: usize| &v.vector[(k - 1) * 2..k * 2];
            let mut r = a_prev.adjoint().matvec(u(m - 1));
            let mid = b_m.shifted(real(-v.value)).matvec(u(m));
            let next = a_m.matvec(u(m + 1));
            for i in 0..2 {
                r[i] += mid[i] + next[i];
            }
            assert!(vec_norm(&r) <= 1e-8 * vec_norm(u(m)) * b_m.max_abs(), "m={m}");
        }
    }

    #[test]
    fn perturbation_basics() {
        let t = assemble_truncation(&bound_state_family(), 20).unwrap();
        let same = perturbed_truncation(&t, 0.0, &CMatrix::identity(2)).unwrap();
        assert_eq!(same.dense(), t.dense());
        let p = perturbed_truncation(&t, 0.1, &CMatrix::identity(2)).unwrap();
        let diff = &p.diag_block(1).clone() - t.diag_block(1);
        assert!((&diff - &CMatrix::scalar(2, 0.1)).max_abs() < 1e-15);
        assert!(perturbed_truncation(&t, 0.1, &CMatrix::scalar(2, 2.0)).is_err());
        let rank_one = CMatrix::from_real_rows(&[[1.0, 0.0], [0.0, 0.0]]);
        assert!(perturbed_truncation(&t, 0.1, &rank_one).is_err());
    }

    #[test]
    fn perturbation_moves_eigenvalue() {
        let t = assemble_truncation(&bound_state_family(), 80).unwrap();
        let lambda0 = eigenpairs_below(&t, 0.0).unwrap()[0].value;
        let mut prev = 0.0;
        for tau in [1e-3, 1e-2, 1e-1] {
            let p = perturbed_truncation(&t, tau, &CMatrix::identity(2)).unwrap();
            let d = p.distance_to_spectrum(real(lambda0)).unwrap();
            assert!(d > 0.0 && d >= prev, "τ={tau}: {d}");
            prev = d;
        }
    }

    #[test]
    fn free_chain_green_report() {
        let p = params(-3.0, -2.0);
        let r = verify_green_decay(&OperatorFamily::scalar_free(), &p, 400, 1, None).unwrap();
        assert!(r.gamma < 0.9624);
        assert!(r.all_pass());
        assert_eq!(r.row(1).envelope, 1.0);
        assert_eq!(r.rows.iter().filter(|r| r.verdict == Verdict::Excluded).count(), 40);
        assert!(r.qualified_c.unwrap() > 0.0);
    }

    #[test]
    fn report_serialization() {
        let p = params(-3.0, -2.0);
        let r = verify_green_decay(&OperatorFamily::scalar_free(), &p, 30, 2, Some((2, 5))).unwrap();
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(lines.next(), Some("index,measured,envelope,ratio,verdict"));
        assert_eq!(csv.lines().count(), 32);
        assert!(csv.lines().nth(3).unwrap().starts_with("2,"));
        let json = r.summary_json();
        assert_eq!(json["pass_fraction"], 1.0);
        assert_eq!(json["params"]["b"], -2.0);
        assert!(json["fitted_C"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn calibration_validation() {
        let p = params(-3.0, -2.0);
        let fam = OperatorFamily::scalar_free();
        assert!(verify_green_decay(&fam, &p, 30, 1, Some((0, 4))).is_err());
        assert!(verify_green_decay(&fam, &p, 30, 1, Some((5, 4))).is_err());
        assert!(verify_green_decay(&fam, &p, 30, 1, Some((29, 30))).is_err());
        assert!(verify_green_decay(&fam, &p, 30, 29, None).is_err());
    }

    #[test]
    fn eigenvector_report_requires_spectrum() {
        let err = verify_eigenvector_decay(
            &OperatorFamily::scalar_free(),
            &params(-3.0, -2.0),
            40,
            EigenSelector::ByIndex(0),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptySpectrum { .. }));
    }

    #[test]
    fn eigenvector_of_uncoupled_family() {
        let fam = OperatorFamily::new(
            1,
            "uncoupled",
            |_| CMatrix::scalar(1, 1e-14),
            |n| CMatrix::scalar(1, if n == 1 { -1.0 } else { 1.0 }),
        );
        let r = verify_eigenvector_decay(&fam, &params(-3.0, 0.0), 30, EigenSelector::ByIndex(0), None).unwrap();
        assert!(r.all_pass());
        assert!((r.row(1).measured - 1.0).abs() < 1e-12);
        assert!(r.row(5).measured < 1e-40);
    }

    #[test]
    fn selector_ties_go_low() {
        let mk = |v: f64| Eigenpair {
            value: v,
            vector: vec![],
            tail_norm: 0.0,
            boundary_suspect: false,
        };
        let pairs = [mk(-3.0), mk(-1.0), mk(1.0)];
        assert_eq!(select_eigenpair(&pairs, EigenSelector::Nearest(0.0)).unwrap(), 1);
        assert_eq!(select_eigenpair(&pairs, EigenSelector::Nearest(-2.0)).unwrap(), 0);
        assert_eq!(select_eigenpair(&pairs, EigenSelector::Nearest(5.0)).unwrap(), 2);
        assert!(select_eigenpair(&pairs, EigenSelector::ByIndex(3)).is_err());
    }

    #[test]
    fn commuting_report_matches_green_for_scalar_abs() {
        let fam = st_family(StParams::new(2.0, 2.0, 0.6).unwrap());
        let p = params(-1.0, 0.0);
        let g = verify_green_decay(&fam, &p, 100, 1, None).unwrap();
        let c = verify_commuting_decay(&fam, &p, 100, 1, None).unwrap();
        for (a, b) in g.rows.iter().zip(&c.rows) {
            assert_eq!(a.verdict, b.verdict);
            assert!((a.ratio() - b.measured).abs() <= 1e-9 * a.ratio());
        }
    }
}
