//! The noncommuting 2×2 family
//!
//! ```text
//! A_n = n^α [[0, 1], [1, 0]],   B_n = n^α diag(s, t),   s, t > 0
//! ```
//!
//! together with its transfer matrices, the formal decay profile of
//! solutions in the threshold case `st = 4`, and the phase of the essential
//! spectrum as a function of `st`.
//!
//! The transfer matrix `𝓑_n = [[0, I], [−A_n⁻¹A_{n−1}, A_n⁻¹(λ − B_n)]]`
//! has characteristic polynomial `μ⁴ + (2ρ − m₁m₂)μ² + ρ²` with
//! `ρ = ((n−1)/n)^α`, `m₁ = (λ − s n^α)/n^α` and `m₂ = (λ − t n^α)/n^α`.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{determinant, poly_roots, CMatrix};
use crate::operator::OperatorFamily;

/// Band around `st = 4` treated as the threshold.
pub const THRESHOLD_TOL: f64 = 1e-9;

/// Root magnitudes closer than this count as a tie when picking the
/// decaying root.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StParams {
    s: f64,
    t: f64,
    alpha: f64,
}

impl StParams {
    pub fn new(s: f64, t: f64, alpha: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite() && t > 0.0 && t.is_finite()) {
            return invalid(format!("s and t must be positive (got s={s}, t={t})"));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return invalid(format!("alpha must lie in (0, 1) (got {alpha})"));
        }
        Ok(Self { s, t, alpha })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `r_n = n^α`.
    pub fn r(&self, n: usize) -> f64 {
        (n as f64).powf(self.alpha)
    }

    pub fn is_threshold(&self) -> bool {
        (self.s * self.t - 4.0).abs() <= THRESHOLD_TOL
    }
}

/// The family as an [`OperatorFamily`]; `edge_b = 0` at the threshold.
pub fn st_family(p: StParams) -> OperatorFamily {
    let label = format!("st:s={},t={},alpha={}", p.s, p.t, p.alpha);
    let fam = OperatorFamily::new(
        2,
        label,
        move |n| {
            let r = p.r(n);
            CMatrix::from_real_rows(&[[0.0, r], [r, 0.0]])
        },
        move |n| {
            let r = p.r(n);
            CMatrix::from_real_diag(&[p.s * r, p.t * r])
        },
    );
    if p.is_threshold() {
        fam.with_edge(0.0)
    } else {
        fam
    }
}

/// The constant family `A = [[0, 1], [1, 0]]`, `B = diag(s, t)`.
pub fn jc_family(s: f64, t: f64) -> Result<OperatorFamily> {
    if !(s > 0.0 && t > 0.0) {
        return invalid(format!("s and t must be positive (got s={s}, t={t})"));
    }
    OperatorFamily::constant(
        format!("jc:s={s},t={t}"),
        CMatrix::from_real_rows(&[[0.0, 1.0], [1.0, 0.0]]),
        CMatrix::from_real_diag(&[s, t]),
    )
}

/// `inf σ(J_c) >= (st − 4) / ((s + t)/2 + √(((t − s)/2)² + 4))`.
pub fn jc_lower_bound(s: f64, t: f64) -> f64 {
    let half_diff = 0.5 * (t - s);
    (s * t - 4.0) / (0.5 * (s + t) + (half_diff * half_diff + 4.0).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferMatrix {
    pub n: usize,
    pub lambda: f64,
    pub params: StParams,
    pub entries: CMatrix,
}

impl TransferMatrix {
    pub fn determinant(&self) -> f64 {
        determinant(&self.entries).re
    }
}

fn check_index(n: usize) -> Result<()> {
    if n < 2 {
        return invalid(format!("transfer matrices need n >= 2 (got {n})"));
    }
    Ok(())
}

/// `𝓑_n` as a 4×4 matrix.
pub fn transfer_matrix(p: StParams, lambda: f64, n: usize) -> Result<TransferMatrix> {
    check_index(n)?;
    let r = p.r(n);
    let rho = p.r(n - 1) / r;
    let m1 = (lambda - p.s * r) / r;
    let m2 = (lambda - p.t * r) / r;
    // A_n⁻¹(λ − B_n) = [[0, m2], [m1, 0]]
    let entries = CMatrix::from_real_rows(&[
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [-rho, 0.0, 0.0, m2],
        [0.0, -rho, m1, 0.0],
    ]);
    Ok(TransferMatrix {
        n,
        lambda,
        params: p,
        entries,
    })
}

/// Coefficients of `det(𝓑_n − μI)` in ascending powers of `μ`.
pub fn characteristic_coefficients(p: StParams, lambda: f64, n: usize) -> Result<[f64; 5]> {
    check_index(n)?;
    let r = p.r(n);
    let rho = p.r(n - 1) / r;
    let m1 = (lambda - p.s * r) / r;
    let m2 = (lambda - p.t * r) / r;
    Ok([rho * rho, 0.0, 2.0 * rho - m1 * m2, 0.0, 1.0])
}

fn by_magnitude(a: &Complex64, b: &Complex64) -> std::cmp::Ordering {
    a.norm()
        .total_cmp(&b.norm())
        .then(a.re.total_cmp(&b.re))
        .then(a.im.total_cmp(&b.im))
}

/// The four eigenvalues of `𝓑_n`, ordered by magnitude.
pub fn transfer_eigenvalues(p: StParams, lambda: f64, n: usize) -> Result<[Complex64; 4]> {
    let coeffs = characteristic_coefficients(p, lambda, n)?;
    let c: Vec<Complex64> = coeffs.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let mut roots = poly_roots(&c)?;
    roots.sort_by(by_magnitude);
    Ok([roots[0], roots[1], roots[2], roots[3]])
}

/// Asymptotic eigenvalues at the threshold `st = 4`:
///
/// ```text
/// ∓[1 ± (i√λ/2) n^{−α/2} √(s+t) − (s+t)λ/(4n^α)]
/// ```
///
/// with `i√λ = −√(−λ)`. Returned in the order
/// `(−,+), (−,−), (+,+), (+,−)` of the sign choices, so entries 0 and 2
/// are the decaying pair. The dropped terms are `O(n^{α/2−1})`.
pub fn mu_asymptotic(p: StParams, lambda: f64, n: usize) -> Result<[f64; 4]> {
    if !p.is_threshold() {
        return invalid(format!(
            "asymptotic roots need st = 4 (got st = {})",
            p.s * p.t
        ));
    }
    if !(p.alpha > 0.5 && p.alpha < 1.0) {
        return invalid(format!("asymptotic roots need alpha in (1/2, 1) (got {})", p.alpha));
    }
    if !(lambda < 0.0) {
        return invalid(format!("asymptotic roots need λ < 0 (got {lambda})"));
    }
    if n == 0 {
        return invalid("n must be positive");
    }
    let nf = n as f64;
    let sum = p.s + p.t;
    let i_sqrt_lambda = -(-lambda).sqrt();
    let linear = 0.5 * i_sqrt_lambda * nf.powf(-0.5 * p.alpha) * sum.sqrt();
    let quadratic = -sum * lambda / (4.0 * nf.powf(p.alpha));
    let mut out = [0.0; 4];
    let mut i = 0;
    for outer in [-1.0, 1.0] {
        for inner in [1.0, -1.0] {
            out[i] = outer * (1.0 + inner * linear + quadratic);
            i += 1;
        }
    }
    Ok(out)
}

/// Largest distance between each asymptotic value and its nearest exact
/// transfer eigenvalue.
pub fn asymptotic_error(p: StParams, lambda: f64, n: usize) -> Result<f64> {
    let asym = mu_asymptotic(p, lambda, n)?;
    let exact = transfer_eigenvalues(p, lambda, n)?;
    Ok(asym
        .iter()
        .map(|&a| {
            exact
                .iter()
                .map(|e| (e - a).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max))
}

/// The formal decay profile `Π_{k=n0}^{n} |μ_dec(k)|` at the threshold,
/// with its closed-form comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevinsonProfile {
    pub n0: usize,
    pub n: usize,
    pub log_product: f64,
    /// `−(√(−λ(s+t))/2) n^{1−α/2} / (1 − α/2)`.
    pub log_closed_form: f64,
    /// Indices where two different roots shared the smallest magnitude.
    pub ties: Vec<usize>,
}

impl LevinsonProfile {
    pub fn product(&self) -> f64 {
        self.log_product.exp()
    }

    pub fn closed_form(&self) -> f64 {
        self.log_closed_form.exp()
    }

    /// `log(product) / log(closed form)`.
    pub fn ratio(&self) -> f64 {
        self.log_product / self.log_closed_form
    }
}

/// Smallest-magnitude transfer eigenvalue at index `k`, and whether it ties
/// with a root whose square differs.
///
/// The characteristic polynomial is even in `μ`, so `±μ` always share a
/// magnitude; only ties between distinct `μ²` are reported.
pub fn decaying_root(p: StParams, lambda: f64, k: usize) -> Result<(Complex64, bool)> {
    let roots = transfer_eigenvalues(p, lambda, k)?;
    let dec = roots[0];
    let sq = dec * dec;
    let tie = roots[1..].iter().any(|r| {
        (r.norm() - dec.norm()).abs() <= TIE_TOL * dec.norm().max(1.0)
            && (r * r - sq).norm() > TIE_TOL * sq.norm().max(1.0)
    });
    Ok((dec, tie))
}

pub fn levinson_profile(p: StParams, lambda: f64, n0: usize, n: usize) -> Result<LevinsonProfile> {
    if !p.is_threshold() {
        return invalid(format!("the decay profile needs st = 4 (got st = {})", p.s * p.t));
    }
    if !(lambda < 0.0) {
        return invalid(format!("the decay profile needs λ < 0 (got {lambda})"));
    }
    if n0 < 2 || n < n0 {
        return invalid(format!("need n >= n0 >= 2 (got n0={n0}, n={n})"));
    }
    let mut log_product = 0.0;
    let mut ties = Vec::new();
    for k in n0..=n {
        let (mu, tie) = decaying_root(p, lambda, k)?;
        let m = mu.norm();
        if !(m < 1.0) {
            return invalid(format!("no transfer eigenvalue of magnitude < 1 at n = {k}"));
        }
        if tie {
            ties.push(k);
        }
        log_product += m.ln();
    }
    let half = 1.0 - 0.5 * p.alpha;
    let rate = 0.5 * (-lambda * (p.s + p.t)).sqrt();
    Ok(LevinsonProfile {
        n0,
        n,
        log_product,
        log_closed_form: -rate * (n as f64).powf(half) / half,
        ties,
    })
}

/// Phase of the essential spectrum as a function of `st`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseClass {
    /// `st = 4`: essential spectrum in `[0, ∞)`, unbounded gap below.
    GapUnbounded,
    /// `st > 4`: no essential spectrum.
    EssEmpty,
    /// `st < 4`: essential spectrum is the whole line.
    EssFullLine,
}

impl fmt::Display for PhaseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhaseClass::GapUnbounded => "gap_unbounded",
            PhaseClass::EssEmpty => "ess_empty",
            PhaseClass::EssFullLine => "ess_full_line",
        })
    }
}

pub fn phase_class(s: f64, t: f64) -> Result<PhaseClass> {
    if !(s > 0.0 && t > 0.0) {
        return invalid(format!("s and t must be positive (got s={s}, t={t})"));
    }
    let st = s * t;
    Ok(if (st - 4.0).abs() <= THRESHOLD_TOL {
        PhaseClass::GapUnbounded
    } else if st > 4.0 {
        PhaseClass::EssEmpty
    } else {
        PhaseClass::EssFullLine
    })
}
