//! Decay envelopes for the Green matrix and eigenvectors.
//!
//! With `ψ(x) = x² eˣ` and `φ_δ(x) = δ^{-1/2}` for `x < δ`, `x^{-1/2}`
//! otherwise, the decay rate below the essential spectrum edge `b` is
//!
//! ```text
//! γ(λ) = √δ ψ⁻¹((b − Re λ)(1 − ε) / δ)
//! ```
//!
//! and the envelope between block indices `j <= k` is
//! `exp(−γ Σ_{m=j}^{k−1} φ_δ(‖A_m‖))`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{psd_matfunc, spectral_norm, CMatrix};
use crate::operator::{check_commutation, BlockMatrix, OperatorFamily};

/// Corollary mode enlarges δ until `(b − Re λ)(1 − ε)/δ` is at most this.
pub const COROLLARY_PSI_ARGUMENT: f64 = 0.01;

pub const DEFAULT_DELTA: f64 = 1.0;
pub const DEFAULT_EPSILON: f64 = 0.1;

const BISECTION_WIDTH: f64 = 1e-8;
const NEWTON_STEPS: usize = 5;

/// The parameters `(λ, b, δ, ε)` shared by every envelope formula.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    lambda: Complex64,
    b: f64,
    delta: f64,
    epsilon: f64,
}

impl BoundParams {
    /// Validates `Re λ < b`, `δ > 0` and `0 < ε < 1`.
    pub fn new(lambda: Complex64, b: f64, delta: f64, epsilon: f64) -> Result<Self> {
        if !(lambda.re.is_finite() && lambda.im.is_finite() && b.is_finite()) {
            return invalid("λ and b must be finite");
        }
        if lambda.re >= b {
            return invalid(format!("Re λ = {} must lie below b = {b}", lambda.re));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return invalid(format!("δ must be positive (got {delta})"));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return invalid(format!("ε must lie in (0, 1) (got {epsilon})"));
        }
        Ok(Self {
            lambda,
            b,
            delta,
            epsilon,
        })
    }

    /// Real λ with default δ and ε.
    pub fn real(lambda: f64, b: f64) -> Result<Self> {
        Self::new(Complex64::new(lambda, 0.0), b, DEFAULT_DELTA, DEFAULT_EPSILON)
    }

    pub fn lambda(&self) -> Complex64 {
        self.lambda
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `b − Re λ`, always positive.
    pub fn gap(&self) -> f64 {
        self.b - self.lambda.re
    }

    pub fn with_lambda(&self, lambda: Complex64) -> Result<Self> {
        Self::new(lambda, self.b, self.delta, self.epsilon)
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Self::new(self.lambda, self.b, delta, self.epsilon)
    }

    /// `(λ + c, b + c)`; every envelope is unchanged.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        Self::new(self.lambda + c, self.b + c, self.delta, self.epsilon)
    }
}

/// `ψ(x) = x² eˣ`.
pub fn psi(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return invalid(format!("ψ is defined for x >= 0 (got {x})"));
    }
    Ok(x * x * x.exp())
}

fn psi_unchecked(x: f64) -> f64 {
    x * x * x.exp()
}

/// Inverse of `ψ` on `[0, ∞)`.
///
/// Bisection on a bracket until its width is below `1e-8` (relative for
/// small arguments), then Newton steps kept inside the bracket.
pub fn psi_inv(t: f64) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return invalid(format!("ψ⁻¹ is defined for finite t >= 0 (got {t})"));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    // ψ(x) >= x² everywhere and ψ(x) <= e x² on [0, 1].
    let (mut lo, mut hi) = if t <= 1.0 {
        ((t / std::f64::consts::E).sqrt(), t.sqrt())
    } else {
        let mut hi: f64 = 1.0;
        while psi_unchecked(hi) < t {
            hi *= 2.0;
        }
        (hi / 2.0, hi)
    };
    while hi - lo > BISECTION_WIDTH * hi.min(1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if psi_unchecked(mid) < t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..NEWTON_STEPS {
        let f = psi_unchecked(x) - t;
        let df = (2.0 * x + x * x) * x.exp();
        if f == 0.0 || df == 0.0 {
            break;
        }
        let next = x - f / df;
        if !(next > lo - BISECTION_WIDTH * hi && next < hi + BISECTION_WIDTH * hi) {
            break;
        }
        if next == x {
            break;
        }
        x = next;
    }
    Ok(x)
}

/// `φ_δ(x) = δ^{-1/2}` for `x < δ`, `x^{-1/2}` otherwise.
pub fn phi_delta(x: f64, delta: f64) -> f64 {
    if x < delta {
        1.0 / delta.sqrt()
    } else {
        1.0 / x.sqrt()
    }
}

/// `γ(λ) = √δ ψ⁻¹((b − Re λ)(1 − ε)/δ)`.
pub fn gamma_rate(p: &BoundParams) -> f64 {
    let arg = p.gap() * (1.0 - p.epsilon) / p.delta;
    p.delta.sqrt() * psi_inv(arg).expect("argument is positive and finite")
}

/// The simplified rate `(1 − ε)√(b − Re λ)`.
pub fn simplified_rate(p: &BoundParams) -> f64 {
    (1.0 - p.epsilon) * p.gap().sqrt()
}

/// Smallest δ, not below `p.delta`, with `(b − Re λ)(1 − ε)/δ <= 0.01`.
pub fn corollary_delta(p: &BoundParams) -> f64 {
    p.delta
        .max(p.gap() * (1.0 - p.epsilon) / COROLLARY_PSI_ARGUMENT)
}

/// `p` with δ replaced by [`corollary_delta`].
pub fn corollary_params(p: &BoundParams) -> BoundParams {
    p.with_delta(corollary_delta(p))
        .expect("enlarged δ is positive")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvelopeMode {
    ScalarNorm,
    Operator,
}

/// Scalar envelope: `γ` and the cumulative sums
/// `S_m = Σ_{k<m} φ_δ(‖A_k‖)`, `S_1 = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayEnvelope {
    pub gamma: f64,
    pub params: BoundParams,
    pub mode: EnvelopeMode,
    cumulative: Vec<f64>,
}

impl DecayEnvelope {
    pub fn nblocks(&self) -> usize {
        self.cumulative.len()
    }

    /// `S_1, ..., S_N`.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// `S_m`, 1-based.
    pub fn sum_at(&self, m: usize) -> f64 {
        self.cumulative[m - 1]
    }

    /// `exp(−γ |S_j − S_k|)`.
    pub fn between(&self, j: usize, k: usize) -> f64 {
        (-self.gamma * (self.sum_at(j) - self.sum_at(k)).abs()).exp()
    }

    /// `exp(−γ S_m)`, the envelope anchored at the first block.
    pub fn from_start(&self, m: usize) -> f64 {
        self.between(m, 1)
    }
}

/// Builds the scalar envelope over blocks `1..=N`.
pub fn scalar_envelope(family: &OperatorFamily, p: &BoundParams, nblocks: usize) -> Result<DecayEnvelope> {
    if nblocks == 0 {
        return invalid("envelope needs at least one block");
    }
    let mut cumulative = Vec::with_capacity(nblocks);
    let mut s = 0.0;
    cumulative.push(s);
    for k in 1..nblocks {
        s += phi_delta(spectral_norm(&family.offdiag(k)?)?, p.delta);
        cumulative.push(s);
    }
    Ok(DecayEnvelope {
        gamma: gamma_rate(p),
        params: *p,
        mode: EnvelopeMode::ScalarNorm,
        cumulative,
    })
}

/// Operator-valued envelope of a commuting family: the Hermitian sums
/// `Φ_m = Σ_{k<m} φ_δ(|A_k|)` and weights `W_m = exp(γ Φ_m)`.
#[derive(Clone, Debug)]
pub struct OperatorEnvelope {
    pub gamma: f64,
    pub params: BoundParams,
    sums: Vec<BlockMatrix>,
}

impl OperatorEnvelope {
    pub fn nblocks(&self) -> usize {
        self.sums.len()
    }

    /// `Φ_m`, 1-based.
    pub fn sum_at(&self, m: usize) -> &BlockMatrix {
        &self.sums[m - 1]
    }

    /// `W_m = exp(γ Φ_m)`, 1-based; `W_1 = I`.
    pub fn weight(&self, m: usize) -> Result<BlockMatrix> {
        psd_matfunc(self.sum_at(m), |x| (self.gamma * x).exp())
    }

    /// All weights `W_1, ..., W_N`.
    pub fn weights(&self) -> Result<Vec<BlockMatrix>> {
        (1..=self.nblocks()).map(|m| self.weight(m)).collect()
    }

    /// `exp(γ |Φ_m − Φ_j|)`; the difference is semidefinite because the
    /// terms commute and are positive.
    pub fn weight_between(&self, m: usize, j: usize) -> Result<BlockMatrix> {
        let (hi, lo) = if m >= j { (m, j) } else { (j, m) };
        let diff = self.sum_at(hi) - self.sum_at(lo);
        psd_matfunc(&diff.hermitian_part(), |x| (self.gamma * x).exp())
    }
}

/// Builds the operator envelope after checking pairwise commutation of
/// `{A_m, B_m, A_m^*}` for `m <= N`.
pub fn operator_envelope(family: &OperatorFamily, p: &BoundParams, nblocks: usize) -> Result<OperatorEnvelope> {
    if nblocks == 0 {
        return invalid("envelope needs at least one block");
    }
    check_commutation(family, nblocks)?;
    let d = family.dim();
    let mut sums = Vec::with_capacity(nblocks);
    let mut acc = CMatrix::zeros(d, d);
    sums.push(acc.clone());
    for k in 1..nblocks {
        let a = family.offdiag(k)?;
        // φ_δ(|A|) = g(A*A) with g(x) = φ_δ(√x)
        let term = psd_matfunc(&a.adjoint().matmul(&a), |x| phi_delta(x.sqrt(), p.delta))?;
        acc = &acc + &term;
        sums.push(acc.clone());
    }
    Ok(OperatorEnvelope {
        gamma: gamma_rate(p),
        params: *p,
        sums,
    })
}

/// Closed-form bound on the constant of the scalar envelope,
/// `2(1 + gap/dist · e^{γM/√δ}) / (ε(b − Re λ))`, where `gap` is
/// `|b − min σ_p|` (zero when nothing lies below `b`) and `dist` is the
/// distance from λ to the spectrum.
pub fn qualified_constant(p: &BoundParams, m: usize, dist_sigma: f64, min_eig_gap: f64) -> Result<f64> {
    if !(dist_sigma > 0.0) || !dist_sigma.is_finite() {
        return invalid(format!("distance to the spectrum must be positive (got {dist_sigma})"));
    }
    if !min_eig_gap.is_finite() {
        return invalid("eigenvalue gap must be finite");
    }
    let gamma = gamma_rate(p);
    let growth = (gamma * m as f64 / p.delta.sqrt()).exp();
    Ok(2.0 * (1.0 + min_eig_gap.abs() / dist_sigma * growth) / (p.epsilon * p.gap()))
}
