use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAX_POLY_DEGREE: usize = 8;

const MAX_ITERATIONS: usize = 500;
const RESIDUAL_TOL: f64 = 1e-10;
// Fixed angular offset of the starting circle, avoids symmetric stalls.
const START_ANGLE: f64 = 0.4;

/// Evaluates `sum c_i x^i` (coefficients in ascending order) and its
/// derivative by Horner's rule.
pub fn poly_eval(coeffs: &[Complex64], x: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &c in coeffs.iter().rev() {
        dp = dp * x + p;
        p = p * x + c;
    }
    (p, dp)
}

fn residual_scale(coeffs: &[Complex64], x: Complex64) -> f64 {
    let r = x.norm();
    coeffs.iter().rev().fold(0.0, |acc, c| acc * r + c.norm())
}

/// All complex roots of `sum coeffs[i] x^i` by the Aberth–Ehrlich
/// simultaneous iteration.
///
/// Coefficients are in ascending order of power. Starting points lie on the
/// circle of radius `1 + max |c_i / c_n|` at fixed angles, so repeated calls
/// give identical roots. Each root must satisfy
/// `|p(x)| <= 1e-10 * sum |c_i| |x|^i` on exit.
pub fn poly_roots(coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
    let degree = coeffs.len().saturating_sub(1);
    if degree == 0 {
        return Err(Error::InvalidInput("polynomial must have degree >= 1".into()));
    }
    if degree > MAX_POLY_DEGREE {
        return Err(Error::InvalidInput(format!(
            "polynomial degree {degree} exceeds {MAX_POLY_DEGREE}"
        )));
    }
    let lead = coeffs[degree];
    if lead.norm() == 0.0 {
        return Err(Error::InvalidInput("leading coefficient is zero".into()));
    }
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput("non-finite coefficient".into()));
    }

    let radius = 1.0
        + coeffs[..degree]
            .iter()
            .map(|c| (c / lead).norm())
            .fold(0.0, f64::max);
    let mut z: Vec<Complex64> = (0..degree)
        .map(|k| {
            let angle = START_ANGLE + 2.0 * std::f64::consts::PI * k as f64 / degree as f64;
            Complex64::from_polar(radius, angle)
        })
        .collect();

    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let mut max_step: f64 = 0.0;
        for i in 0..degree {
            let (p, dp) = poly_eval(coeffs, z[i]);
            if p.norm() == 0.0 {
                continue;
            }
            let ratio = p / dp;
            let repulsion: Complex64 = (0..degree)
                .filter(|&j| j != i)
                .map(|j| {
                    let diff = z[i] - z[j];
                    if diff.norm() == 0.0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        1.0 / diff
                    }
                })
                .sum();
            let step = ratio / (1.0 - ratio * repulsion);
            if step.is_finite() {
                z[i] -= step;
                max_step = max_step.max(step.norm() / (1.0 + z[i].norm()));
            }
        }
        if max_step <= 4.0 * f64::EPSILON {
            converged = true;
            break;
        }
    }

    // Newton polish; harmless when already converged.
    for zi in z.iter_mut() {
        for _ in 0..2 {
            let (p, dp) = poly_eval(coeffs, *zi);
            if dp.norm() > 0.0 && p.norm() > 0.0 {
                let next = *zi - p / dp;
                if poly_eval(coeffs, next).0.norm() < p.norm() {
                    *zi = next;
                }
            }
        }
    }

    let worst = z
        .iter()
        .map(|&x| poly_eval(coeffs, x).0.norm() / residual_scale(coeffs, x).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    if worst > RESIDUAL_TOL || (!converged && !worst.is_finite()) {
        return Err(Error::NonConvergence {
            method: "Aberth root iteration",
            iterations: MAX_ITERATIONS,
            residual: worst,
        });
    }
    z.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(z)
}
