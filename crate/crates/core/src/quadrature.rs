//! Adaptive Simpson quadrature on finite intervals and half-lines.

use crate::error::{EsregError, Result};

/// Adaptive Simpson rule on `[a, b]` with absolute tolerance `tol`.
pub fn adaptive_simpson<F>(f: &F, a: f64, b: f64, tol: f64, max_depth: u32) -> Result<f64>
where
    F: Fn(f64) -> f64 + ?Sized,
{
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let value = simpson_step(f, a, b, fa, fm, fb, whole, tol, max_depth);
    if value.is_finite() {
        Ok(value)
    } else {
        Err(EsregError::Quadrature(format!(
            "non-finite integral on [{a}, {b}]"
        )))
    }
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64
where
    F: Fn(f64) -> f64 + ?Sized,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    // The second test stops refinement once the difference is round-off.
    if depth == 0 || delta.abs() <= 15.0 * tol || delta.abs() <= 64.0 * f64::EPSILON * (left.abs() + right.abs()) {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Integral of `f` over `(-inf, upper]` via the substitution
/// `x = upper - (1 - s) / s`, `s in (0, 1]`.
pub fn integrate_lower_tail<F>(f: &F, upper: f64, tol: f64, max_depth: u32) -> Result<f64>
where
    F: Fn(f64) -> f64 + ?Sized,
{
    let g = |s: f64| {
        if s <= 0.0 {
            return 0.0;
        }
        let x = upper - (1.0 - s) / s;
        let v = f(x) / (s * s);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    adaptive_simpson(&g, 0.0, 1.0, tol, max_depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::norm_pdf;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_is_exact() {
        let v = adaptive_simpson(&|x: f64| x * x * x - x, 0.0, 2.0, 1e-12, 30).unwrap();
        assert_relative_eq!(v, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn normal_lower_tail() {
        let v = integrate_lower_tail(&norm_pdf, 0.0, 1e-12, 50).unwrap();
        assert_relative_eq!(v, 0.5, epsilon = 1e-9);
        let m = integrate_lower_tail(&|x: f64| x * norm_pdf(x), 0.0, 1e-12, 50).unwrap();
        assert_relative_eq!(m, -norm_pdf(0.0), epsilon = 1e-9);
    }
}
