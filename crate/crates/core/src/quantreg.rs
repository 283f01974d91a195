//! Linear quantile regression.
//!
//! The pinball loss is first minimized by Nelder-Mead from an OLS start and
//! the result is then moved to an exact vertex solution (a fit that
//! interpolates `k` observations) by edge pivoting. The pivoting step works
//! with observation weights so it also solves the `theta_q` sub-problem of
//! the joint loss, which for fixed `theta_e` is a weighted quantile
//! regression.
//!
//! Ties among optimal vertices are broken as if the level were `alpha - 0`,
//! i.e. towards the generalized quantile `inf{z : F(z) >= alpha}` in the
//! intercept-only case.

use crate::error::{EsregError, Result};
use crate::nelder_mead::{self, NelderMeadOptions};
use crate::speclib::linear_predictor;
use nalgebra::{DMatrix, DVector};

/// Relative downward shift of the level used only to order tied vertices.
const TIE_SHIFT: f64 = 1e-9;

#[inline]
pub fn pinball(u: f64, alpha: f64) -> f64 {
    if u < 0.0 {
        (alpha - 1.0) * u
    } else {
        alpha * u
    }
}

/// Mean pinball loss of `y - X beta`.
pub fn mean_pinball(x: &DMatrix<f64>, y: &[f64], alpha: f64, beta: &[f64]) -> f64 {
    let fitted = linear_predictor(x, beta);
    y.iter().zip(&fitted).map(|(y, f)| pinball(y - f, alpha)).sum::<f64>() / y.len() as f64
}

fn weighted_pinball(x: &DMatrix<f64>, y: &[f64], w: &[f64], alpha: f64, beta: &[f64]) -> f64 {
    let fitted = linear_predictor(x, beta);
    y.iter()
        .zip(&fitted)
        .zip(w)
        .map(|((y, f), w)| w * pinball(y - f, alpha))
        .sum()
}

/// Ordinary least squares via the normal equations.
pub fn ols(x: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
    let xt = x.transpose();
    let gram = &xt * x;
    let rhs = &xt * DVector::from_column_slice(y);
    let chol = gram.cholesky().ok_or(EsregError::Singular("X'X in least squares"))?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

#[derive(Debug, Clone)]
pub struct QuantileFit {
    pub coefficients: Vec<f64>,
    /// Mean pinball loss at the solution.
    pub loss: f64,
    /// True when the vertex search certified optimality (or, failing that,
    /// when Nelder-Mead met its tolerance).
    pub converged: bool,
}

/// Quantile regression of `y` on `x` at level `alpha`.
pub fn fit_quantile(
    x: &DMatrix<f64>,
    y: &[f64],
    alpha: f64,
    nm_max_iter: usize,
    nm_tolerance: f64,
) -> Result<QuantileFit> {
    let k = x.ncols();
    let start = ols(x, y)?;
    // shift the OLS intercept-like start towards the target quantile
    let resid: Vec<f64> = y
        .iter()
        .zip(linear_predictor(x, &start))
        .map(|(y, f)| y - f)
        .collect();
    let mut start = start;
    if x.column(0).iter().all(|&v| v == 1.0) {
        start[0] += empirical_quantile_lower(&resid, alpha);
    }
    let scale = {
        let mean = resid.iter().sum::<f64>() / resid.len() as f64;
        (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / resid.len() as f64).sqrt()
    };
    let steps: Vec<f64> = start
        .iter()
        .map(|b| 0.1 * b.abs().max(scale).max(1e-3))
        .collect();
    let nm = nelder_mead::minimize(
        |b| mean_pinball(x, y, alpha, b),
        &start,
        &steps,
        NelderMeadOptions { max_iter: nm_max_iter.max(1), tolerance: nm_tolerance },
    );
    let weights = vec![1.0; y.len()];
    let polish = vertex_polish(x, y, &weights, alpha, &nm.x);
    let loss_nm = nm.fx;
    let (coefficients, optimal) = match polish {
        Some((beta, optimal)) if mean_pinball(x, y, alpha, &beta) <= loss_nm + 1e-12 * (1.0 + loss_nm.abs()) => {
            (beta, optimal)
        }
        _ => (nm.x.clone(), false),
    };
    debug_assert_eq!(coefficients.len(), k);
    let loss = mean_pinball(x, y, alpha, &coefficients);
    Ok(QuantileFit { coefficients, loss, converged: optimal || nm.converged })
}

/// `inf{z : F_n(z) >= alpha}` for the empirical distribution of `v`.
pub fn empirical_quantile_lower(v: &[f64], alpha: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let idx = ((alpha * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1;
    s[idx]
}

/// Weighted quantile regression by edge pivoting from `beta0`.
///
/// Minimizes `sum_i w_i pinball(y_i - x_i' beta)` with all `w_i >= 0`.
/// Returns the vertex solution and whether optimality was certified, or
/// `None` if no non-singular starting basis exists.
pub fn vertex_polish(
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    alpha: f64,
    beta0: &[f64],
) -> Option<(Vec<f64>, bool)> {
    let (n, k) = x.shape();
    let a = alpha * (1.0 - TIE_SHIFT);
    let fitted = linear_predictor(x, beta0);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| (y[i] - fitted[i]).abs().total_cmp(&(y[j] - fitted[j]).abs()));
    let mut basis = choose_basis(x, &order, k)?;
    let mut beta = solve_basis(x, y, &basis)?;
    let mut best = (beta.clone(), weighted_pinball(x, y, w, alpha, beta.as_slice()));

    let max_pivots = 50 * n + 100;
    let y_scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let zero_tol = 1e-11 * y_scale;
    let total_w: f64 = w.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    let slope_tol = 1e-13 * total_w;
    let mut in_basis = vec![false; n];
    let mut optimal = false;

    for _ in 0..max_pivots {
        in_basis.iter_mut().for_each(|b| *b = false);
        basis.iter().for_each(|&i| in_basis[i] = true);
        let xb = basis_matrix(x, &basis);
        let inv = xb.try_inverse()?;
        let fitted = linear_predictor(x, beta.as_slice());
        let resid: Vec<f64> = y.iter().zip(&fitted).map(|(y, f)| y - f).collect();

        // steepest descending edge
        let mut chosen: Option<(usize, Vec<f64>, f64)> = None;
        for (j, &bj) in basis.iter().enumerate() {
            for sign in [1.0, -1.0] {
                let d: Vec<f64> = (0..k).map(|r| sign * inv[(r, j)]).collect();
                let xd = linear_predictor(x, &d);
                // the basis point's own residual moves by -sign
                let mut slope = w[bj] * if sign < 0.0 { a } else { 1.0 - a };
                for i in 0..n {
                    if in_basis[i] {
                        continue;
                    }
                    let dr = -xd[i];
                    let r = resid[i];
                    let positive = if r.abs() <= zero_tol { dr > 0.0 } else { r > 0.0 };
                    slope += w[i] * if positive { a * dr } else { (a - 1.0) * dr };
                }
                if slope < -slope_tol && chosen.as_ref().is_none_or(|c| slope < c.2) {
                    chosen = Some((j, d, slope));
                }
            }
        }
        let Some((leave, d, slope0)) = chosen else {
            optimal = true;
            break;
        };

        // line search over breakpoints along beta + s d
        let xd = linear_predictor(x, &d);
        let mut breaks: Vec<(f64, usize)> = (0..n)
            .filter(|&i| !in_basis[i] && xd[i] != 0.0)
            .filter_map(|i| {
                let s = resid[i] / xd[i];
                (s > 0.0 && resid[i].abs() > zero_tol).then_some((s, i))
            })
            .collect();
        breaks.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut slope = slope0;
        let mut step = None;
        for &(s, i) in &breaks {
            slope += w[i] * xd[i].abs();
            if slope >= -slope_tol {
                step = Some((s, i));
                break;
            }
        }
        let Some((s, enter)) = step else { break };
        for (b, dv) in beta.iter_mut().zip(&d) {
            *b += s * dv;
        }
        basis[leave] = enter;
        // re-solve on the new basis to avoid drift
        match solve_basis(x, y, &basis) {
            Some(b) => beta = b,
            None => break,
        }
        let loss = weighted_pinball(x, y, w, alpha, beta.as_slice());
        if loss < best.1 {
            best = (beta.clone(), loss);
        }
    }
    let final_loss = weighted_pinball(x, y, w, alpha, beta.as_slice());
    if final_loss <= best.1 + 1e-12 * (1.0 + best.1.abs()) {
        Some((beta.as_slice().to_vec(), optimal))
    } else {
        Some((best.0.as_slice().to_vec(), false))
    }
}

fn basis_matrix(x: &DMatrix<f64>, basis: &[usize]) -> DMatrix<f64> {
    let k = x.ncols();
    DMatrix::from_fn(k, k, |r, c| x[(basis[r], c)])
}

fn solve_basis(x: &DMatrix<f64>, y: &[f64], basis: &[usize]) -> Option<DVector<f64>> {
    let xb = basis_matrix(x, basis);
    let yb = DVector::from_iterator(basis.len(), basis.iter().map(|&i| y[i]));
    xb.lu().solve(&yb)
}

/// Greedily pick `k` linearly independent rows in the given order.
fn choose_basis(x: &DMatrix<f64>, order: &[usize], k: usize) -> Option<Vec<usize>> {
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(k);
    for &i in order {
        let mut v = x.row(i).transpose().into_owned();
        let norm0 = v.norm();
        if norm0 == 0.0 {
            continue;
        }
        for u in &ortho {
            let p = u.dot(&v);
            v -= u * p;
        }
        let norm = v.norm();
        if norm > 1e-8 * norm0 {
            ortho.push(v / norm);
            chosen.push(i);
            if chosen.len() == k {
                return Some(chosen);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generalized_quantile_tie_break() {
        let y: Vec<f64> = (-4..=5).map(f64::from).collect();
        let x = DMatrix::from_element(10, 1, 1.0);
        let fit = fit_quantile(&x, &y, 0.2, 1000, 1e-10).unwrap();
        assert_relative_eq!(fit.coefficients[0], -3.0, epsilon = 1e-9);
        assert!(fit.converged);
        for &(a, q) in &[(0.05, -4.0), (0.25, -2.0), (0.5, 0.0), (0.55, 1.0), (0.95, 5.0)] {
            let fit = fit_quantile(&x, &y, a, 1000, 1e-10).unwrap();
            assert_relative_eq!(fit.coefficients[0], q, epsilon = 1e-9);
            assert_eq!(q, empirical_quantile_lower(&y, a));
        }
    }

    #[test]
    fn constant_response() {
        let x = DMatrix::from_fn(20, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = vec![2.5; 20];
        let fit = fit_quantile(&x, &y, 0.1, 1000, 1e-10).unwrap();
        assert_relative_eq!(fit.coefficients[0], 2.5, epsilon = 1e-9);
        assert_relative_eq!(fit.coefficients[1], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn vertex_solution_beats_any_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 300;
        let x = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() * 2.0 });
        let y: Vec<f64> = (0..n)
            .map(|i| 1.0 + x[(i, 1)] - 0.5 * x[(i, 2)] + (1.0 + x[(i, 1)]) * (rng.random::<f64>() - 0.5))
            .collect();
        for &alpha in &[0.025, 0.3, 0.9] {
            let fit = fit_quantile(&x, &y, alpha, 2000, 1e-10).unwrap();
            assert!(fit.converged);
            // interpolates k points
            let fitted = linear_predictor(&x, &fit.coefficients);
            let zeros = y.iter().zip(&fitted).filter(|(a, b)| (*a - *b).abs() < 1e-9).count();
            assert!(zeros >= 3);
            // subgradient optimality: no coordinate perturbation improves
            for j in 0..3 {
                for h in [1e-4, -1e-4, 1e-2, -1e-2] {
                    let mut b = fit.coefficients.clone();
                    b[j] += h;
                    assert!(mean_pinball(&x, &y, alpha, &b) >= fit.loss - 1e-14);
                }
            }
        }
    }

    #[test]
    fn weighted_polish_matches_replicated_rows() {
        // integer weights are equivalent to replicating rows
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 60;
        let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() });
        let y: Vec<f64> = (0..n).map(|i| x[(i, 1)] + rng.random::<f64>()).collect();
        let w: Vec<f64> = (0..n).map(|i| (1 + i % 3) as f64).collect();
        let (beta, optimal) = vertex_polish(&x, &y, &w, 0.3, &[0.0, 0.0]).unwrap();
        assert!(optimal);
        let mut rows = Vec::new();
        let mut yy = Vec::new();
        for i in 0..n {
            for _ in 0..(1 + i % 3) {
                rows.push(x[(i, 1)]);
                yy.push(y[i]);
            }
        }
        let xr = DMatrix::from_fn(rows.len(), 2, |i, j| if j == 0 { 1.0 } else { rows[i] });
        let rep = fit_quantile(&xr, &yy, 0.3, 2000, 1e-12).unwrap();
        assert_relative_eq!(
            weighted_pinball(&x, &y, &w, 0.3, &beta) / yy.len() as f64,
            rep.loss,
            epsilon = 1e-12
        );
    }
}
