//! Nelder-Mead simplex minimization.
//!
//! Reflection, expansion, contraction and shrink coefficients are the
//! standard (1, 2, 1/2, 1/2). Infeasible points are signalled by returning
//! `+inf` from the objective; NaN is treated the same way.

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Convergence when `max f - min f` over the simplex drops below this.
    pub tolerance: f64,
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimize `f` starting from `x0`. The initial simplex is `x0` plus
/// `x0 + steps[j] e_j` for each coordinate.
pub fn minimize<F>(mut f: F, x0: &[f64], steps: &[f64], opts: NelderMeadOptions) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    assert_eq!(dim, steps.len(), "one initial step per coordinate");
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64], evaluations: &mut usize| {
        *evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let f0 = eval(x0, &mut evaluations);
    simplex.push((x0.to_vec(), f0));
    for j in 0..dim {
        let mut v = x0.to_vec();
        let step = if steps[j] != 0.0 { steps[j] } else { 1e-3 };
        v[j] += step;
        let fv = eval(&v, &mut evaluations);
        simplex.push((v, fv));
    }

    let mut iterations = 0;
    let mut converged = false;
    let mut centroid = vec![0.0; dim];
    let mut trial = vec![0.0; dim];
    while iterations < opts.max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        if best.is_finite() && worst - best <= opts.tolerance {
            converged = true;
            break;
        }
        if collapsed(&simplex) {
            converged = best.is_finite();
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for (v, _) in &simplex[..dim] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= dim as f64);

        let along = |t: f64, worst: &[f64], out: &mut Vec<f64>| {
            for ((o, c), w) in out.iter_mut().zip(&centroid).zip(worst) {
                *o = c + t * (c - w);
            }
        };

        along(REFLECT, &simplex[dim].0, &mut trial);
        let fr = eval(&trial, &mut evaluations);
        let second_worst = simplex[dim - 1].1;

        if fr < best {
            let reflected = trial.clone();
            along(REFLECT * EXPAND, &simplex[dim].0, &mut trial);
            let fe = eval(&trial, &mut evaluations);
            simplex[dim] = if fe < fr { (trial.clone(), fe) } else { (reflected, fr) };
            continue;
        }
        if fr < second_worst {
            simplex[dim] = (trial.clone(), fr);
            continue;
        }
        if fr < worst {
            along(REFLECT * CONTRACT, &simplex[dim].0, &mut trial);
            let fc = eval(&trial, &mut evaluations);
            if fc <= fr {
                simplex[dim] = (trial.clone(), fc);
                continue;
            }
        } else {
            along(-CONTRACT, &simplex[dim].0, &mut trial);
            let fc = eval(&trial, &mut evaluations);
            if fc < worst {
                simplex[dim] = (trial.clone(), fc);
                continue;
            }
        }
        let anchor = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            for (x, a) in vertex.0.iter_mut().zip(&anchor) {
                *x = a + SHRINK * (*x - a);
            }
            vertex.1 = eval(&vertex.0, &mut evaluations);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    NelderMeadResult { x, fx, iterations, evaluations, converged }
}

fn collapsed(simplex: &[(Vec<f64>, f64)]) -> bool {
    let base = &simplex[0].0;
    simplex[1..].iter().all(|(v, _)| {
        v.iter()
            .zip(base)
            .all(|(a, b)| (a - b).abs() <= 1e-13 * (1.0 + b.abs()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = minimize(f, &[-1.2, 1.0], &[0.1, 0.1], NelderMeadOptions { max_iter: 5000, tolerance: 1e-16 });
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?}", r.x);
    }

    #[test]
    fn respects_infinite_barrier() {
        // minimum of (x - 1)^2 restricted to x < 0.5 sits at the boundary
        let f = |x: &[f64]| if x[0] < 0.5 { (x[0] - 1.0).powi(2) + x[1] * x[1] } else { f64::INFINITY };
        let r = minimize(f, &[-2.0, 1.0], &[0.5, 0.5], NelderMeadOptions { max_iter: 2000, tolerance: 1e-14 });
        assert!(r.x[0] < 0.5 && r.x[0] > 0.49);
        assert!(r.fx.is_finite());
    }

    #[test]
    fn iteration_budget_is_reported() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let r = minimize(f, &[5.0, 5.0, 5.0], &[1.0; 3], NelderMeadOptions { max_iter: 3, tolerance: 1e-12 });
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
    }
}
