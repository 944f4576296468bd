//! Unconstrained quasi-Newton maximization and the constraint-matching
//! driver used by the sieve solver.
//!
//! The maximizer is a dense BFGS ascent with an Armijo backtracking line
//! search. Gradients are central finite differences unless the caller
//! supplies its own. Box constraints are handled by the callers through
//! log/logit reparametrizations; the solver itself is unconstrained.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Step scale for internal central-difference gradients: cbrt(machine eps).
pub(crate) const FD_STEP: f64 = 6.055454452393343e-6;

/// Armijo sufficient-increase constant.
const ARMIJO_C1: f64 = 1e-4;
/// Backtracking shrink factor.
const BACKTRACK: f64 = 0.5;
/// Steps below this are treated as line-search stagnation.
const MIN_STEP: f64 = 1e-14;

/// Outcome of a maximization.
#[derive(Clone, Debug)]
pub struct FitResult {
    /// Argmax in the coordinates the objective was given.
    pub theta_hat: Vec<f64>,
    /// Objective value at the optimum.
    pub loglik_at_max: f64,
    /// Sup-norm of the gradient at the final point.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Effective parameter count (the dimension of `theta_hat`).
    pub p: usize,
    /// Number of observations behind the objective, when there is one.
    /// Used to guard cross-model comparisons.
    pub n_obs: Option<usize>,
}

/// Central-difference gradient with step `FD_STEP * max(1, |x_k|)`.
pub(crate) fn central_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        let h = FD_STEP * x[k].abs().max(1.0);
        xp[k] = x[k] + h;
        let fp = f(&xp);
        xp[k] = x[k] - h;
        let fm = f(&xp);
        xp[k] = x[k];
        g[k] = (fp - fm) / (2.0 * h);
    }
    g
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Maximizes `objective` from `theta0` by BFGS ascent with finite-difference
/// gradients. Converges when the gradient sup-norm drops below `tol`
/// (default 1e-8, via [`maximize`]); gives up after `max_iter` iterations
/// with `converged = false`.
pub fn maximize_with_options<F>(
    objective: F,
    theta0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<FitResult>
where
    F: Fn(&[f64]) -> f64,
{
    let grad = |x: &[f64]| central_gradient(&objective, x);
    maximize_with_grad(|x| (objective(x), grad(x)), theta0, tol, max_iter)
}

/// [`maximize_with_options`] with the default tolerance 1e-8 and 500
/// iterations.
pub fn maximize<F>(objective: F, theta0: &[f64]) -> Result<FitResult>
where
    F: Fn(&[f64]) -> f64,
{
    maximize_with_options(objective, theta0, 1e-8, 500)
}

/// Shared BFGS core over a caller-supplied value+gradient oracle.
pub(crate) fn maximize_with_grad<F>(
    value_and_grad: F,
    theta0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<FitResult>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let p = theta0.len();
    let (f0, g0) = value_and_grad(theta0);
    if !f0.is_finite() {
        return Err(Error::BadStart(format!(
            "objective is {f0} at the starting point"
        )));
    }
    let mut x = DVector::from_column_slice(theta0);
    let mut fx = f0;
    let mut g = DVector::from_vec(g0);
    let mut h_inv = DMatrix::<f64>::identity(p, p);
    let mut iterations = 0usize;
    let mut converged = sup_norm(g.as_slice()) < tol;
    let mut first_update = true;

    // Backtracking search; a step is accepted on the Armijo sufficient
    // increase when that is resolvable, and otherwise - once achievable
    // objective gains sink below the floating-point resolution of the value
    // near the optimum - on the curvature (Wolfe) condition along the search
    // direction, which stays measurable through the gradient long after
    // objective differences vanish. `None` means stagnation: the step shrank
    // below MIN_STEP or candidates stopped moving at float resolution.
    let line_search = |x: &DVector<f64>,
                       fx: f64,
                       direction: &DVector<f64>,
                       slope: f64|
     -> Option<(DVector<f64>, f64, Option<DVector<f64>>, f64)> {
        // evaluation error of sum-structured objectives runs a small
        // multiple of one ulp of the total; gains below this are noise
        let f_resolution = 64.0 * f64::EPSILON * (1.0 + fx.abs());
        let mut step = 1.0;
        loop {
            let candidate = x + direction * step;
            if candidate == *x {
                return None;
            }
            let f_cand = value_and_grad(candidate.as_slice()).0;
            if f_cand.is_finite() {
                let gain = f_cand - fx;
                if gain > ARMIJO_C1 * step * slope && gain > f_resolution {
                    return Some((candidate, f_cand, None, step));
                }
                if gain.abs() <= f_resolution {
                    // value saturated: accept a near-stationary point of the
                    // 1-d section instead
                    let (_, g_cand) = value_and_grad(candidate.as_slice());
                    let g_cand = DVector::from_vec(g_cand);
                    if g_cand.dot(direction).abs() <= 0.9 * slope.abs() {
                        return Some((candidate, f_cand, Some(g_cand), step));
                    }
                    if std::env::var_os("KLRISK_LS_TRACE").is_some() {
                        eprintln!(
                            "    ls step {step:.3e}: gain {gain:.3e} slope {slope:.3e} -> {:.3e}",
                            g_cand.dot(direction)
                        );
                    }
                } else if std::env::var_os("KLRISK_LS_TRACE").is_some() {
                    eprintln!("    ls step {step:.3e}: gain {gain:.3e} (res {f_resolution:.1e})");
                }
            }
            step *= BACKTRACK;
            if step < MIN_STEP {
                return None;
            }
        }
    };

    while !converged && iterations < max_iter {
        iterations += 1;
        let mut direction = &h_inv * &g;
        // ascent direction; reset the metric if numerical noise flipped it
        if direction.dot(&g) <= 0.0 {
            h_inv = DMatrix::identity(p, p);
            first_update = true;
            direction = g.clone();
        }
        let mut found = line_search(&x, fx, &direction, direction.dot(&g));
        if found.is_none() && direction != g {
            // retry once along the raw gradient (metric kept for later steps)
            direction = g.clone();
            found = line_search(&x, fx, &direction, direction.dot(&g));
        }
        let Some((x_new, f_new, g_ready, step)) = found else {
            return Err(Error::Numerical(format!(
                "line search stagnated at iteration {iterations} \
                 (objective {fx:.6e}, gradient sup-norm {:.3e})",
                sup_norm(g.as_slice())
            )));
        };
        let g_new = match g_ready {
            Some(g) => g,
            None => DVector::from_vec(value_and_grad(x_new.as_slice()).1),
        };

        let s = &x_new - &x;
        // y is the change of the *descent* gradient of -f, i.e. g - g_new
        let y = &g - &g_new;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first_update {
                let yy = y.dot(&y);
                if yy > 0.0 {
                    h_inv *= sy / yy;
                }
                first_update = false;
            }
            let rho = 1.0 / sy;
            // H <- (I - rho s y') H (I - rho y s') + rho s s'
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            let ss = &s * s.transpose();
            let hy_s = &hy * s.transpose();
            h_inv = &h_inv - (&hy_s + hy_s.transpose()) * rho + &ss * (rho * rho * yhy + rho);
        }

        x = x_new;
        fx = f_new;
        g = g_new;
        converged = sup_norm(g.as_slice()) < tol;
        if std::env::var_os("KLRISK_OPT_TRACE").is_some() && iterations % 50 == 0 {
            eprintln!(
                "  iter {iterations}: f {fx:.10e} |g| {:.3e} step {step:.3e}",
                sup_norm(g.as_slice())
            );
        }
    }

    Ok(FitResult {
        theta_hat: x.as_slice().to_vec(),
        loglik_at_max: fx,
        grad_norm: sup_norm(g.as_slice()),
        iterations,
        converged,
        p,
        n_obs: None,
    })
}

/// Finds the penalty weight at which a monotone constraint curve crosses a
/// target level.
///
/// `fit_at(kappa)` must return the fit and the constraint value `J` at that
/// penalty weight; `J` is assumed nonincreasing in `kappa`. The bracket
/// `(lo, hi)` must satisfy `J(lo) >= nu >= J(hi)`. Bisection runs on
/// `ln(kappa)` until `|J - nu| < 1e-8 * max(1, nu)` or 60 iterations, and
/// returns the best visited fit. An increase of `J` along increasing `kappa`
/// by more than 1e-6 is reported as a monotonicity violation.
pub fn match_constraint<F, T>(
    mut fit_at: F,
    nu: f64,
    bracket: (f64, f64),
) -> Result<(f64, T, f64)>
where
    F: FnMut(f64) -> Result<(T, f64)>,
{
    let (mut lo, mut hi) = bracket;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Bracket(format!("bad bracket ({lo}, {hi})")));
    }
    let tol = 1e-8 * nu.abs().max(1.0);
    let (fit_lo, mut j_lo) = fit_at(lo)?;
    if (j_lo - nu).abs() < tol {
        return Ok((lo, fit_lo, j_lo));
    }
    let (fit_hi, mut j_hi) = fit_at(hi)?;
    if (j_hi - nu).abs() < tol {
        return Ok((hi, fit_hi, j_hi));
    }
    if j_lo < nu || j_hi > nu {
        return Err(Error::Bracket(format!(
            "target {nu:.6e} not enclosed: J({lo:.3e}) = {j_lo:.6e}, J({hi:.3e}) = {j_hi:.6e}"
        )));
    }

    let mut best: Option<(f64, T, f64)> = None;
    for _ in 0..60 {
        let mid = (0.5 * (lo.ln() + hi.ln())).exp();
        let (fit_mid, j_mid) = fit_at(mid)?;
        if j_mid > j_lo + 1e-6 || j_mid < j_hi - 1e-6 {
            return Err(Error::MonotonicityViolation(format!(
                "J({mid:.3e}) = {j_mid:.6e} outside [{j_hi:.6e}, {j_lo:.6e}] from the bracket"
            )));
        }
        let better = best
            .as_ref()
            .map(|(_, _, j)| (j_mid - nu).abs() < (j - nu).abs())
            .unwrap_or(true);
        if better {
            best = Some((mid, fit_mid, j_mid));
        }
        if (j_mid - nu).abs() < tol {
            break;
        }
        if j_mid > nu {
            lo = mid;
            j_lo = j_mid;
        } else {
            hi = mid;
            j_hi = j_mid;
        }
    }
    best.ok_or_else(|| Error::Numerical("constraint matching made no progress".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quadratic_maximum() {
        let fit = maximize(|x| -(x[0] - 3.0) * (x[0] - 3.0), &[0.0]).unwrap();
        assert!(fit.converged);
        assert_abs_diff_eq!(fit.theta_hat[0], 3.0, epsilon = 1e-8);
    }

    #[test]
    fn censored_exponential_reaches_the_analytic_mle() {
        // events = 2, total follow-up = 6 => rate 1/3; optimize in log-rate
        let obj = |u: &[f64]| {
            let lambda: f64 = u[0].exp();
            2.0 * lambda.ln() - lambda * 6.0
        };
        let fit = maximize(obj, &[0.0]).unwrap();
        assert!(fit.converged);
        assert_abs_diff_eq!(fit.theta_hat[0].exp(), 1.0 / 3.0, epsilon = 1e-8);
    }

    #[test]
    fn non_finite_start_is_rejected() {
        let err = maximize(|_| f64::NEG_INFINITY, &[0.0]).unwrap_err();
        assert!(matches!(err, Error::BadStart(_)));
    }

    #[test]
    fn ascent_is_monotone_and_deterministic() {
        let traces: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                let trace = std::sync::Mutex::new(Vec::new());
                let fit = maximize(
                    |x: &[f64]| {
                        let v = -(x[0] - 1.0_f64).powi(2) - 2.0 * (x[1] + 0.5_f64).powi(4);
                        trace.lock().unwrap().push(v);
                        v
                    },
                    &[4.0, 2.0],
                )
                .unwrap();
                assert!(fit.converged);
                trace.into_inner().unwrap()
            })
            .collect();
        assert_eq!(traces[0], traces[1]);
    }

    #[test]
    fn internal_gradient_matches_a_higher_order_recomputation() {
        let f = |x: &[f64]| (x[0].sin() + 0.3 * x[1]).exp() - x[1] * x[1];
        let x = [0.4, -0.7];
        let g2 = central_gradient(&f, &x);
        // 4th-order five-point stencil
        let mut g4 = vec![0.0; 2];
        for k in 0..2 {
            let h = 1e-3 * x[k].abs().max(1.0);
            let mut at = |delta: f64| {
                let mut y = x.to_vec();
                y[k] += delta;
                f(&y)
            };
            g4[k] = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
        }
        for k in 0..2 {
            assert!((g2[k] - g4[k]).abs() <= 1e-5 * g4[k].abs().max(1.0));
        }
    }

    #[test]
    fn match_constraint_finds_the_fixed_point() {
        // analytic stand-in: J(kappa) = 1/(1+kappa), strictly decreasing
        let fit_at = |k: f64| Ok(((), 1.0 / (1.0 + k)));
        let nu = 1.0 / (1.0 + 1.0);
        let (kappa, _, j) = match_constraint(fit_at, nu, (1e-4, 1e4)).unwrap();
        assert_abs_diff_eq!(kappa, 1.0, epsilon = 1e-6);
        assert!((j - nu).abs() < 1e-8);
    }

    #[test]
    fn match_constraint_rejects_bad_brackets() {
        let fit_at = |k: f64| Ok(((), 1.0 / (1.0 + k)));
        let err = match_constraint(fit_at, 2.0, (1e-4, 1e4)).unwrap_err();
        assert!(matches!(err, Error::Bracket(_)));
    }

    #[test]
    fn match_constraint_detects_non_monotone_curves() {
        // dips in the middle of the bracket: J(lo) > nu > J(hi) holds but the
        // curve is not monotone
        let fit_at = |k: f64| Ok(((), (k.ln() - 3.0).powi(2) / 10.0));
        let err = match_constraint(fit_at, 2.0, (1e-3, 1e3)).unwrap_err();
        assert!(matches!(err, Error::MonotonicityViolation(_)));
    }
}
