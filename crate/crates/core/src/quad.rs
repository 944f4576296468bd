//! Numerical integration: adaptive Gauss-Kronrod quadrature on finite and
//! infinite intervals, a fixed 7-point Gauss-Legendre rule, and cached
//! Gauss-Hermite node/weight tables.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};

/// 15-point Kronrod abscissae on [-1, 1] (positive half; symmetric).
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];

/// Kronrod weights matching `XGK`.
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];

/// Embedded 7-point Gauss weights (nodes are XGK[1], XGK[3], XGK[5], XGK[7]).
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

/// Adaptive integrator with an absolute-error target and a hard cap on the
/// number of subintervals. Exceeding the cap is an error, never a silently
/// inaccurate answer.
#[derive(Clone, Copy, Debug)]
pub struct Integrator {
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for Integrator {
    fn default() -> Self {
        Integrator {
            abs_tol: 1e-9,
            max_intervals: 200,
        }
    }
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<(f64, f64)> {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut kron = 0.0;
    let mut gauss = 0.0;
    for (i, &x) in XGK.iter().enumerate() {
        let (lo, hi) = (mid - half * x, mid + half * x);
        let fsum = if x == 0.0 { f(mid) } else { f(lo) + f(hi) };
        if !fsum.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite integrand on [{a}, {b}]"
            )));
        }
        kron += WGK[i] * fsum;
        if i % 2 == 1 {
            gauss += WG[i / 2] * fsum;
        } else if x == 0.0 {
            // center node belongs to the Gauss rule as well
            gauss += WG[3] * fsum;
        }
    }
    // XGK[7] = 0 is both the last Kronrod node and the central Gauss node;
    // the loop above already added it to both sums exactly once.
    Ok((kron * half, (kron - gauss).abs() * half.abs()))
}

impl Integrator {
    /// Integrates `f` on the finite interval [a, b].
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> Result<f64> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::Domain("integration bounds must be finite".into()));
        }
        if a == b {
            return Ok(0.0);
        }
        let (value, error) = gk15(&f, a, b)?;
        let mut segments = vec![Segment { a, b, value, error }];
        loop {
            let total_error: f64 = segments.iter().map(|s| s.error).sum();
            if total_error <= self.abs_tol {
                return Ok(segments.iter().map(|s| s.value).sum());
            }
            if segments.len() >= self.max_intervals {
                return Err(Error::Numerical(format!(
                    "quadrature did not reach tolerance {:.1e} within {} subintervals \
                     (remaining error estimate {:.1e})",
                    self.abs_tol, self.max_intervals, total_error
                )));
            }
            let worst = segments
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
                .map(|(i, _)| i)
                .unwrap();
            let seg = segments.swap_remove(worst);
            let mid = 0.5 * (seg.a + seg.b);
            if mid <= seg.a || mid >= seg.b {
                return Err(Error::Numerical(
                    "quadrature subinterval collapsed below machine precision".into(),
                ));
            }
            let (v1, e1) = gk15(&f, seg.a, mid)?;
            let (v2, e2) = gk15(&f, mid, seg.b)?;
            segments.push(Segment {
                a: seg.a,
                b: mid,
                value: v1,
                error: e1,
            });
            segments.push(Segment {
                a: mid,
                b: seg.b,
                value: v2,
                error: e2,
            });
        }
    }

    /// Integrates `f` on [a, +inf) via the substitution x = a + t/(1-t).
    pub fn integrate_to_infinity<F: Fn(f64) -> f64>(&self, f: F, a: f64) -> Result<f64> {
        self.integrate(
            move |t| {
                let one_minus = 1.0 - t;
                let x = a + t / one_minus;
                let jac = 1.0 / (one_minus * one_minus);
                let fx = f(x);
                if fx == 0.0 {
                    0.0
                } else {
                    fx * jac
                }
            },
            0.0,
            1.0,
        )
    }

    /// Integrates `f` over the whole real line via x = t/(1-t^2).
    pub fn integrate_real_line<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64> {
        self.integrate(
            move |t| {
                let d = 1.0 - t * t;
                let x = t / d;
                let jac = (1.0 + t * t) / (d * d);
                let fx = f(x);
                if fx == 0.0 {
                    0.0
                } else {
                    fx * jac
                }
            },
            -1.0,
            1.0,
        )
    }
}

/// 7-point Gauss-Legendre nodes on [-1, 1] (positive half; symmetric).
const GL7_X: [f64; 4] = [
    0.0,
    0.405845151377397,
    0.741531185599394,
    0.949107912342759,
];
const GL7_W: [f64; 4] = [
    0.417959183673469,
    0.381830050505119,
    0.279705391489277,
    0.129484966168870,
];

/// Nodes and weights of the 7-point Gauss-Legendre rule mapped to [a, b].
/// Exact for polynomials of degree 13.
pub fn gauss_legendre_7(a: f64, b: f64) -> [(f64, f64); 7] {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut out = [(0.0, 0.0); 7];
    out[0] = (mid, GL7_W[0] * half);
    for i in 1..4 {
        out[2 * i - 1] = (mid - half * GL7_X[i], GL7_W[i] * half);
        out[2 * i] = (mid + half * GL7_X[i], GL7_W[i] * half);
    }
    out
}

/// A Gauss-Hermite rule for the weight exp(-x^2): sum_i w_i g(x_i)
/// approximates the integral of g(x) exp(-x^2) over the real line.
#[derive(Debug)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Orthonormal Hermite value p_n(x) via the three-term recurrence, together
/// with p_{n-1}(x) (needed for Newton polishing: p_n'(x) = sqrt(2n) p_{n-1}).
fn hermite_orthonormal(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = std::f64::consts::PI.powf(-0.25);
    for k in 0..n {
        let next = (x * cur - (k as f64 / 2.0).sqrt() * prev) / (((k + 1) as f64) / 2.0).sqrt();
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

fn build_gauss_hermite(n: usize) -> GaussHermite {
    // Bracket the n roots of p_n by a sign scan over the classical root
    // enclosure, then polish each with safeguarded Newton.
    let bound = (2.0 * n as f64 + 1.0).sqrt() + 2.0;
    let grid = 80 * n;
    let mut brackets = Vec::with_capacity(n);
    let mut x_prev = -bound;
    let mut f_prev = hermite_orthonormal(n, x_prev).0;
    for i in 1..=grid {
        let x = -bound + 2.0 * bound * (i as f64) / (grid as f64);
        let fx = hermite_orthonormal(n, x).0;
        if fx == 0.0 {
            // grid point is an exact root (x = 0 for odd n)
            brackets.push((x, x));
        } else if f_prev != 0.0 && f_prev.signum() != fx.signum() {
            brackets.push((x_prev, x));
        }
        x_prev = x;
        f_prev = fx;
    }
    assert_eq!(brackets.len(), n, "Gauss-Hermite root scan missed a root");

    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for &(mut lo, mut hi) in &brackets {
        let mut x = 0.5 * (lo + hi);
        if lo < hi {
            let sign_lo = hermite_orthonormal(n, lo).0.signum();
            for _ in 0..200 {
                let (px, p_prev) = hermite_orthonormal(n, x);
                if px == 0.0 {
                    break;
                }
                // shrink the bracket around the root, then step
                if px.signum() == sign_lo {
                    lo = x;
                } else {
                    hi = x;
                }
                let newton = x - px / ((2.0 * n as f64).sqrt() * p_prev);
                let x_new = if newton > lo && newton < hi {
                    newton
                } else {
                    0.5 * (lo + hi)
                };
                if (x_new - x).abs() <= 1e-15 * (1.0 + x.abs()) {
                    x = x_new;
                    break;
                }
                x = x_new;
            }
        }
        // Christoffel weight: 1 / sum_{k<n} p_k(x)^2.
        let mut sum_sq = 0.0;
        let mut prev = 0.0;
        let mut cur = std::f64::consts::PI.powf(-0.25);
        for k in 0..n {
            sum_sq += cur * cur;
            let next = (x * cur - (k as f64 / 2.0).sqrt() * prev) / (((k + 1) as f64) / 2.0).sqrt();
            prev = cur;
            cur = next;
        }
        nodes.push(x);
        weights.push(1.0 / sum_sq);
    }
    GaussHermite { nodes, weights }
}

/// Returns the cached n-point Gauss-Hermite rule; built once per node count.
pub fn gauss_hermite(n: usize) -> Arc<GaussHermite> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap();
    map.entry(n)
        .or_insert_with(|| Arc::new(build_gauss_hermite(n)))
        .clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn polynomial_on_finite_interval() {
        let q = Integrator::default();
        let v = q.integrate(|x| x * x, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn exponential_tail() {
        let q = Integrator::default();
        let v = q.integrate_to_infinity(|x| (-x).exp(), 0.0).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn gaussian_mass_on_the_real_line() {
        let q = Integrator::default();
        let v = q
            .integrate_real_line(|x| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt())
            .unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn oscillatory_integrand_subdivides() {
        let q = Integrator::default();
        let v = q.integrate(|x| (10.0 * x).sin(), 0.0, 3.0).unwrap();
        let exact = (1.0 - (30.0f64).cos()) / 10.0;
        assert_abs_diff_eq!(v, exact, epsilon = 1e-9);
    }

    #[test]
    fn cap_exceeded_is_an_error() {
        let q = Integrator {
            abs_tol: 1e-15,
            max_intervals: 4,
        };
        let r = q.integrate(|x| (50.0 * x).sin().abs(), 0.0, 10.0);
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn gauss_legendre_7_is_exact_for_degree_13() {
        let pts = gauss_legendre_7(0.0, 2.0);
        let v: f64 = pts.iter().map(|&(x, w)| w * x.powi(13)).sum();
        assert_abs_diff_eq!(v, 2.0f64.powi(14) / 14.0, epsilon = 1e-9);
    }

    #[test]
    fn gauss_hermite_weights_sum_to_sqrt_pi() {
        for n in [5, 17, 30, 40, 50] {
            let rule = gauss_hermite(n);
            let total: f64 = rule.weights.iter().sum();
            assert_abs_diff_eq!(total, std::f64::consts::PI.sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn gauss_hermite_second_moment() {
        // integral of x^2 exp(-x^2) = sqrt(pi)/2
        let rule = gauss_hermite(21);
        let v: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&x, &w)| w * x * x)
            .sum();
        assert_abs_diff_eq!(v, std::f64::consts::PI.sqrt() / 2.0, epsilon = 1e-12);
    }
}
