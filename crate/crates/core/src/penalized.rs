//! Penalized likelihood for a spline log-hazard survival model, and the
//! constrained (sieve) formulation tied to it by Lagrange duality.
//!
//! The log-hazard is a cubic spline, `alpha(u) = sum_j a_j B_j(u)`, with an
//! optional proportional covariate term `exp(beta' z)`; positivity of the
//! hazard is automatic and the negative log-likelihood is convex in the
//! coefficients. The roughness penalty is the integrated squared second
//! derivative of the log-hazard, `J(a) = a' Omega a` with `Omega` the exact
//! Gram matrix of basis second derivatives, so affine log-hazards are
//! penalty-free.
//!
//! * `fit_penalized` maximizes `loglik - kappa * J`.
//! * `fit_sieve` maximizes the likelihood subject to `J <= nu`, by matching
//!   the constraint level along the monotone `kappa -> J(fit(kappa))` curve;
//!   the matched weight is the Lagrange multiplier.
//! * `kkt_residual` checks stationarity, feasibility and complementary
//!   slackness of any candidate solution.
//!
//! Cumulative hazards are integrated with a 7-point Gauss rule per break
//! interval (plus one partial segment per observation), precomputed once per
//! dataset so objective evaluations are dense linear algebra.

use nalgebra::DMatrix;

use crate::bspline::SplineBasis;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::optim::{self, FitResult};
use crate::quad;

/// Spline log-hazard model: coefficients `a` for the log-hazard basis and
/// `beta` for covariates.
#[derive(Clone, Debug)]
pub struct SplineHazardModel {
    pub basis: SplineBasis,
    pub a: Vec<f64>,
    pub beta: Vec<f64>,
}

impl SplineHazardModel {
    pub fn coefficients(&self) -> Vec<f64> {
        let mut c = self.a.clone();
        c.extend_from_slice(&self.beta);
        c
    }

    pub fn log_hazard(&self, u: f64) -> Result<f64> {
        self.basis.value(&self.a, u)
    }
}

/// The curvature penalty: the Gram matrix `Omega` of basis second
/// derivatives together with an orthonormal basis of its null space (the
/// affine coefficient directions). `J(a) = a' Omega a` is evaluated on the
/// null-space-projected coefficients, which is the same quantity in exact
/// arithmetic but keeps affine inputs at machine zero instead of losing
/// them to cancellation against entries of size `||Omega||`.
#[derive(Clone, Debug)]
pub struct PenaltySpec {
    pub omega: DMatrix<f64>,
    null_q: DMatrix<f64>,
}

impl PenaltySpec {
    pub fn new(basis: &SplineBasis) -> PenaltySpec {
        let m = basis.dim();
        let mut omega = DMatrix::zeros(m, m);
        for w in basis.breaks().windows(2) {
            for (x, wq) in quad::gauss_legendre_7(w[0], w[1]) {
                let (first, d2) = basis.nonzero_second_derivs(x).expect("x inside range");
                for p in 0..4 {
                    for q in 0..4 {
                        omega[(first + p, first + q)] += wq * d2[p] * d2[q];
                    }
                }
            }
        }
        // symmetrize the assembly roundoff
        for i in 0..m {
            for j in (i + 1)..m {
                let s = 0.5 * (omega[(i, j)] + omega[(j, i)]);
                omega[(i, j)] = s;
                omega[(j, i)] = s;
            }
        }
        // orthonormal basis of the affine coefficient space (1, greville)
        let mut q = DMatrix::zeros(m, 2);
        for i in 0..m {
            q[(i, 0)] = 1.0;
            q[(i, 1)] = basis.greville(i);
        }
        for col in 0..2 {
            for prev in 0..col {
                let dot = (0..m).map(|i| q[(i, col)] * q[(i, prev)]).sum::<f64>();
                for i in 0..m {
                    q[(i, col)] -= dot * q[(i, prev)];
                }
            }
            let norm = (0..m)
                .map(|i| q[(i, col)] * q[(i, col)])
                .sum::<f64>()
                .sqrt();
            for i in 0..m {
                q[(i, col)] /= norm;
            }
        }
        PenaltySpec { omega, null_q: q }
    }

    /// Removes the affine component of `a`.
    fn project(&self, a: &[f64]) -> Vec<f64> {
        let m = self.omega.nrows();
        let mut out = a.to_vec();
        for col in 0..2 {
            let dot: f64 = (0..m).map(|i| self.null_q[(i, col)] * a[i]).sum();
            for (i, o) in out.iter_mut().enumerate() {
                *o -= dot * self.null_q[(i, col)];
            }
        }
        out
    }

    /// The roughness `J(a) = a' Omega a`.
    pub fn j_value(&self, a: &[f64]) -> f64 {
        let p = self.project(a);
        let m = self.omega.nrows();
        let mut total = 0.0;
        for i in 0..m {
            let mut row = 0.0;
            for j in 0..m {
                row += self.omega[(i, j)] * p[j];
            }
            total += p[i] * row;
        }
        total
    }

    /// The gradient `2 Omega a` of the roughness, evaluated consistently
    /// with [`PenaltySpec::j_value`].
    pub fn j_gradient(&self, a: &[f64]) -> Vec<f64> {
        let p = self.project(a);
        let m = self.omega.nrows();
        let omega_p: Vec<f64> = (0..m)
            .map(|i| (0..m).map(|j| self.omega[(i, j)] * p[j]).sum::<f64>())
            .collect();
        self.project(&omega_p).iter().map(|v| 2.0 * v).collect()
    }
}

/// Exact Gram matrix of second derivatives of the basis: `a' Omega a` equals
/// the integral of the squared second derivative of the spline. Piecewise
/// quadratic integrands, integrated exactly by the per-interval Gauss rule.
pub fn penalty_matrix(basis: &SplineBasis) -> DMatrix<f64> {
    PenaltySpec::new(basis).omega
}

struct QuadPoint {
    first: usize,
    vals: [f64; 4],
    weight: f64,
}

struct ObsDesign {
    /// number of complete break intervals before the observation time
    full_intervals: usize,
    partial: Vec<QuadPoint>,
    event_row: Option<(usize, [f64; 4])>,
    z: Vec<f64>,
}

/// Precomputed design for one dataset and basis.
pub(crate) struct HazardProblem {
    pub(crate) basis: SplineBasis,
    pub(crate) penalty: PenaltySpec,
    m: usize,
    cov_dim: usize,
    n_events: usize,
    total_time: f64,
    interval_points: Vec<QuadPoint>,
    n_intervals: usize,
    obs: Vec<ObsDesign>,
}

impl HazardProblem {
    pub(crate) fn new(data: &Dataset, basis: SplineBasis) -> Result<HazardProblem> {
        let m = basis.dim();
        let t_max = basis.t_max();
        if data.max_time() > t_max {
            return Err(Error::Domain(format!(
                "observation time {} beyond the spline range {t_max}",
                data.max_time()
            )));
        }
        if data.iter().any(|o| o.time() < 0.0) {
            return Err(Error::Domain("negative observation time".into()));
        }
        let breaks = basis.breaks().to_vec();
        let n_intervals = breaks.len() - 1;
        let mut interval_points = Vec::with_capacity(n_intervals * 7);
        for w in breaks.windows(2) {
            for (x, wq) in quad::gauss_legendre_7(w[0], w[1]) {
                let (first, vals) = basis.nonzero_values(x)?;
                interval_points.push(QuadPoint {
                    first,
                    vals,
                    weight: wq,
                });
            }
        }
        let mut obs = Vec::with_capacity(data.n());
        for o in data.iter() {
            let t = o.time();
            let full_intervals = breaks.partition_point(|&b| b <= t).saturating_sub(1);
            let seg_start = breaks[full_intervals.min(n_intervals - 1)];
            let mut partial = Vec::new();
            if t > seg_start {
                for (x, wq) in quad::gauss_legendre_7(seg_start, t) {
                    let (first, vals) = basis.nonzero_values(x)?;
                    partial.push(QuadPoint {
                        first,
                        vals,
                        weight: wq,
                    });
                }
            }
            let event_row = if o.is_event() {
                let (first, vals) = basis.nonzero_values(t)?;
                Some((first, vals))
            } else {
                None
            };
            obs.push(ObsDesign {
                full_intervals: full_intervals.min(n_intervals - 1),
                partial,
                event_row,
                z: o.covariates.clone(),
            });
        }
        let penalty = PenaltySpec::new(&basis);
        Ok(HazardProblem {
            basis,
            penalty,
            m,
            cov_dim: data.covariate_dim(),
            n_events: data.n_events(),
            total_time: data.iter().map(|o| o.time()).sum(),
            interval_points,
            n_intervals,
            obs,
        })
    }

    fn coef_len(&self) -> usize {
        self.m + self.cov_dim
    }

    /// Unpenalized censored log-likelihood at the coefficient vector
    /// `[a, beta]`. Compensated summation keeps the value resolved to one
    /// ulp of the total, which the optimizer's line search relies on.
    pub(crate) fn loglik(&self, coef: &[f64]) -> f64 {
        let a = &coef[..self.m];
        let beta = &coef[self.m..];
        let dot4 = |first: usize, vals: &[f64; 4]| -> f64 {
            vals[0] * a[first]
                + vals[1] * a[first + 1]
                + vals[2] * a[first + 2]
                + vals[3] * a[first + 3]
        };
        // cumulative hazard over complete intervals
        let mut prefix = vec![0.0f64; self.n_intervals + 1];
        for (k, chunk) in self.interval_points.chunks(7).enumerate() {
            let mut integral = 0.0;
            for pt in chunk {
                integral += pt.weight * dot4(pt.first, &pt.vals).exp();
            }
            prefix[k + 1] = prefix[k] + integral;
        }
        let mut ll = 0.0f64;
        let mut comp = 0.0f64;
        let add = |term: f64, ll: &mut f64, comp: &mut f64| {
            let y = term - *comp;
            let t = *ll + y;
            *comp = (t - *ll) - y;
            *ll = t;
        };
        for o in &self.obs {
            let mut h = prefix[o.full_intervals];
            for pt in &o.partial {
                h += pt.weight * dot4(pt.first, &pt.vals).exp();
            }
            let eta: f64 = beta.iter().zip(&o.z).map(|(b, z)| b * z).sum();
            if let Some((first, vals)) = &o.event_row {
                add(dot4(*first, vals) + eta, &mut ll, &mut comp);
            }
            add(-eta.exp() * h, &mut ll, &mut comp);
        }
        ll
    }

    fn penalized(&self, coef: &[f64], kappa: f64) -> f64 {
        self.loglik(coef) - kappa * self.penalty.j_value(&coef[..self.m])
    }

    /// Coefficients of the best affine-log-hazard fit (the penalty null
    /// space), expanded to the full coefficient vector.
    fn affine_fit(&self) -> Result<FitResult> {
        let xi: Vec<f64> = (0..self.m).map(|i| self.basis.greville(i)).collect();
        let expand = |c: &[f64]| -> Vec<f64> {
            let mut coef: Vec<f64> = xi.iter().map(|&x| c[0] + c[1] * x).collect();
            coef.extend_from_slice(&c[2..]);
            coef
        };
        let start_rate = (self.n_events.max(1) as f64 / self.total_time.max(1e-12)).ln();
        let mut c0 = vec![0.0; 2 + self.cov_dim];
        c0[0] = start_rate;
        let inner = optim::maximize_with_options(
            |c: &[f64]| self.loglik(&expand(c)),
            &c0,
            1e-6,
            500,
        )?;
        let coef = expand(&inner.theta_hat);
        Ok(FitResult {
            theta_hat: coef,
            loglik_at_max: inner.loglik_at_max,
            grad_norm: inner.grad_norm,
            iterations: inner.iterations,
            converged: inner.converged,
            p: self.coef_len(),
            n_obs: Some(self.obs.len()),
        })
    }

    /// Penalized fit; starts at the affine optimum unless a warm start is
    /// supplied.
    pub(crate) fn fit(&self, kappa: f64, warm: Option<&[f64]>) -> Result<(FitResult, f64)> {
        if !(kappa >= 0.0) {
            return Err(Error::Domain(format!("kappa must be >= 0, got {kappa}")));
        }
        if self.n_events == 0 {
            return Err(Error::Degenerate(
                "spline hazard fit needs at least one event".into(),
            ));
        }
        let start = match warm {
            Some(c) => c.to_vec(),
            None => match self.affine_fit() {
                // warm start only; a stagnating pre-fit falls back to a
                // constant log-hazard
                Ok(affine) => affine.theta_hat,
                Err(_) => {
                    let rate = (self.n_events as f64 / self.total_time.max(1e-12)).ln();
                    let mut c = vec![rate; self.m];
                    c.extend(std::iter::repeat(0.0).take(self.cov_dim));
                    c
                }
            },
        };
        // Coefficient quantization bounds the attainable gradient from below
        // once the penalty curvature ~ kappa * ||Omega|| is large: one ulp of
        // coefficient movement shifts the penalty gradient by about
        // eps * kappa * ||Omega||. Keep the tolerance above that floor.
        let omega_norm = (0..self.m)
            .map(|i| (0..self.m).map(|j| self.penalty.omega[(i, j)].abs()).sum::<f64>())
            .fold(0.0f64, f64::max);
        let tol = (10.0 * f64::EPSILON * kappa * omega_norm).max(1e-7);
        let mut fit = optim::maximize_with_options(
            |coef: &[f64]| self.penalized(coef, kappa),
            &start,
            tol,
            500,
        )?;
        if !fit.converged {
            return Err(Error::Numerical(format!(
                "penalized fit at kappa = {kappa:.3e} stopped after {} iterations \
                 with gradient sup-norm {:.3e}",
                fit.iterations, fit.grad_norm
            )));
        }
        fit.n_obs = Some(self.obs.len());
        let j = self.penalty.j_value(&fit.theta_hat[..self.m]);
        Ok((fit, j))
    }

    fn model_from(&self, coef: &[f64]) -> SplineHazardModel {
        SplineHazardModel {
            basis: self.basis.clone(),
            a: coef[..self.m].to_vec(),
            beta: coef[self.m..].to_vec(),
        }
    }
}

/// Builds the default basis for a dataset: `basis_dim` functions, equally
/// spaced on `[0, max observed time]`.
pub fn default_basis(data: &Dataset, basis_dim: usize) -> Result<SplineBasis> {
    SplineBasis::uniform(data.max_time(), basis_dim)
}

/// Penalized log-likelihood `loglik - kappa * J` of a model on a dataset.
pub fn penalized_loglik(model: &SplineHazardModel, data: &Dataset, kappa: f64) -> Result<f64> {
    if !(kappa >= 0.0) {
        return Err(Error::Domain(format!("kappa must be >= 0, got {kappa}")));
    }
    if model.a.len() != model.basis.dim() || model.beta.len() != data.covariate_dim() {
        return Err(Error::Domain(
            "coefficient dimensions do not match the basis / covariates".into(),
        ));
    }
    let problem = HazardProblem::new(data, model.basis.clone())?;
    Ok(problem.penalized(&model.coefficients(), kappa))
}

/// A maximum penalized likelihood fit.
#[derive(Clone, Debug)]
pub struct PenalizedFit {
    pub model: SplineHazardModel,
    pub fit: FitResult,
    pub j_value: f64,
}

/// Maximum penalized likelihood estimate at fixed `kappa`.
pub fn fit_penalized(data: &Dataset, basis_dim: usize, kappa: f64) -> Result<PenalizedFit> {
    let problem = HazardProblem::new(data, default_basis(data, basis_dim)?)?;
    let (fit, j_value) = problem.fit(kappa, None)?;
    Ok(PenalizedFit {
        model: problem.model_from(&fit.theta_hat),
        fit,
        j_value,
    })
}

/// A sieve (constrained) fit: `kappa_nu` is the penalty weight matching the
/// constraint level and equals the Lagrange multiplier `lambda` when the
/// constraint is active. Both are infinite when `nu = 0` pins the fit to
/// the penalty null space (no finite multiplier exists there).
#[derive(Clone, Debug)]
pub struct SieveFit {
    pub model: SplineHazardModel,
    pub fit: FitResult,
    pub kappa_nu: f64,
    pub lambda: f64,
    pub j_value: f64,
}

/// Maximizes the likelihood subject to `J(a) <= nu`.
pub fn fit_sieve(data: &Dataset, basis_dim: usize, nu: f64) -> Result<SieveFit> {
    if !(nu >= 0.0) {
        return Err(Error::Domain(format!("nu must be >= 0, got {nu}")));
    }
    let problem = HazardProblem::new(data, default_basis(data, basis_dim)?)?;

    if nu == 0.0 {
        let fit = problem.affine_fit()?;
        if !fit.converged {
            return Err(Error::Numerical("affine-restricted fit did not converge".into()));
        }
        let j_value = problem.penalty.j_value(&fit.theta_hat[..problem.m]);
        return Ok(SieveFit {
            model: problem.model_from(&fit.theta_hat),
            fit,
            kappa_nu: f64::INFINITY,
            lambda: f64::INFINITY,
            j_value,
        });
    }

    // inactive constraint: the unpenalized maximum already satisfies J <= nu
    let (fit0, j0) = problem.fit(0.0, None)?;
    if j0 <= nu {
        return Ok(SieveFit {
            model: problem.model_from(&fit0.theta_hat),
            fit: fit0,
            kappa_nu: 0.0,
            lambda: 0.0,
            j_value: j0,
        });
    }

    // bracket the monotone kappa -> J curve around nu inside [1e-8, 1e8]
    let mut warm = fit0.theta_hat.clone();
    let mut fit_at = |kappa: f64| -> Result<(FitResult, f64)> {
        let (fit, j) = problem.fit(kappa, Some(&warm))?;
        warm = fit.theta_hat.clone();
        Ok((fit, j))
    };
    let mut lo = 1e-2;
    let (mut j_lo, mut lo_ok) = {
        let (_, j) = fit_at(lo)?;
        (j, j >= nu)
    };
    while !lo_ok {
        lo *= 1e-2;
        if lo < 1e-8 {
            return Err(Error::Range(format!(
                "no kappa in [1e-8, 1e8] reaches J >= {nu:.3e} (J({:.1e}) = {j_lo:.3e})",
                lo * 1e2
            )));
        }
        let (_, j) = fit_at(lo)?;
        j_lo = j;
        lo_ok = j >= nu;
    }
    let mut hi = 1e2;
    let (mut j_hi, mut hi_ok) = {
        let (_, j) = fit_at(hi)?;
        (j, j <= nu)
    };
    while !hi_ok {
        hi *= 1e2;
        if hi > 1e8 {
            return Err(Error::Range(format!(
                "no kappa in [1e-8, 1e8] brings J down to {nu:.3e} (J({:.1e}) = {j_hi:.3e})",
                hi * 1e-2
            )));
        }
        let (_, j) = fit_at(hi)?;
        j_hi = j;
        hi_ok = j <= nu;
    }

    let (kappa_nu, fit, j_value) = optim::match_constraint(fit_at, nu, (lo, hi))?;
    Ok(SieveFit {
        model: problem.model_from(&fit.theta_hat),
        fit,
        kappa_nu,
        lambda: kappa_nu,
        j_value,
    })
}

/// Karush-Kuhn-Tucker diagnostics for a candidate constrained solution.
#[derive(Clone, Copy, Debug)]
pub struct KktResidual {
    /// sup-norm of `grad loglik - lambda * grad J`
    pub grad_residual: f64,
    /// `max(0, J - nu)`
    pub primal_feasibility: f64,
    /// `lambda >= 0`
    pub dual_feasible: bool,
    /// `|lambda * (J - nu)|`
    pub complementarity: f64,
}

/// Evaluates the KKT residuals of `(model, lambda)` for the constraint
/// `J <= nu` on the given data. Purely diagnostic.
pub fn kkt_residual(
    model: &SplineHazardModel,
    lambda: f64,
    nu: f64,
    data: &Dataset,
) -> Result<KktResidual> {
    if !lambda.is_finite() {
        return Err(Error::Domain(
            "KKT residuals need a finite multiplier".into(),
        ));
    }
    let problem = HazardProblem::new(data, model.basis.clone())?;
    let coef = model.coefficients();
    let grad_ll = optim::central_gradient(&|c: &[f64]| problem.loglik(c), &coef);
    let m = problem.m;
    let j = problem.penalty.j_value(&coef[..m]);
    let grad_j = problem.penalty.j_gradient(&coef[..m]);
    let mut residual = 0.0f64;
    for k in 0..coef.len() {
        let grad_j_k = if k < m { grad_j[k] } else { 0.0 };
        residual = residual.max((grad_ll[k] - lambda * grad_j_k).abs());
    }
    Ok(KktResidual {
        grad_residual: residual,
        primal_feasibility: (j - nu).max(0.0),
        dual_feasible: lambda >= 0.0,
        complementarity: (lambda * (j - nu)).abs(),
    })
}
