//! Kullback-Leibler divergence between parametric laws, on the full
//! observation and on the right-censored one, with a Monte Carlo oracle and
//! misspecification-risk minimization.
//!
//! Conventions follow the estimation use: `kl(model, truth)` integrates the
//! log-ratio `log(f_truth / f_model)` against the truth, so it is the risk
//! of using `model` in place of `truth`. The divergence is asymmetric by
//! nature.

use crate::error::{Error, Result};
use crate::exec;
use crate::families::{Family, Law, Params, Support};
use crate::optim;
use crate::quad::Integrator;
use crate::rng;

/// Fixed seed for the method-of-moments initialization draws inside
/// [`misspecification_risk`].
const MOM_SEED: u64 = 171_717;
/// Number of truth draws behind the method-of-moments initialization.
const MOM_DRAWS: usize = 10_000;

/// Absolute quadrature tolerance for divergence values.
const KL_TOL: f64 = 1e-9;

fn integrator() -> Integrator {
    Integrator {
        abs_tol: KL_TOL,
        max_intervals: 200,
    }
}

/// Checks absolute continuity of `model` with respect to `truth` on the
/// shared support by probing 64 quantiles of the truth.
fn check_supports(model: &Law, truth: &Law) -> Result<()> {
    match (truth.family.support(), model.family.support()) {
        (Support::Counts { max: a }, Support::Counts { max: b }) => {
            if a != b {
                return Err(Error::DivergenceUndefined(format!(
                    "binomial supports differ: {a} vs {b} trials"
                )));
            }
            Ok(())
        }
        (Support::Counts { .. }, _) | (_, Support::Counts { .. }) => {
            Err(Error::DivergenceUndefined(
                "cannot mix discrete and continuous laws".into(),
            ))
        }
        _ => {
            for i in 0..64 {
                let u = (i as f64 + 0.5) / 64.0;
                let x = truth.family.quantile(&truth.theta, u)?;
                let ld = model.family.log_density(&model.theta, x).map_err(|_| {
                    Error::DivergenceUndefined(format!(
                        "model support does not cover truth quantile {x:.4}"
                    ))
                })?;
                if ld == f64::NEG_INFINITY {
                    return Err(Error::DivergenceUndefined(format!(
                        "model density vanishes at truth quantile {x:.4}"
                    )));
                }
            }
            Ok(())
        }
    }
}

fn log_ratio_times_truth(model: &Law, truth: &Law, x: f64) -> f64 {
    let ld1 = truth.family.log_density_unchecked(&truth.theta, x);
    if ld1 == f64::NEG_INFINITY {
        return 0.0;
    }
    let w = ld1.exp();
    if w == 0.0 {
        return 0.0;
    }
    let ld2 = model.family.log_density_unchecked(&model.theta, x);
    (ld1 - ld2) * w
}

/// KL divergence of `model` from `truth` on the fully observed variable:
/// the integral of `log(f_truth/f_model) f_truth` over the truth support,
/// by adaptive quadrature to absolute tolerance 1e-9.
pub fn kl_full(model: &Law, truth: &Law) -> Result<f64> {
    kl_full_with(model, truth, &integrator())
}

fn kl_full_with(model: &Law, truth: &Law, quad: &Integrator) -> Result<f64> {
    truth.family.validate(&truth.theta)?;
    model.family.validate(&model.theta)?;
    check_supports(model, truth)?;
    match truth.family.support() {
        Support::Counts { max } => {
            let mut sum = 0.0;
            for k in 0..=max {
                sum += log_ratio_times_truth(model, truth, k as f64);
            }
            Ok(sum)
        }
        Support::PositiveReals => {
            quad.integrate_to_infinity(|x| log_ratio_times_truth(model, truth, x), 0.0)
        }
        Support::Reals => quad.integrate_real_line(|x| log_ratio_times_truth(model, truth, x)),
    }
}

/// KL divergence on the sigma-field observed under right censoring at `C`:
/// the integral of the log density ratio against the truth on `[0, C]` plus
/// the censoring atom `log(S_truth(C)/S_model(C)) * S_truth(C)`.
pub fn kl_censored(model: &Law, truth: &Law, c: f64) -> Result<f64> {
    kl_censored_with(model, truth, c, &integrator())
}

fn kl_censored_with(model: &Law, truth: &Law, c: f64, quad: &Integrator) -> Result<f64> {
    truth.family.validate(&truth.theta)?;
    model.family.validate(&model.theta)?;
    if !(truth.family.is_time_to_event() && model.family.is_time_to_event()) {
        return Err(Error::Unsupported(
            "censored divergence is defined for time-to-event families only".into(),
        ));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Domain(format!("censoring time must be > 0, got {c}")));
    }
    check_supports(model, truth)?;
    let body = quad.integrate(|x| log_ratio_times_truth(model, truth, x), 0.0, c)?;
    let s1 = truth.family.survival_unchecked(&truth.theta, c);
    let s2 = model.family.survival_unchecked(&model.theta, c);
    let atom = if s1 == 0.0 { 0.0 } else { (s1.ln() - s2.ln()) * s1 };
    if !atom.is_finite() {
        return Err(Error::Numerical(format!(
            "censoring atom is not finite at C = {c}"
        )));
    }
    Ok(body + atom)
}

/// Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug)]
pub struct OracleEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Draws per independently seeded Monte Carlo chunk.
const ORACLE_CHUNK: usize = 8192;

/// Brute-force oracle: the sample mean of log-likelihood-ratio draws under
/// the truth. With a censoring time, each draw contributes the exact or the
/// censored ratio according to whether it exceeds `C`. Draws are split into
/// fixed chunks on independent substreams and merged in chunk order, so the
/// estimate is reproducible and independent of the `parallel` feature.
pub fn kl_oracle(
    model: &Law,
    truth: &Law,
    c: Option<f64>,
    n: usize,
    seed: u64,
) -> Result<OracleEstimate> {
    truth.family.validate(&truth.theta)?;
    model.family.validate(&model.theta)?;
    if n < 1000 {
        return Err(Error::Domain(format!(
            "oracle needs at least 1000 draws, got {n}"
        )));
    }
    if let Some(c) = c {
        if !(truth.family.is_time_to_event() && model.family.is_time_to_event()) {
            return Err(Error::Unsupported(
                "censored divergence is defined for time-to-event families only".into(),
            ));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Domain(format!("censoring time must be > 0, got {c}")));
        }
    }
    check_supports(model, truth)?;

    let censored_atom = c.map(|c| {
        let s1 = truth.family.survival_unchecked(&truth.theta, c).ln();
        let s2 = model.family.survival_unchecked(&model.theta, c).ln();
        s1 - s2
    });

    let n_chunks = n.div_ceil(ORACLE_CHUNK);
    let partials: Vec<(f64, f64)> = exec::map_indexed(n_chunks, |chunk| {
        let lo = chunk * ORACLE_CHUNK;
        let hi = ((chunk + 1) * ORACLE_CHUNK).min(n);
        let mut rng = rng::stream(seed, chunk as u64 + 1);
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in lo..hi {
            let x = truth.family.draw(&truth.theta, &mut rng);
            let term = match (c, censored_atom) {
                (Some(c), Some(atom)) if x > c => atom,
                _ => {
                    truth.family.log_density_unchecked(&truth.theta, x)
                        - model.family.log_density_unchecked(&model.theta, x)
                }
            };
            sum += term;
            sum_sq += term * term;
        }
        (sum, sum_sq)
    });
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for (s, q) in partials {
        sum += s;
        sum_sq += q;
    }
    let n_f = n as f64;
    let mean = sum / n_f;
    let var = ((sum_sq - n_f * mean * mean) / (n_f - 1.0)).max(0.0);
    if !mean.is_finite() {
        return Err(Error::Numerical("non-finite Monte Carlo terms".into()));
    }
    Ok(OracleEstimate {
        estimate: mean,
        std_error: (var / n_f).sqrt(),
    })
}

/// The minimizer of the divergence over a model family and the attained
/// minimum. `boundary` flags solutions that ran to the edge of the
/// parameter box (the minimizing value may not exist in the open family).
#[derive(Clone, Debug)]
pub struct MisspecificationRisk {
    pub theta_opt: Params,
    pub risk: f64,
    pub boundary: bool,
}

/// Unconstrained coordinates beyond this magnitude are treated as a
/// boundary escape.
const BOUNDARY_LIMIT: f64 = 20.0;

/// Minimizes `theta -> kl(model(theta), truth)` (censored at `c` when
/// given) over the family, starting from the method of moments on a fixed
/// seeded sample of the truth.
pub fn misspecification_risk(
    family: Family,
    truth: &Law,
    c: Option<f64>,
) -> Result<MisspecificationRisk> {
    truth.family.validate(&truth.theta)?;
    // tighter quadrature than the public divergence entry points: the
    // optimizer differentiates through this objective, so quadrature jitter
    // must stay well below the finite-difference step
    let quad = Integrator {
        abs_tol: 1e-12,
        max_intervals: 400,
    };
    let draws = {
        let mut rng = rng::stream(MOM_SEED, 0);
        (0..MOM_DRAWS)
            .map(|_| truth.family.draw(&truth.theta, &mut rng))
            .collect::<Vec<f64>>()
    };
    let start = family.method_of_moments(&draws)?;
    let u0 = family.to_unconstrained(&start);
    let objective = |u: &[f64]| {
        let theta = family.from_unconstrained(u);
        let model = match Law::new(family, match Params::new(theta) {
            Ok(p) => p,
            Err(_) => return f64::NEG_INFINITY,
        }) {
            Ok(m) => m,
            Err(_) => return f64::NEG_INFINITY,
        };
        let value = match c {
            Some(c) => kl_censored_with(&model, truth, c, &quad),
            None => kl_full_with(&model, truth, &quad),
        };
        match value {
            Ok(v) => -v,
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let fit = optim::maximize_with_options(objective, &u0, 1e-6, 300)?;
    if !fit.converged {
        return Err(Error::Numerical(format!(
            "risk minimization did not converge (gradient sup-norm {:.3e})",
            fit.grad_norm
        )));
    }
    let boundary = fit.theta_hat.iter().any(|u| u.abs() > BOUNDARY_LIMIT);
    let theta_opt = Params::new(family.from_unconstrained(&fit.theta_hat))?;
    Ok(MisspecificationRisk {
        theta_opt,
        risk: -fit.loglik_at_max,
        boundary,
    })
}
