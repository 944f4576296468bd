//! Model choice: AIC and the per-observation EKL estimate, the risk
//! difference statistic D, likelihood cross-validation for the smoothing
//! weight, a simulation harness for the risk decomposition, and the
//! flat-versus-Jeffreys MAP demonstration on the binomial.

use crate::data::Dataset;
use crate::divergence;
use crate::error::{Error, Result};
use crate::exec;
use crate::families::{Family, Law, Params};
use crate::likelihood;
use crate::optim::FitResult;
use crate::penalized::{self, HazardProblem};
use crate::rng;

/// AIC and the matching per-observation estimate of the expected
/// Kullback-Leibler risk: `aic = -2 loglik + 2p` and
/// `ekl = (-loglik + p) / n`, so `aic = 2n * ekl` identically.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelScores {
    pub aic: f64,
    pub ekl_estimate: f64,
}

pub fn model_scores(fit: &FitResult, n: usize) -> Result<ModelScores> {
    if n == 0 {
        return Err(Error::Domain("n must be >= 1".into()));
    }
    if !fit.converged {
        return Err(Error::Numerical(format!(
            "refusing scores for an unconverged fit (gradient sup-norm {:.3e} \
             after {} iterations)",
            fit.grad_norm, fit.iterations
        )));
    }
    let p = fit.p as f64;
    Ok(ModelScores {
        aic: -2.0 * fit.loglik_at_max + 2.0 * p,
        ekl_estimate: (-fit.loglik_at_max + p) / n as f64,
    })
}

/// Estimated difference of risks between two fits of the same data:
/// `D = (AIC_a - AIC_b) / (2n)`. Positive values favor model `b`.
pub fn risk_difference(fit_a: &FitResult, fit_b: &FitResult, n: usize) -> Result<f64> {
    match (fit_a.n_obs, fit_b.n_obs) {
        (Some(na), Some(nb)) if na != nb || na != n => {
            return Err(Error::Domain(format!(
                "risk difference needs fits of the same dataset: n = {na} vs {nb} (stated {n})"
            )));
        }
        (Some(na), None) | (None, Some(na)) if na != n => {
            return Err(Error::Domain(format!(
                "stated n = {n} does not match the fit's n = {na}"
            )));
        }
        _ => {}
    }
    let a = model_scores(fit_a, n)?;
    let b = model_scores(fit_b, n)?;
    Ok((a.aic - b.aic) / (2.0 * n as f64))
}

/// Likelihood cross-validation over a kappa grid.
#[derive(Clone, Debug)]
pub struct LcvResult {
    pub kappa_star: f64,
    /// `(kappa, mean held-out log-likelihood per observation)` in grid order.
    pub scores: Vec<(f64, f64)>,
}

/// Chooses the penalty weight by k-fold likelihood cross-validation: folds
/// are stratified on event status with a seeded shuffle, the spline model is
/// fitted on each training complement, and the held-out log-likelihood is
/// averaged per observation. Ties break toward the larger (smoother) kappa.
pub fn lcv_select(
    data: &Dataset,
    basis_dim: usize,
    kappa_grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<LcvResult> {
    if kappa_grid.is_empty() {
        return Err(Error::Domain("kappa grid is empty".into()));
    }
    if kappa_grid.iter().any(|&k| k < 0.0 || !k.is_finite()) {
        return Err(Error::Domain("kappa grid values must be finite and >= 0".into()));
    }
    if folds < 2 || folds > data.n() {
        return Err(Error::Domain(format!(
            "folds must lie in [2, n = {}], got {folds}",
            data.n()
        )));
    }

    // stratified fold assignment: shuffle events and censored separately,
    // deal them round-robin
    let mut fold_of = vec![0usize; data.n()];
    let mut events: Vec<usize> = (0..data.n()).filter(|&i| data.get(i).is_event()).collect();
    let mut censored: Vec<usize> = (0..data.n()).filter(|&i| !data.get(i).is_event()).collect();
    rng::shuffle(&mut events, &mut rng::stream(seed, 0));
    rng::shuffle(&mut censored, &mut rng::stream(seed, 1));
    for (pos, &i) in events.iter().chain(censored.iter()).enumerate() {
        fold_of[i] = pos % folds;
    }

    let basis = penalized::default_basis(data, basis_dim)?;
    let mut train_sets = Vec::with_capacity(folds);
    let mut test_sets = Vec::with_capacity(folds);
    for f in 0..folds {
        let train: Vec<usize> = (0..data.n()).filter(|&i| fold_of[i] != f).collect();
        let test: Vec<usize> = (0..data.n()).filter(|&i| fold_of[i] == f).collect();
        if test.is_empty() {
            return Err(Error::Fold(format!("fold {f} is empty")));
        }
        let train_data = data.subset(&train)?;
        if train_data.n_events() == 0 {
            return Err(Error::Fold(format!(
                "training fold {f} has zero events; reduce the number of folds"
            )));
        }
        train_sets.push(train_data);
        test_sets.push(data.subset(&test)?);
    }

    // independent (kappa, fold) tasks, merged in fixed order
    let tasks = kappa_grid.len() * folds;
    let held_out: Vec<Result<f64>> = exec::map_indexed(tasks, |t| {
        let (ki, f) = (t / folds, t % folds);
        let problem = HazardProblem::new(&train_sets[f], basis.clone())?;
        let (fit, _) = problem.fit(kappa_grid[ki], None)?;
        let test_problem = HazardProblem::new(&test_sets[f], basis.clone())?;
        Ok(test_problem.loglik(&fit.theta_hat))
    });

    let mut scores = Vec::with_capacity(kappa_grid.len());
    let mut iter = held_out.into_iter();
    for &kappa in kappa_grid {
        let mut total = 0.0;
        for _ in 0..folds {
            total += iter.next().unwrap()?;
        }
        scores.push((kappa, total / data.n() as f64));
    }

    let mut best = 0;
    for i in 1..scores.len() {
        let better = scores[i].1 > scores[best].1
            || (scores[i].1 == scores[best].1 && scores[i].0 > scores[best].0);
        if better {
            best = i;
        }
    }
    Ok(LcvResult {
        kappa_star: scores[best].0,
        scores,
    })
}

/// Output of the risk-decomposition simulation.
#[derive(Clone, Copy, Debug)]
pub struct EklSimulation {
    /// Average divergence of the fitted law from the truth over replicates.
    pub mean_ekl: f64,
    /// Minimal attainable divergence of the fitted family from the truth.
    pub misspec_component: f64,
    /// `mean_ekl - misspec_component`.
    pub statistical_component: f64,
    pub reps: usize,
    pub failures: usize,
}

/// Estimates the expected Kullback-Leibler risk of fitting `fitted_family`
/// to data from `truth` by brute-force replication: each replicate draws `n`
/// fresh observations (right-censored at `C` when given), fits the family by
/// maximum likelihood, and evaluates the divergence of the fitted law from
/// the truth on the matching sigma-field. The misspecification component is
/// the minimized divergence; the statistical component is the remainder.
pub fn simulate_ekl(
    truth: &Law,
    fitted_family: Family,
    n: usize,
    reps: usize,
    c: Option<f64>,
    seed: u64,
) -> Result<EklSimulation> {
    if reps < 100 {
        return Err(Error::Domain(format!("need at least 100 replicates, got {reps}")));
    }
    if n == 0 {
        return Err(Error::Domain("n must be >= 1".into()));
    }
    if let Some(c) = c {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Domain(format!("censoring time must be > 0, got {c}")));
        }
        if !truth.family.is_time_to_event() || !fitted_family.is_time_to_event() {
            return Err(Error::Unsupported(
                "censoring requires time-to-event families".into(),
            ));
        }
    }
    truth.family.validate(&truth.theta)?;

    let misspec = divergence::misspecification_risk(fitted_family, truth, c)?;

    let replicate = |r: usize| -> Result<f64> {
        let mut rng = rng::stream(seed, r as u64 + 1);
        let observations = (0..n)
            .map(|_| {
                let x = truth.family.draw(&truth.theta, &mut rng);
                match c {
                    Some(c) if x > c => crate::data::Observation::censored(c),
                    _ => crate::data::Observation::exact(x),
                }
            })
            .collect();
        let dataset = Dataset::new(observations)?;
        let fit = likelihood::fit_mle(fitted_family, &dataset)?;
        if !fit.converged {
            return Err(Error::Numerical("replicate fit did not converge".into()));
        }
        let fitted = Law::new(fitted_family, Params::new(fit.theta_hat)?)?;
        match c {
            Some(c) => divergence::kl_censored(&fitted, truth, c),
            None => divergence::kl_full(&fitted, truth),
        }
    };
    let outcomes: Vec<Result<f64>> = exec::map_indexed(reps, replicate);

    let mut total = 0.0;
    let mut failures = 0usize;
    for outcome in outcomes {
        match outcome {
            Ok(v) => total += v,
            Err(_) => failures += 1,
        }
    }
    if failures as f64 > 0.01 * reps as f64 {
        return Err(Error::Harness(format!(
            "{failures} of {reps} replicate fits failed"
        )));
    }
    let mean_ekl = total / (reps - failures) as f64;
    Ok(EklSimulation {
        mean_ekl,
        misspec_component: misspec.risk,
        statistical_component: mean_ekl - misspec.risk,
        reps,
        failures,
    })
}

/// Prior for the binomial MAP demonstration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Prior {
    Flat,
    Jeffreys,
}

/// Maximum a posteriori estimate of a binomial probability from `k`
/// successes in `n` trials. The flat prior reproduces the maximum
/// likelihood estimate `k/n`; the Jeffreys prior tilts the objective and
/// shifts the maximum to `(k - 1/2) / (n - 1)`, which only exists away from
/// the boundary (`1 <= k <= n-1`).
pub fn map_estimate(k: u64, n: u64, prior: Prior) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("need at least one trial".into()));
    }
    if k > n {
        return Err(Error::Domain(format!("{k} successes out of {n} trials")));
    }
    match prior {
        Prior::Flat => Ok(k as f64 / n as f64),
        Prior::Jeffreys => {
            if k == 0 || k == n {
                return Err(Error::Domain(format!(
                    "the Jeffreys-tilted objective has its maximum on the boundary for k = {k}, n = {n}"
                )));
            }
            Ok((k as f64 - 0.5) / (n as f64 - 1.0))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use approx::assert_abs_diff_eq;

    fn fake_fit(loglik: f64, p: usize, n: Option<usize>) -> FitResult {
        FitResult {
            theta_hat: vec![0.0; p],
            loglik_at_max: loglik,
            grad_norm: 0.0,
            iterations: 1,
            converged: true,
            p,
            n_obs: n,
        }
    }

    #[test]
    fn score_formulas_are_exact() {
        let scores = model_scores(&fake_fit(-10.0, 2, None), 50).unwrap();
        assert_eq!(scores.aic, 24.0);
        assert_eq!(scores.ekl_estimate, 0.24);
        // aic = 2n ekl identically
        assert_eq!(scores.aic, 2.0 * 50.0 * scores.ekl_estimate);
    }

    #[test]
    fn unconverged_fits_are_refused() {
        let mut fit = fake_fit(-10.0, 2, None);
        fit.converged = false;
        assert!(model_scores(&fit, 50).is_err());
    }

    #[test]
    fn risk_difference_formula_and_antisymmetry() {
        let a = fake_fit(-118.0, 2, Some(100)); // aic 240
        let b = fake_fit(-116.0, 2, Some(100)); // aic 236
        let d = risk_difference(&a, &b, 100).unwrap();
        assert_abs_diff_eq!(d, 0.02, epsilon = 1e-15);
        assert_eq!(
            risk_difference(&b, &a, 100).unwrap(),
            -d,
        );
        assert_eq!(risk_difference(&a, &a, 100).unwrap(), 0.0);
        let c = fake_fit(-116.0, 2, Some(50));
        assert!(risk_difference(&a, &c, 100).is_err());
    }

    #[test]
    fn map_estimates_match_the_stationary_points() {
        assert_eq!(map_estimate(6, 10, Prior::Flat).unwrap(), 0.6);
        assert_abs_diff_eq!(
            map_estimate(6, 10, Prior::Jeffreys).unwrap(),
            5.5 / 9.0,
            epsilon = 1e-15
        );
        assert_eq!(map_estimate(5, 10, Prior::Flat).unwrap(), 0.5);
        assert_eq!(map_estimate(5, 10, Prior::Jeffreys).unwrap(), 0.5);
        assert!(map_estimate(0, 10, Prior::Jeffreys).is_err());
        assert!(map_estimate(10, 10, Prior::Jeffreys).is_err());
        assert!(map_estimate(11, 10, Prior::Flat).is_err());
    }

    #[test]
    fn flat_map_equals_the_binomial_mle() {
        for (k, n) in [(1u64, 4u64), (3, 7), (9, 12)] {
            let family = Family::Binomial { trials: n as u32 };
            let data = Dataset::new(vec![Observation::exact(k as f64)]).unwrap();
            let mle = family.analytic_mle(&data).unwrap();
            assert_abs_diff_eq!(
                map_estimate(k, n, Prior::Flat).unwrap(),
                mle[0],
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn lcv_is_deterministic_and_honors_singleton_grids() {
        let draws = Family::Weibull.sample(&[2.0, 1.0], 80, 12).unwrap();
        let data = Dataset::new(
            draws
                .into_iter()
                .map(|x| {
                    if x > 1.8 {
                        Observation::censored(1.8)
                    } else {
                        Observation::exact(x)
                    }
                })
                .collect(),
        )
        .unwrap();
        let single = lcv_select(&data, 7, &[0.5], 4, 3).unwrap();
        assert_eq!(single.kappa_star, 0.5);

        let grid = [0.01, 1.0, 100.0];
        let a = lcv_select(&data, 7, &grid, 4, 3).unwrap();
        let b = lcv_select(&data, 7, &grid, 4, 3).unwrap();
        assert_eq!(a.kappa_star, b.kappa_star);
        assert_eq!(a.scores, b.scores);
        assert!(lcv_select(&data, 7, &grid, 1, 3).is_err());
        assert!(lcv_select(&data, 7, &[], 4, 3).is_err());
    }

    #[test]
    fn lcv_surfaces_zero_event_training_folds() {
        // one event among many censored rows: most training folds lose it
        let mut obs = vec![Observation::exact(1.0)];
        obs.extend((0..11).map(|i| Observation::censored(0.5 + 0.1 * i as f64)));
        let data = Dataset::new(obs).unwrap();
        let r = lcv_select(&data, 5, &[0.1], 3, 0);
        assert!(matches!(r, Err(Error::Fold(_))));
    }

    #[test]
    fn simulate_ekl_requires_enough_replicates() {
        let truth = Law::parse("exponential:1.0").unwrap();
        assert!(simulate_ekl(&truth, Family::Exponential, 50, 10, None, 0).is_err());
    }
}
