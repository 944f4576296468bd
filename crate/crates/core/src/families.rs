//! Parametric families: exponential, Weibull, normal and binomial laws with
//! densities, survival functions, inverse-CDF samplers and the closed-form
//! maximum-likelihood estimates used as oracles elsewhere.
//!
//! Parameter conventions (all boxes are open):
//! * `exponential: [rate]`, rate > 0
//! * `weibull: [shape, scale]`, both > 0
//! * `normal: [mean, variance]`, variance > 0
//! * `binomial: [probability]` in (0, 1), with the trial count carried by the
//!   family itself as a structural constant

use rand_chacha::ChaCha8Rng;
use statrs::function::erf::{erf_inv, erfc};
use statrs::function::gamma::ln_gamma;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;

const LN_2PI: f64 = 1.8378770664093453;

/// A named distribution family. The binomial trial count is structural: the
/// probability is the only free parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Exponential,
    Weibull,
    Normal,
    Binomial { trials: u32 },
}

/// The support of a family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Support {
    /// [0, +inf)
    PositiveReals,
    /// the whole real line
    Reals,
    /// {0, 1, ..., max}
    Counts { max: u32 },
}

/// A parameter vector. Length and finiteness are checked on construction;
/// family-specific box constraints are checked by [`Family::validate`].
#[derive(Clone, Debug, PartialEq)]
pub struct Params(Vec<f64>);

impl Params {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("parameters must be finite".into()));
        }
        Ok(Params(theta))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Deref for Params {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A family together with a concrete parameter vector: one probability law.
/// Also serves as the simulation ground truth in risk experiments.
#[derive(Clone, Debug)]
pub struct Law {
    pub family: Family,
    pub theta: Params,
}

impl Law {
    pub fn new(family: Family, theta: Params) -> Result<Self> {
        family.validate(&theta)?;
        Ok(Law { family, theta })
    }

    /// Parses the CLI spec string `name:p1[,p2]`, e.g. `exponential:1.0`,
    /// `weibull:2.0,1.0`, `normal:0,1`, `binomial:10,0.5` (trials, probability).
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, rest) = spec
            .split_once(':')
            .ok_or_else(|| Error::Domain(format!("family spec `{spec}` lacks `:` parameters")))?;
        let values: Vec<f64> = rest
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Domain(format!("bad number `{tok}` in family spec")))
            })
            .collect::<Result<_>>()?;
        let (family, theta) = match name.trim() {
            "exponential" | "weibull" | "normal" => {
                (Family::from_name(name.trim())?, values)
            }
            "binomial" => {
                if values.len() != 2 {
                    return Err(Error::Domain(
                        "binomial spec is binomial:<trials>,<probability>".into(),
                    ));
                }
                let trials = values[0];
                if trials < 1.0 || trials.fract() != 0.0 || trials > u32::MAX as f64 {
                    return Err(Error::Domain("binomial trial count must be a positive integer".into()));
                }
                (
                    Family::Binomial {
                        trials: trials as u32,
                    },
                    vec![values[1]],
                )
            }
            other => return Err(Error::Domain(format!("unknown family `{other}`"))),
        };
        Law::new(family, Params::new(theta)?)
    }

    pub fn log_density(&self, x: f64) -> Result<f64> {
        self.family.log_density(&self.theta, x)
    }

    pub fn survival(&self, x: f64) -> Result<f64> {
        self.family.survival(&self.theta, x)
    }
}

impl Family {
    /// Parses a bare family name; the binomial needs its structural trial
    /// count as `binomial:<trials>`.
    pub fn from_name(name: &str) -> Result<Family> {
        match name.trim() {
            "exponential" => Ok(Family::Exponential),
            "weibull" => Ok(Family::Weibull),
            "normal" => Ok(Family::Normal),
            "binomial" => Err(Error::Domain(
                "binomial requires a trial count: use binomial:<trials>".into(),
            )),
            spec => {
                if let Some(("binomial", t)) = spec.split_once(':').map(|(a, b)| (a.trim(), b)) {
                    let trials: u32 = t
                        .trim()
                        .parse()
                        .map_err(|_| Error::Domain(format!("bad binomial trial count `{t}`")))?;
                    if trials == 0 {
                        return Err(Error::Domain("binomial trial count must be positive".into()));
                    }
                    Ok(Family::Binomial { trials })
                } else {
                    Err(Error::Domain(format!("unknown family `{spec}`")))
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Exponential => "exponential",
            Family::Weibull => "weibull",
            Family::Normal => "normal",
            Family::Binomial { .. } => "binomial",
        }
    }

    pub fn param_dim(&self) -> usize {
        match self {
            Family::Exponential => 1,
            Family::Weibull => 2,
            Family::Normal => 2,
            Family::Binomial { .. } => 1,
        }
    }

    pub fn support(&self) -> Support {
        match self {
            Family::Exponential | Family::Weibull => Support::PositiveReals,
            Family::Normal => Support::Reals,
            Family::Binomial { trials } => Support::Counts { max: *trials },
        }
    }

    /// Time-to-event families admit right censoring.
    pub fn is_time_to_event(&self) -> bool {
        matches!(self, Family::Exponential | Family::Weibull)
    }

    /// Checks the open-box constraints for this family.
    pub fn validate(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_dim() {
            return Err(Error::Domain(format!(
                "{} expects {} parameter(s), got {}",
                self.name(),
                self.param_dim(),
                theta.len()
            )));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("parameters must be finite".into()));
        }
        let ok = match self {
            Family::Exponential => theta[0] > 0.0,
            Family::Weibull => theta[0] > 0.0 && theta[1] > 0.0,
            Family::Normal => theta[1] > 0.0,
            Family::Binomial { .. } => theta[0] > 0.0 && theta[0] < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "parameters {:?} outside the open box of {}",
                theta,
                self.name()
            )))
        }
    }

    fn check_support(&self, x: f64) -> Result<()> {
        if !x.is_finite() {
            return Err(Error::Domain("observation must be finite".into()));
        }
        match self.support() {
            Support::PositiveReals if x < 0.0 => Err(Error::Domain(format!(
                "{} is supported on [0, inf); got {x}",
                self.name()
            ))),
            Support::Counts { max } if x < 0.0 || x > max as f64 || x.fract().abs() > 1e-9 => {
                Err(Error::Domain(format!(
                    "binomial with {max} trials needs integer outcomes in [0, {max}]; got {x}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Log density (or log mass) at `x`. `x` must lie in the support.
    pub fn log_density(&self, theta: &[f64], x: f64) -> Result<f64> {
        self.validate(theta)?;
        self.check_support(x)?;
        Ok(self.log_density_unchecked(theta, x))
    }

    pub(crate) fn log_density_unchecked(&self, theta: &[f64], x: f64) -> f64 {
        match self {
            Family::Exponential => theta[0].ln() - theta[0] * x,
            Family::Weibull => {
                let (k, s) = (theta[0], theta[1]);
                let z = x / s;
                // z = 0 gives -inf for k > 1 and +inf for k < 1 (boundary of the support)
                k.ln() - s.ln() + (k - 1.0) * z.ln() - z.powf(k)
            }
            Family::Normal => {
                let (mu, var) = (theta[0], theta[1]);
                -0.5 * (LN_2PI + var.ln()) - (x - mu) * (x - mu) / (2.0 * var)
            }
            Family::Binomial { trials } => {
                let n = *trials as f64;
                let p = theta[0];
                ln_gamma(n + 1.0) - ln_gamma(x + 1.0) - ln_gamma(n - x + 1.0)
                    + x * p.ln()
                    + (n - x) * (1.0 - p).ln()
            }
        }
    }

    /// Survival function S(x) = 1 - F(x); for the binomial this is
    /// P(X > floor(x)).
    pub fn survival(&self, theta: &[f64], x: f64) -> Result<f64> {
        self.validate(theta)?;
        self.check_support(x)?;
        Ok(self.survival_unchecked(theta, x))
    }

    pub(crate) fn survival_unchecked(&self, theta: &[f64], x: f64) -> f64 {
        match self {
            Family::Exponential => (-theta[0] * x).exp(),
            Family::Weibull => (-(x / theta[1]).powf(theta[0])).exp(),
            Family::Normal => {
                let z = (x - theta[0]) / theta[1].sqrt();
                0.5 * erfc(z / std::f64::consts::SQRT_2)
            }
            Family::Binomial { trials } => {
                let k = x.round() as u32;
                let mut tail = 0.0;
                for j in (k + 1)..=*trials {
                    tail += self.log_density_unchecked(theta, j as f64).exp();
                }
                tail
            }
        }
    }

    /// Joint evaluation `(log density, survival)` at `x`.
    pub fn eval(&self, theta: &[f64], x: f64) -> Result<(f64, f64)> {
        self.validate(theta)?;
        self.check_support(x)?;
        Ok((
            self.log_density_unchecked(theta, x),
            self.survival_unchecked(theta, x),
        ))
    }

    /// Quantile function at `u` in (0, 1).
    pub fn quantile(&self, theta: &[f64], u: f64) -> Result<f64> {
        self.validate(theta)?;
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain(format!("quantile level {u} outside (0, 1)")));
        }
        Ok(self.quantile_unchecked(theta, u))
    }

    fn quantile_unchecked(&self, theta: &[f64], u: f64) -> f64 {
        match self {
            Family::Exponential => -(-u).ln_1p() / theta[0],
            Family::Weibull => theta[1] * (-(-u).ln_1p()).powf(1.0 / theta[0]),
            Family::Normal => {
                theta[0] + (theta[1].sqrt()) * std::f64::consts::SQRT_2 * erf_inv(2.0 * u - 1.0)
            }
            Family::Binomial { trials } => {
                let mut cdf = 0.0;
                for k in 0..=*trials {
                    cdf += self.log_density_unchecked(theta, k as f64).exp();
                    if cdf >= u {
                        return k as f64;
                    }
                }
                *trials as f64
            }
        }
    }

    /// One draw by inverse-CDF transform of a uniform from the shared stream.
    pub(crate) fn draw(&self, theta: &[f64], rng: &mut ChaCha8Rng) -> f64 {
        self.quantile_unchecked(theta, rng::unit_open(rng))
    }

    /// Draws `n` values, deterministically in `seed`. Stream 0 of the seed is
    /// used; Monte Carlo helpers elsewhere use higher stream ids.
    pub fn sample(&self, theta: &[f64], n: usize, seed: u64) -> Result<Vec<f64>> {
        self.validate(theta)?;
        if n == 0 {
            return Err(Error::Domain("sample size must be at least 1".into()));
        }
        let mut rng = rng::stream(seed, 0);
        Ok((0..n).map(|_| self.draw(theta, &mut rng)).collect())
    }

    /// Closed-form maximum-likelihood estimate where one exists:
    /// * exponential with any right-censoring pattern: events / total follow-up;
    /// * normal on exact data: sample mean and (1/n) variance;
    /// * binomial on exact data: total successes / (n * trials).
    pub fn analytic_mle(&self, data: &Dataset) -> Result<Params> {
        let any_censored = data.iter().any(|o| !o.is_event());
        match self {
            Family::Exponential => {
                let events = data.n_events();
                if events == 0 {
                    return Err(Error::Degenerate(
                        "exponential MLE needs at least one event".into(),
                    ));
                }
                let total: f64 = data.iter().map(|o| o.time()).sum();
                if total <= 0.0 {
                    return Err(Error::Degenerate("total follow-up time is zero".into()));
                }
                Params::new(vec![events as f64 / total])
            }
            Family::Normal => {
                if any_censored {
                    return Err(Error::Unsupported(
                        "no closed-form normal MLE under censoring".into(),
                    ));
                }
                let n = data.n() as f64;
                let mean = data.iter().map(|o| o.time()).sum::<f64>() / n;
                let var = data
                    .iter()
                    .map(|o| (o.time() - mean) * (o.time() - mean))
                    .sum::<f64>()
                    / n;
                if var <= 0.0 {
                    return Err(Error::Degenerate(
                        "normal MLE variance is zero (constant data)".into(),
                    ));
                }
                Params::new(vec![mean, var])
            }
            Family::Binomial { trials } => {
                if any_censored {
                    return Err(Error::Unsupported(
                        "no closed-form binomial MLE under censoring".into(),
                    ));
                }
                for o in data.iter() {
                    self.check_support(o.time())?;
                }
                let total: f64 = data.iter().map(|o| o.time()).sum();
                let p = total / (data.n() as f64 * *trials as f64);
                if p <= 0.0 || p >= 1.0 {
                    return Err(Error::Degenerate(format!(
                        "binomial MLE {p} lies on the boundary"
                    )));
                }
                Params::new(vec![p])
            }
            Family::Weibull => Err(Error::Unsupported(
                "the Weibull MLE has no closed form; use the numerical fitter".into(),
            )),
        }
    }

    /// Method-of-moments estimate from raw values; used to initialize
    /// numerical fits. Falls back to interior defaults on degenerate input.
    pub fn method_of_moments(&self, values: &[f64]) -> Result<Params> {
        if values.is_empty() {
            return Err(Error::EmptyData("method of moments needs data".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        match self {
            Family::Exponential => {
                if mean <= 0.0 {
                    return Err(Error::Degenerate("nonpositive mean".into()));
                }
                Params::new(vec![1.0 / mean])
            }
            Family::Normal => Params::new(vec![mean, var.max(1e-12)]),
            Family::Binomial { trials } => {
                let p = (mean / *trials as f64).clamp(1e-6, 1.0 - 1e-6);
                Params::new(vec![p])
            }
            Family::Weibull => {
                if mean <= 0.0 {
                    return Err(Error::Degenerate("nonpositive mean".into()));
                }
                let cv2 = (var / (mean * mean)).max(1e-10);
                // CV^2 = Gamma(1+2/k)/Gamma(1+1/k)^2 - 1 is decreasing in k.
                let g = |k: f64| {
                    (ln_gamma(1.0 + 2.0 / k) - 2.0 * ln_gamma(1.0 + 1.0 / k)).exp() - 1.0
                };
                let (mut lo, mut hi) = (0.05, 100.0);
                let k = if g(lo) < cv2 {
                    lo
                } else if g(hi) > cv2 {
                    hi
                } else {
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        if g(mid) > cv2 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    0.5 * (lo + hi)
                };
                let scale = mean / (ln_gamma(1.0 + 1.0 / k)).exp();
                Params::new(vec![k, scale])
            }
        }
    }

    /// Maps parameters to an unconstrained vector (log for positive
    /// parameters, logit for probabilities, identity for means).
    pub fn to_unconstrained(&self, theta: &[f64]) -> Vec<f64> {
        match self {
            Family::Exponential => vec![theta[0].ln()],
            Family::Weibull => vec![theta[0].ln(), theta[1].ln()],
            Family::Normal => vec![theta[0], theta[1].ln()],
            Family::Binomial { .. } => vec![(theta[0] / (1.0 - theta[0])).ln()],
        }
    }

    /// Inverse of [`Family::to_unconstrained`]; always lands inside the box.
    pub fn from_unconstrained(&self, u: &[f64]) -> Vec<f64> {
        match self {
            Family::Exponential => vec![u[0].exp()],
            Family::Weibull => vec![u[0].exp(), u[1].exp()],
            Family::Normal => vec![u[0], u[1].exp()],
            Family::Binomial { .. } => vec![1.0 / (1.0 + (-u[0]).exp())],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use approx::assert_abs_diff_eq;

    fn dataset(obs: Vec<Observation>) -> Dataset {
        Dataset::new(obs).unwrap()
    }

    #[test]
    fn eval_matches_analytic_values() {
        let (ld, s) = Family::Exponential.eval(&[1.0], 1.0).unwrap();
        assert_abs_diff_eq!(ld, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s, (-1.0f64).exp(), epsilon = 1e-12);

        let (ld, s) = Family::Weibull.eval(&[2.0, 1.0], 1.0).unwrap();
        assert_abs_diff_eq!(ld, 2.0f64.ln() - 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s, (-1.0f64).exp(), epsilon = 1e-12);

        let (ld, s) = Family::Normal.eval(&[0.0, 1.0], 0.0).unwrap();
        assert_abs_diff_eq!(ld, -0.9189385332046727, epsilon = 1e-12);
        assert_abs_diff_eq!(s, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn eval_rejects_bad_inputs() {
        assert!(Family::Exponential.eval(&[-1.0], 1.0).is_err());
        assert!(Family::Exponential.eval(&[1.0], -0.5).is_err());
        assert!(Family::Binomial { trials: 10 }.eval(&[0.5], 3.5).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        let q = crate::quad::Integrator::default();
        for (family, theta) in [
            (Family::Exponential, vec![0.7]),
            (Family::Exponential, vec![3.0]),
            (Family::Weibull, vec![2.0, 1.5]),
            (Family::Weibull, vec![1.3, 0.4]),
            (Family::Normal, vec![1.0, 4.0]),
        ] {
            let mass = match family.support() {
                Support::PositiveReals => q
                    .integrate_to_infinity(
                        |x| family.log_density_unchecked(&theta, x).exp(),
                        0.0,
                    )
                    .unwrap(),
                Support::Reals => q
                    .integrate_real_line(|x| family.log_density_unchecked(&theta, x).exp())
                    .unwrap(),
                Support::Counts { .. } => unreachable!(),
            };
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-8);
        }
        let binom = Family::Binomial { trials: 12 };
        let mass: f64 = (0..=12)
            .map(|k| binom.log_density_unchecked(&[0.3], k as f64).exp())
            .sum();
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn survival_is_nonincreasing() {
        for (family, theta) in [
            (Family::Exponential, vec![1.2]),
            (Family::Weibull, vec![0.8, 2.0]),
            (Family::Normal, vec![0.0, 1.0]),
        ] {
            let grid: Vec<f64> = (0..100).map(|i| i as f64 * 0.08).collect();
            let mut prev = f64::INFINITY;
            for &x in &grid {
                let s = family.survival_unchecked(&theta, x);
                assert!(s <= prev + 1e-15);
                prev = s;
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_in_the_seed() {
        let a = Family::Weibull.sample(&[2.0, 1.0], 64, 99).unwrap();
        let b = Family::Weibull.sample(&[2.0, 1.0], 64, 99).unwrap();
        let c = Family::Weibull.sample(&[2.0, 1.0], 64, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn exponential_sample_mean_obeys_the_law_of_large_numbers() {
        let n = 100_000;
        let xs = Family::Exponential.sample(&[2.0], n, 42).unwrap();
        let mean = xs.iter().sum::<f64>() / n as f64;
        // 3-sigma band around 0.5 with sd = sqrt(1/(4 n))
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn kolmogorov_smirnov_against_the_family_cdf() {
        let n = 100_000;
        for (family, theta, seed) in [
            (Family::Normal, vec![0.0, 1.0], 7u64),
            (Family::Exponential, vec![1.0], 11),
            (Family::Weibull, vec![2.0, 1.0], 13),
        ] {
            let mut xs = family.sample(&theta, n, seed).unwrap();
            xs.sort_by(f64::total_cmp);
            let mut ks: f64 = 0.0;
            for (i, &x) in xs.iter().enumerate() {
                let f = 1.0 - family.survival_unchecked(&theta, x);
                let hi = (i + 1) as f64 / n as f64 - f;
                let lo = f - i as f64 / n as f64;
                ks = ks.max(hi.max(lo));
            }
            assert!(
                ks < 1.95 / (n as f64).sqrt(),
                "{}: KS statistic {ks}",
                family.name()
            );
        }
    }

    #[test]
    fn analytic_mle_oracles() {
        let exact = dataset(vec![
            Observation::exact(1.0),
            Observation::exact(2.0),
            Observation::exact(3.0),
        ]);
        let mle = Family::Exponential.analytic_mle(&exact).unwrap();
        assert_abs_diff_eq!(mle[0], 0.5, epsilon = 1e-15);

        let censored = dataset(vec![
            Observation::exact(1.0),
            Observation::exact(2.0),
            Observation::censored(3.0),
        ]);
        let mle = Family::Exponential.analytic_mle(&censored).unwrap();
        assert_abs_diff_eq!(mle[0], 1.0 / 3.0, epsilon = 1e-15);

        let normal = dataset(vec![Observation::exact(0.0), Observation::exact(2.0)]);
        let mle = Family::Normal.analytic_mle(&normal).unwrap();
        assert_abs_diff_eq!(mle[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(mle[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn analytic_mle_error_paths() {
        let all_censored = dataset(vec![Observation::censored(1.0)]);
        assert!(matches!(
            Family::Exponential.analytic_mle(&all_censored),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            Family::Weibull.analytic_mle(&all_censored),
            Err(Error::Unsupported(_))
        ));
        let censored_normal = dataset(vec![Observation::exact(1.0), Observation::censored(2.0)]);
        assert!(matches!(
            Family::Normal.analytic_mle(&censored_normal),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn unconstrained_round_trip() {
        for (family, theta) in [
            (Family::Exponential, vec![0.37]),
            (Family::Weibull, vec![2.0, 1.4]),
            (Family::Normal, vec![-1.0, 2.5]),
            (Family::Binomial { trials: 5 }, vec![0.62]),
        ] {
            let u = family.to_unconstrained(&theta);
            let back = family.from_unconstrained(&u);
            for (a, b) in theta.iter().zip(&back) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn spec_strings_parse() {
        let law = Law::parse("exponential:1.0").unwrap();
        assert_eq!(law.family, Family::Exponential);
        let law = Law::parse("weibull:2.0,1.0").unwrap();
        assert_eq!(law.theta.as_slice(), &[2.0, 1.0]);
        let law = Law::parse("binomial:10,0.5").unwrap();
        assert_eq!(law.family, Family::Binomial { trials: 10 });
        assert!(Law::parse("exponential").is_err());
        assert!(Law::parse("gamma:1.0").is_err());
        assert!(Law::parse("exponential:-2.0").is_err());
    }
}
