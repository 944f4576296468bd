//! klrisk command line: dataset ingestion, subcommand dispatch, JSON reports.
//!
//! All numeric work happens in the library; this layer only parses
//! arguments, reads files and shapes the report. Exit codes: 0 on success,
//! 1 for usage or input format problems, 2 for numerical failures.

mod report;

use clap::{Args, Parser, Subcommand};
use klrisk::data::{parse_dataset, parse_grouped, Dataset};
use klrisk::divergence;
use klrisk::error::Error;
use klrisk::families::{Family, Law};
use klrisk::hlik::{self, RandomEffectsModel};
use klrisk::likelihood;
use klrisk::penalized;
use klrisk::selection;

use report::{
    nullable, GroupedDigest, InputDigest, KktBlock, LcvBlock, OracleBlock, ProfileBlock, Report,
    Results,
};

#[derive(Parser)]
#[command(
    name = "klrisk",
    version,
    about = "Likelihood inference around the Kullback-Leibler risk",
    disable_help_subcommand = true
)]
struct Cli {
    /// Render the report as aligned key/value lines instead of JSON.
    #[arg(long, global = true)]
    pretty: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Maximum-likelihood fit of a parametric family to censored data.
    Fit(FitArgs),
    /// Kullback-Leibler divergence between two laws.
    Kl(KlArgs),
    /// Penalized spline log-hazard fit.
    Penfit(PenfitArgs),
    /// Constrained (sieve) spline fit with KKT diagnostics.
    Sieve(SieveArgs),
    /// Joint h-likelihood fit of a random-intercept model.
    Hfit(HfitArgs),
    /// AIC comparison of two families on the same data.
    Compare(CompareArgs),
    /// Simulation estimate of the expected KL risk and its decomposition.
    SimulateEkl(SimulateArgs),
    /// Binomial MAP demonstration: flat versus Jeffreys prior.
    MapDemo(MapArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Family name: exponential, weibull, normal, or binomial:<trials>.
    #[arg(long)]
    family: String,
    /// CSV file with header time,status[,z1,...].
    #[arg(long)]
    data: String,
}

#[derive(Args)]
struct KlArgs {
    /// True law, e.g. exponential:1.0.
    #[arg(long = "true")]
    truth: String,
    /// Model law, e.g. exponential:2.0.
    #[arg(long)]
    model: String,
    /// Censoring time: compute the divergence on the censored observation.
    #[arg(long)]
    censor: Option<f64>,
    /// Also run the Monte Carlo oracle with this many draws.
    #[arg(long)]
    oracle: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PenfitArgs {
    #[arg(long)]
    data: String,
    /// Spline basis dimension.
    #[arg(long, default_value_t = 12)]
    knots: usize,
    /// Penalty weight; exclusive with --lcv.
    #[arg(long)]
    kappa: Option<f64>,
    /// Choose kappa by likelihood cross-validation over --kappa-grid.
    #[arg(long)]
    lcv: bool,
    /// Comma-separated kappa grid for --lcv.
    #[arg(long)]
    kappa_grid: Option<String>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SieveArgs {
    #[arg(long)]
    data: String,
    /// Constraint level on the roughness J.
    #[arg(long)]
    nu: f64,
    #[arg(long, default_value_t = 12)]
    knots: usize,
}

#[derive(Args)]
struct HfitArgs {
    /// CSV file with header subject,y.
    #[arg(long)]
    data: String,
    /// normal-normal or poisson-lognormal.
    #[arg(long)]
    model: String,
    /// Random-effect standard deviation; exclusive with --tau-grid.
    #[arg(long)]
    tau: Option<f64>,
    /// Comma-separated grid for profile estimation of tau.
    #[arg(long)]
    tau_grid: Option<String>,
    /// Residual variance of the normal-normal model.
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    data: String,
    #[arg(long)]
    family_a: String,
    #[arg(long)]
    family_b: String,
}

#[derive(Args)]
struct SimulateArgs {
    /// True law, e.g. exponential:1.0.
    #[arg(long = "true")]
    truth: String,
    /// Family to fit, e.g. exponential.
    #[arg(long)]
    family: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    reps: usize,
    #[arg(long)]
    censor: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MapArgs {
    /// Number of successes.
    #[arg(long)]
    k: u64,
    /// Number of trials.
    #[arg(long)]
    n: u64,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version are successful outputs, anything else is usage
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    1
                }
            };
            std::process::exit(code);
        }
    };
    let pretty = cli.pretty;
    match run(cli.command) {
        Ok(report) => {
            if pretty {
                println!("{}", report::pretty(&report));
            } else {
                println!("{}", serde_json::to_string(&report).expect("report serializes"));
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(if e.is_input_error() { 1 } else { 2 });
        }
    }
}

fn read_file(path: &str) -> Result<String, Error> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Domain(format!("cannot read `{path}`: {e}")))
}

fn digest(data: &Dataset) -> InputDigest {
    InputDigest {
        rows: data.n(),
        events: data.n_events(),
        censored: data.n() - data.n_events(),
        covariates: data.covariate_dim(),
    }
}

fn parse_grid(text: &str, what: &str) -> Result<Vec<f64>, Error> {
    text.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::Domain(format!("bad number `{tok}` in {what}")))
        })
        .collect()
}

fn argv() -> Vec<String> {
    std::env::args().skip(1).collect()
}

fn run(command: Command) -> Result<Report, Error> {
    let mut warnings = Vec::new();
    let report = match command {
        Command::Fit(args) => {
            let family = Family::from_name(&args.family)?;
            let data = parse_dataset(&read_file(&args.data)?)?;
            let fit = likelihood::fit_mle(family, &data)?;
            let (_, info) = likelihood::score_and_information(family, &fit.theta_hat, &data)?;
            let std_errors: Vec<Option<f64>> = match info.i.clone().try_inverse() {
                Some(inv) => (0..fit.p)
                    .map(|k| {
                        nullable(
                            (inv[(k, k)] / data.n() as f64).sqrt(),
                            &format!("std_errors[{k}]"),
                            &mut warnings,
                        )
                    })
                    .collect(),
                None => {
                    warnings.push("information matrix is singular; no standard errors".into());
                    vec![None; fit.p]
                }
            };
            let scores = selection::model_scores(&fit, data.n())?;
            Report {
                command: "fit".into(),
                argv: argv(),
                input: Some(digest(&data)),
                results: Results::Fit {
                    family: family.name().into(),
                    theta_hat: fit.theta_hat.clone(),
                    std_errors,
                    loglik: fit.loglik_at_max,
                    aic: scores.aic,
                    ekl_estimate: scores.ekl_estimate,
                    grad_norm: fit.grad_norm,
                    iterations: fit.iterations,
                    converged: fit.converged,
                },
                warnings,
            }
        }
        Command::Kl(args) => {
            let truth = Law::parse(&args.truth)?;
            let model = Law::parse(&args.model)?;
            let (divergence_value, field) = match args.censor {
                Some(c) => (divergence::kl_censored(&model, &truth, c)?, "censored"),
                None => (divergence::kl_full(&model, &truth)?, "full"),
            };
            let oracle = match args.oracle {
                Some(n) => {
                    let est = divergence::kl_oracle(&model, &truth, args.censor, n, args.seed)?;
                    Some(OracleBlock {
                        draws: n,
                        seed: args.seed,
                        estimate: est.estimate,
                        std_error: est.std_error,
                    })
                }
                None => None,
            };
            Report {
                command: "kl".into(),
                argv: argv(),
                input: None,
                results: Results::Kl {
                    truth: args.truth,
                    model: args.model,
                    censor: args.censor,
                    observed_field: field.into(),
                    divergence: divergence_value,
                    oracle,
                },
                warnings,
            }
        }
        Command::Penfit(args) => {
            let data = parse_dataset(&read_file(&args.data)?)?;
            let (kappa, lcv) = if args.lcv {
                let grid_text = args.kappa_grid.ok_or_else(|| {
                    Error::Domain("--lcv requires --kappa-grid".into())
                })?;
                let grid = parse_grid(&grid_text, "--kappa-grid")?;
                let result =
                    selection::lcv_select(&data, args.knots, &grid, args.folds, args.seed)?;
                (
                    result.kappa_star,
                    Some(LcvBlock {
                        kappa_star: result.kappa_star,
                        folds: args.folds,
                        seed: args.seed,
                        scores: result.scores,
                    }),
                )
            } else {
                let kappa = args.kappa.ok_or_else(|| {
                    Error::Domain("penfit needs --kappa or --lcv with --kappa-grid".into())
                })?;
                (kappa, None)
            };
            let fit = penalized::fit_penalized(&data, args.knots, kappa)?;
            Report {
                command: "penfit".into(),
                argv: argv(),
                input: Some(digest(&data)),
                results: Results::Penfit {
                    basis_dim: args.knots,
                    kappa,
                    loglik: penalized::penalized_loglik(&fit.model, &data, 0.0)?,
                    penalized_loglik: fit.fit.loglik_at_max,
                    j_value: fit.j_value,
                    a: fit.model.a.clone(),
                    beta: fit.model.beta.clone(),
                    lcv,
                },
                warnings,
            }
        }
        Command::Sieve(args) => {
            let data = parse_dataset(&read_file(&args.data)?)?;
            let sieve = penalized::fit_sieve(&data, args.knots, args.nu)?;
            let kkt = if sieve.lambda.is_finite() {
                let k = penalized::kkt_residual(&sieve.model, sieve.lambda, args.nu, &data)?;
                Some(KktBlock {
                    grad_residual: k.grad_residual,
                    primal_feasibility: k.primal_feasibility,
                    dual_feasible: k.dual_feasible,
                    complementarity: k.complementarity,
                })
            } else {
                warnings.push(
                    "constraint pins the affine null space; the multiplier is unbounded \
                     and KKT residuals are not defined"
                        .into(),
                );
                None
            };
            Report {
                command: "sieve".into(),
                argv: argv(),
                input: Some(digest(&data)),
                results: Results::Sieve {
                    basis_dim: args.knots,
                    nu: args.nu,
                    kappa_nu: nullable(sieve.kappa_nu, "kappa_nu", &mut warnings),
                    lambda: nullable(sieve.lambda, "lambda", &mut warnings),
                    j_value: sieve.j_value,
                    loglik: penalized::penalized_loglik(&sieve.model, &data, 0.0)?,
                    a: sieve.model.a.clone(),
                    beta: sieve.model.beta.clone(),
                    kkt,
                },
                warnings,
            }
        }
        Command::Hfit(args) => {
            let data = parse_grouped(&read_file(&args.data)?)?;
            let model = match args.model.as_str() {
                "normal-normal" => RandomEffectsModel::NormalNormal {
                    sigma2: args.sigma2,
                },
                "poisson-lognormal" => RandomEffectsModel::PoissonLogNormal,
                other => {
                    return Err(Error::Domain(format!(
                        "unknown model `{other}`; use normal-normal or poisson-lognormal"
                    )))
                }
            };
            let (tau, profile) = match (args.tau, args.tau_grid) {
                (Some(tau), None) => (tau, None),
                (None, Some(grid_text)) => {
                    let grid = parse_grid(&grid_text, "--tau-grid")?;
                    let (tau_hat, values) = hlik::profile_tau(&model, &data, &grid)?;
                    (
                        tau_hat,
                        Some(ProfileBlock {
                            tau_hat,
                            grid: grid.into_iter().zip(values).collect(),
                        }),
                    )
                }
                _ => {
                    return Err(Error::Domain(
                        "hfit needs exactly one of --tau or --tau-grid".into(),
                    ))
                }
            };
            let fit = hlik::fit_hlik(&model, &data, tau)?;
            Report {
                command: "hfit".into(),
                argv: argv(),
                input: None,
                results: Results::Hfit {
                    model: model.name().into(),
                    grouped: GroupedDigest {
                        subjects: data.n_subjects(),
                        outcomes: data.n_outcomes(),
                    },
                    tau,
                    sigma2: match model {
                        RandomEffectsModel::NormalNormal { sigma2 } => Some(sigma2),
                        RandomEffectsModel::PoissonLogNormal => None,
                    },
                    theta_hat: fit.theta_hat,
                    h_value: fit.h_value,
                    grad_norm: fit.grad_norm,
                    sweeps: fit.sweeps,
                    b_hat: fit.b_hat,
                    profile,
                },
                warnings,
            }
        }
        Command::Compare(args) => {
            let data = parse_dataset(&read_file(&args.data)?)?;
            let family_a = Family::from_name(&args.family_a)?;
            let family_b = Family::from_name(&args.family_b)?;
            let fit_a = likelihood::fit_mle(family_a, &data)?;
            let fit_b = likelihood::fit_mle(family_b, &data)?;
            let scores_a = selection::model_scores(&fit_a, data.n())?;
            let scores_b = selection::model_scores(&fit_b, data.n())?;
            let d = selection::risk_difference(&fit_a, &fit_b, data.n())?;
            Report {
                command: "compare".into(),
                argv: argv(),
                input: Some(digest(&data)),
                results: Results::Compare {
                    family_a: family_a.name().into(),
                    family_b: family_b.name().into(),
                    aic_a: scores_a.aic,
                    aic_b: scores_b.aic,
                    ekl_a: scores_a.ekl_estimate,
                    ekl_b: scores_b.ekl_estimate,
                    d,
                },
                warnings,
            }
        }
        Command::SimulateEkl(args) => {
            let truth = Law::parse(&args.truth)?;
            let family = Family::from_name(&args.family)?;
            let sim =
                selection::simulate_ekl(&truth, family, args.n, args.reps, args.censor, args.seed)?;
            Report {
                command: "simulate-ekl".into(),
                argv: argv(),
                input: None,
                results: Results::SimulateEkl {
                    truth: args.truth,
                    family: family.name().into(),
                    n: args.n,
                    reps: args.reps,
                    censor: args.censor,
                    seed: args.seed,
                    mean_ekl: sim.mean_ekl,
                    misspec_component: sim.misspec_component,
                    statistical_component: sim.statistical_component,
                    failures: sim.failures,
                },
                warnings,
            }
        }
        Command::MapDemo(args) => {
            let flat = selection::map_estimate(args.k, args.n, selection::Prior::Flat)?;
            let jeffreys = match selection::map_estimate(args.k, args.n, selection::Prior::Jeffreys)
            {
                Ok(v) => Some(v),
                Err(e) => {
                    warnings.push(format!("jeffreys estimate unavailable: {e}"));
                    None
                }
            };
            Report {
                command: "map-demo".into(),
                argv: argv(),
                input: None,
                results: Results::MapDemo {
                    k: args.k,
                    n: args.n,
                    flat,
                    jeffreys,
                },
                warnings,
            }
        }
    };
    Ok(report)
}
