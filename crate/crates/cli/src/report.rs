//! The JSON report emitted on standard output.
//!
//! One document per invocation, schema fixed per subcommand. Identical
//! invocations (including seeds) produce byte-identical output: all numbers
//! come from deterministic library calls and the field order is the struct
//! order. Non-finite numbers are rendered as `null` and explained in
//! `warnings`.

use serde::Serialize;

#[derive(Serialize)]
pub struct Report {
    pub command: String,
    pub argv: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<InputDigest>,
    pub results: Results,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
pub struct InputDigest {
    pub rows: usize,
    pub events: usize,
    pub censored: usize,
    pub covariates: usize,
}

#[derive(Serialize)]
pub struct GroupedDigest {
    pub subjects: usize,
    pub outcomes: usize,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Results {
    Fit {
        family: String,
        theta_hat: Vec<f64>,
        std_errors: Vec<Option<f64>>,
        loglik: f64,
        aic: f64,
        ekl_estimate: f64,
        grad_norm: f64,
        iterations: usize,
        converged: bool,
    },
    Kl {
        truth: String,
        model: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        censor: Option<f64>,
        observed_field: String,
        divergence: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        oracle: Option<OracleBlock>,
    },
    Penfit {
        basis_dim: usize,
        kappa: f64,
        loglik: f64,
        penalized_loglik: f64,
        j_value: f64,
        a: Vec<f64>,
        beta: Vec<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        lcv: Option<LcvBlock>,
    },
    Sieve {
        basis_dim: usize,
        nu: f64,
        kappa_nu: Option<f64>,
        lambda: Option<f64>,
        j_value: f64,
        loglik: f64,
        a: Vec<f64>,
        beta: Vec<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        kkt: Option<KktBlock>,
    },
    Hfit {
        model: String,
        grouped: GroupedDigest,
        tau: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        sigma2: Option<f64>,
        theta_hat: Vec<f64>,
        h_value: f64,
        grad_norm: f64,
        sweeps: usize,
        b_hat: Vec<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        profile: Option<ProfileBlock>,
    },
    Compare {
        family_a: String,
        family_b: String,
        aic_a: f64,
        aic_b: f64,
        ekl_a: f64,
        ekl_b: f64,
        d: f64,
    },
    SimulateEkl {
        truth: String,
        family: String,
        n: usize,
        reps: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        censor: Option<f64>,
        seed: u64,
        mean_ekl: f64,
        misspec_component: f64,
        statistical_component: f64,
        failures: usize,
    },
    MapDemo {
        k: u64,
        n: u64,
        flat: f64,
        jeffreys: Option<f64>,
    },
}

#[derive(Serialize)]
pub struct OracleBlock {
    pub draws: usize,
    pub seed: u64,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Serialize)]
pub struct LcvBlock {
    pub kappa_star: f64,
    pub folds: usize,
    pub seed: u64,
    pub scores: Vec<(f64, f64)>,
}

#[derive(Serialize)]
pub struct KktBlock {
    pub grad_residual: f64,
    pub primal_feasibility: f64,
    pub dual_feasible: bool,
    pub complementarity: f64,
}

#[derive(Serialize)]
pub struct ProfileBlock {
    pub tau_hat: f64,
    pub grid: Vec<(f64, f64)>,
}

/// Maps a possibly non-finite value to `Some` / `None`, recording a warning
/// for the `null` case.
pub fn nullable(value: f64, label: &str, warnings: &mut Vec<String>) -> Option<f64> {
    if value.is_finite() {
        Some(value)
    } else {
        warnings.push(format!("{label} is not finite ({value}); reported as null"));
        None
    }
}

/// Flat `key: value` rendering of the same document for `--pretty`.
pub fn pretty(report: &Report) -> String {
    let value = serde_json::to_value(report).expect("report serializes");
    let mut lines = Vec::new();
    flatten("", &value, &mut lines);
    let width = lines.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    lines
        .into_iter()
        .map(|(k, v)| format!("{k:<width$}  {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn flatten(prefix: &str, value: &serde_json::Value, out: &mut Vec<(String, String)>) {
    match value {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        serde_json::Value::Array(items) => {
            if items.len() > 8 {
                out.push((prefix.to_string(), format!("[{} values]", items.len())));
                return;
            }
            for (i, v) in items.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), v, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}
