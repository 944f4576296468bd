use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or argument lies outside its admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested operation is not defined for this family / data combination.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A dataset with no data rows.
    #[error("empty dataset: {0}")]
    EmptyData(String),

    /// Malformed input text; `row` counts data rows starting at 1.
    #[error("format error at row {row}: {msg}")]
    Format { row: usize, msg: String },

    /// The estimate does not exist or sits on the boundary of the parameter space.
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// Numerical failure (quadrature cap, line-search stagnation, non-finite values, ...).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The divergence is not defined for the given pair of laws.
    #[error("divergence undefined: {0}")]
    DivergenceUndefined(String),

    /// The objective is not finite at the supplied starting point.
    #[error("bad starting point: {0}")]
    BadStart(String),

    /// A constraint-matching bracket does not enclose the target level.
    #[error("invalid bracket: {0}")]
    Bracket(String),

    /// The bracket expansion exhausted its admissible range.
    #[error("bracket range exhausted: {0}")]
    Range(String),

    /// The constraint curve moved the wrong way during bisection.
    #[error("monotonicity violation: {0}")]
    MonotonicityViolation(String),

    /// A cross-validation training fold cannot support a fit.
    #[error("fold error: {0}")]
    Fold(String),

    /// A simulation harness exceeded its failure budget.
    #[error("harness error: {0}")]
    Harness(String),
}

impl Error {
    /// True for errors caused by user input (arguments, file contents, model
    /// choices) as opposed to numerical failures. The CLI maps input errors
    /// to exit code 1 and everything else to exit code 2.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::Unsupported(_)
                | Error::EmptyData(_)
                | Error::Format { .. }
                | Error::DivergenceUndefined(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
