use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// A labelled nonzero residual, rendered as a polynomial literal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Residual {
    pub label: String,
    pub value: String,
}

impl std::fmt::Display for Residual {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} = {}", self.label, self.value)
    }
}

fn join(rs: &[Residual]) -> String {
    rs.iter().map(|r| r.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("chart mismatch: `{0}` vs `{1}`")]
    ChartMismatch(String, String),
    #[error("unknown generator `{0}`")]
    UnknownGenerator(String),
    #[error("duplicate generator `{0}`")]
    DuplicateGenerator(String),
    #[error("degree mismatch for `{name}`: expected {expected}, found {found}")]
    DegreeMismatch { name: String, expected: i64, found: i64 },
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("constraint violation: {}", join(.0))]
    ConstraintViolation(Vec<Residual>),
    #[error("flatness violation: {}", join(.0))]
    FlatnessViolation(Vec<Residual>),
    #[error("hamiltonian lift failure: {}", join(.0))]
    LiftFailure(Vec<Residual>),
    #[error("matrix not invertible: {0}")]
    NotInvertible(String),
    #[error("non-finite value at step {step}")]
    Divergence { step: usize },
    #[error("invalid reparameterization: {0}")]
    InvalidReparameterization(String),
    #[error("curve is not closed (gap {0:e})")]
    NotClosed(f64),
    #[error("endpoint mismatch (gap {0:e})")]
    EndpointMismatch(f64),
    #[error("variant mismatch: {0}")]
    VariantMismatch(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}
