use thiserror::Error;

/// Unified error type for chart, calculus and variation operations.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum GeomError {
    #[error("syntax error at byte {offset}: expected {expected}")]
    Syntax { offset: usize, expected: String },
    #[error("unknown symbol `{name}`")]
    UnknownSymbol { name: String },
    #[error("unbound parameter `{name}`")]
    UnboundParameter { name: String },
    #[error("domain error: {what}")]
    Domain { what: String },
    #[error("metric is degenerate at the evaluation point")]
    DegenerateMetric,
    #[error("distribution is degenerate at the evaluation point")]
    DegenerateDistribution,
    #[error("Gram-Schmidt breakdown: pivot with |g(v,v)| below 1e-12")]
    GramSchmidtBreakdown,
    #[error("plane is degenerate: |W(X,Y)| below 1e-12")]
    DegeneratePlane,
    #[error("operation requires a rank-one distribution")]
    NotCodimOne,
    #[error("metric is not in biregular block form")]
    NotBiregular,
    #[error("hypothesis violated: {which}")]
    HypothesisViolated { which: String },
    #[error("ODE integration diverged")]
    OdeDiverged,
    #[error("principal curvatures inconsistent with their trace")]
    InconsistentCurvatures,
    #[error("initial value out of admissible range")]
    InitialValueOutOfRange,
    #[error("substitution left the admissible domain (w must stay positive)")]
    SubstitutionDomain,
    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },
}

impl GeomError {
    pub fn config(pointer: &str, message: impl Into<String>) -> Self {
        GeomError::Config {
            pointer: pointer.to_string(),
            message: message.into(),
        }
    }
}
