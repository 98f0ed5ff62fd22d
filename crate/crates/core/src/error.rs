use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("malformed model document: {0}")]
    Parse(String),
    #[error("row q(.|{state},{action}) sums to {sum}, expected 1")]
    RowSum { state: usize, action: usize, sum: f64 },
    #[error("negative probability {value} in row q(.|{state},{action})")]
    NegativeProbability { state: usize, action: usize, value: f64 },
    #[error("state {0} has no admissible action")]
    EmptyActionSet(usize),
    #[error("cost c({state},{action}) is not finite")]
    NonFiniteCost { state: usize, action: usize },
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("costs are unbounded in both directions; neither model class applies")]
    BothSignsUnbounded,
    #[error("policy kernel at state {state} is not a distribution over its admissible actions: {detail}")]
    PolicySupport { state: usize, detail: String },
    #[error("linear system is singular or ill-conditioned (condition estimate {condition:e})")]
    SingularSolve { condition: f64 },
    #[error("target set is empty")]
    EmptyTargetSet,
    #[error("horizon {requested} exceeds the configured cap {cap}")]
    HorizonOverflow { requested: usize, cap: usize },
    #[error("{count} deterministic policies exceed the enumeration bound {cap}")]
    EnumerationTooLarge { count: f64, cap: usize },
    #[error("policy iteration revisited a policy at iteration {0}")]
    CyclingDetected(usize),
    #[error("gain is not constant on the support of lambda (range [{min}, {max}])")]
    NonConstantOnSupport { min: f64, max: f64 },
    #[error("strategic table would need {entries} entries, cap is {cap}")]
    TableTooLarge { entries: usize, cap: usize },
    #[error("marginal sequence is inconsistent at stage {stage} (deviation {deviation:e})")]
    InconsistentMarginals { stage: usize, deviation: f64 },
    #[error("invalid LP weights: {0}")]
    WeightError(String),
    #[error("simplex exceeded {0} pivots")]
    NumericalStall(usize),
    #[error("{0}")]
    InvalidArgument(String),
}

impl Error {
    /// True when the error stems from malformed user input rather than from a
    /// numerical routine.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse(_)
                | Error::RowSum { .. }
                | Error::NegativeProbability { .. }
                | Error::EmptyActionSet(_)
                | Error::NonFiniteCost { .. }
                | Error::DimensionMismatch { .. }
                | Error::PolicySupport { .. }
                | Error::EmptyTargetSet
                | Error::WeightError(_)
                | Error::InvalidArgument(_)
                | Error::HorizonOverflow { .. }
                | Error::EnumerationTooLarge { .. }
                | Error::TableTooLarge { .. }
        )
    }
}
