use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("policy does not match model at state {state}: {reason}")]
    PolicyDomainMismatch { state: usize, reason: String },
    #[error("sink state {0} is not absorbing")]
    NonAbsorbingSink(usize),
    #[error("parse error at line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("unsupported acceptance condition: {0}")]
    UnsupportedAcceptance(String),
    #[error("automaton is nondeterministic at state {state}")]
    NondeterministicAutomaton { state: usize },
    #[error("unsupported template: {0}")]
    UnsupportedTemplate(String),
    #[error("alphabet mismatch: {0}")]
    AlphabetMismatch(String),
    #[error("empty target set")]
    EmptyTarget,
    #[error("linear program infeasible: {0}")]
    Infeasible(String),
    #[error("end component is empty")]
    EmptyAmec,
    #[error("no feature states for the automaton")]
    EmptyFeatureSet,
    #[error("task infeasible: required satisfaction {required}, achievable {achievable:.6}")]
    TaskInfeasible { required: f64, achievable: f64 },
    #[error("safety unsatisfiable: {0}")]
    SafetyUnsatisfiable(String),
    #[error("plan was built for a different model")]
    PlanModelMismatch,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid terrain: {0}")]
    InvalidTerrain(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable code used on the command line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidModel(_) => "INVALID_MODEL",
            Error::PolicyDomainMismatch { .. } => "POLICY_DOMAIN",
            Error::NonAbsorbingSink(_) => "NON_ABSORBING_SINK",
            Error::ParseError { .. } => "PARSE",
            Error::UnsupportedAcceptance(_) => "UNSUPPORTED_ACCEPTANCE",
            Error::NondeterministicAutomaton { .. } => "NONDETERMINISTIC",
            Error::UnsupportedTemplate(_) => "UNSUPPORTED_TEMPLATE",
            Error::AlphabetMismatch(_) => "ALPHABET_MISMATCH",
            Error::EmptyTarget => "EMPTY_TARGET",
            Error::Infeasible(_) => "INFEASIBLE",
            Error::EmptyAmec => "EMPTY_AMEC",
            Error::EmptyFeatureSet => "EMPTY_FEATURE_SET",
            Error::TaskInfeasible { .. } => "TASK_INFEASIBLE",
            Error::SafetyUnsatisfiable(_) => "SAFETY_UNSATISFIABLE",
            Error::PlanModelMismatch => "PLAN_MODEL_MISMATCH",
            Error::InvalidGrid(_) => "INVALID_GRID",
            Error::InvalidTerrain(_) => "INVALID_TERRAIN",
            Error::InvalidConfig(_) => "INVALID_CONFIG",
            Error::Solver(_) => "SOLVER",
            Error::Io(_) => "IO",
            Error::Json(_) => "JSON",
        }
    }

    /// True for errors that mean "no plan exists" rather than bad input.
    pub fn is_infeasibility(&self) -> bool {
        matches!(
            self,
            Error::Infeasible(_)
                | Error::TaskInfeasible { .. }
                | Error::SafetyUnsatisfiable(_)
                | Error::EmptyAmec
                | Error::EmptyFeatureSet
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
