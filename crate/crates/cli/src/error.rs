use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("compute error: {0}")]
    Compute(String),
    #[error("gap-report: sandwich violated beyond the finite-size slack")]
    GapViolation,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Compute(_) | CliError::Io(_) => 3,
            CliError::GapViolation => 4,
        }
    }
}

macro_rules! compute_from {
    ($($t:ty => $ctx:literal),* $(,)?) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Compute(format!("{}: {e}", $ctx))
            }
        })*
    };
}

compute_from!(
    tower_ldp::tower::TowerError => "tower",
    tower_ldp::ldp::LdpError => "ldp",
    tower_ldp::rate::RateError => "rate",
    tower_ldp::conditions::ConditionError => "conditions",
    tower_ldp::interval::IntervalError => "interval",
);

impl From<tower_ldp::io::SpecError> for CliError {
    fn from(e: tower_ldp::io::SpecError) -> Self {
        match e {
            tower_ldp::io::SpecError::Invalid { .. } => CliError::Config(e.to_string()),
            other => CliError::Compute(other.to_string()),
        }
    }
}
