use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("|{value}| is not below q/2 = {half_modulus}; the sign map would be ambiguous")]
    MagnitudeOverflow { value: i128, half_modulus: u64 },

    #[error("pseudorandom stream rejected {0} consecutive words")]
    StreamExhausted(usize),

    #[error("overflow budget violated: {detail}")]
    OverflowBudgetViolation { detail: String },

    #[error("public value is not a member of the prime-order subgroup")]
    InvalidGroupElement,

    #[error("polynomial degree {degree} must be below the share count {shares}")]
    DegreeTooLarge { degree: usize, shares: usize },

    #[error("{have} shares supplied, {need} required")]
    InsufficientShares { have: usize, need: usize },

    #[error("shares do not lie on a single polynomial of the expected degree")]
    InconsistentShares,

    #[error("user {0} submitted more than one message")]
    DuplicateUser(u32),

    #[error("{survivors} survivors of {cohort}; unmasking needs at least {needed}")]
    TooManyDropouts {
        survivors: usize,
        cohort: usize,
        needed: usize,
    },

    #[error("round {round}: unmasked aggregate differs from the plaintext oracle")]
    AggregateMismatch { round: u64 },

    #[error("config error at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("malformed wire data: {0}")]
    Wire(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
