use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("{name} = {value} is not an integer")]
    NonIntegerT { name: &'static str, value: String },

    #[error("t_t >= 1 required (got t_t = {0})")]
    TransmitCacheTooSmall(String),

    #[error("{0} out of range")]
    OutOfRange(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("index {idx} out of range 1..={max}")]
    IndexOutOfRange { idx: usize, max: usize },

    #[error("{0} is not a supported prime modulus")]
    InvalidPrime(u64),

    #[error("matrix is singular")]
    SingularMatrix,

    #[error("null space is trivial")]
    FullRowRankExhausted,

    #[error("generic position not reached after {attempts} attempts: {what}")]
    GenericityFailure { what: String, attempts: usize },

    #[error("singular decoding system: {0}")]
    SingularSystem(String),

    #[error("receiver {receiver} failed to decode {missing} unit symbol(s)")]
    DecodingFailure { receiver: usize, missing: usize },

    #[error("batch of {batch} symbols per message does not clear the schedule; required multiple of {required}")]
    Divisibility { batch: usize, required: usize },

    #[error("sweep grid is empty")]
    EmptyGrid,

    #[error("config: {0}")]
    Config(String),

    #[error("trace line {line}: {msg}")]
    Trace { line: usize, msg: String },
}
