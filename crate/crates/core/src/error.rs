use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An index or parameter lies outside its admissible range.
    #[error("domain error: {0}")]
    Domain(String),
    /// More distinct elements were requested than are available.
    #[error("capacity error: requested {requested}, only {available} available")]
    Capacity { requested: usize, available: usize },
    /// A caller-side precondition (shape, non-emptiness, ...) does not hold.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A non-finite value appeared in an input or in a computed quantity.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// The requested process can never reach its stopping condition.
    #[error("non-termination: {0}")]
    NonTermination(String),
}

macro_rules! contract {
    ($($arg:tt)*) => {
        $crate::Error::Contract(alloc::format!($($arg)*))
    };
}

macro_rules! domain {
    ($($arg:tt)*) => {
        $crate::Error::Domain(alloc::format!($($arg)*))
    };
}

pub(crate) use contract;
pub(crate) use domain;
