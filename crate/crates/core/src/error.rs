use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument fell outside the domain of the rate/cost functions.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid order: {0}")]
    InvalidOrder(String),

    #[error("infeasible allocation: energy used {used} exceeds budget {budget}")]
    Infeasible { used: f64, budget: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// An enumeration-based routine was asked to exceed its size bound.
    #[error("size limit exceeded: {what} is {actual}, limit {limit}")]
    Size {
        what: &'static str,
        actual: usize,
        limit: usize,
    },

    #[error("allocation invariant violated: {0}")]
    Invariant(String),
}
