use alloc::string::String;

use crate::lattice::Site;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("object outside the materialized box: {0}")]
    OutOfBox(String),
    #[error("time {requested} exceeds the horizon {horizon}")]
    HorizonExceeded { requested: f64, horizon: f64 },
    #[error("invalid environment law: {0}")]
    InvalidLaw(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("environment does not cover the simulated box")]
    EnvironmentMismatch,
    #[error("initial sets are not nested (weak ⊆ strong ⊆ richardson)")]
    NotNested,
    #[error("essential hitting time of {0:?} is censored")]
    Censored(Site),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate sample: {0}")]
    Degenerate(String),
    #[error("subadditivity violated at (n, p) = ({n}, {p}) by {excess}")]
    SubadditivityViolation { n: u64, p: u64, excess: f64 },
    #[error("state space of {sites} sites is too large for the exact oracle (max {max})")]
    StateSpaceTooLarge { sites: usize, max: usize },
    #[error("no surviving replicas among {0}")]
    NoSurvivors(usize),
    #[error("reconstructed unit ball is not star-shaped: {0}")]
    NotStarShaped(String),
}

pub type Result<T> = core::result::Result<T, Error>;
