use thiserror::Error;

use crate::model::Channel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid system specification: {0}")]
    InvalidSpec(String),

    #[error("invalid truncation: {0}")]
    InvalidTruncation(String),

    #[error("level index {index} out of range for a {levels}-level system")]
    InvalidLevel { index: usize, levels: usize },

    #[error("channel {0} lies outside the truncated channel basis")]
    ChannelOutsideBasis(Channel),

    #[error("quasi-energies of {a} and {b} are degenerate (gap {gap:e} <= tol {tol:e})")]
    Degenerate { a: Channel, b: Channel, gap: f64, tol: f64 },

    #[error("incoming energy {energy} sits on the threshold of channel {channel}")]
    ThresholdCollision { channel: Channel, energy: f64 },

    #[error("scattering system at p={momentum}, j_in={j_in} is ill-conditioned (cond ~ {condition:e} > {guard:e})")]
    IllConditioned { momentum: f64, j_in: usize, condition: f64, guard: f64 },

    #[error("singular linear system")]
    Singular,

    #[error("T-matrix routes disagree by {deviation:e} at channel {channel}")]
    RouteMismatch { channel: Channel, deviation: f64 },

    #[error("inverse temperature must be positive, got {0}")]
    InvalidBeta(f64),

    #[error("total rate {to} <- {from} vanishes, moment undefined")]
    UndefinedMoment { to: usize, from: usize },

    #[error("rate below noise floor: {0}")]
    BelowNoiseFloor(String),

    #[error("zero-temperature limit unstable under probe-momentum halving: {0}")]
    UnstableLimit(String),

    #[error("generator kernel is not one-dimensional (sigma_2 = {sigma:e}, ||W|| = {norm:e})")]
    DegenerateKernel { sigma: f64, norm: f64 },

    #[error("time step too large: {0}")]
    StepTooLarge(String),

    #[error("extrapolation did not converge: {0}")]
    Extrapolation(String),

    #[error("empty sum in {0}")]
    EmptySum(&'static str),

    #[error("threshold-collision retries exhausted near p={0}")]
    RetriesExhausted(f64),

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("cache error: {0}")]
    Cache(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the CLI for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidSpec(_)
            | Error::InvalidTruncation(_)
            | Error::InvalidLevel { .. }
            | Error::ChannelOutsideBasis(_)
            | Error::Degenerate { .. }
            | Error::InvalidBeta(_)
            | Error::Config(_) => 2,
            Error::IllConditioned { .. }
            | Error::RouteMismatch { .. }
            | Error::UnstableLimit(_)
            | Error::Extrapolation(_)
            | Error::RetriesExhausted(_)
            | Error::CheckFailed(_) => 4,
            _ => 3,
        }
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidSpec(_) => "invalid_spec",
            Error::InvalidTruncation(_) => "invalid_truncation",
            Error::InvalidLevel { .. } => "invalid_level",
            Error::ChannelOutsideBasis(_) => "channel_outside_basis",
            Error::Degenerate { .. } => "degenerate",
            Error::ThresholdCollision { .. } => "threshold_collision",
            Error::IllConditioned { .. } => "ill_conditioned",
            Error::Singular => "singular",
            Error::RouteMismatch { .. } => "route_mismatch",
            Error::InvalidBeta(_) => "invalid_beta",
            Error::UndefinedMoment { .. } => "undefined_moment",
            Error::BelowNoiseFloor(_) => "below_noise_floor",
            Error::UnstableLimit(_) => "unstable_limit",
            Error::DegenerateKernel { .. } => "degenerate_kernel",
            Error::StepTooLarge(_) => "step_too_large",
            Error::Extrapolation(_) => "extrapolation",
            Error::EmptySum(_) => "empty_sum",
            Error::RetriesExhausted(_) => "retries_exhausted",
            Error::CheckFailed(_) => "check_failed",
            Error::Config(_) => "config",
            Error::Cache(_) => "cache",
            Error::Csv(_) => "csv",
            Error::Io(_) => "io",
        }
    }
}
