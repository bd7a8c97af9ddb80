use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("query at t = {t:.3} s is beyond the prediction horizon ending at {horizon_end:.3} s")]
    OutOfHorizon { t: f64, horizon_end: f64 },

    #[error("start state is in collision with {0}")]
    StartInCollision(String),

    #[error("broken parent chain while reconstructing the trajectory")]
    BrokenParentChain,

    #[error("stitch mismatch at t = {t:.3}: |ds| = {ds:.4} m, |dv| = {dv:.4} m/s, |dl| = {dl:.4}")]
    StitchMismatch { t: f64, ds: f64, dv: f64, dl: f64 },

    #[error("scenario error at `{field}`: {message}")]
    Scenario { field: String, message: String },

    #[error("collision between ego and agent {agent} at t = {t:.2} s (gap {gap:.3} m)")]
    Collision { agent: usize, t: f64, gap: f64 },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
