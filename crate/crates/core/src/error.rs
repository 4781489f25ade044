use thiserror::Error;

/// Errors produced by the navigation engine, its file formats and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("timestamp {next} does not advance past {current}")]
    NonIncreasingTime { current: f64, next: f64 },

    #[error("propagation step {0} s outside (0, 0.1]")]
    InvalidStep(f64),

    #[error("not enough static IMU samples for initialization: {got} < {need}")]
    TooFewSamples { got: usize, need: usize },

    #[error("vehicle not static: mean specific force {norm:.4} m/s^2 vs gravity {gravity:.4} m/s^2")]
    NotStatic { norm: f64, gravity: f64 },

    #[error("degenerate geometry: {0}")]
    Degenerate(&'static str),

    #[error("invalid trajectory: {0}")]
    Trajectory(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("numerical failure: {0}")]
    Numerical(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
