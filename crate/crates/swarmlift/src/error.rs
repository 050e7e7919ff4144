use thiserror::Error;

/// Crate-wide error type. Variants are grouped so the CLI can map them onto
/// distinct process exit codes (config = 2, I/O = 3, runtime = 4).
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (bad field values, unknown keys,
    /// missing files named on the command line).
    #[error("config error: {0}")]
    Config(String),

    /// A caller violated a documented API contract (e.g. passed a
    /// non-unit quaternion where one is required).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The physics state became non-finite; the report names the first body
    /// whose state exploded so divergence is debuggable.
    #[error("simulation diverged: non-finite state on {body} at t={time:.4}s")]
    SimulationDiverged { body: String, time: f64 },

    /// A training loss became NaN. Training aborts rather than continuing
    /// with poisoned parameters.
    #[error("NaN loss at iteration {iteration}, epoch {epoch}, minibatch {minibatch}")]
    NanLoss {
        iteration: usize,
        epoch: usize,
        minibatch: usize,
    },

    /// Checkpoint file is malformed, has a bad magic number, or an
    /// unsupported format version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A checkpoint was loaded into an incompatible environment setup
    /// (different team size, observation variant, or network shape).
    #[error("checkpoint/config mismatch: {0}")]
    Mismatch(String),

    /// Episode reset could not find a valid spawn after bounded retries.
    #[error("spawn sampling failed: {0}")]
    SpawnFailed(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 I/O, 4 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Mismatch(_) => 2,
            Error::Io(_) => 3,
            _ => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
