use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A modelling assumption on the parameters does not hold.
    #[error("assumption ({assumption}): {detail}")]
    Assumption { assumption: u8, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown {kind} family `{id}`")]
    UnknownFamily { kind: &'static str, id: String },

    #[error("point {0:?} lies outside the spatial domain")]
    OutsideDomain(Vec<f64>),

    #[error("empty network: at least one neuron is required")]
    EmptyNetwork,

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("empty draw set")]
    EmptyDraws,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("index out of order: {0}")]
    IndexOrder(String),

    #[error("Gaussian quadratic moment diverges for v = {0} (requires v < 1)")]
    MomentDiverges(f64),

    #[error("Cholesky factorization failed after maximal jitter {jitter:e} (matrix size {size})")]
    Cholesky { size: usize, jitter: f64 },

    #[error("non-finite state for neuron {neuron} at step {step}")]
    BlowUp { neuron: usize, step: usize },

    #[error("delay {delay} exceeds the history window {window}")]
    DelayExceedsHistory { delay: f64, window: f64 },

    #[error("network of size {0} is too large for the averaging check (at most 4 neurons)")]
    NetworkTooLarge(usize),

    #[error("malformed ensemble data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors caused by the user's inputs rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Assumption { .. }
                | Error::Config(_)
                | Error::UnknownFamily { .. }
                | Error::OutsideDomain(_)
                | Error::EmptyNetwork
                | Error::EmptyEnsemble
                | Error::InvalidArgument(_)
                | Error::GridMismatch(_)
                | Error::DelayExceedsHistory { .. }
                | Error::NetworkTooLarge(_)
                | Error::Format(_)
                | Error::Io(_)
        )
    }
}
