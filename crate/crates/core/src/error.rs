use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("non-finite value in leaf tensor")]
    NonFiniteLeaf,
    #[error("tensor shape {shape:?} does not hold {len} values")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("input `{0}` is not bound")]
    UnboundInput(String),
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("backward called before forward evaluated node {0}")]
    BackwardBeforeForward(usize),
    #[error("misaligned parameters and gradients: {0}")]
    Misaligned(String),
    #[error("value outside its domain: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singularity: {0}")]
    Singular(String),
    #[error("zero bandwidth")]
    ZeroBandwidth,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at iteration {iter} (sample t = {t})")]
    NonFiniteLoss { iter: usize, t: f64 },
    #[error("training diverged at iteration {iter}: total loss {loss}")]
    Divergence { iter: usize, loss: f64 },
    #[error("non-finite state at sampling step {step}")]
    SamplingNonFinite { step: usize },
    #[error("likelihood integration blew up at step {step}")]
    LikelihoodBlowUp { step: usize },
    #[error("attractor integration diverged at step {step}")]
    AttractorDivergence { step: usize },
    #[error("malformed input: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by numerics (divergence, non-finite values)
    /// rather than bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::NonFiniteLeaf
                | Error::NonFiniteLoss { .. }
                | Error::Divergence { .. }
                | Error::SamplingNonFinite { .. }
                | Error::LikelihoodBlowUp { .. }
                | Error::AttractorDivergence { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
