use thiserror::Error;

use crate::tensor::Real;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LabError {
    #[error("singular metric (det = {det:e})")]
    SingularMetric { det: Real },
    #[error("metric signature is not (-,+,+,+): {negative} negative eigenvalues")]
    SignatureViolated { negative: usize },
    #[error("slice metric is not positive definite")]
    NotPositiveDefinite,
    #[error("stencil leaves the sampled domain along axis {axis}")]
    StencilOutOfDomain { axis: usize },
    #[error("invalid direction: {0}")]
    InvalidDirection(String),
    #[error("degenerate phase: spatial gradient vanishes")]
    DegeneratePhase,
    #[error("phase gradient is not null (residual {residual:e})")]
    EikonalViolated { residual: Real },
    #[error("phase is not future directed")]
    NotFutureDirected,
    #[error("cannot invert P_v for a (near) null phase: divisor {divisor:e}")]
    NullDirectionUnsolvable { divisor: Real },
    #[error("source is not in the range of P_v: Pol residual {residual:e}")]
    NotInRange { residual: Real },
    #[error("integration diverged at t = {t} (norm {norm:e})")]
    Diverged { t: Real, norm: Real },
    #[error("invalid seed: {0}")]
    InvalidSeed(String),
    #[error("invalid scale lambda = {0}")]
    InvalidScale(Real),
    #[error("ill-conditioned mode fit (condition {condition:e})")]
    AliasedWords { condition: Real },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown phase label {0}")]
    UnknownPhase(usize),
}

pub type LabResult<T> = Result<T, LabError>;
