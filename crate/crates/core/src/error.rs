use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("Gram-Schmidt breakdown: Gram residual {residual:e} exceeds {tolerance:e} (too many modes for double precision?)")]
    OrthogonalizationBreakdown { residual: f64, tolerance: f64 },

    #[error("time {t} outside [0, {t_final}]")]
    TimeOutOfRange { t: f64, t_final: f64 },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("singular matrix (zero pivot at row {pivot})")]
    SingularMatrix { pivot: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("source does not vanish on the boundary (|p| = {max_abs:e} at node {node})")]
    SourceNotVanishing { node: usize, max_abs: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("conjugate gradient breakdown at iteration {iteration} (curvature {curvature:e})")]
    Breakdown { iteration: usize, curvature: f64 },

    #[error("stage `{stage}` failed")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Wrap an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}

pub(crate) trait StageContext<T> {
    fn stage(self, name: &str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, name: &str) -> Result<T> {
        self.map_err(|e| e.in_stage(name))
    }
}
