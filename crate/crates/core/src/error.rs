use thiserror::Error;

/// Errors raised by the inversion algorithms and the experiment runner.
#[derive(Debug, Error)]
pub enum EkiError {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("ensemble must contain at least one member")]
    EmptyEnsemble,

    #[error("{0} contains non-finite entries")]
    NonFinite(&'static str),

    #[error("{0} is not symmetric positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("forward map produced a non-finite output for member {member}")]
    NonFiniteForward { member: usize },

    #[error("forward map is not linear (no matrix available)")]
    NotLinear,

    #[error("forward map provides no adjoint")]
    MissingAdjoint,

    #[error("inverse problem carries no ground truth")]
    MissingTruth,

    #[error("blow-up guard tripped at t = {time}: member {member} has norm {norm:e}")]
    BlowUp { time: f64, member: usize, norm: f64 },

    #[error("ensemble size {requested} exceeds the {available} available prior modes")]
    TooManyModes { requested: usize, available: usize },

    #[error("degenerate adaptive coefficients: denominator 1 - a_1 + sum(a)/J = {0:e}")]
    DegenerateCoefficients(f64),

    #[error("value {value:e} at t = {time} is not positive; cannot take its logarithm")]
    NonPositive { time: f64, value: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("linear solve failed: {0}")]
    SolveFailed(&'static str),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<EkiError>,
    },

    #[error("config parse error: {0}")]
    ConfigParse(#[from] toml::de::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EkiError>;

impl EkiError {
    /// The error with any stage context removed.
    pub fn root(&self) -> &EkiError {
        match self {
            EkiError::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for problems with the experiment description rather than the run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self.root(),
            EkiError::InvalidConfig(_) | EkiError::ConfigParse(_)
        )
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| EkiError::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
