use thiserror::Error;

/// Errors raised by the solver laboratory.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("timestep {t} outside schedule domain [{t_min}, {t_max}]")]
    Domain { t: f64, t_min: f64, t_max: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver failure at step {step}: {reason}")]
    Solver { step: usize, reason: String },

    #[error("step size underflow at n = {n} (h = {h})")]
    Stiffness { n: f64, h: f64 },

    #[error("unknown solver id `{id}` (known: {known})")]
    UnknownSolver { id: String, known: String },

    #[error("parse error at {location}: {reason}")]
    Parse { location: String, reason: String },

    #[error("normal equations are rank deficient at transition {transition}; raise ridge_lambda above 0")]
    RankDeficient { transition: usize },

    #[error("entry {index}: {source}")]
    Entry {
        index: usize,
        #[source]
        source: Box<LabError>,
    },

    #[error("training iteration {iteration}: {source}")]
    Training {
        iteration: usize,
        #[source]
        source: Box<LabError>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl LabError {
    pub fn at_entry(self, index: usize) -> Self {
        LabError::Entry { index, source: Box::new(self) }
    }

    /// Innermost error, unwrapping entry/rollout context.
    pub fn root(&self) -> &LabError {
        match self {
            LabError::Entry { source, .. } | LabError::Training { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
