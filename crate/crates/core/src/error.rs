use std::path::PathBuf;

/// Errors surfaced by the simulation, fitting and reporting layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed or out-of-range input (parameters, files, configuration).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The driver simulation did not finish within its time ceiling.
    #[error("simulation aborted in segment {segment}: {reason}")]
    SimulationAborted { segment: usize, reason: String },

    /// The powertrain could not follow the reference speed.
    #[error("speed tracking diverged at t = {t_s:.1} s (error {error_mps:.2} m/s)")]
    TrackingDivergence { t_s: f64, error_mps: f64 },

    #[error("calibration failed: {0}")]
    Calibration(String),

    /// Fitting a statistical model failed (degenerate data, bad config).
    #[error("model fit failed: {0}")]
    Fit(String),

    /// The requested order statistic does not exist for this sample size.
    #[error(
        "calibration set too small: need rank {rank} but only {available} scores; \
         use a larger calibration set or a larger alpha"
    )]
    InsufficientScores { rank: usize, available: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },

    /// A pipeline stage failed; wraps the underlying cause.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2 for configuration or input errors, 3 for simulation and calibration
    /// failures, 4 for pipeline stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Json { .. } | Error::Csv { .. } | Error::Io { .. } => 2,
            Error::SimulationAborted { .. }
            | Error::TrackingDivergence { .. }
            | Error::Calibration(_) => 3,
            Error::Fit(_) | Error::InsufficientScores { .. } | Error::Stage { .. } => 4,
        }
    }
}
