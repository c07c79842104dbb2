use thiserror::Error;

use crate::linalg::LinearSolveReport;

pub type Result<T> = std::result::Result<T, HomogError>;

#[derive(Debug, Error)]
pub enum HomogError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("expression error in `{expr}`: {msg}")]
    Expression { expr: String, msg: String },

    #[error("coercivity violated: smallest eigenvalue {c0} at y={y:?}, s={s}")]
    CoercivityViolation { c0: f64, y: Vec<f64>, s: f64 },

    #[error("linear solver diverged ({context}): {report}")]
    SolverDiverged {
        context: String,
        report: LinearSolveReport,
    },

    #[error("period map stalled after {periods} periods, contraction history {history:?}")]
    PeriodMapStalled { periods: usize, history: Vec<f64> },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("{stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<HomogError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HomogError {
    pub fn config(msg: impl Into<String>) -> Self {
        HomogError::Config(msg.into())
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        HomogError::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// Attaches extra context to a solver failure; other variants pass through.
    pub fn with_solver_context(self, ctx: impl Into<String>) -> Self {
        match self {
            HomogError::SolverDiverged { context, report } => HomogError::SolverDiverged {
                context: format!("{}; {}", ctx.into(), context),
                report,
            },
            other => other,
        }
    }
}
