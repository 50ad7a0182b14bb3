use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SdeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite {quantity} in component {component} at t = {t}")]
    Domain {
        quantity: &'static str,
        component: usize,
        t: f64,
    },

    #[error("solution blew up at t = {t}{}", step.map(|s| format!(" (step {s})")).unwrap_or_default())]
    BlowUp {
        t: f64,
        step: Option<usize>,
        state: Vec<f64>,
    },

    #[error("unsupported noise structure: {0}")]
    UnsupportedNoise(String),

    #[error("step size {dt:e} fell below the minimum at t = {t} (error norm {norm:e})")]
    StepSizeUnderflow {
        t: f64,
        dt: f64,
        norm: f64,
        state: Vec<f64>,
    },

    #[error("exact solution is within pole proximity at t = {t}")]
    PoleProximity { t: f64 },

    #[error("all {failed} trajectories failed numerically")]
    EnsembleFailed { failed: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SdeError {
    /// True for failures caused by the numerics (blow-up, poles, step-size
    /// collapse) rather than by bad arguments.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SdeError::Domain { .. }
                | SdeError::BlowUp { .. }
                | SdeError::StepSizeUnderflow { .. }
                | SdeError::PoleProximity { .. }
                | SdeError::EnsembleFailed { .. }
        )
    }
}
