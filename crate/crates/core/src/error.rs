use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Where an invalid state was detected. Every field is optional because the
/// pointwise conversions know nothing about blocks; callers fill in what they
/// know as the error travels outward.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StateSite {
    pub block: Option<u32>,
    pub cell: Option<[i64; 3]>,
    pub stage: Option<usize>,
    pub task: Option<String>,
}

impl fmt::Display for StateSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(b) = self.block {
            write!(f, " in block {b}")?;
        }
        if let Some([i, j, k]) = self.cell {
            write!(f, " at cell ({i}, {j}, {k})")?;
        }
        if let Some(t) = &self.task {
            write!(f, " during {t}")?;
        }
        if let Some(s) = self.stage {
            write!(f, " (RK stage {s})")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state: rho = {rho:e}, p = {pressure:e}{site}")]
    InvalidState {
        rho: f64,
        pressure: f64,
        site: StateSite,
    },

    #[error("insufficient halo: stencil needs {needed} nodes on each side, {available} available")]
    InsufficientHalo { needed: usize, available: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("halo plan error: {0}")]
    HaloPlan(String),

    #[error("transport error on tag {tag:#010x}: {message}")]
    Transport { tag: u32, message: String },

    #[error("device {device}: buffer budget exceeded, need {required} bytes but only {available} available")]
    DeviceBudget {
        device: String,
        required: usize,
        available: usize,
    },

    #[error("device {device}: kernel read stale data for {slice}")]
    StaleRead { device: String, slice: String },

    #[error("epoch {epoch} did not complete within {seconds} s (possible deadlock)")]
    EpochTimeout { epoch: u64, seconds: f64 },

    #[error("divergence at iteration {iteration}: residual norm grew {growth:e}x")]
    Divergence { iteration: usize, growth: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid_state(rho: f64, pressure: f64) -> Self {
        Error::InvalidState {
            rho,
            pressure,
            site: StateSite::default(),
        }
    }

    /// Attach block and cell coordinates to an invalid-state error; other
    /// errors pass through untouched.
    pub fn at_cell(mut self, block: u32, cell: [i64; 3]) -> Self {
        if let Error::InvalidState { site, .. } = &mut self {
            site.block = Some(block);
            site.cell = Some(cell);
        }
        self
    }

    pub fn in_stage(mut self, stage: usize) -> Self {
        if let Error::InvalidState { site, .. } = &mut self {
            site.stage = Some(stage);
        }
        self
    }

    pub fn in_task(mut self, task: impl Into<String>) -> Self {
        if let Error::InvalidState { site, .. } = &mut self {
            site.task = Some(task.into());
        }
        self
    }
}
