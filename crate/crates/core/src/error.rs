use std::io;

use thiserror::Error;

use crate::world::Coord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("cluster around ({}, {}) leaves the {width}x{height} map", .center.x, .center.y)]
    ClusterOutOfBounds { center: Coord, width: u32, height: u32 },

    #[error("cannot found city at ({}, {}): {reason}", .at.x, .at.y)]
    IllegalFounding { at: Coord, reason: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("chooser returned rule {rule} which is not a member of family {family}")]
    NotAMember { family: usize, rule: usize },

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse { line, message: message.into() }
    }

    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::InvalidConfig(message.into())
    }
}
