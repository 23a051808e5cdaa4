//! Grid path planning, ray-sensor steering and the path-to-command
//! translator.

mod astar;
mod grid;
mod translate;

pub use astar::astar;
pub use grid::{Cell, GridMap, Pos};
pub use translate::{path_to_commands, ray_navigate, CommandSeq, Pose, RayConfig};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NavError {
    #[error("map line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid map: {0}")]
    Map(String),
    #[error("{0}")]
    Input(String),
}
