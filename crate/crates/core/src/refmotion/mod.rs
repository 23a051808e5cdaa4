//! Procedural reference motion: gait schedules, clip synthesis and storage.

mod clip;
mod gait;
mod ik;
mod io;

pub use clip::{
    default_speed_profile, default_turns, derive_high_level, heading_profile, pace_speed_profile,
    synthesize_heading_clip, synthesize_speed_clip, ClipKind, Command, Profile, ReferenceClip, ReferenceFrame,
    SynthConfig, Turn, TurnDirection, FRAME_RATE, PRE_ROLL,
};
pub use gait::{gait_for_speed, GaitName, GaitSpec, GaitTable};
pub use ik::{two_link_fk, two_link_ik};
pub use io::{load_clip, read_clip, save_clip, write_clip, SCHEMA_VERSION};


#[derive(Debug, thiserror::Error)]
pub enum RefError {
    #[error("speed {0} m/s outside [0, 4]")]
    SpeedOutOfRange(f64),
    #[error("target out of reach by {deficit:.6} m")]
    Unreachable { deficit: f64 },
    #[error("leg {leg} cannot reach its target at frame {frame} (short by {deficit:.6} m)")]
    IkFailed { leg: usize, frame: i64, deficit: f64 },
    #[error("frame index {index} needs a successor but clip has {len} frames")]
    FrameIndex { index: usize, len: usize },
    #[error("invalid profile: {0}")]
    Profile(String),
    #[error("schema version mismatch: expected {expected}, found {found}")]
    Schema { expected: u32, found: u32 },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
