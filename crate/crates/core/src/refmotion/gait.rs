use super::RefError;
use crate::env::NUM_LEGS;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaitName {
    Stand,
    Pace,
    Trot,
    Canter,
}

impl GaitName {
    pub fn as_str(&self) -> &'static str {
        match self {
            GaitName::Stand => "stand",
            GaitName::Pace => "pace",
            GaitName::Trot => "trot",
            GaitName::Canter => "canter",
        }
    }

    /// Speed band membership: stand at 0, pace on (0, 2), trot on [2, 3.5), canter on [3.5, 4].
    pub fn for_speed(speed: f64) -> Result<Self, RefError> {
        if !(0.0..=4.0).contains(&speed) {
            return Err(RefError::SpeedOutOfRange(speed));
        }
        Ok(if speed == 0.0 {
            GaitName::Stand
        } else if speed < 2.0 {
            GaitName::Pace
        } else if speed < 3.5 {
            GaitName::Trot
        } else {
            GaitName::Canter
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitSpec {
    pub name: GaitName,
    /// Phase offsets in leg order LF, RF, LR, RR.
    pub offsets: [f64; NUM_LEGS],
    pub duty: f64,
    pub cycle: f64,
    pub swing_height: f64,
    pub stride: f64,
}

/// Constants shaping the procedural gaits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaitTable {
    pub pace: [f64; NUM_LEGS],
    pub trot: [f64; NUM_LEGS],
    pub canter: [f64; NUM_LEGS],
    pub duty: [f64; 3],
    /// `T = clamp(k / √max(σ, floor), lo, hi)` as `[k, floor, lo, hi]`.
    pub cycle: [f64; 4],
    pub swing_height: f64,
}

impl Default for GaitTable {
    fn default() -> Self {
        Self {
            pace: [0.0, 0.5, 0.0, 0.5],
            trot: [0.0, 0.5, 0.5, 0.0],
            canter: [0.3, 0.6, 0.0, 0.3],
            duty: [0.6, 0.55, 0.4],
            cycle: [0.7, 0.5, 0.35, 0.9],
            swing_height: 0.08,
        }
    }
}

impl GaitTable {
    pub fn cycle_duration(&self, speed: f64) -> f64 {
        let [k, floor, lo, hi] = self.cycle;
        (k / speed.max(floor).sqrt()).clamp(lo, hi)
    }

    pub fn pattern(&self, name: GaitName) -> ([f64; NUM_LEGS], f64) {
        match name {
            GaitName::Stand => ([0.0; NUM_LEGS], 1.0),
            GaitName::Pace => (self.pace, self.duty[0]),
            GaitName::Trot => (self.trot, self.duty[1]),
            GaitName::Canter => (self.canter, self.duty[2]),
        }
    }

    pub fn spec(&self, speed: f64) -> Result<GaitSpec, RefError> {
        let name = GaitName::for_speed(speed)?;
        let (offsets, duty) = self.pattern(name);
        let cycle = self.cycle_duration(speed);
        Ok(GaitSpec {
            name,
            offsets,
            duty,
            cycle,
            swing_height: self.swing_height,
            stride: speed * cycle,
        })
    }

    /// Hex SHA-256 of the table's canonical JSON, recorded in clip manifests.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("gait table serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// The gait chosen for `speed` under the default table.
pub fn gait_for_speed(speed: f64) -> Result<GaitSpec, RefError> {
    GaitTable::default().spec(speed)
}
