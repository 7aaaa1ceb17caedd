use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ScopeError;

/// Camera pixel pitch giving ~0.11 um/px at 40X.
pub const DEFAULT_SENSOR_PITCH_UM: f64 = 4.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjectiveName {
    #[serde(rename = "4X")]
    X4,
    #[serde(rename = "10X")]
    X10,
    #[serde(rename = "20X")]
    X20,
    #[serde(rename = "40X")]
    X40,
}

impl ObjectiveName {
    pub const ALL: [ObjectiveName; 4] = [Self::X4, Self::X10, Self::X20, Self::X40];

    pub fn magnification(self) -> f64 {
        match self {
            Self::X4 => 4.0,
            Self::X10 => 10.0,
            Self::X20 => 20.0,
            Self::X40 => 40.0,
        }
    }

    /// The tag models are registered under.
    pub fn tag(self) -> &'static str {
        match self {
            Self::X4 => "4X",
            Self::X10 => "10X",
            Self::X20 => "20X",
            Self::X40 => "40X",
        }
    }
}

impl fmt::Display for ObjectiveName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ObjectiveName {
    type Err = ScopeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|o| o.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| ScopeError::UnknownObjective(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub name: ObjectiveName,
    pub magnification: f64,
    /// Micrometers of specimen per camera pixel.
    pub um_per_px: f64,
}

impl Objective {
    pub fn new(name: ObjectiveName, sensor_pitch_um: f64) -> Self {
        Self {
            name,
            magnification: name.magnification(),
            um_per_px: sensor_pitch_um / name.magnification(),
        }
    }

    pub fn standard(name: ObjectiveName) -> Self {
        Self::new(name, DEFAULT_SENSOR_PITCH_UM)
    }
}
