//! Wire format `arm-msg/1`. Every message is a JSON object with `schema` and
//! `type` fields; unknown fields are rejected in both directions.

use std::collections::BTreeMap;

use arm_core::overlay::{ColorSpace, DisplayMode, FocusMeasurement, OverlayPolygon, OverlayText};
use arm_core::scope::{ObjectiveName, StagePose};
use serde::{Deserialize, Serialize};

pub const SCHEMA_ID: &str = "arm-msg/1";

/// The published JSON Schema for server-to-client messages.
pub const SCHEMA_JSON: &str = include_str!("../schema/arm-msg-1.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Schema {
    #[default]
    #[serde(rename = "arm-msg/1")]
    V1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlayMsg {
    pub mode: DisplayMode,
    pub color_space: ColorSpace,
    pub polygons: Vec<OverlayPolygon>,
    pub texts: Vec<OverlayText>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Telemetry {
    /// Duration of each stage of this frame, keyed by stage name.
    pub stage_ms: BTreeMap<String, f64>,
    pub latency_ms: f64,
    pub fps: f64,
    /// Frames discarded by the pipeline plus frames skipped for this stream.
    pub dropped: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocusMsg {
    pub score: f64,
    /// True when the overlay was suppressed as out of focus.
    pub gated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageMsg {
    pub x_um: f64,
    pub y_um: f64,
    pub focus_z: f64,
}

impl From<StagePose> for StageMsg {
    fn from(p: StagePose) -> Self {
        Self {
            x_um: p.x_um,
            y_um: p.y_um,
            focus_z: p.focus_z,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameMsg {
    pub schema: Schema,
    pub session_id: String,
    pub slide_id: String,
    pub seq: u64,
    /// Camera FOV side; overlay coordinates are in this pixel space.
    pub fov_px: usize,
    /// Side of the transmitted image (at most 1024).
    pub image_px: usize,
    pub fov_png_b64: String,
    pub overlay: OverlayMsg,
    pub telemetry: Telemetry,
    pub focus: FocusMsg,
    pub objective: ObjectiveName,
    pub um_per_px: f64,
    /// Objective tag of the model that produced the overlay.
    pub model: Option<String>,
    pub stage: StageMsg,
    pub notices: Vec<String>,
    pub measurement: Option<FocusMeasurement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AckMsg {
    pub schema: Schema,
    /// `stage`, `objective` or `display`.
    pub request: String,
    /// HTTP status the equivalent POST would return.
    pub status: u16,
    pub result: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorMsg {
    pub schema: Schema,
    pub status: u16,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    Frame(FrameMsg),
    Ack(AckMsg),
    Error(ErrorMsg),
}

/// Client-to-server messages mirror the POST mutation bodies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMsg {
    Stage {
        x_um: f64,
        y_um: f64,
        #[serde(default)]
        focus_z: Option<f64>,
        #[serde(default)]
        clamp: bool,
    },
    Objective {
        name: String,
    },
    Display {
        mode: DisplayMode,
        #[serde(default)]
        color_space: Option<ColorSpace>,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_are_rejected() {
        let ok = r#"{"type":"ack","schema":"arm-msg/1","request":"stage","status":200,"result":{}}"#;
        assert!(serde_json::from_str::<ServerMsg>(ok).is_ok());
        let extra = r#"{"type":"ack","schema":"arm-msg/1","request":"stage","status":200,"result":{},"x":1}"#;
        assert!(serde_json::from_str::<ServerMsg>(extra).is_err());
        let wrong = r#"{"type":"ack","schema":"arm-msg/2","request":"stage","status":200,"result":{}}"#;
        assert!(serde_json::from_str::<ServerMsg>(wrong).is_err());
        assert!(serde_json::from_str::<ClientMsg>(r#"{"type":"stage","x_um":1,"y_um":2,"speed":3}"#).is_err());
        assert_eq!(
            serde_json::from_str::<ClientMsg>(r#"{"type":"objective","name":"20x"}"#).unwrap(),
            ClientMsg::Objective { name: "20x".into() }
        );
    }

    #[test]
    fn schema_file_is_valid_json_with_matching_id() {
        let v: serde_json::Value = serde_json::from_str(SCHEMA_JSON).unwrap();
        assert_eq!(v["$defs"]["schema"]["const"], SCHEMA_ID);
    }
}
