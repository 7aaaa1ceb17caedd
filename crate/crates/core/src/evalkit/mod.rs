//! FOV-level scoring, ROC/AUC, confusion metrics, operating points with
//! bootstrap intervals, and hue-saturation-density color analysis.

mod hsd;
mod manifest;
mod metrics;

pub use hsd::{
    color_summary, density_histogram, hsd_transform, image_hsd, ColorRow, DensityBin, HsdPoint, HsdSample,
    TISSUE_DENSITY_MIN,
};
pub use manifest::{
    read_manifest, write_colors_csv, write_density_hist_csv, write_manifest, write_metrics_csv, write_roc_csv,
    ManifestRow,
};
pub use metrics::{
    auc, bootstrap_ci, confusion_at_threshold, metrics, operating_points_with_ci, pick_operating_points,
    roc_curve, BootstrapCi, ConfusionCounts, MetricCi, Metrics, OperatingPoint, OperatingPointName, RocCurve,
    RocPoint, Scored, HIGH_PRECISION_MIN_RECALL, HIGH_RECALL_TARGET,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::Heatmap;
use crate::scope::TissueClass;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("heatmap has no cells")]
    EmptyHeatmap,
    #[error("dataset needs at least one positive and one negative")]
    SingleClass,
    #[error("bootstrap needs at least 100 replications, got {0}")]
    TooFewReplications(usize),
    #[error("bootstrap statistic undefined on {attempts} consecutive resamples")]
    Degenerate { attempts: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest row {row}: {detail}")]
    Manifest { row: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// One evaluated field of view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledFov {
    pub id: String,
    pub label: TissueClass,
    pub score: f64,
    #[serde(default)]
    pub magnification: Option<String>,
    #[serde(default)]
    pub source: Option<String>,
}

impl LabeledFov {
    pub fn new(id: impl Into<String>, label: TissueClass, score: f64) -> Self {
        Self {
            id: id.into(),
            label,
            score,
            magnification: None,
            source: None,
        }
    }

    pub fn scored(&self) -> Scored {
        Scored {
            score: self.score,
            positive: self.label == TissueClass::Tumor,
        }
    }
}

pub fn scored(data: &[LabeledFov]) -> Vec<Scored> {
    data.iter().map(LabeledFov::scored).collect()
}

/// Maximum likelihood over all heatmap cells.
pub fn fov_likelihood(h: &Heatmap) -> Result<f64> {
    h.values()
        .iter()
        .copied()
        .reduce(f32::max)
        .map(f64::from)
        .ok_or(EvalError::EmptyHeatmap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::GridGeometry;

    fn geo() -> GridGeometry {
        GridGeometry {
            receptive_field_px: 1,
            output_stride_px: 1,
            offset_px: 0,
            canonical_patch_px: 1,
            start_px: 0,
        }
    }

    #[test]
    fn likelihood_is_max_cell() {
        assert_eq!(fov_likelihood(&Heatmap::new(2, 2, vec![0.0; 4], geo())).unwrap(), 0.0);
        let h = Heatmap::new(2, 2, vec![0.0, 0.9, 0.0, 0.0], geo());
        assert!((fov_likelihood(&h).unwrap() - 0.9).abs() < 1e-6);
        assert!(matches!(
            fov_likelihood(&Heatmap::new(0, 0, vec![], geo())),
            Err(EvalError::EmptyHeatmap)
        ));
    }
}
