use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ColorRow, DensityBin, EvalError, LabeledFov, OperatingPoint, Result, RocCurve};
use crate::scope::TissueClass;

/// One row of the dataset manifest: `fov_id,label,score,image`. Either the
/// score is given or the image is scored by running a model on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub fov_id: String,
    pub label: TissueClass,
    #[serde(default)]
    pub score: Option<f64>,
    #[serde(default)]
    pub image: Option<String>,
}

impl ManifestRow {
    pub fn to_labeled(&self, row: usize) -> Result<LabeledFov> {
        let score = self.score.ok_or_else(|| EvalError::Manifest {
            row,
            detail: format!("{} has no score", self.fov_id),
        })?;
        if !(0.0..=1.0).contains(&score) {
            return Err(EvalError::Manifest {
                row,
                detail: format!("score {score} outside [0, 1]"),
            });
        }
        Ok(LabeledFov::new(self.fov_id.clone(), self.label, score))
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(EvalError::from)).collect()
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_roc_csv(path: &Path, roc: &RocCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["fpr", "tpr", "threshold"])?;
    for p in &roc.points {
        w.write_record([p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per operating point plus an `auc` row; undefined values are empty.
pub fn write_metrics_csv(path: &Path, points: &[OperatingPoint], auc: Option<(f64, Option<(f64, f64)>)>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "operating_point",
        "threshold",
        "accuracy",
        "accuracy_lo",
        "accuracy_hi",
        "precision",
        "precision_lo",
        "precision_hi",
        "recall",
        "recall_lo",
        "recall_hi",
    ])?;
    for p in points {
        let mut rec = vec![p.name.as_str().to_string(), p.threshold.to_string()];
        for m in [p.accuracy, p.precision, p.recall] {
            rec.push(opt(m.value));
            rec.push(opt(m.ci.map(|c| c.0)));
            rec.push(opt(m.ci.map(|c| c.1)));
        }
        w.write_record(&rec)?;
    }
    if let Some((value, ci)) = auc {
        let mut rec = vec!["auc".to_string(), String::new(), value.to_string()];
        rec.push(opt(ci.map(|c| c.0)));
        rec.push(opt(ci.map(|c| c.1)));
        rec.extend(std::iter::repeat_n(String::new(), 6));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_colors_csv(path: &Path, rows: &[ColorRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_density_hist_csv(path: &Path, bins: &[DensityBin]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for b in bins {
        w.serialize(b)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip_with_optional_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let rows = vec![
            ManifestRow {
                fov_id: "a".into(),
                label: TissueClass::Tumor,
                score: Some(0.75),
                image: None,
            },
            ManifestRow {
                fov_id: "b".into(),
                label: TissueClass::Benign,
                score: None,
                image: Some("fovs/b.png".into()),
            },
        ];
        write_manifest(&p, &rows).unwrap();
        assert_eq!(read_manifest(&p).unwrap(), rows);
        assert!(rows[1].to_labeled(1).is_err());
    }

    #[test]
    fn reads_three_column_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "fov_id,label,score\nx, tumor ,0.5\n").unwrap();
        let rows = read_manifest(&p).unwrap();
        assert_eq!(rows[0].to_labeled(0).unwrap().score, 0.5);
    }
}
