//! Graph manifest (JSON text) and weights blob (`ARMW` binary) I/O.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GraphError, LayerSpec, NetGraph, Result, WeightEntry, WeightStore};

pub const GRAPH_FORMAT: &str = "arm-net/1";
pub const WEIGHTS_MAGIC: &[u8; 4] = b"ARMW";
pub const WEIGHTS_VERSION: u8 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    name: String,
    objective_tag: String,
    input_channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    training_patch_px: Option<usize>,
    layers: Vec<LayerSpec>,
    weights: Vec<WeightEntry>,
}

impl NetGraph {
    pub fn manifest_json(&self) -> String {
        let m = Manifest {
            format: GRAPH_FORMAT.to_string(),
            name: self.name().to_string(),
            objective_tag: self.objective_tag().to_string(),
            input_channels: self.input_channels(),
            training_patch_px: self.declared_training_patch_px(),
            layers: self.layers().to_vec(),
            weights: self.weights().entries().into_iter().cloned().collect(),
        };
        serde_json::to_string_pretty(&m).expect("manifest serializes")
    }

    pub fn weights_blob(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.weights().payload().len() * 4);
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.push(WEIGHTS_VERSION);
        out.extend(self.weights().payload_bytes());
        out
    }

    pub fn from_bytes(manifest: &str, blob: &[u8]) -> Result<NetGraph> {
        let m: Manifest = serde_json::from_str(manifest).map_err(|e| GraphError::Parse(e.to_string()))?;
        if m.format != GRAPH_FORMAT {
            return Err(GraphError::Format(m.format));
        }
        if blob.len() < 5 || &blob[..4] != WEIGHTS_MAGIC {
            return Err(GraphError::WeightsHeader("missing ARMW magic".into()));
        }
        if blob[4] != WEIGHTS_VERSION {
            return Err(GraphError::WeightsHeader(format!("unsupported version {}", blob[4])));
        }
        let weights = WeightStore::from_manifest(m.weights, &blob[5..])?;
        Ok(NetGraph::new(m.name, m.objective_tag, m.input_channels, m.layers, weights)?
            .with_training_patch(m.training_patch_px))
    }

    /// Writes `<graph_path>` and the weights blob next to it (same stem,
    /// `.armw` extension). Returns the weights path.
    pub fn save(&self, graph_path: &Path) -> Result<PathBuf> {
        let weights_path = weights_path_for(graph_path);
        fs::write(graph_path, self.manifest_json())?;
        fs::write(&weights_path, self.weights_blob())?;
        Ok(weights_path)
    }
}

/// `foo/bar.json` -> `foo/bar.armw`.
pub fn weights_path_for(graph_path: &Path) -> PathBuf {
    graph_path.with_extension("armw")
}

/// Loads a graph manifest and its weights blob. When `weights_file` is `None`
/// the blob is looked up next to the manifest.
pub fn load_graph(graph_file: &Path, weights_file: Option<&Path>) -> Result<NetGraph> {
    let manifest = fs::read_to_string(graph_file)?;
    let wpath = weights_file.map(Path::to_path_buf).unwrap_or_else(|| weights_path_for(graph_file));
    let blob = fs::read(wpath)?;
    NetGraph::from_bytes(&manifest, &blob)
}
