use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{GraphError, Result};

/// Location of one named tensor inside the weights payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload (after the file header).
    pub offset: usize,
    /// Byte length; always `product(shape) * 4`.
    pub length: usize,
}

/// Named float blocks backed by one contiguous payload.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    entries: BTreeMap<String, WeightEntry>,
    payload: Vec<f32>,
}

impl WeightStore {
    /// Appends a block. Replacing an existing name is not supported.
    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        let name = name.into();
        assert_eq!(shape.iter().product::<usize>(), data.len(), "{name}: shape/data mismatch");
        assert!(!self.entries.contains_key(&name), "duplicate weight {name}");
        let entry = WeightEntry {
            name: name.clone(),
            shape,
            offset: self.payload.len() * 4,
            length: data.len() * 4,
        };
        self.payload.extend(data);
        self.entries.insert(name, entry);
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f32])> {
        let e = self.entries.get(name)?;
        let start = e.offset / 4;
        Some((&e.shape, &self.payload[start..start + e.length / 4]))
    }

    pub(crate) fn expect(&self, name: &str, shape: &[usize]) -> Result<&[f32]> {
        let (s, data) = self.get(name).ok_or_else(|| GraphError::MissingWeight(name.to_string()))?;
        if s != shape {
            return Err(GraphError::ShapeMismatch {
                name: name.to_string(),
                detail: format!("expected {shape:?}, found {s:?}"),
            });
        }
        Ok(data)
    }

    /// Entries ordered by payload offset.
    pub fn entries(&self) -> Vec<&WeightEntry> {
        let mut v: Vec<&WeightEntry> = self.entries.values().collect();
        v.sort_by_key(|e| e.offset);
        v
    }

    pub fn payload(&self) -> &[f32] {
        &self.payload
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Little-endian payload bytes.
    pub fn payload_bytes(&self) -> Vec<u8> {
        self.payload.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// Rebuilds a store from a manifest and raw payload bytes, checking that
    /// every entry is well-formed, in bounds and non-overlapping.
    pub fn from_manifest(entries: Vec<WeightEntry>, bytes: &[u8]) -> Result<Self> {
        let mut spans: Vec<(usize, usize, &str)> = Vec::with_capacity(entries.len());
        for e in &entries {
            let expected = e.shape.iter().product::<usize>() * 4;
            if e.length != expected {
                return Err(GraphError::ShapeMismatch {
                    name: e.name.clone(),
                    detail: format!("length {} bytes but shape {:?} needs {expected}", e.length, e.shape),
                });
            }
            if e.offset % 4 != 0 {
                return Err(GraphError::ShapeMismatch {
                    name: e.name.clone(),
                    detail: format!("offset {} not 4-byte aligned", e.offset),
                });
            }
            if e.offset + e.length > bytes.len() {
                return Err(GraphError::ShapeMismatch {
                    name: e.name.clone(),
                    detail: format!(
                        "needs bytes {}..{} but payload has {}",
                        e.offset,
                        e.offset + e.length,
                        bytes.len()
                    ),
                });
            }
            spans.push((e.offset, e.offset + e.length, &e.name));
        }
        spans.sort();
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(GraphError::ShapeMismatch {
                    name: w[1].2.to_string(),
                    detail: format!("overlaps {}", w[0].2),
                });
            }
        }
        if bytes.len() % 4 != 0 {
            return Err(GraphError::ShapeMismatch {
                name: "<payload>".into(),
                detail: format!("payload length {} not a multiple of 4", bytes.len()),
            });
        }
        let payload = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut map = BTreeMap::new();
        for e in entries {
            if map.contains_key(&e.name) {
                return Err(GraphError::DuplicateName(e.name));
            }
            map.insert(e.name.clone(), e);
        }
        Ok(Self { entries: map, payload })
    }
}
