use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Each image keypoint is the mean of one to four model vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<KeypointEntry>", into = "Vec<KeypointEntry>")]
pub struct KeypointVertexMap {
    entries: Vec<(String, Vec<usize>)>,
}

#[derive(Serialize, Deserialize)]
struct KeypointEntry {
    name: String,
    vertices: Vec<usize>,
}

impl TryFrom<Vec<KeypointEntry>> for KeypointVertexMap {
    type Error = Error;
    fn try_from(v: Vec<KeypointEntry>) -> Result<Self> {
        Self::new(v.into_iter().map(|e| (e.name, e.vertices)).collect())
    }
}

impl From<KeypointVertexMap> for Vec<KeypointEntry> {
    fn from(m: KeypointVertexMap) -> Self {
        m.entries
            .into_iter()
            .map(|(name, vertices)| KeypointEntry { name, vertices })
            .collect()
    }
}

impl KeypointVertexMap {
    pub fn new(entries: Vec<(String, Vec<usize>)>) -> Result<Self> {
        for (i, (name, verts)) in entries.iter().enumerate() {
            if verts.is_empty() || verts.len() > 4 {
                return Err(Error::InvalidArgument(format!(
                    "keypoint `{name}` maps to {} vertices, expected 1 to 4",
                    verts.len()
                )));
            }
            if entries[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate keypoint `{name}`"
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, Vec<usize>)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&[usize]> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn validate_against(&self, vertex_count: usize) -> Result<()> {
        for (name, verts) in &self.entries {
            if let Some(&v) = verts.iter().find(|&&v| v >= vertex_count) {
                return Err(Error::InvalidArgument(format!(
                    "keypoint `{name}` references vertex {v} of {vertex_count}"
                )));
            }
        }
        Ok(())
    }
}
