//! Part parameters and their flat-vector layout.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::basis::SHAPE_DIM;
use crate::mesh::Vec3;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartParams {
    pub location: Vec3,
    pub rodrigues: Vec3,
    pub shape: [f64; SHAPE_DIM],
    pub pose_deform: Vec<f64>,
}

impl PartParams {
    pub fn neutral(location: Vec3, pose_dim: usize) -> Self {
        Self {
            location,
            rodrigues: Vec3::zeros(),
            shape: [0.0; SHAPE_DIM],
            pose_deform: vec![0.0; pose_dim],
        }
    }
}

/// Parameters of every part, serialized as a JSON array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GlossParams {
    pub parts: Vec<PartParams>,
}

/// Offsets of each part's block in the flat parameter vector:
/// `[location(3), rodrigues(3), shape(7), pose_deform(n_d)]`.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    offsets: Vec<usize>,
    pose_dims: Vec<usize>,
}

pub const LOCATION: usize = 0;
pub const ROTATION: usize = 3;
pub const SHAPE: usize = 6;
pub const POSE: usize = 6 + SHAPE_DIM;

impl ParamLayout {
    pub fn new(pose_dims: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(pose_dims.len() + 1);
        let mut o = 0;
        for &d in &pose_dims {
            offsets.push(o);
            o += POSE + d;
        }
        offsets.push(o);
        Self { offsets, pose_dims }
    }

    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn part_count(&self) -> usize {
        self.pose_dims.len()
    }

    pub fn offset(&self, part: usize) -> usize {
        self.offsets[part]
    }

    pub fn pose_dim(&self, part: usize) -> usize {
        self.pose_dims[part]
    }

    pub fn flatten(&self, params: &GlossParams) -> Result<Vec<f64>> {
        self.check(params)?;
        let mut x = Vec::with_capacity(self.len());
        for p in &params.parts {
            x.extend(p.location.iter());
            x.extend(p.rodrigues.iter());
            x.extend(p.shape.iter());
            x.extend(p.pose_deform.iter());
        }
        Ok(x)
    }

    pub fn unflatten(&self, x: &[f64]) -> Result<GlossParams> {
        if x.len() != self.len() {
            return Err(Error::Dimension {
                what: "parameter vector",
                expected: self.len(),
                got: x.len(),
            });
        }
        let parts = (0..self.part_count())
            .map(|i| {
                let b = &x[self.offsets[i]..self.offsets[i + 1]];
                let mut shape = [0.0; SHAPE_DIM];
                shape.copy_from_slice(&b[SHAPE..POSE]);
                PartParams {
                    location: Vec3::from_column_slice(&b[LOCATION..ROTATION]),
                    rodrigues: Vec3::from_column_slice(&b[ROTATION..SHAPE]),
                    shape,
                    pose_deform: b[POSE..].to_vec(),
                }
            })
            .collect();
        Ok(GlossParams { parts })
    }

    pub fn check(&self, params: &GlossParams) -> Result<()> {
        if params.parts.len() != self.part_count() {
            return Err(Error::Dimension {
                what: "part parameter count",
                expected: self.part_count(),
                got: params.parts.len(),
            });
        }
        for (p, &d) in params.parts.iter().zip(&self.pose_dims) {
            if p.pose_deform.len() != d {
                return Err(Error::Dimension {
                    what: "pose deformation coefficients",
                    expected: d,
                    got: p.pose_deform.len(),
                });
            }
        }
        Ok(())
    }
}

impl GlossParams {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_round_trip_and_json() {
        let layout = ParamLayout::new(vec![2, 0, 1]);
        let x: Vec<f64> = (0..layout.len()).map(|i| i as f64 * 0.5).collect();
        let p = layout.unflatten(&x).unwrap();
        assert_eq!(layout.flatten(&p).unwrap(), x);
        let back = GlossParams::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
        assert!(p.to_json().unwrap().trim_start().starts_with('['));
        assert!(layout.unflatten(&x[1..]).is_err());
    }
}
