//! Pinhole camera at the origin looking down +z.

use nalgebra::{Matrix2x3, Vector2};
use serde::{Deserialize, Serialize};

use crate::mesh::Vec3;
use crate::{Error, Result};

pub type Vec2 = Vector2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Focal length in pixels.
    pub focal: f64,
    pub principal: [f64; 2],
    /// Image size as `[width, height]`.
    pub resolution: [usize; 2],
}

impl Camera {
    /// Camera with the principal point at the image center.
    pub fn centered(focal: f64, width: usize, height: usize) -> Self {
        Self {
            focal,
            principal: [width as f64 / 2.0, height as f64 / 2.0],
            resolution: [width, height],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [w, h] = self.resolution;
        let [cx, cy] = self.principal;
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "focal length must be positive, got {}",
                self.focal
            )));
        }
        if w == 0 || h == 0 {
            return Err(Error::InvalidArgument(
                "image resolution must be nonzero".into(),
            ));
        }
        if !(0.0..=w as f64).contains(&cx) || !(0.0..=h as f64).contains(&cy) {
            return Err(Error::InvalidArgument(format!(
                "principal point ({cx}, {cy}) lies outside the {w}x{h} image"
            )));
        }
        Ok(())
    }

    pub fn principal(&self) -> Vec2 {
        Vec2::new(self.principal[0], self.principal[1])
    }

    /// Same camera on an image downsampled by `factor`.
    pub fn scaled(&self, factor: usize) -> Self {
        let s = factor as f64;
        Self {
            focal: self.focal / s,
            principal: [self.principal[0] / s, self.principal[1] / s],
            resolution: [
                self.resolution[0].div_ceil(factor),
                self.resolution[1].div_ceil(factor),
            ],
        }
    }

    pub fn project(&self, points: &[Vec3]) -> Result<Vec<Vec2>> {
        project(points, self.focal, self.principal())
    }
}

/// Pinhole projection `(f x / z + cx, f y / z + cy)`.
pub fn project(points: &[Vec3], focal: f64, principal: Vec2) -> Result<Vec<Vec2>> {
    points
        .iter()
        .enumerate()
        .map(|(index, p)| {
            if p.z > 0.0 {
                Ok(project_point(p, focal, principal))
            } else {
                Err(Error::NonPositiveDepth { index, depth: p.z })
            }
        })
        .collect()
}

pub(crate) fn project_point(p: &Vec3, focal: f64, principal: Vec2) -> Vec2 {
    Vec2::new(focal * p.x / p.z, focal * p.y / p.z) + principal
}

/// Jacobian of the projection with respect to the point, and its derivative
/// with respect to the focal length.
pub(crate) fn projection_jacobian(p: &Vec3, focal: f64) -> (Matrix2x3<f64>, Vec2) {
    let iz = 1.0 / p.z;
    let j = Matrix2x3::new(
        focal * iz,
        0.0,
        -focal * p.x * iz * iz,
        0.0,
        focal * iz,
        -focal * p.y * iz * iz,
    );
    (j, Vec2::new(p.x * iz, p.y * iz))
}
