//! Binary masks and a depth-buffered triangle rasterizer.

use serde::{Deserialize, Serialize};

use super::camera::{project, Camera, Vec2};
use crate::mesh::{Mesh, Vec3};
use crate::{Error, Result};

/// Row-major binary image; pixel `(x, y)` covers `[x, x+1) x [y, y+1)` and
/// has its center at `(x + 0.5, y + 0.5)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn complement(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    /// Pixel coordinates of all set pixels, in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }

    /// Downsample by `factor`; a coarse pixel is set when at least half of
    /// its in-bounds fine pixels are.
    pub fn downsample(&self, factor: usize) -> Self {
        if factor <= 1 {
            return self.clone();
        }
        let w = self.width.div_ceil(factor);
        let h = self.height.div_ceil(factor);
        Mask::from_fn(w, h, |cx, cy| {
            let (mut on, mut total) = (0, 0);
            for y in cy * factor..((cy + 1) * factor).min(self.height) {
                for x in cx * factor..((cx + 1) * factor).min(self.width) {
                    total += 1;
                    on += usize::from(self.get(x, y));
                }
            }
            2 * on >= total
        })
    }

    /// Intersection over union; two empty masks count as identical.
    pub fn iou(&self, other: &Mask) -> Result<f64> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::InvalidArgument(format!(
                "mask sizes differ: {}x{} and {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.data.iter().zip(&other.data) {
            inter += usize::from(*a && *b);
            union += usize::from(*a || *b);
        }
        Ok(if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        })
    }

    pub fn to_image(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            image::Luma([if self.get(x as usize, y as usize) {
                255
            } else {
                0
            }])
        })
    }

    /// Threshold a grayscale image at half intensity.
    pub fn from_image(img: &image::GrayImage) -> Self {
        let (w, h) = img.dimensions();
        Mask::from_fn(w as usize, h as usize, |x, y| {
            img.get_pixel(x as u32, y as u32)[0] >= 128
        })
    }
}

/// Per-pixel nearest depth and the face that produced it.
#[derive(Debug, Clone)]
pub struct DepthBuffer {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub face: Vec<Option<usize>>,
}

impl DepthBuffer {
    pub fn mask(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.face.iter().map(Option::is_some).collect(),
        }
    }

    /// Depth at the pixel containing `p`, if covered.
    pub fn depth_at(&self, p: &Vec2) -> Option<f64> {
        if p.x < 0.0 || p.y < 0.0 {
            return None;
        }
        let (x, y) = (p.x as usize, p.y as usize);
        (x < self.width && y < self.height && self.face[y * self.width + x].is_some())
            .then(|| self.depth[y * self.width + x])
    }
}

/// Barycentric slack so pixel centers on shared edges are never dropped by
/// rounding.
const EDGE_SLACK: f64 = 1e-9;

/// Rasterize every triangle; a pixel is covered when its center lies in the
/// projected triangle (edges included). Depth is interpolated perspective
/// correctly and the nearest surface wins, ties going to the lower face index.
pub fn rasterize(vertices: &[Vec3], faces: &[[usize; 3]], camera: &Camera) -> Result<DepthBuffer> {
    camera.validate()?;
    let [w, h] = camera.resolution;
    let projected = camera.project(vertices)?;
    let mut buf = DepthBuffer {
        width: w,
        height: h,
        depth: vec![f64::INFINITY; w * h],
        face: vec![None; w * h],
    };
    for (fi, f) in faces.iter().enumerate() {
        let [a, b, c] = [projected[f[0]], projected[f[1]], projected[f[2]]];
        let area = cross(&(b - a), &(c - a));
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let inv_z = [
            1.0 / vertices[f[0]].z,
            1.0 / vertices[f[1]].z,
            1.0 / vertices[f[2]].z,
        ];
        let lo = a.inf(&b).inf(&c);
        let hi = a.sup(&b).sup(&c);
        let x0 = (lo.x - 0.5).ceil().max(0.0);
        let y0 = (lo.y - 0.5).ceil().max(0.0);
        let x1 = (hi.x - 0.5).floor().min(w as f64 - 1.0);
        let y1 = (hi.y - 0.5).floor().min(h as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for y in y0 as usize..=y1 as usize {
            for x in x0 as usize..=x1 as usize {
                let p = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
                let wa = cross(&(b - p), &(c - p)) / area;
                let wb = cross(&(c - p), &(a - p)) / area;
                let wc = 1.0 - wa - wb;
                if wa < -EDGE_SLACK || wb < -EDGE_SLACK || wc < -EDGE_SLACK {
                    continue;
                }
                let z = 1.0 / (wa * inv_z[0] + wb * inv_z[1] + wc * inv_z[2]);
                let i = y * w + x;
                if z < buf.depth[i] {
                    buf.depth[i] = z;
                    buf.face[i] = Some(fi);
                }
            }
        }
    }
    Ok(buf)
}

pub(crate) fn cross(a: &Vec2, b: &Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Binary silhouette of `mesh` seen by `camera`.
pub fn render_silhouette(mesh: &Mesh, camera: &Camera) -> Result<Mask> {
    let mask = rasterize(&mesh.vertices, &mesh.faces, camera)?.mask();
    if mask.is_empty() {
        return Err(Error::Empty("silhouette: the mesh covers no pixel"));
    }
    Ok(mask)
}

/// Relative depth slack when testing whether a vertex is occluded.
pub const VISIBILITY_TOLERANCE: f64 = 0.01;

/// A vertex is visible unless the surface in its pixel is nearer by more
/// than [`VISIBILITY_TOLERANCE`] of its depth.
pub fn vertex_visibility(
    vertices: &[Vec3],
    buffer: &DepthBuffer,
    camera: &Camera,
) -> Result<Vec<bool>> {
    let projected = project(vertices, camera.focal, camera.principal())?;
    Ok(vertices
        .iter()
        .zip(&projected)
        .map(|(v, p)| match buffer.depth_at(p) {
            Some(d) => v.z <= d + VISIBILITY_TOLERANCE * v.z,
            None => true,
        })
        .collect())
}
