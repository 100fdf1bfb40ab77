//! Keypoint, silhouette and joint-limit energies over projected vertices.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::camera::{project, projection_jacobian, Camera, Vec2};
use super::edt::{distance_transform, DistanceField};
use super::raster::{cross, rasterize, Mask};
use super::KeypointVertexMap;
use crate::mesh::spatial::PointIndex;
use crate::mesh::Vec3;
use crate::optim::GemanMcClure;
use crate::smal::{backward, forward, PoseLimits, SmalModel};
use crate::{Error, Result};

/// Image size that residuals are measured in; larger or smaller images are
/// rescaled so energies and kernel widths do not depend on resolution.
pub const REFERENCE_SIZE: f64 = 512.0;

/// Reference pixels per image pixel.
pub fn reference_scale(resolution: [usize; 2]) -> f64 {
    REFERENCE_SIZE / resolution[0].max(resolution[1]) as f64
}

/// Fitted parameters: shape coefficients, pose, translation and focal length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
    pub gamma: Vec3,
    pub focal: f64,
}

impl FitParams {
    /// `[β, θ, γ, f]`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.beta.len() + self.theta.len() + 4);
        x.extend_from_slice(&self.beta);
        x.extend_from_slice(&self.theta);
        x.extend_from_slice(self.gamma.as_slice());
        x.push(self.focal);
        x
    }

    pub fn unflatten(x: &[f64], n_beta: usize) -> Self {
        let n = x.len();
        Self {
            beta: x[..n_beta].to_vec(),
            theta: x[n_beta..n - 4].to_vec(),
            gamma: Vec3::new(x[n - 4], x[n - 3], x[n - 2]),
            focal: x[n - 1],
        }
    }
}

/// A named image keypoint; invisible keypoints carry no position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint2 {
    pub name: String,
    pub position: Option<[f64; 2]>,
}

/// Annotated keypoints and silhouette of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageObservation {
    pub resolution: [usize; 2],
    pub keypoints: Vec<Keypoint2>,
    pub silhouette: Mask,
}

impl ImageObservation {
    pub fn validate(&self) -> Result<()> {
        let [w, h] = self.resolution;
        if (self.silhouette.width, self.silhouette.height) != (w, h) {
            return Err(Error::InvalidArgument(format!(
                "silhouette is {}x{}, image is {w}x{h}",
                self.silhouette.width, self.silhouette.height
            )));
        }
        if self.silhouette.is_empty() {
            return Err(Error::Empty("silhouette mask"));
        }
        for k in &self.keypoints {
            if let Some([u, v]) = k.position {
                if !(0.0..=w as f64).contains(&u) || !(0.0..=h as f64).contains(&v) {
                    return Err(Error::InvalidArgument(format!(
                        "keypoint `{}` at ({u}, {v}) lies outside the {w}x{h} image",
                        k.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn visible(&self) -> impl Iterator<Item = (&str, Vec2)> {
        self.keypoints
            .iter()
            .filter_map(|k| k.position.map(|[u, v]| (k.name.as_str(), Vec2::new(u, v))))
    }
}

/// Visible keypoints resolved to model vertex sets.
#[derive(Debug, Clone)]
pub struct KeypointTargets {
    pub entries: Vec<(String, Vec<usize>, Vec2)>,
}

impl KeypointTargets {
    /// Visible keypoints of `obs`, restricted to `only` when given.
    pub fn new(
        obs: &ImageObservation,
        map: &KeypointVertexMap,
        only: Option<&[&str]>,
    ) -> Result<Self> {
        let mut entries = Vec::new();
        for (name, target) in obs.visible() {
            let verts = map
                .get(name)
                .ok_or_else(|| Error::MissingKeypoint(name.to_string()))?;
            if only.is_none_or(|o| o.contains(&name)) {
                entries.push((name.to_string(), verts.to_vec(), target));
            }
        }
        if entries.is_empty() {
            return Err(Error::Empty("set of visible keypoints"));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Model keypoint as the mean of its projected vertices.
    pub fn predicted(&self, projected: &[Vec2]) -> Vec<Vec2> {
        self.entries
            .iter()
            .map(|(_, verts, _)| {
                verts.iter().fold(Vec2::zeros(), |a, &v| a + projected[v]) / verts.len() as f64
            })
            .collect()
    }

    /// `Σ ρ(|unit (x_k - mean_j Π(v_kj))|²)`, accumulating the gradient into
    /// `grad` over projected vertices.
    pub fn energy(
        &self,
        projected: &[Vec2],
        kernel: &GemanMcClure,
        unit: f64,
        grad: &mut [Vec2],
    ) -> f64 {
        let mut value = 0.0;
        for ((_, verts, target), pred) in self.entries.iter().zip(self.predicted(projected)) {
            let r = (pred - target) * unit;
            let (rho, drho) = kernel.eval(r.norm_squared());
            value += rho;
            let g = r * (2.0 * drho * unit / verts.len() as f64);
            for &v in verts {
                grad[v] += g;
            }
        }
        value
    }

    /// Mean distance between targets and projected model keypoints, in pixels.
    pub fn mean_error(&self, projected: &[Vec2]) -> f64 {
        let pred = self.predicted(projected);
        self.entries
            .iter()
            .zip(&pred)
            .map(|((_, _, t), p)| (p - t).norm())
            .sum::<f64>()
            / self.len() as f64
    }
}

/// Mesh edges with their incident faces.
#[derive(Debug, Clone)]
pub struct EdgeFaces {
    pub edges: Vec<([usize; 2], [Option<usize>; 2])>,
}

impl EdgeFaces {
    pub fn new(faces: &[[usize; 3]]) -> Self {
        let mut map: HashMap<(usize, usize), [Option<usize>; 2]> = HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let entry = map.entry((a.min(b), a.max(b))).or_insert([None, None]);
                if entry[0].is_none() {
                    entry[0] = Some(fi);
                } else {
                    entry[1] = Some(fi);
                }
            }
        }
        let mut edges: Vec<_> = map.into_iter().map(|((a, b), f)| ([a, b], f)).collect();
        edges.sort_unstable_by_key(|e| e.0);
        Self { edges }
    }
}

/// Samples per contour edge, at the centers of equal sub-segments.
pub const SAMPLES_PER_EDGE: usize = 4;
/// Contour samples farther than this (in pixels) from the background of the
/// model silhouette are interior and are dropped.
pub const OUTLINE_TOLERANCE: f64 = 1.5;
/// Distance transform values below this many pixels count as inside.
pub const INSIDE_MARGIN: f64 = 1.0;
/// Offset from the continuous contour to the nearest covered pixel center,
/// in pixels.
pub const CONTOUR_OFFSET: f64 = 0.5;

/// Target silhouette at one pyramid level.
#[derive(Debug, Clone)]
pub struct SilhouetteTarget {
    pub mask: Mask,
    pub field: DistanceField,
    /// Reference pixels per pixel of this level.
    pub unit: f64,
    pub kernel: GemanMcClure,
}

impl SilhouetteTarget {
    /// `sigma` is the coverage kernel width in reference pixels.
    pub fn new(mask: Mask, unit: f64, sigma: f64) -> Result<Self> {
        let field = distance_transform(&mask)?;
        Ok(Self {
            mask,
            field,
            unit,
            kernel: GemanMcClure::new(sigma)?,
        })
    }
}

/// The two parts of the silhouette energy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteParts {
    /// Mean distance of model outline samples from the target silhouette.
    pub consistency: f64,
    /// Mean robust distance of target pixels from the model silhouette.
    pub coverage: f64,
}

/// One outline sample: `(1 - t) Π(a) + t Π(b)`.
#[derive(Debug, Clone, Copy)]
struct Sample {
    a: usize,
    b: usize,
    t: f64,
    p: Vec2,
}

/// Outline samples on contour edges: mesh boundary edges and edges between
/// front- and back-facing triangles that lie on the rendered outline.
fn outline_samples(
    projected: &[Vec2],
    faces: &[[usize; 3]],
    edges: &EdgeFaces,
    outside: Option<&DistanceField>,
) -> Vec<Sample> {
    let facing = |f: usize| {
        let [a, b, c] = faces[f];
        cross(
            &(projected[b] - projected[a]),
            &(projected[c] - projected[a]),
        ) > 0.0
    };
    let mut samples = Vec::new();
    for ([a, b], f) in &edges.edges {
        let contour = match f {
            [Some(f0), Some(f1)] => facing(*f0) != facing(*f1),
            _ => true,
        };
        if !contour {
            continue;
        }
        for k in 0..SAMPLES_PER_EDGE {
            let t = (k as f64 + 0.5) / SAMPLES_PER_EDGE as f64;
            let p = projected[*a] * (1.0 - t) + projected[*b] * t;
            if outside.is_none_or(|d| d.sample(&p).0 <= OUTLINE_TOLERANCE) {
                samples.push(Sample { a: *a, b: *b, t, p });
            }
        }
    }
    samples
}

/// Bidirectional silhouette distance. The first part averages
/// `max(D_S - 1, 0)` over model outline samples, with `D_S` the target
/// distance transform sampled bilinearly; the second averages
/// `ρ(d + 1/2)` over target pixels outside the model silhouette, `d` being
/// the distance to the nearest outline sample. Both are in reference pixels.
pub fn silhouette_energy(
    vertices: &[Vec3],
    projected: &[Vec2],
    faces: &[[usize; 3]],
    edges: &EdgeFaces,
    camera: &Camera,
    target: &SilhouetteTarget,
    grad: &mut [Vec2],
) -> Result<SilhouetteParts> {
    if (target.mask.width, target.mask.height) != (camera.resolution[0], camera.resolution[1]) {
        return Err(Error::InvalidArgument(
            "silhouette target and camera sizes differ".into(),
        ));
    }
    let model = rasterize(vertices, faces, camera)?.mask();
    if model.is_empty() {
        return Err(Error::Empty("model silhouette"));
    }
    let background = model.complement();
    let outside = if background.is_empty() {
        None
    } else {
        Some(distance_transform(&background)?)
    };
    let samples = outline_samples(projected, faces, edges, outside.as_ref());
    if samples.is_empty() {
        return Err(Error::Empty("model outline"));
    }
    let unit = target.unit;
    let mut parts = SilhouetteParts::default();

    let inv_n = 1.0 / samples.len() as f64;
    for s in &samples {
        let (d, gd) = target.field.sample(&s.p);
        if d > INSIDE_MARGIN {
            parts.consistency += (d - INSIDE_MARGIN) * unit * inv_n;
            let g = gd * (unit * inv_n);
            grad[s.a] += g * (1.0 - s.t);
            grad[s.b] += g * s.t;
        }
    }

    let uncovered: Vec<(usize, usize)> = target
        .mask
        .pixels()
        .filter(|&(x, y)| !model.get(x, y))
        .collect();
    if !uncovered.is_empty() {
        let points: Vec<Vec3> = samples
            .iter()
            .map(|s| Vec3::new(s.p.x, s.p.y, 0.0))
            .collect();
        let index = PointIndex::new(&points);
        let inv_area = 1.0 / target.mask.count() as f64;
        for (x, y) in uncovered {
            let q = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
            let (i, _) = index.nearest(&Vec3::new(q.x, q.y, 0.0));
            let s = &samples[i];
            let diff = s.p - q;
            let d = diff.norm();
            let r = (d + CONTOUR_OFFSET) * unit;
            let (rho, drho) = target.kernel.eval(r * r);
            parts.coverage += rho * inv_area;
            if d > 0.0 {
                let g = diff * (drho * 2.0 * r * unit / d * inv_area);
                grad[s.a] += g * (1.0 - s.t);
                grad[s.b] += g * s.t;
            }
        }
    }
    Ok(parts)
}

/// Hinge penalty `Σ max(θ - θ_max, 0) + max(θ_min - θ, 0)` and its gradient.
pub fn e_lim(theta: &[f64], limits: &PoseLimits) -> (f64, Vec<f64>) {
    limits.hinge(theta)
}

/// Pull 2D vertex gradients back to 3D and to the focal length.
pub fn projection_backward(vertices: &[Vec3], focal: f64, grad: &[Vec2]) -> (Vec<Vec3>, f64) {
    let mut g_f = 0.0;
    let g3 = vertices
        .iter()
        .zip(grad)
        .map(|(v, g)| {
            if g.x == 0.0 && g.y == 0.0 {
                return Vec3::zeros();
            }
            let (j, df) = projection_jacobian(v, focal);
            g_f += df.dot(g);
            j.transpose() * g
        })
        .collect();
    (g3, g_f)
}

fn check_params(model: &SmalModel, p: &FitParams) -> Result<()> {
    if p.beta.len() > model.shape_dim() {
        return Err(Error::Dimension {
            what: "shape coefficients",
            expected: model.shape_dim(),
            got: p.beta.len(),
        });
    }
    if !(p.focal > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "focal length must be positive, got {}",
            p.focal
        )));
    }
    Ok(())
}

fn observation_camera(obs: &ImageObservation, focal: f64) -> Camera {
    Camera::centered(focal, obs.resolution[0], obs.resolution[1])
}

/// Gradient over `[β, θ, γ, f]` from a gradient over projected vertices.
fn params_gradient(
    model: &SmalModel,
    p: &FitParams,
    posed: &crate::smal::Posed,
    grad2: &[Vec2],
) -> Vec<f64> {
    let (g3, g_f) = projection_backward(&posed.vertices, p.focal, grad2);
    let (gb, gt, gg) = backward(model, posed, &g3, p.beta.len());
    let mut out = gb;
    out.extend(gt);
    out.extend_from_slice(gg.as_slice());
    out.push(g_f);
    out
}

/// Keypoint energy of the model instance `p` against the visible keypoints
/// of `obs`, with Geman-McClure width `sigma` in reference pixels. The
/// camera sits at the origin with its principal point at the image center.
pub fn e_kp(
    model: &SmalModel,
    p: &FitParams,
    obs: &ImageObservation,
    sigma: f64,
) -> Result<(f64, Vec<f64>)> {
    check_params(model, p)?;
    let targets = KeypointTargets::new(obs, &model.rig.image_keypoints, None)?;
    let posed = forward(model, &p.beta, &p.theta, &p.gamma)?;
    let camera = observation_camera(obs, p.focal);
    let projected = project(&posed.vertices, camera.focal, camera.principal())?;
    let mut grad2 = vec![Vec2::zeros(); projected.len()];
    let value = targets.energy(
        &projected,
        &GemanMcClure::new(sigma)?,
        reference_scale(obs.resolution),
        &mut grad2,
    );
    Ok((value, params_gradient(model, p, &posed, &grad2)))
}

/// Silhouette energy (sum of both parts) of the model instance `p` against
/// the full-resolution silhouette of `obs`.
pub fn e_silh(
    model: &SmalModel,
    p: &FitParams,
    obs: &ImageObservation,
    sigma: f64,
) -> Result<(f64, Vec<f64>)> {
    check_params(model, p)?;
    let posed = forward(model, &p.beta, &p.theta, &p.gamma)?;
    let camera = observation_camera(obs, p.focal);
    let projected = project(&posed.vertices, camera.focal, camera.principal())?;
    let target = SilhouetteTarget::new(
        obs.silhouette.clone(),
        reference_scale(obs.resolution),
        sigma,
    )?;
    let edges = EdgeFaces::new(&model.rig.faces);
    let mut grad2 = vec![Vec2::zeros(); projected.len()];
    let parts = silhouette_energy(
        &posed.vertices,
        &projected,
        &model.rig.faces,
        &edges,
        &camera,
        &target,
        &mut grad2,
    )?;
    Ok((
        parts.consistency + parts.coverage,
        params_gradient(model, p, &posed, &grad2),
    ))
}
