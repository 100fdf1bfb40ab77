//! Rendered model instances with known parameters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::pose::{sample_pose, PoseRanges};
use super::render::{framing_translation, render_annotation, view_rotation};
use crate::imagefit::{default_focal, Camera, FitParams, ImageObservation};
use crate::mesh::rotation::{matrix_to_rodrigues, rodrigues_to_matrix};
use crate::mesh::{Mesh, Vec3};
use crate::smal::{smal_instance, SmalModel};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub resolution: [usize; 2],
    /// Viewing yaw; a quarter turn shows the left side.
    pub yaw: f64,
    /// Half-width of the uniform yaw perturbation.
    pub yaw_jitter: f64,
    /// Relative half-width of the uniform focal-length perturbation.
    pub focal_jitter: f64,
    /// Shape coefficients are uniform within this many standard deviations.
    pub shape_range: f64,
    pub pose: PoseRanges,
    pub fill: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            resolution: [512, 512],
            yaw: std::f64::consts::FRAC_PI_2,
            yaw_jitter: 0.6,
            focal_jitter: 0.1,
            shape_range: 1.0,
            pose: PoseRanges::default().scaled(0.7),
            fill: 0.8,
        }
    }
}

/// A model instance, its parameters and its rendered annotation.
#[derive(Debug, Clone)]
pub struct Scene {
    pub params: FitParams,
    pub mesh: Mesh,
    pub observation: ImageObservation,
}

/// Parameters that place `beta` and the body pose `theta` in view.
pub fn scene_params(
    model: &SmalModel,
    beta: Vec<f64>,
    mut theta: Vec<f64>,
    yaw: f64,
    camera: &Camera,
    fill: f64,
) -> Result<FitParams> {
    let root = 3 * model.rig.tree.root();
    let r = view_rotation(yaw)
        * rodrigues_to_matrix(&Vec3::new(theta[root], theta[root + 1], theta[root + 2]));
    theta[root..root + 3].copy_from_slice(matrix_to_rodrigues(&r).as_slice());
    let at_origin = smal_instance(model, &beta, &theta, &Vec3::zeros())?;
    let gamma = framing_translation(&at_origin.vertices, camera, fill);
    Ok(FitParams {
        beta,
        theta,
        gamma,
        focal: camera.focal,
    })
}

/// Render the model instance `params` with a centered camera.
pub fn render_params(
    model: &SmalModel,
    params: &FitParams,
    resolution: [usize; 2],
) -> Result<Scene> {
    let camera = Camera::centered(params.focal, resolution[0], resolution[1]);
    let mesh = smal_instance(model, &params.beta, &params.theta, &params.gamma)?;
    let observation = render_annotation(&mesh, &model.rig.image_keypoints, &camera)?;
    Ok(Scene {
        params: params.clone(),
        mesh,
        observation,
    })
}

/// Random shape, pose, view and focal length, kept inside the pose limits.
pub fn random_scene(model: &SmalModel, spec: &SceneSpec, rng: &mut impl Rng) -> Result<Scene> {
    let beta: Vec<f64> = model
        .shape_space
        .eigenvalues
        .iter()
        .map(|l| l.sqrt() * spec.shape_range * rng.random_range(-1.0..=1.0))
        .collect();
    let mut theta = sample_pose(rng, &spec.pose);
    model.pose_limits.clamp(&mut theta);
    let yaw = spec.yaw + spec.yaw_jitter * rng.random_range(-1.0..=1.0);
    let focal =
        default_focal(spec.resolution) * (1.0 + spec.focal_jitter * rng.random_range(-1.0..=1.0));
    let camera = Camera::centered(focal, spec.resolution[0], spec.resolution[1]);
    let params = scene_params(model, beta, theta, yaw, &camera, spec.fill)?;
    render_params(model, &params, spec.resolution)
}
