//! The skinned multi-animal linear model.
//!
//! A PCA shape space over pose-normalized registrations, articulated by the
//! template's kinematic tree through linear blend skinning:
//! `M(β, θ, γ) = LBS(mean + B β, J(mean + B β), θ, γ)`, where the joints are
//! the centroids of fixed vertex sets of the shaped neutral mesh.

mod coreg;
mod fit;
mod normalize;
mod priors;
mod shape_space;

pub use coreg::{coregister, rebuild_shape_space, CoregConfig, CoregResult, CoregRound, Target};
pub use fit::{
    fit_smal_to_scan, initial_smal_params, smal_scan_energy, ScanProblem, SmalFit, SmalFitConfig,
    SmalFitWeights, SmalParams,
};
pub use normalize::{pose_normalize, symmetrize};
pub use priors::{
    fit_family_priors, fit_pose_prior, mirror_pose, pose_limits, FamilyPrior, Gaussian, PoseLimits,
    PosePrior, FAMILY_LOADING_FRACTION, POSE_PRIOR_LOADING, ROOT_POSE_VARIANCE,
};
pub use shape_space::{build_shape_space, ShapeSpace};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::imagefit::KeypointVertexMap;
use crate::mesh::skinning::{forward_kinematics, skin, skin_backward, PoseTransforms};
use crate::mesh::{KinematicTree, Mesh, SkinningWeights, Vec3};
use crate::synth::mirror_part;
use crate::synth::{joints_from_sets, Template};
use crate::{Error, Result};

/// File format version written into every model document.
pub const MODEL_VERSION: u32 = 1;

/// Topology, skinning and landmark definitions shared by every shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rig {
    pub tree: KinematicTree,
    pub blend_weights: SkinningWeights,
    /// Vertices averaged into each joint.
    pub joint_vertices: Vec<Vec<usize>>,
    pub faces: Vec<[usize; 3]>,
    /// Left/right vertex pairing.
    pub pairing: Vec<usize>,
    /// Left/right joint pairing.
    pub joint_mirror: Vec<usize>,
    pub scan_keypoints: Vec<(String, usize)>,
    pub image_keypoints: KeypointVertexMap,
}

impl Rig {
    pub fn from_template(t: &Template) -> Self {
        Self {
            tree: t.tree.clone(),
            blend_weights: t.weights.clone(),
            joint_vertices: t.joint_vertices.clone(),
            faces: t.mesh.faces.clone(),
            pairing: t.pairing.clone(),
            joint_mirror: (0..t.part_count()).map(mirror_part).collect(),
            scan_keypoints: t.scan_keypoints.clone(),
            image_keypoints: t.image_keypoints.clone(),
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.pairing.len()
    }

    pub fn joint_count(&self) -> usize {
        self.tree.joint_count()
    }

    pub fn joints(&self, vertices: &[Vec3]) -> Vec<Vec3> {
        joints_from_sets(&self.joint_vertices, vertices)
    }

    /// Pose a neutral mesh of this topology.
    pub fn pose(&self, neutral: &[Vec3], theta: &[f64], gamma: &Vec3) -> Result<Vec<Vec3>> {
        self.check_pose(theta)?;
        let joints = self.joints(neutral);
        let fk = forward_kinematics(&self.tree, &joints, theta);
        Ok(skin(&self.blend_weights, neutral, &joints, &fk, gamma))
    }

    pub fn check_pose(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != 3 * self.joint_count() {
            return Err(Error::Dimension {
                what: "pose vector",
                expected: 3 * self.joint_count(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    pub fn mesh(&self, vertices: Vec<Vec3>) -> Result<Mesh> {
        Mesh::new(vertices, self.faces.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmalModel {
    pub version: u32,
    #[serde(flatten)]
    pub shape_space: ShapeSpace,
    #[serde(flatten)]
    pub rig: Rig,
    pub pose_prior: PosePrior,
    pub pose_limits: PoseLimits,
    pub families: BTreeMap<String, FamilyPrior>,
}

impl SmalModel {
    pub fn new(
        shape_space: ShapeSpace,
        rig: Rig,
        pose_prior: PosePrior,
        pose_limits: PoseLimits,
    ) -> Result<Self> {
        if shape_space.vertex_count() != rig.vertex_count() {
            return Err(Error::Dimension {
                what: "shape space vertex count",
                expected: rig.vertex_count(),
                got: shape_space.vertex_count(),
            });
        }
        if pose_prior.dim() != 3 * rig.joint_count() || pose_limits.dim() != 3 * rig.joint_count() {
            return Err(Error::Dimension {
                what: "pose prior or limits",
                expected: 3 * rig.joint_count(),
                got: pose_prior.dim(),
            });
        }
        Ok(Self {
            version: MODEL_VERSION,
            shape_space,
            rig,
            pose_prior,
            pose_limits,
            families: BTreeMap::new(),
        })
    }

    pub fn shape_dim(&self) -> usize {
        self.shape_space.dim()
    }

    pub fn vertex_count(&self) -> usize {
        self.rig.vertex_count()
    }

    pub fn joint_count(&self) -> usize {
        self.rig.joint_count()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Parse {
                path: path.to_path_buf(),
                message: j.to_string(),
            },
            other => other.context(path.display().to_string()),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == MODEL_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::InvalidArgument(format!(
                    "unsupported model version {v}"
                )))
            }
            None => {
                return Err(Error::InvalidArgument(
                    "model document has no version".into(),
                ))
            }
        }
        let model: SmalModel = serde_json::from_value(value)?;
        model.shape_space.check()?;
        Ok(model)
    }
}

/// Intermediate values of one model evaluation, kept for backpropagation.
pub struct Posed {
    pub neutral: Vec<Vec3>,
    pub joints: Vec<Vec3>,
    pub transforms: PoseTransforms,
    pub vertices: Vec<Vec3>,
}

/// Evaluate `M(β, θ, γ)`; dimensions are checked by the caller.
pub fn forward(model: &SmalModel, beta: &[f64], theta: &[f64], gamma: &Vec3) -> Result<Posed> {
    model.rig.check_pose(theta)?;
    let neutral = model.shape_space.reconstruct(beta)?;
    let joints = model.rig.joints(&neutral);
    let transforms = forward_kinematics(&model.rig.tree, &joints, theta);
    let vertices = skin(
        &model.rig.blend_weights,
        &neutral,
        &joints,
        &transforms,
        gamma,
    );
    Ok(Posed {
        neutral,
        joints,
        transforms,
        vertices,
    })
}

/// Gradients with respect to the first `n_beta` shape coefficients, the pose
/// and the translation, given a gradient over the posed vertices.
pub fn backward(
    model: &SmalModel,
    posed: &Posed,
    grad_vertices: &[Vec3],
    n_beta: usize,
) -> (Vec<f64>, Vec<f64>, Vec3) {
    let rig = &model.rig;
    let sg = skin_backward(
        &rig.tree,
        &rig.blend_weights,
        &posed.neutral,
        &posed.joints,
        &posed.transforms,
        grad_vertices,
    );
    let mut g_neutral = sg.rest;
    for (set, gj) in rig.joint_vertices.iter().zip(&sg.joints) {
        let share = gj / set.len() as f64;
        for &v in set {
            g_neutral[v] += share;
        }
    }
    (
        model.shape_space.backward(&g_neutral, n_beta),
        sg.theta,
        sg.gamma,
    )
}

/// Neutral shape for coefficients `beta` (missing trailing entries are zero).
pub fn shape_vertices(model: &SmalModel, beta: &[f64]) -> Result<Vec<Vec3>> {
    model.shape_space.reconstruct(beta)
}

/// `M(β, θ, γ)` as a mesh.
pub fn smal_instance(model: &SmalModel, beta: &[f64], theta: &[f64], gamma: &Vec3) -> Result<Mesh> {
    let neutral = shape_vertices(model, beta)?;
    let posed = model.rig.pose(&neutral, theta, gamma)?;
    model.rig.mesh(posed)
}
