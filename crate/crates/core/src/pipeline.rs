//! End-to-end drivers: scan registration and model building.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arap::{refine, ArapConfig, ArapProblem, Refinement};
use crate::gloss::{
    fit_gloss, params_to_pose, GlossFit, GlossFitConfig, GlossModel, PoseBasisConfig,
};
use crate::mesh::spatial::mean_distance_to_surface;
use crate::mesh::{laplacian_smooth, Mesh, Vec3};
use crate::smal::{
    coregister, fit_family_priors, fit_pose_prior, pose_limits, pose_normalize,
    rebuild_shape_space, symmetrize, CoregConfig, CoregResult, Rig, SmalModel, SmalParams, Target,
};
use crate::synth::{walk_cycle, Template};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RegistrationConfig {
    pub pose_basis: PoseBasisConfig,
    pub gloss: GlossFitConfig,
    pub arap: ArapConfig,
}

/// Part-model fit followed by ARAP refinement of one scan.
#[derive(Debug, Clone)]
pub struct ScanRegistration {
    pub gloss: GlossFit,
    /// Absent when ARAP refinement was skipped.
    pub arap: Option<Refinement>,
    /// Articulated pose recovered from the part rotations.
    pub theta: Vec<f64>,
    pub gamma: Vec3,
    /// Mean scan-to-surface distance of each stage; the ARAP distance
    /// repeats the part-model distance when refinement was skipped.
    pub gloss_distance: f64,
    pub arap_distance: f64,
}

impl ScanRegistration {
    /// Final registered mesh.
    pub fn mesh(&self) -> &Mesh {
        self.arap.as_ref().map_or(&self.gloss.mesh, |r| &r.mesh)
    }
}

/// Everything needed to register scans against one template.
#[derive(Debug, Clone)]
pub struct Registrar {
    pub gloss: GlossModel,
    pub rig: Rig,
    rest_joints: Vec<Vec3>,
}

impl Registrar {
    pub fn new(template: &Template, config: &PoseBasisConfig) -> Result<Self> {
        Ok(Self {
            gloss: GlossModel::build(template, config)?,
            rig: Rig::from_template(template),
            rest_joints: template.joints_for(&template.mesh.vertices),
        })
    }

    /// Template vertex and scan position of every keypoint.
    pub fn keypoint_vertices(&self, keypoints: &[(String, Vec3)]) -> Result<Vec<(usize, Vec3)>> {
        keypoints
            .iter()
            .map(|(name, y)| {
                self.rig
                    .scan_keypoints
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, v)| (*v, *y))
                    .ok_or_else(|| Error::MissingKeypoint(name.clone()))
            })
            .collect()
    }

    /// Part-model fit followed by ARAP refinement.
    pub fn register(
        &self,
        scan: &Mesh,
        keypoints: &[(String, Vec3)],
        config: &RegistrationConfig,
    ) -> Result<ScanRegistration> {
        self.register_with(scan, keypoints, config, true)
    }

    /// Part-model fit, refined with ARAP when `arap` is set.
    pub fn register_with(
        &self,
        scan: &Mesh,
        keypoints: &[(String, Vec3)],
        config: &RegistrationConfig,
        arap: bool,
    ) -> Result<ScanRegistration> {
        let kp = self.keypoint_vertices(keypoints)?;
        let gloss = fit_gloss(&self.gloss, scan, keypoints, &config.gloss)?;
        let (theta, gamma) = params_to_pose(&self.gloss, &gloss.params, &self.rest_joints);
        let arap = if arap {
            Some(refine(
                &ArapProblem {
                    initial: &gloss.mesh,
                    scan,
                    keypoints: kp,
                    coupling: None,
                },
                &config.arap,
            )?)
        } else {
            None
        };
        let gloss_distance = mean_distance_to_surface(&scan.vertices, &gloss.mesh);
        Ok(ScanRegistration {
            arap_distance: arap.as_ref().map_or(gloss_distance, |r| {
                mean_distance_to_surface(&scan.vertices, &r.mesh)
            }),
            gloss_distance,
            gloss,
            arap,
            theta,
            gamma,
        })
    }
}

/// One registered scan as input to model building.
#[derive(Debug, Clone)]
pub struct RegisteredScan {
    pub id: String,
    pub scan: Mesh,
    pub keypoints: Vec<(String, Vec3)>,
    pub registration: Mesh,
    pub theta: Vec<f64>,
    pub gamma: Vec3,
    pub family: Option<String>,
}

/// Model built from registrations.
#[derive(Debug, Clone)]
pub struct BuiltModel {
    pub model: SmalModel,
    /// Model before co-registration.
    pub initial: SmalModel,
    /// Present when at least one round ran.
    pub coreg: Option<CoregResult>,
}

fn neutral_of(rig: &Rig, scan: &RegisteredScan, config: &CoregConfig) -> Result<Mesh> {
    let unposed = pose_normalize(rig, &scan.registration.vertices, &scan.theta, &scan.gamma)
        .map_err(|e| e.context(format!("scan `{}`", scan.id)))?;
    let symmetric = symmetrize(&rig.mesh(unposed)?, &rig.pairing)?;
    laplacian_smooth(&symmetric, config.smooth_iterations, config.smooth_step)
}

/// Shape space and pose prior from the registrations alone; the pose prior is
/// fit to the recovered poses plus one walk cycle.
pub fn initial_model(
    rig: &Rig,
    scans: &[RegisteredScan],
    config: &CoregConfig,
) -> Result<(SmalModel, Vec<Mesh>)> {
    if scans.is_empty() {
        return Err(Error::Empty("registered scans"));
    }
    let neutrals = scans
        .par_iter()
        .map(|s| neutral_of(rig, s, config))
        .collect::<Result<Vec<_>>>()?;
    let space = rebuild_shape_space(&neutrals, config.max_components)?;
    let limits = pose_limits(&rig.tree);
    let mut poses: Vec<Vec<f64>> = scans.iter().map(|s| s.theta.clone()).collect();
    poses.extend((0..8).map(|i| walk_cycle(i as f64 / 8.0)));
    let prior = fit_pose_prior(&poses, &rig.joint_mirror, rig.tree.root(), &limits)?;
    Ok((SmalModel::new(space, rig.clone(), prior, limits)?, neutrals))
}

fn clamped(model: &SmalModel, theta: &[f64]) -> Vec<f64> {
    let mut t = theta.to_vec();
    model.pose_limits.clamp(&mut t);
    t
}

/// Initial model, `config.rounds` rounds of co-registration, then family
/// priors over the final neutral shapes of every labelled scan.
pub fn build_model(
    rig: &Rig,
    scans: &[RegisteredScan],
    config: &CoregConfig,
) -> Result<BuiltModel> {
    let (initial, initial_neutrals) = initial_model(rig, scans, config)?;
    let (mut model, neutrals, coreg) = if config.rounds == 0 {
        (initial.clone(), initial_neutrals, None)
    } else {
        let targets: Vec<Target> = scans
            .iter()
            .zip(&initial_neutrals)
            .map(|(s, n)| {
                Ok(Target {
                    id: s.id.clone(),
                    scan: s.scan.clone(),
                    keypoints: s.keypoints.clone(),
                    init: Some(SmalParams {
                        beta: initial
                            .shape_space
                            .project(&n.vertices, initial.shape_dim())?,
                        theta: clamped(&initial, &s.theta),
                        gamma: s.gamma,
                    }),
                })
            })
            .collect::<Result<_>>()?;
        let registrations: Vec<Mesh> = scans.iter().map(|s| s.registration.clone()).collect();
        let result = coregister(&initial, &targets, &registrations, config)?;
        (result.model.clone(), result.neutrals.clone(), Some(result))
    };
    let mut groups: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for (s, n) in scans.iter().zip(&neutrals) {
        if let Some(f) = &s.family {
            let beta = model.shape_space.project(&n.vertices, model.shape_dim())?;
            groups.entry(f.clone()).or_default().push(beta);
        }
    }
    if !groups.is_empty() {
        model.families = fit_family_priors(&groups, &model.shape_space.eigenvalues)?;
    }
    Ok(BuiltModel {
        model,
        initial,
        coreg,
    })
}
