//! Shape models learned directly from generated neutral shapes.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::family::Family;
use super::pose::{sample_pose, walk_cycle, PoseRanges};
use super::template::{make_template, Template, TemplateSpec};
use crate::mesh::Mesh;
use crate::smal::{
    build_shape_space, fit_family_priors, fit_pose_prior, pose_limits, Rig, SmalModel,
};
use crate::Result;

/// Poses for a prior: random samples plus one walk cycle.
pub fn training_poses(samples: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut poses: Vec<Vec<f64>> = (0..samples)
        .map(|_| sample_pose(&mut rng, &PoseRanges::default()))
        .collect();
    poses.extend((0..8).map(|i| walk_cycle(i as f64 / 8.0)));
    poses
}

/// Neutral shapes of `per_family` random members of every family.
pub fn family_shapes(
    template: &Template,
    per_family: usize,
    spread: f64,
    seed: u64,
) -> Result<Vec<(Family, Mesh)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_family * Family::ALL.len());
    for family in Family::ALL {
        for _ in 0..per_family {
            let spec = TemplateSpec {
                recipe: family.sample_recipe(&mut rng, spread),
                ..template.spec
            };
            out.push((family, make_template(&spec)?.mesh));
        }
    }
    Ok(out)
}

/// Model whose shape space, pose prior and family priors come straight from
/// generated animals rather than from registered scans.
pub fn ground_truth_model(
    template: &Template,
    per_family: usize,
    components: usize,
    seed: u64,
) -> Result<SmalModel> {
    let shapes = family_shapes(template, per_family, 0.08, seed)?;
    let meshes: Vec<Mesh> = shapes.iter().map(|(_, m)| m.clone()).collect();
    let n = components.min(meshes.len().saturating_sub(1));
    let space = build_shape_space(&meshes, n)?;
    let rig = Rig::from_template(template);
    let limits = pose_limits(&rig.tree);
    let prior = fit_pose_prior(
        &training_poses(40, seed),
        &rig.joint_mirror,
        rig.tree.root(),
        &limits,
    )?;
    let mut model = SmalModel::new(space, rig, prior, limits)?;
    let mut groups: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for (family, mesh) in &shapes {
        let beta = model
            .shape_space
            .project(&mesh.vertices, model.shape_dim())?;
        groups
            .entry(family.name().to_string())
            .or_default()
            .push(beta);
    }
    model.families = fit_family_priors(&groups, &model.shape_space.eigenvalues)?;
    Ok(model)
}
