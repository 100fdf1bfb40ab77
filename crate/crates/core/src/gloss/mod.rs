//! Stitched part-based model for initial scan registration.
//!
//! Every template part is an independent mesh with its own rigid transform,
//! analytic shape deformation and learned pose deformation. Stitching terms
//! keep the copies of shared interface vertices together.

mod basis;
mod energy;
mod params;
mod template;

pub use basis::{
    build_pose_basis, learn_pose_bases, shape_displacement, PoseBasis, PoseBasisConfig, SHAPE_DIM,
    SHAPE_VARIANCE,
};
pub use energy::{variable_scales, Correspondences, EnergyTerms, GlossProblem, GlossWeights};
pub use params::{GlossParams, ParamLayout, PartParams};
pub use template::{GlossPart, GlossTemplate, PartVertex, StitchPair};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::linalg::procrustes;
use crate::mesh::rotation::matrix_to_rodrigues;
use crate::mesh::{median_point, Mesh, Vec3};
use crate::optim::{minimize, Objective, Scaled, SolverConfig};
use crate::synth::Template;
use crate::Result;

/// Part template plus learned bases.
#[derive(Debug, Clone)]
pub struct GlossModel {
    pub template: GlossTemplate,
    pub pose_bases: Vec<PoseBasis>,
    /// Per-part variance of the rotation relative to the parent; only tail
    /// entries are used.
    pub tail_variance: Vec<Vec3>,
    pub layout: ParamLayout,
}

impl GlossModel {
    pub fn build(template: &Template, config: &PoseBasisConfig) -> Result<Self> {
        let gloss = GlossTemplate::from_template(template);
        let (pose_bases, tail_variance) = learn_pose_bases(template, &gloss, config)?;
        Ok(Self::from_parts(gloss, pose_bases, tail_variance))
    }

    pub fn from_parts(
        template: GlossTemplate,
        pose_bases: Vec<PoseBasis>,
        tail_variance: Vec<Vec3>,
    ) -> Self {
        let layout = ParamLayout::new(pose_bases.iter().map(|b| b.dim()).collect());
        Self {
            template,
            pose_bases,
            tail_variance,
            layout,
        }
    }

    /// Template pose: every part at its rest centroid, no deformation.
    pub fn neutral_params(&self) -> GlossParams {
        GlossParams {
            parts: self
                .template
                .parts
                .iter()
                .zip(&self.pose_bases)
                .map(|(p, b)| PartParams::neutral(p.centroid, b.dim()))
                .collect(),
        }
    }

    /// Posed vertices of every part.
    pub fn part_vertices(&self, params: &GlossParams) -> Vec<Vec<Vec3>> {
        self.template
            .parts
            .iter()
            .zip(&params.parts)
            .zip(&self.pose_bases)
            .map(|((part, p), basis)| {
                let rot = crate::mesh::rodrigues_to_matrix(&p.rodrigues);
                let d = nalgebra::DVector::from_column_slice(&p.pose_deform);
                let deform = &basis.basis * d + &basis.mean;
                part.rest
                    .iter()
                    .enumerate()
                    .map(|(a, t)| {
                        let local = t
                            + shape_displacement(t, &p.shape)
                            + Vector3::new(deform[3 * a], deform[3 * a + 1], deform[3 * a + 2]);
                        rot * local + p.location
                    })
                    .collect()
            })
            .collect()
    }

    pub fn merged_vertices(&self, params: &GlossParams) -> Vec<Vec3> {
        self.template.merge(&self.part_vertices(params))
    }
}

/// Merge the posed parts into a single mesh with the template topology;
/// duplicated interface vertices are averaged.
pub fn merge_parts(model: &GlossModel, params: &GlossParams) -> Result<Mesh> {
    model.layout.check(params)?;
    Mesh::new(model.merged_vertices(params), model.template.faces.clone())
}

/// Energy and gradient at `params`, with correspondences computed there.
pub fn gloss_energy(
    model: &GlossModel,
    params: &GlossParams,
    scan: &[Vec3],
    keypoints: &[(String, Vec3)],
    weights: &GlossWeights,
) -> Result<(f64, Vec<f64>)> {
    let x = model.layout.flatten(params)?;
    let mut problem = GlossProblem::new(model, scan, keypoints, *weights)?;
    problem.refresh(&x);
    let mut g = vec![0.0; x.len()];
    let v = problem.evaluate(&x, &mut g);
    Ok((v, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlossFitConfig {
    pub weights: GlossWeights,
    /// Correspondence refreshes; each is followed by a full solve.
    pub rounds: usize,
    pub solver: SolverConfig,
}

impl Default for GlossFitConfig {
    fn default() -> Self {
        Self {
            weights: GlossWeights::default(),
            rounds: 3,
            solver: SolverConfig::default().with_max_iterations(300),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GlossFit {
    pub params: GlossParams,
    pub mesh: Mesh,
    pub terms: EnergyTerms,
    /// Energy after each round.
    pub round_energies: Vec<f64>,
}

/// Initial parameters: the neutral model translated so that its vertex median
/// matches the scan's. With three or more keypoints the whole model is then
/// rigidly aligned to them.
pub fn initial_params(
    model: &GlossModel,
    scan: &[Vec3],
    keypoints: &[(String, Vec3)],
) -> GlossParams {
    let mut params = model.neutral_params();
    let rest = model.merged_vertices(&params);
    let shift = median_point(scan) - median_point(&rest);
    for p in &mut params.parts {
        p.location += shift;
    }
    let pairs: Vec<(Vec3, Vec3)> = keypoints
        .iter()
        .filter_map(|(name, y)| {
            let pv = model.template.keypoint(name)?;
            let part = &model.template.parts[pv.part];
            Some((part.rest[pv.local] + part.centroid + shift, *y))
        })
        .collect();
    if pairs.len() >= 3 {
        let (src, dst): (Vec<Vec3>, Vec<Vec3>) = pairs.into_iter().unzip();
        let (rot, t) = procrustes(&src, &dst);
        let r = matrix_to_rodrigues(&rot);
        for p in &mut params.parts {
            p.location = rot * p.location + t;
            p.rodrigues = r;
        }
    }
    params
}

/// Fit the part model to a scan, alternating correspondence refreshes and
/// L-BFGS solves.
pub fn fit_gloss(
    model: &GlossModel,
    scan: &Mesh,
    keypoints: &[(String, Vec3)],
    config: &GlossFitConfig,
) -> Result<GlossFit> {
    fit_gloss_from(
        model,
        scan,
        keypoints,
        config,
        initial_params(model, &scan.vertices, keypoints),
    )
}

pub fn fit_gloss_from(
    model: &GlossModel,
    scan: &Mesh,
    keypoints: &[(String, Vec3)],
    config: &GlossFitConfig,
    init: GlossParams,
) -> Result<GlossFit> {
    config.solver.validate()?;
    let mut x = model.layout.flatten(&init)?;
    let mut problem = GlossProblem::new(model, &scan.vertices, keypoints, config.weights)?;
    let scales = variable_scales(model);
    let mut round_energies = Vec::with_capacity(config.rounds);
    for round in 0..config.rounds.max(1) {
        problem.refresh(&x);
        let scaled = Scaled::new(&problem, scales.clone());
        let min = minimize(&scaled, &scaled.to_scaled(&x), &config.solver)
            .map_err(|e| e.context(format!("part-model round {round}")))?;
        let min_x = scaled.to_original(&min.x);
        log::debug!(
            "part-model round {round}: energy {:.6e} after {} iterations ({:?})",
            min.value,
            min.iterations,
            min.termination
        );
        x = min_x;
        round_energies.push(min.value);
    }
    let terms = problem.evaluate_terms(&x, None);
    let params = model.layout.unflatten(&x)?;
    let mesh = merge_parts(model, &params)?;
    Ok(GlossFit {
        params,
        mesh,
        terms,
        round_energies,
    })
}

/// Articulated pose `(theta, gamma)` equivalent to the part rotations: the
/// root takes its absolute rotation, every other part the rotation relative
/// to its parent.
pub fn params_to_pose(
    model: &GlossModel,
    params: &GlossParams,
    joints: &[Vec3],
) -> (Vec<f64>, Vec3) {
    let rots: Vec<_> = params
        .parts
        .iter()
        .map(|p| crate::mesh::rodrigues_to_matrix(&p.rodrigues))
        .collect();
    let mut theta = vec![0.0; 3 * rots.len()];
    let mut gamma = Vec3::zeros();
    for (k, parent) in model.template.parents.iter().enumerate() {
        let r = match parent {
            None => {
                let root = &params.parts[k];
                let c = model.template.parts[k].centroid;
                gamma = root.location + rots[k] * (joints[k] - c) - joints[k];
                root.rodrigues
            }
            Some(p) => matrix_to_rodrigues(&(rots[*p].transpose() * rots[k])),
        };
        theta[3 * k..3 * k + 3].copy_from_slice(r.as_slice());
    }
    (theta, gamma)
}

#[cfg(test)]
mod tests;
