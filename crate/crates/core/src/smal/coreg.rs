//! Alternating registration and model building.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{fit_smal_to_scan, SmalFitConfig, SmalParams};
use super::normalize::{pose_normalize, symmetrize};
use super::shape_space::{build_shape_space, ShapeSpace};
use super::SmalModel;
use crate::arap::{refine, ArapConfig, ArapProblem, Coupling, Refinement};
use crate::mesh::spatial::mean_distance_to_surface;
use crate::mesh::{laplacian_smooth, Mesh, Vec3};
use crate::{Error, Result};

/// One scan with its keypoints and an optional starting pose.
#[derive(Debug, Clone)]
pub struct Target {
    pub id: String,
    pub scan: Mesh,
    pub keypoints: Vec<(String, Vec3)>,
    pub init: Option<SmalParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoregConfig {
    pub rounds: usize,
    pub fit: SmalFitConfig,
    pub arap: ArapConfig,
    /// Weight of the L1 attachment of each registration to its model fit.
    pub coupling_weight: f64,
    /// Upper bound on shape components when rebuilding the model.
    pub max_components: usize,
    pub smooth_iterations: usize,
    pub smooth_step: f64,
    /// Stop early once the mean vertex motion of a round falls below this
    /// fraction of the mean scan diagonal.
    pub convergence: f64,
}

impl Default for CoregConfig {
    fn default() -> Self {
        Self {
            rounds: 4,
            fit: SmalFitConfig::default(),
            arap: ArapConfig::default(),
            coupling_weight: 1e-3,
            max_components: 30,
            smooth_iterations: 2,
            smooth_step: 0.5,
            convergence: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoregRound {
    /// Model fit per scan.
    pub fits: Vec<SmalParams>,
    pub refinements: Vec<Refinement>,
    /// Mean scan-to-registration distance per scan.
    pub distances: Vec<f64>,
    pub mean_distance: f64,
    /// Mean vertex displacement of the registrations during this round.
    pub motion: f64,
}

#[derive(Debug, Clone)]
pub struct CoregResult {
    pub model: SmalModel,
    pub registrations: Vec<Mesh>,
    /// Pose-normalized, symmetrized and smoothed registrations behind `model`.
    pub neutrals: Vec<Mesh>,
    pub initial_distance: f64,
    pub rounds: Vec<CoregRound>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Shape space from neutral meshes; a single mesh yields a mean-only space.
pub fn rebuild_shape_space(neutrals: &[Mesh], max_components: usize) -> Result<ShapeSpace> {
    if neutrals.len() == 1 {
        let mean = nalgebra::DVector::from_vec(super::shape_space::stack(&neutrals[0].vertices));
        let rows = mean.len();
        return Ok(ShapeSpace {
            mean,
            basis: nalgebra::DMatrix::zeros(rows, 0),
            eigenvalues: Vec::new(),
        });
    }
    let v = neutrals.first().map_or(0, |m| m.vertex_count());
    let n = max_components.min(neutrals.len() - 1).min(3 * v);
    build_shape_space(neutrals, n)
}

/// Run `config.rounds` rounds of: model fit per scan, coupled ARAP
/// refinement of the previous registration, then pose normalization,
/// symmetrization, smoothing and a shape-space rebuild.
pub fn coregister(
    model: &SmalModel,
    targets: &[Target],
    initial: &[Mesh],
    config: &CoregConfig,
) -> Result<CoregResult> {
    if targets.is_empty() {
        return Err(Error::Empty("target list"));
    }
    if initial.len() != targets.len() {
        return Err(Error::Dimension {
            what: "initial registrations",
            expected: targets.len(),
            got: initial.len(),
        });
    }
    let rig = &model.rig;
    let scan_diag = mean(
        &targets
            .iter()
            .map(|t| t.scan.bbox_diagonal())
            .collect::<Vec<_>>(),
    );
    let mut model = model.clone();
    let mut registrations: Vec<Mesh> = initial.to_vec();
    let mut params: Vec<Option<SmalParams>> = targets.iter().map(|t| t.init.clone()).collect();
    let mut neutrals = Vec::new();
    let initial_distance = mean(
        &targets
            .par_iter()
            .zip(initial.par_iter())
            .map(|(t, r)| mean_distance_to_surface(&t.scan.vertices, r))
            .collect::<Vec<_>>(),
    );
    let mut rounds = Vec::with_capacity(config.rounds);

    for round in 0..config.rounds {
        let per_scan: Vec<(SmalParams, Refinement, Mesh)> = targets
            .par_iter()
            .zip(registrations.par_iter())
            .zip(params.par_iter())
            .map(|((t, prev), init)| {
                run_scan(&model, t, prev, init.as_ref(), config)
                    .map_err(|e| e.context(format!("round {round}, scan `{}`", t.id)))
            })
            .collect::<Result<_>>()?;

        let mut fits = Vec::with_capacity(targets.len());
        let mut refinements = Vec::with_capacity(targets.len());
        let mut round_neutrals = Vec::with_capacity(targets.len());
        for (fit, refinement, neutral) in per_scan {
            fits.push(fit);
            refinements.push(refinement);
            round_neutrals.push(neutral);
        }
        let distances: Vec<f64> = targets
            .par_iter()
            .zip(refinements.par_iter())
            .map(|(t, r)| mean_distance_to_surface(&t.scan.vertices, &r.mesh))
            .collect();
        let motion = mean(
            &registrations
                .iter()
                .zip(&refinements)
                .flat_map(|(a, b)| {
                    a.vertices
                        .iter()
                        .zip(&b.mesh.vertices)
                        .map(|(p, q)| (p - q).norm())
                })
                .collect::<Vec<_>>(),
        );
        let mean_distance = mean(&distances);
        log::info!("co-registration round {round}: mean scan-to-mesh distance {mean_distance:.6e}, motion {motion:.3e}");

        let space = rebuild_shape_space(&round_neutrals, config.max_components)
            .map_err(|e| e.context(format!("round {round}, model rebuild")))?;
        let next = SmalModel::new(
            space,
            rig.clone(),
            model.pose_prior.clone(),
            model.pose_limits.clone(),
        )?;
        for (p, (fit, mesh)) in params.iter_mut().zip(fits.iter().zip(&round_neutrals)) {
            let beta = next.shape_space.project(&mesh.vertices, next.shape_dim())?;
            *p = Some(SmalParams {
                beta,
                theta: fit.theta.clone(),
                gamma: fit.gamma,
            });
        }
        model = next;
        registrations = refinements.iter().map(|r| r.mesh.clone()).collect();
        neutrals = round_neutrals;
        rounds.push(CoregRound {
            fits,
            refinements,
            distances,
            mean_distance,
            motion,
        });
        if motion < config.convergence * scan_diag {
            break;
        }
    }
    Ok(CoregResult {
        model,
        registrations,
        neutrals,
        initial_distance,
        rounds,
    })
}

fn run_scan(
    model: &SmalModel,
    target: &Target,
    previous: &Mesh,
    init: Option<&SmalParams>,
    config: &CoregConfig,
) -> Result<(SmalParams, Refinement, Mesh)> {
    let rig = &model.rig;
    let fit = fit_smal_to_scan(model, &target.scan, &target.keypoints, &config.fit, init)?;
    let keypoints = target
        .keypoints
        .iter()
        .map(|(name, y)| {
            rig.scan_keypoints
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| (*v, *y))
                .ok_or_else(|| Error::MissingKeypoint(name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let coupling = (config.coupling_weight > 0.0).then(|| Coupling {
        target: fit.mesh.vertices.clone(),
        weight: config.coupling_weight,
    });
    let refinement = refine(
        &ArapProblem {
            initial: previous,
            scan: &target.scan,
            keypoints,
            coupling,
        },
        &config.arap,
    )?;
    let unposed = pose_normalize(
        rig,
        &refinement.mesh.vertices,
        &fit.params.theta,
        &fit.params.gamma,
    )?;
    let symmetric = symmetrize(&rig.mesh(unposed)?, &rig.pairing)?;
    let neutral = laplacian_smooth(&symmetric, config.smooth_iterations, config.smooth_step)?;
    Ok((fit.params, refinement, neutral))
}
