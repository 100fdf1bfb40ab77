//! Fitting the model to a 3D scan.

use serde::{Deserialize, Serialize};

use super::{backward, forward, SmalModel};
use crate::linalg::procrustes;
use crate::mesh::rotation::matrix_to_rodrigues;
use crate::mesh::spatial::PointIndex;
use crate::mesh::{bounding_box, median_point, Mesh, Vec3};
use crate::optim::{minimize, GemanMcClure, Objective, Scaled, SolverConfig};
use crate::{Error, Result};

/// Shape coefficients, joint rotations and root translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmalParams {
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
    pub gamma: Vec3,
}

impl SmalParams {
    pub fn zeros(shape_dim: usize, joint_count: usize) -> Self {
        Self {
            beta: vec![0.0; shape_dim],
            theta: vec![0.0; 3 * joint_count],
            gamma: Vec3::zeros(),
        }
    }

    fn flatten(&self) -> Vec<f64> {
        let mut x = self.beta.clone();
        x.extend_from_slice(&self.theta);
        x.extend_from_slice(self.gamma.as_slice());
        x
    }

    fn unflatten(x: &[f64], shape_dim: usize) -> Self {
        let n = x.len();
        Self {
            beta: x[..shape_dim].to_vec(),
            theta: x[shape_dim..n - 3].to_vec(),
            gamma: Vec3::new(x[n - 3], x[n - 2], x[n - 1]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmalFitWeights {
    pub pose: f64,
    pub shape: f64,
    pub keypoint: f64,
    pub model_to_scan: f64,
    pub scan_to_model: f64,
    /// Robust scale as a fraction of the scan bounding-box diagonal.
    pub sigma_fraction: f64,
}

impl Default for SmalFitWeights {
    fn default() -> Self {
        Self {
            pose: 1e-3,
            shape: 1e-3,
            keypoint: 10.0,
            model_to_scan: 1.0,
            scan_to_model: 1.0,
            sigma_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmalFitConfig {
    pub weights: SmalFitWeights,
    /// Nearest-neighbour refreshes, each followed by a full solve.
    pub rounds: usize,
    pub solver: SolverConfig,
    /// Number of leading shape components to fit; `None` uses all.
    pub shape_components: Option<usize>,
    /// Shape prior from `model.families`; `None` uses the global PCA prior.
    pub family: Option<String>,
}

impl Default for SmalFitConfig {
    fn default() -> Self {
        Self {
            weights: SmalFitWeights::default(),
            rounds: 3,
            solver: SolverConfig::default().with_max_iterations(300),
            shape_components: None,
            family: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SmalFit {
    pub params: SmalParams,
    /// Posed model surface.
    pub mesh: Mesh,
    pub energy: f64,
    pub round_energies: Vec<f64>,
}

/// Energy of the model against one scan with frozen correspondences.
pub struct ScanProblem<'a> {
    model: &'a SmalModel,
    scan: &'a [Vec3],
    keypoints: Vec<(usize, Vec3)>,
    weights: SmalFitWeights,
    robust: GemanMcClure,
    n_beta: usize,
    family: Option<&'a super::FamilyPrior>,
    shape_precision: Vec<f64>,
    /// Closest scan point per model vertex.
    m2s: Vec<usize>,
    /// Closest model vertex per scan point.
    s2m: Vec<usize>,
}

impl<'a> ScanProblem<'a> {
    fn posed(&self, p: &SmalParams) -> Vec<Vec3> {
        forward(self.model, &p.beta, &p.theta, &p.gamma)
            .expect("checked dimension")
            .vertices
    }

    /// Recompute nearest-neighbour correspondences at `x`.
    pub fn refresh(&mut self, x: &[f64]) {
        let posed = self.posed(&SmalParams::unflatten(x, self.n_beta));
        let scan_index = PointIndex::new(self.scan);
        self.m2s = posed.iter().map(|v| scan_index.nearest(v).0).collect();
        let model_index = PointIndex::new(&posed);
        self.s2m = self.scan.iter().map(|s| model_index.nearest(s).0).collect();
    }
}

impl Objective for ScanProblem<'_> {
    fn dimension(&self) -> usize {
        self.n_beta + self.model.rig.tree.joint_count() * 3 + 3
    }

    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let w = &self.weights;
        let p = SmalParams::unflatten(x, self.n_beta);
        let posed_state =
            forward(self.model, &p.beta, &p.theta, &p.gamma).expect("checked dimension");
        let posed = &posed_state.vertices;

        let mut value = 0.0;
        let mut g_posed = vec![Vec3::zeros(); posed.len()];
        for &(v, y) in &self.keypoints {
            let r = posed[v] - y;
            value += w.keypoint * r.norm_squared();
            g_posed[v] += r * (2.0 * w.keypoint);
        }
        if w.model_to_scan > 0.0 {
            for (i, &j) in self.m2s.iter().enumerate() {
                let r = posed[i] - self.scan[j];
                let (rho, d) = self.robust.eval(r.norm_squared());
                value += w.model_to_scan * rho;
                g_posed[i] += r * (2.0 * w.model_to_scan * d);
            }
        }
        if w.scan_to_model > 0.0 {
            for (s, &i) in self.scan.iter().zip(&self.s2m) {
                let r = posed[i] - s;
                let (rho, d) = self.robust.eval(r.norm_squared());
                value += w.scan_to_model * rho;
                g_posed[i] += r * (2.0 * w.scan_to_model * d);
            }
        }

        let (mut g_beta, mut g_theta, g_gamma) =
            backward(self.model, &posed_state, &g_posed, self.n_beta);

        let (pose_e, pose_g) = self.model.pose_prior.mahalanobis(&p.theta);
        value += w.pose * pose_e;
        for (g, pg) in g_theta.iter_mut().zip(&pose_g) {
            *g += w.pose * pg;
        }
        match self.family {
            Some(f) => {
                let mut beta = f.gaussian.mean.as_slice().to_vec();
                beta[..self.n_beta].copy_from_slice(&p.beta);
                let (e, g) = f.gaussian.mahalanobis(&beta);
                value += w.shape * e;
                for (gb, g) in g_beta.iter_mut().zip(&g) {
                    *gb += w.shape * g;
                }
            }
            None => {
                for ((gb, b), prec) in g_beta.iter_mut().zip(&p.beta).zip(&self.shape_precision) {
                    value += w.shape * b * b * prec;
                    *gb += 2.0 * w.shape * b * prec;
                }
            }
        }

        grad[..self.n_beta].copy_from_slice(&g_beta);
        let n = x.len();
        grad[self.n_beta..n - 3].copy_from_slice(&g_theta);
        grad[n - 3..].copy_from_slice(g_gamma.as_slice());
        value
    }
}

/// Resolve named scan keypoints to model vertices.
fn keypoint_vertices(
    model: &SmalModel,
    keypoints: &[(String, Vec3)],
) -> Result<Vec<(usize, Vec3)>> {
    keypoints
        .iter()
        .map(|(name, y)| {
            model
                .rig
                .scan_keypoints
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| (*v, *y))
                .ok_or_else(|| Error::MissingKeypoint(name.clone()))
        })
        .collect()
}

/// Default starting point: mean shape, rest pose, and either a median shift or,
/// with three or more keypoints, a rigid root alignment to them.
pub fn initial_smal_params(
    model: &SmalModel,
    scan: &[Vec3],
    keypoints: &[(String, Vec3)],
) -> Result<SmalParams> {
    let mut p = SmalParams::zeros(model.shape_dim(), model.joint_count());
    let mean = model.shape_space.mean_vertices();
    let kps = keypoint_vertices(model, keypoints)?;
    if kps.len() >= 3 {
        let src: Vec<Vec3> = kps.iter().map(|(v, _)| mean[*v]).collect();
        let dst: Vec<Vec3> = kps.iter().map(|(_, y)| *y).collect();
        let (rot, t) = procrustes(&src, &dst);
        let root = model.rig.tree.root();
        let j_root = model.rig.joints(&mean)[root];
        p.theta[3 * root..3 * root + 3].copy_from_slice(matrix_to_rodrigues(&rot).as_slice());
        p.gamma = t + rot * j_root - j_root;
    } else {
        p.gamma = median_point(scan) - median_point(&mean);
    }
    Ok(p)
}

fn shape_floor(eigenvalues: &[f64]) -> f64 {
    eigenvalues
        .first()
        .copied()
        .unwrap_or(1.0)
        .max(f64::MIN_POSITIVE)
        * 1e-9
}

impl<'a> ScanProblem<'a> {
    /// Problem over the flat `[β, θ, γ]` vector; call [`ScanProblem::refresh`]
    /// before evaluating.
    pub fn new(
        model: &'a SmalModel,
        scan: &'a Mesh,
        keypoints: &[(String, Vec3)],
        config: &'a SmalFitConfig,
    ) -> Result<Self> {
        if scan.vertices.is_empty() {
            return Err(Error::Empty("scan"));
        }
        let mut n_beta = config
            .shape_components
            .unwrap_or(model.shape_dim())
            .min(model.shape_dim());
        let family = match &config.family {
            Some(name) => Some(model.families.get(name).ok_or_else(|| {
                Error::InvalidArgument(format!("model has no family prior `{name}`"))
            })?),
            None => None,
        };
        if let Some(f) = family {
            n_beta = n_beta.min(f.gaussian.dim());
        }
        let eig = &model.shape_space.eigenvalues;
        let floor = shape_floor(eig);
        let (lo, hi) = bounding_box(&scan.vertices);
        Ok(Self {
            model,
            scan: &scan.vertices,
            keypoints: keypoint_vertices(model, keypoints)?,
            weights: config.weights,
            robust: GemanMcClure::new(config.weights.sigma_fraction * (hi - lo).norm())?,
            n_beta,
            family,
            shape_precision: eig
                .iter()
                .take(n_beta)
                .map(|e| 1.0 / e.max(floor))
                .collect(),
            m2s: Vec::new(),
            s2m: Vec::new(),
        })
    }
}

/// Energy and gradient over the flat `[β, θ, γ]` vector at `params`, with
/// correspondences computed there.
pub fn smal_scan_energy(
    model: &SmalModel,
    scan: &Mesh,
    keypoints: &[(String, Vec3)],
    config: &SmalFitConfig,
    params: &SmalParams,
) -> Result<(f64, Vec<f64>)> {
    let mut problem = ScanProblem::new(model, scan, keypoints, config)?;
    model.rig.check_pose(&params.theta)?;
    let mut p = params.clone();
    p.beta.resize(problem.n_beta, 0.0);
    let x = p.flatten();
    problem.refresh(&x);
    let mut g = vec![0.0; x.len()];
    let v = problem.evaluate(&x, &mut g);
    Ok((v, g))
}

/// Minimize pose prior + shape prior + keypoint and robust bidirectional
/// surface terms over `(β, θ, γ)`, refreshing nearest neighbours between
/// solves.
pub fn fit_smal_to_scan(
    model: &SmalModel,
    scan: &Mesh,
    keypoints: &[(String, Vec3)],
    config: &SmalFitConfig,
    init: Option<&SmalParams>,
) -> Result<SmalFit> {
    config.solver.validate()?;
    let mut problem = ScanProblem::new(model, scan, keypoints, config)?;
    let n_beta = problem.n_beta;
    let mut start = match init {
        Some(p) => p.clone(),
        None => initial_smal_params(model, &scan.vertices, keypoints)?,
    };
    model.rig.check_pose(&start.theta)?;
    start.beta.resize(n_beta, 0.0);
    let mut x = start.flatten();

    // Shape coefficients are solved in units of their standard deviation.
    let floor = shape_floor(&model.shape_space.eigenvalues);
    let mut scales = vec![1.0; x.len()];
    for (s, e) in scales
        .iter_mut()
        .zip(&model.shape_space.eigenvalues[..n_beta])
    {
        *s = e.max(floor).sqrt();
    }
    let mut round_energies = Vec::new();
    for round in 0..config.rounds.max(1) {
        problem.refresh(&x);
        let scaled = Scaled::new(&problem, scales.clone());
        let min = minimize(&scaled, &scaled.to_scaled(&x), &config.solver)
            .map_err(|e| e.context(format!("model fit round {round}")))?;
        x = scaled.to_original(&min.x);
        log::debug!(
            "model fit round {round}: energy {:.6e} after {} iterations",
            min.value,
            min.iterations
        );
        round_energies.push(min.value);
    }
    let mut params = SmalParams::unflatten(&x, n_beta);
    let energy = *round_energies.last().expect("at least one round");
    let mesh = model.rig.mesh(problem.posed(&params))?;
    params.beta.resize(model.shape_dim(), 0.0);
    Ok(SmalFit {
        params,
        mesh,
        energy,
        round_energies,
    })
}
