//! Staged fit of the model to one image.

use serde::{Deserialize, Serialize};

use super::camera::{project, Camera, Vec2};
use super::energy::{
    projection_backward, reference_scale, silhouette_energy, EdgeFaces, FitParams,
    ImageObservation, KeypointTargets, SilhouetteTarget,
};
use super::raster::render_silhouette;
use crate::mesh::rotation::{matrix_to_rodrigues, rodrigues_to_matrix};
use crate::mesh::Vec3;
use crate::optim::{minimize, GemanMcClure, Objective, SolverConfig, Termination};
use crate::smal::{backward, forward, smal_instance, Gaussian, SmalModel};
use crate::synth::TORSO_KEYPOINTS;
use crate::{Error, Result};

/// Minimum number of visible keypoints for a fit.
pub const MIN_KEYPOINTS: usize = 6;
/// Minimum number of visible torso keypoints for a fit.
pub const MIN_TORSO_KEYPOINTS: usize = 2;
/// Eigenvalues below this fraction of the largest are not fitted.
const EIGENVALUE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageFitWeights {
    pub keypoint: f64,
    pub silhouette: f64,
    /// Shape prior weight of the first stage.
    pub shape: f64,
    /// Pose prior weight of the first stage.
    pub pose: f64,
    pub limit: f64,
}

impl Default for ImageFitWeights {
    fn default() -> Self {
        Self {
            keypoint: 1.0,
            silhouette: 100.0,
            shape: 1.0,
            pose: 1.0,
            limit: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageFitConfig {
    pub weights: ImageFitWeights,
    /// Keypoint kernel width in reference pixels.
    pub keypoint_sigma: f64,
    /// Silhouette coverage kernel width in reference pixels.
    pub silhouette_sigma: f64,
    /// Number of prior-decay stages.
    pub stages: usize,
    /// Factor applied to the prior weights after each stage.
    pub prior_decay: f64,
    /// Pyramid levels of the silhouette stage; 0 disables it.
    pub pyramid_levels: usize,
    /// Initial focal length in pixels; defaults to [`default_focal`].
    pub focal: Option<f64>,
    /// Root orientations tried when solving the global rotation.
    pub yaw_starts: usize,
    /// Cap on fitted shape coefficients.
    pub shape_components: Option<usize>,
    /// Family whose shape prior replaces the generic one.
    pub family: Option<String>,
    /// Weight of the focal and translation anchor; `None` calibrates it so
    /// a 10% focal change costs as much as a 5 pixel mean keypoint error.
    pub anchor_weight: Option<f64>,
    pub solver: SolverConfig,
}

impl Default for ImageFitConfig {
    fn default() -> Self {
        Self {
            weights: ImageFitWeights::default(),
            keypoint_sigma: 50.0,
            silhouette_sigma: 10.0,
            stages: 3,
            prior_decay: 0.25,
            pyramid_levels: 3,
            focal: None,
            yaw_starts: 8,
            shape_components: None,
            family: None,
            anchor_weight: None,
            solver: SolverConfig::default()
                .with_max_iterations(1000)
                .with_value_tolerance(1e-9),
        }
    }
}

/// Focal length used when none is given: 1.5 times the larger image side.
pub fn default_focal(resolution: [usize; 2]) -> f64 {
    1.5 * resolution[0].max(resolution[1]) as f64
}

/// Unweighted energy terms and the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyTerms {
    pub keypoint: f64,
    pub silhouette: f64,
    pub shape: f64,
    pub pose: f64,
    pub limit: f64,
    pub anchor: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Largest parameter change during the stage.
    pub motion: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageFit {
    pub params: FitParams,
    /// Terms at the final parameters under the last stage's weights.
    pub terms: EnergyTerms,
    /// Mean distance of visible keypoints from their projected model points.
    pub keypoint_error: f64,
    /// Intersection over union of the fitted and target silhouettes.
    pub iou: f64,
    pub stages: Vec<StageReport>,
}

struct ShapePrior {
    gaussian: Option<Gaussian>,
    /// Per-coefficient standard deviation used for variable scaling.
    scale: Vec<f64>,
}

impl ShapePrior {
    fn new(model: &SmalModel, config: &ImageFitConfig) -> Result<Self> {
        let eig = &model.shape_space.eigenvalues;
        if let Some(name) = &config.family {
            let family = model
                .families
                .get(name)
                .ok_or_else(|| Error::InvalidArgument(format!("model has no family `{name}`")))?;
            let g = family.gaussian.clone();
            let scale = (0..g.dim())
                .map(|i| g.covariance[(i, i)].sqrt().max(1e-12))
                .collect();
            return Ok(Self {
                gaussian: Some(g),
                scale,
            });
        }
        let top = eig.first().copied().unwrap_or(0.0);
        let n = eig
            .iter()
            .take(config.shape_components.unwrap_or(usize::MAX))
            .take_while(|&&l| l > EIGENVALUE_FLOOR * top)
            .count();
        Ok(Self {
            gaussian: None,
            scale: eig[..n].iter().map(|l| l.sqrt()).collect(),
        })
    }

    fn dim(&self) -> usize {
        self.scale.len()
    }

    fn energy(&self, beta: &[f64]) -> (f64, Vec<f64>) {
        match &self.gaussian {
            Some(g) => g.mahalanobis(beta),
            None => {
                let mut grad = vec![0.0; beta.len()];
                let mut value = 0.0;
                for (i, (b, s)) in beta.iter().zip(&self.scale).enumerate() {
                    let l = s * s;
                    value += b * b / l;
                    grad[i] = 2.0 * b / l;
                }
                (value, grad)
            }
        }
    }
}

/// Stage weights, already decayed.
#[derive(Debug, Clone, Copy)]
struct StageWeights {
    keypoint: f64,
    silhouette: f64,
    shape: f64,
    pose: f64,
    limit: f64,
    anchor: f64,
}

struct Anchor {
    focal: f64,
    gamma: Vec3,
    depth: f64,
}

struct Level {
    target: SilhouetteTarget,
    factor: usize,
}

/// The full image energy over a subset of variables, in scaled units.
struct ImageProblem<'a> {
    model: &'a SmalModel,
    n_beta: usize,
    shape: &'a ShapePrior,
    keypoints: &'a KeypointTargets,
    kernel: GemanMcClure,
    unit: f64,
    resolution: [usize; 2],
    edges: &'a EdgeFaces,
    level: Option<&'a Level>,
    anchor: Option<&'a Anchor>,
    weights: StageWeights,
    base: Vec<f64>,
    scale: Vec<f64>,
    active: Vec<usize>,
}

impl ImageProblem<'_> {
    fn full(&self, y: &[f64]) -> Vec<f64> {
        let mut x = self.base.clone();
        for (k, &i) in self.active.iter().enumerate() {
            x[i] = y[k] * self.scale[i];
        }
        x
    }

    fn start(&self) -> Vec<f64> {
        self.active
            .iter()
            .map(|&i| self.base[i] / self.scale[i])
            .collect()
    }

    /// Terms and the gradient over the full parameter vector.
    fn terms(&self, x: &[f64]) -> Result<(EnergyTerms, Vec<f64>)> {
        let p = FitParams::unflatten(x, self.n_beta);
        if !(p.focal > 0.0) {
            return Err(Error::InvalidArgument("non-positive focal length".into()));
        }
        let w = self.weights;
        let posed = forward(self.model, &p.beta, &p.theta, &p.gamma)?;
        let camera = Camera::centered(p.focal, self.resolution[0], self.resolution[1]);
        let projected = project(&posed.vertices, camera.focal, camera.principal())?;
        let mut grad2 = vec![Vec2::zeros(); projected.len()];
        let mut t = EnergyTerms {
            keypoint: self
                .keypoints
                .energy(&projected, &self.kernel, self.unit, &mut grad2),
            ..Default::default()
        };
        grad2.iter_mut().for_each(|g| *g *= w.keypoint);

        if let Some(level) = self.level {
            let s = level.factor as f64;
            let cam = camera.scaled(level.factor);
            let lp: Vec<Vec2> = projected.iter().map(|q| q / s).collect();
            let mut g_level = vec![Vec2::zeros(); lp.len()];
            let parts = silhouette_energy(
                &posed.vertices,
                &lp,
                &self.model.rig.faces,
                self.edges,
                &cam,
                &level.target,
                &mut g_level,
            )?;
            t.silhouette = parts.consistency + parts.coverage;
            for (g, gl) in grad2.iter_mut().zip(&g_level) {
                *g += gl * (w.silhouette / s);
            }
        }

        let (g3, g_f) = projection_backward(&posed.vertices, p.focal, &grad2);
        let (mut g_beta, mut g_theta, mut g_gamma) = backward(self.model, &posed, &g3, self.n_beta);
        let mut g_focal = g_f;

        let (shape_e, shape_g) = self.shape.energy(&p.beta);
        t.shape = shape_e;
        for (g, s) in g_beta.iter_mut().zip(&shape_g) {
            *g += w.shape * s;
        }
        let (pose_e, pose_g) = self.model.pose_prior.mahalanobis(&p.theta);
        let (lim_e, lim_g) = self.model.pose_limits.hinge(&p.theta);
        t.pose = pose_e;
        t.limit = lim_e;
        for ((g, a), b) in g_theta.iter_mut().zip(&pose_g).zip(&lim_g) {
            *g += w.pose * a + w.limit * b;
        }
        if let Some(a) = self.anchor {
            let df = (p.focal - a.focal) / a.focal;
            let dg = (p.gamma - a.gamma) / a.depth;
            t.anchor = df * df + dg.norm_squared();
            g_focal += w.anchor * 2.0 * df / a.focal;
            g_gamma += dg * (w.anchor * 2.0 / a.depth);
        }
        t.total = w.keypoint * t.keypoint
            + w.silhouette * t.silhouette
            + w.shape * t.shape
            + w.pose * t.pose
            + w.limit * t.limit
            + w.anchor * t.anchor;

        let mut grad = g_beta;
        grad.extend(g_theta);
        grad.extend_from_slice(g_gamma.as_slice());
        grad.push(g_focal);
        Ok((t, grad))
    }
}

impl Objective for ImageProblem<'_> {
    fn dimension(&self) -> usize {
        self.active.len()
    }

    fn evaluate(&self, y: &[f64], grad: &mut [f64]) -> f64 {
        let x = self.full(y);
        match self.terms(&x) {
            Ok((t, g)) => {
                for (k, &i) in self.active.iter().enumerate() {
                    grad[k] = g[i] * self.scale[i];
                }
                t.total
            }
            Err(_) => {
                grad.iter_mut().for_each(|g| *g = 0.0);
                f64::INFINITY
            }
        }
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Everything shared by the stages of one fit.
struct Session<'a> {
    model: &'a SmalModel,
    obs: &'a ImageObservation,
    config: &'a ImageFitConfig,
    shape: ShapePrior,
    all: KeypointTargets,
    torso: KeypointTargets,
    edges: EdgeFaces,
    unit: f64,
    scale: Vec<f64>,
    stages: Vec<StageReport>,
}

impl<'a> Session<'a> {
    fn new(
        model: &'a SmalModel,
        obs: &'a ImageObservation,
        config: &'a ImageFitConfig,
    ) -> Result<Self> {
        obs.validate()?;
        let map = &model.rig.image_keypoints;
        let all = KeypointTargets::new(obs, map, None)?;
        let torso = KeypointTargets::new(obs, map, Some(&TORSO_KEYPOINTS))
            .map_err(|_| Error::InvalidArgument("no torso keypoint is visible".into()))?;
        if all.len() < MIN_KEYPOINTS || torso.len() < MIN_TORSO_KEYPOINTS {
            return Err(Error::InvalidArgument(format!(
                "need at least {MIN_KEYPOINTS} visible keypoints including {MIN_TORSO_KEYPOINTS} torso points, got {} with {} torso points",
                all.len(),
                torso.len()
            )));
        }
        let shape = ShapePrior::new(model, config)?;
        let size = model
            .rig
            .mesh(model.shape_space.mean_vertices())?
            .bbox_diagonal();
        let mut scale = shape.scale.clone();
        scale.extend(std::iter::repeat_n(1.0, 3 * model.joint_count()));
        scale.extend([size; 3]);
        scale.push(
            config
                .focal
                .unwrap_or_else(|| default_focal(obs.resolution)),
        );
        Ok(Self {
            model,
            obs,
            config,
            shape,
            all,
            torso,
            edges: EdgeFaces::new(&model.rig.faces),
            unit: reference_scale(obs.resolution),
            scale,
            stages: Vec::new(),
        })
    }

    fn n_beta(&self) -> usize {
        self.shape.dim()
    }

    fn weights(&self, prior_factor: f64, silhouette: bool, anchor: f64) -> StageWeights {
        let w = &self.config.weights;
        StageWeights {
            keypoint: w.keypoint,
            silhouette: if silhouette { w.silhouette } else { 0.0 },
            shape: w.shape * prior_factor,
            pose: w.pose * prior_factor,
            limit: w.limit,
            anchor,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn problem<'b>(
        &'b self,
        keypoints: &'b KeypointTargets,
        x: &[f64],
        active: Vec<usize>,
        weights: StageWeights,
        level: Option<&'b Level>,
        anchor: Option<&'b Anchor>,
    ) -> ImageProblem<'b> {
        ImageProblem {
            model: self.model,
            n_beta: self.n_beta(),
            shape: &self.shape,
            keypoints,
            kernel: GemanMcClure::new(self.config.keypoint_sigma).expect("validated sigma"),
            unit: self.unit,
            resolution: self.obs.resolution,
            edges: &self.edges,
            level,
            anchor,
            weights,
            base: x.to_vec(),
            scale: self.scale.clone(),
            active,
        }
    }

    fn run(&self, name: String, problem: &ImageProblem) -> Result<(Vec<f64>, StageReport)> {
        let y0 = problem.start();
        let initial_energy = problem.value(&y0);
        if !initial_energy.is_finite() {
            let err = problem.terms(&problem.base).err();
            return Err(Error::Solver(format!(
                "stage `{name}` starts at an infeasible point: {}",
                err.map_or_else(|| "non-finite energy".to_string(), |e| e.to_string())
            )));
        }
        let m = minimize(problem, &y0, &self.config.solver)
            .map_err(|e| e.context(format!("stage `{name}`")))?;
        let x = problem.full(&m.x);
        let motion = x
            .iter()
            .zip(&problem.base)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        log::info!(
            "image fit stage {name}: energy {initial_energy:.6e} -> {:.6e} in {} iterations ({:?})",
            m.value,
            m.iterations,
            m.termination
        );
        let report = StageReport {
            name,
            initial_energy,
            final_energy: m.value,
            iterations: m.iterations,
            termination: m.termination,
            motion,
        };
        Ok((x, report))
    }

    fn layout(&self) -> (usize, usize, usize) {
        let nb = self.n_beta();
        let nt = 3 * self.model.joint_count();
        (nb, nb + nt, nb + nt + 3)
    }

    /// Initial translation: depth from the ratio of 3D to 2D torso keypoint
    /// spreads, lateral position from the torso keypoint centroid.
    fn initial_translation(&self, rotation: &nalgebra::Matrix3<f64>, focal: f64) -> Vec3 {
        let neutral = self.model.shape_space.mean_vertices();
        let points3: Vec<Vec3> = self
            .torso
            .entries
            .iter()
            .map(|(_, verts, _)| {
                verts.iter().fold(Vec3::zeros(), |a, &v| a + neutral[v]) / verts.len() as f64
            })
            .collect();
        let points2: Vec<Vec2> = self.torso.entries.iter().map(|e| e.2).collect();
        let mut d3 = Vec::new();
        let mut d2 = Vec::new();
        for i in 0..points3.len() {
            for j in i + 1..points3.len() {
                d3.push((points3[i] - points3[j]).norm());
                d2.push((points2[i] - points2[j]).norm());
            }
        }
        let depth = focal * median(&d3) / median(&d2).max(1e-9);
        let c3 = points3.iter().fold(Vec3::zeros(), |a, p| a + p) / points3.len() as f64;
        let c2 = points2.iter().fold(Vec2::zeros(), |a, p| a + p) / points2.len() as f64;
        let cam = Camera::centered(focal, self.obs.resolution[0], self.obs.resolution[1]);
        let off = (c2 - cam.principal()) * (depth / focal);
        Vec3::new(off.x, off.y, depth) - rotation * c3
    }

    /// Root orientation and translation from the torso keypoints, trying
    /// several starting orientations and keeping the one that best explains
    /// all keypoints.
    fn global_alignment(&mut self, focal: f64) -> Result<Vec<f64>> {
        let (nb, ng, nf) = self.layout();
        let root = self.model.rig.tree.root();
        let starts = self.config.yaw_starts.max(1);
        let mut best: Option<(f64, Vec<f64>, StageReport)> = None;
        for k in 0..starts {
            for roll in [0.0, std::f64::consts::PI] {
                let yaw = std::f64::consts::TAU * k as f64 / starts as f64;
                let rot = rodrigues_to_matrix(&Vec3::new(0.0, 0.0, roll))
                    * rodrigues_to_matrix(&Vec3::new(0.0, yaw, 0.0));
                let mut x = vec![0.0; nf + 1];
                x[nb + 3 * root..nb + 3 * root + 3]
                    .copy_from_slice(matrix_to_rodrigues(&rot).as_slice());
                let gamma = self.initial_translation(&rot, focal);
                x[ng..nf].copy_from_slice(gamma.as_slice());
                x[nf] = focal;
                let active: Vec<usize> = (nb + 3 * root..nb + 3 * root + 3).chain(ng..nf).collect();
                let weights = StageWeights {
                    keypoint: 1.0,
                    silhouette: 0.0,
                    shape: 0.0,
                    pose: 0.0,
                    limit: 0.0,
                    anchor: 0.0,
                };
                let torso = self.torso.clone();
                let problem = self.problem(&torso, &x, active, weights, None, None);
                let Ok((x, report)) = self.run("global".into(), &problem) else {
                    continue;
                };
                let check = self.problem(&self.all, &x, Vec::new(), weights, None, None);
                let Ok((t, _)) = check.terms(&x) else {
                    continue;
                };
                if best.as_ref().is_none_or(|(e, _, _)| t.keypoint < *e) {
                    best = Some((t.keypoint, x, report));
                }
            }
        }
        let (_, x, report) = best.ok_or_else(|| {
            Error::Solver("no starting orientation produced a feasible fit".into())
        })?;
        self.stages.push(report);
        Ok(x)
    }

    fn prior_stages(&mut self, mut x: Vec<f64>) -> Result<Vec<f64>> {
        let (_, _, nf) = self.layout();
        let active: Vec<usize> = (0..nf).collect();
        let all = self.all.clone();
        for s in 0..self.config.stages {
            let factor = self.config.prior_decay.powi(s as i32);
            let problem = self.problem(
                &all,
                &x,
                active.clone(),
                self.weights(factor, false, 0.0),
                None,
                None,
            );
            let (next, report) = self.run(format!("keypoints {}", s + 1), &problem)?;
            self.stages.push(report);
            x = next;
        }
        Ok(x)
    }

    fn final_prior_factor(&self) -> f64 {
        self.config
            .prior_decay
            .powi(self.config.stages.saturating_sub(1) as i32)
    }

    fn anchor_weight(&self) -> f64 {
        self.config.anchor_weight.unwrap_or_else(|| {
            let rho = GemanMcClure::new(self.config.keypoint_sigma)
                .expect("validated sigma")
                .value(25.0);
            self.config.weights.keypoint * self.all.len() as f64 * rho / 0.01
        })
    }

    fn silhouette_stages(&mut self, mut x: Vec<f64>) -> Result<Vec<f64>> {
        let (_, ng, nf) = self.layout();
        let anchor = Anchor {
            focal: x[nf],
            gamma: Vec3::new(x[ng], x[ng + 1], x[ng + 2]),
            depth: x[ng + 2].abs().max(1e-9),
        };
        let active: Vec<usize> = (0..=nf).collect();
        let weights = self.weights(self.final_prior_factor(), true, self.anchor_weight());
        let all = self.all.clone();
        for l in (0..self.config.pyramid_levels).rev() {
            let factor = 1usize << l;
            let level = Level {
                target: SilhouetteTarget::new(
                    self.obs.silhouette.downsample(factor),
                    self.unit * factor as f64,
                    self.config.silhouette_sigma,
                )?,
                factor,
            };
            let problem = self.problem(
                &all,
                &x,
                active.clone(),
                weights,
                Some(&level),
                Some(&anchor),
            );
            let (next, report) = self.run(format!("silhouette level {l}"), &problem)?;
            self.stages.push(report);
            x = next;
        }
        Ok(x)
    }

    fn finish(self, x: Vec<f64>) -> Result<ImageFit> {
        let params = FitParams::unflatten(&x, self.n_beta());
        let last_level = (self.config.pyramid_levels > 0).then(|| -> Result<Level> {
            Ok(Level {
                target: SilhouetteTarget::new(
                    self.obs.silhouette.clone(),
                    self.unit,
                    self.config.silhouette_sigma,
                )?,
                factor: 1,
            })
        });
        let level = last_level.transpose()?;
        let (anchor_w, silh) = if level.is_some() {
            (self.anchor_weight(), true)
        } else {
            (0.0, false)
        };
        let (_, ng, nf) = self.layout();
        let anchor = Anchor {
            focal: x[nf],
            gamma: Vec3::new(x[ng], x[ng + 1], x[ng + 2]),
            depth: x[ng + 2].abs().max(1e-9),
        };
        let weights = self.weights(self.final_prior_factor(), silh, anchor_w);
        let problem = self.problem(
            &self.all,
            &x,
            Vec::new(),
            weights,
            level.as_ref(),
            level.as_ref().map(|_| &anchor),
        );
        let (terms, _) = problem.terms(&x)?;
        let posed = forward(self.model, &params.beta, &params.theta, &params.gamma)?;
        let camera = Camera::centered(params.focal, self.obs.resolution[0], self.obs.resolution[1]);
        let projected = project(&posed.vertices, camera.focal, camera.principal())?;
        let keypoint_error = self.all.mean_error(&projected);
        let mesh = smal_instance(self.model, &params.beta, &params.theta, &params.gamma)?;
        let iou = match render_silhouette(&mesh, &camera) {
            Ok(m) => m.iou(&self.obs.silhouette)?,
            Err(_) => 0.0,
        };
        Ok(ImageFit {
            params,
            terms,
            keypoint_error,
            iou,
            stages: self.stages,
        })
    }
}

/// Fit shape, pose, translation and focal length to the keypoints and
/// silhouette of one image: depth initialization and global alignment from
/// the torso keypoints, keypoint stages with decaying priors, then a
/// coarse-to-fine silhouette stage anchored to the focal length and
/// translation it starts from.
pub fn fit_image(
    model: &SmalModel,
    obs: &ImageObservation,
    config: &ImageFitConfig,
) -> Result<ImageFit> {
    let mut session = Session::new(model, obs, config)?;
    let focal = config
        .focal
        .unwrap_or_else(|| default_focal(obs.resolution));
    let x = session.global_alignment(focal)?;
    let x = session.prior_stages(x)?;
    let x = session.silhouette_stages(x)?;
    session.finish(x)
}

/// Run the keypoint and silhouette stages from given parameters, skipping
/// depth initialization and global alignment.
pub fn fit_image_from(
    model: &SmalModel,
    obs: &ImageObservation,
    config: &ImageFitConfig,
    init: &FitParams,
) -> Result<ImageFit> {
    let mut session = Session::new(model, obs, config)?;
    let nb = session.n_beta();
    let mut beta = init.beta.clone();
    beta.resize(nb, 0.0);
    model.rig.check_pose(&init.theta)?;
    let x = FitParams {
        beta,
        theta: init.theta.clone(),
        gamma: init.gamma,
        focal: init.focal,
    }
    .flatten();
    let x = session.prior_stages(x)?;
    let x = session.silhouette_stages(x)?;
    session.finish(x)
}

/// Full energy of `params` under the given stage weights, for diagnostics
/// and gradient checks: the last keypoint stage when `silhouette` is false,
/// the full-resolution silhouette stage anchored at `anchor` otherwise.
pub fn image_energy(
    model: &SmalModel,
    obs: &ImageObservation,
    config: &ImageFitConfig,
    params: &FitParams,
    silhouette: Option<&FitParams>,
) -> Result<(EnergyTerms, Vec<f64>)> {
    let session = Session::new(model, obs, config)?;
    if params.beta.len() != session.n_beta() {
        return Err(Error::Dimension {
            what: "shape coefficients",
            expected: session.n_beta(),
            got: params.beta.len(),
        });
    }
    let x = params.flatten();
    let level = silhouette
        .map(|_| -> Result<Level> {
            Ok(Level {
                target: SilhouetteTarget::new(
                    obs.silhouette.clone(),
                    session.unit,
                    config.silhouette_sigma,
                )?,
                factor: 1,
            })
        })
        .transpose()?;
    let anchor = silhouette.map(|a| Anchor {
        focal: a.focal,
        gamma: a.gamma,
        depth: a.gamma.z.abs().max(1e-9),
    });
    let weights = session.weights(
        session.final_prior_factor(),
        silhouette.is_some(),
        if silhouette.is_some() {
            session.anchor_weight()
        } else {
            0.0
        },
    );
    let problem = session.problem(
        &session.all,
        &x,
        Vec::new(),
        weights,
        level.as_ref(),
        anchor.as_ref(),
    );
    problem.terms(&x)
}

/// Number of shape coefficients a fit with `config` estimates.
pub fn fitted_shape_dim(model: &SmalModel, config: &ImageFitConfig) -> Result<usize> {
    Ok(ShapePrior::new(model, config)?.dim())
}
